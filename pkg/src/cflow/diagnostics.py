"""Energy monitors, constraint-violation bookkeeping and convergence orders."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .bdf import BdfScheme
from .constraint import violation_field
from .fem import FeSpace, l1_nodal_norm

__all__ = [
    "DiagnosticsRecord",
    "RegularityReport",
    "ViolationOracle",
    "g_form",
    "quad",
    "regularity_sums",
    "eoc",
    "measure",
    "G_EIGENVALUES",
]

# Eigenvalues of the 2x2 coefficient matrix [[5/2, -1], [-1, 1/2]].
G_EIGENVALUES = ((3 - 2 * math.sqrt(2)) / 2, (3 + 2 * math.sqrt(2)) / 2)


def quad(A, u, v=None) -> float:
    """Bilinear form u^T A v (v defaults to u)."""
    v = u if v is None else v
    return float(u @ (A @ v))


def g_form(K, u, v) -> float:
    """M(u - v, u - v) + 3/2 M(u, u) - 1/2 M(v, v)."""
    d = u - v
    return quad(K, d) + 1.5 * quad(K, u) - 0.5 * quad(K, v)


@dataclass
class DiagnosticsRecord:
    n: int
    energy: float
    kinetic: float
    lyapunov: float
    delta_cons: float
    max_violation: float
    oracle_mismatch: float | None
    stopping_residual: float
    # previous Lyapunov value evaluated with this step's formula
    lyapunov_prev: float = 0.0
    identity_residual: float = 0.0
    constraint_residual: float = 0.0
    n_degenerate: int = 0
    # ||d_t^j u^n||_U^2 for j = 1..4
    dt_norms: tuple[float, ...] = ()

    def as_row(self) -> dict:
        row = asdict(self)
        norms = row.pop("dt_norms")
        for j, val in enumerate(norms, start=1):
            row[f"dt{j}_norm_sq"] = val
        return row


@dataclass(frozen=True)
class RegularityReport:
    s: float
    sigma: dict[int, float] = field(default_factory=dict)
    rho: float = 0.0

    def scaled(self, j: int, power: int) -> float:
        return self.s**power * self.sigma[j]

    @property
    def s_sigma2(self) -> float:
        return self.scaled(2, 1)

    @property
    def s2_sigma2(self) -> float:
        return self.scaled(2, 2)

    @property
    def s2_sigma3(self) -> float:
        return self.scaled(3, 2)

    @property
    def s4_sigma3(self) -> float:
        return self.scaled(3, 4)

    @property
    def s2_rho(self) -> float:
        return self.s**2 * self.rho


def regularity_sums(norms: dict[int, np.ndarray], s: float, orders=(2, 3)) -> RegularityReport:
    """sigma^j = sum_{n>=3} ||d_t^j u^n||^2 and rho = max_{n>=1} ||d_t^2 u^n||^2.

    ``norms[j][n]`` is the squared metric norm at step n (index 0 is n = 0).
    """
    sigma = {}
    for j in orders:
        vals = np.asarray(norms[j], dtype=float)
        sigma[j] = float(vals[3:].sum())
    d2 = np.asarray(norms[2], dtype=float)
    rho = float(d2[1:].max()) if d2.size > 1 else 0.0
    return RegularityReport(s=s, sigma=sigma, rho=rho)


def eoc(pairs) -> list[float]:
    """Pairwise orders log(d_i / d_{i+1}) / log(s_i / s_{i+1})."""
    pairs = [(float(s), float(d)) for s, d in pairs]
    if len(pairs) < 2:
        raise ValueError("need at least two (s, delta) pairs")
    for s, d in pairs:
        if d <= 0 or s <= 0:
            raise ValueError(f"step sizes and violations must be positive, got ({s}, {d})")
    for (s0, _), (s1, _) in zip(pairs, pairs[1:]):
        if not s1 < s0:
            raise ValueError("step sizes must be strictly decreasing")
    return [math.log(d0 / d1) / math.log(s0 / s1) for (s0, d0), (s1, d1) in zip(pairs, pairs[1:])]


class ViolationOracle:
    """Predicts the nodal violation b_n from the exact BDF-k recurrence.

    Per vertex it keeps z_n, the last k - 1 violations and the recent squared
    differences |Delta^j u^m(z)|^2 needed by the beta terms (O(1) memory).
    Steps n < k only record measured violations; from n = k on, each call
    returns the predicted b_n.
    """

    def __init__(self, scheme: BdfScheme):
        if scheme.beta is None:
            raise ValueError("oracle needs a scheme with beta coefficients")
        self.k = scheme.k
        self.tilde_delta = scheme.floats("tilde_delta")
        self.beta = [(j, ell, float(b)) for (j, ell), b in sorted(scheme.beta.items())]
        self.orders = sorted({j for j, _, _ in self.beta})
        self._sq = {j: deque(maxlen=self.k - j + 1) for j in self.orders}
        self._b = deque(maxlen=max(self.k, 1))
        self.z = None
        self.z_initial = None
        self.phi_sum = None
        self.n = -1

    def update(self, n: int, diff_sq: dict[int, np.ndarray], measured_b: np.ndarray):
        """Feed step n; ``diff_sq[j]`` is |Delta^j u^n|^2 per vertex."""
        if n != self.n + 1:
            raise ValueError(f"oracle expects step {self.n + 1}, got {n}")
        self.n = n
        for j in self.orders:
            self._sq[j].appendleft(np.asarray(diff_sq[j], dtype=float))
        k = self.k
        if n < k:
            self._b.appendleft(np.asarray(measured_b, dtype=float).copy())
            if n == k - 1:
                self.z = sum(self.tilde_delta[j] * self._b[j] for j in range(k))
                self.z_initial = self.z.copy()
                self.phi_sum = np.zeros_like(self.z)
            return None
        phi = np.zeros_like(self.z)
        for j, ell, b in self.beta:
            phi += b * self._sq[j][ell]
        self.z = self.z + phi
        self.phi_sum += phi
        acc = self.z.copy()
        for j in range(1, k):
            acc -= self.tilde_delta[j] * self._b[j - 1]
        predicted = acc / self.tilde_delta[0]
        self._b.appendleft(predicted)
        return predicted


def measure(
    space: FeSpace,
    stiffness,
    metric,
    u: np.ndarray,
    velocity: np.ndarray,
    n: int,
    lyapunov: float,
    stopping_residual: float,
    predicted_b: np.ndarray | None = None,
    oracle_mask: np.ndarray | None = None,
    **extra,
) -> DiagnosticsRecord:
    b = violation_field(space, u)
    mismatch = None
    if predicted_b is not None:
        diff = np.abs(predicted_b - b)
        if oracle_mask is not None:
            diff = diff[oracle_mask]
        mismatch = float(diff.max(initial=0.0))
    return DiagnosticsRecord(
        n=n,
        energy=0.5 * quad(stiffness, u),
        kinetic=quad(metric, velocity),
        lyapunov=float(lyapunov),
        delta_cons=l1_nodal_norm(space, b),
        max_violation=float(np.abs(b).max()),
        oracle_mismatch=mismatch,
        stopping_residual=float(stopping_residual),
        **extra,
    )
