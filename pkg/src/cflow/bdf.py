"""Exact BDF-k coefficient families and the quadratic-identity machinery.

All coefficients are :class:`fractions.Fraction`; conversion to floating
point happens at the call sites that need it.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

__all__ = [
    "BdfScheme",
    "EtaSequence",
    "bdf_coefficients",
    "beta_coefficients",
    "bdf_scheme",
    "identity_sides",
    "verify_identity",
    "eta_coefficients",
    "characteristic_roots",
    "stability_condition",
    "solve_difference_equation",
    "backward_difference",
]

MAX_ORDER = 6


def _check_order(k: int, lo: int = 1) -> None:
    if not isinstance(k, (int, np.integer)) or not lo <= k <= MAX_ORDER:
        raise ValueError(f"BDF order must be an integer in [{lo}, {MAX_ORDER}], got {k!r}")


@dataclass(frozen=True)
class BdfScheme:
    """Coefficients of the order-k backward differentiation formula.

    ``delta`` weights the difference quotient, ``gamma`` the extrapolation,
    ``tilde_delta`` are the partial sums of ``delta`` (the coefficients of
    ``delta(z) / (1 - z)``), and ``beta`` maps ``(j, l)`` to the weight of
    ``s^{2j} (d_t^j a_{n-l})^2`` in the quadratic identity.
    """

    k: int
    delta: tuple[Fraction, ...]
    tilde_delta: tuple[Fraction, ...]
    gamma: tuple[Fraction, ...]
    beta: dict[tuple[int, int], Fraction] | None = None

    def floats(self, name: str) -> np.ndarray:
        return np.array([float(c) for c in getattr(self, name)])

    def check_invariants(self) -> None:
        if sum(self.delta) != 0:
            raise AssertionError("sum of delta must vanish")
        if sum(self.gamma) != 1 or sum(self.tilde_delta) != 1:
            raise AssertionError("gamma and tilde_delta must sum to one")
        # delta(z) == (1 - z) * tilde_delta(z)
        td = list(self.tilde_delta) + [Fraction(0)]
        product = [td[0]] + [td[j] - td[j - 1] for j in range(1, self.k + 1)]
        if tuple(product) != self.delta:
            raise AssertionError("delta(z) != (1 - z) tilde_delta(z)")


def bdf_coefficients(k: int, with_beta: bool = False) -> BdfScheme:
    _check_order(k)
    delta = [sum(Fraction(1, r) for r in range(1, k + 1))]
    delta += [Fraction((-1) ** i * comb(k, i), i) for i in range(1, k + 1)]
    gamma = [Fraction((-1) ** j * comb(k, j + 1)) for j in range(k)]
    tilde = [delta[0]]
    for j in range(1, k):
        tilde.append(tilde[-1] + delta[j])
    beta = beta_coefficients(k) if with_beta else None
    return BdfScheme(k, tuple(delta), tuple(tilde), tuple(gamma), beta)


@lru_cache(maxsize=None)
def bdf_scheme(k: int) -> BdfScheme:
    """Fully populated scheme, cached per order; treat the result as read-only."""
    return bdf_coefficients(k, with_beta=True)


def _pair_coefficients(q: list[list[Fraction]], size: int) -> dict[tuple[int, int], Fraction]:
    """Coefficients of a_{n-m} a_{n-p} (m <= p) for a symmetric quadratic form."""
    out = {}
    for m in range(size):
        for p in range(m, size):
            out[(m, p)] = q[m][p] if m == p else q[m][p] + q[p][m]
    return out


def _lhs_form(delta, gamma) -> list[list[Fraction]]:
    k = len(delta) - 1
    g = [Fraction(0)] + list(gamma)
    q = [[Fraction(0)] * (k + 1) for _ in range(k + 1)]
    for i in range(k + 1):
        q[i][i] += delta[i]
        for j in range(k + 1):
            q[i][j] -= delta[i] * g[j] + g[i] * delta[j]
    return q


def _difference_form(j: int, ell: int, size: int) -> list[list[Fraction]]:
    """Quadratic form of (Delta^j a_{n-ell})^2 in the variables a_n..a_{n-k}."""
    w = [Fraction(0)] * size
    for q in range(j + 1):
        w[ell + q] = Fraction((-1) ** q * comb(j, q))
    return [[w[a] * w[b] for b in range(size)] for a in range(size)]


def beta_coefficients(k: int) -> dict[tuple[int, int], Fraction]:
    """Solve the coefficient-matching system for beta by forward substitution.

    Rows are indexed by monomials ``a_{n-m} a_{n-p}`` with ``m <= p``.  The
    diagonal rows ``(m, m)`` are dropped; the remaining rows, ordered by
    decreasing ``p - m`` and then increasing ``m``, form a lower-triangular
    system in the unknowns ``beta[p - m, m]`` taken in the same order.
    """
    _check_order(k)
    scheme = bdf_coefficients(k)
    size = k + 1
    rhs = _pair_coefficients(_lhs_form(scheme.delta, scheme.gamma), size)
    unknowns = [(j, ell) for j in range(1, k + 1) for ell in range(0, k - j + 1)]
    columns = {
        u: _pair_coefficients(_difference_form(u[0], u[1], size), size) for u in unknowns
    }

    order = [(m, m + d) for d in range(k, 0, -1) for m in range(0, k - d + 1)]
    col_order = [(p - m, m) for (m, p) in order]
    assert sorted(col_order) == sorted(unknowns)

    mat = [[columns[c][row] for c in col_order] for row in order]
    for i, row in enumerate(mat):
        if any(row[i + 1:]):
            raise ArithmeticError(f"reduced system is not lower triangular at row {order[i]}")
        if row[i] == 0:
            raise ArithmeticError(f"zero pivot at row {order[i]}")

    x: list[Fraction] = []
    for i, row_idx in enumerate(order):
        acc = rhs[row_idx] - sum(mat[i][c] * x[c] for c in range(i))
        x.append(acc / mat[i][i])
    beta_all = dict(zip(col_order, x))

    # The dropped diagonal rows must hold automatically.
    for m in range(size):
        lhs = sum(columns[c][(m, m)] * beta_all[c] for c in unknowns)
        if lhs != rhs[(m, m)]:
            raise ArithmeticError(f"redundant row ({m}, {m}) violated")
    return {key: val for key, val in beta_all.items() if val != 0}


def backward_difference(a, n: int, j: int):
    """Undivided difference  sum_m (-1)^m C(j, m) a[n - m]  (= s^j d_t^j a_n)."""
    return sum((-1) ** m * comb(j, m) * a[n - m] for m in range(j + 1))


def identity_sides(scheme: BdfScheme, a, s: float, n: int) -> tuple[float, float]:
    """Both sides of the BDF-k quadratic identity for the scalar sequence ``a`` at index n."""
    k = scheme.k
    if n < k:
        raise ValueError(f"need n >= k, got n={n}, k={k}")
    beta = scheme.beta if scheme.beta is not None else beta_coefficients(k)
    delta = scheme.floats("delta")
    gamma = scheme.floats("gamma")
    a = np.asarray(a, dtype=float)
    window = a[n - k:n + 1][::-1]  # a_n, a_{n-1}, ..., a_{n-k}
    dot_part = float(delta @ window)
    lhs = float(delta @ window**2) - 2.0 * dot_part * float(gamma @ window[1:])
    rhs = 0.0
    for (j, ell), b in beta.items():
        dq = backward_difference(a, n - ell, j) / s**j  # d_t^j a_{n-ell}
        rhs += float(b) * s ** (2 * j) * dq**2
    return lhs, rhs


def verify_identity(scheme: BdfScheme, a, s: float, n: int) -> float:
    lhs, rhs = identity_sides(scheme, a, s, n)
    return abs(lhs - rhs)


class EtaSequence:
    """Taylor coefficients of 1 / tilde_delta(z), generated by their recurrence.

    Extends itself on demand; ``exact=True`` keeps rational values.
    """

    def __init__(self, k: int, n_max: int = 0, exact: bool = False):
        _check_order(k)
        self.k = k
        self.exact = exact
        td = bdf_coefficients(k).tilde_delta
        self._td = td if exact else tuple(float(c) for c in td)
        self._values: list = [1 / self._td[0]]
        self.extend(n_max)

    def extend(self, n_max: int) -> None:
        td, vals = self._td, self._values
        for n in range(len(vals), n_max + 1):
            acc = sum(td[j] * vals[n - j] for j in range(1, min(self.k - 1, n) + 1))
            vals.append(-acc / td[0])

    def __getitem__(self, n: int):
        if n < 0:
            return 0
        self.extend(n)
        return self._values[n]

    def __len__(self) -> int:
        return len(self._values)

    @property
    def values(self) -> tuple:
        return tuple(self._values)

    def partial_sums(self, n_max: int) -> np.ndarray:
        self.extend(n_max)
        return np.cumsum(np.array(self._values[: n_max + 1], dtype=float))


def eta_coefficients(k: int, n_max: int, exact: bool = False) -> EtaSequence:
    return EtaSequence(k, n_max, exact=exact)


def characteristic_roots(k: int) -> np.ndarray:
    """Roots of tilde_delta(z) = sum_j tilde_delta_j z^j (k - 1 of them)."""
    _check_order(k, lo=2)
    coeffs = bdf_coefficients(k).floats("tilde_delta")
    roots = np.roots(coeffs[::-1])
    if roots.shape != (k - 1,) or not np.all(np.isfinite(roots)):
        raise ArithmeticError(f"root finder failed for k={k}")
    return roots


def stability_condition(k: int) -> tuple[float, bool]:
    """Left-hand side of the sufficient condition for the squared-sum estimate.

    Uses the shift ``beta = -tilde_delta_1 / delta_0``; the condition holds
    when the returned value is below one.
    """
    _check_order(k, lo=3)
    sch = bdf_coefficients(k)
    td, d0 = sch.tilde_delta, sch.delta[0]
    shift = -td[1] / d0
    total = sum((td[j] + shift * td[j - 1]) ** 2 for j in range(2, k)) / d0**2
    total += shift**2 * td[k - 1] ** 2 / d0**2
    value = k * total
    return float(value), value < 1


def solve_difference_equation(k: int, initial, f, n_max: int, eta: EtaSequence | None = None) -> np.ndarray:
    """Closed-form solution of  sum_j tilde_delta_j a_{n-j} = f_n  (n >= k).

    ``initial`` holds a_1..a_{k-1}; ``f`` is indexed directly by n (entries
    below k are ignored).  Returns a_0..a_{n_max} with a_0 = 0 and the given
    initial values in place.
    """
    _check_order(k, lo=2)
    td = bdf_coefficients(k).floats("tilde_delta")
    eta = eta if eta is not None else EtaSequence(k, n_max)
    eta.extend(n_max)
    e = np.array([float(eta[i]) for i in range(n_max + 1)])
    a = np.zeros(n_max + 1)
    a[1:k] = initial
    f = np.asarray(f, dtype=float)
    for n in range(k, n_max + 1):
        val = 0.0
        for m in range(1, k):
            for ell in range(k - m, k):
                idx = n - ell - m
                if idx >= 0:
                    val -= td[ell] * e[idx] * a[m]
        val += float(e[: n - k + 1][::-1] @ f[k:n + 1])
        a[n] = val
    return a
