"""Projection-free accelerated and plain gradient flows with BDF time stepping.

Every step solves a linear system for a velocity on the free dofs, subject to
the nodal tangency rows  anchor(z) . v(z) = 0, and then advances the state
without any renormalization.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bdf import BdfScheme, bdf_scheme
from .constraint import DEGENERACY_THRESHOLD, build_constraint_rows, violation_field
from .diagnostics import DiagnosticsRecord, RegularityReport, ViolationOracle, g_form, measure, quad, regularity_sums
from .fem import METRIC_KINDS, FeSpace, KronOperator, scalar_metric, scalar_stiffness
from .kkt import KktError, KktSystem, solve_kkt
from .nodal_solve import NodalTangentSolver

__all__ = [
    "Scheme",
    "FlowConfig",
    "FlowOperators",
    "FlowHistory",
    "FlowError",
    "FlowResult",
    "StepOutcome",
    "af_bdf1_step",
    "af_bdf2_init",
    "af_bdf2_transition",
    "af_bdf2_step",
    "af_bdfk_modified_step",
    "initialize_modified",
    "gf_step",
    "advance",
    "start_history",
    "run_flow",
]

N_DIFFERENCES = 4  # backward differences tracked for the regularity sums


class Scheme(str, enum.Enum):
    AF_BDF1 = "AF_BDF1"
    AF_BDF2 = "AF_BDF2"
    AF_BDFK_MODIFIED = "AF_BDFK_MODIFIED"
    GF_BDF1 = "GF_BDF1"
    GF_BDF2 = "GF_BDF2"

    @property
    def accelerated(self) -> bool:
        return self.name.startswith("AF")


class FlowError(RuntimeError):
    """A step failed; ``step`` holds the offending step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class FlowConfig:
    scheme: Scheme
    s: float
    k: int = 2
    alpha: float = 3.0
    metric: str = "H1"
    eps: float = 1e-8
    t_max: float = 1e4
    kkt_tol: float = 1e-12
    oracle: bool = True
    kkt_method: str = "nodal"

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"step size must be positive, got {self.s}")
        if not self.eps > 0:
            raise ValueError(f"stopping tolerance must be positive, got {self.eps}")
        if not self.alpha >= 3:
            raise ValueError(f"damping alpha must be >= 3, got {self.alpha}")
        if not self.t_max > 0:
            raise ValueError(f"horizon must be positive, got {self.t_max}")
        if self.metric.upper() not in METRIC_KINDS:
            raise ValueError(f"metric must be one of {METRIC_KINDS}, got {self.metric!r}")
        if self.scheme is Scheme.AF_BDFK_MODIFIED and self.k not in (1, 2, 3, 4):
            raise ValueError(f"modified scheme supports k = 1..4, got {self.k}")

    @property
    def order(self) -> int:
        """BDF order of the constraint linearization in the main phase."""
        return {
            Scheme.AF_BDF1: 1,
            Scheme.GF_BDF1: 1,
            Scheme.AF_BDF2: 2,
            Scheme.GF_BDF2: 2,
        }.get(self.scheme, self.k)

    @property
    def max_steps(self) -> int:
        return int(math.floor(self.t_max / self.s))

    @property
    def first_stop_check(self) -> int:
        """First step at which the stopping rule is evaluated."""
        if self.scheme is Scheme.AF_BDF2:
            return 3
        return max(self.order, 1)

    @property
    def label(self) -> str:
        if self.scheme is Scheme.AF_BDFK_MODIFIED:
            return f"AF_BDFK{self.k}_MODIFIED"
        return self.scheme.value


@dataclass
class FlowOperators:
    """Stiffness and metric operators plus their free-vertex blocks."""

    space: FeSpace
    stiffness: KronOperator
    metric: KronOperator
    stiffness_ff: KronOperator = field(init=False, repr=False)
    metric_ff: KronOperator = field(init=False, repr=False)

    def __post_init__(self):
        free_v = self.space.free_vertices
        self.stiffness_ff = self.stiffness.restrict(free_v)
        self.metric_ff = self.metric.restrict(free_v)

    @classmethod
    def build(cls, space: FeSpace, M_diag=(1.0, 10.0), metric: str = "H1") -> "FlowOperators":
        m = space.components
        K = KronOperator(scalar_stiffness(space.mesh, M_diag), m)
        G = KronOperator(scalar_metric(space.mesh, metric), m)
        return cls(space, K, G)

    def nodal_solver(self) -> NodalTangentSolver:
        return NodalTangentSolver(self.metric_ff.scalar, self.stiffness_ff.scalar, self.space.components, DEGENERACY_THRESHOLD)

    def energy(self, u: np.ndarray) -> float:
        return 0.5 * quad(self.stiffness, u)


@dataclass
class FlowHistory:
    """Rolling state of one run: ``states[0]`` is u^n, ``states[i]`` is u^{n-i}."""

    states: deque
    velocity: np.ndarray
    n: int
    diffs: list  # diffs[j - 1] = Delta^j u^n (undivided)
    lyapunov: float
    oracle: ViolationOracle | None = None
    excluded: np.ndarray | None = None  # vertices ever left without a constraint row
    solver: NodalTangentSolver | None = None

    @classmethod
    def start(cls, u0: np.ndarray, capacity: int, lyapunov: float, oracle: ViolationOracle | None = None):
        u0 = np.array(u0, dtype=float)
        zeros = np.zeros_like(u0)
        return cls(
            states=deque([u0], maxlen=capacity),
            velocity=zeros.copy(),
            n=0,
            diffs=[zeros.copy() for _ in range(N_DIFFERENCES)],
            lyapunov=lyapunov,
            oracle=oracle,
        )

    def state(self, lag: int) -> np.ndarray:
        """u^{n - lag}, with u^{-i} = u^0 before the start."""
        return self.states[min(lag, len(self.states) - 1)]

    @property
    def current(self) -> np.ndarray:
        return self.states[0]


@dataclass
class StepOutcome:
    """Everything a step produces besides the new state."""

    u: np.ndarray
    velocity: np.ndarray
    lyapunov: float
    lyapunov_prev: float
    dissipation: float
    tangency: float
    degenerate: np.ndarray
    energy_prev: float


# ---------------------------------------------------------------------------
# shared linear algebra


def _solve_tangent(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory, a: float, b: float, rhs: np.ndarray, anchor: np.ndarray):
    """Solve (a G + b K) v = rhs on the free dofs with v(z) . anchor(z) = 0.

    ``cfg.kkt_method == "nodal"`` uses the banded tangent-frame solver; any
    other value assembles the saddle-point system for :func:`solve_kkt`.
    """
    n = history.n + 1
    space = ops.space
    free = space.free_dofs
    try:
        if cfg.kkt_method == "nodal":
            if history.solver is None:
                history.solver = ops.nodal_solver()
            free_v = space.free_vertices
            sol = history.solver.solve(a, b, rhs[free], space.as_field(anchor)[free_v], tol=cfg.kkt_tol)
            x = sol.x.ravel()
            tangency = sol.tangency
            degenerate = free_v[~sol.active]
        else:
            cons = build_constraint_rows(space, anchor, DEGENERACY_THRESHOLD)
            P = (a * ops.metric_ff.scalar + b * ops.stiffness_ff.scalar).tocsr()
            P = KronOperator(P, space.components).to_sparse()
            x, _ = solve_kkt(KktSystem(P, cons.rows, rhs[free]), tol=cfg.kkt_tol, method=cfg.kkt_method)
            tangency = float(np.abs(cons.apply(x)).max(initial=0.0))
            degenerate = cons.degenerate_nodes
    except KktError as exc:
        raise FlowError(n, str(exc)) from exc
    v = np.zeros(space.n_dofs)
    v[free] = x
    return v, tangency, degenerate


def _damped_factor(cfg: FlowConfig, n: int) -> float:
    """1/s + alpha / t_n with t_n = n s."""
    return 1.0 / cfg.s + cfg.alpha / (n * cfg.s)


# ---------------------------------------------------------------------------
# accelerated flows


def af_bdf1_step(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory) -> StepOutcome:
    """Implicit Euler step of the damped second-order flow on the tangent space at u^{n-1}."""
    n = history.n + 1
    s = cfg.s
    K, G = ops.stiffness, ops.metric
    u_prev, v_prev = history.current, history.velocity
    rhs = (G @ v_prev) / s - K @ u_prev
    v, tang, deg = _solve_tangent(ops, cfg, history, _damped_factor(cfg, n), s, rhs, u_prev)
    u = u_prev + s * v
    L = quad(K, u) + quad(G, v)
    L_prev = quad(K, u_prev) + quad(G, v_prev)
    diss = (2 * cfg.alpha / n) * quad(G, v) + quad(G, v - v_prev) + s**2 * quad(K, v)
    return StepOutcome(u, v, L, L_prev, diss, tang, deg, ops.energy(u_prev))


def _bdf2_lyapunov(K, G, u, u1, v) -> float:
    return g_form(K, u, u1) + quad(G, v)


def _bdf2_velocity_step(ops, cfg, history, n, damped: bool) -> StepOutcome:
    """Shared BDF-2 step; ``damped`` selects the accelerated or plain gradient form."""
    s = cfg.s
    K, G = ops.stiffness, ops.metric
    u1, u2, v_prev = history.state(0), history.state(1), history.velocity
    anchor = 2 * u1 - u2
    base = 4 * u1 - u2
    if damped:
        a = _damped_factor(cfg, n)
        rhs = (G @ v_prev) / s - (K @ base) / 3
    else:
        a = 1.0
        rhs = -(K @ base) / 3
    v, tang, deg = _solve_tangent(ops, cfg, history, a, 2 * s / 3, rhs, anchor)
    u = (base + 2 * s * v) / 3
    d2 = u - 2 * u1 + u2
    if damped:
        L = _bdf2_lyapunov(K, G, u, u1, v)
        L_prev = _bdf2_lyapunov(K, G, u1, u2, v_prev)
        diss = (2 * cfg.alpha / n) * quad(G, v) + quad(G, v - v_prev) + 0.5 * quad(K, d2)
    else:
        L = g_form(K, u, u1)
        L_prev = g_form(K, u1, u2)
        diss = 2 * s * quad(G, v) + 0.5 * quad(K, d2)
    return StepOutcome(u, v, L, L_prev, diss, tang, deg, ops.energy(u1))


def af_bdf2_init(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory) -> StepOutcome:
    """First step of the BDF-2 accelerated flow: an implicit Euler step at t_1 = s."""
    if history.n != 0:
        raise ValueError("initialization step expects n = 0")
    return af_bdf1_step(ops, cfg, history)


def af_bdf2_transition(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory) -> StepOutcome:
    """Second step: BDF-2 velocity with the previous velocity d_t u^1."""
    if history.n != 1:
        raise ValueError("transition step expects n = 1")
    return _bdf2_velocity_step(ops, cfg, history, 2, damped=True)


def af_bdf2_step(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory) -> StepOutcome:
    if history.n < 2:
        raise ValueError("general BDF-2 step needs two previous states")
    return _bdf2_velocity_step(ops, cfg, history, history.n + 1, damped=True)


def af_bdfk_modified_step(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory, scheme: BdfScheme | None = None) -> StepOutcome:
    """Energy-stable BDF-k step with the stiffness acting on the shifted state.

    ``scheme`` defaults to order ``cfg.k``; the start-up steps pass lower orders.
    """
    scheme = scheme if scheme is not None else bdf_scheme(cfg.k)
    k = scheme.k
    n = history.n + 1
    s = cfg.s
    K, G = ops.stiffness, ops.metric
    delta = scheme.floats("delta")
    td = scheme.floats("tilde_delta")
    gamma = scheme.floats("gamma")
    past = [history.state(j - 1) for j in range(1, k + 1)]  # u^{n-1} .. u^{n-k}
    shifted = sum(td[j - 1] * past[j - 1] for j in range(1, k + 1))
    anchor = sum(gamma[j] * past[j] for j in range(k))
    v_prev = history.velocity
    rhs = (G @ v_prev) / s - K @ shifted
    v, tang, deg = _solve_tangent(ops, cfg, history, _damped_factor(cfg, n), s, rhs, anchor)
    u = (s * v - sum(delta[j] * past[j - 1] for j in range(1, k + 1))) / delta[0]
    tilde_u = s * v + shifted
    # previous shifted state with this step's coefficients: sum_j td_j u^{n-1-j}
    tilde_prev = sum(td[j] * history.state(j) for j in range(k))
    L = quad(K, tilde_u) + quad(G, v)
    L_prev = quad(K, tilde_prev) + quad(G, v_prev)
    diss = (2 * cfg.alpha / n) * quad(G, v) + quad(G, v - v_prev) + s**2 * quad(K, v)
    return StepOutcome(u, v, L, L_prev, diss, tang, deg, ops.energy(past[0]))


def initialize_modified(ops: FlowOperators, cfg: FlowConfig, u0: np.ndarray, history: FlowHistory | None = None):
    """Start-up chain: step p uses the order-p modified scheme for p = 1..k-1.

    Returns the history holding u^0..u^{k-1} and the list of step outcomes.
    """
    history = history if history is not None else start_history(ops, cfg, u0)
    outcomes = []
    for p in range(1, cfg.k):
        out = af_bdfk_modified_step(ops, cfg, history, bdf_scheme(p))
        advance(history, out)
        outcomes.append(out)
    return history, outcomes


# ---------------------------------------------------------------------------
# gradient flows


def gf_step(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory) -> StepOutcome:
    """Projection-free gradient-flow step (implicit Euler, or BDF-2 after one warm-up)."""
    n = history.n + 1
    if cfg.scheme is Scheme.GF_BDF2 and n >= 2:
        return _bdf2_velocity_step(ops, cfg, history, n, damped=False)
    s = cfg.s
    K, G = ops.stiffness, ops.metric
    u_prev = history.current
    d, tang, deg = _solve_tangent(ops, cfg, history, 1.0, s, -(K @ u_prev), u_prev)
    u = u_prev + s * d
    diss = 2 * s * quad(G, d) + s**2 * quad(K, d)
    return StepOutcome(u, d, quad(K, u), quad(K, u_prev), diss, tang, deg, ops.energy(u_prev))


# ---------------------------------------------------------------------------
# driver


def _initial_lyapunov(ops: FlowOperators, u0: np.ndarray) -> float:
    # zero initial velocity; u^{-1} = u^0 makes every variant reduce to M(u0, u0)
    return quad(ops.stiffness, u0)


def start_history(ops: FlowOperators, cfg: FlowConfig, u0: np.ndarray) -> FlowHistory:
    """History at n = 0 with zero velocity; feeds the oracle its first violation."""
    capacity = cfg.order + 1
    oracle = ViolationOracle(bdf_scheme(cfg.order)) if cfg.oracle else None
    history = FlowHistory.start(u0, capacity, _initial_lyapunov(ops, u0), oracle)
    history.excluded = np.zeros(ops.space.n_vertices, dtype=bool)
    if oracle is not None:
        _feed_oracle(ops.space, history)
    return history


def _feed_oracle(space: FeSpace, history: FlowHistory):
    oracle = history.oracle
    if oracle is None:
        return None
    m = space.components
    sq = {}
    for j in oracle.orders:
        D = history.diffs[j - 1].reshape(-1, m)
        sq[j] = np.einsum("ij,ij->i", D, D)
    return oracle.update(history.n, sq, violation_field(space, history.current))


def advance(history: FlowHistory, out: StepOutcome) -> None:
    """Push the new state and refresh the running differences."""
    new = [out.u - history.current]
    for j in range(1, N_DIFFERENCES):
        new.append(new[j - 1] - history.diffs[j - 1])
    history.diffs = new
    history.states.appendleft(out.u)
    history.velocity = out.velocity
    history.lyapunov = out.lyapunov
    history.n += 1
    if history.excluded is not None and out.degenerate.size:
        history.excluded[out.degenerate] = True


@dataclass
class FlowResult:
    config: FlowConfig
    u: np.ndarray
    records: list[DiagnosticsRecord]
    reason: str
    initial_energy: float
    dt_norms: dict[int, np.ndarray]

    @property
    def n_steps(self) -> int:
        return len(self.records)

    @property
    def final(self) -> DiagnosticsRecord:
        return self.records[-1]

    def regularity(self, orders=(2, 3)) -> RegularityReport:
        return regularity_sums(self.dt_norms, self.config.s, orders)


def _dispatch(ops: FlowOperators, cfg: FlowConfig, history: FlowHistory) -> StepOutcome:
    n = history.n + 1
    sch = cfg.scheme
    if sch is Scheme.AF_BDF1:
        return af_bdf1_step(ops, cfg, history)
    if sch is Scheme.AF_BDF2:
        if n == 1:
            return af_bdf2_init(ops, cfg, history)
        if n == 2:
            return af_bdf2_transition(ops, cfg, history)
        return af_bdf2_step(ops, cfg, history)
    if sch is Scheme.AF_BDFK_MODIFIED:
        return af_bdfk_modified_step(ops, cfg, history, bdf_scheme(min(n, cfg.k)))
    return gf_step(ops, cfg, history)


def _check_feasible(space: FeSpace, u0: np.ndarray, tol: float = 1e-10) -> None:
    viol = np.abs(violation_field(space, u0)).max()
    if viol > tol:
        raise ValueError(f"initial state violates the unit-length constraint by {viol:.3e}")


def run_flow(
    ops: FlowOperators,
    cfg: FlowConfig,
    u0: np.ndarray,
    callback: Callable[[DiagnosticsRecord], None] | None = None,
    max_steps: int | None = None,
) -> FlowResult:
    """Iterate until the stopping residual drops to ``cfg.eps`` or the horizon is passed.

    ``max_steps`` optionally caps the number of steps (reason ``"max_steps"``).
    """
    space = ops.space
    u0 = np.asarray(u0, dtype=float)
    _check_feasible(space, u0)
    history = start_history(ops, cfg, u0)
    e0 = ops.energy(u0)
    norms = {j: [0.0] for j in range(1, N_DIFFERENCES + 1)}
    records = []
    s = cfg.s
    reason = "t_max"
    while True:
        n = history.n + 1
        out = _dispatch(ops, cfg, history)
        advance(history, out)
        predicted = _feed_oracle(space, history)
        dt = []
        for j in range(1, N_DIFFERENCES + 1):
            val = quad(ops.metric, history.diffs[j - 1]) / s ** (2 * j)
            norms[j].append(val)
            dt.append(val)
        if cfg.scheme.accelerated:
            stop = abs(out.lyapunov - out.lyapunov_prev) / (2 * s)
        else:
            stop = abs(ops.energy(out.u) - out.energy_prev) / s
        scale = max(abs(out.lyapunov_prev), abs(out.lyapunov), 1e-300)
        ident = abs(out.lyapunov + out.dissipation - out.lyapunov_prev) / scale
        mask = ~history.excluded if predicted is not None else None
        rec = measure(
            space,
            ops.stiffness,
            ops.metric,
            out.u,
            out.velocity,
            n,
            out.lyapunov,
            stop,
            predicted_b=predicted,
            oracle_mask=mask,
            lyapunov_prev=out.lyapunov_prev,
            identity_residual=ident,
            constraint_residual=out.tangency,
            n_degenerate=int(out.degenerate.size),
            dt_norms=tuple(dt),
        )
        records.append(rec)
        if callback is not None:
            callback(rec)
        if n >= cfg.first_stop_check and stop <= cfg.eps:
            reason = "converged"
            break
        if n > cfg.max_steps:
            break
        if max_steps is not None and n >= max_steps:
            reason = "max_steps"
            break
    return FlowResult(
        config=cfg,
        u=history.current.copy(),
        records=records,
        reason=reason,
        initial_energy=e0,
        dt_norms={j: np.array(v) for j, v in norms.items()},
    )
