"""The 3-D Regge–Ricci flow for edge lengths.

Each edge ``ℓ`` contributes one equation

    Σ_{λ ⊂ ℓ*} m_λ · λ̇ = −4 ε_ℓ,

where the dual edges ``λ`` around ``ℓ`` depend on the nine edges of the two
tetrahedra meeting at the dual triangle.  By the chain rule this is a linear
system ``M(ℓ)·ℓ̇ = b(ℓ)`` with ``b = −4ε``; the flow solves it at every
right-hand-side evaluation and advances the edge lengths with an explicit
integrator.  ∂λ/∂ℓ is taken by central differences.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .complex import ComplexTopology3, MetricAssignment
from .curvature import deficit_angles, regge_action
from .errors import (
    MatrixSingular,
    NonRealizable,
    NotCompact,
    StepTooSmall,
)
from .geometry import dual_geometry, pair_dual_lengths, pair_realizable, pair_stencil

log = logging.getLogger(__name__)

INTEGRATORS = ("explicit_euler", "rk4", "rk45_adaptive")
DERIVATIVES = ("central", "complex_step")
COMPLEX_STEP = 1e-20  # relative imaginary step; no cancellation, so it can be tiny


class Termination(str, enum.Enum):
    """Why a run stopped; ``step_too_small`` covers an adaptive step below
    ``dt_min`` and an exhausted ``max_steps`` budget."""

    REACHED_T_END = "reached_t_end"
    EDGE_COLLAPSE = "edge_collapse"
    NONREALIZABLE = "nonrealizable"
    MATRIX_SINGULAR = "matrix_singular"
    STEP_TOO_SMALL = "step_too_small"


@dataclass(frozen=True)
class FlowConfig:
    dt_initial: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 1.0
    integrator: str = "rk45_adaptive"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    t_end: float = 1.0
    stop_min_edge_fraction: float = 1e-3
    stop_on_nonrealizable: bool = True
    record_every: int = 1
    fd_step: float = 1e-6
    cond_limit: float = 1e12
    max_steps: int = 100_000
    derivative: str = "central"

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not 0 < self.dt_min <= self.dt_initial <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_initial <= dt_max")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if not 0 <= self.stop_min_edge_fraction < 1:
            raise ValueError("stop_min_edge_fraction must be in [0, 1)")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if not 0 < self.fd_step < 1e-2:
            raise ValueError("fd_step must be in (0, 1e-2)")
        if self.derivative not in DERIVATIVES:
            raise ValueError(f"derivative must be one of {DERIVATIVES}, got {self.derivative!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


# -- dual edge derivatives and the RRF system ----------------------------------------

def _stencil_partials(stencil: np.ndarray, lengths: np.ndarray, eta: float) -> np.ndarray:
    """∂λ/∂ℓ_i for every row of a ``(n, 9)`` triangle-pair stencil.

    Central differences with step ``eta·ℓ_i``; a probe that leaves the
    realizable set is retried with the step shrunk tenfold, up to 3 times.
    """
    base = lengths[stencil]
    n_tri = len(base)
    h = eta * base
    out = np.empty((n_tri, 9))
    todo = np.ones((n_tri, 9), dtype=bool)
    for _ in range(4):
        tri, slot = np.nonzero(todo)
        if not len(tri):
            break
        hh = h[tri, slot]
        rows = np.arange(len(tri))
        plus = base[tri].copy()
        minus = base[tri].copy()
        plus[rows, slot] += hh
        minus[rows, slot] -= hh
        ok = pair_realizable(plus**2) & pair_realizable(minus**2)
        if ok.any():
            lp = pair_dual_lengths(plus[ok] ** 2)
            lm = pair_dual_lengths(minus[ok] ** 2)
            out[tri[ok], slot[ok]] = (lp - lm) / (2.0 * hh[ok])
        todo[tri[ok], slot[ok]] = False
        h[tri[~ok], slot[~ok]] /= 10.0
    if todo.any():
        raise NonRealizable(
            f"finite-difference probe of stencil row {int(np.nonzero(todo)[0][0])} "
            "leaves the realizable set"
        )
    return out


def _stencil_partials_complex(stencil: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """∂λ/∂ℓ_i by the complex-step method: ``Im λ(ℓ + ih·e_i) / h``.

    Exact to rounding because nothing is subtracted; used where the
    ~eps/η noise of central differences matters.
    """
    base = lengths[stencil]
    ok = pair_realizable(base**2)
    if not ok.all():
        raise NonRealizable(f"stencil row {int(np.flatnonzero(~ok)[0])} is not realizable")
    h = COMPLEX_STEP * base
    out = np.empty(base.shape)
    for k in range(base.shape[1]):
        z = base.astype(complex)
        z[:, k] += 1j * h[:, k]
        out[:, k] = pair_dual_lengths(z * z).imag / h[:, k]
    return out


def _partials(stencil, lengths, eta, derivative):
    if derivative == "complex_step":
        return _stencil_partials_complex(stencil, lengths)
    if derivative == "central":
        return _stencil_partials(stencil, lengths, eta)
    raise ValueError(f"derivative must be one of {DERIVATIVES}, got {derivative!r}")


def dual_length_jacobian(top: ComplexTopology3, metric: MetricAssignment, triangle: int,
                         eta: float = 1e-6, derivative: str = "central") -> dict[int, float]:
    """Partials ∂λ/∂ℓ_i of one dual edge with respect to its nine edge lengths.

    Keys are edge ids; edges outside the two tetrahedra are absent.
    """
    stencil = pair_stencil(top)[triangle:triangle + 1]
    if np.any(stencil < 0):
        raise NotCompact(f"triangle {triangle} lies on the boundary and has no dual edge")
    partials = _partials(stencil, np.sqrt(metric.lengths_sq), eta, derivative)[0]
    return {int(e): float(v) for e, v in zip(stencil[0], partials)}


@dataclass(frozen=True, eq=False)
class RRFSystem:
    M: sparse.csr_matrix
    b: np.ndarray
    deficit: np.ndarray


def assemble_rrf_system(top: ComplexTopology3, metric: MetricAssignment, dual=None,
                        deficit=None, eta: float = 1e-6, derivative: str = "central") -> RRFSystem:
    """Mass matrix ``M[ℓ, i] = Σ_λ m_λ ∂λ/∂ℓ_i`` and right-hand side ``b = −4ε``."""
    if not top.compact:
        raise NotCompact("the flow needs a closed complex")
    if dual is None:
        dual = dual_geometry(top, metric)
    if deficit is None:
        deficit = deficit_angles(top, metric, dual)
    stencil = pair_stencil(top)
    J = _partials(stencil, np.sqrt(metric.lengths_sq), eta, derivative)  # (F, 9)
    # one block of 3 rows (triangle edges) × 9 columns (stencil edges) per triangle
    vals = dual.moment_arm[:, :, None] * J[:, None, :]
    rows = np.broadcast_to(top.triangle_edges[:, :, None], vals.shape)
    cols = np.broadcast_to(stencil[:, None, :], vals.shape)
    M = sparse.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(top.n_edges, top.n_edges)
    ).tocsr()
    M.sum_duplicates()
    return RRFSystem(M=M, b=-4.0 * deficit, deficit=deficit)


def _inverse_one_norm(lu, n: int) -> float:
    """Hager's deterministic estimate of ‖A⁻¹‖₁ from an LU factorization."""
    x = np.full(n, 1.0 / n)
    est = 0.0
    for _ in range(5):
        y = lu.solve(x)
        new = float(np.abs(y).sum())
        if new <= est:
            break
        est = new
        z = lu.solve(np.sign(y) + (y == 0), trans="T")
        j = int(np.argmax(np.abs(z)))
        if np.abs(z[j]) <= z @ x:
            break
        x = np.zeros(n)
        x[j] = 1.0
    return est


# |b| below this is a flat state: ℓ̇ = 0 solves M·ℓ̇ = b whatever M's conditioning
FLAT_TOL = 1e-12


def solve_rrf_system(system: RRFSystem, cond_limit: float = 1e12) -> np.ndarray:
    """Solve ``M·ℓ̇ = b``; raises MatrixSingular when M is (numerically) singular.

    Flat states (``max |b| <= FLAT_TOL``) return zero rates without a solve:
    flat lattices can have gauge null modes in M, but zero is then the exact
    minimum-norm solution.
    """
    n = system.M.shape[0]
    if np.max(np.abs(system.b), initial=0.0) <= FLAT_TOL:
        return np.zeros(n)
    M = system.M.tocsc()
    try:
        lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise MatrixSingular(f"mass matrix factorization failed: {exc}") from None
    cond = abs(M).sum(axis=0).max() * _inverse_one_norm(lu, n)
    if not np.isfinite(cond) or cond > cond_limit:
        raise MatrixSingular(f"mass matrix condition estimate {cond:.3e} exceeds {cond_limit:.1e}")
    x = lu.solve(system.b)
    # one step of iterative refinement: removes pivoting-order rounding that
    # would otherwise seed the unstable non-uniform modes
    return x + lu.solve(system.b - M @ x)


def edge_length_rates(top: ComplexTopology3, lengths: np.ndarray, eta: float = 1e-6,
                      cond_limit: float = 1e12, derivative: str = "central") -> np.ndarray:
    """The flow vector field ``F(ℓ) = M(ℓ)⁻¹ b(ℓ)``."""
    lengths = np.asarray(lengths, dtype=float)
    if np.any(lengths <= 0) or not np.all(np.isfinite(lengths)):
        raise NonRealizable("non-positive or non-finite edge length")
    metric = MetricAssignment(lengths**2)
    system = assemble_rrf_system(top, metric, eta=eta, derivative=derivative)
    return solve_rrf_system(system, cond_limit)


# -- integrators -------------------------------------------------------------------------

# Dormand–Prince 5(4)
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def _euler(f, y, dt):
    return y + dt * f(y)


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _dopri_trial(f, y, dt, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + dt * sum(a * k for a, k in zip(_DP_A[i], ks))
        ks.append(f(yi))
    y_new = y + dt * sum(b * k for b, k in zip(_DP_B, ks) if b != 0.0)
    err = dt * sum(e * k for e, k in zip(_DP_E, ks) if e != 0.0)
    return y_new, err, ks[-1]


@dataclass
class _AdaptiveState:
    dt: float
    k1: np.ndarray | None = None


def _adaptive_step(f, y, t, t_stop, config: FlowConfig, state: _AdaptiveState):
    """One accepted Dormand–Prince step; returns (y_new, dt_used)."""
    if state.k1 is None:
        state.k1 = f(y)
    dt = min(state.dt, config.dt_max, t_stop - t)
    while True:
        if dt < config.dt_min and t + dt < t_stop:
            raise StepTooSmall(f"adaptive step {dt:.3e} below dt_min at t={t:.6g}")
        try:
            y_new, err, k_last = _dopri_trial(f, y, dt, state.k1)
            scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        except NonRealizable:
            # a stage left the realizable set: treat as a rejected step
            err_norm = math.inf
        if err_norm <= 1.0:
            factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
            state.dt = max(dt * factor, config.dt_min)
            state.k1 = k_last
            return y_new, dt
        factor = 0.2 if not math.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
        if dt <= config.dt_min:
            if not math.isfinite(err_norm):
                raise NonRealizable(f"no realizable step down to dt_min at t={t:.6g}")
            raise StepTooSmall(f"error norm {err_norm:.3e} at dt_min, t={t:.6g}")
        dt = max(dt * factor, config.dt_min)


def _advance(metric: MetricAssignment, y: np.ndarray, y_new: np.ndarray, t: float) -> MetricAssignment:
    # update ℓ² by its increment so that zero rates leave the stored state bit-identical
    return MetricAssignment(metric.lengths_sq + (y_new - y) * (y_new + y), t)


def step(top: ComplexTopology3, state: MetricAssignment, config: FlowConfig,
         dt: float | None = None) -> MetricAssignment:
    """Advance the metric by one step of the configured integrator.

    Fixed-step integrators use ``dt`` (default ``config.dt_initial``); the
    adaptive one takes the first step it accepts starting from that size.
    """
    dt = config.dt_initial if dt is None else dt

    def f(y):
        return edge_length_rates(top, y, config.fd_step, config.cond_limit, config.derivative)

    y = state.lengths
    if config.integrator == "explicit_euler":
        y_new = _euler(f, y, dt)
        used = dt
    elif config.integrator == "rk4":
        y_new = _rk4(f, y, dt)
        used = dt
    else:
        y_new, used = _adaptive_step(
            f, y, state.time, math.inf, config, _AdaptiveState(dt=dt)
        )
    if np.any(y_new <= 0):
        raise NonRealizable("an edge length became non-positive")
    return _advance(state, y, y_new, state.time + used)


# -- trajectories ----------------------------------------------------------------------

@dataclass(frozen=True)
class Snapshot:
    t: float
    metric: MetricAssignment
    min_len: float
    max_len: float
    length_cv: float
    min_deficit: float
    regge_action: float
    well_centered: bool
    deficit: np.ndarray = field(repr=False)
    rc_edge: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class FlowTrajectory:
    snapshots: tuple
    termination: Termination
    steps_accepted: int
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def _snapshot(top: ComplexTopology3, metric: MetricAssignment) -> Snapshot:
    lengths = metric.lengths
    dual = dual_geometry(top, metric)
    eps = deficit_angles(top, metric, dual)
    area = dual.dual_polygon_area
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = np.where(area != 0, 2.0 * eps / area, np.nan)
    return Snapshot(
        t=metric.time,
        metric=metric,
        min_len=float(lengths.min()),
        max_len=float(lengths.max()),
        length_cv=float(lengths.std() / lengths.mean()),
        min_deficit=float(eps.min()),
        regge_action=regge_action(top, metric, eps),
        well_centered=dual.well_centered,
        deficit=eps,
        rc_edge=rc,
    )


def run_flow(top: ComplexTopology3, metric0: MetricAssignment, config: FlowConfig) -> FlowTrajectory:
    """Integrate from ``metric0`` until ``t_end`` or a stop condition."""
    if not top.compact:
        raise NotCompact("the flow needs a closed complex")
    ell0 = metric0.lengths
    y = ell0.copy()
    current = metric0
    t = metric0.time
    t_end = metric0.time + config.t_end
    snaps = [_snapshot(top, metric0)]
    accepted = 0
    adaptive = _AdaptiveState(dt=config.dt_initial)
    termination, message = Termination.REACHED_T_END, ""

    def f(z):
        return edge_length_rates(top, z, config.fd_step, config.cond_limit, config.derivative)

    last_recorded = True
    while t < t_end:
        if accepted >= config.max_steps:
            termination, message = Termination.STEP_TOO_SMALL, f"max_steps={config.max_steps} reached"
            break
        try:
            if config.integrator == "rk45_adaptive":
                y_new, dt = _adaptive_step(f, y, t, t_end, config, adaptive)
            else:
                dt = min(config.dt_initial, t_end - t)
                y_new = (_euler if config.integrator == "explicit_euler" else _rk4)(f, y, dt)
            if np.any(y_new <= 0) or not np.all(np.isfinite(y_new)):
                raise NonRealizable("an edge length became non-positive")
            metric = _advance(current, y, y_new, t + dt)
            snap = _snapshot(top, metric)
        except MatrixSingular as exc:
            termination, message = Termination.MATRIX_SINGULAR, str(exc)
            break
        except StepTooSmall as exc:
            termination, message = Termination.STEP_TOO_SMALL, str(exc)
            break
        except NonRealizable as exc:
            if not config.stop_on_nonrealizable:
                raise
            termination, message = Termination.NONREALIZABLE, str(exc)
            break
        y, t, current = y_new, t + dt, metric
        accepted += 1
        last_recorded = accepted % config.record_every == 0
        collapsed = np.any(y < config.stop_min_edge_fraction * ell0)
        if last_recorded or collapsed or t >= t_end:
            snaps.append(snap)
            last_recorded = True
        if collapsed:
            termination = Termination.EDGE_COLLAPSE
            message = f"edge below {config.stop_min_edge_fraction:g} of its initial length"
            break
    if not last_recorded:
        snaps.append(_snapshot(top, current))
    log.info("flow stopped at t=%.6g after %d steps: %s", t, accepted, termination.value)
    return FlowTrajectory(tuple(snaps), termination, accepted, message)


# -- stability -----------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray
    field_norm: float

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.eigenvalues.real > 0))

    @property
    def max_real(self) -> float:
        return float(self.eigenvalues.real.max())


def flow_jacobian(top: ComplexTopology3, metric: MetricAssignment, rel_step: float = 1e-4,
                  eta: float = 1e-6, cond_limit: float = 1e12,
                  derivative: str = "central") -> tuple[np.ndarray, np.ndarray]:
    """Dense central-difference Jacobian of ``F(ℓ)`` and ``F`` itself."""
    def F(z):
        return edge_length_rates(top, z, eta, cond_limit, derivative)

    y = metric.lengths
    F0 = F(y)
    n = len(y)
    J = np.empty((n, n))
    for i in range(n):
        h = rel_step * y[i]
        yp = y.copy()
        ym = y.copy()
        yp[i] += h
        ym[i] -= h
        J[:, i] = (F(yp) - F(ym)) / (2 * h)
    return J, F0


def jacobian_spectrum(top: ComplexTopology3, metric: MetricAssignment, rel_step: float = 1e-4,
                      eta: float = 1e-6, derivative: str = "central") -> StabilityReport:
    """Eigenvalues of the flow's Jacobian, sorted by real part (descending)."""
    J, F0 = flow_jacobian(top, metric, rel_step, eta, derivative=derivative)
    ev = np.linalg.eigvals(J)
    order = np.lexsort((-ev.imag, -ev.real))
    return StabilityReport(eigenvalues=ev[order], field_norm=float(np.linalg.norm(F0)))
