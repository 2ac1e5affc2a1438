"""Multi-step drivers: trajectories, lambda sweeps, step-size refinement.

A trajectory records every diagnostic the single-step schemes expose (mass,
Lyapunov values, Ginzburg-Landau energy, sup-norm change, multiplier) next to
the states themselves.  On top of that sit two experiment drivers: a lambda
sweep measuring how fast the relaxed step locks onto the thresholding step,
and a step-size refinement study checking self-convergence, energy descent
along the limit candidate, and the Lipschitz/Hoelder regularity bounds.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import LambdaIsOne, TauExceedsEpsilon
from .graph_core import Graph, Spectrum, average, mass, norm
from .multiclass import (
    SimplexField,
    multi_obstacle_energy,
    multiclass_mass_conserving_step,
    multiclass_step,
)
from .scheme import (
    GROUP_TOL,
    MboMultiplier,
    SchemeParams,
    _check_box,
    ginzburg_landau,
    lyapunov_energy,
    mbo_step,
    semi_discrete_step,
)

__all__ = [
    "LogEntry",
    "Trajectory",
    "SweepRow",
    "TauRefinementReport",
    "run_trajectory",
    "run_multiclass_trajectory",
    "sweep_lambda",
    "converge_tau",
]

STATE_BUDGET = 10_000_000  # stored state entries before snapshot decimation


class LogEntry(NamedTuple):
    """Per-step diagnostics; fields without meaning at a step hold None."""

    step: int
    mass: float
    H: float | None
    H_tau: float | None
    GL: float
    max_change: float | None
    multiplier: float | None


@dataclass(frozen=True)
class Trajectory:
    """A scheme run: stored states, a full log, and why it stopped.

    The log always covers every step; states may be decimated to a stride
    when the run is too large to keep whole, but the first and final states
    are always present.  ``converged`` only matters for multi-class runs,
    where the inner fixed-point solve can fail; two-class steps are exact.
    """

    states: tuple
    log: tuple
    params: SchemeParams
    terminated_reason: str
    state_stride: int = 1
    converged: bool = True

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def num_steps(self) -> int:
        return self.log[-1].step


class SweepRow(NamedTuple):
    lam: float
    sup_distance_to_mbo: float


@dataclass(frozen=True)
class TauRefinementReport:
    """Self-convergence and regularity diagnostics across step sizes.

    ``matched_distance_matrix[i][j]`` compares runs i and i+1 at the j-th
    shared sample time; ``matched_distances`` are the per-pair maxima and
    ``distance_ratios`` their successive quotients.  The gl, lipschitz, and
    hoelder fields all refer to the finest run.  ``energy_gaps`` holds
    |H_tau - GL| at each run's final state with its spectral bound.
    """

    epsilon: float
    t_final: float
    taus: tuple
    step_counts: tuple
    grid_times: tuple
    matched_distance_matrix: tuple
    matched_distances: tuple
    distance_ratios: tuple
    gl_grid_values: tuple
    gl_step_min_slack: float
    gl_max_rise: float
    lipschitz_quotient: float
    lipschitz_bound: float
    hoelder_ratio: float
    hoelder_coefficient: float
    energy_gaps: tuple
    energy_gap_bounds: tuple


def _choose_stride(num_vertices: int, max_steps: int, stride) -> int:
    if stride is not None:
        stride = int(stride)
        if stride < 1:
            raise ValueError(f"snapshot stride must be >= 1, got {stride}")
        return stride
    entries = num_vertices * (max_steps + 1)
    return max(1, -(-entries // STATE_BUDGET))


def _scalar_multiplier(multiplier) -> float:
    if isinstance(multiplier, MboMultiplier):
        return float(multiplier.threshold)
    return float(multiplier)


def run_trajectory(
    u0: np.ndarray,
    g: Graph,
    s: Spectrum,
    params: SchemeParams,
    max_steps: int,
    fixed_point_tol: float | None = None,
    group_tol: float = GROUP_TOL,
    snapshot_stride: int | None = None,
) -> Trajectory:
    """Iterate the scheme from ``u0`` until a fixed point or ``max_steps``.

    Runs the relaxed step for ``lam < 1`` and the thresholding step for
    ``lam = 1``.  A step whose sup-norm change is at most ``fixed_point_tol``
    ends the run; the default tolerance is 0 for thresholding (the selection
    rule is deterministic, exact repeats happen) and 1e-12 otherwise.
    """
    if max_steps < 0:
        raise ValueError(f"max_steps must be >= 0, got {max_steps}")
    current = _check_box(u0, g)
    if fixed_point_tol is None:
        fixed_point_tol = 0.0 if params.lam == 1.0 else 1e-12
    stride = _choose_stride(g.num_vertices, max_steps, snapshot_stride)

    def diagnostics(u):
        H, H_tau = lyapunov_energy(u, g, s, params)
        return H, H_tau, ginzburg_landau(u, g, params.epsilon)

    H, H_tau, GL = diagnostics(current)
    states = [current.copy()]
    log = [LogEntry(0, float(mass(current, g)), H, H_tau, GL, None, None)]
    reason = "max_steps"
    for step in range(1, max_steps + 1):
        if params.lam == 1.0:
            result = mbo_step(current, g, s, params.tau, group_tol=group_tol)
        else:
            result = semi_discrete_step(current, g, s, params, group_tol=group_tol)
        change = float(np.abs(result.u_next - current).max())
        current = result.u_next
        H, H_tau, GL = diagnostics(current)
        log.append(
            LogEntry(
                step,
                result.mass_out,
                H,
                H_tau,
                GL,
                change,
                _scalar_multiplier(result.multiplier),
            )
        )
        if step % stride == 0:
            states.append(current.copy())
        if change <= fixed_point_tol:
            reason = "fixed_point"
            break
    if log[-1].step % stride != 0:
        states.append(current.copy())
    return Trajectory(
        states=tuple(states),
        log=tuple(log),
        params=params,
        terminated_reason=reason,
        state_stride=stride,
    )


def run_multiclass_trajectory(
    U0: SimplexField,
    g: Graph,
    s: Spectrum,
    params: SchemeParams,
    max_steps: int,
    conserve_masses: bool = True,
    fixed_point_tol: float = 1e-12,
    max_iter: int = 500,
    fp_tol: float = 1e-10,
    snapshot_stride: int | None = None,
) -> Trajectory:
    """Iterate a multi-class step; Lyapunov columns stay empty in the log.

    The logged mass is the total over classes, the energy column carries the
    multi-class Ginzburg-Landau value, and ``converged`` goes false if any
    inner fixed-point solve missed its tolerance (the run still continues
    with the best iterate, which keeps the log honest).
    """
    if max_steps < 0:
        raise ValueError(f"max_steps must be >= 0, got {max_steps}")
    stepper = multiclass_mass_conserving_step if conserve_masses else multiclass_step
    stride = _choose_stride(g.num_vertices * U0.num_classes, max_steps, snapshot_stride)
    current = U0
    _, GL = multi_obstacle_energy(current, g, params.epsilon)
    states = [current]
    log = [
        LogEntry(0, float(current.class_masses().sum()), None, None, GL, None, None)
    ]
    reason = "max_steps"
    all_converged = True
    for step in range(1, max_steps + 1):
        result = stepper(
            current, g, s, params, max_iter=max_iter, fp_tol=fp_tol
        )
        all_converged = all_converged and result.converged
        change = float(np.abs(result.u_next.values - current.values).max())
        current = result.u_next
        _, GL = multi_obstacle_energy(current, g, params.epsilon)
        log.append(
            LogEntry(
                step,
                float(result.class_masses_out.sum()),
                None,
                None,
                GL,
                change,
                None,
            )
        )
        if step % stride == 0:
            states.append(current)
        if change <= fixed_point_tol:
            reason = "fixed_point"
            break
    if log[-1].step % stride != 0:
        states.append(current)
    return Trajectory(
        states=tuple(states),
        log=tuple(log),
        params=params,
        terminated_reason=reason,
        state_stride=stride,
        converged=all_converged,
    )


def sweep_lambda(
    u0: np.ndarray,
    g: Graph,
    s: Spectrum,
    tau: float,
    lambdas,
    group_tol: float = GROUP_TOL,
    max_workers: int | None = None,
) -> tuple:
    """One relaxed step per lambda, each measured against the threshold step.

    Distances collapse to 0 once lambda passes an instance-dependent
    threshold below 1: the relaxed minimizer stops moving and equals the
    thresholding output exactly.  Rows keep the input order; passing
    ``max_workers`` > 1 evaluates entries concurrently (results identical).
    """
    lambdas = [float(lam) for lam in lambdas]
    for lam in lambdas:
        if lam >= 1.0:
            raise LambdaIsOne(f"sweep requires lambda < 1, got {lam}")
        if lam <= 0.0:
            raise ValueError(f"sweep requires lambda > 0, got {lam}")
    u0 = _check_box(u0, g)
    reference = mbo_step(u0, g, s, tau, group_tol=group_tol).u_next

    def one(lam: float) -> SweepRow:
        params = SchemeParams.from_lambda(tau=tau, lam=lam)
        out = semi_discrete_step(u0, g, s, params, group_tol=group_tol).u_next
        return SweepRow(lam, float(np.abs(out - reference).max()))

    if max_workers is not None and max_workers > 1 and len(lambdas) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(one, lambdas))
    else:
        rows = [one(lam) for lam in lambdas]
    return tuple(rows)


def _state_at(trajectory: Trajectory, t: float, tau: float):
    """State at matched time ``t``: index ceil(t / tau), capped at the end.

    The cap is exact, not an approximation: a run only ends early at a
    fixed point, after which every later state equals the last one.
    """
    index = max(0, math.ceil(t / tau - 1e-9))
    return trajectory.states[min(index, len(trajectory.states) - 1)]


def _quadratic_remainder(u: np.ndarray, tau: float, g: Graph, s: Spectrum) -> float:
    """<u, Q u> with tau^2 Q = exp(-tau L) - I + tau L, evaluated spectrally."""
    coeffs = s.phi.T @ (s.scale_fwd * u)
    weights = (np.expm1(-tau * s.eigenvalues) + tau * s.eigenvalues) / tau**2
    return float(weights @ coeffs**2)


def converge_tau(
    u0: np.ndarray,
    g: Graph,
    s: Spectrum,
    epsilon: float,
    t_final: float,
    taus,
    grid_points: int = 9,
) -> TauRefinementReport:
    """Refine the step size and measure self-convergence and regularity.

    Each tau runs ceil(t_final / tau) steps at lam = tau / epsilon.  The
    report compares consecutive refinements at shared sample times, checks
    the quadratic energy-descent inequality and plain monotonicity of the
    energy along the finest run, and measures Lipschitz and Hoelder-1/2
    quotients against their a-priori constants.
    """
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be positive and finite, got {epsilon}")
    if not t_final > 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    taus = [float(tau) for tau in taus]
    if not taus:
        raise ValueError("need at least one step size")
    if any(tau <= 0 for tau in taus):
        raise ValueError("step sizes must be positive")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("step sizes must be strictly decreasing")
    oversized = [tau for tau in taus if tau > epsilon]
    if oversized:
        raise TauExceedsEpsilon(
            f"step size {oversized[0]} exceeds interface width {epsilon}"
        )
    if grid_points < 2:
        raise ValueError(f"need at least two sample times, got {grid_points}")

    u0 = _check_box(u0, g)
    runs = []
    for tau in taus:
        params = SchemeParams.from_epsilon(epsilon=epsilon, tau=tau)
        steps = math.ceil(t_final / tau - 1e-12)
        runs.append(
            run_trajectory(u0, g, s, params, max_steps=steps, fixed_point_tol=0.0)
        )

    # sample at multiples of the coarsest step (plus t_final) so the matched
    # indices hit the same times in every run and quantization cancels
    coarse = taus[0]
    k_max = math.floor(t_final / coarse + 1e-12)
    ticks = sorted(
        {round(j * k_max / (grid_points - 1)) for j in range(grid_points)}
    )
    grid = [k * coarse for k in ticks]
    if grid[-1] < t_final - 1e-12 * t_final:
        grid.append(t_final)

    matrix = []
    matched = []
    for (tau_a, run_a), (tau_b, run_b) in zip(
        zip(taus, runs), zip(taus[1:], runs[1:])
    ):
        gaps = [
            float(
                np.abs(
                    _state_at(run_a, t, tau_a) - _state_at(run_b, t, tau_b)
                ).max()
            )
            for t in grid
        ]
        matrix.append(tuple(gaps))
        matched.append(max(gaps))
    ratios = [
        (a / b if b > 0 else math.inf) for a, b in zip(matched, matched[1:])
    ]

    finest_tau = taus[-1]
    finest = runs[-1]
    grid_states = [_state_at(finest, t, finest_tau) for t in grid]
    gl_grid = [ginzburg_landau(u, g, epsilon) for u in grid_states]

    min_slack = math.inf
    for a in range(len(grid)):
        for b in range(a + 1, len(grid)):
            dt = grid[b] - grid[a]
            drop = gl_grid[a] - gl_grid[b]
            quad = norm(grid_states[a] - grid_states[b], g) ** 2 / (2.0 * dt)
            min_slack = min(min_slack, drop - quad)
    gl_log = [entry.GL for entry in finest.log]
    gl_max_rise = max(
        (later - earlier for earlier, later in zip(gl_log, gl_log[1:])),
        default=0.0,
    )

    ones_norm = norm(np.ones(g.num_vertices), g)
    mean = average(u0, g)
    rho = max(mean, 1.0 - mean)
    lipschitz_bound = rho * ones_norm * (
        math.exp(1.0 / epsilon) - 1.0 + math.exp(1.0 / epsilon) / epsilon
    )
    quotient = 0.0
    for earlier, later in zip(finest.states, finest.states[1:]):
        quotient = max(quotient, norm(later - earlier, g) / finest_tau)
    for a in range(len(grid)):
        for b in range(a + 1, len(grid)):
            quotient = max(
                quotient,
                norm(grid_states[a] - grid_states[b], g) / (grid[b] - grid[a]),
            )

    hoelder_coefficient = math.sqrt(2.0 * gl_grid[0])
    hoelder_ratio = 0.0
    for a in range(len(grid)):
        for b in range(a + 1, len(grid)):
            distance = norm(grid_states[a] - grid_states[b], g)
            if distance == 0.0:
                continue
            scale = hoelder_coefficient * math.sqrt(grid[b] - grid[a])
            hoelder_ratio = max(
                hoelder_ratio, distance / scale if scale > 0 else math.inf
            )

    gaps = []
    bounds = []
    for tau, run in zip(taus, runs):
        final = run.final_state
        entry = run.log[-1]
        gaps.append(abs(entry.H_tau - entry.GL))
        bounds.append(0.5 * tau * abs(_quadratic_remainder(final, tau, g, s)))

    return TauRefinementReport(
        epsilon=epsilon,
        t_final=t_final,
        taus=tuple(taus),
        step_counts=tuple(run.num_steps for run in runs),
        grid_times=tuple(grid),
        matched_distance_matrix=tuple(matrix),
        matched_distances=tuple(matched),
        distance_ratios=tuple(ratios),
        gl_grid_values=tuple(gl_grid),
        gl_step_min_slack=float(min_slack),
        gl_max_rise=float(gl_max_rise),
        lipschitz_quotient=float(quotient),
        lipschitz_bound=float(lipschitz_bound),
        hoelder_ratio=float(hoelder_ratio),
        hoelder_coefficient=float(hoelder_coefficient),
        energy_gaps=tuple(gaps),
        energy_gap_bounds=tuple(bounds),
    )
