"""Mass-conserving two-phase steps: relaxed solve and threshold dynamics.

One step diffuses the state for time ``tau`` and then minimizes

    (1 - lam) <u, u> - 2 <u, diffused>     over  u in [0, 1]^V,  <u, 1> = M,

with ``lam = tau / epsilon``.  For ``lam < 1`` the minimizer is unique and has
the water-filling form ``u_i = clip((diffused_i - nu) / (1 - lam), 0, 1)``
where the scalar ``nu`` balances the mass constraint; the balance equation is
piecewise linear in ``nu`` and is solved exactly here, never by root
bracketing.  For ``lam = 1`` the objective is linear and minimizers are
threshold cuts of the diffused values with one partially filled level
(:func:`mbo_step`).  As ``lam`` approaches 1 the relaxed solution freezes onto
the threshold solution; :func:`semi_discrete_step` detects that regime
structurally and emits the threshold profile verbatim, because evaluating the
water-filling quotient there would divide rounding noise by ``1 - lam``.

Vertices sharing a diffused value always receive the same new value, so steps
preserve the symmetries of the input exactly.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    BoundaryState,
    DomainViolation,
    InconsistentInputs,
    LambdaIsOne,
    MassOutOfRange,
)
from .graph_core import Graph, Spectrum, diffuse, inner_product, mass

__all__ = [
    "SchemeParams",
    "ThresholdLevels",
    "MboMultiplier",
    "MultiplierSolution",
    "StepResult",
    "DualCertificate",
    "threshold_levels",
    "solve_multiplier",
    "semi_discrete_step",
    "mbo_step",
    "mbo_is_unique",
    "recover_subgradient",
    "step_residual",
    "lyapunov_energy",
    "ginzburg_landau",
    "lyapunov_gradient",
    "dual_certificate",
]

GROUP_TOL = 1e-12   # default absolute tolerance for tying diffused values
SNAP_TOL = 1e-12    # post-step snap of values this close to 0 or 1
BOX_TOL = 1e-12     # admissible overshoot of [0, 1] on input states


@dataclass(frozen=True)
class SchemeParams:
    """Step parameters ``epsilon`` (interface width), ``tau`` (step time).

    ``lam = tau / epsilon`` in [0, 1] selects the dynamics: 0 is pure
    diffusion (``epsilon = inf``), 1 is pure thresholding, anything between is
    the relaxed mass-conserving step.
    """

    epsilon: float
    tau: float
    lam: float

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        implied = self.tau / self.epsilon if math.isfinite(self.epsilon) else 0.0
        if abs(implied - self.lam) > 1e-12:
            raise ValueError(
                f"inconsistent parameters: tau/epsilon = {implied}, lam = {self.lam}"
            )

    @classmethod
    def from_epsilon(cls, epsilon: float, tau: float) -> "SchemeParams":
        lam = tau / epsilon if math.isfinite(epsilon) else 0.0
        return cls(epsilon=epsilon, tau=tau, lam=lam)

    @classmethod
    def from_lambda(cls, tau: float, lam: float) -> "SchemeParams":
        """Build params with ``lam`` stored exactly as given."""
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {lam}")
        epsilon = tau / lam if lam > 0 else math.inf
        return cls(epsilon=epsilon, tau=tau, lam=lam)


@dataclass(frozen=True)
class ThresholdLevels:
    """Distinct diffused values with their vertex measure.

    ``values`` ascend strictly; ``weights[l]`` sums ``d_i**r`` over the
    vertices of level ``l``; ``labels[i]`` is the level of vertex ``i``.
    """

    values: np.ndarray
    weights: np.ndarray
    labels: np.ndarray

    @property
    def num_levels(self) -> int:
        return self.values.size

    def level_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_levels)


class MboMultiplier(NamedTuple):
    """Threshold-step multiplier: the chosen level, its value, its fill."""

    level: int
    threshold: float
    fill: float


class MultiplierSolution(NamedTuple):
    """Solved mass multiplier and the interval of equally valid choices."""

    value: float
    lo: float
    hi: float


@dataclass(frozen=True)
class StepResult:
    """One accepted step with its optimality certificate pieces."""

    u_next: np.ndarray
    multiplier: "float | MboMultiplier"
    subgradient: np.ndarray
    residual: float
    mass_in: float
    mass_out: float


@dataclass(frozen=True)
class DualCertificate:
    """Lagrange multipliers certifying a relaxed step.

    ``lower``/``upper`` are the multipliers of the constraints ``u >= 0`` and
    ``u <= 1``; ``mass_multiplier`` pairs with the mass constraint.  A valid
    step has ``gap`` at rounding size and ``slack`` (largest complementary
    slackness product) near zero.
    """

    lower: np.ndarray
    upper: np.ndarray
    mass_multiplier: float
    primal: float
    dual: float
    gap: float
    slack: float


def _ones_mass(g: Graph) -> float:
    return float(g.degrees_r.sum())


def _check_box(u: np.ndarray, g: Graph) -> np.ndarray:
    u = g.check_field(u)
    if u.min() < -BOX_TOL or u.max() > 1.0 + BOX_TOL:
        raise DomainViolation(
            f"state must lie in [0, 1], range is [{u.min()}, {u.max()}]"
        )
    return np.clip(u, 0.0, 1.0)


def threshold_levels(
    diffused: np.ndarray, g: Graph, group_tol: float = GROUP_TOL
) -> ThresholdLevels:
    """Group diffused values into ascending levels with summed measure.

    Values whose gap to the previous sorted value is at most ``group_tol``
    join the same level; the level value is the smallest member, so exact
    ties (the symmetric case) keep their value bit for bit.
    """
    diffused = g.check_field(diffused)
    order = np.argsort(diffused, kind="stable")
    labels = np.empty(g.num_vertices, dtype=int)
    values = []
    weights = []
    previous = None
    for idx in order:
        x = float(diffused[idx])
        if previous is None or x - previous > group_tol:
            values.append(x)
            weights.append(0.0)
        labels[idx] = len(values) - 1
        weights[-1] += g.degrees_r[idx]
        previous = x
    return ThresholdLevels(
        values=np.asarray(values), weights=np.asarray(weights), labels=labels
    )


def _threshold_fill(levels: ThresholdLevels, target_mass: float):
    """Pick the unique level ``k`` whose partial fill meets the mass.

    Requires ``0 < target_mass <= total``.  Returns ``(k, fill, suffix)``
    where ``suffix[j]`` is the weight of levels ``j`` and above; everything
    above ``k`` is full, everything below empty, and level ``k`` carries
    ``fill`` in (0, 1].
    """
    weights = levels.weights
    suffix = np.concatenate([np.cumsum(weights[::-1])[::-1], [0.0]])
    # last index whose suffix weight still covers the target
    k = int(np.searchsorted(-suffix[:-1], -target_mass, side="right")) - 1
    fill = (target_mass - suffix[k + 1]) / weights[k]
    return k, min(fill, 1.0), suffix


def _fill_profile(num_levels: int, k: int, fill: float) -> np.ndarray:
    values = np.zeros(num_levels)
    values[k] = fill
    values[k + 1 :] = 1.0
    return values


def _clip_midpoint(lo: float, hi: float, lam: float) -> float:
    lo_c = max(lo, 0.0)
    hi_c = min(hi, lam)
    if lo_c > hi_c:
        # interval misses [0, lam] by rounding dust; take the nearest point
        anchor = lo if math.isfinite(lo) else hi
        return min(max(anchor, 0.0), lam)
    return 0.5 * (lo_c + hi_c)


def _invert_segment(points: np.ndarray, rhs: np.ndarray, i: int, m: float) -> float:
    """Solve the affine piece of the balance equation on segment ``i``."""
    if rhs[i] == rhs[i + 1] or points[i + 1] == points[i]:
        return float(points[i + 1] if rhs[i] > m else points[i])
    t = (rhs[i] - m) / (rhs[i] - rhs[i + 1])
    return float(points[i] + min(max(t, 0.0), 1.0) * (points[i + 1] - points[i]))


def _solve_profile(levels: ThresholdLevels, target_mass: float, lam: float):
    """Exact solve of ``sum_l a_l clip((alpha_l - nu)/(1-lam), 0, 1) = M``.

    Returns ``(nu, lo, hi, level_values)`` with ``[lo, hi]`` the full solution
    interval (before clipping into [0, lam]) and ``level_values`` the new
    per-level state.  Level values are produced without dividing by
    ``1 - lam`` whenever the threshold profile is already consistent, which
    keeps the near-threshold regime exact; otherwise the fractional levels
    get a single uniform mass repair so the step conserves mass to rounding.
    """
    alphas = levels.values
    weights = levels.weights
    count = levels.num_levels
    s = 1.0 - lam
    total = float(weights.sum())

    if target_mass <= 0.0:
        lo, hi = float(alphas[-1]), math.inf
        return _clip_midpoint(lo, hi, lam), lo, hi, np.zeros(count)
    if target_mass >= total:
        lo, hi = -math.inf, float(alphas[0]) - s
        return _clip_midpoint(lo, hi, lam), lo, hi, np.ones(count)

    k, fill, _ = _threshold_fill(levels, target_mass)
    below_ok = k == 0 or alphas[k] - alphas[k - 1] >= s * fill
    above_ok = k == count - 1 or alphas[k + 1] - alphas[k] >= s * (1.0 - fill)
    if below_ok and above_ok:
        values = _fill_profile(count, k, fill)
        if fill < 1.0:
            nu = lo = hi = float(alphas[k] - s * fill)
        else:
            lo, hi = float(alphas[k - 1]), float(alphas[k] - s)
            nu = _clip_midpoint(lo, hi, lam)
        return nu, lo, hi, values

    points = np.sort(np.concatenate([alphas - s, alphas]))
    rhs = np.array(
        [float(np.clip((alphas - b) / s, 0.0, 1.0) @ weights) for b in points]
    )
    j0 = int(np.argmax(rhs < target_mass))          # first rhs below target
    j1 = rhs.size - 1 - int(np.argmax(rhs[::-1] > target_mass))  # last above
    lo = _invert_segment(points, rhs, j1, target_mass)
    hi = _invert_segment(points, rhs, j0 - 1, target_mass)
    hi = max(hi, lo)
    nu = _clip_midpoint(lo, hi, lam)

    values = np.clip((alphas - nu) / s, 0.0, 1.0)
    near_zero = values <= SNAP_TOL
    near_one = values >= 1.0 - SNAP_TOL
    fractional = ~near_zero & ~near_one
    if fractional.any():
        # snap boundary dust, then restore the mass on the fractional levels
        values[near_zero] = 0.0
        values[near_one] = 1.0
        deficit = target_mass - float(values @ weights)
        values[fractional] += deficit / float(weights[fractional].sum())
        np.clip(values, 0.0, 1.0, out=values)
    return nu, lo, hi, values


def solve_multiplier(
    levels: ThresholdLevels, target_mass: float, lam: float
) -> MultiplierSolution:
    """Solve the mass balance equation for the multiplier ``nu``.

    The solution set is a closed interval; the returned ``value`` is the
    midpoint of that interval intersected with [0, lam], and ``lo``/``hi``
    report the intersected interval.  Infinite ends (all-empty or all-full
    targets) are reported clipped as well.
    """
    if lam == 1.0:
        raise LambdaIsOne("the multiplier equation needs lam < 1")
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lam must lie in [0, 1), got {lam}")
    total = float(levels.weights.sum())
    if target_mass < -1e-9 * (1.0 + total) or target_mass > total * (1.0 + 1e-9) + 1e-9:
        raise MassOutOfRange(
            f"target mass {target_mass} outside [0, {total}]"
        )
    nu, lo, hi, _ = _solve_profile(levels, target_mass, lam)
    return MultiplierSolution(nu, max(lo, 0.0), min(hi, lam))


def _beta_relaxed(
    diffused: np.ndarray, u_next: np.ndarray, nu: float, lam: float
) -> np.ndarray:
    """Subgradient matching a relaxed step, zero on strictly interior values."""
    if lam == 0.0:
        return np.zeros_like(diffused)
    s = 1.0 - lam
    beta = np.zeros_like(diffused)
    at_zero = u_next == 0.0
    at_one = u_next == 1.0
    beta[at_zero] = (nu - diffused[at_zero]) / lam
    beta[at_one] = (nu - diffused[at_one] + s) / lam
    return beta


def _snap_subgradient(
    beta: np.ndarray, u_next: np.ndarray, snap: float = 1e-8
) -> np.ndarray:
    """Zero out rounding-size sign violations; reject anything larger."""
    beta = beta.copy()
    bad_low = (u_next == 0.0) & (beta < 0.0)
    bad_high = (u_next == 1.0) & (beta > 0.0)
    interior = (u_next > 0.0) & (u_next < 1.0) & (beta != 0.0)
    for mask in (bad_low, bad_high, interior):
        if np.any(np.abs(beta[mask]) > snap):
            raise InconsistentInputs(
                "subgradient sign pattern violates the state beyond rounding"
            )
        beta[mask] = 0.0
    if np.abs(beta).max(initial=0.0) > 1.0 + snap:
        raise InconsistentInputs("subgradient leaves [-1, 1]")
    return np.clip(beta, -1.0, 1.0)


def recover_subgradient(
    diffused: np.ndarray,
    u_next: np.ndarray,
    multiplier: "float | MboMultiplier",
    params: SchemeParams,
) -> np.ndarray:
    """Rebuild the step's subgradient from the diffused input and multiplier.

    ``diffused`` is the heat-evolved previous state (the step's only
    dependence on it).  A float multiplier selects the relaxed form, an
    :class:`MboMultiplier` the threshold form; the recovered vector is
    validated against the sign pattern admissible at ``u_next`` and snapped
    where rounding left dust.
    """
    diffused = np.asarray(diffused, dtype=float)
    u_next = np.asarray(u_next, dtype=float)
    if diffused.shape != u_next.shape:
        raise InconsistentInputs("diffused state and new state differ in length")
    if isinstance(multiplier, MboMultiplier):
        if params.lam != 1.0:
            raise InconsistentInputs(
                "threshold multiplier passed with lam < 1 parameters"
            )
        beta = multiplier.threshold - diffused
    else:
        if params.lam == 1.0:
            raise InconsistentInputs(
                "scalar multiplier passed with lam = 1 parameters"
            )
        beta = _beta_relaxed(diffused, u_next, float(multiplier), params.lam)
    return _snap_subgradient(beta, u_next)


def step_residual(
    u_n: np.ndarray,
    u_next: np.ndarray,
    subgradient: np.ndarray,
    g: Graph,
    s: Spectrum,
    params: SchemeParams,
) -> float:
    """Sup-norm defect of the update equation linking ``u_n`` to ``u_next``.

    The equation balances the new state against its diffused predecessor,
    the mean-zero relaxation term, and the mean-zero subgradient term; a
    correct step leaves rounding-size defect only.
    """
    u_n = g.check_field(u_n)
    u_next = g.check_field(u_next)
    beta = g.check_field(subgradient)
    diffused = diffuse(u_n, params.tau, s)
    return _residual_from_diffused(diffused, u_next, beta, g, params)


def _residual_from_diffused(diffused, u_next, beta, g, params):
    lam = params.lam
    total = _ones_mass(g)
    avg_next = float(np.dot(u_next, g.degrees_r)) / total
    avg_beta = float(np.dot(beta, g.degrees_r)) / total
    defect = (
        u_next
        - diffused
        - lam * (u_next - avg_next)
        - lam * (beta - avg_beta)
    )
    return float(np.abs(defect).max())


def semi_discrete_step(
    u_n: np.ndarray,
    g: Graph,
    s: Spectrum,
    params: SchemeParams,
    group_tol: float = GROUP_TOL,
) -> StepResult:
    """One relaxed mass-conserving step (``lam < 1``).

    Diffuses, solves the multiplier equation exactly, assigns each threshold
    level its solved value, and recovers the subgradient certificate.  With
    ``lam = 0`` the step is plain diffusion.  Raises
    :class:`~graphphase.errors.LambdaIsOne` for ``lam = 1`` (use
    :func:`mbo_step`) and :class:`~graphphase.errors.DomainViolation` for
    states outside [0, 1].
    """
    if params.lam == 1.0:
        raise LambdaIsOne("semi_discrete_step requires lam < 1")
    u_n = _check_box(u_n, g)
    mass_in = mass(u_n, g)
    diffused = diffuse(u_n, params.tau, s)

    if params.lam == 0.0:
        u_next = np.clip(diffused, 0.0, 1.0)
        beta = np.zeros_like(u_next)
        residual = _residual_from_diffused(diffused, u_next, beta, g, params)
        return StepResult(
            u_next=u_next,
            multiplier=0.0,
            subgradient=beta,
            residual=residual,
            mass_in=mass_in,
            mass_out=mass(u_next, g),
        )

    levels = threshold_levels(diffused, g, group_tol)
    nu, _, _, level_values = _solve_profile(levels, mass_in, params.lam)
    u_next = level_values[levels.labels]
    beta = _snap_subgradient(_beta_relaxed(diffused, u_next, nu, params.lam), u_next)
    residual = _residual_from_diffused(diffused, u_next, beta, g, params)
    return StepResult(
        u_next=u_next,
        multiplier=nu,
        subgradient=beta,
        residual=residual,
        mass_in=mass_in,
        mass_out=mass(u_next, g),
    )


def mbo_step(
    u_n: np.ndarray,
    g: Graph,
    s: Spectrum,
    tau: float,
    group_tol: float = GROUP_TOL,
) -> StepResult:
    """One mass-conserving threshold step (``lam = 1``).

    Fills diffused levels from the top until the mass budget is spent; the
    boundary level is filled uniformly with the leftover fraction.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    u_n = _check_box(u_n, g)
    mass_in = mass(u_n, g)
    diffused = diffuse(u_n, tau, s)
    levels = threshold_levels(diffused, g, group_tol)
    total = float(levels.weights.sum())

    if mass_in <= 0.0:
        k, fill = 0, 0.0
        level_values = np.zeros(levels.num_levels)
    elif mass_in >= total:
        k, fill = 0, 1.0
        level_values = np.ones(levels.num_levels)
    else:
        k, fill, _ = _threshold_fill(levels, mass_in)
        level_values = _fill_profile(levels.num_levels, k, fill)

    u_next = level_values[levels.labels]
    multiplier = MboMultiplier(
        level=k, threshold=float(levels.values[k]), fill=float(fill)
    )
    beta = _snap_subgradient(multiplier.threshold - diffused, u_next)
    params = SchemeParams.from_lambda(tau=tau, lam=1.0)
    residual = _residual_from_diffused(diffused, u_next, beta, g, params)
    return StepResult(
        u_next=u_next,
        multiplier=multiplier,
        subgradient=beta,
        residual=residual,
        mass_in=mass_in,
        mass_out=mass(u_next, g),
    )


def _profile_is_unique(levels: ThresholdLevels, target_mass: float) -> bool:
    total = float(levels.weights.sum())
    if target_mass <= 0.0 or target_mass >= total:
        return True
    k, fill, _ = _threshold_fill(levels, target_mass)
    if fill >= 1.0 - 1e-12:
        return True
    return int(levels.level_sizes()[k]) == 1


def mbo_is_unique(
    u_n: np.ndarray,
    g: Graph,
    s: Spectrum,
    tau: float,
    group_tol: float = GROUP_TOL,
) -> bool:
    """Whether the threshold step from ``u_n`` has a single minimizer.

    True when the mass budget closes exactly at a level boundary or when the
    partially filled level holds a single vertex; otherwise the level set
    admits a continuum of equally good fills and :func:`mbo_step` returns the
    uniform one.
    """
    u_n = _check_box(u_n, g)
    diffused = diffuse(u_n, tau, s)
    levels = threshold_levels(diffused, g, group_tol)
    return _profile_is_unique(levels, mass(u_n, g))


def lyapunov_energy(
    u: np.ndarray, g: Graph, s: Spectrum, params: SchemeParams
) -> tuple[float, float]:
    """Descent functional of the stepping scheme and its ``1/(2 tau)`` scaling.

    Nonnegative, non-increasing along both step types; the scaled form
    converges to the Ginzburg-Landau energy as ``tau`` shrinks.
    """
    u = _check_box(u, g)
    smooth = inner_product(u, u - diffuse(u, params.tau, s), g)
    obstacle = params.lam * inner_product(u, 1.0 - u, g)
    value = obstacle + smooth
    return value, value / (2.0 * params.tau)


def ginzburg_landau(u: np.ndarray, g: Graph, epsilon: float) -> float:
    """Graph Ginzburg-Landau energy with the double-obstacle well.

    Returns ``+inf`` outside the box ``[0, 1]^V``.
    """
    u = g.check_field(u)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if u.min() < -BOX_TOL or u.max() > 1.0 + BOX_TOL:
        return math.inf
    u = np.clip(u, 0.0, 1.0)
    smooth = 0.0
    for i, j, w in g.edges:
        diff = u[i] - u[j]
        smooth += w * diff * diff
    well = 0.5 * float(np.dot(g.degrees_r, u * (1.0 - u)))
    if math.isinf(epsilon):
        return 0.5 * smooth
    return 0.5 * smooth + well / epsilon


def lyapunov_gradient(
    u: np.ndarray, g: Graph, s: Spectrum, params: SchemeParams
) -> np.ndarray:
    """Gradient of the descent functional along the fixed-mass plane.

    Defined for strictly interior states only; the result is orthogonal to
    constants in the weighted inner product, so fixed points of the dynamics
    inside the box are exactly its zeros.
    """
    u = g.check_field(u)
    if u.min() <= 0.0 or u.max() >= 1.0:
        raise BoundaryState("gradient needs a strictly interior state")
    avg = mass(u, g) / _ones_mass(g)
    return (
        2.0 * (u - diffuse(u, params.tau, s))
        - 2.0 * params.lam * u
        + 2.0 * params.lam * avg
    )


def dual_certificate(
    u_n: np.ndarray,
    step: StepResult,
    g: Graph,
    s: Spectrum,
    params: SchemeParams,
) -> DualCertificate:
    """Build the Lagrange certificate for a relaxed step (``lam < 1``).

    The box multipliers are read off the active sets of the new state; a
    correct step makes the dual value meet the primal value (strong duality),
    so the returned ``gap`` measures how close the pair is to optimal.
    """
    if params.lam == 1.0:
        raise LambdaIsOne("dual certificate exists for lam < 1 only")
    if isinstance(step.multiplier, MboMultiplier):
        raise InconsistentInputs("threshold steps carry no scalar multiplier")
    nu = float(step.multiplier)
    diffused = diffuse(_check_box(u_n, g), params.tau, s)
    u_next = g.check_field(step.u_next)
    s_comp = 1.0 - params.lam

    lower = np.zeros_like(u_next)
    upper = np.zeros_like(u_next)
    at_zero = u_next == 0.0
    at_one = u_next == 1.0
    lower[at_zero] = np.maximum(0.0, 2.0 * nu - 2.0 * diffused[at_zero])
    upper[at_one] = np.maximum(
        0.0, 2.0 * diffused[at_one] - 2.0 * s_comp - 2.0 * nu
    )

    u_star = (2.0 * diffused + lower - upper - 2.0 * nu) / (2.0 * s_comp)
    m = mass(u_next, g)
    primal = s_comp * inner_product(u_next, u_next, g) - 2.0 * inner_product(
        u_next, diffused, g
    )
    dual = -(
        s_comp * inner_product(u_star, u_star, g)
        + mass(upper, g)
        + 2.0 * nu * m
    )
    slack = max(
        float(np.abs(lower * u_next).max(initial=0.0)),
        float(np.abs(upper * (1.0 - u_next)).max(initial=0.0)),
    )
    return DualCertificate(
        lower=lower,
        upper=upper,
        mass_multiplier=float(nu),
        primal=primal,
        dual=dual,
        gap=primal - dual,
        slack=slack,
    )
