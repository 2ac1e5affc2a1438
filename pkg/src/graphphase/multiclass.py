"""Multi-class phase fields on the probability simplex.

States are |V| x K matrices whose rows live on the simplex; the obstacle
well rewards rows that sit on a vertex of it.  The implicit stepping schemes
here have no closed-form solve, so both run a damped fixed-point iteration
around exact projections and are flagged experimental: every result reports
its residual and a converged flag instead of assuming success.  The
mass-conserving variant projects onto the transportation polytope (simplex
rows with prescribed per-class masses) by Dykstra's alternating corrections,
which also hand back the per-class constants of the update equation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainViolation,
    InconsistentInputs,
    InfeasibleMasses,
    RowNotInPi,
)
from .graph_core import Graph, Spectrum, diffuse, dirichlet_energy

__all__ = [
    "SimplexField",
    "MultiClassStepResult",
    "multi_obstacle_energy",
    "well_force",
    "project_rows_to_simplex",
    "multiclass_step",
    "multiclass_mass_conserving_step",
]

ROW_SUM_TOL = 1e-10   # admissible defect of row sums on construction
SIGMA_TOL = 1e-12     # admissible negative dust for simplex membership
FP_TOL = 1e-10        # default fixed-point displacement tolerance
MAX_ITER = 500        # default fixed-point iteration budget


@dataclass(frozen=True)
class SimplexField:
    """Per-vertex class weights: rows sum to one.

    Rows may carry negative dust from upstream arithmetic; membership in the
    simplex proper (all entries nonnegative) is checked by the steps that
    need it, not at construction.
    """

    values: np.ndarray
    graph: Graph

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 2:
            raise DimensionMismatch(
                "field must be a 2-D matrix with at least two classes"
            )
        if values.shape[0] != self.graph.num_vertices:
            raise DimensionMismatch(
                f"field has {values.shape[0]} rows for "
                f"{self.graph.num_vertices} vertices"
            )
        if not np.all(np.isfinite(values)):
            raise DomainViolation("field entries must be finite")
        defect = np.abs(values.sum(axis=1) - 1.0)
        worst = int(defect.argmax())
        if defect[worst] > ROW_SUM_TOL:
            raise RowNotInPi(
                f"row {worst} sums to {values[worst].sum()}, expected 1"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def in_sigma(self, tol: float = SIGMA_TOL) -> bool:
        """Whether all entries are nonnegative up to ``tol`` dust."""
        return bool(self.values.min() >= -tol)

    def class_masses(self) -> np.ndarray:
        """Weighted vertex measure carried by each class."""
        return self.values.T @ self.graph.degrees_r


@dataclass(frozen=True)
class MultiClassStepResult:
    """One fixed-point solve with its diagnostics.

    ``converged`` is never assumed: a run that exhausts its iteration budget
    returns its best iterate with ``converged`` false and an honest residual.
    """

    u_next: SimplexField
    subgradient: np.ndarray
    residual: float
    iterations: int
    converged: bool
    class_masses_in: np.ndarray
    class_masses_out: np.ndarray


def _field_values(U: SimplexField, g: Graph) -> np.ndarray:
    if not isinstance(U, SimplexField):
        raise InconsistentInputs("expected a SimplexField")
    if U.graph.num_vertices != g.num_vertices:
        raise InconsistentInputs("field was built over a different graph")
    return U.values


def multi_obstacle_energy(
    U: SimplexField, g: Graph, epsilon: float
) -> tuple[float, float]:
    """Obstacle well and total energy of a multi-class state.

    The well sums ``d_i**r * prod_k (1 - U_ik)`` and vanishes exactly on
    one-hot rows; both values are ``+inf`` off the simplex.  Returns
    ``(well, energy)`` with ``energy = smooth part + well / epsilon``.
    """
    values = _field_values(U, g)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not U.in_sigma():
        return math.inf, math.inf
    well = float(np.dot(g.degrees_r, np.prod(1.0 - values, axis=1)))
    smooth = sum(
        dirichlet_energy(values[:, k], g) for k in range(U.num_classes)
    )
    return well, smooth + (0.0 if math.isinf(epsilon) else well / epsilon)


def _force(values: np.ndarray) -> np.ndarray:
    one_minus = 1.0 - values
    num_classes = one_minus.shape[1]
    partials = np.empty_like(one_minus)
    for k in range(num_classes):
        partials[:, k] = np.prod(np.delete(one_minus, k, axis=1), axis=1)
    force = partials - partials.mean(axis=1, keepdims=True)
    # centering in floats leaves row-sum dust; balance the last class exactly
    force[:, -1] = -force[:, :-1].sum(axis=1)
    return force


def well_force(U: SimplexField, g: Graph) -> np.ndarray:
    """Downhill direction of the obstacle well, centered per row.

    Entry ``(i, k)`` is the product of ``1 - U`` over the other classes
    minus the class average of those products; every row sums to zero
    exactly, so the force moves rows along the simplex, never off it.
    """
    return _force(_field_values(U, g))


def project_rows_to_simplex(matrix: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row onto the probability simplex.

    Sort-based exact algorithm: each row keeps its entries above a waterline
    chosen so the survivors, shifted down to it, sum to one.  The input
    minus the output realizes the simplex subgradient pattern (equal on the
    support, no larger off it), which is what the step solvers read back.
    """
    values = np.asarray(matrix, dtype=float)
    if values.ndim != 2 or values.shape[1] < 2:
        raise DimensionMismatch("expected a 2-D matrix with at least two columns")
    if not np.all(np.isfinite(values)):
        raise DomainViolation("entries must be finite")
    num_classes = values.shape[1]
    dropped = np.sort(values, axis=1)[:, ::-1]
    shifted = (np.cumsum(dropped, axis=1) - 1.0) / np.arange(1, num_classes + 1)
    support = np.sum(dropped > shifted, axis=1)
    rows = np.arange(values.shape[0])
    waterline = shifted[rows, support - 1]
    return np.maximum(values - waterline[:, None], 0.0)


def _row_center_exact(matrix: np.ndarray) -> np.ndarray:
    out = matrix - matrix.mean(axis=1, keepdims=True)
    out[:, -1] = -out[:, :-1].sum(axis=1)
    return out


def _check_start(U_n: SimplexField, g: Graph) -> np.ndarray:
    values = _field_values(U_n, g)
    if not U_n.in_sigma():
        raise DomainViolation("starting rows must lie on the simplex")
    return np.clip(values, 0.0, 1.0)


def _diffuse_columns(values: np.ndarray, tau: float, s: Spectrum) -> np.ndarray:
    return np.column_stack(
        [diffuse(values[:, k], tau, s) for k in range(values.shape[1])]
    )


def _project_masses(
    matrix: np.ndarray,
    g: Graph,
    masses: np.ndarray,
    tol: float = 1e-12,
    max_rounds: int = 10_000,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest matrix with simplex rows and prescribed class masses.

    Dykstra's alternating corrections between the per-class mass planes
    (affine, correction-free) and the row-simplex product (correction
    carried).  Returns ``(projection, simplex_correction, mass_shifts)``:
    the projection equals input + shifts - correction up to rounding, which
    is how the callers split the total correction into the subgradient part
    and the per-class constants.
    """
    total = float(g.degrees_r.sum())
    x = np.asarray(matrix, dtype=float)
    correction = np.zeros_like(x)
    shift_sum = np.zeros(x.shape[1])
    for _ in range(max_rounds):
        shifts = (masses - x.T @ g.degrees_r) / total
        shift_sum += shifts
        relaxed = x + shifts[None, :] + correction
        x_new = project_rows_to_simplex(relaxed)
        correction = relaxed - x_new
        drift = float(np.abs(x_new - x).max())
        mass_defect = float(np.abs(masses - x_new.T @ g.degrees_r).max())
        x = x_new
        if drift <= tol and mass_defect <= tol * (1.0 + float(np.abs(masses).max())):
            break
    return x, correction, shift_sum


def _fixed_point(project, diffused, lam, max_iter, fp_tol):
    """Damped fixed-point loop shared by both multi-class steps.

    ``project`` maps a matrix to (feasible iterate, correction, constants).
    Tracks the best iterate by displacement and halves the relaxation weight
    after two consecutive increases (oscillation); the best iterate, not the
    last, is what a non-converged run hands back.
    """
    current = project(diffused)[0]
    omega = 1.0
    rises = 0
    previous_disp = math.inf
    best = (math.inf, current, np.zeros_like(current), None)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        target = diffused + lam * _force(current)
        proposed, correction, constants = project(target)
        disp = float(np.abs(proposed - current).max())
        if disp < best[0]:
            best = (disp, proposed, correction, constants)
        if disp <= fp_tol:
            converged = True
            break
        if disp > previous_disp:
            rises += 1
            if rises >= 2:
                omega = 0.5
        else:
            rises = 0
        previous_disp = disp
        current = current + omega * (proposed - current)
    _, final, correction, constants = best
    return final, correction, constants, iterations, converged


def _subgradient(correction: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0.0:
        return np.zeros_like(correction)
    return _row_center_exact(-correction / lam)


def multiclass_step(
    U_n: SimplexField,
    g: Graph,
    s: Spectrum,
    params,
    max_iter: int = MAX_ITER,
    fp_tol: float = FP_TOL,
) -> MultiClassStepResult:
    """One multi-class step: diffuse, then drift and re-project to the simplex.

    Experimental fixed-point solve of the implicit update; class masses are
    not constrained here (see :func:`multiclass_mass_conserving_step`).  The
    residual is the sup-norm defect of the update equation at the returned
    iterate, subgradient included.
    """
    start = _check_start(U_n, g)
    masses_in = start.T @ g.degrees_r
    diffused = _diffuse_columns(start, params.tau, s)
    lam = params.lam

    def project(matrix):
        projected = project_rows_to_simplex(matrix)
        return projected, matrix - projected, None

    final, correction, _, iterations, converged = _fixed_point(
        project, diffused, lam, max_iter, fp_tol
    )
    beta = _subgradient(correction, lam)
    defect = final - diffused - lam * _force(final) - lam * beta
    return MultiClassStepResult(
        u_next=SimplexField(values=final, graph=g),
        subgradient=beta,
        residual=float(np.abs(defect).max()),
        iterations=iterations,
        converged=converged,
        class_masses_in=masses_in,
        class_masses_out=final.T @ g.degrees_r,
    )


def multiclass_mass_conserving_step(
    U_n: SimplexField,
    g: Graph,
    s: Spectrum,
    params,
    max_iter: int = MAX_ITER,
    fp_tol: float = FP_TOL,
) -> MultiClassStepResult:
    """One multi-class step keeping every class mass fixed.

    The feasible set is the transportation polytope of simplex rows with the
    input's class masses; each inner solve projects onto it by alternating
    corrections.  The per-class constants of the update equation come out of
    the accumulated mass shifts, and the residual checks the full equation,
    constants included.
    """
    start = _check_start(U_n, g)
    masses_in = start.T @ g.degrees_r
    total = float(g.degrees_r.sum())
    if abs(float(masses_in.sum()) - total) > 1e-8 * (1.0 + total):
        raise InfeasibleMasses(
            f"class masses sum to {masses_in.sum()}, expected {total}"
        )
    diffused = _diffuse_columns(start, params.tau, s)
    lam = params.lam

    def project(matrix):
        return _project_masses(matrix, g, masses_in)

    final, correction, shifts, iterations, converged = _fixed_point(
        project, diffused, lam, max_iter, fp_tol
    )
    beta = _subgradient(correction, lam)
    # the accumulated mass shifts, centered so they sum to zero like the
    # row-centered subgradient they pair with, are the per-class constants
    if shifts is None:
        shifts = np.zeros(start.shape[1])
    constants = shifts - shifts.mean()
    defect = final - diffused - lam * _force(final) - lam * beta - constants[None, :]
    return MultiClassStepResult(
        u_next=SimplexField(values=final, graph=g),
        subgradient=beta,
        residual=float(np.abs(defect).max()),
        iterations=iterations,
        converged=converged,
        class_masses_in=masses_in,
        class_masses_out=final.T @ g.degrees_r,
    )
