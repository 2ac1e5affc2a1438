"""Trajectory runs, lambda sweeps, and step-size refinement reports."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from graphphase import (
    DomainViolation,
    LambdaIsOne,
    SchemeParams,
    SimplexField,
    TauExceedsEpsilon,
    converge_tau,
    norm,
    run_multiclass_trajectory,
    run_trajectory,
    spectral_decompose,
    sweep_lambda,
)
from graphphase.oracles import random_connected_graph

TAU_P2 = 0.5 * math.log(2.0)


def test_constant_state_fixes_immediately(triangle):
    s = spectral_decompose(triangle)
    params = SchemeParams.from_lambda(tau=0.3, lam=0.5)
    traj = run_trajectory(np.full(3, 0.4), triangle, s, params, max_steps=50)
    assert traj.terminated_reason == "fixed_point"
    assert traj.num_steps == 1
    assert len(traj.log) == 2
    assert_allclose(traj.final_state, 0.4, atol=1e-12)


def test_threshold_fixed_point_on_edge(p2, p2_spectrum):
    params = SchemeParams.from_lambda(tau=TAU_P2, lam=1.0)
    traj = run_trajectory(
        np.array([1.0, 0.0]), p2, p2_spectrum, params, max_steps=25
    )
    assert traj.terminated_reason == "fixed_point"
    assert traj.num_steps == 1
    assert np.all(traj.final_state == np.array([1.0, 0.0]))
    # threshold multiplier logged as the scalar column
    assert traj.log[1].multiplier == pytest.approx(0.75, rel=1e-12)
    assert traj.log[0].max_change is None
    assert traj.log[0].multiplier is None


def test_log_columns_and_mass_constancy():
    rng = np.random.default_rng(5)
    g = random_connected_graph(10, rng, r=0.5)
    s = spectral_decompose(g)
    u0 = rng.uniform(0.0, 1.0, size=10)
    params = SchemeParams.from_lambda(tau=0.25, lam=0.5)
    traj = run_trajectory(u0, g, s, params, max_steps=60)
    masses = np.array([entry.mass for entry in traj.log])
    assert np.abs(masses / masses[0] - 1.0).max() <= 1e-9
    H = np.array([entry.H for entry in traj.log])
    assert np.all(np.diff(H) <= 1e-9)
    # squared-change partial sums stay bounded by the initial Lyapunov value
    changes = [
        norm(b - a, g) ** 2 for a, b in zip(traj.states, traj.states[1:])
    ]
    assert (1.0 - params.lam) * sum(changes) <= H[0] + 1e-9
    assert traj.log[-1].H_tau >= 0.0


def test_trajectory_rejects_bad_inputs(p2, p2_spectrum):
    params = SchemeParams.from_lambda(tau=0.3, lam=0.5)
    with pytest.raises(DomainViolation):
        run_trajectory(np.array([1.5, 0.0]), p2, p2_spectrum, params, max_steps=1)
    with pytest.raises(ValueError):
        run_trajectory(np.array([1.0, 0.0]), p2, p2_spectrum, params, max_steps=-1)


def test_snapshot_stride_keeps_ends(p2, p2_spectrum):
    # growing interior mode: no fixed point inside the 7-step budget
    params = SchemeParams.from_lambda(tau=0.01, lam=0.2)
    u0 = np.array([0.6, 0.4])
    traj = run_trajectory(
        u0, p2, p2_spectrum, params, max_steps=7, snapshot_stride=3
    )
    assert traj.state_stride == 3
    assert len(traj.log) == 8
    # stored: step 0, 3, 6, and the final step 7
    assert len(traj.states) == 4
    assert_allclose(traj.states[0], u0, atol=0)


def test_sweep_locks_onto_threshold_step(p2, p2_spectrum):
    rows = sweep_lambda(
        np.array([1.0, 0.0]), p2, p2_spectrum, TAU_P2, [0.9, 0.99, 0.999]
    )
    assert [row.lam for row in rows] == [0.9, 0.99, 0.999]
    for row in rows:
        assert row.sup_distance_to_mbo <= 1e-12


def test_sweep_constant_and_tied_states(p2, p2_spectrum, triangle):
    rows = sweep_lambda(
        np.full(3, 0.7), triangle, spectral_decompose(triangle), 0.4, [0.2, 0.8]
    )
    for row in rows:
        assert row.sup_distance_to_mbo <= 1e-12
    # symmetric tie splits the threshold level uniformly at every lambda
    rows = sweep_lambda(
        np.array([0.5, 0.5]), p2, p2_spectrum, TAU_P2, [0.3, 0.6, 0.95]
    )
    for row in rows:
        assert row.sup_distance_to_mbo <= 1e-12


def test_sweep_distance_decreases_with_lambda():
    rng = np.random.default_rng(21)
    g = random_connected_graph(7, rng, r=0.0)
    s = spectral_decompose(g)
    u0 = rng.uniform(0.0, 1.0, size=7)
    lambdas = [0.05, 0.5, 1.0 - 2.0**-20]
    rows = sweep_lambda(u0, g, s, 0.35, lambdas)
    distances = [row.sup_distance_to_mbo for row in rows]
    assert distances[-1] <= 1e-12
    assert distances[0] >= distances[-1]


def test_sweep_parallel_matches_serial(p2, p2_spectrum):
    u0 = np.array([0.8, 0.3])
    lambdas = [0.1, 0.4, 0.7, 0.95]
    serial = sweep_lambda(u0, p2, p2_spectrum, 0.3, lambdas)
    parallel = sweep_lambda(u0, p2, p2_spectrum, 0.3, lambdas, max_workers=3)
    assert serial == parallel


def test_sweep_validates_lambda(p2, p2_spectrum):
    u0 = np.array([1.0, 0.0])
    with pytest.raises(LambdaIsOne):
        sweep_lambda(u0, p2, p2_spectrum, 0.3, [0.5, 1.0])
    with pytest.raises(ValueError):
        sweep_lambda(u0, p2, p2_spectrum, 0.3, [0.0, 0.5])


def test_converge_tau_constant_state(triangle):
    s = spectral_decompose(triangle)
    report = converge_tau(
        np.full(3, 0.5), triangle, s, epsilon=1.0, t_final=0.5,
        taus=[1e-2, 5e-3, 2.5e-3],
    )
    assert report.matched_distances == (0.0, 0.0)
    assert report.gl_max_rise <= 1e-15
    assert report.lipschitz_quotient == 0.0
    assert report.hoelder_ratio == 0.0


def test_converge_tau_edge_self_convergence(p2, p2_spectrum):
    report = converge_tau(
        np.array([1.0, 0.0]), p2, p2_spectrum, epsilon=1.0, t_final=1.0,
        taus=[1e-2, 5e-3, 2.5e-3],
    )
    assert report.step_counts == (100, 200, 400)
    for ratio in report.distance_ratios:
        assert 1.5 <= ratio <= 3.0
    assert report.gl_max_rise <= 1e-8
    assert report.gl_step_min_slack >= -1e-8
    assert report.lipschitz_quotient <= report.lipschitz_bound
    assert report.hoelder_ratio <= 1.0 + 1e-9
    # the Lyapunov-vs-energy gap is controlled spectrally and shrinks with tau
    for gap, bound in zip(report.energy_gaps, report.energy_gap_bounds):
        assert gap <= bound + 1e-12
    assert report.energy_gap_bounds[-1] <= 0.6 * report.energy_gap_bounds[0]


def test_converge_tau_validation(p2, p2_spectrum):
    u0 = np.array([1.0, 0.0])
    with pytest.raises(TauExceedsEpsilon):
        converge_tau(u0, p2, p2_spectrum, epsilon=0.05, t_final=1.0, taus=[0.1])
    with pytest.raises(ValueError):
        converge_tau(u0, p2, p2_spectrum, epsilon=1.0, t_final=0.0, taus=[0.1])
    with pytest.raises(ValueError):
        converge_tau(
            u0, p2, p2_spectrum, epsilon=1.0, t_final=1.0, taus=[0.1, 0.2]
        )
    with pytest.raises(ValueError):
        converge_tau(u0, p2, p2_spectrum, epsilon=1.0, t_final=1.0, taus=[])


def test_multiclass_trajectory_runs(triangle):
    s = spectral_decompose(triangle)
    values = np.array([[0.8, 0.1, 0.1], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]])
    field = SimplexField(values=values, graph=triangle)
    params = SchemeParams.from_lambda(tau=0.2, lam=0.4)
    traj = run_multiclass_trajectory(field, triangle, s, params, max_steps=8)
    assert traj.converged
    assert traj.log[0].H is None and traj.log[0].H_tau is None
    masses = [entry.mass for entry in traj.log]
    # total measure never moves, even though classes exchange mass
    assert np.abs(np.array(masses) - 3.0).max() <= 1e-9
    assert all(isinstance(state, SimplexField) for state in traj.states)
    assert traj.final_state.in_sigma()
    energies = [entry.GL for entry in traj.log]
    assert all(math.isfinite(value) for value in energies)


def test_multiclass_trajectory_fixed_point(p2, p2_spectrum):
    field = SimplexField(values=np.full((2, 2), 0.5), graph=p2)
    params = SchemeParams.from_lambda(tau=0.3, lam=0.5)
    traj = run_multiclass_trajectory(field, p2, p2_spectrum, params, max_steps=10)
    assert traj.terminated_reason == "fixed_point"
    assert traj.num_steps == 1
