import math

import numpy as np
import pytest

from nishape import (InputSignal, IntegratorConfig, NonlinearSystem, ScalarField,
                     StaticNonlinearity, build_pendulum, PendulumParams,
                     check_equilibrium_uniqueness, check_gradient_nonvanishing,
                     check_positive_definite, estimate_max_epsilon,
                     flag_hidden_motion, halton_box_samples,
                     hamiltonian_decay_identity, hamiltonian_to_nonlinear,
                     make_closed_loop, ni_residuals, osni_residuals, report_line,
                     simulate, write_reports_csv, zero_field)
from conftest import make_linear_gain_feedback, make_rotation_hamiltonian


def _pendulum_square_wave_run(t_end=10.0):
    plant, V = build_pendulum()
    sig = InputSignal.square_wave(2, 0, 2.0, 3.0)
    traj = simulate(plant, (6.0, 4.5, 0.0, 0.0), sig, IntegratorConfig(step=1e-3, t_end=t_end))
    return plant, V, traj


def _random_pendulum_batch(n_traj=5, t_end=3.0, seed=42):
    plant, V = build_pendulum()
    rng = np.random.default_rng(seed)
    trajs = [simulate(plant, rng.uniform(-3.0, 3.0, size=4), InputSignal.zero(2),
                      IntegratorConfig(step=1e-3, t_end=t_end))
             for _ in range(n_traj)]
    return plant, V, trajs


# ---------------------------------------------------------------------------
# Sampling


def test_halton_samples_reproducible_and_in_box():
    box = [(-2.0, 3.0), (-1.0, 1.0)]
    a = halton_box_samples(box, 64, seed=5)
    b = halton_box_samples(box, 64, seed=5)
    assert np.array_equal(a, b)
    assert np.all(a[:, 0] >= -2.0) and np.all(a[:, 0] <= 3.0)
    assert np.all(a[:, 1] >= -1.0) and np.all(a[:, 1] <= 1.0)
    # index-based generation: shorter runs are prefixes of longer ones
    assert np.array_equal(a[:16], halton_box_samples(box, 16, seed=5))
    # different seeds move the points
    assert not np.allclose(a, halton_box_samples(box, 64, seed=6))


def test_halton_rejects_degenerate_box():
    with pytest.raises(ValueError, match="degenerate"):
        halton_box_samples([(1.0, 1.0)], 8, seed=0)


# ---------------------------------------------------------------------------
# Dissipation residuals


def test_pendulum_square_wave_is_dissipative():
    plant, V, traj = _pendulum_square_wave_run(t_end=30.0)
    report = ni_residuals(plant, V, traj)
    assert report.verdict == "pass"
    assert report.n_violations == 0
    assert report.n_samples == traj.n_samples


def test_lossless_storage_rate_vanishes():
    hs = make_rotation_hamiltonian(omega=1.0, r=0.0)
    sys = hamiltonian_to_nonlinear(hs)
    traj = simulate(sys, [1.0, 0.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-3, t_end=5.0))
    report = ni_residuals(sys, hs.H, traj)
    assert report.verdict == "pass"
    assert abs(report.max_violation) <= 1e-12


def test_flipped_hinge_damper_violates_dissipation():
    # reversing the second hinge damper makes the damping form indefinite
    p = PendulumParams()
    m1l1, m2l2 = p.m1 * p.l1 ** 2, p.m2 * p.l2 ** 2
    m1gl1, m2gl2 = p.m1 * p.g * p.l1, p.m2 * p.g * p.l2
    d2 = -p.d2

    def f(x, u):
        th1, th2, w1, w2 = x
        e, de = th1 - th2, w1 - w2
        return np.array([
            w1,
            w2,
            (-m1gl1 * math.sin(th1) - p.k1 * th1 - p.d1 * w1 - p.kc * e - p.dc * de + u[0]) / m1l1,
            (-m2gl2 * math.sin(th2) - p.k2 * th2 - d2 * w2 + p.kc * e + p.dc * de + u[1]) / m2l2,
        ])

    bad_plant = NonlinearSystem(4, 2, f, lambda x: x[:2].copy(),
                                h_jacobian=lambda x: np.eye(2, 4))
    _, V = build_pendulum(p)
    traj = simulate(bad_plant, (1.0, -0.5, 0.0, 0.0), InputSignal.zero(2),
                    IntegratorConfig(step=1e-3, t_end=5.0))
    report = ni_residuals(bad_plant, V, traj)
    assert report.verdict == "fail"
    assert report.max_violation > report.tolerance


def test_osni_with_zero_epsilon_is_bitwise_ni():
    plant, V, traj = _pendulum_square_wave_run(t_end=2.0)
    r_ni = ni_residuals(plant, V, traj)
    r_osni = osni_residuals(plant, V, traj, 0.0)
    assert np.array_equal(r_ni.residuals, r_osni.residuals)
    assert r_ni.max_violation == r_osni.max_violation
    assert r_ni.tolerance == r_osni.tolerance


def test_osni_passes_at_half_estimate_fails_at_ten_times():
    plant, V, trajs = _random_pendulum_batch()
    eps_hat = estimate_max_epsilon(plant, V, trajs)
    assert eps_hat > 0.0
    for traj in trajs:
        assert osni_residuals(plant, V, traj, 0.5 * eps_hat).verdict == "pass"
    assert any(osni_residuals(plant, V, traj, 10.0 * eps_hat).verdict == "fail"
               for traj in trajs)


def test_osni_passes_just_below_the_estimate():
    plant, V, trajs = _random_pendulum_batch(n_traj=3)
    eps_hat = estimate_max_epsilon(plant, V, trajs)
    for traj in trajs:
        report = osni_residuals(plant, V, traj, eps_hat * (1.0 - 1e-6))
        assert report.verdict == "pass"


def test_osni_rejects_negative_epsilon():
    plant, V, traj = _pendulum_square_wave_run(t_end=1.0)
    with pytest.raises(ValueError):
        osni_residuals(plant, V, traj, -0.1)


# ---------------------------------------------------------------------------
# Strictness estimate


def test_epsilon_estimate_lossless_is_zero():
    hs = make_rotation_hamiltonian(omega=1.0, r=0.0)
    sys = hamiltonian_to_nonlinear(hs)
    traj = simulate(sys, [1.0, 0.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-3, t_end=3.0))
    assert estimate_max_epsilon(sys, hs.H, [traj]) == 0.0


def test_epsilon_estimate_grows_with_damping():
    params = PendulumParams()
    doubled = PendulumParams(d1=2 * params.d1, d2=2 * params.d2, dc=2 * params.dc)
    rng = np.random.default_rng(11)
    starts = [rng.uniform(-2.0, 2.0, size=4) for _ in range(3)]
    estimates = []
    for p in (params, doubled):
        plant, V = build_pendulum(p)
        trajs = [simulate(plant, x0, InputSignal.zero(2),
                          IntegratorConfig(step=1e-3, t_end=3.0)) for x0 in starts]
        estimates.append(estimate_max_epsilon(plant, V, trajs))
    assert estimates[0] > 0.0
    assert estimates[1] >= estimates[0]


def test_epsilon_estimate_requires_trajectories():
    plant, V = build_pendulum()
    with pytest.raises(ValueError):
        estimate_max_epsilon(plant, V, [])


# ---------------------------------------------------------------------------
# Positive definiteness on a box


def _w1_field():
    return ScalarField(2, lambda x: 0.4 * x[0] ** 2 + 0.75 * x[1] ** 2,
                       lambda x: np.array([0.8 * x[0], 1.5 * x[1]]))


def _indefinite_field():
    return ScalarField(2, lambda x: x[0] ** 2 - x[1] ** 2,
                       lambda x: np.array([2.0 * x[0], -2.0 * x[1]]))


def _w2_field():
    return ScalarField(2, lambda x: 0.5 * x[0] ** 2 + 0.5 * x[1] ** 2 + 1.0 - math.cos(x[0] - x[1]),
                       lambda x: np.array([x[0] + math.sin(x[0] - x[1]),
                                           x[1] - math.sin(x[0] - x[1])]))


BOX2 = [(-5.0, 5.0), (-5.0, 5.0)]


def test_definiteness_diagonal_quadratic():
    report = check_positive_definite(_w1_field(), BOX2, n_samples=200, seed=0)
    assert report.verdict == "pass"
    assert report.min_sampled_value > 0.0
    assert report.min_hessian_eig_origin == pytest.approx(0.8, abs=1e-6)
    assert "box-local" in report.caveat


def test_definiteness_indefinite_fails_with_witness():
    report = check_positive_definite(_indefinite_field(), BOX2, n_samples=200, seed=0)
    assert report.verdict == "fail"
    assert report.min_sampled_value < 0.0
    witness = np.asarray(report.witness)
    assert witness[0] ** 2 - witness[1] ** 2 == pytest.approx(report.min_sampled_value)


def test_definiteness_coupled_field_hessian_eigs():
    report = check_positive_definite(_w2_field(), BOX2, n_samples=200, seed=0)
    assert report.verdict == "pass"
    # Hessian at the origin is [[2, -1], [-1, 2]]
    assert report.min_hessian_eig_origin == pytest.approx(1.0, abs=1e-6)


def test_definiteness_verdicts_are_seed_stable():
    for field, expected in ((_w1_field(), "pass"), (_indefinite_field(), "fail"),
                            (_w2_field(), "pass")):
        verdicts = {check_positive_definite(field, BOX2, n_samples=200, seed=s).verdict
                    for s in range(5)}
        assert verdicts == {expected}


def test_definiteness_box_must_contain_origin():
    field = _w1_field()
    with pytest.raises(ValueError, match="origin"):
        check_positive_definite(field, [(0.5, 5.0), (-5.0, 5.0)])
    with pytest.raises(ValueError, match="degenerate"):
        check_positive_definite(field, [(5.0, -5.0), (-5.0, 5.0)])


# ---------------------------------------------------------------------------
# Gradient nonvanishing


def test_nonvanishing_coupled_field_passes():
    report = check_gradient_nonvanishing(_w2_field(), BOX2, n_samples=200, seed=0)
    assert report.verdict == "pass"
    assert report.critical_point is None


def test_nonvanishing_quartic_passes_with_margin_note():
    field = ScalarField(1, lambda x: x[0] ** 4, lambda x: np.array([4.0 * x[0] ** 3]))
    report = check_gradient_nonvanishing(field, [(-1.0, 1.0)], n_samples=200, seed=0)
    assert report.verdict == "pass"
    assert "margin" in report.note


def test_nonvanishing_double_well_fails_near_unit_points():
    field = ScalarField(1, lambda x: 0.25 * x[0] ** 4 - 0.5 * x[0] ** 2,
                        lambda x: np.array([x[0] ** 3 - x[0]]))
    report = check_gradient_nonvanishing(field, [(-2.0, 2.0)], n_samples=200, seed=0)
    assert report.verdict == "fail"
    assert report.critical_point is not None
    assert abs(abs(report.critical_point[0]) - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# Equilibrium uniqueness


def test_uniqueness_shaped_pendulum_passes():
    from nishape import build_full_shaping
    plant, _ = build_pendulum()
    closed = make_closed_loop(plant, build_full_shaping())
    report = check_equilibrium_uniqueness(closed, [(-8.0, 8.0)] * 4, n_samples=512, seed=0)
    assert report.verdict == "pass"
    assert report.root is None


def test_uniqueness_open_loop_pendulum_finds_nonzero_well():
    plant, _ = build_pendulum()
    report = check_equilibrium_uniqueness(plant, [(-8.0, 8.0)] * 4, n_samples=512, seed=0)
    assert report.verdict == "fail"
    root = report.root
    assert root is not None
    assert np.linalg.norm(root) > 1.0
    # it really is an equilibrium
    assert np.linalg.norm(plant.f(root, np.zeros(2))) <= 1e-8
    # angular velocities vanish at any equilibrium
    assert np.max(np.abs(root[2:])) <= 1e-8


def test_uniqueness_linear_hurwitz_loop_passes(linear_cases):
    sc = linear_cases["a"]
    closed = make_closed_loop(sc.build_plant(), sc.build_nonlinearity())
    report = check_equilibrium_uniqueness(closed, [(-5.0, 5.0)] * 2, n_samples=256, seed=0)
    assert report.verdict == "pass"


# ---------------------------------------------------------------------------
# Storage decay identity


def _closed_rotation(omega=1.0, r=1.0, gain=-0.5):
    hs = make_rotation_hamiltonian(omega=omega, r=r)
    nl = make_linear_gain_feedback(gain)
    closed = make_closed_loop(hamiltonian_to_nonlinear(hs), nl)
    return hs, nl, closed


def test_decay_identity_small_discrepancy():
    hs, nl, closed = _closed_rotation()
    traj = simulate(closed, [1.0, 0.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-3, t_end=5.0))
    report = hamiltonian_decay_identity(hs, nl, traj)
    assert report.max_discrepancy <= 1e-7


def test_decay_identity_fourth_order_refinement():
    hs, nl, closed = _closed_rotation(omega=3.0, r=3.0)
    discrepancies = []
    for step in (1e-3, 5e-4):
        traj = simulate(closed, [1.0, 0.0], InputSignal.zero(1),
                        IntegratorConfig(step=step, t_end=3.0))
        discrepancies.append(hamiltonian_decay_identity(hs, nl, traj).max_discrepancy)
    assert discrepancies[0] / discrepancies[1] >= 8.0


def test_decay_identity_zero_feedback_reduces_to_plant_rate():
    hs = make_rotation_hamiltonian(omega=1.0, r=1.0)
    nl = StaticNonlinearity(1, lambda y: np.zeros(1), potential=zero_field(1))
    closed = make_closed_loop(hamiltonian_to_nonlinear(hs), nl)
    traj = simulate(closed, [1.0, 0.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-3, t_end=5.0))
    report = hamiltonian_decay_identity(hs, nl, traj)
    assert report.max_discrepancy <= 1e-7


def test_decay_identity_lossless_conserves_storage():
    hs, nl, closed = _closed_rotation(r=0.0)
    W = lambda x: hs.H.value(x) - nl.potential.value(np.array([x[0]]))
    traj = simulate(closed, [1.0, 0.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-3, t_end=5.0))
    report = hamiltonian_decay_identity(hs, nl, traj)
    assert report.max_discrepancy <= 1e-7
    w_values = np.array([W(x) for x in traj.states])
    assert np.max(w_values) - np.min(w_values) <= 1e-8


def test_decay_identity_requires_potential_and_autonomy():
    hs, nl, closed = _closed_rotation()
    bare = StaticNonlinearity(1, lambda y: -0.5 * np.asarray(y, dtype=float))
    traj = simulate(closed, [1.0, 0.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-3, t_end=0.1))
    with pytest.raises(ValueError, match="potential"):
        hamiltonian_decay_identity(hs, bare, traj)
    forced = simulate(closed, [1.0, 0.0], InputSignal.constant([0.5]),
                      IntegratorConfig(step=1e-3, t_end=0.1))
    with pytest.raises(ValueError, match="forced"):
        hamiltonian_decay_identity(hs, nl, forced)


def test_shaped_closed_loops_stay_dissipative_for_all_scenarios():
    # NI preservation: whenever the shaped storage is positive definite on
    # the scenario box, the autonomous closure must dissipate it
    from nishape import get_scenario, scenario_names, make_shaped_storage
    for name in scenario_names():
        sc = get_scenario(name)
        plant = sc.build_plant()
        V = sc.build_storage()
        nl = sc.build_nonlinearity()
        W = make_shaped_storage(V, nl.potential, plant.h, plant.n_states,
                                h_jacobian=plant.h_jacobian)
        assert check_positive_definite(W, sc.box, n_samples=128, seed=0).verdict == "pass"
        closed = make_closed_loop(plant, nl)
        traj = simulate(closed, sc.x0, InputSignal.zero(closed.n_io),
                        IntegratorConfig(step=1e-3, t_end=3.0))
        report = ni_residuals(closed, W, traj)
        assert report.verdict == "pass", name


# ---------------------------------------------------------------------------
# Hidden-motion heuristic


def test_hidden_motion_flags_unobserved_state():
    # y = x1 stays frozen while x2 moves
    sys = NonlinearSystem(2, 1, lambda x, u: np.array([0.0, -x[1]]),
                          lambda x: np.array([x[0]]),
                          h_jacobian=lambda x: np.array([[1.0, 0.0]]))
    traj = simulate(sys, [0.0, 1.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-2, t_end=1.0))
    report = flag_hidden_motion(sys, traj)
    assert report.verdict == "flagged"
    assert report.n_flagged == traj.n_samples


def test_hidden_motion_clean_on_observed_decay():
    sys = NonlinearSystem(1, 1, lambda x, u: -x, lambda x: x.copy(),
                          h_jacobian=lambda x: np.eye(1))
    traj = simulate(sys, [1.0], InputSignal.zero(1),
                    IntegratorConfig(step=1e-2, t_end=1.0))
    assert flag_hidden_motion(sys, traj).verdict == "pass"


# ---------------------------------------------------------------------------
# Report serialization


def test_report_serialization(tmp_path):
    report = check_positive_definite(_w1_field(), BOX2, n_samples=50, seed=0)
    line = report_line("definiteness", report)
    assert line.startswith("definiteness: pass")
    assert "worst=" in line and "witness=" in line

    path = tmp_path / "checks.csv"
    write_reports_csv(path, [("definiteness", report)])
    lines = path.read_text().splitlines()
    assert lines[0] == "check,verdict,worst_value,witness"
    assert lines[1].startswith("definiteness,pass,")
