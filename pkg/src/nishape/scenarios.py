"""Built-in scenarios: the two-pendulum plant with its shaping feedbacks and
the diagonal/coupled linear examples, plus the pipeline that certifies and
simulates a scenario end to end and exports its artifacts.

State ordering for the pendulum is fixed globally as
``(theta1, theta2, omega1, omega2)`` so the output map is the projection onto
the first two coordinates.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from math import cos, log1p, sin, sqrt, tanh
from typing import Callable, Optional

import numpy as np

from .certify import (check_equilibrium_uniqueness, check_positive_definite,
                      estimate_max_epsilon, flag_hidden_motion,
                      halton_box_samples, ni_residuals, osni_residuals,
                      report_line, write_reports_csv)
from .linear import SsniCertificate, check_minimal, check_ssni, dc_gain, to_nonlinear
from .sim import (InputSignal, IntegratorConfig, Trajectory, monitor_decay,
                  simulate, write_trajectory_csv)
from .sysmodel import (LinearSystem, NonlinearSystem, ScalarField,
                       StaticNonlinearity, gradient_check, make_closed_loop,
                       make_shaped_storage)


# ---------------------------------------------------------------------------
# Parameter sets


@dataclass(frozen=True)
class PendulumParams:
    """Two pendulums on a common pivot: masses, rod lengths, hinge springs and
    dampers, a coupling spring/damper pair, and gravity (SI units)."""

    m1: float = 2.0
    m2: float = 1.5
    l1: float = 1.0
    l2: float = 1.0
    k1: float = 2.0
    k2: float = 1.0
    kc: float = 0.2
    d1: float = 0.5
    d2: float = 0.8
    dc: float = 1.5
    g: float = 9.81

    def __post_init__(self):
        for label in ("m1", "m2", "l1", "l2"):
            if getattr(self, label) <= 0.0:
                raise ValueError(f"{label} must be strictly positive")
        for label in ("k1", "k2", "kc", "d1", "d2", "dc", "g"):
            if getattr(self, label) < 0.0:
                raise ValueError(f"{label} must be nonnegative")


@dataclass(frozen=True)
class ShapingParams:
    """Coupling terms (beta quadratic, kappa/delta smoothed-absolute) and the
    log-cosh well-flattening terms (a, b)."""

    beta: float = 1.5
    kappa: float = 5.0
    delta: float = 0.1
    a: float = 5.0
    b: float = 3.0

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError("delta must be strictly positive")
        for label in ("beta", "kappa", "a", "b"):
            if getattr(self, label) < 0.0:
                raise ValueError(f"{label} must be nonnegative")


def _log_cosh(z: float) -> float:
    # overflow-safe log(cosh(z))
    az = abs(z)
    return az - math.log(2.0) + log1p(math.exp(-2.0 * az))


# ---------------------------------------------------------------------------
# Pendulum plant and shaping feedbacks


def build_pendulum(params: PendulumParams = PendulumParams()):
    """The two-pendulum plant and its energy storage.

    Returns ``(system, V)`` with state (theta1, theta2, omega1, omega2),
    torque inputs (u1, u2), and outputs (theta1, theta2).  V is the coupling
    spring energy plus each pendulum's spring, kinetic and gravity terms,
    with an analytic gradient.
    """
    m1l1 = params.m1 * params.l1 ** 2
    m2l2 = params.m2 * params.l2 ** 2
    m1gl1 = params.m1 * params.g * params.l1
    m2gl2 = params.m2 * params.g * params.l2
    k1, k2, kc = params.k1, params.k2, params.kc
    d1, d2, dc = params.d1, params.d2, params.dc

    def f(x, u):
        th1, th2, w1, w2 = x
        e = th1 - th2
        de = w1 - w2
        return np.array([
            w1,
            w2,
            (-m1gl1 * sin(th1) - k1 * th1 - d1 * w1 - kc * e - dc * de + u[0]) / m1l1,
            (-m2gl2 * sin(th2) - k2 * th2 - d2 * w2 + kc * e + dc * de + u[1]) / m2l2,
        ])

    def h(x):
        return np.array([x[0], x[1]])

    h_jac = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    h_jac.setflags(write=False)

    def v_value(x):
        th1, th2, w1, w2 = x
        return (0.5 * kc * (th1 - th2) ** 2
                + 0.5 * k1 * th1 ** 2 + 0.5 * m1l1 * w1 ** 2 + m1gl1 * (1.0 - cos(th1))
                + 0.5 * k2 * th2 ** 2 + 0.5 * m2l2 * w2 ** 2 + m2gl2 * (1.0 - cos(th2)))

    def v_gradient(x):
        th1, th2, w1, w2 = x
        e = th1 - th2
        return np.array([
            kc * e + k1 * th1 + m1gl1 * sin(th1),
            -kc * e + k2 * th2 + m2gl2 * sin(th2),
            m1l1 * w1,
            m2l2 * w2,
        ])

    system = NonlinearSystem(4, 2, f, h, h_jacobian=lambda x: h_jac,
                             name="two-pendulum plant")
    V = ScalarField(4, v_value, v_gradient, name="pendulum storage")
    return system, V


def build_sync_shaping(params: ShapingParams = ShapingParams()) -> StaticNonlinearity:
    """Synchronizing feedback: gradient of a coupling potential in the
    relative displacement ``e = y1 - y2`` (quadratic plus a smoothed
    absolute-value term that stays steep near e = 0)."""
    beta, kappa, delta = params.beta, params.kappa, params.delta

    def potential_value(y):
        e = y[0] - y[1]
        return -beta * e * e - kappa * (sqrt(e * e + delta * delta) - delta)

    def potential_gradient(y):
        e = y[0] - y[1]
        g = -2.0 * beta * e - kappa * e / sqrt(e * e + delta * delta)
        return np.array([g, -g])

    F = ScalarField(2, potential_value, potential_gradient, name="coupling potential")
    return StaticNonlinearity(2, potential_gradient, potential=F, name="sync coupling")


def build_full_shaping(params: ShapingParams = ShapingParams()) -> StaticNonlinearity:
    """Synchronizing feedback plus per-output log-cosh terms that flatten the
    distant gravity wells, leaving a single minimum at the origin."""
    beta, kappa, delta, a, b = params.beta, params.kappa, params.delta, params.a, params.b

    def potential_value(y):
        e = y[0] - y[1]
        return (-beta * e * e - kappa * (sqrt(e * e + delta * delta) - delta)
                - a * _log_cosh(b * y[0]) - a * _log_cosh(b * y[1]))

    def potential_gradient(y):
        e = y[0] - y[1]
        g = -2.0 * beta * e - kappa * e / sqrt(e * e + delta * delta)
        return np.array([g - a * b * tanh(b * y[0]),
                         -g - a * b * tanh(b * y[1])])

    F = ScalarField(2, potential_value, potential_gradient, name="well-flattening potential")
    return StaticNonlinearity(2, potential_gradient, potential=F, name="sync + well flattening")


# ---------------------------------------------------------------------------
# Scenario registry


@dataclass(frozen=True)
class Scenario:
    name: str
    build_plant: Callable[[], NonlinearSystem]
    build_storage: Callable[[], ScalarField]
    build_nonlinearity: Callable[[], StaticNonlinearity]
    x0: tuple
    signal: InputSignal
    config: IntegratorConfig
    box: tuple                      # per-axis (lo, hi) bounds for box checks
    assumes_output_observability: bool = False
    certificate: Optional[SsniCertificate] = None
    compare_unshaped: bool = False  # export an unshaped run and the sync statistic
    convergence_tol: Optional[float] = None
    check_uniqueness: bool = False
    pendulum: Optional[PendulumParams] = None
    shaping: Optional[ShapingParams] = None
    linear_case: Optional[str] = None
    description: str = ""


def _linear_example_system() -> LinearSystem:
    return LinearSystem(np.diag([-1.0, -2.0]), np.diag([1.0, 2.0]), np.eye(2))


def build_linear_example(case: str) -> Scenario:
    """The diagonal (case "a") and coupled (case "b") linear examples.

    Both share A = diag(-1, -2), B = diag(1, 2), C = I with storage
    ``V = |x|^2 / 2`` (Y = I) and start from (1, -2).
    """
    if case not in ("a", "b"):
        raise ValueError(f"unknown linear example case {case!r} (expected 'a' or 'b')")
    ls = _linear_example_system()
    cert = SsniCertificate(ls, np.eye(2))

    def storage():
        return ScalarField(2, lambda x: 0.5 * float(x @ x),
                           lambda x: np.array(x, dtype=float), name="V = |x|^2/2")

    if case == "a":
        def nonlinearity():
            def potential_value(y):
                return 0.1 * y[0] ** 2 - 0.25 * y[1] ** 2

            def potential_gradient(y):
                return np.array([0.2 * y[0], -0.5 * y[1]])

            F = ScalarField(2, potential_value, potential_gradient, name="sign-indefinite potential")
            return StaticNonlinearity(2, potential_gradient, potential=F,
                                      channels=(lambda s: 0.2 * s, lambda s: -0.5 * s),
                                      name="diagonal gains")

        t_end, description = 3.0, "diagonal feedback with sign-indefinite potential"
    else:
        def nonlinearity():
            def potential_value(y):
                return cos(y[0] - y[1]) - 1.0

            def potential_gradient(y):
                return np.array([sin(y[1] - y[0]), sin(y[0] - y[1])])

            F = ScalarField(2, potential_value, potential_gradient, name="coupled potential")
            return StaticNonlinearity(2, potential_gradient, potential=F, name="coupled sine feedback")

        t_end, description = 10.0, "cross-coupled feedback"

    return Scenario(
        name=f"linear-{case}",
        build_plant=lambda: to_nonlinear(ls),
        build_storage=storage,
        build_nonlinearity=nonlinearity,
        x0=(1.0, -2.0),
        signal=InputSignal.zero(2),
        config=IntegratorConfig(step=1e-3, t_end=t_end),
        box=((-5.0, 5.0), (-5.0, 5.0)),
        certificate=cert,
        linear_case=case,
        description=description,
    )


def _pendulum_scenario(name: str, build_nl, signal: InputSignal, t_end: float,
                       compare_unshaped: bool, convergence_tol, check_uniqueness: bool,
                       description: str) -> Scenario:
    pendulum = PendulumParams()
    shaping = ShapingParams()
    return Scenario(
        name=name,
        build_plant=lambda: build_pendulum(pendulum)[0],
        build_storage=lambda: build_pendulum(pendulum)[1],
        build_nonlinearity=lambda: build_nl(shaping),
        x0=(6.0, 4.5, 0.0, 0.0),
        signal=signal,
        config=IntegratorConfig(step=1e-3, t_end=t_end),
        box=((-8.0, 8.0),) * 4,
        assumes_output_observability=True,
        compare_unshaped=compare_unshaped,
        convergence_tol=convergence_tol,
        check_uniqueness=check_uniqueness,
        pendulum=pendulum,
        shaping=shaping,
        description=description,
    )


def _build_registry():
    scenarios = [
        build_linear_example("a"),
        build_linear_example("b"),
        _pendulum_scenario("pendulum-sync", build_sync_shaping,
                           InputSignal.square_wave(2, channel=0, amplitude=2.0, period=3.0),
                           t_end=30.0, compare_unshaped=True, convergence_tol=None,
                           check_uniqueness=False,
                           description="enhanced coupling under a square-wave torque"),
        _pendulum_scenario("pendulum-stabilize", build_full_shaping,
                           InputSignal.zero(2),
                           t_end=50.0, compare_unshaped=False, convergence_tol=1e-2,
                           check_uniqueness=True,
                           description="well flattening for global convergence to the origin"),
    ]
    return {sc.name: sc for sc in scenarios}


REGISTRY = _build_registry()


def scenario_names():
    return sorted(REGISTRY)


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; available: {', '.join(scenario_names())}")


def scenario_config(name: str) -> dict:
    """JSON-ready dump of a scenario's parameters and defaults."""
    sc = get_scenario(name)
    payload = {
        "name": sc.name,
        "description": sc.description,
        "x0": list(sc.x0),
        "signal": dataclasses.asdict(sc.signal) | {"vector": list(sc.signal.vector)},
        "integrator": dataclasses.asdict(sc.config),
        "box": [list(b) for b in sc.box],
        "assumes_output_observability": sc.assumes_output_observability,
    }
    if sc.pendulum is not None:
        payload["pendulum"] = dataclasses.asdict(sc.pendulum)
    if sc.shaping is not None:
        payload["shaping"] = dataclasses.asdict(sc.shaping)
    if sc.linear_case is not None:
        payload["linear_case"] = sc.linear_case
        payload["A"] = sc.certificate.sys.A.tolist()
        payload["B"] = sc.certificate.sys.B.tolist()
        payload["C"] = sc.certificate.sys.C.tolist()
        payload["Y"] = sc.certificate.Y.tolist()
    return payload


# ---------------------------------------------------------------------------
# Potential-surface export and grid minima scan


@dataclass(frozen=True, eq=False)
class SurfaceReport:
    axis: np.ndarray
    values: np.ndarray
    minima: tuple          # (theta1, theta2) grid locations of strict minima
    n_plateau: int
    degenerate: bool
    path: Optional[str]

    @property
    def n_minima(self):
        return len(self.minima)

    @property
    def verdict(self):
        return "degenerate" if self.degenerate else "ok"

    @property
    def worst_value(self):
        return float(self.n_minima)

    @property
    def witness(self):
        return self.minima[0] if self.minima else ()


def export_potential_surface(field: ScalarField, path=None, half_range: float = 8.0,
                             points: int = 161) -> SurfaceReport:
    """Evaluate the field's displacement restriction on a square grid and
    scan for strict local minima.

    A 4-dimensional field is restricted to ``(theta1, theta2, 0, 0)``; a
    2-dimensional field is evaluated directly.  The scan uses a strict
    8-neighbor comparison on interior cells; plateau cells (tied with their
    neighborhood minimum) are flagged but never counted, and an all-plateau
    interior marks the grid as degenerate.  When ``path`` is given the grid
    is written as a (theta1, theta2, value) CSV.
    """
    if points < 3:
        raise ValueError(f"grid needs at least 3 points per axis, got {points}")
    if half_range <= 0.0:
        raise ValueError(f"half_range must be positive, got {half_range}")
    if field.dim == 2:
        def restricted(t1, t2):
            return field.value((t1, t2))
    elif field.dim == 4:
        def restricted(t1, t2):
            return field.value((t1, t2, 0.0, 0.0))
    else:
        raise ValueError(f"field dimension {field.dim} is not supported (need 2 or 4)")

    axis = np.linspace(-half_range, half_range, points)
    values = np.empty((points, points))
    for i, t1 in enumerate(axis):
        for j, t2 in enumerate(axis):
            values[i, j] = restricted(t1, t2)

    center = values[1:-1, 1:-1]
    neighbors = np.stack([
        values[1 + di:points - 1 + di, 1 + dj:points - 1 + dj]
        for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)
    ])
    neighborhood_min = neighbors.min(axis=0)
    strict = center < neighborhood_min
    plateau = center == neighborhood_min
    minima = tuple((float(axis[i + 1]), float(axis[j + 1]))
                   for i, j in zip(*np.nonzero(strict)))
    n_plateau = int(plateau.sum())
    degenerate = n_plateau == (points - 2) ** 2

    written = None
    if path is not None:
        with open(path, "w") as fh:
            fh.write("theta1,theta2,value\n")
            for i, t1 in enumerate(axis):
                for j, t2 in enumerate(axis):
                    fh.write(f"{t1:.17g},{t2:.17g},{values[i, j]:.17g}\n")
        written = str(path)
    return SurfaceReport(axis, values, minima, n_plateau, degenerate, written)


# ---------------------------------------------------------------------------
# Scenario-specific report types


@dataclass(frozen=True, eq=False)
class SyncReport:
    mean_original: float
    mean_shaped: float
    ratio: float
    window: tuple
    verdict: str

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.ratio

    @property
    def witness(self):
        return (self.mean_original, self.mean_shaped)


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    final_norm: float
    final_state: np.ndarray
    tolerance: float
    verdict: str

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.final_norm

    @property
    def witness(self):
        return tuple(self.final_state)


def synchronization_statistic(traj: Trajectory, t_start: float, t_end: float) -> float:
    """Mean ``|y1 - y2|`` over the window [t_start, t_end]."""
    mask = (traj.times >= t_start - 1e-12) & (traj.times <= t_end + 1e-12)
    if not np.any(mask):
        raise ValueError("window does not intersect the trajectory")
    return float(np.mean(np.abs(traj.outputs[mask, 0] - traj.outputs[mask, 1])))


SYNC_WINDOW = (20.0, 30.0)
SYNC_RATIO_LIMIT = 0.25


# ---------------------------------------------------------------------------
# End-to-end pipeline


@dataclass(eq=False)
class ScenarioResult:
    name: str
    checks: list            # (name, report) pairs
    artifacts: dict          # label -> path
    extras: dict             # free-form numeric results (epsilon estimate, ...)

    @property
    def passed(self) -> bool:
        return all(getattr(rep, "verdict", "pass") in ("pass", "skipped", "info", "flagged")
                   for _, rep in self.checks)

    def lines(self):
        out = [report_line(name, rep) for name, rep in self.checks]
        for key, value in self.extras.items():
            out.append(f"{key} = {format(float(value), '.17g')}")
        return out


def run_scenario(name: str, step: Optional[float] = None, t_end: Optional[float] = None,
                 x0=None, seed: int = 0, out_dir=None) -> ScenarioResult:
    """Build, certify, simulate and export a named scenario.

    The pipeline runs gradient-consistency probes, the shaped-storage
    positive-definiteness check, plant NI/OSNI residuals along the forced
    run, an unforced closed-loop run with storage-decay monitoring, plus the
    scenario's own comparisons (synchronization statistic, convergence
    endpoint, equilibrium uniqueness).  Artifacts (trajectory CSVs, check
    reports, the scenario configuration) land in ``out_dir`` when given.
    """
    sc = get_scenario(name)
    cfg = IntegratorConfig(step=step if step is not None else sc.config.step,
                           t_end=t_end if t_end is not None else sc.config.t_end,
                           method=sc.config.method)
    start = np.array(sc.x0 if x0 is None else x0, dtype=float)

    plant = sc.build_plant()
    V = sc.build_storage()
    nl = sc.build_nonlinearity()
    box = np.asarray(sc.box, dtype=float)
    out_box = box[:plant.n_io]
    checks = []
    extras = {}

    probes_y = halton_box_samples(out_box, 100, seed)
    checks.append(("gradient-consistency F", gradient_check(nl.potential, probes_y)))
    probes_x = halton_box_samples(box, 100, seed + 1)
    checks.append(("gradient-consistency V", gradient_check(V, probes_x)))

    W = make_shaped_storage(V, nl.potential, plant.h, plant.n_states,
                            h_jacobian=plant.h_jacobian, name="W")
    checks.append(("shaped-storage positive-definite",
                   check_positive_definite(W, box, n_samples=256, seed=seed)))

    if sc.certificate is not None:
        checks.append(("ssni-certificate", check_ssni(sc.certificate)))
        checks.append(("minimal-realization", check_minimal(sc.certificate.sys)))
        gain = dc_gain(sc.certificate.sys, sc.certificate)  # raises on mismatch
        extras["dc_gain_max_abs"] = float(np.max(np.abs(gain)))

    traj_plant = simulate(plant, start, sc.signal, cfg, monitor=V)
    checks.append(("plant NI residuals", ni_residuals(plant, V, traj_plant)))
    eps_hat = estimate_max_epsilon(plant, V, [traj_plant])
    extras["epsilon_estimate"] = eps_hat
    if eps_hat > 0.0:
        checks.append(("plant OSNI residuals",
                       osni_residuals(plant, V, traj_plant, 0.5 * eps_hat)))

    closed = make_closed_loop(plant, nl)
    traj_free = simulate(closed, start, InputSignal.zero(plant.n_io), cfg, monitor=W)
    checks.append(("closed-loop storage decay", monitor_decay(traj_free)))
    checks.append(("closed-loop NI residuals (shaped storage)",
                   ni_residuals(closed, W, traj_free)))
    if sc.assumes_output_observability:
        checks.append(("hidden-motion heuristic", flag_hidden_motion(closed, traj_free)))

    traj_forced = None
    traj_original = None
    if not sc.signal.is_zero:
        traj_forced = simulate(closed, start, sc.signal, cfg, monitor=W)
        if sc.compare_unshaped:
            traj_original = simulate(plant, start, sc.signal, cfg, monitor=V)
            window = (min(SYNC_WINDOW[0], 2.0 * cfg.t_end / 3.0), cfg.t_end)
            mean_orig = synchronization_statistic(traj_original, *window)
            mean_shaped = synchronization_statistic(traj_forced, *window)
            ratio = mean_shaped / mean_orig if mean_orig > 0.0 else math.inf
            checks.append(("synchronization statistic",
                           SyncReport(mean_orig, mean_shaped, ratio, window,
                                      "pass" if ratio < SYNC_RATIO_LIMIT else "fail")))

    if sc.convergence_tol is not None:
        final = traj_free.states[-1]
        final_norm = float(np.max(np.abs(final)))
        checks.append(("convergence endpoint",
                       ConvergenceReport(final_norm, final.copy(), sc.convergence_tol,
                                         "pass" if final_norm < sc.convergence_tol else "fail")))

    if sc.check_uniqueness:
        checks.append(("equilibrium uniqueness",
                       check_equilibrium_uniqueness(closed, box, n_samples=512, seed=seed)))

    artifacts = {}
    if out_dir is not None:
        run_dir = os.path.join(str(out_dir), sc.name)
        os.makedirs(run_dir, exist_ok=True)

        def _save(label, filename, writer):
            path = os.path.join(run_dir, filename)
            writer(path)
            artifacts[label] = path

        principal = traj_forced if traj_forced is not None else traj_free
        _save("trajectory", "trajectory.csv", lambda p: write_trajectory_csv(principal, p))
        if traj_forced is not None:
            _save("trajectory_unforced", "trajectory_unforced.csv",
                  lambda p: write_trajectory_csv(traj_free, p))
        if traj_original is not None:
            _save("trajectory_original", "trajectory_original.csv",
                  lambda p: write_trajectory_csv(traj_original, p))
        _save("checks_csv", "checks.csv", lambda p: write_reports_csv(p, checks))

        def _write_text(path):
            result = ScenarioResult(sc.name, checks, {}, extras)
            with open(path, "w") as fh:
                fh.write("\n".join(result.lines()) + "\n")

        _save("checks_txt", "checks.txt", _write_text)

        def _write_config(path):
            with open(path, "w") as fh:
                json.dump(scenario_config(sc.name), fh, indent=2)

        _save("scenario_json", "scenario.json", _write_config)

    return ScenarioResult(sc.name, checks, artifacts, extras)
