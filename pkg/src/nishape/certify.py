"""Numerical certification of dissipation inequalities, definiteness, and
equilibrium structure.

These checks are sampling- and trajectory-based.  Positive definiteness and
gradient nonvanishing are certified on the given box only (the reports say
so); dissipation residuals are evaluated along supplied trajectories with
rates computed analytically through the vector field, never by differencing
the stored samples, so modeling error is not confused with integrator error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .linear import sym_eigenvalues
from .sim import Trajectory
from .sysmodel import (NonlinearSystem, ScalarField, StaticNonlinearity,
                       HamiltonianSystem, TAU_PD, TAU_ZERO, central_jacobian)

R_EXCL_SCALE = 1e-3   # exclusion-ball radius as a fraction of the box radius
N_POLISH = 10         # worst samples polished by damped Newton
POLISH_ITERS = 50


# ---------------------------------------------------------------------------
# Low-discrepancy sampling

_HALTON_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19)


def _radical_inverse(index: int, base: int) -> float:
    inv = 0.0
    scale = 1.0 / base
    while index > 0:
        inv += scale * (index % base)
        index //= base
        scale /= base
    return inv


def _as_box(box, dim: Optional[int] = None) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError(f"box must be a (dim, 2) array of bounds, got shape {box.shape}")
    if np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("degenerate box: every lower bound must be below its upper bound")
    if dim is not None and box.shape[0] != dim:
        raise ValueError(f"box has {box.shape[0]} axes, expected {dim}")
    return box


def halton_box_samples(box, n_samples: int, seed: int) -> np.ndarray:
    """Halton points in ``box`` with a seed-derived rotation.

    Sample i is a pure function of (i, seed), so sampling is reproducible
    for a given (seed, n_samples) regardless of threading, and an n-point
    set is a prefix of any longer set with the same seed.
    """
    box = _as_box(box)
    dim = box.shape[0]
    if dim > len(_HALTON_PRIMES):
        raise ValueError(f"sampling supports at most {len(_HALTON_PRIMES)} dimensions")
    shift = np.random.default_rng(int(seed)).random(dim)
    width = box[:, 1] - box[:, 0]
    points = np.empty((int(n_samples), dim))
    for i in range(int(n_samples)):
        u = np.array([_radical_inverse(i + 1, b) for b in _HALTON_PRIMES[:dim]])
        points[i] = box[:, 0] + np.mod(u + shift, 1.0) * width
    return points


def _origin_shell(box: np.ndarray, radius_scale: float = 1e-3) -> np.ndarray:
    """Deterministic probe points on a small shell around the origin."""
    dim = box.shape[0]
    half = np.minimum(np.abs(box[:, 0]), np.abs(box[:, 1]))
    r = radius_scale * float(np.min(half))
    points = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = r
        points.append(e.copy())
        points.append(-e)
    for corner in range(2 ** dim):
        sign = np.array([1.0 if corner & (1 << i) else -1.0 for i in range(dim)])
        points.append(r / math.sqrt(dim) * sign)
    return np.array(points)


# ---------------------------------------------------------------------------
# Damped Newton polish shared by the root-hunting checks


def _newton_polish(func, jac, x0, tol, max_iter=POLISH_ITERS):
    """Damped Newton toward a root of ``func``; returns (point, converged)."""
    x = np.array(x0, dtype=float)
    fx = np.asarray(func(x), dtype=float)
    for _ in range(max_iter):
        if float(np.linalg.norm(fx)) <= tol:
            return x, True
        J = jac(x)
        try:
            d = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(J, -fx, rcond=None)[0]
        if not np.isfinite(d).all():
            return x, False
        base = float(fx @ fx)
        alpha = 1.0
        while alpha >= 1e-6:
            x_new = x + alpha * d
            f_new = np.asarray(func(x_new), dtype=float)
            if np.isfinite(f_new).all() and float(f_new @ f_new) < base:
                x, fx = x_new, f_new
                break
            alpha *= 0.5
        else:
            break
    return x, float(np.linalg.norm(fx)) <= tol


# ---------------------------------------------------------------------------
# Dissipation residuals


@dataclass(frozen=True, eq=False)
class DissipationReport:
    max_violation: float          # largest residual found (positive = violation)
    worst_time: float
    worst_state: np.ndarray
    n_samples: int
    n_violations: int
    epsilon_used: float
    tolerance: float
    verdict: str
    residuals: np.ndarray

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.max_violation

    @property
    def witness(self):
        return (self.worst_time, *self.worst_state)


def osni_residuals(sys: NonlinearSystem, V: ScalarField, traj: Trajectory,
                   epsilon: float) -> DissipationReport:
    """Residuals ``r = Vdot - u . ydot + epsilon |ydot|^2`` along a trajectory.

    Rates are computed through the vector field at every knot:
    ``Vdot = grad V(x) . f(x, u)`` and ``ydot = Dh(x) f(x, u)``.  The pass
    tolerance scales with the largest sampled supply term.
    """
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if V.dim != sys.n_states:
        raise ValueError(f"storage dimension {V.dim} != state dimension {sys.n_states}")
    if traj.states.shape[1] != sys.n_states or traj.inputs.shape[1] != sys.n_io:
        raise ValueError("trajectory dimensions do not match the system")
    n = traj.n_samples
    residuals = np.empty(n)
    max_supply = 0.0
    for k in range(n):
        x = traj.states[k]
        u = traj.inputs[k]
        fx = np.asarray(sys.f(x, u), dtype=float)
        vdot = float(V.gradient(x) @ fx)
        ydot = sys.output_jacobian(x) @ fx
        supply = float(u @ ydot)
        residuals[k] = vdot - supply + epsilon * float(ydot @ ydot)
        if abs(supply) > max_supply:
            max_supply = abs(supply)
    tolerance = 1e-6 * (1.0 + max_supply)
    worst = int(np.argmax(residuals))
    n_violations = int(np.sum(residuals > tolerance))
    verdict = "pass" if residuals[worst] <= tolerance else "fail"
    return DissipationReport(float(residuals[worst]), float(traj.times[worst]),
                             traj.states[worst].copy(), n, n_violations,
                             float(epsilon), tolerance, verdict, residuals)


def ni_residuals(sys: NonlinearSystem, V: ScalarField, traj: Trajectory) -> DissipationReport:
    """Residuals of ``Vdot <= u . ydot`` (the epsilon = 0 case, bit for bit)."""
    return osni_residuals(sys, V, traj, 0.0)


def estimate_max_epsilon(sys: NonlinearSystem, V: ScalarField,
                         trajs: Sequence[Trajectory]) -> float:
    """Empirical infimum of ``(u . ydot - Vdot) / |ydot|^2`` over all samples
    with ``|ydot|`` above TAU_ZERO, floored at zero."""
    trajs = list(trajs)
    if not trajs:
        raise ValueError("at least one trajectory is required")
    best = math.inf
    for traj in trajs:
        for k in range(traj.n_samples):
            x = traj.states[k]
            u = traj.inputs[k]
            fx = np.asarray(sys.f(x, u), dtype=float)
            ydot = sys.output_jacobian(x) @ fx
            ydot_sq = float(ydot @ ydot)
            if ydot_sq <= TAU_ZERO * TAU_ZERO:
                continue
            vdot = float(V.gradient(x) @ fx)
            ratio = (float(u @ ydot) - vdot) / ydot_sq
            if ratio < best:
                best = ratio
    if math.isinf(best):
        return 0.0
    return max(0.0, best)


# ---------------------------------------------------------------------------
# Positive definiteness on a box


@dataclass(frozen=True, eq=False)
class DefinitenessReport:
    min_sampled_value: float
    min_hessian_eig_origin: float
    argmin: np.ndarray
    n_samples: int
    verdict: str
    caveat: str

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.min_sampled_value

    @property
    def witness(self):
        return tuple(self.argmin)


def _origin_hessian(field: ScalarField) -> np.ndarray:
    """Finite-difference Hessian at the origin.

    With an analytic gradient: central differences of the gradient at step
    1e-6.  Without: second differences of the value at the wider step 1e-4
    (truncation/round-off balance for second differences).
    """
    n = field.dim
    H = np.empty((n, n))
    if field.has_analytic_gradient:
        h = 1e-6
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            H[:, j] = (field.gradient(e) - field.gradient(-e)) / (2.0 * h)
    else:
        h = 1e-4
        for i in range(n):
            for j in range(i, n):
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i] = h
                ej[j] = h
                H[i, j] = H[j, i] = (field.value(ei + ej) - field.value(ei - ej)
                                     - field.value(ej - ei) + field.value(-ei - ej)) / (4.0 * h * h)
    return 0.5 * (H + H.T)


def check_positive_definite(field: ScalarField, box, n_samples: int = 256,
                            seed: int = 0) -> DefinitenessReport:
    """Sampled positive definiteness on a box around the origin.

    Quasi-random nonzero points plus a deterministic shell near the origin
    must all give strictly positive values, and the finite-difference Hessian
    at the origin must have its smallest eigenvalue above TAU_PD.  This is a
    box-local certificate only.
    """
    box = _as_box(box, field.dim)
    if not np.all((box[:, 0] < 0.0) & (box[:, 1] > 0.0)):
        raise ValueError("box must contain the origin strictly")
    points = np.vstack([halton_box_samples(box, n_samples, seed), _origin_shell(box)])
    points = points[np.linalg.norm(points, axis=1) > 0.0]
    values = np.array([field.value(x) for x in points])
    i_min = int(np.argmin(values))
    eigs = sym_eigenvalues(_origin_hessian(field))
    ok = values[i_min] > 0.0 and eigs[0] > TAU_PD
    caveat = ("box-local certificate: values sampled on the given box and the "
              "Hessian checked at the origin; no global or radial-unboundedness claim")
    return DefinitenessReport(float(values[i_min]), float(eigs[0]), points[i_min].copy(),
                              points.shape[0], "pass" if ok else "fail", caveat)


# ---------------------------------------------------------------------------
# Gradient nonvanishing away from the origin


@dataclass(frozen=True, eq=False)
class NonvanishingReport:
    min_grad_norm: float
    argmin: np.ndarray
    floor: float
    critical_point: Optional[np.ndarray]
    n_samples: int
    verdict: str
    note: str = ""

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.min_grad_norm

    @property
    def witness(self):
        return tuple(self.argmin if self.critical_point is None else self.critical_point)


def check_gradient_nonvanishing(field: ScalarField, box, n_samples: int = 256,
                                seed: int = 0) -> NonvanishingReport:
    """Sampled minimum of ``|grad W|`` over nonzero points of the box.

    The scale-aware pass floor is TAU_PD times the smallest sampled ``|x|``.
    Sampling alone cannot see an interior critical point, so a damped-Newton
    polish on the gradient runs from the worst samples; a polished critical
    point away from the origin (and inside the box) fails the check with
    that witness.
    """
    box = _as_box(box, field.dim)
    points = halton_box_samples(box, n_samples, seed)
    keep = np.linalg.norm(points, axis=1) > 0.0
    points = points[keep]
    grads = np.array([field.gradient(x) for x in points])
    grad_norms = np.linalg.norm(grads, axis=1)
    i_min = int(np.argmin(grad_norms))
    floor = TAU_PD * float(np.min(np.linalg.norm(points, axis=1)))
    r_excl = R_EXCL_SCALE * float(np.max(np.abs(box)))
    slack = 0.05 * (box[:, 1] - box[:, 0])
    tol_root = 1e-10 * (1.0 + float(np.max(grad_norms)))

    critical = None
    order = np.argsort(grad_norms)
    for idx in order[:N_POLISH]:
        candidate, ok = _newton_polish(
            field.gradient,
            lambda x: central_jacobian(field.gradient, x, field.dim),
            points[idx], tol_root)
        if (ok and float(np.linalg.norm(candidate)) > r_excl
                and np.all(candidate >= box[:, 0] - slack)
                and np.all(candidate <= box[:, 1] + slack)):
            critical = candidate
            break

    note = ""
    if grad_norms[i_min] < 1e-3 * float(np.median(grad_norms)):
        note = "small margin: sampled gradient decays fast toward the origin"
    verdict = "fail" if (critical is not None or grad_norms[i_min] <= floor) else "pass"
    return NonvanishingReport(float(grad_norms[i_min]), points[i_min].copy(), floor,
                              critical, points.shape[0], verdict, note)


# ---------------------------------------------------------------------------
# Closed-loop equilibrium uniqueness


@dataclass(frozen=True, eq=False)
class UniquenessReport:
    min_residual_norm: float
    argmin: np.ndarray
    root: Optional[np.ndarray]
    n_samples: int
    r_excl: float
    verdict: str

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.min_residual_norm

    @property
    def witness(self):
        return tuple(self.argmin if self.root is None else self.root)


def check_equilibrium_uniqueness(sys_cl: NonlinearSystem, box, n_samples: int = 512,
                                 seed: int = 0) -> UniquenessReport:
    """Hunt for nonzero equilibria of the autonomous closed loop.

    Sampled minimum of ``|f(x, 0)|`` outside an exclusion ball at the origin,
    followed by a damped-Newton root polish (finite-difference Jacobian) from
    the worst samples.  Any converged nonzero root is a counterexample.
    """
    box = _as_box(box, sys_cl.n_states)
    r_excl = R_EXCL_SCALE * float(np.max(np.abs(box)))
    points = halton_box_samples(box, n_samples, seed)
    points = points[np.linalg.norm(points, axis=1) > r_excl]
    u0 = np.zeros(sys_cl.n_io)

    def f0(x):
        return np.asarray(sys_cl.f(x, u0), dtype=float)

    norms = np.array([float(np.linalg.norm(f0(x))) for x in points])
    i_min = int(np.argmin(norms))
    scale = 1.0 + float(np.max(norms))
    tol_root = 1e-9 * scale

    root = None
    for idx in np.argsort(norms)[:N_POLISH]:
        candidate, ok = _newton_polish(
            f0, lambda x: central_jacobian(f0, x, sys_cl.n_states), points[idx], tol_root)
        if ok and float(np.linalg.norm(candidate)) > r_excl:
            root = candidate
            break

    verdict = "pass" if (root is None and norms[i_min] > TAU_ZERO * scale) else "fail"
    return UniquenessReport(float(norms[i_min]), points[i_min].copy(), root,
                            points.shape[0], r_excl, verdict)


# ---------------------------------------------------------------------------
# Hamiltonian decay identity


@dataclass(frozen=True, eq=False)
class DecayIdentityReport:
    max_discrepancy: float
    time_of_max: float
    n_samples: int
    step: float

    @property
    def verdict(self):
        return "info"

    @property
    def worst_value(self):
        return self.max_discrepancy

    @property
    def witness(self):
        return (self.time_of_max,)


def hamiltonian_decay_identity(hs: HamiltonianSystem, nl: StaticNonlinearity,
                               traj: Trajectory) -> DecayIdentityReport:
    """Compare the storage rate along the flow with its dissipation form.

    For ``W = H - F(C(x))`` along the autonomous closure, the rate of W must
    equal ``-grad W(x)^T R(x) grad W(x)``.  The left side is taken from a
    fourth-order five-point stencil on the recorded samples (interior knots),
    the right side analytically at the same knots, so the discrepancy shrinks
    at the integrator's own fourth-order rate under step refinement.
    """
    if nl.potential is None:
        raise ValueError("nonlinearity carries no potential; the identity needs phi = grad F")
    if traj.n_samples and np.max(np.abs(traj.inputs)) > TAU_ZERO:
        raise ValueError("identity holds for the autonomous closure; trajectory is forced")
    n_knots = traj.n_samples
    if n_knots < 5:
        raise ValueError("need at least five samples for the interior stencil")
    F = nl.potential
    H = hs.H
    w = np.empty(n_knots)
    rhs = np.empty(n_knots)
    for k in range(n_knots):
        x = traj.states[k]
        y = np.asarray(hs.C(x), dtype=float)
        w[k] = H.value(x) - F.value(y)
        g = H.gradient(x) - hs.grad_C(x).T @ F.gradient(y)
        rhs[k] = -float(g @ (np.asarray(hs.R(x), dtype=float) @ g))
    step = traj.step
    lhs = (-w[4:] + 8.0 * w[3:-1] - 8.0 * w[1:-3] + w[:-4]) / (12.0 * step)
    discrepancy = np.abs(lhs - rhs[2:-2])
    i_max = int(np.argmax(discrepancy))
    return DecayIdentityReport(float(discrepancy[i_max]), float(traj.times[i_max + 2]),
                               int(discrepancy.size), step)


# ---------------------------------------------------------------------------
# Output-observability heuristic


@dataclass(frozen=True, eq=False)
class HiddenMotionReport:
    intervals: tuple
    n_flagged: int
    verdict: str  # "pass" | "flagged"

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return float(self.n_flagged)

    @property
    def witness(self):
        return self.intervals[0] if self.intervals else ()


def flag_hidden_motion(sys: NonlinearSystem, traj: Trajectory) -> HiddenMotionReport:
    """Flag intervals where the output freezes while the state still moves.

    A knot is suspicious when ``|ydot| < TAU_ZERO`` but
    ``|xdot| > 100 TAU_ZERO``; consecutive suspicious knots are merged into
    intervals.  This is a heuristic stand-in for an observability-type
    hypothesis that is not algorithmically checkable in general.
    """
    flagged = np.zeros(traj.n_samples, dtype=bool)
    for k in range(traj.n_samples):
        x = traj.states[k]
        fx = np.asarray(sys.f(x, traj.inputs[k]), dtype=float)
        ydot = sys.output_jacobian(x) @ fx
        if np.linalg.norm(ydot) < TAU_ZERO and np.linalg.norm(fx) > 100.0 * TAU_ZERO:
            flagged[k] = True
    intervals = []
    start = None
    for k, is_flagged in enumerate(flagged):
        if is_flagged and start is None:
            start = k
        elif not is_flagged and start is not None:
            intervals.append((float(traj.times[start]), float(traj.times[k - 1])))
            start = None
    if start is not None:
        intervals.append((float(traj.times[start]), float(traj.times[-1])))
    n_flagged = int(flagged.sum())
    return HiddenMotionReport(tuple(intervals), n_flagged,
                              "pass" if n_flagged == 0 else "flagged")


# ---------------------------------------------------------------------------
# Report serialization


def report_line(name: str, report) -> str:
    """One line per report: name, verdict, worst value, witness."""
    witness = getattr(report, "witness", ())
    if witness:
        witness_text = "(" + ", ".join(format(float(v), ".17g") for v in witness) + ")"
    else:
        witness_text = "-"
    worst = float(getattr(report, "worst_value", math.nan))
    return f"{name}: {report.verdict}  worst={format(worst, '.17g')}  witness={witness_text}"


def write_reports_csv(path, named_reports) -> None:
    """CSV with columns check, verdict, worst_value, witness."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "verdict", "worst_value", "witness"])
        for name, report in named_reports:
            witness = getattr(report, "witness", ())
            writer.writerow([
                name,
                report.verdict,
                format(float(getattr(report, "worst_value", math.nan)), ".17g"),
                " ".join(format(float(v), ".17g") for v in witness),
            ])
