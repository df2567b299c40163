"""Core system and storage primitives for Lur'e feedback analysis.

Plants are plain state-space systems ``x' = f(x, u)``, ``y = h(x)`` with
matched input/output dimension, storage candidates are scalar fields with
optional analytic gradients, and feedback nonlinearities are memoryless maps
that may carry the potential they are the gradient of.  Everything here is
immutable after construction and evaluation routines are expected to be pure,
so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# Shared numeric tolerances.
TAU_ZERO = 1e-9        # absolute "is zero" tolerance
TAU_GRAD = 1e-5        # relative gradient-agreement tolerance
TAU_GRAD_FLOOR = 1e-8  # absolute floor under TAU_GRAD
TAU_PD = 1e-9          # strict positive-definiteness margin


def fd_step(x) -> float:
    """Central-difference step, 1e-6 scaled by the probe point's size."""
    return 1e-6 * max(1.0, float(np.linalg.norm(x)))


def central_gradient(func, x, step: Optional[float] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if step is None else float(step)
    grad = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        grad[i] = (float(func(x + e)) - float(func(x - e))) / (2.0 * h)
    return grad


def central_jacobian(func, x, n_out: int, step: Optional[float] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if step is None else float(step)
    jac = np.empty((n_out, x.size))
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        jac[:, j] = (np.asarray(func(x + e), dtype=float)
                     - np.asarray(func(x - e), dtype=float)) / (2.0 * h)
    return jac


class ScalarField:
    """A differentiable scalar function on R^dim vanishing at the origin.

    When no analytic gradient is supplied, :meth:`gradient` falls back to
    central finite differences with step :func:`fd_step`.
    """

    def __init__(self, dim: int, value, gradient=None, name: str = ""):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dim must be a positive integer, got {dim}")
        self.dim = dim
        self._value = value
        self._gradient = gradient
        self.name = name
        v0 = float(value(np.zeros(dim)))
        if abs(v0) > TAU_ZERO:
            raise ValueError(f"scalar field must vanish at the origin, got value(0) = {v0}")

    @property
    def has_analytic_gradient(self) -> bool:
        return self._gradient is not None

    def value(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=float)
        return central_gradient(self._value, x)


def zero_field(dim: int) -> ScalarField:
    """The identically-zero field (useful as an empty potential)."""
    return ScalarField(dim, lambda x: 0.0, lambda x: np.zeros(dim), name="0")


class NonlinearSystem:
    """State-space system ``x' = f(x, u)``, ``y = h(x)``.

    Input and output share the dimension ``n_io <= n_states`` and the origin
    must be an equilibrium: ``f(0, 0) = 0`` and ``h(0) = 0`` are enforced at
    construction, together with a determinism probe (two evaluations of ``f``
    at identical arguments must agree bitwise).  ``h_jacobian`` is optional;
    without it :meth:`output_jacobian` uses central differences.
    """

    def __init__(self, n_states: int, n_io: int, f, h, h_jacobian=None, name: str = ""):
        n_states = int(n_states)
        n_io = int(n_io)
        if n_states < 1:
            raise ValueError(f"n_states must be positive, got {n_states}")
        if n_io < 1 or n_io > n_states:
            raise ValueError(
                f"n_io must satisfy 1 <= n_io <= n_states, got n_io={n_io}, n_states={n_states}")
        self.n_states = n_states
        self.n_io = n_io
        self.f = f
        self.h = h
        self.h_jacobian = h_jacobian
        self.name = name

        x0 = np.zeros(n_states)
        u0 = np.zeros(n_io)
        fx = np.asarray(f(x0, u0), dtype=float)
        if fx.shape != (n_states,):
            raise ValueError(f"f must return a length-{n_states} vector, got shape {fx.shape}")
        if np.linalg.norm(fx) > TAU_ZERO:
            raise ValueError(f"origin must be an equilibrium: |f(0,0)| = {np.linalg.norm(fx)}")
        if not np.array_equal(fx, np.asarray(f(x0, u0), dtype=float)):
            raise ValueError("f must be deterministic: repeated evaluation disagreed")
        hx = np.asarray(h(x0), dtype=float)
        if hx.shape != (n_io,):
            raise ValueError(f"h must return a length-{n_io} vector, got shape {hx.shape}")
        if np.linalg.norm(hx) > TAU_ZERO:
            raise ValueError(f"output must vanish at the origin: |h(0)| = {np.linalg.norm(hx)}")

    def output_jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.h_jacobian is not None:
            return np.asarray(self.h_jacobian(x), dtype=float)
        return central_jacobian(self.h, x, self.n_io)


class StaticNonlinearity:
    """Memoryless feedback map ``phi: R^p -> R^p`` with ``phi(0) = 0``.

    ``potential`` optionally names a scalar field F with ``grad F = phi``;
    consistency is probed by :func:`gradient_check` rather than at
    construction.  ``channels`` optionally declares phi as decoupled scalar
    maps ``phi_i(y_i)``, which the slope-bound machinery in
    :mod:`nishape.linear` requires.
    """

    def __init__(self, p: int, phi=None, potential: Optional[ScalarField] = None,
                 channels=None, name: str = ""):
        p = int(p)
        if p < 1:
            raise ValueError(f"p must be positive, got {p}")
        if channels is not None:
            channels = tuple(channels)
            if len(channels) != p:
                raise ValueError(f"need {p} channels, got {len(channels)}")
        if phi is None:
            if channels is None:
                raise ValueError("either phi or channels must be given")

            def phi(y, _channels=channels):
                y = np.asarray(y, dtype=float)
                return np.array([float(c(s)) for c, s in zip(_channels, y)])

        if potential is not None and potential.dim != p:
            raise ValueError(f"potential dimension {potential.dim} != p = {p}")
        self.p = p
        self.phi = phi
        self.potential = potential
        self.channels = channels
        self.name = name
        v0 = np.asarray(phi(np.zeros(p)), dtype=float)
        if v0.shape != (p,):
            raise ValueError(f"phi must return a length-{p} vector, got shape {v0.shape}")
        if np.linalg.norm(v0) > TAU_ZERO:
            raise ValueError(f"phi must vanish at the origin: |phi(0)| = {np.linalg.norm(v0)}")


class HamiltonianSystem:
    """Input-output Hamiltonian system
    ``x' = [J(x) - R(x)] (grad H(x) - grad C(x)^T u)``, ``y = C(x)``.

    J must be skew-symmetric and R symmetric; both are probed at the origin
    and on a small ring of axis points at construction.  ``grad_C_fn`` is the
    optional analytic Jacobian of C; central differences otherwise.
    """

    _PROBE_RADIUS = 0.1

    def __init__(self, n: int, p: int, J, R, H: ScalarField, C, grad_C_fn=None):
        n = int(n)
        p = int(p)
        if n < 1 or p < 1 or p > n:
            raise ValueError(f"need 1 <= p <= n, got n={n}, p={p}")
        if H.dim != n:
            raise ValueError(f"Hamiltonian dimension {H.dim} != n = {n}")
        self.n = n
        self.p = p
        self.J = J
        self.R = R
        self.H = H
        self.C = C
        self._grad_C_fn = grad_C_fn

        probes = [np.zeros(n)]
        for i in range(n):
            e = np.zeros(n)
            e[i] = self._PROBE_RADIUS
            probes.append(e)
        for x in probes:
            Jx = np.asarray(J(x), dtype=float)
            Rx = np.asarray(R(x), dtype=float)
            if Jx.shape != (n, n) or Rx.shape != (n, n):
                raise ValueError("J and R must return n x n matrices")
            if np.max(np.abs(Jx + Jx.T)) > TAU_ZERO:
                raise ValueError(f"J is not skew-symmetric at probe {x}")
            if np.max(np.abs(Rx - Rx.T)) > TAU_ZERO:
                raise ValueError(f"R is not symmetric at probe {x}")
        C0 = np.asarray(C(np.zeros(n)), dtype=float)
        if C0.shape != (p,):
            raise ValueError(f"C must return a length-{p} vector, got shape {C0.shape}")
        if np.linalg.norm(C0) > TAU_ZERO:
            raise ValueError(f"output map must vanish at the origin: |C(0)| = {np.linalg.norm(C0)}")

    def grad_C(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._grad_C_fn is not None:
            return np.asarray(self._grad_C_fn(x), dtype=float)
        return central_jacobian(self.C, x, self.p)


class LinearSystem:
    """Matrices (A, B, C) of ``x' = Ax + Bu``, ``y = Cx``."""

    def __init__(self, A, B, C):
        A = np.array(A, dtype=float)
        B = np.array(B, dtype=float)
        C = np.array(C, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        p = B.shape[1]
        if C.shape != (p, n):
            raise ValueError(f"C must be {p} x {n}, got shape {C.shape}")
        for label, M in (("A", A), ("B", B), ("C", C)):
            if not np.isfinite(M).all():
                raise ValueError(f"{label} contains non-finite entries")
        for M in (A, B, C):
            M.setflags(write=False)
        self.A = A
        self.B = B
        self.C = C
        self.n = n
        self.p = p


# ---------------------------------------------------------------------------
# Composition operations


def make_closed_loop(sys: NonlinearSystem, nl: StaticNonlinearity) -> NonlinearSystem:
    """Close ``u = phi(y) + v`` around the plant; v is the new input."""
    if sys.n_io != nl.p:
        raise ValueError(
            f"plant input/output dimension {sys.n_io} does not match "
            f"nonlinearity dimension {nl.p}")
    f, h, phi = sys.f, sys.h, nl.phi

    def f_closed(x, v):
        return f(x, phi(h(x)) + v)

    return NonlinearSystem(sys.n_states, sys.n_io, f_closed, h,
                           h_jacobian=sys.h_jacobian,
                           name=f"{sys.name or 'plant'} / {nl.name or 'feedback'}")


def make_shaped_storage(V: ScalarField, F: ScalarField, h, n: int,
                        h_jacobian=None, name: str = "W") -> ScalarField:
    """Storage shaped along the output: ``W(x) = V(x) - F(h(x))``.

    The gradient is assembled by the chain rule only when the gradients of V
    and F and the output Jacobian are all analytic; any missing piece makes
    the whole field fall back to finite differences so truncation errors stay
    on a single scale.
    """
    n = int(n)
    if V.dim != n:
        raise ValueError(f"V has dimension {V.dim}, expected n = {n}")
    y0 = np.asarray(h(np.zeros(n)), dtype=float)
    if y0.shape != (F.dim,):
        raise ValueError(f"h maps into R^{y0.size}, but F has dimension {F.dim}")

    def w_value(x):
        return V.value(x) - F.value(h(x))

    w_gradient = None
    if V.has_analytic_gradient and F.has_analytic_gradient and h_jacobian is not None:
        def w_gradient(x):
            x = np.asarray(x, dtype=float)
            y = np.asarray(h(x), dtype=float)
            return V.gradient(x) - np.asarray(h_jacobian(x), dtype=float).T @ F.gradient(y)

    return ScalarField(n, w_value, w_gradient, name=name)


def hamiltonian_to_nonlinear(hs: HamiltonianSystem) -> NonlinearSystem:
    """Realize the Hamiltonian dynamics as a plain state-space system."""
    z = np.zeros(hs.n)
    J0 = np.asarray(hs.J(z), dtype=float)
    R0 = np.asarray(hs.R(z), dtype=float)
    if np.max(np.abs(J0 + J0.T)) > TAU_ZERO:
        raise ValueError("J is not skew-symmetric at the origin")
    if np.max(np.abs(R0 - R0.T)) > TAU_ZERO:
        raise ValueError("R is not symmetric at the origin")
    J, R, H, C, grad_C = hs.J, hs.R, hs.H, hs.C, hs.grad_C

    def f(x, u):
        return (np.asarray(J(x), dtype=float) - np.asarray(R(x), dtype=float)) @ (
            H.gradient(x) - grad_C(x).T @ np.asarray(u, dtype=float))

    def h(x):
        return np.asarray(C(x), dtype=float)

    return NonlinearSystem(hs.n, hs.p, f, h, h_jacobian=grad_C, name="hamiltonian")


# ---------------------------------------------------------------------------
# Gradient consistency probing


@dataclass(frozen=True, eq=False)
class GradientCheckReport:
    max_deviation: float
    worst_point: Optional[np.ndarray]
    n_points: int
    verdict: str  # "pass" | "fail" | "nothing to check"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def worst_value(self) -> float:
        return self.max_deviation

    @property
    def witness(self) -> tuple:
        return () if self.worst_point is None else tuple(self.worst_point)


def gradient_check(field: ScalarField, points) -> GradientCheckReport:
    """Probe an analytic gradient against central finite differences.

    The deviation at a point is ``|g_an - g_fd| / max(|g_fd|, 1e-3)``, so the
    TAU_GRAD verdict corresponds to a 1e-5 relative tolerance with a 1e-8
    absolute floor.  Fields without an analytic gradient report
    "nothing to check".
    """
    if not field.has_analytic_gradient:
        return GradientCheckReport(0.0, None, 0, "nothing to check")
    floor = TAU_GRAD_FLOOR / TAU_GRAD
    worst = -1.0
    worst_pt = None
    count = 0
    for pt in points:
        pt = np.asarray(pt, dtype=float)
        if pt.shape != (field.dim,):
            raise ValueError(f"probe point has shape {pt.shape}, field dimension is {field.dim}")
        g_an = field.gradient(pt)
        g_fd = central_gradient(field._value, pt)
        dev = float(np.linalg.norm(g_an - g_fd) / max(np.linalg.norm(g_fd), floor))
        count += 1
        if dev > worst:
            worst, worst_pt = dev, pt
    verdict = "pass" if worst <= TAU_GRAD else "fail"
    return GradientCheckReport(worst, worst_pt, count, verdict)
