"""Deterministic fixed-step ODE simulation with signal generators,
trajectory recording, and storage monitoring.

The integrator is classical RK4 at a fixed step (Euler exists only for
convergence cross-checks).  No adaptivity and no event location: trajectories
are bitwise reproducible for identical arguments, and the square-wave
scenarios are run with steps that put the switch times exactly on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sysmodel import NonlinearSystem, ScalarField


@dataclass(frozen=True)
class IntegratorConfig:
    step: float
    t_end: float
    method: str = "RK4"

    def __post_init__(self):
        if not (self.step > 0.0):
            raise ValueError(f"step must be positive, got {self.step}")
        if self.step > self.t_end:
            raise ValueError(f"step {self.step} exceeds t_end {self.t_end}")
        if self.method not in ("RK4", "Euler"):
            raise ValueError(f"unknown integration method {self.method!r}")


def square_wave_value(t: float, amplitude: float, period: float) -> float:
    """``amplitude * sgn(sin(2 pi t / period))`` with ``sgn(0) := +1``."""
    if period <= 0.0:
        raise ValueError(f"period must be positive, got {period}")
    return amplitude if math.sin(2.0 * math.pi * t / period) >= 0.0 else -amplitude


@dataclass(frozen=True)
class InputSignal:
    """Exogenous input: zero, a constant vector, or a square wave on exactly
    one channel (all other channels held at zero)."""

    kind: str
    p: int
    vector: tuple = ()
    channel: int = 0
    amplitude: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "square_wave"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.p < 1:
            raise ValueError(f"signal dimension must be positive, got {self.p}")
        if self.kind == "constant" and len(self.vector) != self.p:
            raise ValueError("constant signal needs a vector of matching dimension")
        if self.kind == "square_wave":
            if not (0 <= self.channel < self.p):
                raise ValueError(f"channel {self.channel} out of range for p = {self.p}")
            if self.period <= 0.0:
                raise ValueError(f"period must be positive, got {self.period}")

    @staticmethod
    def zero(p: int) -> "InputSignal":
        return InputSignal("zero", int(p))

    @staticmethod
    def constant(vector) -> "InputSignal":
        vec = tuple(float(s) for s in vector)
        return InputSignal("constant", len(vec), vector=vec)

    @staticmethod
    def square_wave(p: int, channel: int, amplitude: float, period: float) -> "InputSignal":
        return InputSignal("square_wave", int(p), channel=int(channel),
                           amplitude=float(amplitude), period=float(period))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def value(self, t: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(self.p)
        if self.kind == "constant":
            return np.array(self.vector)
        v = np.zeros(self.p)
        v[self.channel] = square_wave_value(t, self.amplitude, self.period)
        return v


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled simulation record; arrays are read-only.

    ``inputs`` holds the exogenous signal v at each knot.  ``storage`` is the
    optional monitored field, ``diagnostic`` is set when the integration was
    truncated by a non-finite value.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    storage: Optional[np.ndarray] = None
    diagnostic: Optional[str] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        states = np.array(self.states, dtype=float)
        inputs = np.array(self.inputs, dtype=float)
        outputs = np.array(self.outputs, dtype=float)
        storage = None if self.storage is None else np.array(self.storage, dtype=float)
        n_knots = times.size
        if n_knots < 1:
            raise ValueError("trajectory needs at least one sample")
        for label, arr in (("states", states), ("inputs", inputs), ("outputs", outputs)):
            if arr.ndim != 2 or arr.shape[0] != n_knots:
                raise ValueError(f"{label} must have one row per knot")
        if storage is not None and storage.shape != (n_knots,):
            raise ValueError("storage must have one value per knot")
        if n_knots >= 2:
            dt = times[1] - times[0]
            if dt <= 0.0:
                raise ValueError("times must be strictly increasing")
            if np.max(np.abs(np.diff(times) - dt)) > 1e-9 * dt:
                raise ValueError("time grid must be uniform")
        for arr in (times, states, inputs, outputs, storage):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "storage", storage)

    @property
    def n_samples(self) -> int:
        return self.times.size

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def simulate(sys: NonlinearSystem, x0, signal: InputSignal, cfg: IntegratorConfig,
             monitor: Optional[ScalarField] = None) -> Trajectory:
    """Integrate ``sys`` from ``x0`` under ``signal``.

    RK4 holds the input at its stage-time values (the signal is evaluated at
    t, t + step/2 and t + step).  ``monitor`` is sampled at the knots into
    the storage channel.  A non-finite stage derivative or state truncates
    the trajectory and attaches a diagnostic instead of propagating NaNs.
    """
    x0 = np.array(x0, dtype=float)
    if x0.shape != (sys.n_states,):
        raise ValueError(f"x0 must have length {sys.n_states}, got shape {x0.shape}")
    if signal.p != sys.n_io:
        raise ValueError(f"signal dimension {signal.p} != system input dimension {sys.n_io}")
    if monitor is not None and monitor.dim != sys.n_states:
        raise ValueError(f"monitor dimension {monitor.dim} != state dimension {sys.n_states}")

    step = cfg.step
    n_steps = int(round(cfg.t_end / step))
    if abs(n_steps * step - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        n_steps = int(math.floor(cfg.t_end / step))
    times = np.arange(n_steps + 1) * step
    states = np.empty((n_steps + 1, sys.n_states))
    inputs = np.empty((n_steps + 1, sys.n_io))
    outputs = np.empty((n_steps + 1, sys.n_io))
    storage = np.empty(n_steps + 1) if monitor is not None else None

    f, h = sys.f, sys.h
    x = x0
    diagnostic = None
    last = n_steps
    for k in range(n_steps + 1):
        t = times[k]
        v = signal.value(t)
        states[k] = x
        inputs[k] = v
        outputs[k] = h(x)
        if storage is not None:
            storage[k] = monitor.value(x)
        if k == n_steps:
            break
        if cfg.method == "RK4":
            v_half = signal.value(t + 0.5 * step)
            v_full = signal.value(t + step)
            k1 = np.asarray(f(x, v), dtype=float)
            k2 = np.asarray(f(x + (0.5 * step) * k1, v_half), dtype=float)
            k3 = np.asarray(f(x + (0.5 * step) * k2, v_half), dtype=float)
            k4 = np.asarray(f(x + step * k3, v_full), dtype=float)
            if not (np.isfinite(k1).all() and np.isfinite(k2).all()
                    and np.isfinite(k3).all() and np.isfinite(k4).all()):
                diagnostic = f"non-finite stage derivative at t = {t:.6g}"
                last = k
                break
            x = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            k1 = np.asarray(f(x, v), dtype=float)
            if not np.isfinite(k1).all():
                diagnostic = f"non-finite derivative at t = {t:.6g}"
                last = k
                break
            x = x + step * k1
        if not np.isfinite(x).all():
            diagnostic = f"non-finite state after the step from t = {t:.6g}"
            last = k
            break

    if diagnostic is not None:
        times = times[:last + 1]
        states = states[:last + 1]
        inputs = inputs[:last + 1]
        outputs = outputs[:last + 1]
        if storage is not None:
            storage = storage[:last + 1]
    return Trajectory(times=times, states=states, inputs=inputs, outputs=outputs,
                      storage=storage, diagnostic=diagnostic)


@dataclass(frozen=True, eq=False)
class MonitorDecayReport:
    max_increase: float
    tolerance: float
    verdict: str  # "pass" | "fail" | "skipped"
    note: str = ""

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def worst_value(self):
        return self.max_increase

    @property
    def witness(self):
        return ()


def monitor_decay(traj: Trajectory) -> MonitorDecayReport:
    """Largest forward difference of the storage channel.

    Only meaningful on unforced segments, so a trajectory with any nonzero
    input is reported as skipped rather than judged.
    """
    if traj.storage is None:
        raise ValueError("trajectory has no storage channel to monitor")
    if np.any(traj.inputs != 0.0):
        return MonitorDecayReport(math.nan, math.nan, "skipped",
                                  note="forced segment: input is not identically zero")
    w = traj.storage
    tolerance = 1e-8 * (1.0 + float(np.max(np.abs(w))))
    if w.size < 2:
        return MonitorDecayReport(0.0, tolerance, "pass")
    max_increase = float(np.max(np.diff(w)))
    return MonitorDecayReport(max_increase, tolerance,
                              "pass" if max_increase <= tolerance else "fail")


@dataclass(frozen=True, eq=False)
class RefineReport:
    err_coarse: float          # |x_h(T) - x_{h/2}(T)|
    err_fine: float            # |x_{h/2}(T) - x_{h/4}(T)|
    order: Optional[float]     # log2(err_coarse / err_fine)
    flags: tuple

    @property
    def verdict(self):
        return "info"

    @property
    def worst_value(self):
        return math.nan if self.order is None else self.order

    @property
    def witness(self):
        return (self.err_coarse, self.err_fine)


def refine_check(sys: NonlinearSystem, x0, signal: InputSignal,
                 cfg: IntegratorConfig) -> RefineReport:
    """Empirical integrator order from runs at step, step/2 and step/4.

    Reports the end-state Richardson differences and
    ``log2(e_h / e_{h/2})``; square-wave inputs are flagged since the
    discontinuity degrades the observed order.
    """
    flags = []
    if signal.kind == "square_wave":
        flags.append("discontinuous input")
    trajectories = []
    for divisor in (1, 2, 4):
        sub_cfg = IntegratorConfig(step=cfg.step / divisor, t_end=cfg.t_end, method=cfg.method)
        trajectories.append(simulate(sys, x0, signal, sub_cfg))
    if any(t.diagnostic is not None for t in trajectories):
        flags.append("truncated")
        return RefineReport(math.nan, math.nan, None, tuple(flags))
    end_h, end_h2, end_h4 = (t.states[-1] for t in trajectories)
    err_coarse = float(np.linalg.norm(end_h - end_h2))
    err_fine = float(np.linalg.norm(end_h2 - end_h4))
    order = None
    if err_coarse > 0.0 and err_fine > 0.0:
        order = math.log2(err_coarse / err_fine)
    return RefineReport(err_coarse, err_fine, order, tuple(flags))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header ``t,x1..xn,v1..vp,y1..yp[,W]``, 17 significant digits."""
    n = traj.states.shape[1]
    p = traj.inputs.shape[1]
    columns = (["t"]
               + [f"x{i + 1}" for i in range(n)]
               + [f"v{i + 1}" for i in range(p)]
               + [f"y{i + 1}" for i in range(p)])
    if traj.storage is not None:
        columns.append("W")
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for k in range(traj.n_samples):
            row = [traj.times[k], *traj.states[k], *traj.inputs[k], *traj.outputs[k]]
            if traj.storage is not None:
                row.append(traj.storage[k])
            fh.write(",".join(format(val, ".17g") for val in row) + "\n")
