"""Ground-truth control-affine plants, fixed-step simulation, APRBS
excitation, and dataset generation.

Plants have the form xdot = a(x) + B u with a constant input matrix B.
Two built-in second-order systems are provided: a mildly damped oscillator
with quadratic velocity damping ("example1") and a stiffer system with
cubic-plus-quadratic damping and a position-dependent damping term
("example2").  Both have their only equilibrium at the origin.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PlantDef:
    """Control-affine plant xdot = a(x) + B u on an axis-aligned state box."""

    name: str
    d: int
    m: int
    a: callable  # autonomous field, vectorized over (..., d)
    b_underline: np.ndarray  # (d, m)
    domain: np.ndarray  # (d, 2) rows of [lo, hi]
    equilibrium: np.ndarray  # (d,) with a(equilibrium) = 0
    jacobian_at_eq: np.ndarray | None = None  # analytic J_a(x*), optional

    def field(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.a(x) + u @ self.b_underline.T

    def check_equilibrium(self, tol=1e-12):
        resid = np.max(np.abs(self.a(self.equilibrium)))
        if resid > tol:
            raise ValueError(
                f"claimed equilibrium violates a(x*) = 0 by {resid:.3e}"
            )


def example1_field(x):
    """Autonomous part of xdot1 = x2, xdot2 = -x1 - x2 - x2|x2| + u."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, -x1 - x2 - x2 * np.abs(x2)], axis=-1)


def example2_field(x):
    """Autonomous part of the stiffer plant: xdot1 = x2,
    xdot2 = -5 x1 - 0.3 x2 - v(x2) - t(x1, x2) + u with
    v(x2) = 5 (x2^3 + x2|x2|) and t = 10 x2 sin(5 x1) cos(2 x1)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    v = 5.0 * (x2**3 + x2 * np.abs(x2))
    t = 10.0 * x2 * np.sin(5.0 * x1) * np.cos(2.0 * x1)
    return np.stack([x2, -5.0 * x1 - 0.3 * x2 - v - t], axis=-1)


def example1_plant():
    return PlantDef(
        name="example1",
        d=2,
        m=1,
        a=example1_field,
        b_underline=np.array([[0.0], [1.0]]),
        domain=np.array([[-2.5, 2.5], [-2.5, 2.5]]),
        equilibrium=np.zeros(2),
        # d(x2|x2|)/dx2 = 2|x2| vanishes at the origin
        jacobian_at_eq=np.array([[0.0, 1.0], [-1.0, -1.0]]),
    )


def example2_plant():
    return PlantDef(
        name="example2",
        d=2,
        m=1,
        a=example2_field,
        b_underline=np.array([[0.0], [1.0]]),
        domain=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        equilibrium=np.zeros(2),
        # v'(0) = 0 and t has no linear part at the origin
        jacobian_at_eq=np.array([[0.0, 1.0], [-5.0, -0.3]]),
    )


def linear_plant(a_matrix, b_matrix, domain, name="linear"):
    """Synthetic linear plant xdot = A x + B u (useful for exact-recovery
    tests: the true model lies inside the learnable class)."""
    a_matrix = np.asarray(a_matrix, dtype=float)
    b_matrix = np.asarray(b_matrix, dtype=float)
    d = a_matrix.shape[0]
    return PlantDef(
        name=name,
        d=d,
        m=b_matrix.shape[1],
        a=lambda x: np.asarray(x, dtype=float) @ a_matrix.T,
        b_underline=b_matrix,
        domain=np.asarray(domain, dtype=float),
        equilibrium=np.zeros(d),
        jacobian_at_eq=a_matrix,
    )


BUILTIN_PLANTS = {"example1": example1_plant, "example2": example2_plant}


def get_plant(name):
    if name not in BUILTIN_PLANTS:
        raise ValueError(f"unknown plant '{name}' (have {sorted(BUILTIN_PLANTS)})")
    return BUILTIN_PLANTS[name]()


def rk4_step(f, x, u, dt):
    """One classical Runge-Kutta step with u held constant (zero-order hold)."""
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise FloatingPointError("integration produced a non-finite state")
    return x_next


@dataclass(frozen=True)
class InputSignal:
    """Zero-order-hold input sequence: values[k] is applied on
    [k dt, (k+1) dt)."""

    dt: float
    values: np.ndarray  # (T, m)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 2 or len(self.values) < 1:
            raise ValueError(f"values must be (T, m) with T >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("input signal contains non-finite values")

    def __len__(self):
        return len(self.values)


def zero_signal(duration, dt, m=1):
    steps = int(round(duration / dt))
    return InputSignal(dt=dt, values=np.zeros((steps, m)))


def aprbs(amp_range, hold_range, duration, dt, seed, m=1):
    """Amplitude-modulated pseudo-random binary sequence.

    Piecewise-constant signal: each segment draws its amplitude uniformly
    from amp_range and its duration uniformly from hold_range, rounded up
    to whole dt steps.  Deterministic for a given seed.
    """
    lo, hi = amp_range
    h_lo, h_hi = hold_range
    if lo > hi:
        raise ValueError(f"amplitude range {amp_range} is empty")
    if not (0 < h_lo <= h_hi):
        raise ValueError(f"invalid hold range {hold_range}")
    if dt > h_lo:
        raise ValueError(f"dt = {dt} exceeds the minimum hold time {h_lo}")
    rng = np.random.default_rng(seed)
    steps = int(round(duration / dt))
    values = np.empty((steps, m))
    k = 0
    while k < steps:
        amp = rng.uniform(lo, hi, size=m)
        hold_steps = int(np.ceil(rng.uniform(h_lo, h_hi) / dt))
        values[k : k + hold_steps] = amp
        k += hold_steps
    return InputSignal(dt=dt, values=values)


def simulate(plant, x0, signal, safety_box=None):
    """Roll the plant under a zero-order-hold input signal with RK4.

    Returns (states, truncated): states has len(signal) + 1 rows; if the
    state leaves the safety box the trajectory is cut short and flagged.
    """
    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    truncated = False
    for u in signal.values:
        x = rk4_step(plant.field, x, u, signal.dt)
        if safety_box is not None and np.any(
            (x < safety_box[:, 0]) | (x > safety_box[:, 1])
        ):
            truncated = True
            break
        states.append(x.copy())
    return np.array(states), truncated


@dataclass
class Dataset:
    """Sampled tuples (x, u, xdot) with provenance metadata."""

    x: np.ndarray  # (N, d)
    u: np.ndarray  # (N, m)
    xdot: np.ndarray  # (N, d)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.x) == len(self.u) == len(self.xdot)):
            raise ValueError("x, u, xdot must have equal lengths")
        for arr, name in ((self.x, "x"), (self.u, "u"), (self.xdot, "xdot")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"dataset field {name} contains non-finite values")

    def __len__(self):
        return len(self.x)

    def concat(self, other):
        meta = dict(self.meta)
        meta["concatenated_with"] = other.meta
        return Dataset(
            x=np.vstack([self.x, other.x]),
            u=np.vstack([self.u, other.u]),
            xdot=np.vstack([self.xdot, other.xdot]),
            meta=meta,
        )


def edge_initial_conditions(box, count):
    """count points uniformly spaced along the box perimeter, walking
    counterclockwise from the (lo, lo) corner."""
    box = np.asarray(box, dtype=float)
    if box.shape != (2, 2):
        raise ValueError("perimeter initial conditions need a 2-D box")
    (x_lo, x_hi), (y_lo, y_hi) = box
    w, h = x_hi - x_lo, y_hi - y_lo
    perimeter = 2.0 * (w + h)
    points = []
    for t in np.arange(count) * perimeter / count:
        if t < w:
            points.append((x_lo + t, y_lo))
        elif t < w + h:
            points.append((x_hi, y_lo + (t - w)))
        elif t < 2 * w + h:
            points.append((x_hi - (t - w - h), y_hi))
        else:
            points.append((x_lo, y_hi - (t - 2 * w - h)))
    return np.array(points)


def grid_initial_conditions(box, count):
    """count points on a uniform sqrt(count) x sqrt(count) grid spanning
    the box (count must be a perfect square)."""
    box = np.asarray(box, dtype=float)
    side = int(round(np.sqrt(count)))
    if side * side != count:
        raise ValueError(f"grid initial conditions need a square count, got {count}")
    axes = [np.linspace(lo, hi, side) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def generate_dataset(
    plant,
    initial_conditions,
    signal_spec,
    horizon,
    dt,
    mode="exact",
    seed=0,
    safety_factor=10.0,
):
    """Simulate each initial condition under a fresh seeded input signal
    and record (x_k, u_k, xdot_k) at every sample time.

    signal_spec is either None (zero input), or a dict with keys
    amp_range / hold_range for APRBS excitation.  mode "exact" records
    xdot = f(x, u); mode "finite-difference" records central differences
    of the simulated states, one-sided at the ends.  Trajectories leaving
    safety_factor times the plant domain are truncated and flagged.
    """
    if mode not in ("exact", "finite-difference"):
        raise ValueError(f"unknown mode '{mode}'")
    initial_conditions = np.atleast_2d(np.asarray(initial_conditions, dtype=float))
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ValueError(f"horizon {horizon} too short for dt {dt}")
    center = plant.domain.mean(axis=1)
    half = (plant.domain[:, 1] - plant.domain[:, 0]) / 2.0
    safety_box = np.stack(
        [center - safety_factor * half, center + safety_factor * half], axis=1
    )

    xs, us, xdots = [], [], []
    truncated_trajs = []
    for idx, x0 in enumerate(initial_conditions):
        if signal_spec is None:
            signal = zero_signal((steps + 1) * dt, dt, m=plant.m)
        else:
            signal = aprbs(
                signal_spec["amp_range"],
                signal_spec["hold_range"],
                (steps + 1) * dt,
                dt,
                seed=seed + idx,
                m=plant.m,
            )
        states, truncated = simulate(plant, x0, signal, safety_box=safety_box)
        if truncated:
            truncated_trajs.append(idx)
        n = min(steps, len(states) - 1)  # need x_{k+1} for the FD mode
        if n < 1:
            continue
        x_rec = states[:n]
        u_rec = signal.values[:n]
        if mode == "exact":
            xd_rec = plant.field(x_rec, u_rec)
        else:
            # central differences, one-sided at the record boundaries
            xd_rec = np.empty_like(x_rec)
            xd_rec[0] = (states[1] - states[0]) / dt
            if n >= 2:
                xd_rec[n - 1] = (states[n] - states[n - 1]) / dt
            if n > 2:
                xd_rec[1 : n - 1] = (states[2:n] - states[: n - 2]) / (2.0 * dt)
        xs.append(x_rec)
        us.append(u_rec)
        xdots.append(xd_rec)

    meta = {
        "plant": plant.name,
        "dt": dt,
        "horizon": horizon,
        "seed": seed,
        "mode": mode,
        "n_initial_conditions": len(initial_conditions),
        "signal": signal_spec if signal_spec is not None else "zero",
        "truncated_trajectories": truncated_trajs,
    }
    return Dataset(
        x=np.vstack(xs), u=np.vstack(us), xdot=np.vstack(xdots), meta=meta
    )


def save_dataset(dataset, path):
    """Write the records as CSV (x1..xd, u1..um, xdot1..xdotd) plus a JSON
    metadata sidecar <path>.meta.json."""
    path = Path(path)
    d = dataset.x.shape[1]
    m = dataset.u.shape[1]
    header = (
        [f"x{i + 1}" for i in range(d)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"xdot{i + 1}" for i in range(d)]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.hstack([dataset.x, dataset.u, dataset.xdot]):
            writer.writerow([repr(float(v)) for v in row])
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    sidecar.write_text(json.dumps(dataset.meta, indent=2, sort_keys=True))


def load_dataset(path):
    path = Path(path)
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    d = sum(1 for h in header if h.startswith("x") and not h.startswith("xdot"))
    m = sum(1 for h in header if h.startswith("u"))
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return Dataset(
        x=rows[:, :d], u=rows[:, d : d + m], xdot=rows[:, d + m :], meta=meta
    )
