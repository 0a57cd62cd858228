"""LQR synthesis on the lifted model and closed-loop evaluation.

The infinite-horizon quadratic problem for the nonlinear plant is recast
on the lifted linear model: minimize the integral of z'C'QCz + u'Ru along
zdot = Az + Bu.  Its CARE solution yields a gain K whose pullback
u = -K psi(x) is a nonlinear policy for the original plant.  Closed-loop
quality is measured by simulating the true plant under sample-and-hold
feedback and accumulating the quadratic cost with the trapezoidal rule,
against the Taylor-linearization LQR as the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import koopman_model as km
from . import linalg, plant as plant_mod


class SynthesisError(RuntimeError):
    """Controller synthesis failed (CARE or closed-loop stability)."""


@dataclass(frozen=True)
class LQRController:
    """Lifted feedback gain plus the lifting map: u = -K (psi(x) - z_offset).

    z_offset is psi(x_eq) when recentering is enabled, which pins
    u(x_eq) = 0 exactly even if the learned lifting does not vanish at the
    equilibrium; |psi(x_eq)| is kept as a diagnostic either way.
    """

    k_gain: np.ndarray  # (m, D)
    model: km.LiftedLTIModel
    q: np.ndarray
    r: np.ndarray
    z_offset: np.ndarray  # (D,)
    u_limits: np.ndarray | None = None  # (m, 2) rows of [lo, hi]
    psi_eq_norm: float = 0.0

    def __call__(self, x):
        return policy(self, x)


def synthesize(model, q, r, eps_ridge=1e-9, recenter=True, x_eq=None, u_limits=None):
    """KF-LQR gain for the lifted model.

    The lifted state cost is C'QC plus a tiny ridge (C'QC has rank at most
    d, which can break detectability of the lifted pair; eps_ridge
    restores a well-posed CARE while perturbing the cost negligibly; 0 is
    allowed).  Refuses to return a controller whose lifted closed loop
    A - BK is not Hurwitz.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    q_lift = model.c.T @ q @ model.c + eps_ridge * np.eye(model.basis.size)
    p = linalg.solve_care(model.a, model.b, q_lift, r)
    k = linalg.solve_linear(r, model.b.T @ p)
    a_cl = model.a - model.b @ k
    if not linalg.is_hurwitz(a_cl):
        raise SynthesisError(
            "synthesized closed-loop lifted matrix is not Hurwitz"
        )
    x_eq = np.zeros(model.d) if x_eq is None else np.asarray(x_eq, dtype=float)
    psi_eq = km.lift_state(model, x_eq)
    return LQRController(
        k_gain=k,
        model=model,
        q=q,
        r=r,
        z_offset=psi_eq if recenter else np.zeros(model.basis.size),
        u_limits=None if u_limits is None else np.asarray(u_limits, dtype=float),
        psi_eq_norm=float(np.linalg.norm(psi_eq)),
    )


def policy(controller, x):
    """u = -K (psi(x) - z_offset), clipped to u_limits when set."""
    z = km.lift_state(controller.model, np.asarray(x, dtype=float))
    u = -(controller.k_gain @ (z - controller.z_offset))
    if controller.u_limits is not None:
        u = np.clip(u, controller.u_limits[:, 0], controller.u_limits[:, 1])
    return u


@dataclass(frozen=True)
class LinearStateFeedback:
    """Classical state feedback u = -K (x - x_eq) (the Taylor baseline)."""

    k_gain: np.ndarray  # (m, d)
    x_eq: np.ndarray

    def __call__(self, x):
        return -(self.k_gain @ (np.asarray(x, dtype=float) - self.x_eq))


def taylor_lqr_baseline(plant, q, r):
    """LQR gain on the plant's Jacobian linearization at the equilibrium."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    a_lin = km.plant_jacobian_at_eq(plant)
    p = linalg.solve_care(a_lin, plant.b_underline, q, r)
    k = linalg.solve_linear(r, plant.b_underline.T @ p)
    return LinearStateFeedback(k_gain=k, x_eq=np.asarray(plant.equilibrium, dtype=float))


@dataclass(frozen=True)
class SimResult:
    """One closed-loop run with trapezoidal cost accumulation."""

    times: np.ndarray
    states: np.ndarray  # (T+1, d)
    inputs: np.ndarray  # (T+1, m), inputs[k] = policy(states[k])
    j_total: float
    j_state: float
    j_control: float
    stable: bool


BLOWUP_LIMIT = 1e8


def closed_loop_sim(plant, controller, x0, horizon, dt, q, r):
    """Simulate the true plant under sample-and-hold feedback.

    The control is recomputed every dt and held during the RK4 step.  The
    integrand x'Qx + u'Ru is sampled on the grid (with the policy input at
    every node) and integrated by the trapezoidal rule, state and control
    parts tracked separately so j_total = j_state + j_control exactly.
    State blow-up marks the run unstable with infinite cost.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ValueError(f"horizon {horizon} too short for dt {dt}")
    x = np.asarray(x0, dtype=float).copy()
    states, inputs = [], []
    stable = True
    for _ in range(steps + 1):
        u = np.atleast_1d(controller(x))
        states.append(x.copy())
        inputs.append(u.copy())
        if len(states) > steps:
            break
        try:
            x = plant_mod.rk4_step(plant.field, x, u, dt)
        except FloatingPointError:
            stable = False
            break
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
            stable = False
            break
    states = np.array(states)
    inputs = np.array(inputs)
    times = np.arange(len(states)) * dt
    ell_state = np.einsum("ki,ij,kj->k", states, q, states)
    ell_control = np.einsum("ki,ij,kj->k", inputs, r, inputs)
    if stable and len(states) > 1:
        j_state = float(np.trapezoid(ell_state, dx=dt))
        j_control = float(np.trapezoid(ell_control, dx=dt))
    else:
        j_state = j_control = np.inf
    return SimResult(
        times=times,
        states=states,
        inputs=inputs,
        j_total=j_state + j_control,
        j_state=j_state,
        j_control=j_control,
        stable=stable,
    )


def perimeter_ics(box, count, contraction=0.95, seed=0):
    """count seeded uniform samples on the box perimeter contracted toward
    the center ("close to the edges" initial conditions)."""
    box = np.asarray(box, dtype=float)
    center = box.mean(axis=1)
    half = (box[:, 1] - box[:, 0]) / 2.0 * contraction
    shrunk = np.stack([center - half, center + half], axis=1)
    (x_lo, x_hi), (y_lo, y_hi) = shrunk
    w, h = x_hi - x_lo, y_hi - y_lo
    perimeter = 2.0 * (w + h)
    rng = np.random.default_rng(seed)
    points = []
    for t in np.sort(rng.uniform(0.0, perimeter, size=count)):
        if t < w:
            points.append((x_lo + t, y_lo))
        elif t < w + h:
            points.append((x_hi, y_lo + (t - w)))
        elif t < 2 * w + h:
            points.append((x_hi - (t - w - h), y_hi))
        else:
            points.append((x_lo, y_hi - (t - 2 * w - h)))
    return np.array(points)


@dataclass
class CostReport:
    """Per-IC closed-loop costs for the lifted controller and the baseline,
    plus Table-style percentage reductions 100 (1 - KF / baseline)."""

    ics: np.ndarray
    kf: list  # SimResult per IC
    baseline: list  # SimResult per IC
    reduction_mean_j: float = np.nan
    reduction_var_ju: float = np.nan
    reduction_mean_ju: float = np.nan
    summary: dict = field(default_factory=dict)

    def stable_counts(self):
        return (
            sum(s.stable for s in self.kf),
            sum(s.stable for s in self.baseline),
        )


def _reduction(kf_value, base_value):
    if base_value == 0.0:
        return 0.0 if kf_value == 0.0 else -np.inf
    return 100.0 * (1.0 - kf_value / base_value)


def compare(plant, kf_controller, baseline, ic_set, horizon, dt, q, r):
    """Closed-loop cost comparison over a set of initial conditions.

    Reductions are computed over the initial conditions where both
    controllers produced a finite cost (stability counts are reported
    alongside); var J_u uses the sample variance.
    """
    ic_set = np.atleast_2d(np.asarray(ic_set, dtype=float))
    kf_runs = [
        closed_loop_sim(plant, kf_controller, x0, horizon, dt, q, r) for x0 in ic_set
    ]
    base_runs = [
        closed_loop_sim(plant, baseline, x0, horizon, dt, q, r) for x0 in ic_set
    ]
    both = np.array([a.stable and b.stable for a, b in zip(kf_runs, base_runs)])
    report = CostReport(ics=ic_set, kf=kf_runs, baseline=base_runs)
    if both.any():
        j_kf = np.array([s.j_total for s in kf_runs])[both]
        ju_kf = np.array([s.j_control for s in kf_runs])[both]
        j_b = np.array([s.j_total for s in base_runs])[both]
        ju_b = np.array([s.j_control for s in base_runs])[both]
        var = lambda a: float(np.var(a, ddof=1)) if len(a) > 1 else 0.0
        report.reduction_mean_j = _reduction(float(np.mean(j_kf)), float(np.mean(j_b)))
        report.reduction_var_ju = _reduction(var(ju_kf), var(ju_b))
        report.reduction_mean_ju = _reduction(float(np.mean(ju_kf)), float(np.mean(ju_b)))
        report.summary = {
            "n_ics": len(ic_set),
            "n_compared": int(both.sum()),
            "kf_stable": int(sum(s.stable for s in kf_runs)),
            "baseline_stable": int(sum(s.stable for s in base_runs)),
            "kf_mean_j": float(np.mean(j_kf)),
            "baseline_mean_j": float(np.mean(j_b)),
            "kf_mean_ju": float(np.mean(ju_kf)),
            "baseline_mean_ju": float(np.mean(ju_b)),
            "kf_var_ju": var(ju_kf),
            "baseline_var_ju": var(ju_b),
        }
    return report
