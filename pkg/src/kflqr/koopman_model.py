"""Assembly and use of the learned lifted LTI model.

A LiftedLTIModel is the tuple (basis, d, A_latent, B, C): states are
lifted once through z = lift(d(x)), evolved by the discrete-time pair
obtained from the exact zero-order-hold discretisation of (A_lift, B),
and read out through C.  A_lift is always derived from A_latent so the
monomial block structure survives serialization; the model file stores
both and load() recomputes and cross-checks.

The Taylor baseline (Jacobian linearization at the equilibrium) lives
here too since it shares the rollout machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffeo as dif
from . import linalg, monomial

MODEL_FORMAT = "kflqr-model"
MODEL_VERSION = 1


class ModelIntegrityError(ValueError):
    """Stored model file is inconsistent (corruption or basis drift)."""


@dataclass(frozen=True)
class LiftedLTIModel:
    basis: monomial.MonomialBasis
    diffeo: dif.DiffeoParams
    a_latent: np.ndarray  # (d, d)
    a: np.ndarray  # (D, D), always lifted_matrix(a_latent, basis)
    b: np.ndarray  # (D, m)
    c: np.ndarray  # (d, D)
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d(self):
        return self.basis.d

    @property
    def m(self):
        return self.b.shape[1]

    def rollout(self, x0, inputs):
        return predict_rollout(self, x0, inputs)


def assemble_model(params, basis, meta=None):
    """Build the model from trained parameters; A is derived on the spot."""
    a = monomial.lifted_matrix(params.a_latent, basis)
    return LiftedLTIModel(
        basis=basis,
        diffeo=params.diffeo,
        a_latent=np.asarray(params.a_latent, dtype=float),
        a=a,
        b=np.asarray(params.b, dtype=float),
        c=np.asarray(params.c, dtype=float),
        meta=dict(meta or {}),
    )


def lift_state(model, x):
    """z = lift(d(x)): the one nonlinear step of the prediction pipeline."""
    return monomial.lift(dif.forward(model.diffeo, x), model.basis)


def reconstruct(model, z):
    """x_hat = C z."""
    return np.asarray(z, dtype=float) @ model.c.T


@dataclass(frozen=True)
class Rollout:
    times: np.ndarray  # (T+1,)
    states: np.ndarray  # (T+1, d) predictions, first row = C z0
    truncated: bool = False


def predict_rollout(model, x0, inputs):
    """Discrete rollout z_{k+1} = A_d z_k + B_d u_k from z_0 = lift(d(x0)).

    The lift happens once; the recursion is purely linear.  If the lifted
    state blows up (unstable learned model) the rollout is truncated and
    flagged instead of emitting non-finite rows.
    """
    a_d, b_d = linalg.discretize(model.a, model.b, inputs.dt)
    z = lift_state(model, np.asarray(x0, dtype=float))
    states = [model.c @ z]
    truncated = False
    with np.errstate(over="ignore", invalid="ignore"):
        for u in inputs.values:
            z = a_d @ z + b_d @ u
            if not np.all(np.isfinite(z)):
                truncated = True
                break
            states.append(model.c @ z)
    states = np.array(states)
    times = np.arange(len(states)) * inputs.dt
    return Rollout(times=times, states=states, truncated=truncated)


@dataclass(frozen=True)
class TaylorLinearModel:
    """First-order Taylor baseline: xdot = A_lin (x - x_eq) + B u, with the
    identity read-out.  Shares the ZOH discretisation with the lifted model."""

    a_lin: np.ndarray
    b: np.ndarray
    x_eq: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def rollout(self, x0, inputs):
        a_d, b_d = linalg.discretize(self.a_lin, self.b, inputs.dt)
        delta = np.asarray(x0, dtype=float) - self.x_eq
        states = [self.x_eq + delta]
        truncated = False
        for u in inputs.values:
            delta = a_d @ delta + b_d @ u
            if not np.all(np.isfinite(delta)):
                truncated = True
                break
            states.append(self.x_eq + delta)
        states = np.array(states)
        return Rollout(
            times=np.arange(len(states)) * inputs.dt,
            states=states,
            truncated=truncated,
        )


def plant_jacobian_at_eq(plant, step=1e-6):
    """Analytic Jacobian when the plant carries one, else central finite
    differences of the autonomous field at the equilibrium."""
    if plant.jacobian_at_eq is not None:
        return np.asarray(plant.jacobian_at_eq, dtype=float)
    x_eq = plant.equilibrium
    cols = []
    for j in range(plant.d):
        e = np.zeros(plant.d)
        e[j] = step
        cols.append((plant.a(x_eq + e) - plant.a(x_eq - e)) / (2.0 * step))
    return np.stack(cols, axis=1)


def taylor_model(plant, dt=None):
    """Linear baseline model from the Jacobian linearization at the
    equilibrium.  dt is recorded for provenance; rollouts always
    discretise at the input signal's own dt."""
    return TaylorLinearModel(
        a_lin=plant_jacobian_at_eq(plant),
        b=np.asarray(plant.b_underline, dtype=float),
        x_eq=np.asarray(plant.equilibrium, dtype=float),
        meta={"plant": plant.name, "dt": dt},
    )


@dataclass(frozen=True)
class RMSEReport:
    """Per-trajectory prediction RMSE plus summary statistics."""

    per_trajectory: np.ndarray
    mean: float
    variance: float
    max: float
    median: float
    pooled: float  # RMSE over all samples of all trajectories
    per_state_mean: np.ndarray


def open_loop_rmse(predictor, trajectories, horizon=None):
    """RMSE of predictor rollouts against true trajectories.

    trajectories is a sequence of (states, InputSignal) pairs as produced
    by plant.simulate.  horizon (seconds) optionally limits the compared
    window.  The per-trajectory RMSE pools both state components and all
    time steps; mean/variance/max/median summarize across trajectories,
    and `pooled` is the RMSE over every sample of every trajectory.
    """
    rmses = []
    sq_sum = 0.0
    sq_count = 0
    per_state_acc = None
    for states, signal in trajectories:
        steps = len(states) - 1
        if horizon is not None:
            steps = min(steps, int(round(horizon / signal.dt)))
        pred = predictor.rollout(states[0], signal)
        n = min(steps + 1, len(pred.states))
        err = pred.states[:n] - states[:n]
        rmses.append(float(np.sqrt(np.mean(err**2))))
        sq_sum += float(np.sum(err**2))
        sq_count += err.size
        state_sq = np.mean(err**2, axis=0)
        per_state_acc = state_sq if per_state_acc is None else per_state_acc + state_sq
    rmses = np.array(rmses)
    return RMSEReport(
        per_trajectory=rmses,
        mean=float(np.mean(rmses)),
        variance=float(np.var(rmses, ddof=1)) if len(rmses) > 1 else 0.0,
        max=float(np.max(rmses)),
        median=float(np.median(rmses)),
        pooled=float(np.sqrt(sq_sum / sq_count)),
        per_state_mean=np.sqrt(per_state_acc / len(rmses)),
    )


# --------------------------------------------------------------------------
# Model file (versioned JSON with named numeric arrays; field order and
# semantics documented in the README).


def _mlp_to_json(net):
    return {
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _mlp_from_json(obj):
    return dif.MLPParams(
        weights=tuple(np.array(w, dtype=float) for w in obj["weights"]),
        biases=tuple(np.array(b, dtype=float) for b in obj["biases"]),
    )


def save_model(model, path):
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "d": model.d,
        "m": model.m,
        "p_bar": model.basis.p_bar,
        "basis": model.basis.alphas.tolist(),
        "a_latent": model.a_latent.tolist(),
        "a": model.a.tolist(),
        "b": model.b.tolist(),
        "c": model.c.tolist(),
        "diffeo": {
            "squash": model.diffeo.squash,
            "layers": [
                {
                    "passive": list(layer.passive),
                    "active": list(layer.active),
                    "s_net": _mlp_to_json(layer.s_net),
                    "t_net": _mlp_to_json(layer.t_net),
                }
                for layer in model.diffeo.layers
            ],
        },
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path):
    """Read a model file, recomputing A from A_latent and verifying it
    against the stored copy (catches corruption and basis-order drift)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ModelIntegrityError(f"not a {MODEL_FORMAT} file: {path}")
    if doc.get("version") != MODEL_VERSION:
        raise ModelIntegrityError(f"unsupported model version {doc.get('version')}")
    basis = monomial.build_basis(doc["d"], doc["p_bar"])
    stored_basis = np.array(doc["basis"], dtype=np.int64)
    if stored_basis.shape != basis.alphas.shape or np.any(stored_basis != basis.alphas):
        raise ModelIntegrityError("basis ordering in file differs from construction")
    layers = tuple(
        dif.CouplingLayerParams(
            passive=tuple(obj["passive"]),
            active=tuple(obj["active"]),
            s_net=_mlp_from_json(obj["s_net"]),
            t_net=_mlp_from_json(obj["t_net"]),
        )
        for obj in doc["diffeo"]["layers"]
    )
    diffeo = dif.DiffeoParams(layers=layers, squash=doc["diffeo"]["squash"])
    a_latent = np.array(doc["a_latent"], dtype=float)
    a_stored = np.array(doc["a"], dtype=float)
    a_derived = monomial.lifted_matrix(a_latent, basis)
    if not np.allclose(a_derived, a_stored, rtol=0.0, atol=1e-12 * (1 + np.abs(a_stored).max())):
        raise ModelIntegrityError(
            "stored lifted matrix disagrees with the one derived from A_latent"
        )
    return LiftedLTIModel(
        basis=basis,
        diffeo=diffeo,
        a_latent=a_latent,
        a=a_derived,
        b=np.array(doc["b"], dtype=float),
        c=np.array(doc["c"], dtype=float),
        meta=doc.get("meta", {}),
    )
