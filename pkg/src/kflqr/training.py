"""The three-term training objective, its gradient, and the ADAM loop
that produces (A_latent, B, C, diffeomorphism) from sampled data.

The objective over a batch of tuples (x, u, xdot) is the weighted mean of

  prediction      |xdot - C (A_lift psi(x) + B u)|^2
  reconstruction  |x - C psi(x)|^2
  equivalence     |xdot - J_d(x)^{-1} A_latent d(x)|^2

with psi = (monomial lift) o (diffeomorphism d).  The equivalence term
softly enforces that d maps the plant's autonomous field onto the latent
linear field; samples whose diffeomorphism Jacobian is ill-conditioned
(condition estimate above 1e12) are dropped from that term and counted.

The loss functions in this file are plain numpy and act as the readable
reference path; gradients and the optimizer loop run through the torch
mirror in _torch_graph (imported lazily), which rebuilds the identical
computation over a single flat parameter vector.  Both paths share the
flat layout defined by param_spec, and determinism is guaranteed by
driving all randomness from one numpy generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffeo as dif
from . import monomial

COND_LIMIT = 1e12


class TrainingError(RuntimeError):
    """Non-finite loss/gradient or divergence during training."""


@dataclass(frozen=True)
class Hyperparams:
    """Everything that defines a training run."""

    p_bar: int
    epochs: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None  # None = full batch
    w_pred: float = 1.0
    w_rec: float = 1.0
    w_se: float = 1.0
    seed: int = 0
    squash: bool = True
    hidden: tuple = (120, 120, 120)
    n_coupling_layers: int = 7
    mode: str = "joint"  # "joint" or "two_phase"

    def __post_init__(self):
        if self.p_bar < 1:
            raise ValueError("p_bar must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if min(self.w_pred, self.w_rec, self.w_se) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.mode not in ("joint", "two_phase"):
            raise ValueError(f"unknown training mode '{self.mode}'")

    @property
    def weights(self):
        return (self.w_pred, self.w_rec, self.w_se)


@dataclass(frozen=True)
class ModelParams:
    """Learnable parameters: latent dynamics, lifted input matrix,
    reconstruction matrix, and the diffeomorphism."""

    a_latent: np.ndarray  # (d, d)
    b: np.ndarray  # (D, m)
    c: np.ndarray  # (d, D)
    diffeo: dif.DiffeoParams


@dataclass(frozen=True)
class Gradient:
    """Partial derivatives, mirroring the ModelParams tree (the diffeo
    field reuses DiffeoParams purely as an array container)."""

    a_latent: np.ndarray
    b: np.ndarray
    c: np.ndarray
    diffeo: dif.DiffeoParams


@dataclass
class TrainingLog:
    """Per-epoch unweighted loss-component means plus diagnostics."""

    epoch: list = field(default_factory=list)
    loss_pred: list = field(default_factory=list)
    loss_rec: list = field(default_factory=list)
    loss_se: list = field(default_factory=list)
    total: list = field(default_factory=list)
    skipped_samples: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, epoch, pred, rec, se, total, skipped):
        self.epoch.append(epoch)
        self.loss_pred.append(pred)
        self.loss_rec.append(rec)
        self.loss_se.append(se)
        self.total.append(total)
        self.skipped_samples.append(skipped)

    def write_csv(self, path, provenance=None):
        with open(path, "w") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write("epoch,loss_pred,loss_rec,loss_se,total,skipped_samples\n")
            for row in zip(
                self.epoch,
                self.loss_pred,
                self.loss_rec,
                self.loss_se,
                self.total,
                self.skipped_samples,
            ):
                fh.write(",".join(repr(v) for v in row) + "\n")


# --------------------------------------------------------------------------
# Reference losses (numpy).  x may be a single sample (d,) or a batch (N, d).


def _features(params, basis, x):
    y = dif.forward(params.diffeo, x)
    return y, monomial.lift(y, basis)


def loss_prediction(params, basis, x, u, xdot):
    """Squared norm of xdot - C (A_lift psi(x) + B u), per sample."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    _, z = _features(params, basis, x)
    a_lift = monomial.lifted_matrix(params.a_latent, basis)
    zdot = z @ a_lift.T + u @ params.b.T
    res = xdot - zdot @ params.c.T
    return np.sum(res**2, axis=-1)


def loss_reconstruction(params, basis, x):
    """Squared norm of x - C psi(x), per sample."""
    x = np.asarray(x, dtype=float)
    _, z = _features(params, basis, x)
    res = x - z @ params.c.T
    return np.sum(res**2, axis=-1)


def loss_se(params, x, xdot):
    """Squared norm of xdot - J_d(x)^{-1} A_latent d(x), per sample.

    The linear solve goes through the analytic diffeomorphism Jacobian;
    conditioning is the caller's concern (see batch_losses).
    """
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    y = dif.forward(params.diffeo, x)
    jac = dif.jacobian(params.diffeo, x)
    rhs = y @ params.a_latent.T
    sol = np.linalg.solve(jac, rhs[..., :, None])[..., 0]
    res = xdot - sol
    return np.sum(res**2, axis=-1)


@dataclass(frozen=True)
class BatchLosses:
    """Weighted batch objective and its unweighted component means."""

    total: float
    pred_mean: float
    rec_mean: float
    se_mean: float
    skipped: int


def batch_losses(params, basis, batch, weights):
    """Reference evaluation of the batch objective.

    batch is a tuple (x, u, xdot) of arrays with matching leading
    dimension.  Samples with ill-conditioned J_d are excluded from the
    equivalence term (their contribution is zero) and counted.
    """
    x, u, xdot = (np.atleast_2d(np.asarray(a, dtype=float)) for a in batch)
    n = x.shape[0]
    pred = loss_prediction(params, basis, x, u, xdot)
    rec = loss_reconstruction(params, basis, x)
    if weights[2] != 0.0:
        jac = dif.jacobian(params.diffeo, x)
        cond = np.linalg.cond(jac)
        keep = np.isfinite(cond) & (cond <= COND_LIMIT)
        y = dif.forward(params.diffeo, x)
        jac_safe = np.where(keep[:, None, None], jac, np.eye(basis.d))
        rhs = y @ params.a_latent.T
        sol = np.linalg.solve(jac_safe, rhs[..., :, None])[..., 0]
        se = np.where(keep, np.sum((xdot - sol) ** 2, axis=-1), 0.0)
        skipped = int(np.sum(~keep))
    else:
        se = np.zeros(n)
        skipped = 0
    total = (
        weights[0] * np.sum(pred) + weights[1] * np.sum(rec) + weights[2] * np.sum(se)
    ) / n
    return BatchLosses(
        total=float(total),
        pred_mean=float(np.mean(pred)),
        rec_mean=float(np.mean(rec)),
        se_mean=float(np.mean(se)),
        skipped=skipped,
    )


def total_loss(params, basis, batch, weights):
    """Weighted sum of the three per-sample losses, divided by batch size."""
    return batch_losses(params, basis, batch, weights).total


# --------------------------------------------------------------------------
# Flat parameter layout shared by the numpy and torch paths.


def param_spec(params):
    """Ordered (path, shape) pairs defining the flat parameter layout:
    a_latent, b, c, then per coupling layer the s- and t-network weight
    and bias arrays in layer order."""
    spec = [
        ("a_latent", params.a_latent.shape),
        ("b", params.b.shape),
        ("c", params.c.shape),
    ]
    for i, layer in enumerate(params.diffeo.layers):
        for net_name, net in (("s", layer.s_net), ("t", layer.t_net)):
            for k, (w, bb) in enumerate(zip(net.weights, net.biases)):
                spec.append((f"layer{i}.{net_name}.w{k}", w.shape))
                spec.append((f"layer{i}.{net_name}.b{k}", bb.shape))
    return spec


def _param_arrays(params):
    arrays = [params.a_latent, params.b, params.c]
    for layer in params.diffeo.layers:
        for net in (layer.s_net, layer.t_net):
            for w, bb in zip(net.weights, net.biases):
                arrays.extend([w, bb])
    return arrays


def flatten_params(params):
    """Concatenate all parameters into one float64 vector (spec order)."""
    return np.concatenate([np.asarray(a, dtype=float).ravel() for a in _param_arrays(params)])


def unflatten_params(vec, template, cls=ModelParams):
    """Rebuild a ModelParams (or Gradient) tree from a flat vector, taking
    masks and the squash flag from the template."""
    spec = param_spec(template)
    views = {}
    idx = 0
    for path, shape in spec:
        n = int(np.prod(shape, dtype=int)) if shape else 1
        views[path] = vec[idx : idx + n].reshape(shape).copy()
        idx += n
    if idx != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, spec uses {idx}")
    layers = []
    for i, layer in enumerate(template.diffeo.layers):
        nets = {}
        for net_name, net in (("s", layer.s_net), ("t", layer.t_net)):
            n_linear = len(net.weights)
            nets[net_name] = dif.MLPParams(
                weights=tuple(views[f"layer{i}.{net_name}.w{k}"] for k in range(n_linear)),
                biases=tuple(views[f"layer{i}.{net_name}.b{k}"] for k in range(n_linear)),
            )
        layers.append(
            dif.CouplingLayerParams(
                passive=layer.passive,
                active=layer.active,
                s_net=nets["s"],
                t_net=nets["t"],
            )
        )
    diffeo = dif.DiffeoParams(layers=tuple(layers), squash=template.diffeo.squash)
    return cls(a_latent=views["a_latent"], b=views["b"], c=views["c"], diffeo=diffeo)


# --------------------------------------------------------------------------
# ADAM


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def _adam_vec_step(vec, grad, state, hyper):
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad**2
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    new_vec = vec - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new_vec, AdamState(m=m, v=v, t=t)


def adam_step(params, grad, state, hyper):
    """One bias-corrected ADAM update; returns (new params, new state)."""
    vec = flatten_params(params)
    gvec = flatten_params(grad)
    new_vec, new_state = _adam_vec_step(vec, gvec, state, hyper)
    return unflatten_params(new_vec, params), new_state


# --------------------------------------------------------------------------
# Gradients and the training loop (torch-backed).


def _make_graph(params, basis):
    from . import _torch_graph

    return _torch_graph.LossGraph(params, basis, param_spec(params))


def grad_total_loss(params, basis, batch, weights):
    """Exact reverse-mode gradient of total_loss w.r.t. every parameter.

    Differentiates through the diffeomorphism networks, through the
    Jacobian solve inside the equivalence term, and through the sparse
    linear map A_latent -> A_lift.  Raises TrainingError on non-finite
    losses (reporting the first offending sample) or gradients.
    """
    import torch

    x, u, xdot = (np.atleast_2d(np.asarray(a, dtype=float)) for a in batch)
    graph = _make_graph(params, basis)
    theta = torch.from_numpy(flatten_params(params))
    theta.requires_grad_(True)
    total, pred_sum, rec_sum, se_sum, _ = graph.losses(
        theta,
        torch.from_numpy(x),
        torch.from_numpy(u),
        torch.from_numpy(xdot),
        weights,
    )
    if not bool(torch.isfinite(total.detach())):
        per_sample = loss_prediction(params, basis, x, u, xdot) + loss_reconstruction(
            params, basis, x
        )
        try:
            per_sample = per_sample + loss_se(params, x, xdot)
        except np.linalg.LinAlgError:
            pass
        bad = np.flatnonzero(~np.isfinite(per_sample))
        idx = int(bad[0]) if len(bad) else -1
        raise TrainingError(f"non-finite loss (first offending sample index {idx})")
    total.backward()
    gvec = theta.grad.numpy()
    if not np.all(np.isfinite(gvec)):
        raise TrainingError("non-finite gradient in backward pass")
    return unflatten_params(gvec, params, cls=Gradient)


def init_params(basis, hyper, rng, m=1, probe_x=None):
    """Starting point for training: a near-identity diffeomorphism with
    A_latent = -I + small noise, B = 0, and C fitted by least squares from
    probe states to their initial liftings (reconstruction starts close to
    optimal).  Falls back to C = [I 0] without probe data."""
    d = basis.d
    a_latent = -np.eye(d) + 0.01 * rng.standard_normal((d, d))
    diffeo = dif.init_diffeo(
        d, hyper.n_coupling_layers, hyper.hidden, rng, squash=hyper.squash
    )
    if probe_x is not None and len(probe_x) >= d:
        psi = monomial.lift(dif.forward(diffeo, probe_x), basis)
        # lifted monomials are highly collinear; the rcond cutoff keeps the
        # fitted C from inverting noise directions and exploding off-probe
        c_t, *_ = np.linalg.lstsq(psi, probe_x, rcond=1e-6)
        c = c_t.T
    else:
        c = np.zeros((d, basis.size))
        c[:, :d] = np.eye(d)
    b = np.zeros((basis.size, m))
    return ModelParams(a_latent=a_latent, b=b, c=c, diffeo=diffeo)


def fit_input_matrix(params, basis, x, u, xdot):
    """Closed-form least squares for B on residuals xdot - C A_lift psi(x).

    Only the product C B is identifiable from data; the minimum-norm B
    consistent with the fitted product is returned.
    """
    _, z = _features(params, basis, x)
    a_lift = monomial.lifted_matrix(params.a_latent, basis)
    resid = xdot - (z @ a_lift.T) @ params.c.T
    g_t, *_ = np.linalg.lstsq(u, resid, rcond=None)  # (m, d) with u @ g_t ~ resid
    b = np.linalg.pinv(params.c) @ g_t.T
    return replace(params, b=b)


def _unforced_mask(u):
    return np.all(u == 0.0, axis=1)


def train(dataset, basis, hyper, init=None, callback=None):
    """Run epochs of shuffled-minibatch ADAM over the dataset.

    Returns (params, TrainingLog).  Deterministic for a fixed seed: one
    numpy generator drives initialization and shuffling, and the torch
    graph is purely functional.  Mode "two_phase" first trains
    (A_latent, C, d) on the unforced records (u = 0, where B has no
    gradient), then fits B by least squares on the forced records.

    Raises TrainingError on divergence (total loss above 1e12 or
    non-finite), attaching the partial log.
    """
    import torch

    x_all = np.asarray(dataset.x, dtype=float)
    u_all = np.asarray(dataset.u, dtype=float)
    xd_all = np.asarray(dataset.xdot, dtype=float)
    if len(x_all) == 0:
        raise ValueError("dataset is empty")

    if hyper.mode == "two_phase":
        unforced = _unforced_mask(u_all)
        if not unforced.any():
            raise ValueError("two_phase mode needs unforced (u = 0) records")
        if unforced.all():
            raise ValueError("two_phase mode needs forced records to fit B")
        x_fit, u_fit, xd_fit = x_all[~unforced], u_all[~unforced], xd_all[~unforced]
        x_all, u_all, xd_all = x_all[unforced], u_all[unforced], xd_all[unforced]

    n = len(x_all)
    rng = np.random.default_rng(hyper.seed)
    # strided probe covers all trajectories instead of just the first one
    probe = x_all[:: max(1, n // 256)][:256]
    params0 = init if init is not None else init_params(
        basis, hyper, rng, m=u_all.shape[1], probe_x=probe
    )
    vec = flatten_params(params0)
    state = AdamState.zeros(vec.size)
    graph = _make_graph(params0, basis)
    log = TrainingLog(meta={"n_samples": n, "mode": hyper.mode})

    x_t = torch.from_numpy(x_all)
    u_t = torch.from_numpy(u_all)
    xd_t = torch.from_numpy(xd_all)
    batch = n if hyper.batch_size is None else min(hyper.batch_size, n)

    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        pred_acc = rec_acc = se_acc = 0.0
        skipped_acc = 0
        seen = 0
        for lo in range(0, n, batch):
            idx = torch.from_numpy(perm[lo : lo + batch])
            theta = torch.from_numpy(vec)
            theta.requires_grad_(True)
            total, pred_sum, rec_sum, se_sum, skipped = graph.losses(
                theta, x_t[idx], u_t[idx], xd_t[idx], hyper.weights
            )
            total_val = float(total.detach())
            if not np.isfinite(total_val) or total_val > 1e12:
                log.meta["diverged_at_epoch"] = epoch
                err = TrainingError(
                    f"training diverged at epoch {epoch} (total loss {total_val:.3e})"
                )
                err.log = log
                raise err
            total.backward()
            grad = theta.grad.numpy()
            if not np.all(np.isfinite(grad)):
                err = TrainingError(f"non-finite gradient at epoch {epoch}")
                err.log = log
                raise err
            vec, state = _adam_vec_step(vec, grad, state, hyper)
            pred_acc += float(pred_sum.detach())
            rec_acc += float(rec_sum.detach())
            se_acc += float(se_sum.detach())
            skipped_acc += skipped
            seen += len(idx)
        total_mean = (
            hyper.w_pred * pred_acc + hyper.w_rec * rec_acc + hyper.w_se * se_acc
        ) / seen
        log.append(
            epoch, pred_acc / seen, rec_acc / seen, se_acc / seen, total_mean,
            skipped_acc,
        )
        if callback is not None:
            callback(epoch, log)

    params = unflatten_params(vec, params0)
    if hyper.mode == "two_phase":
        params = fit_input_matrix(params, basis, x_fit, u_fit, xd_fit)
        log.meta["b_fit_records"] = len(x_fit)
    return params, log
