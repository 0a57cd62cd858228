"""Learnable diffeomorphism built from affine coupling layers.

Each layer splits the coordinates into a passive set (copied through) and
an active set mapped to x_active * exp(s(x_passive)) + t(x_passive), where
s and t are small ELU MLPs.  The composition is exactly invertible, its
d x d Jacobian is assembled analytically layer by layer, and an optional
final element-wise tanh confines the output to the open unit box.

The raw scaling output is soft-clamped to (-10, 10) via 10*tanh(s/10) so
exp(s) cannot overflow with untrained weights; this keeps the map smooth
and bijective.

Everything here is plain numpy and operates on single vectors (d,) or
batches (N, d).  The training module mirrors forward() and jacobian() in
torch for backpropagation; tests pin the two paths against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCALE_CLAMP = 10.0


@dataclass(frozen=True)
class MLPParams:
    """Fully connected network: ELU hidden activations, identity output.

    weights[k] has shape (n_out_k, n_in_k); layers apply x @ W.T + b.
    """

    weights: tuple
    biases: tuple

    def __post_init__(self):
        for k in range(len(self.weights) - 1):
            if self.weights[k + 1].shape[1] != self.weights[k].shape[0]:
                raise ValueError(
                    f"layer {k + 1} expects {self.weights[k + 1].shape[1]} inputs "
                    f"but layer {k} emits {self.weights[k].shape[0]}"
                )
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise ValueError(f"bias shape {b.shape} mismatches weight {w.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite network parameter")

    @property
    def n_in(self):
        return self.weights[0].shape[1]

    @property
    def n_out(self):
        return self.weights[-1].shape[0]


@dataclass(frozen=True)
class CouplingLayerParams:
    """One affine coupling layer: which coordinates pass through, which
    get scaled/shifted, and the two networks computing the scale and shift
    from the passive coordinates."""

    passive: tuple
    active: tuple
    s_net: MLPParams
    t_net: MLPParams

    def __post_init__(self):
        if not self.passive or not self.active:
            raise ValueError("passive and active sets must both be nonempty")
        if set(self.passive) & set(self.active):
            raise ValueError("passive and active sets overlap")
        d = len(self.passive) + len(self.active)
        if set(self.passive) | set(self.active) != set(range(d)):
            raise ValueError("passive and active sets must partition 0..d-1")
        for net, name in ((self.s_net, "s_net"), (self.t_net, "t_net")):
            if net.n_in != len(self.passive) or net.n_out != len(self.active):
                raise ValueError(
                    f"{name} must map {len(self.passive)} -> {len(self.active)}, "
                    f"got {net.n_in} -> {net.n_out}"
                )

    @property
    def dim(self):
        return len(self.passive) + len(self.active)


@dataclass(frozen=True)
class DiffeoParams:
    """Stack of coupling layers, optionally followed by element-wise tanh."""

    layers: tuple
    squash: bool = True

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one coupling layer")
        dims = {layer.dim for layer in self.layers}
        if len(dims) != 1:
            raise ValueError(f"inconsistent layer dimensions {dims}")

    @property
    def dim(self):
        return self.layers[0].dim


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_prime(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def mlp_forward(net, x):
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k < last:
            h = elu(h)
    return h


def mlp_forward_with_jacobian(net, x):
    """Value and Jacobian w.r.t. the input, shape (..., n_out, n_in).

    Propagates a tangent basis through the layers (forward mode; input
    width is at most d - 1 here, so this is cheap and exact).
    """
    h = x
    jac = np.broadcast_to(
        np.eye(net.n_in), x.shape[:-1] + (net.n_in, net.n_in)
    ).copy()
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = h @ w.T + b
        jac = np.einsum("oi,...ip->...op", w, jac)
        if k < last:
            jac = elu_prime(pre)[..., :, None] * jac
            h = elu(pre)
        else:
            h = pre
    return h, jac


def _soft_clamp(s):
    return SCALE_CLAMP * np.tanh(s / SCALE_CLAMP)


def _soft_clamp_prime(s):
    return 1.0 - np.tanh(s / SCALE_CLAMP) ** 2


def coupling_forward(layer, x):
    """Copy the passive coordinates, map the active ones to
    x_active * exp(s(x_passive)) + t(x_passive)."""
    x = np.asarray(x, dtype=float)
    xa = x[..., layer.passive]
    s = _soft_clamp(mlp_forward(layer.s_net, xa))
    t = mlp_forward(layer.t_net, xa)
    y = x.copy()
    y[..., layer.active] = x[..., layer.active] * np.exp(s) + t
    return y


def coupling_inverse(layer, y):
    """Exact algebraic inverse: x_active = (y_active - t) * exp(-s)."""
    y = np.asarray(y, dtype=float)
    ya = y[..., layer.passive]
    s = _soft_clamp(mlp_forward(layer.s_net, ya))
    t = mlp_forward(layer.t_net, ya)
    x = y.copy()
    x[..., layer.active] = (y[..., layer.active] - t) * np.exp(-s)
    return x


def forward(params, x):
    """Apply all coupling layers in order, then tanh if squash is set."""
    y = np.asarray(x, dtype=float)
    for layer in params.layers:
        y = coupling_forward(layer, y)
    if params.squash:
        y = np.tanh(y)
    return y


def inverse(params, y):
    """Exact inverse of forward; requires |y|_inf < 1 when squash is set."""
    x = np.asarray(y, dtype=float)
    if params.squash:
        if np.any(np.abs(x) >= 1.0):
            raise ValueError("inverse with squash requires all |y_i| < 1")
        x = np.arctanh(x)
    for layer in reversed(params.layers):
        x = coupling_inverse(layer, x)
    return x


def _coupling_jacobian(layer, x):
    """Analytic d x d Jacobian of one coupling layer at x (batched)."""
    d = layer.dim
    xa = x[..., layer.passive]
    s_raw, js_raw = mlp_forward_with_jacobian(layer.s_net, xa)
    t, jt = mlp_forward_with_jacobian(layer.t_net, xa)
    s = _soft_clamp(s_raw)
    js = _soft_clamp_prime(s_raw)[..., :, None] * js_raw
    scale = np.exp(s)
    xb = x[..., layer.active]

    jac = np.zeros(x.shape[:-1] + (d, d))
    for p in layer.passive:
        jac[..., p, p] = 1.0
    for r, a in enumerate(layer.active):
        jac[..., a, a] = scale[..., r]
        for c, p in enumerate(layer.passive):
            jac[..., a, p] = (
                xb[..., r] * scale[..., r] * js[..., r, c] + jt[..., r, c]
            )
    return jac


def jacobian(params, x):
    """Jacobian of forward at x: chain of per-layer analytic Jacobians,
    times diag(1 - tanh^2) for the squash.  Shape (..., d, d)."""
    y = np.asarray(x, dtype=float)
    jac = None
    for layer in params.layers:
        jl = _coupling_jacobian(layer, y)
        jac = jl if jac is None else jl @ jac
        y = coupling_forward(layer, y)
    if params.squash:
        jac = (1.0 - np.tanh(y) ** 2)[..., :, None] * jac
    return jac


def jacobian_det(params, x):
    """det of the forward Jacobian, from the per-layer scale factors.

    Coupling-layer Jacobians are triangular under the mask permutation, so
    the determinant is the product of exp(s) factors times the squash
    derivatives; it is strictly positive by construction.
    """
    y = np.asarray(x, dtype=float)
    logdet = np.zeros(y.shape[:-1])
    for layer in params.layers:
        ya = y[..., layer.passive]
        s = _soft_clamp(mlp_forward(layer.s_net, ya))
        logdet = logdet + np.sum(s, axis=-1)
        y = coupling_forward(layer, y)
    if params.squash:
        logdet = logdet + np.sum(np.log1p(-np.tanh(y) ** 2), axis=-1)
    return np.exp(logdet)


def init_mlp(n_in, n_out, hidden, rng, zero_last=True):
    """Glorot-uniform weights, zero biases; the output layer starts at
    zero so a fresh coupling layer is the identity map."""
    sizes = [n_in, *hidden, n_out]
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if zero_last and k == len(sizes) - 2:
            w = np.zeros_like(w)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MLPParams(weights=tuple(weights), biases=tuple(biases))


def init_diffeo(d, n_layers, hidden, rng, squash=True):
    """Near-identity stack of n_layers coupling layers over d coordinates.

    The single passive coordinate rotates through 0..d-1 so every
    coordinate is eventually transformed; for d = 2 the masks alternate.
    """
    if d < 2:
        raise ValueError("coupling layers require d >= 2")
    if n_layers < 1:
        raise ValueError("need at least one coupling layer")
    layers = []
    for i in range(n_layers):
        passive = (i % d,)
        active = tuple(sorted(set(range(d)) - set(passive)))
        layers.append(
            CouplingLayerParams(
                passive=passive,
                active=active,
                s_net=init_mlp(len(passive), len(active), hidden, rng),
                t_net=init_mlp(len(passive), len(active), hidden, rng),
            )
        )
    return DiffeoParams(layers=tuple(layers), squash=squash)
