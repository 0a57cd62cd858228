"""Shared helpers: random diffeomorphisms and model parameters."""

import numpy as np

from kflqr.diffeo import CouplingLayerParams, DiffeoParams, MLPParams
from kflqr.training import ModelParams


def random_mlp(rng, n_in, n_out, hidden=(16, 16), scale=0.25):
    """Generic MLP with nonzero output layer (unlike the training init).

    Weights are kept moderate so scale factors exp(s) stay in a realistic
    range; hugely scaled random nets saturate the tanh squash to exactly
    1.0 in float64, which is outside the regime training ever visits.
    """
    sizes = [n_in, *hidden, n_out]
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        weights.append(scale * rng.standard_normal((sizes[k + 1], sizes[k])) / np.sqrt(sizes[k]))
        biases.append(scale * rng.standard_normal(sizes[k + 1]))
    return MLPParams(weights=tuple(weights), biases=tuple(biases))


def random_diffeo(rng, d=2, n_layers=3, hidden=(16, 16), squash=True, scale=0.25):
    layers = []
    for i in range(n_layers):
        passive = (i % d,)
        active = tuple(sorted(set(range(d)) - set(passive)))
        layers.append(
            CouplingLayerParams(
                passive=passive,
                active=active,
                s_net=random_mlp(rng, len(passive), len(active), hidden, scale),
                t_net=random_mlp(rng, len(passive), len(active), hidden, scale),
            )
        )
    return DiffeoParams(layers=tuple(layers), squash=squash)


def random_model(rng, basis, m=1, n_layers=2, hidden=(8, 8), squash=True, scale=0.25):
    return ModelParams(
        a_latent=rng.standard_normal((basis.d, basis.d)),
        b=rng.standard_normal((basis.size, m)),
        c=rng.standard_normal((basis.d, basis.size)),
        diffeo=random_diffeo(rng, basis.d, n_layers, hidden, squash, scale),
    )


def random_batch(rng, basis, n=6, m=1, box=1.5):
    x = rng.uniform(-box, box, size=(n, basis.d))
    u = rng.uniform(-1.0, 1.0, size=(n, m))
    xdot = rng.standard_normal((n, basis.d))
    return x, u, xdot
