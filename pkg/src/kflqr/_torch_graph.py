"""Private torch mirror of the batch loss.

The public loss functions in training.py are plain numpy and serve as the
readable reference; this module rebuilds the identical computation as a
torch graph over a single flat parameter vector so reverse-mode autodiff
and the optimizer loop run fast.  Tests pin the two paths against each
other to 1e-12 and against finite differences.

The layout of the flat vector is defined by training.param_spec and shared
with the numpy flatten/unflatten helpers.
"""

from __future__ import annotations

import numpy as np
import torch

from . import monomial
from .diffeo import SCALE_CLAMP

COND_LIMIT = 1e12


def _unpack_theta(theta, template, spec):
    """Split the flat tensor into named views following the shared spec."""
    tensors = {}
    idx = 0
    for path, shape in spec:
        n = int(np.prod(shape, dtype=int)) if shape else 1
        tensors[path] = theta[idx : idx + n].reshape(shape)
        idx += n
    if idx != theta.numel():
        raise ValueError(f"flat vector has {theta.numel()} entries, spec uses {idx}")
    return tensors


def _mlp(tensors, prefix, n_linear, x):
    h = x
    for k in range(n_linear):
        h = h @ tensors[f"{prefix}.w{k}"].T + tensors[f"{prefix}.b{k}"]
        if k < n_linear - 1:
            h = torch.nn.functional.elu(h)
    return h


def _mlp_with_jacobian(tensors, prefix, n_linear, x):
    h = x
    n_in = tensors[f"{prefix}.w0"].shape[1]
    jac = torch.eye(n_in, dtype=x.dtype).expand(x.shape[0], n_in, n_in)
    for k in range(n_linear):
        w = tensors[f"{prefix}.w{k}"]
        pre = h @ w.T + tensors[f"{prefix}.b{k}"]
        jac = torch.einsum("oi,nip->nop", w, jac)
        if k < n_linear - 1:
            act = torch.nn.functional.elu(pre)
            jac = torch.where(pre > 0, 1.0, torch.exp(torch.clamp(pre, max=0.0)))[
                :, :, None
            ] * jac
            h = act
        else:
            h = pre
    return h, jac


class LossGraph:
    """Torch re-implementation of batch_losses over a flat parameter vector."""

    def __init__(self, template, basis, spec):
        self.template = template
        self.spec = spec
        self.basis = basis
        self.d = basis.d
        self.alphas = torch.from_numpy(basis.alphas)
        rows, cols, ii, jj, coeffs = monomial.lifted_matrix_pattern(basis)
        self.pat_rows = torch.from_numpy(rows)
        self.pat_cols = torch.from_numpy(cols)
        self.pat_i = torch.from_numpy(ii)
        self.pat_j = torch.from_numpy(jj)
        self.pat_coeffs = torch.from_numpy(coeffs)
        self.layer_info = []
        for i, layer in enumerate(template.diffeo.layers):
            self.layer_info.append(
                (
                    layer.passive,
                    layer.active,
                    f"layer{i}.s",
                    f"layer{i}.t",
                    len(layer.s_net.weights),
                    len(layer.t_net.weights),
                )
            )
        self.squash = template.diffeo.squash

    def _flow(self, tensors, x, need_jacobian):
        """Diffeomorphism forward pass, optionally with the chained
        analytic Jacobian (mirrors diffeo.forward / diffeo.jacobian)."""
        y = x
        jac = None
        for passive, active, s_prefix, t_prefix, ns, nt in self.layer_info:
            ya = y[:, list(passive)]
            yb = y[:, list(active)]
            if need_jacobian:
                s_raw, js_raw = _mlp_with_jacobian(tensors, s_prefix, ns, ya)
                t_val, jt = _mlp_with_jacobian(tensors, t_prefix, nt, ya)
            else:
                s_raw = _mlp(tensors, s_prefix, ns, ya)
                t_val = _mlp(tensors, t_prefix, nt, ya)
            s = SCALE_CLAMP * torch.tanh(s_raw / SCALE_CLAMP)
            scale = torch.exp(s)
            yb_new = yb * scale + t_val

            if need_jacobian:
                js = (1.0 - torch.tanh(s_raw / SCALE_CLAMP) ** 2)[:, :, None] * js_raw
                zero = torch.zeros_like(y[:, 0])
                one = torch.ones_like(y[:, 0])
                entries = [[zero] * self.d for _ in range(self.d)]
                for p in passive:
                    entries[p][p] = one
                for k, a in enumerate(active):
                    entries[a][a] = scale[:, k]
                    for c, p in enumerate(passive):
                        entries[a][p] = (
                            yb[:, k] * scale[:, k] * js[:, k, c] + jt[:, k, c]
                        )
                jl = torch.stack(
                    [torch.stack(row, dim=1) for row in entries], dim=1
                )
                jac = jl if jac is None else torch.bmm(jl, jac)

            cols = [None] * self.d
            for k, p in enumerate(passive):
                cols[p] = ya[:, k]
            for k, a in enumerate(active):
                cols[a] = yb_new[:, k]
            y = torch.stack(cols, dim=1)
        if self.squash:
            th = torch.tanh(y)
            if need_jacobian:
                jac = (1.0 - th**2)[:, :, None] * jac
            y = th
        return y, jac

    def _lift(self, y):
        pows = []
        for j in range(self.d):
            cols = [torch.ones_like(y[:, j])]
            for _ in range(self.basis.p_bar):
                cols.append(cols[-1] * y[:, j])
            pows.append(torch.stack(cols, dim=1))
        z = pows[0][:, self.alphas[:, 0]]
        for j in range(1, self.d):
            z = z * pows[j][:, self.alphas[:, j]]
        return z

    def _lifted_matrix(self, a_lat):
        vals = self.pat_coeffs * a_lat[self.pat_i, self.pat_j]
        out = torch.zeros(
            self.basis.size, self.basis.size, dtype=a_lat.dtype
        )
        return out.index_put((self.pat_rows, self.pat_cols), vals, accumulate=True)

    def losses(self, theta, x, u, xdot, weights):
        """Per-batch weighted loss; returns (total, pred_sum, rec_sum,
        se_sum, n_skipped) where the sums are over per-sample terms and
        total is the weighted sum divided by the batch size."""
        tensors = _unpack_theta(theta, self.template, self.spec)
        a_lat = tensors["a_latent"]
        b = tensors["b"]
        c = tensors["c"]

        y, jac = self._flow(tensors, x, need_jacobian=weights[2] != 0.0)
        z = self._lift(y)
        a_lift = self._lifted_matrix(a_lat)

        zdot = z @ a_lift.T + u @ b.T
        pred_res = xdot - zdot @ c.T
        pred_terms = (pred_res**2).sum(dim=1)

        rec_res = x - z @ c.T
        rec_terms = (rec_res**2).sum(dim=1)

        if jac is not None:
            with torch.no_grad():
                cond = torch.linalg.cond(jac.detach())
                keep = torch.isfinite(cond) & (cond <= COND_LIMIT)
            eye = torch.eye(self.d, dtype=x.dtype)
            jac_safe = torch.where(keep[:, None, None], jac, eye)
            rhs = y @ a_lat.T
            se_sol = torch.linalg.solve(jac_safe, rhs.unsqueeze(-1)).squeeze(-1)
            se_res = xdot - se_sol
            se_terms = torch.where(keep, (se_res**2).sum(dim=1), torch.zeros(()).to(x))
            n_skipped = int((~keep).sum())
        else:
            se_terms = torch.zeros_like(pred_terms)
            n_skipped = 0

        n = x.shape[0]
        pred_sum = pred_terms.sum()
        rec_sum = rec_terms.sum()
        se_sum = se_terms.sum()
        total = (
            weights[0] * pred_sum + weights[1] * rec_sum + weights[2] * se_sum
        ) / n
        return total, pred_sum, rec_sum, se_sum, n_skipped
