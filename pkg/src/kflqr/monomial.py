"""Monomial lifting: multi-index bookkeeping, y -> y^[p] evaluation,
the induced lifted system matrix, and the lifting Jacobian.

A basis over d latent coordinates with maximum total degree p contains
every monomial y^alpha with 1 <= |alpha| <= p (the constant is excluded),
ordered by total degree and, within a degree block, lexicographically
descending.  For d = 2 the degree-k block reads y1^k, y1^{k-1} y2, ...,
y2^k; for d = 2, p = 10 the basis has 65 elements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered multi-index set defining the lifting coordinates.

    alphas holds one exponent vector per row, shape (size, d).
    """

    d: int
    p_bar: int
    alphas: np.ndarray
    _positions: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def size(self):
        return self.alphas.shape[0]

    def index_of(self, alpha):
        """Exact position of an exponent vector in the basis ordering."""
        return self._positions[tuple(int(a) for a in alpha)]


def build_basis(d, p_bar):
    """Enumerate all multi-indices with 1 <= |alpha| <= p_bar.

    Ordering is graded (by total degree), then lexicographically
    descending within each degree block; the count is C(d + p_bar, d) - 1.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if p_bar < 1:
        raise ValueError(f"p_bar must be >= 1, got {p_bar}")
    rows = []
    for degree in range(1, p_bar + 1):
        block = [
            alpha
            for alpha in itertools.product(range(degree + 1), repeat=d)
            if sum(alpha) == degree
        ]
        block.sort(reverse=True)
        rows.extend(block)
    alphas = np.array(rows, dtype=np.int64)
    assert alphas.shape[0] == comb(d + p_bar, d) - 1
    positions = {tuple(int(a) for a in row): i for i, row in enumerate(alphas)}
    return MonomialBasis(d=d, p_bar=p_bar, alphas=alphas, _positions=positions)


def _power_table(y, p_bar):
    """pows[j][..., n] = y_j^n for n = 0..p_bar, built by repeated products."""
    d = y.shape[-1]
    tables = []
    for j in range(d):
        cols = [np.ones_like(y[..., j])]
        for _ in range(p_bar):
            cols.append(cols[-1] * y[..., j])
        tables.append(np.stack(cols, axis=-1))
    return tables


def lift(y, basis):
    """Evaluate the monomial vector z = y^[p] with z_i = prod_j y_j^alpha_ij.

    y may be a single vector (d,) or a batch (..., d); the result gains a
    trailing axis of length basis.size.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != basis.d:
        raise ValueError(f"expected trailing dimension {basis.d}, got {y.shape}")
    pows = _power_table(y, basis.p_bar)
    z = np.ones(y.shape[:-1] + (basis.size,))
    for j in range(basis.d):
        z = z * pows[j][..., basis.alphas[:, j]]
    return z


def lift_jacobian(y, basis):
    """Jacobian of lift: J[i, j] = alpha_ij * y^(alpha_i - e_j).

    Accepts (d,) or batched (..., d) input, returning (..., size, d).
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != basis.d:
        raise ValueError(f"expected trailing dimension {basis.d}, got {y.shape}")
    pows = _power_table(y, basis.p_bar)
    out = np.zeros(y.shape[:-1] + (basis.size, basis.d))
    for j in range(basis.d):
        exps = basis.alphas[:, j]
        term = exps * pows[j][..., np.maximum(exps - 1, 0)]
        for l in range(basis.d):
            if l != j:
                term = term * pows[l][..., basis.alphas[:, l]]
        out[..., :, j] = np.where(exps > 0, term, 0.0)
    return out


def lifted_matrix_pattern(basis):
    """Sparse coefficient pattern of the linear map A -> A_lift.

    Returns integer arrays (rows, cols, i_idx, j_idx, coeffs) such that
    A_lift[rows[k], cols[k]] accumulates coeffs[k] * A[i_idx[k], j_idx[k]].
    The pattern comes from d/dt y^alpha = sum_{i,j} alpha_i A_ij
    y^(alpha - e_i + e_j) along ydot = A y; it is what gradient code uses
    to backpropagate through the construction.
    """
    rows, cols, i_idx, j_idx, coeffs = [], [], [], [], []
    for row, alpha in enumerate(basis.alphas):
        for i in range(basis.d):
            if alpha[i] == 0:
                continue
            for j in range(basis.d):
                shifted = alpha.copy()
                shifted[i] -= 1
                shifted[j] += 1
                rows.append(row)
                cols.append(basis.index_of(shifted))
                i_idx.append(i)
                j_idx.append(j)
                coeffs.append(int(alpha[i]))
    return (
        np.array(rows, dtype=np.int64),
        np.array(cols, dtype=np.int64),
        np.array(i_idx, dtype=np.int64),
        np.array(j_idx, dtype=np.int64),
        np.array(coeffs, dtype=float),
    )


def lifted_matrix(a_latent, basis):
    """Matrix A_lift with d/dt y^[p] = A_lift y^[p] along ydot = A y.

    Block-diagonal by total degree and linear in A; the degree-1 block is
    A itself.
    """
    a_latent = np.asarray(a_latent, dtype=float)
    if a_latent.shape != (basis.d, basis.d):
        raise ValueError(
            f"latent matrix must be {basis.d}x{basis.d}, got {a_latent.shape}"
        )
    rows, cols, i_idx, j_idx, coeffs = lifted_matrix_pattern(basis)
    out = np.zeros((basis.size, basis.size))
    np.add.at(out, (rows, cols), coeffs * a_latent[i_idx, j_idx])
    return out
