"""Space-invariant B-spline two-scale kernels and the space-varying Gram tensor.

kernel_weight gives the two-scale coefficients a(d) linking a parent basis
function to its children: order 1 (box) has unit weights on d in {0,1}^3,
order 2 (tri-linear hat) has 2^(-|d|_1) on d in {-1,0,1}^3.

The Gram tensor holds the basis inner products per node as a 27-slot stencil
over the node's {-1,0,1}^3 neighborhood; it is the identity at the finest
level and is propagated coarser by G_ell = A_ell G_{ell+1} A_ell^T.
"""

import numpy as np
import scipy.sparse as sp

from .geometry import NBR_OFFSETS, CENTER_SLOT

# below this node count, stencil operators are applied as dense arrays
# (measured crossover vs csr dispatch overhead for (N,3) right-hand sides)
DENSE_CUTOFF = 256


def kernel_weight(order, d):
    """Two-scale weight a(d) for offset d = m - 2n (child m, parent n)."""
    d = np.asarray(d, dtype=np.int64)
    if order == 1:
        return 1.0 if np.all((d == 0) | (d == 1)) else 0.0
    if order == 2:
        return float(2.0 ** (-np.abs(d).sum())) if np.all(np.abs(d) <= 1) else 0.0
    raise ValueError("order must be 1 or 2")


def kernel_weights(order, dvecs):
    """Vectorized kernel_weight over an (E,3) offset array."""
    d = np.asarray(dvecs, dtype=np.int64)
    if order == 1:
        ok = np.all((d == 0) | (d == 1), axis=1)
        return ok.astype(np.float64)
    if order == 2:
        ok = np.all(np.abs(d) <= 1, axis=1)
        return np.where(ok, 2.0 ** (-np.abs(d).sum(axis=1, dtype=np.float64)), 0.0)
    raise ValueError("order must be 1 or 2")


class GramTensor:
    """Per-node 27-stencil storage of the inner-product operator at one level.

    entries[i, s] is the inner product between node i and its neighbor at
    displacement NBR_OFFSETS[s]; structurally zero where no neighbor exists.
    """

    def __init__(self, level, entries, neighbor_index):
        self.level = level
        self.entries = entries              # (N, 27) float64
        self.neighbor_index = neighbor_index  # (N, 27) int64, -1 absent
        self._mat = None
        self._iter = None

    def __len__(self):
        return len(self.entries)

    @property
    def diagonal(self):
        return self.entries[:, CENTER_SLOT]

    def to_csr(self):
        n = len(self.entries)
        mask = self.neighbor_index >= 0
        rows = np.repeat(np.arange(n, dtype=np.int64), mask.sum(axis=1))
        cols = self.neighbor_index[mask]
        vals = self.entries[mask]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def scaled(self, d_self):
        """Return D^-1/2 G D^-1/2 with D = diag(d_self), as a new GramTensor."""
        s = 1.0 / np.sqrt(d_self)
        ent = self.entries.copy()
        nbr = self.neighbor_index
        mask = nbr >= 0
        ent[mask] *= s[np.clip(nbr, 0, None)][mask]
        ent *= s[:, None]
        return GramTensor(self.level, ent, nbr)

    def _backing(self):
        """Materialized operator: dense below DENSE_CUTOFF, csr above.

        BLAS beats per-call sparse dispatch overhead on small levels, and
        the cutoff depends only on the node count so encoder and decoder
        round identically.
        """
        if self._mat is None:
            csr = self.to_csr()
            self._mat = csr.toarray() if csr.shape[0] <= DENSE_CUTOFF else csr
        return self._mat

    def matvec(self, x):
        """Apply the stencil operator: out_i = sum_j g(i,j) x_j."""
        return self._backing() @ np.asarray(x)

    def iteration_matrix(self, tau):
        """Cached L = I - tau*G in the backing's format; series hot path."""
        if self._iter is None or self._iter[0] != tau:
            mat = self._backing()
            if isinstance(mat, np.ndarray):
                lm = np.eye(mat.shape[0]) - tau * mat
            else:
                lm = (sp.identity(mat.shape[0], format="csr")
                      - mat.multiply(tau)).tocsr()
            self._iter = (tau, lm)
        return self._iter[1]

    def gershgorin(self):
        """Max absolute row sum; an eigenvalue upper bound for the operator."""
        mask = self.neighbor_index >= 0
        return float(np.abs(np.where(mask, self.entries, 0.0)).sum(axis=1).max())


def gram_init(level_geom):
    """Identity Gram at the finest level (bases are voxel indicators there)."""
    n = len(level_geom)
    entries = np.zeros((n, 27), dtype=np.float64)
    entries[:, CENTER_SLOT] = 1.0
    return GramTensor(level_geom.level, entries, level_geom.neighbor_index)


def gram_downsample(gram, parent_geom, child_geom, order):
    """Propagate the Gram one level coarser: G_parent = A G_child A^T.

    The product is accumulated in sparse form and scattered back into the
    27-stencil; any mass outside the {-1,0,1}^3 neighborhood violates the
    closure property and raises.
    """
    A = build_a_matrix(parent_geom, child_geom, order)
    prod = (A @ gram.to_csr() @ A.T).tocoo()
    n = len(parent_geom)
    d = parent_geom.nodes[prod.col] - parent_geom.nodes[prod.row]
    keep = prod.data != 0.0
    if np.abs(d[keep]).max(initial=0) > 1:
        raise AssertionError("Gram entry escaped the 27-neighbor stencil")
    slot = (d[:, 0] + 1) * 9 + (d[:, 1] + 1) * 3 + (d[:, 2] + 1)
    entries = np.zeros((n, 27), dtype=np.float64)
    entries[prod.row[keep], slot[keep]] = prod.data[keep]
    return GramTensor(parent_geom.level, entries, parent_geom.neighbor_index)


def build_a_matrix(parent_geom, child_geom, order):
    """Two-scale operator A_ell as a CSR matrix (parents x children)."""
    w = kernel_weights(order, parent_geom.link_d)
    if np.any(w <= 0):
        raise AssertionError("parent link with zero kernel weight")
    return sp.csr_matrix(
        (w, (parent_geom.link_parent, parent_geom.link_child)),
        shape=(len(parent_geom), len(child_geom)),
    )


def gram_levels(hierarchy):
    """All Gram tensors, finest to coarsest, as a list indexed by level."""
    L = hierarchy.depth
    grams = [None] * (L + 1)
    grams[L] = gram_init(hierarchy.levels[L])
    for ell in range(L - 1, -1, -1):
        grams[ell] = gram_downsample(
            grams[ell + 1], hierarchy.levels[ell], hierarchy.levels[ell + 1],
            hierarchy.order)
    return grams
