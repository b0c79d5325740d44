"""Sparse level-transfer operators and the high-pass lifting operator.

A level pair (parent, child) is connected by the two-scale matrix A
(parents x children, entries = kernel weights).  Splitting the children
into an injective parent->child assignment a and the remainder b gives

    Ztilde = [ -(A^b)^T (A^a)^-T  |  I ]

whose rows span the null space of A (high-pass directions).  A^a is never
inverted explicitly; both (A^a)^-1 and (A^a)^-T are realized through the
SPD product M = A^a (A^a)^T and a truncated Neumann series for M^-1:

    (A^a)^-T x = M^-1 (A^a x)        (A^a)^-1 y = (A^a)^T M^-1 y
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import LevelGeometry
from .kernels import DENSE_CUTOFF
from .spectral import ApproxConfig, apply_series


class SplitError(RuntimeError):
    """No injective parent->child assignment exists at this level."""


def downsample(a_mat, x):
    """Aggregate child features to parents: one matvec with A."""
    return a_mat @ np.asarray(x, dtype=np.float64)


def upsample(a_mat, x):
    """Spread parent features to children: one matvec with A^T."""
    return a_mat.T @ np.asarray(x, dtype=np.float64)


@dataclass
class ASplit:
    """Injective parent->child claim plus the unclaimed remainder.

    a_indices[i] is the child column claimed by parent row i, so
    A[:, a_indices] is square; b_indices lists the other children in
    ascending (Morton) order.  diag_dominant records whether A^a passed
    a strict row diagonal-dominance check (a sufficient, not necessary,
    invertibility certificate).
    """
    level: int
    a_indices: np.ndarray
    b_indices: np.ndarray
    diag_dominant: bool = False


def _offset_priority(order):
    """Rank the stencil offsets by (|d|_1, Morton key of d - d_min)."""
    if order == 1:
        rng = (0, 2)
    else:
        rng = (-1, 2)
    offs = [(dx, dy, dz)
            for dx in range(*rng) for dy in range(*rng) for dz in range(*rng)]
    def key(d):
        mort = 0
        for bit in range(2):
            for axis in range(3):
                mort |= ((d[axis] - rng[0]) >> bit & 1) << (3 * bit + axis)
        return (abs(d[0]) + abs(d[1]) + abs(d[2]), mort)
    ranked = sorted(offs, key=key)
    prio = {d: i for i, d in enumerate(ranked)}
    return prio


def build_split(parent_geom, child_geom, order):
    """Greedy minimal-offset assignment of one child per parent.

    Parents are scanned in Morton order; each claims its not-yet-claimed
    child with smallest |d|_1 (ties by Morton order of the offset).  Raises
    SplitError when some parent finds every candidate taken, in which case
    the critical-rate factorization is unavailable at this level.
    """
    n_parent = len(parent_geom.nodes)
    n_child = len(child_geom.nodes)
    if n_child < n_parent:
        raise SplitError("level %d has %d parents but only %d children"
                         % (parent_geom.level, n_parent, n_child))
    prio = _offset_priority(order)
    link_p = parent_geom.link_parent
    link_c = parent_geom.link_child
    link_d = parent_geom.link_d
    pr = np.array([prio[tuple(d)] for d in link_d], dtype=np.int64)
    order_ix = np.lexsort((pr, link_p))
    link_p = link_p[order_ix]
    link_c = link_c[order_ix]
    starts = np.searchsorted(link_p, np.arange(n_parent))
    ends = np.searchsorted(link_p, np.arange(n_parent) + 1)
    claimed = np.full(n_child, False)
    a_idx = np.full(n_parent, -1, dtype=np.int64)
    for i in range(n_parent):
        for j in range(starts[i], ends[i]):
            c = link_c[j]
            if not claimed[c]:
                claimed[c] = True
                a_idx[i] = c
                break
        if a_idx[i] < 0:
            raise SplitError(
                "parent %d at level %d cannot claim an unclaimed child"
                % (i, parent_geom.level))
    b_idx = np.nonzero(~claimed)[0].astype(np.int64)
    return ASplit(parent_geom.level, a_idx, b_idx)


def check_diag_dominance(a_mat, split):
    """Strict row diagonal dominance of A^a = A[:, a_indices]."""
    aa = a_mat[:, split.a_indices]
    diag = np.abs(aa.diagonal())
    rowsum = np.asarray(np.abs(aa).sum(axis=1)).ravel()
    return bool(np.all(diag > rowsum - diag - 1e-15))


class ZtildeOp:
    """Matrix-free Ztilde and Ztilde^T for one level pair.

    Holds A, the split, the SPD product M = A^a A^a^T (explicit CSR, so the
    Gershgorin bound is exact and deterministic) and the series config used
    for all M^-1 solves.
    """

    def __init__(self, a_mat, split, approx=None):
        self.a_mat = a_mat.tocsr()
        self.split = split
        self.aa = self.a_mat[:, split.a_indices].tocsr()
        self.ab = self.a_mat[:, split.b_indices].tocsr()
        self.m_mat = (self.aa @ self.aa.T).tocsr()
        self.approx = approx if approx is not None else ApproxConfig()
        bound = float(np.asarray(np.abs(self.m_mat).sum(axis=1)).max())
        self._m_bound = bound if bound > 0 else 1.0
        split.diag_dominant = check_diag_dominance(self.a_mat, split)
        if self.aa.shape[0] <= DENSE_CUTOFF:
            # small levels run dense; cutoff is a pure function of the node
            # count so encoder and decoder round identically
            self.aa = self.aa.toarray()
            self.ab = self.ab.toarray()
            self.m_mat = self.m_mat.toarray()
        self._m_op = _MatOperator(self.m_mat)

    @property
    def n_parent(self):
        return self.aa.shape[0]

    @property
    def n_high(self):
        return self.ab.shape[1]

    def _m_solve(self, y):
        return apply_series(self._m_op, y, "inv", self.approx,
                            lam_max=self._m_bound)

    def solve_a_t(self, x):
        """(A^a)^-T x via M^-1 (A^a x)."""
        return self._m_solve(self.aa @ x)

    def solve_a(self, y):
        """(A^a)^-1 y via (A^a)^T M^-1 y."""
        return self.aa.T @ self._m_solve(y)

    def mul(self, x):
        """Ztilde x for child-indexed features x (n_child, r)."""
        x = np.asarray(x, dtype=np.float64)
        xa = x[self.split.a_indices]
        xb = x[self.split.b_indices]
        return xb - self.ab.T @ self.solve_a_t(xa)

    def mul_t(self, g):
        """Ztilde^T g back to child indexing (n_child, r)."""
        g = np.asarray(g, dtype=np.float64)
        n_child = self.a_mat.shape[1]
        out = np.zeros((n_child,) + g.shape[1:], dtype=np.float64)
        out[self.split.b_indices] = g
        out[self.split.a_indices] = -self.solve_a(self.ab @ g)
        return out

    def dpsi_estimate(self):
        """Diagonal scale estimate for the high-pass basis.

        dpsi[j] = 1 + sum_i (A^b[i,j] / A^a[i,i])^2, computable from
        geometry alone so encoder and decoder agree without side data.
        """
        diag = np.asarray(self.aa.diagonal()).ravel()
        if isinstance(self.ab, np.ndarray):
            col = ((self.ab / diag[:, None]) ** 2).sum(axis=0)
        else:
            sq = (sp.diags(1.0 / diag) @ self.ab).power(2)
            col = np.asarray(sq.sum(axis=0)).ravel()
        return 1.0 + col


class _MatOperator:
    """matvec protocol wrapper for either a CSR matrix or a dense array."""

    def __init__(self, mat):
        self.mat = mat
        self._iter = None

    def matvec(self, x):
        return self.mat @ x

    def iteration_matrix(self, tau):
        """Cached L = I - tau*M in the matrix's own format."""
        if self._iter is None or self._iter[0] != tau:
            if isinstance(self.mat, np.ndarray):
                lm = np.eye(self.mat.shape[0]) - tau * self.mat
            else:
                lm = (sp.identity(self.mat.shape[0], format="csr")
                      - self.mat.multiply(tau)).tocsr()
            self._iter = (tau, lm)
        return self._iter[1]

    def gershgorin(self):
        return float(np.asarray(np.abs(self.mat).sum(axis=1)).max())

    def __len__(self):
        return self.mat.shape[0]


def csr_operator(mat):
    """Wrap a scipy CSR matrix in the matvec protocol used by apply_series."""
    return _MatOperator(mat.tocsr())
