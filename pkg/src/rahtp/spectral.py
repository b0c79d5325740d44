"""Matrix-free application of h(X)v for h in {x^-1, x^-1/2, x^1/2}.

Everything is a truncated series around 1/tau:

    h(X) v  ~=  c * sum_{k=0..K} b_k L^k v,   L = I - tau X,

so one matvec per term and no eigen-decomposition anywhere.  With
tau <= 1/lambda_max the iteration matrix L has spectrum in [0, 1) on the
range of X and the partial sums converge geometrically at rate
1 - tau*lambda_min.
"""

from dataclasses import dataclass

import numpy as np


class SeriesDivergence(RuntimeError):
    """Raised when series terms blow up (bad step, indefinite operator...)."""


@dataclass
class ApproxConfig:
    order: int = 16                 # K, number of series terms beyond the 0th
    step: float = None              # explicit tau; default 1/eigen_bound
    bound_method: str = "gershgorin"
    power_iters: int = 24
    safety: float = 1.05            # multiplier on the power-iteration estimate
    tolerance: float = None         # optional early stop on term norm

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("series order K must be >= 0")
        if self.step is not None and self.step <= 0:
            raise ValueError("step tau must be positive")
        if self.bound_method not in ("gershgorin", "power_iteration"):
            raise ValueError("unknown bound method %r" % self.bound_method)


_COEFF_CACHE = {}


def series_coefficients(h, order):
    """Coefficients b_0..b_K for the supported spectral functions.

    x^-1    : b_k = 1
    x^-1/2  : b_k = (2k-1)!! / (2^k k!)
    x^1/2   : b_0 = 1, b_k = -(2k-3)!! / (2^k k!) for k >= 1
    The overall scale c depends on tau and is applied by apply_series.
    """
    key = (h, order)
    cached = _COEFF_CACHE.get(key)
    if cached is not None:
        return cached
    b = np.ones(order + 1, dtype=np.float64)
    if h == "invsqrt":
        for k in range(1, order + 1):
            b[k] = b[k - 1] * (2 * k - 1) / (2.0 * k)
    elif h == "sqrt":
        for k in range(1, order + 1):
            b[k] = (-0.5) if k == 1 else b[k - 1] * (2 * k - 3) / (2.0 * k)
    elif h != "inv":
        raise ValueError("h must be one of inv, invsqrt, sqrt")
    b.setflags(write=False)
    _COEFF_CACHE[key] = b
    return b


def _series_scale(h, tau):
    if h == "inv":
        return tau
    if h == "invsqrt":
        return np.sqrt(tau)
    return 1.0 / np.sqrt(tau)


class DenseOperator:
    """Adapter giving dense arrays the operator protocol used here."""

    def __init__(self, mat):
        self.mat = np.asarray(mat, dtype=np.float64)
        self._iter = None

    def matvec(self, x):
        return self.mat @ x

    def iteration_matrix(self, tau):
        """Cached L = I - tau*X; lets the series run one gemm per term."""
        if self._iter is None or self._iter[0] != tau:
            self._iter = (tau, np.eye(self.mat.shape[0]) - tau * self.mat)
        return self._iter[1]

    def gershgorin(self):
        return float(np.abs(self.mat).sum(axis=1).max())

    def __len__(self):
        return self.mat.shape[0]


class CallableOperator:
    """Adapter for matrix-free composites; only power iteration can bound it."""

    def __init__(self, fn, dim):
        self.fn = fn
        self.dim = dim

    def matvec(self, x):
        return self.fn(x)

    def __len__(self):
        return self.dim


def as_operator(op):
    if isinstance(op, np.ndarray):
        return DenseOperator(op)
    if hasattr(op, "matvec"):
        return op
    raise TypeError("operator must expose matvec or be a dense array")


def eigen_bound(op, method="gershgorin", iters=24, safety=1.05):
    """Upper bound on the top eigenvalue of a symmetric PSD operator.

    gershgorin uses explicit stencil/matrix row sums (never underestimates);
    power_iteration runs a fixed, deterministic iteration from the all-ones
    vector and inflates the final Rayleigh quotient by the safety factor.
    """
    op = as_operator(op)
    if method == "gershgorin":
        if not hasattr(op, "gershgorin"):
            raise ValueError("gershgorin bound needs explicit entries; "
                             "use power_iteration for matrix-free composites")
        return float(op.gershgorin())
    if method != "power_iteration":
        raise ValueError("unknown bound method %r" % method)
    n = len(op)
    if n == 0:
        return 0.0
    q = np.full((n, 1), 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(iters):
        z = op.matvec(q)
        lam = float((q[:, 0] @ z[:, 0]))
        nz = float(np.linalg.norm(z))
        if nz == 0.0 or not np.isfinite(nz):
            break
        q = z / nz
    if not np.isfinite(lam) or lam < 0:
        raise SeriesDivergence("power iteration produced a non-PSD estimate")
    return safety * lam


def apply_series(op, v, h, cfg, lam_max=None):
    """Evaluate c * sum b_k (I - tau X)^k v by iterated matvec.

    tau comes from cfg.step when given, else 1/lam_max with lam_max either
    passed in or bounded via cfg.bound_method.  A zero operator bound is only
    consistent with v = 0 for the inverse-like functions.
    """
    op = as_operator(op)
    v = np.asarray(v, dtype=np.float64)
    if cfg.step is not None:
        tau = float(cfg.step)
    else:
        if lam_max is None:
            lam_max = eigen_bound(op, cfg.bound_method, cfg.power_iters, cfg.safety)
        if lam_max <= 0.0:
            if np.all(v == 0.0):
                return v.copy()
            if h == "sqrt":
                return np.zeros_like(v)
            raise SeriesDivergence("zero operator bound with nonzero input")
        tau = 1.0 / lam_max
    b = series_coefficients(h, cfg.order)
    c = _series_scale(h, tau)
    term = v.copy()
    acc = b[0] * term
    flat0 = v.ravel()
    scale0 = float(np.sqrt(flat0 @ flat0)) if flat0.size else 0.0
    blow2 = (1e9 * (1.0 + scale0)) ** 2
    stop2 = None
    if cfg.tolerance is not None:
        stop2 = (cfg.tolerance * (1.0 + scale0)) ** 2
    # long-lived operators expose L = I - tau X directly; one matmul per
    # term there instead of matvec + scale + subtract
    lmat = None
    getl = getattr(op, "iteration_matrix", None)
    if getl is not None:
        lmat = getl(tau)
    dense_l = isinstance(lmat, np.ndarray)
    nxt = np.empty_like(term) if dense_l else None
    tmp = np.empty_like(term)
    mv = op.matvec
    for k in range(1, cfg.order + 1):
        if dense_l:
            np.dot(lmat, term, out=nxt)
            term, nxt = nxt, term
        elif lmat is not None:
            term = lmat @ term
        else:
            z = np.asarray(mv(term), dtype=np.float64)
            if z is term:        # an identity-like op may hand back its input
                z = term.copy()
            np.multiply(z, tau, out=z)
            term = np.subtract(term, z, out=z)   # (I - tau X) term, in place
        if b[k] == 1.0:
            np.add(acc, term, out=acc)
        else:
            np.multiply(term, b[k], out=tmp)
            np.add(acc, tmp, out=acc)
        f = term.ravel()
        n2 = f @ f
        if not (n2 <= blow2):    # also catches nan
            raise SeriesDivergence(
                "series term %d/%d diverged (|term|=%.3e); operator is not a "
                "contraction at step tau=%.3e" % (k, cfg.order, np.sqrt(n2), tau))
        if n2 == 0.0:
            break       # exact fixed point; all remaining terms vanish
        if stop2 is not None and n2 <= stop2:
            break
    return c * acc
