"""Linear mixed-effects model fitting by profiled (restricted) maximum
likelihood.

The variance parameters ``theta`` hold, per random term, the lower-triangular
Cholesky factor of the term's covariance relative to the residual variance
(``t`` values for a diagonal structure, ``t(t+1)/2`` for unstructured,
concatenated across terms).  For a fixed ``theta`` the fixed effects, the
conditional modes of the random effects and the residual variance all have
closed forms via a penalized least-squares solve, leaving a low-dimensional
deviance surface that a bounded Nelder-Mead search minimizes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from threadpoolctl import threadpool_limits

from .design import DesignMatrices, RandomBlock
from .errors import FitError

ML = "ml"
REML = "reml"

SINGULAR_TOL = 1e-6


@dataclass(frozen=True)
class ThetaStructure:
    """Layout of the concatenated variance-parameter vector."""

    blocks: tuple[RandomBlock, ...]
    slices: tuple[tuple[int, int], ...]      # (start, length) per block
    diagonal_mask: np.ndarray                # True where theta must stay >= 0

    @classmethod
    def for_design(cls, dm: DesignMatrices) -> "ThetaStructure":
        slices = []
        mask: list[bool] = []
        start = 0
        for block in dm.random_blocks:
            m = block.n_theta
            slices.append((start, m))
            start += m
            if block.diagonal:
                mask.extend([True] * m)
            else:
                for i in range(block.t):
                    for j in range(i + 1):
                        mask.append(i == j)
        return cls(blocks=dm.random_blocks, slices=tuple(slices),
                   diagonal_mask=np.asarray(mask, dtype=bool))

    @property
    def size(self) -> int:
        return len(self.diagonal_mask)

    def initial(self) -> np.ndarray:
        """Deterministic start: unit diagonals, zero off-diagonals."""
        theta = np.zeros(self.size)
        theta[self.diagonal_mask] = 1.0
        return theta

    def validate(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise FitError(f"theta has length {theta.size}, expected {self.size}")
        if np.any(theta[self.diagonal_mask] < 0):
            raise FitError("theta diagonal entries must be >= 0")
        return theta

    def factor(self, block_idx: int, theta: np.ndarray) -> np.ndarray:
        """The t-by-t lower-triangular relative Cholesky factor of one term."""
        block = self.blocks[block_idx]
        start, m = self.slices[block_idx]
        part = theta[start:start + m]
        t = block.t
        lam = np.zeros((t, t))
        if block.diagonal:
            lam[np.diag_indices(t)] = part
        else:
            lam[np.tril_indices(t)] = part
        return lam

    def full_lambda(self, theta: np.ndarray, q: int) -> np.ndarray:
        """Dense q-by-q relative covariance factor (block diagonal)."""
        lam = np.zeros((q, q))
        for bi, block in enumerate(self.blocks):
            f = self.factor(bi, theta)
            t = block.t
            for g in range(block.n_groups):
                o = block.col_offset + g * t
                lam[o:o + t, o:o + t] = f
        return lam


@dataclass(frozen=True)
class RanefSummary:
    """Estimated covariance of one random term's effects, sigma^2 * psi_hat."""

    term: str
    group: str
    inner_labels: tuple[str, ...]
    covariance: np.ndarray          # (t, t)

    @property
    def variances(self) -> dict[str, float]:
        return {lab: float(self.covariance[i, i])
                for i, lab in enumerate(self.inner_labels)}


@dataclass(frozen=True)
class FittedLmm:
    beta: np.ndarray
    x_labels: tuple[str, ...]
    theta: np.ndarray
    sigma2: float
    loglik: float
    deviance: float
    n_params: int
    method: str
    vcov_beta: np.ndarray
    ranef_variances: tuple[RanefSummary, ...]
    blups: tuple[np.ndarray, ...]           # per term, (n_groups, t)
    converged: bool
    singular: bool
    n_obs: int
    n_fixed: int
    formula: str
    response_checksum: str
    ast: object
    n_evals: int = 0

    def coef(self) -> dict[str, float]:
        return {lab: float(b) for lab, b in zip(self.x_labels, self.beta)}


class _Prepared:
    """Cross products shared by every deviance evaluation of one design."""

    def __init__(self, dm: DesignMatrices):
        X, y, Z = dm.X, dm.y, dm.Z
        self.dm = dm
        self.n, self.p = X.shape
        self.q = dm.q
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        if self.q:
            self.ZtZ = (Z.T @ Z).toarray()
            self.ZtX = Z.T @ X
            self.Zty = Z.T @ y
        else:
            self.ZtZ = np.empty((0, 0))
            self.ZtX = np.empty((0, self.p))
            self.Zty = np.empty(0)
        self.structure = ThetaStructure.for_design(dm)


def _pls(pre: _Prepared, theta: np.ndarray) -> dict:
    """Penalized least squares at fixed theta; all deviance ingredients."""
    n, p, q = pre.n, pre.p, pre.q
    if q:
        lam = pre.structure.full_lambda(theta, q)
        A = lam.T @ pre.ZtZ @ lam
        A[np.diag_indices(q)] += 1.0
        L = np.linalg.cholesky(A)
        cu = solve_triangular(L, lam.T @ pre.Zty, lower=True)
        RZX = solve_triangular(L, lam.T @ pre.ZtX, lower=True)
        RXtRX = pre.XtX - RZX.T @ RZX
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    else:
        lam = None
        cu = np.empty(0)
        RZX = np.empty((0, p))
        RXtRX = pre.XtX
        logdet = 0.0
    Lx = np.linalg.cholesky(RXtRX)
    beta = cho_solve((Lx, True), pre.Xty - RZX.T @ cu)
    if q:
        u = solve_triangular(L.T, cu - RZX @ beta, lower=False)
        b = lam @ u
        pwrss = (pre.yty + beta @ pre.XtX @ beta + b @ pre.ZtZ @ b
                 + u @ u - 2.0 * beta @ pre.Xty - 2.0 * b @ pre.Zty
                 + 2.0 * beta @ (pre.ZtX.T @ b))
    else:
        u = np.empty(0)
        b = np.empty(0)
        pwrss = (pre.yty + beta @ pre.XtX @ beta - 2.0 * beta @ pre.Xty)
    logdet_x = 2.0 * float(np.sum(np.log(np.diag(Lx))))
    return dict(beta=beta, u=u, b=b, pwrss=float(pwrss), logdet=logdet,
                logdet_x=logdet_x, RXtRX=RXtRX, Lx=Lx, lam=lam)


def _deviance_from_pls(pls: dict, n: int, p: int, method: str) -> float:
    pwrss = pls["pwrss"]
    if pwrss <= 0 or not math.isfinite(pwrss):
        return math.nan
    if method == ML:
        return pls["logdet"] + n * (1.0 + math.log(2.0 * math.pi * pwrss / n))
    return (pls["logdet"] + pls["logdet_x"]
            + (n - p) * (1.0 + math.log(2.0 * math.pi * pwrss / (n - p))))


def profiled_deviance(theta: np.ndarray, dm: DesignMatrices,
                      method: str = ML) -> float:
    """Deviance (-2 log likelihood, profiled over beta and sigma^2) at theta.

    Raises FitError when the value is non-finite, which signals a rank
    problem rather than being clamped away.
    """
    method = _check_method(method)
    pre = _Prepared(dm)
    theta = pre.structure.validate(theta)
    try:
        pls = _pls(pre, theta)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"penalized least-squares solve failed: {exc}") from exc
    dev = _deviance_from_pls(pls, pre.n, pre.p, method)
    if not math.isfinite(dev):
        raise FitError("non-finite profiled deviance (rank problem?)")
    return dev


def _check_method(method: str) -> str:
    m = method.lower()
    if m not in (ML, REML):
        raise FitError(f"unknown method '{method}' (use 'ml' or 'reml')")
    return m


def fit_lmm(dm: DesignMatrices, method: str = ML, *,
            max_evals: int = 10_000, tol: float = 1e-8) -> FittedLmm:
    """Fit the mixed model described by ``dm``.

    Minimizes the profiled deviance over theta with a bounded Nelder-Mead
    search started at unit diagonals (deterministic), then a restart from
    the first optimum; theta = 0 is always evaluated as a fallback so a
    random term can never make the fit worse than dropping it.  Models
    without random terms return the exact least-squares solution directly.
    """
    method = _check_method(method)
    pre = _Prepared(dm)
    n, p = pre.n, pre.p
    if n <= p:
        raise FitError(f"n = {n} observations <= p = {p} fixed-effects "
                       "columns; nothing to estimate")

    if pre.q == 0:
        return _fit_ols(dm, pre, method)

    # The factorizations here are tiny (q up to a few hundred); threaded
    # BLAS only adds wake-up latency per call, so pin it to one thread.
    with threadpool_limits(limits=1, user_api="blas"):
        return _fit_random(dm, pre, method, max_evals, tol)


def _fit_random(dm: DesignMatrices, pre: _Prepared, method: str,
                max_evals: int, tol: float) -> FittedLmm:
    n, p = pre.n, pre.p
    structure = pre.structure

    def objective(theta: np.ndarray) -> float:
        try:
            pls = _pls(pre, theta)
        except np.linalg.LinAlgError:
            return 1e300
        dev = _deviance_from_pls(pls, n, p, method)
        if not math.isfinite(dev):
            return 1e300
        return dev

    bounds = [(0.0, None) if d else (None, None)
              for d in structure.diagonal_mask]
    options = dict(maxfev=max_evals, xatol=1e-6, fatol=tol, adaptive=False)
    res = minimize(objective, structure.initial(), method="Nelder-Mead",
                   bounds=bounds, options=options)
    evals = res.nfev
    res2 = minimize(objective, res.x, method="Nelder-Mead", bounds=bounds,
                    options=options)
    evals += res2.nfev
    theta = res2.x if res2.fun <= res.fun else res.x
    best = min(res.fun, res2.fun)
    converged = bool(res.success or res2.success)
    if not converged:
        warnings.warn(
            f"deviance minimization hit max_evals={max_evals} without "
            "converging; returning the best point found", RuntimeWarning,
            stacklevel=3)

    zero = np.zeros(structure.size)
    dev_zero = objective(zero)
    if dev_zero < best:
        theta, best = zero, dev_zero
    theta = np.where(structure.diagonal_mask & (theta < 0), 0.0, theta)

    pls = _pls(pre, theta)
    dev = _deviance_from_pls(pls, n, p, method)
    if not math.isfinite(dev):
        raise FitError("non-finite deviance at the optimum")
    return _assemble(dm, pre, method, theta, pls, dev, converged, evals)


def _fit_ols(dm: DesignMatrices, pre: _Prepared, method: str) -> FittedLmm:
    X, y = dm.X, dm.y
    n, p = pre.n, pre.p
    Lx = np.linalg.cholesky(pre.XtX)
    beta = cho_solve((Lx, True), pre.Xty)
    resid = y - X @ beta
    sse = float(resid @ resid)
    pls = dict(beta=beta, u=np.empty(0), b=np.empty(0), pwrss=sse,
               logdet=0.0, logdet_x=2.0 * float(np.sum(np.log(np.diag(Lx)))),
               RXtRX=pre.XtX, Lx=Lx, lam=None)
    dev = _deviance_from_pls(pls, n, p, method)
    return _assemble(dm, pre, method, np.empty(0), pls, dev,
                     converged=True, evals=0)


def _assemble(dm: DesignMatrices, pre: _Prepared, method: str,
              theta: np.ndarray, pls: dict, deviance: float,
              converged: bool, evals: int) -> FittedLmm:
    n, p = pre.n, pre.p
    denom = n if method == ML else n - p
    sigma2 = pls["pwrss"] / denom
    vcov = sigma2 * cho_solve((pls["Lx"], True), np.eye(p))
    vcov = 0.5 * (vcov + vcov.T)

    structure = pre.structure
    summaries: list[RanefSummary] = []
    blups: list[np.ndarray] = []
    for bi, block in enumerate(dm.random_blocks):
        fac = structure.factor(bi, theta)
        cov = sigma2 * (fac @ fac.T)
        summaries.append(RanefSummary(
            term=block.label, group=block.term.group,
            inner_labels=block.inner_labels, covariance=cov))
        seg = pls["b"][block.col_offset:block.col_offset + block.n_cols]
        blups.append(seg.reshape(block.n_groups, block.t))

    singular = bool(theta.size and
                    np.any(theta[structure.diagonal_mask] < SINGULAR_TOL))
    return FittedLmm(
        beta=pls["beta"], x_labels=dm.x_labels, theta=theta, sigma2=sigma2,
        loglik=-0.5 * deviance, deviance=deviance,
        n_params=p + theta.size + 1, method=method, vcov_beta=vcov,
        ranef_variances=tuple(summaries), blups=tuple(blups),
        converged=converged, singular=singular, n_obs=n, n_fixed=p,
        formula=str(dm.ast), response_checksum=dm.response_checksum,
        ast=dm.ast, n_evals=evals)
