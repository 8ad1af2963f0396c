"""The two-sample Q statistic, its support-restricted minimiser and level test.

The Q statistic of a candidate causal effect ``beta`` is the quadratic form of
the reduced-form residual ``pi - Pi beta`` in the inverse of its estimated
variance ``Sigma_pi / n_a + Sigma_Pi(beta) / n_b``. At any ``beta`` solving the
population moment equation it is asymptotically chi-squared with ``m``
degrees of freedom.

The one-sample Anderson-Rubin statistic is included because its summary
statistic form differs from Q only by a residual cross-covariance term, which
gives an exact algebraic check of the Q machinery.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import optimize, special

from .errors import DegenerateWeightError, NumericalError, OverParameterizedError
from .sumstats import JointSummaryStats, _as_design

logger = logging.getLogger(__name__)

PD_RTOL = 1e-12
GMM_TOL = 1e-10
GMM_MAX_ITER = 200
NELDER_MEAD_MAXFEV = 10_000


def chi2_cdf(t, df):
    """CDF of the chi-squared distribution with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if t <= 0:
        return 0.0
    return float(special.gammainc(df / 2.0, t / 2.0))


def chi2_quantile(p, df):
    """Inverse of :func:`chi2_cdf`, found by bracketed root finding."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    hi = max(1.0, 2.0 * df)
    while chi2_cdf(hi, df) < p:
        hi *= 2.0
    return optimize.brentq(lambda x: chi2_cdf(x, df) - p, 0.0, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class SupportSet:
    """Sorted, duplicate-free tuple of covariate indices (0-based)."""

    indices: tuple

    def __init__(self, indices: Iterable[int] = ()):
        idx = tuple(int(i) for i in indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in support {idx}")
        if any(i < 0 for i in idx):
            raise ValueError(f"negative index in support {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)

    def __contains__(self, item):
        return item in self.indices

    def __repr__(self):
        return f"SupportSet({list(self.indices)})"

    def to_list(self):
        return list(self.indices)


@dataclass(frozen=True)
class FitResult:
    """Q minimiser restricted to a support, with its test statistics.

    ``df`` is the number of moment conditions ``m`` that the p-value refers to.
    """

    beta: np.ndarray
    support: SupportSet
    q_value: float
    p_value: float
    converged: bool
    iterations: int
    df: int


def sigma_pi_of_beta(joint: JointSummaryStats, beta) -> np.ndarray:
    """Covariance of ``Pi_hat @ beta``: the sum over k, l of ``beta_k beta_l`` times block [kl]."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (joint.d,):
        raise ValueError(f"beta has shape {beta.shape}, expected {(joint.d,)}")
    s = np.flatnonzero(beta)
    if s.size == 0:
        return np.zeros((joint.m, joint.m))
    b = beta[s]
    return np.einsum("k,kilj,l->ij", b, joint.blocks(s), b)


def weight_matrix(joint: JointSummaryStats, beta) -> np.ndarray:
    return joint.sigma_pi / joint.n_a + sigma_pi_of_beta(joint, beta) / joint.n_b


def _pd_solve(w_mat, rhs):
    """Solve ``w_mat x = rhs`` by symmetric eigendecomposition, checking definiteness."""
    w, v = np.linalg.eigh(w_mat)
    if w[-1] <= 0 or w[0] <= PD_RTOL * w[-1]:
        raise DegenerateWeightError(float(w[0]), float(w[-1]))
    return v @ ((v.T @ rhs) / w if rhs.ndim == 1 else (v.T @ rhs) / w[:, None])


def q_statistic(joint: JointSummaryStats, beta) -> float:
    """Two-sample Q statistic at ``beta``.

    Raises
    ------
    DegenerateWeightError
        If the weight matrix is not numerically positive definite.
    """
    beta = np.asarray(beta, dtype=np.float64)
    r = joint.pi - joint.big_pi @ beta
    return float(r @ _pd_solve(weight_matrix(joint, beta), r))


class _RestrictedQ:
    """Q as a function of the coefficients on a fixed support.

    Some support coordinates may be pinned to given values; the remaining
    ones are free. Only the free coordinates are optimised.
    """

    def __init__(self, joint, support, pinned=None):
        self.joint = joint
        self.support = np.asarray(support, dtype=int)
        pinned = dict(pinned or {})
        pos = {int(j): i for i, j in enumerate(self.support)}
        self.pinned_pos = np.array([pos[j] for j in pinned], dtype=int)
        self.pinned_val = np.array([pinned[j] for j in pinned], dtype=np.float64)
        self.free_pos = np.array([i for i in range(len(self.support)) if i not in set(self.pinned_pos)], dtype=int)
        self.p_s = joint.big_pi[:, self.support]
        self.blocks = joint.blocks(self.support)
        self.base = joint.sigma_pi / joint.n_a
        self.inv_nb = 1.0 / joint.n_b
        self.n_evals = 0

    def full(self, x):
        b = np.empty(len(self.support))
        b[self.pinned_pos] = self.pinned_val
        b[self.free_pos] = x
        return b

    def weight(self, b):
        return self.base + self.inv_nb * np.einsum("k,kilj,l->ij", b, self.blocks, b)

    def value(self, x):
        self.n_evals += 1
        b = self.full(x)
        r = self.joint.pi - self.p_s @ b
        return float(r @ _pd_solve(self.weight(b), r))

    def value_and_grad(self, x):
        self.n_evals += 1
        b = self.full(x)
        r = self.joint.pi - self.p_s @ b
        v = _pd_solve(self.weight(b), r)
        q = float(r @ v)
        vsv = np.einsum("i,kilj,j->kl", v, self.blocks, v)
        grad = -2.0 * (self.p_s.T @ v) - 2.0 * self.inv_nb * (vsv @ b)
        return q, grad[self.free_pos]

    def wls(self, w_mat):
        """Weighted least squares for the free coordinates at a fixed weight."""
        w, v = np.linalg.eigh(w_mat)
        if w[-1] <= 0 or w[0] <= PD_RTOL * w[-1]:
            raise DegenerateWeightError(float(w[0]), float(w[-1]))
        white = v.T / np.sqrt(w)[:, None]
        target = self.joint.pi - self.p_s[:, self.pinned_pos] @ self.pinned_val
        design = self.p_s[:, self.free_pos]
        x, *_ = np.linalg.lstsq(white @ design, white @ target, rcond=None)
        return x


def _minimize(problem: _RestrictedQ):
    """Iterated GMM, then a gradient polish; Nelder-Mead if GMM fails to settle."""
    start = problem.full(np.zeros(len(problem.free_pos)))
    x = problem.wls(problem.weight(start))
    converged = False
    it = 0
    for it in range(1, GMM_MAX_ITER + 1):
        x_new = problem.wls(problem.weight(problem.full(x)))
        step = np.max(np.abs(x_new - x), initial=0.0)
        x = x_new
        if step < GMM_TOL:
            converged = True
            break
    candidates = [(problem.value(x), x)]

    # The GMM fixed point ignores the dependence of the weight on beta, so it
    # is not exactly the Q minimiser; polish with the analytic gradient.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(
            problem.value_and_grad, x, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 1000}
        )
    if np.all(np.isfinite(res.x)):
        candidates.append((problem.value(res.x), res.x))
    polished = bool(res.success)
    if not converged:
        logger.debug("iterated GMM did not converge on support %s; running Nelder-Mead", problem.support)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            nm = optimize.minimize(
                problem.value,
                x,
                method="Nelder-Mead",
                options={"maxfev": NELDER_MEAD_MAXFEV, "xatol": 1e-12, "fatol": 1e-14},
            )
        candidates.append((problem.value(nm.x), nm.x))
        polished = polished or bool(nm.success)
    q, x_best = min(candidates, key=lambda c: c[0])
    return x_best, q, converged or polished, it + int(res.nit)


def _check_support(joint, support, allow_over_parameterized=False):
    s = support if isinstance(support, SupportSet) else SupportSet(support)
    if len(s) == 0:
        raise ValueError("support must be nonempty; use zero_fit for the empty support")
    if s.indices[-1] >= joint.d:
        raise ValueError(f"support {s} out of range for d = {joint.d}")
    if len(s) > joint.m and not allow_over_parameterized:
        raise OverParameterizedError(
            f"over-parameterized support: {len(s)} coefficients but only {joint.m} moment conditions"
        )
    return s


def fit_restricted(
    joint: JointSummaryStats,
    s,
    pinned: Mapping[int, float] | None = None,
    allow_over_parameterized: bool = False,
) -> FitResult:
    """Minimise Q over coefficient vectors supported on ``s``.

    Parameters
    ----------
    joint : JointSummaryStats
    s : SupportSet or iterable of int
        Support of the estimate. At most ``m`` indices.
    pinned : mapping, optional
        Covariate index -> value for coordinates of ``s`` held fixed. Used for
        profiling Q when inverting the test.
    allow_over_parameterized : bool
        Accept supports larger than ``m``. The minimiser is then not unique
        and the returned coefficients are one of many.

    Returns
    -------
    FitResult
        Coefficients are zero outside ``s``.
    """
    s = _check_support(joint, s, allow_over_parameterized)
    pinned = dict(pinned or {})
    if not set(pinned) <= set(s):
        raise ValueError(f"pinned coordinates {sorted(pinned)} are not in support {s}")
    problem = _RestrictedQ(joint, s.indices, pinned)
    if len(problem.free_pos) == 0:
        x, q, converged, iters = np.zeros(0), problem.value(np.zeros(0)), True, 0
    else:
        x, q, converged, iters = _minimize(problem)
    beta = np.zeros(joint.d)
    beta[problem.support] = problem.full(x)
    q = max(q, 0.0)
    return FitResult(
        beta=beta,
        support=s,
        q_value=q,
        p_value=1.0 - chi2_cdf(q, joint.m),
        converged=converged,
        iterations=iters,
        df=joint.m,
    )


def zero_fit(joint: JointSummaryStats) -> FitResult:
    """The trivial fit ``beta = 0`` on the empty support."""
    q = q_statistic(joint, np.zeros(joint.d))
    return FitResult(
        beta=np.zeros(joint.d),
        support=SupportSet(),
        q_value=q,
        p_value=1.0 - chi2_cdf(q, joint.m),
        converged=True,
        iterations=0,
        df=joint.m,
    )


def level_test(fit: FitResult, alpha: float) -> bool:
    """Return True when the fitted support is rejected at level ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return bool(fit.q_value > chi2_quantile(1.0 - alpha, fit.df))


def ar_statistic(y, x, z, beta) -> float:
    """One-sample Anderson-Rubin statistic computed from individual-level data."""
    y = np.asarray(y, dtype=np.float64).ravel()
    x, z = _as_design(x, "X"), _as_design(z, "Z")
    n, m = z.shape
    if n <= m:
        raise ValueError(f"need n > m, got n = {n}, m = {m}")
    r = y - x @ np.asarray(beta, dtype=np.float64)
    coef = np.linalg.solve(z.T @ z, z.T @ r)
    fitted = z @ coef
    resid = r - fitted
    num = float(fitted @ fitted)
    den = float(resid @ resid)
    if den <= 0.0 or den <= 1e-14 * float(r @ r):
        raise NumericalError("Anderson-Rubin denominator is zero: residual lies in the instrument span")
    return (n - m) / m * num / den


def cross_covariance_blocks(y, x, z) -> np.ndarray:
    """One-sample residual cross-covariances between the outcome and each covariate.

    Returns an array of shape ``(d, m, m)`` whose k-th slice is
    ``eps_y' eps_x^k (Z'Z)^{-1}``. It vanishes in expectation when the two
    regressions use independent samples, which is why Q omits it.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    x, z = _as_design(x, "X"), _as_design(z, "Z")
    inv = np.linalg.inv(z.T @ z)
    eps_y = y - z @ (inv @ (z.T @ y))
    eps_x = x - z @ (inv @ (z.T @ x))
    return np.einsum("k,ij->kij", eps_y @ eps_x, inv)


def ar_statistic_summary(joint: JointSummaryStats, cross: np.ndarray, beta, n: int) -> float:
    """``m`` times the AR statistic, rewritten in one-sample summary statistics.

    ``joint`` must hold the OLS fits of the outcome and the covariates on the
    same instruments from one sample of size ``n`` and ``cross`` the output of
    :func:`cross_covariance_blocks`.
    """
    beta = np.asarray(beta, dtype=np.float64)
    r = joint.pi - joint.big_pi @ beta
    cov = joint.sigma_pi + sigma_pi_of_beta(joint, beta) - 2.0 * np.einsum("k,kij->ij", beta, cross)
    cov = cov / (n - joint.m)
    return float(r @ np.linalg.solve(cov, r))
