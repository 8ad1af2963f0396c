"""Sparse causal effect estimators built on the two-sample Q statistic.

* :func:`spacetsiv_l0` searches supports of increasing size and stops at the
  first size whose best support is not rejected by the Q test.
* :func:`spacetsiv_l1` walks a decreasing lasso path, refits each selected
  support by minimising Q and stops at the first accepted support.
* :func:`tsiv` is the non-sparse pseudo-inverse estimator.
* :func:`ci_by_inversion` builds per-coordinate confidence sets from the
  profile of Q.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import NumericalError
from .qstat import (
    FitResult,
    SupportSet,
    chi2_quantile,
    fit_restricted,
    level_test,
    q_statistic,
    zero_fit,
)
from .sumstats import JointSummaryStats

logger = logging.getLogger(__name__)

L1_TOL = 1e-8
L1_MAX_SWEEPS = 10_000
PINV_RTOL = 1e-10
CI_BRACKET_START = 10.0
CI_BRACKET_LIMIT = 1e6
CI_RTOL = 1e-6


@dataclass
class SpaceTsivResult:
    """Output of the sparse estimators.

    ``phi`` is True when even the final support is rejected by the Q test.
    ``accepted_supports`` lists every non-rejected support of the accepted
    size, best Q first.
    """

    estimate: np.ndarray
    phi: bool
    support: SupportSet
    q_value: float
    p_value: float
    accepted_supports: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    method: str = ""
    lambdas: np.ndarray | None = None


@dataclass(frozen=True)
class ConfidenceInterval:
    """Projection of the Q acceptance region onto one coordinate.

    Infinite endpoints mean the region is unbounded on that side. ``empty`` is
    set when no value of the coordinate is accepted (the support itself is
    rejected); the endpoints are then NaN.
    """

    coordinate: int
    lower: float
    upper: float
    level: float
    empty: bool = False

    @property
    def unbounded_lower(self):
        return self.lower == -math.inf

    @property
    def unbounded_upper(self):
        return self.upper == math.inf

    def contains(self, value):
        return not self.empty and self.lower <= value <= self.upper


def _failed_fit(joint, support):
    return FitResult(
        beta=np.zeros(joint.d),
        support=support,
        q_value=math.inf,
        p_value=0.0,
        converged=False,
        iterations=0,
        df=joint.m,
    )


def _safe_fit(joint, support):
    try:
        return fit_restricted(joint, support)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        logger.warning("fit failed on support %s: %s", support.to_list(), exc)
        return _failed_fit(joint, support)


def _rank_key(fit):
    return (fit.q_value, fit.support.indices)


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _record(fit, alpha, **extra):
    return {
        **extra,
        "support": fit.support.to_list(),
        "q_value": fit.q_value,
        "p_value": fit.p_value,
        "rejected": level_test(fit, alpha),
    }


def spacetsiv_l0(joint: JointSummaryStats, s_max: int | None = None, alpha: float = 0.05, threads: int = 1) -> SpaceTsivResult:
    """Sparse estimate by exhaustive search over supports of increasing size.

    For each size ``s = 1, 2, ...`` every support of that size is fitted and
    the one with the smallest Q is tested. The search stops at the first size
    whose best support is not rejected, or after ``s_max``.
    """
    limit = min(joint.d, joint.m)
    s_max = limit if s_max is None else int(s_max)
    if not 1 <= s_max <= limit:
        raise ValueError(f"s_max must be in [1, {limit}], got {s_max}")

    trajectory = []
    fits = []
    best = None
    phi = True
    size = 0
    while size < s_max and phi:
        size += 1
        supports = [SupportSet(c) for c in itertools.combinations(range(joint.d), size)]
        fits = _map(lambda s: _safe_fit(joint, s), supports, threads)
        for f in fits:
            logger.debug("size %d support %s Q = %.10g", size, f.support.to_list(), f.q_value)
        best = min(fits, key=_rank_key)
        phi = level_test(best, alpha)
        trajectory.append(
            _record(best, alpha, size=size, n_subsets=len(fits), n_failed=sum(math.isinf(f.q_value) for f in fits))
        )
        logger.info("size %d: best support %s, Q = %.6g, rejected = %s", size, best.support.to_list(), best.q_value, phi)

    accepted = []
    if not phi:
        accepted = sorted((f for f in fits if not level_test(f, alpha)), key=_rank_key)
    return SpaceTsivResult(
        estimate=best.beta.copy(),
        phi=phi,
        support=best.support,
        q_value=best.q_value,
        p_value=best.p_value,
        accepted_supports=[(f.support, f) for f in accepted],
        trajectory=trajectory,
        method="l0",
    )


def _l1_problem(joint):
    gram = joint.big_pi.T @ joint.big_pi
    corr = joint.big_pi.T @ joint.pi
    return gram, corr


def tsiv_l1_solve(joint: JointSummaryStats, lam: float, warm_start=None, *, tol: float = L1_TOL, max_sweeps: int = L1_MAX_SWEEPS) -> np.ndarray:
    """Minimise ``0.5 * ||pi - Pi beta||^2 + lam * ||beta||_1`` by coordinate descent.

    Cyclic soft-thresholding updates; after each full sweep the active
    coordinates are iterated to convergence before the next full sweep.
    Columns of ``Pi`` that are exactly zero stay at zero.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    gram, corr = _l1_problem(joint)
    if np.any(np.diag(gram) <= 0):
        logger.warning("zero columns %s in Pi; coefficients frozen at 0", np.flatnonzero(np.diag(gram) <= 0).tolist())
    return _coordinate_descent(gram, corr, lam, warm_start, tol, max_sweeps)


def _coordinate_descent(gram, corr, lam, warm_start, tol, max_sweeps):
    d = len(corr)
    beta = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=np.float64)
    diag = np.diag(gram).copy()
    frozen = diag <= 0
    if np.any(frozen):
        logger.debug("zero columns %s in Pi; coefficients frozen at 0", np.flatnonzero(frozen).tolist())
        beta[frozen] = 0.0
    # grad holds Pi_j'(pi - Pi beta) for every j
    grad = corr - gram @ beta
    movable = np.flatnonzero(~frozen)

    def sweep(coords):
        biggest = 0.0
        for j in coords:
            old = beta[j]
            rho = grad[j] + diag[j] * old
            if rho > lam:
                new = (rho - lam) / diag[j]
            elif rho < -lam:
                new = (rho + lam) / diag[j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                grad[:] -= gram[:, j] * delta
                biggest = max(biggest, abs(delta))
        return biggest

    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if sweep(movable) < tol:
            break
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps:
            sweeps += 1
            if sweep(active) < tol:
                break
    else:
        logger.warning("coordinate descent hit the sweep limit (%d) at lambda = %g", max_sweeps, lam)
    return beta


def tsiv(joint: JointSummaryStats) -> np.ndarray:
    """Least-squares estimate ``pinv(Pi) @ pi`` with small singular values truncated."""
    u, sv, vt = np.linalg.svd(joint.big_pi, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.zeros(joint.d)
    keep = sv > PINV_RTOL * sv[0]
    return vt[keep].T @ ((u[:, keep].T @ joint.pi) / sv[keep])


def lambda_max(joint: JointSummaryStats) -> float:
    return float(np.max(np.abs(joint.big_pi.T @ joint.pi), initial=0.0))


def default_lambda_path(joint: JointSummaryStats, n_points: int = 100) -> np.ndarray:
    """Geometric grid from the smallest all-zero penalty down to 1e-3 of it."""
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    top = lambda_max(joint)
    if top == 0.0:
        return np.array([0.0])
    return np.geomspace(top, 1e-3 * top, n_points)


def spacetsiv_l1(joint: JointSummaryStats, lambdas=None, alpha: float = 0.05) -> SpaceTsivResult:
    """Sparse estimate from a lasso path with Q-refits and level tests.

    The lasso support at each penalty is refitted by minimising Q on that
    support. The walk stops at the first accepted support. An empty support
    is tested through ``Q(0)``; a support larger than ``m`` cannot be refitted
    and ends the walk with the model rejected.
    """
    lambdas = default_lambda_path(joint) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    if lambdas.ndim != 1 or lambdas.size == 0:
        raise ValueError("lambdas must be a nonempty vector")
    if np.any(lambdas < 0) or np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be nonnegative and strictly decreasing")

    gram, corr = _l1_problem(joint)
    cache = {}
    trajectory = []
    beta = None
    fit = None
    phi = True
    for lam in lambdas:
        beta = _coordinate_descent(gram, corr, lam, beta, L1_TOL, L1_MAX_SWEEPS)
        support = SupportSet(np.flatnonzero(beta))
        if len(support) > joint.m:
            trajectory.append(
                {"lambda": float(lam), "support": support.to_list(), "q_value": None, "p_value": None,
                 "rejected": True, "over_parameterized": True}
            )
            logger.info("lambda %.6g: support of size %d exceeds m = %d; stopping", lam, len(support), joint.m)
            phi = True
            break
        if support not in cache:
            cache[support] = zero_fit(joint) if len(support) == 0 else _safe_fit(joint, support)
        fit = cache[support]
        phi = level_test(fit, alpha)
        trajectory.append(_record(fit, alpha, **{"lambda": float(lam)}))
        logger.debug("lambda %.6g: support %s Q = %.10g rejected = %s", lam, support.to_list(), fit.q_value, phi)
        if not phi:
            break

    if fit is None:
        fit = zero_fit(joint)
    return SpaceTsivResult(
        estimate=fit.beta.copy(),
        phi=phi,
        support=fit.support,
        q_value=fit.q_value,
        p_value=fit.p_value,
        accepted_supports=[] if phi else [(fit.support, fit)],
        trajectory=trajectory,
        method="l1",
        lambdas=lambdas,
    )


def _profile_q(joint, support, j, value):
    if len(support) == 1:
        beta = np.zeros(joint.d)
        beta[j] = value
        return q_statistic(joint, beta)
    return fit_restricted(joint, support, pinned={j: value}, allow_over_parameterized=True).q_value


def _solvable_for_any_value(joint, support, j):
    # the other support columns span R^m, so pi - Pi_j b is matched exactly for every b
    rest = [k for k in support if k != j]
    if len(rest) < joint.m:
        return False
    sv = np.linalg.svd(joint.big_pi[:, rest], compute_uv=False)
    return sv[0] > 0 and int(np.sum(sv > PINV_RTOL * sv[0])) == joint.m


def _endpoint(profile, center, direction, threshold):
    scale = 1.0 + abs(center)
    inner = center
    reach = CI_BRACKET_START * scale
    while True:
        point = center + direction * reach
        if profile(point) > threshold:
            outer = point
            break
        inner = point
        if reach >= CI_BRACKET_LIMIT * scale:
            return direction * math.inf
        reach = min(2.0 * reach, CI_BRACKET_LIMIT * scale)
    if profile(inner) >= threshold:
        return inner
    return optimize.brentq(lambda b: profile(b) - threshold, inner, outer,
                           xtol=CI_RTOL * max(1.0, abs(inner)), rtol=4 * np.finfo(float).eps)


def ci_by_inversion(joint: JointSummaryStats, s, alpha: float = 0.1, coordinates=None, threads: int = 1) -> list:
    """Confidence intervals for the coordinates of ``s`` by inverting the Q test.

    The confidence set for coordinate ``j`` collects every value ``b`` at which
    the minimum of Q over coefficients supported on ``s`` with ``beta_j = b``
    stays at or below the ``1 - alpha`` chi-squared quantile. Each endpoint is
    located by Brent root finding after bracketing outward from the point estimate; an
    endpoint beyond ``1e6 * (1 + |beta_j|)`` is reported as infinite.

    Supports larger than ``m`` are allowed. When the other columns of the
    support span all ``m`` moment conditions, Q can be driven to zero at any
    value of ``beta_j`` and the interval is the whole real line.
    """
    s = s if isinstance(s, SupportSet) else SupportSet(s)
    fit = fit_restricted(joint, s, allow_over_parameterized=True)
    threshold = chi2_quantile(1.0 - alpha, joint.m)
    level = 1.0 - alpha
    coords = list(s) if coordinates is None else [int(c) for c in coordinates]

    def one(j):
        if j not in s:
            raise ValueError(f"coordinate {j} is not in support {s}")
        if fit.q_value > threshold:
            return ConfidenceInterval(j, math.nan, math.nan, level, empty=True)
        if _solvable_for_any_value(joint, s, j):
            return ConfidenceInterval(j, -math.inf, math.inf, level)
        profile = lambda b: _profile_q(joint, s, j, b)  # noqa: E731
        center = float(fit.beta[j])
        return ConfidenceInterval(
            j,
            _endpoint(profile, center, -1.0, threshold),
            _endpoint(profile, center, 1.0, threshold),
            level,
        )

    return _map(one, coords, threads)
