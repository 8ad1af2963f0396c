"""Two-sample summary statistics: data model and marginal/joint conversion.

Two kinds of summary statistics are handled.

* Joint statistics hold the multivariate reduced-form OLS fits of the outcome
  on all instruments (``pi``) and of every covariate on all instruments
  (``big_pi``), together with their variance matrices.
* Marginal statistics hold the per-SNP univariate fits that GWAS actually
  publish, plus the correlation matrices needed to undo the marginalisation.

Conventions
-----------
All regressions are through the origin (no intercept), matching simulated data
with mean zero. ``MarginalSummaryStats.sigma_eta_sq`` and ``sigma_h_sq`` hold
squared standard errors ``RSS / (n * z'z)``, i.e. the residual sum of squares
over ``z'z`` divided by the sample size, which is the quantity that
``first_stage_f`` needs and the one published in GWAS files. The
conversion to joint statistics rescales them by ``n`` internally.

``JointSummaryStats.sigma_big_pi`` is a dense ``(m*d, m*d)`` matrix whose
``(k, l)`` block of size ``m x m`` is the covariance between columns ``k`` and
``l`` of ``big_pi`` (column-major stacking of ``big_pi``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateColumnError,
    DimensionMismatchError,
    InconsistentMarginalError,
    InputError,
    NearSingularError,
    RankDeficientError,
)

SINGULAR_RTOL = 1e-10
_CORR_ATOL = 1e-8


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _default_ids(prefix, n):
    return tuple(f"{prefix}{i + 1}" for i in range(n))


def _check_corr(mat, size, name):
    if mat.shape != (size, size):
        raise DimensionMismatchError(f"{name} has shape {mat.shape}, expected {(size, size)}")
    if not np.allclose(mat, mat.T, atol=_CORR_ATOL, rtol=0):
        raise InputError(f"{name} is not symmetric")
    if not np.allclose(np.diag(mat), 1.0, atol=_CORR_ATOL, rtol=0):
        raise InputError(f"{name} does not have a unit diagonal")
    if np.any(np.abs(mat) > 1.0 + _CORR_ATOL):
        raise InputError(f"{name} has entries outside [-1, 1]")


def _check_n(n, name):
    if int(n) != n or n < 1:
        raise InputError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


@dataclass(frozen=True)
class MarginalSummaryStats:
    """Per-SNP univariate effect estimates from two independent samples.

    Parameters
    ----------
    eta : array of shape (m,)
        SNP-outcome effects, estimated in sample a.
    sigma_eta_sq : array of shape (m,)
        Squared standard errors of ``eta``.
    h : array of shape (m, d)
        SNP-covariate effects, estimated in sample b.
    sigma_h_sq : array of shape (m, d)
        Squared standard errors of ``h``.
    m_za, m_zb : arrays of shape (m, m)
        Instrument correlation matrices in sample a and sample b. Passing the
        same object twice is the shared-matrix mode.
    m_x : array of shape (d, d)
        Covariate correlation matrix in sample b.
    n_a, n_b : int
        Sample sizes of the outcome and the covariate study.
    """

    eta: np.ndarray
    sigma_eta_sq: np.ndarray
    h: np.ndarray
    sigma_h_sq: np.ndarray
    m_za: np.ndarray
    m_zb: np.ndarray
    m_x: np.ndarray
    n_a: int
    n_b: int
    snp_ids: tuple = ()
    covariate_ids: tuple = ()

    def __post_init__(self):
        shared = self.m_za is self.m_zb
        set_ = object.__setattr__
        set_(self, "eta", _frozen(self.eta, 1, "eta"))
        set_(self, "sigma_eta_sq", _frozen(self.sigma_eta_sq, 1, "sigma_eta_sq"))
        set_(self, "h", _frozen(self.h, 2, "h"))
        set_(self, "sigma_h_sq", _frozen(self.sigma_h_sq, 2, "sigma_h_sq"))
        set_(self, "m_za", _frozen(self.m_za, 2, "m_za"))
        set_(self, "m_zb", self.m_za if shared else _frozen(self.m_zb, 2, "m_zb"))
        set_(self, "m_x", _frozen(self.m_x, 2, "m_x"))
        set_(self, "n_a", _check_n(self.n_a, "n_a"))
        set_(self, "n_b", _check_n(self.n_b, "n_b"))
        m, d = self.h.shape
        if self.eta.shape != (m,) or self.sigma_eta_sq.shape != (m,):
            raise DimensionMismatchError(
                f"eta has shape {self.eta.shape} and sigma_eta_sq {self.sigma_eta_sq.shape}, "
                f"but h has {m} rows"
            )
        if self.sigma_h_sq.shape != (m, d):
            raise DimensionMismatchError(
                f"sigma_h_sq has shape {self.sigma_h_sq.shape}, h has shape {(m, d)}"
            )
        if np.any(self.sigma_eta_sq < 0) or np.any(self.sigma_h_sq < 0):
            raise InputError("squared standard errors must be nonnegative")
        _check_corr(self.m_za, m, "m_za")
        _check_corr(self.m_zb, m, "m_zb")
        _check_corr(self.m_x, d, "m_x")
        set_(self, "snp_ids", tuple(self.snp_ids) or _default_ids("snp", m))
        set_(self, "covariate_ids", tuple(self.covariate_ids) or _default_ids("x", d))
        if len(self.snp_ids) != m or len(self.covariate_ids) != d:
            raise DimensionMismatchError(
                f"got {len(self.snp_ids)} SNP ids and {len(self.covariate_ids)} covariate ids "
                f"for data of shape {(m, d)}"
            )

    @property
    def m(self):
        return self.h.shape[0]

    @property
    def d(self):
        return self.h.shape[1]

    @property
    def shared_correlation(self):
        return self.m_za is self.m_zb

    def subset(self, rows):
        """Restrict every field to the SNPs at positions ``rows``."""
        rows = np.asarray(rows, dtype=int)
        idx = np.ix_(rows, rows)
        m_za = self.m_za[idx]
        m_zb = m_za if self.shared_correlation else self.m_zb[idx]
        return replace(
            self,
            eta=self.eta[rows],
            sigma_eta_sq=self.sigma_eta_sq[rows],
            h=self.h[rows],
            sigma_h_sq=self.sigma_h_sq[rows],
            m_za=m_za,
            m_zb=m_zb,
            snp_ids=tuple(self.snp_ids[i] for i in rows),
        )


@dataclass(frozen=True)
class JointSummaryStats:
    """Reduced-form joint OLS estimates from two independent samples.

    ``sigma_big_pi`` is stored densely with shape ``(m*d, m*d)``; use
    :meth:`block` for the ``m x m`` covariance between two columns of
    ``big_pi``.
    """

    pi: np.ndarray
    sigma_pi: np.ndarray
    big_pi: np.ndarray
    sigma_big_pi: np.ndarray
    n_a: int
    n_b: int
    snp_ids: tuple = ()
    covariate_ids: tuple = ()
    _blocks: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "pi", _frozen(self.pi, 1, "pi"))
        set_(self, "sigma_pi", _frozen(self.sigma_pi, 2, "sigma_pi"))
        set_(self, "big_pi", _frozen(self.big_pi, 2, "big_pi"))
        set_(self, "sigma_big_pi", _frozen(self.sigma_big_pi, 2, "sigma_big_pi"))
        set_(self, "n_a", _check_n(self.n_a, "n_a"))
        set_(self, "n_b", _check_n(self.n_b, "n_b"))
        m, d = self.big_pi.shape
        if self.pi.shape != (m,):
            raise DimensionMismatchError(f"pi has shape {self.pi.shape}, big_pi has {m} rows")
        if self.sigma_pi.shape != (m, m):
            raise DimensionMismatchError(f"sigma_pi has shape {self.sigma_pi.shape}, expected {(m, m)}")
        if self.sigma_big_pi.shape != (m * d, m * d):
            raise DimensionMismatchError(
                f"sigma_big_pi has shape {self.sigma_big_pi.shape}, expected {(m * d, m * d)}"
            )
        for name, mat in (("sigma_pi", self.sigma_pi), ("sigma_big_pi", self.sigma_big_pi)):
            scale = max(1.0, float(np.max(np.abs(mat), initial=0.0)))
            if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-8 * scale:
                raise InputError(f"{name} is not symmetric")
        set_(self, "snp_ids", tuple(self.snp_ids) or _default_ids("snp", m))
        set_(self, "covariate_ids", tuple(self.covariate_ids) or _default_ids("x", d))
        if len(self.snp_ids) != m or len(self.covariate_ids) != d:
            raise DimensionMismatchError(
                f"got {len(self.snp_ids)} SNP ids and {len(self.covariate_ids)} covariate ids "
                f"for big_pi of shape {(m, d)}"
            )
        # (k, i, l, j) view: blocks[k, :, l, :] is block [kl]
        blocks = self.sigma_big_pi.reshape(d, m, d, m)
        set_(self, "_blocks", blocks)

    @property
    def m(self):
        return self.big_pi.shape[0]

    @property
    def d(self):
        return self.big_pi.shape[1]

    def block(self, k, l):
        """Covariance block between columns ``k`` and ``l`` of ``big_pi``."""
        return self._blocks[k, :, l, :]

    def blocks(self, support):
        """Blocks restricted to ``support`` as an array indexed ``[k, i, l, j]``."""
        s = np.asarray(support, dtype=int)
        return self._blocks[s][:, :, s, :]


def _checked_inverse(mat, name):
    w, v = np.linalg.eigh(mat)
    if w[-1] <= 0 or w[0] < SINGULAR_RTOL * w[-1]:
        raise NearSingularError(name, float(w[0]), float(w[-1]))
    return (v / w) @ v.T


def marginal_to_joint(marg: MarginalSummaryStats) -> JointSummaryStats:
    """Recover joint OLS summary statistics from marginal ones.

    The conversion is an exact algebraic identity when the marginal
    statistics and correlation matrices come from the same data.

    Raises
    ------
    NearSingularError
        If an instrument correlation matrix is numerically singular.
    InconsistentMarginalError
        If the implied residual variance of the outcome (or of a covariate)
        is not positive.
    """
    m, d = marg.m, marg.d
    inv_a = _checked_inverse(marg.m_za, "m_za")
    inv_b = inv_a if marg.shared_correlation else _checked_inverse(marg.m_zb, "m_zb")

    # Diagonal scalings sqrt(y'y / z_i'z_i), stored as vectors.
    d_a = np.sqrt(marg.n_a * marg.sigma_eta_sq + marg.eta**2)
    d_b = np.sqrt(marg.n_b * marg.sigma_h_sq + marg.h**2)
    if np.any(d_a == 0) or np.any(d_b == 0):
        raise InconsistentMarginalError("inconsistent marginal statistics: zero outcome or covariate scale")

    pi = d_a * (inv_a @ (marg.eta / d_a))
    eta_t = marg.eta / d_a
    resid_a = 1.0 - eta_t @ inv_a @ eta_t
    if resid_a <= 0:
        raise InconsistentMarginalError(
            f"inconsistent marginal statistics: implied outcome residual variance factor {resid_a:.6g} <= 0"
        )
    sigma_pi = resid_a * (d_a[:, None] * inv_a * d_a[None, :])

    big_pi = d_b * (inv_b @ (marg.h / d_b))
    h_t = marg.h / d_b
    scal = marg.m_x - h_t.T @ inv_b @ h_t
    if np.any(np.diag(scal) <= 0):
        k = int(np.argmin(np.diag(scal)))
        raise InconsistentMarginalError(
            f"inconsistent marginal statistics: implied residual variance factor "
            f"{scal[k, k]:.6g} <= 0 for covariate {marg.covariate_ids[k]}"
        )
    # entry [(k, i), (l, j)] = scal[k, l] * d_b[i, k] * inv_b[i, j] * d_b[j, l]
    sigma_big = np.einsum("kl,ik,ij,jl->kilj", scal, d_b, inv_b, d_b).reshape(m * d, m * d)
    sigma_big = 0.5 * (sigma_big + sigma_big.T)
    sigma_pi = 0.5 * (sigma_pi + sigma_pi.T)
    return JointSummaryStats(
        pi=pi,
        sigma_pi=sigma_pi,
        big_pi=big_pi,
        sigma_big_pi=sigma_big,
        n_a=marg.n_a,
        n_b=marg.n_b,
        snp_ids=marg.snp_ids,
        covariate_ids=marg.covariate_ids,
    )


def _as_design(z, name):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a matrix, got shape {z.shape}")
    return z


def _gram_inverse(z, name):
    ztz = z.T @ z
    w = np.linalg.eigvalsh(ztz)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise RankDeficientError(f"rank-deficient instrument design {name}")
    return ztz, np.linalg.inv(ztz)


def _check_rows(y_a, z_a, x_b, z_b):
    if y_a.shape[0] != z_a.shape[0]:
        raise DimensionMismatchError(f"Y_a has {y_a.shape[0]} rows, Z_a has {z_a.shape[0]}")
    if x_b.shape[0] != z_b.shape[0]:
        raise DimensionMismatchError(f"X_b has {x_b.shape[0]} rows, Z_b has {z_b.shape[0]}")
    if z_a.shape[1] != z_b.shape[1]:
        raise DimensionMismatchError(f"Z_a has {z_a.shape[1]} columns, Z_b has {z_b.shape[1]}")


def joint_from_individual(y_a, z_a, x_b, z_b, *, snp_ids=(), covariate_ids=()) -> JointSummaryStats:
    """Joint OLS summary statistics computed from individual-level data."""
    y_a = np.asarray(y_a, dtype=np.float64).ravel()
    z_a, x_b, z_b = _as_design(z_a, "Z_a"), _as_design(x_b, "X_b"), _as_design(z_b, "Z_b")
    _check_rows(y_a, z_a, x_b, z_b)
    m, d = z_b.shape[1], x_b.shape[1]

    _, inv_a = _gram_inverse(z_a, "Z_a")
    pi = inv_a @ (z_a.T @ y_a)
    eps_a = y_a - z_a @ pi
    sigma_pi = (eps_a @ eps_a) * inv_a

    _, inv_b = _gram_inverse(z_b, "Z_b")
    big_pi = inv_b @ (z_b.T @ x_b)
    eps_b = x_b - z_b @ big_pi
    rss = eps_b.T @ eps_b
    sigma_big = np.kron(rss, inv_b)
    return JointSummaryStats(
        pi=pi,
        sigma_pi=0.5 * (sigma_pi + sigma_pi.T),
        big_pi=big_pi,
        sigma_big_pi=0.5 * (sigma_big + sigma_big.T),
        n_a=len(y_a),
        n_b=x_b.shape[0],
        snp_ids=snp_ids or _default_ids("snp", m),
        covariate_ids=covariate_ids or _default_ids("x", d),
    )


def _correlation(gram, name):
    diag = np.diag(gram)
    if np.any(diag <= 0):
        raise DegenerateColumnError(f"degenerate column {int(np.argmin(diag))} in {name}")
    scale = 1.0 / np.sqrt(diag)
    corr = scale[:, None] * gram * scale[None, :]
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def marginal_from_individual(y_a, z_a, x_b, z_b, *, snp_ids=(), covariate_ids=()) -> MarginalSummaryStats:
    """Per-SNP univariate OLS summary statistics from individual-level data."""
    y_a = np.asarray(y_a, dtype=np.float64).ravel()
    z_a, x_b, z_b = _as_design(z_a, "Z_a"), _as_design(x_b, "X_b"), _as_design(z_b, "Z_b")
    _check_rows(y_a, z_a, x_b, z_b)
    n_a, n_b = len(y_a), x_b.shape[0]

    gram_a = z_a.T @ z_a
    gram_b = z_b.T @ z_b
    m_za = _correlation(gram_a, "Z_a")
    m_zb = _correlation(gram_b, "Z_b")
    m_x = _correlation(x_b.T @ x_b, "X_b")

    zz_a = np.diag(gram_a)
    eta = (z_a.T @ y_a) / zz_a
    resid = y_a[:, None] - z_a * eta
    sigma_eta_sq = np.einsum("ij,ij->j", resid, resid) / zz_a / n_a

    zz_b = np.diag(gram_b)
    h = (z_b.T @ x_b) / zz_b[:, None]
    sigma_h_sq = np.empty_like(h)
    for k in range(x_b.shape[1]):
        r = x_b[:, [k]] - z_b * h[:, k]
        sigma_h_sq[:, k] = np.einsum("ij,ij->j", r, r) / zz_b / n_b

    return MarginalSummaryStats(
        eta=eta,
        sigma_eta_sq=sigma_eta_sq,
        h=h,
        sigma_h_sq=sigma_h_sq,
        m_za=m_za,
        m_zb=m_zb,
        m_x=m_x,
        n_a=n_a,
        n_b=n_b,
        snp_ids=snp_ids,
        covariate_ids=covariate_ids,
    )


def first_stage_f(marg: MarginalSummaryStats) -> np.ndarray:
    """First-stage F-statistics, one per (SNP, covariate) pair.

    Entry ``(j, k)`` is the squared marginal effect of SNP ``j`` on covariate
    ``k`` divided by its squared standard error.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return marg.h**2 / marg.sigma_h_sq


def select_instruments(marg: MarginalSummaryStats, k_per_covariate: int) -> MarginalSummaryStats:
    """Keep, for each covariate, the ``k_per_covariate`` SNPs with the largest F.

    The union over covariates is returned in the original SNP order. Ties are
    broken in favour of the SNP listed first.
    """
    if not 1 <= k_per_covariate <= marg.m:
        raise InputError(f"k_per_covariate must be in [1, {marg.m}], got {k_per_covariate}")
    f = first_stage_f(marg)
    keep = set()
    for k in range(marg.d):
        order = np.argsort(-f[:, k], kind="stable")
        keep.update(int(i) for i in order[:k_per_covariate])
    return marg.subset(sorted(keep))


def rescale_df_corrected(marg: MarginalSummaryStats, df_offset: int = 2) -> MarginalSummaryStats:
    """Convert squared standard errors computed with ``n - df_offset`` residual
    degrees of freedom into the no-correction convention used here."""
    return replace(
        marg,
        sigma_eta_sq=marg.sigma_eta_sq * (marg.n_a - df_offset) / marg.n_a,
        sigma_h_sq=marg.sigma_h_sq * (marg.n_b - df_offset) / marg.n_b,
        m_zb=marg.m_za if marg.shared_correlation else marg.m_zb,
    )

