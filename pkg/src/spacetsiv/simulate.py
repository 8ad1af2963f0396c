"""Simulation harness: linear SCMs, summary-statistic draws and metric sweeps.

Covariates are generated row-wise as

    X = (Z A^T + H + nu_X) (I - B)^{-1}      (confounded style)
    X = (Z A^T + nu_X) (I - B)^{-1}          (explicit-covariance style)
    Y = X beta + Z gamma [+ H 1_d] + nu_Y

so the reduced form of X on Z is ``Pi = A^T (I - B)^{-1}`` and
``pi = Pi beta + gamma``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SpaceTsivError
from .estimators import spacetsiv_l0, spacetsiv_l1, tsiv
from .qstat import SupportSet
from .sumstats import JointSummaryStats, joint_from_individual

log = logging.getLogger(__name__)

ESTIMATORS = ("l0", "l1", "tsiv")
DGPS = ("dgp1", "dgp2", "dgp3")
DGP2_D = 100
DGP2_COV_LEVELS = (0.2, 0.4, 0.6, 0.8)

_B5 = np.array(
    [
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [1, 0, 0, 0, 0],
        [1, 1, 0, 0, 0],
        [0, 1, 0, 0, 0],
    ],
    dtype=float,
)
_A53 = np.array(
    [[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
    dtype=float,
)
_DGP2_VAR_Z = np.array(
    [
        [1, 0.05, -0.1, 0.075, 0.025],
        [0.05, 1, 0, 0, 0],
        [-0.1, 0, 1, 0, 0],
        [0.075, 0, 0, 1, 0],
        [0.025, 0, 0, 0, 1],
    ]
)


def _is_pd(mat):
    if not np.allclose(mat, mat.T, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class DgpSpec:
    a: np.ndarray  # d x m
    b: np.ndarray  # d x d, strictly lower triangular
    beta_star: np.ndarray
    gamma: np.ndarray | None = None
    var_z: np.ndarray | None = None
    var_nu_x: np.ndarray | None = None
    var_nu_y: float = 1.0
    cov_nu_xy: np.ndarray | None = None
    confounding: bool = True
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 2:
            raise InputError("a must be a d x m matrix")
        d, m = a.shape
        b = np.array(self.b, dtype=float)
        if b.shape != (d, d):
            raise InputError(f"b has shape {b.shape}, expected {(d, d)}")
        if np.any(np.triu(b) != 0):
            raise InputError("b must be strictly lower triangular")
        beta = np.array(self.beta_star, dtype=float)
        if beta.shape != (d,):
            raise InputError(f"beta_star has shape {beta.shape}, expected {(d,)}")
        gamma = np.zeros(m) if self.gamma is None else np.array(self.gamma, dtype=float)
        if gamma.shape != (m,):
            raise InputError(f"gamma has shape {gamma.shape}, expected {(m,)}")
        var_z = np.eye(m) if self.var_z is None else np.array(self.var_z, dtype=float)
        var_x = np.eye(d) if self.var_nu_x is None else np.array(self.var_nu_x, dtype=float)
        cov = np.zeros(d) if self.cov_nu_xy is None else np.array(self.cov_nu_xy, dtype=float)
        if var_z.shape != (m, m) or not _is_pd(var_z):
            raise InputError("var_z must be a symmetric positive definite m x m matrix")
        if var_x.shape != (d, d) or not _is_pd(var_x):
            raise InputError("var_nu_x must be a symmetric positive definite d x d matrix")
        if not self.var_nu_y > 0:
            raise InputError("var_nu_y must be positive")
        if cov.shape != (d,):
            raise InputError(f"cov_nu_xy has shape {cov.shape}, expected {(d,)}")
        for name, val in (("a", a), ("b", b), ("beta_star", beta), ("gamma", gamma),
                          ("var_z", var_z), ("var_nu_x", var_x), ("cov_nu_xy", cov)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "var_nu_y", float(self.var_nu_y))
        if self.outcome_residual_variance() <= 0:
            raise InputError("implied outcome residual variance is not positive")

    @property
    def d(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.a.shape[1]

    def _inv_i_minus_b(self):
        return np.linalg.inv(np.eye(self.d) - self.b)

    def big_pi(self):
        return self.a.T @ self._inv_i_minus_b()

    def pi(self):
        return self.big_pi() @ self.beta_star + self.gamma

    def total_effect(self):
        # V = (I - B)^{-1} beta: loading of the covariate noise on Y
        return self._inv_i_minus_b() @ self.beta_star

    def covariate_residual_cov(self):
        inv = self._inv_i_minus_b()
        noise = self.var_nu_x + (np.eye(self.d) if self.confounding else 0.0)
        return inv.T @ noise @ inv

    def outcome_residual_variance(self):
        v = self.total_effect()
        out = v @ self.var_nu_x @ v + self.var_nu_y
        if self.confounding:
            out += np.sum((v + 1.0) ** 2)
        else:
            out += 2.0 * v @ self.cov_nu_xy
        return float(out)

    def joint_noise_is_psd(self):
        if self.confounding:
            return True
        full = np.block([[self.var_nu_x, self.cov_nu_xy[:, None]],
                         [self.cov_nu_xy[None, :], np.array([[self.var_nu_y]])]])
        return bool(np.linalg.eigvalsh(full)[0] >= -1e-12 * np.abs(full).max())

    def population_sigmas(self):
        var_z_inv = np.linalg.inv(self.var_z)
        var_z_inv = 0.5 * (var_z_inv + var_z_inv.T)
        sigma_pi = self.outcome_residual_variance() * var_z_inv
        sigma_big = np.kron(self.covariate_residual_cov(), var_z_inv)
        return sigma_pi, 0.5 * (sigma_big + sigma_big.T)

    def population_joint(self, n_a, n_b=None) -> JointSummaryStats:
        """Noise-free summary statistics at the population values."""
        sigma_pi, sigma_big = self.population_sigmas()
        return JointSummaryStats(
            pi=self.pi(), sigma_pi=sigma_pi, big_pi=self.big_pi(), sigma_big_pi=sigma_big,
            n_a=n_a, n_b=n_a if n_b is None else n_b,
        )


def dgp1_spec(seed=0) -> DgpSpec:
    return DgpSpec(a=_A53, b=_B5, beta_star=[1, 2, 0, 0, 0], seed=seed, name="dgp1")


def dgp3_spec(seed=0) -> DgpSpec:
    # two invalid instruments with a direct effect of 0.1 on Y
    return DgpSpec(a=np.eye(5), b=_B5, beta_star=[1, 2, 0, 0, 0],
                   gamma=[0.1, 0.1, 0, 0, 0], seed=seed, name="dgp3")


def dgp2_spec(seed=0, d=DGP2_D) -> DgpSpec:
    """High-dimensional, correlated-instrument setting with random noise covariances.

    The 5 x 3 instrument block and 5 x 5 covariate block sit in the top-left
    corner; the remaining covariates have no instruments and no parents.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    a = np.zeros((d, 5))
    a[:5, :3] = _A53
    b = np.zeros((d, d))
    b[:5, :5] = _B5
    b[4, 1] = 2.0
    w = rng.uniform(-0.3, 0.5, size=(d, d))
    var_x = w @ w.T + np.eye(d)
    cov = rng.choice(DGP2_COV_LEVELS, size=d)
    beta = np.zeros(d)
    beta[:2] = (1.0, 2.0)
    return DgpSpec(a=a, b=b, beta_star=beta, var_z=_DGP2_VAR_Z, var_nu_x=var_x, var_nu_y=1.0,
                   cov_nu_xy=cov, confounding=False, seed=seed, name="dgp2")


def make_spec(dgp, seed=0) -> DgpSpec:
    try:
        return {"dgp1": dgp1_spec, "dgp2": dgp2_spec, "dgp3": dgp3_spec}[dgp](seed)
    except KeyError:
        raise InputError(f"unknown dgp {dgp!r}; expected one of {', '.join(DGPS)}") from None


def _draw_sample(spec, n, rng, keep_outcome):
    z = rng.standard_normal((n, spec.m)) @ np.linalg.cholesky(spec.var_z).T
    inv = np.linalg.inv(np.eye(spec.d) - spec.b)
    if spec.confounding:
        h = rng.standard_normal((n, spec.d))
        nu_x = rng.standard_normal((n, spec.d)) @ np.linalg.cholesky(spec.var_nu_x).T
        nu_y = math.sqrt(spec.var_nu_y) * rng.standard_normal(n)
        x = (z @ spec.a.T + h + nu_x) @ inv
        if not keep_outcome:
            return x, z
        return x @ spec.beta_star + z @ spec.gamma + h.sum(axis=1) + nu_y, z
    full = np.block([[spec.var_nu_x, spec.cov_nu_xy[:, None]],
                     [spec.cov_nu_xy[None, :], np.array([[spec.var_nu_y]])]])
    noise = rng.multivariate_normal(np.zeros(spec.d + 1), full, size=n, method="eigh")
    x = (z @ spec.a.T + noise[:, :-1]) @ inv
    if not keep_outcome:
        return x, z
    return x @ spec.beta_star + z @ spec.gamma + noise[:, -1], z


def simulate_individual(spec: DgpSpec, n_a: int, n_b: int, rng=None):
    """Two independent samples; returns (y_a, z_a, x_b, z_b).

    Without an explicit generator the draw is seeded from ``spec.seed``.
    """
    if n_a < 1 or n_b < 1:
        raise InputError("sample sizes must be positive")
    if not spec.joint_noise_is_psd():
        raise InputError("joint covariance of (nu_X, nu_Y) is not positive semidefinite")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    y_a, z_a = _draw_sample(spec, n_a, rng, keep_outcome=True)
    x_b, z_b = _draw_sample(spec, n_b, rng, keep_outcome=False)
    return y_a, z_a, x_b, z_b


def simulate_dgp2_sumstats(n: int, seed: int, spec: DgpSpec | None = None, rng=None) -> JointSummaryStats:
    """Gaussian draws of the reduced-form estimates around the population values.

    The covariance fields are set to their population values.
    """
    if n < 1:
        raise InputError("n must be positive")
    spec = dgp2_spec(seed) if spec is None else spec
    rng = np.random.default_rng(seed) if rng is None else rng
    sigma_pi, sigma_big = spec.population_sigmas()
    var_z_inv = np.linalg.inv(spec.var_z)
    chol_z = np.linalg.cholesky(0.5 * (var_z_inv + var_z_inv.T))
    chol_u = np.linalg.cholesky(spec.covariate_residual_cov())
    scale = 1.0 / math.sqrt(n)
    pi_hat = spec.pi() + scale * math.sqrt(spec.outcome_residual_variance()) * (chol_z @ rng.standard_normal(spec.m))
    # vec(L_z G L_u^T) has covariance Cov(u) kron Var(Z)^{-1}
    big_pi_hat = spec.big_pi() + scale * (chol_z @ rng.standard_normal((spec.m, spec.d)) @ chol_u.T)
    return JointSummaryStats(pi=pi_hat, sigma_pi=sigma_pi, big_pi=big_pi_hat,
                             sigma_big_pi=sigma_big, n_a=n, n_b=n)


@dataclass(frozen=True)
class MetricsRow:
    n: int
    estimator: str
    bias: tuple
    rmse: tuple
    jaccard_mean: float
    correct_size_pct: float
    tpr_mean: float
    repetitions: int
    failures: int = 0

    def to_record(self):
        rec = {
            "n": self.n, "estimator": self.estimator, "repetitions": self.repetitions,
            "failures": self.failures, "jaccard_mean": self.jaccard_mean,
            "correct_size_pct": self.correct_size_pct, "tpr_mean": self.tpr_mean,
        }
        for j, v in enumerate(self.bias):
            rec[f"bias_{j + 1}"] = v
        for j, v in enumerate(self.rmse):
            rec[f"rmse_{j + 1}"] = v
        return rec


def _jaccard(a, b):
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def evaluate(estimates, selected, beta_star, n: int = 0, estimator: str = "", failures: int = 0) -> MetricsRow:
    if len(estimates) == 0 or len(estimates) != len(selected):
        raise InputError("estimates and selected must be nonempty and of equal length")
    est = np.asarray(estimates, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    err = est - beta_star
    truth = set(np.flatnonzero(beta_star).tolist())
    sets = [set(SupportSet(s)) for s in selected]
    return MetricsRow(
        n=n,
        estimator=estimator,
        bias=tuple(err.mean(axis=0).tolist()),
        rmse=tuple(np.sqrt((err**2).mean(axis=0)).tolist()),
        jaccard_mean=float(np.mean([_jaccard(s, truth) for s in sets])),
        correct_size_pct=100.0 * float(np.mean([len(s) == len(truth) for s in sets])),
        tpr_mean=float(np.mean([len(s & truth) / len(truth) if truth else 1.0 for s in sets])),
        repetitions=len(sets),
        failures=failures,
    )


def run_estimator(name, joint, alpha=0.05):
    """Return (estimate, selected support) for one named estimator."""
    if name == "l0":
        res = spacetsiv_l0(joint, alpha=alpha)
        return res.estimate, res.support
    if name == "l1":
        res = spacetsiv_l1(joint, alpha=alpha)
        return res.estimate, res.support
    if name == "tsiv":
        est = tsiv(joint)
        return est, SupportSet(np.flatnonzero(est).tolist())
    raise InputError(f"unknown estimator {name!r}; expected one of {', '.join(ESTIMATORS)}")


@dataclass
class _Cell:
    estimates: list = field(default_factory=list)
    supports: list = field(default_factory=list)
    failures: int = 0


def _repetition_joint(dgp, spec, n, rng, exact):
    if exact:
        return spec.population_joint(n, n)
    if dgp == "dgp2":
        return simulate_dgp2_sumstats(n, spec.seed, spec=spec, rng=rng)
    return joint_from_individual(*simulate_individual(spec, n, n, rng=rng))


def run_experiment(dgp, n_grid, repetitions=50, estimators=ESTIMATORS, alpha=0.05, seed=0,
                   exact=False, threads=1) -> list:
    """Monte Carlo sweep; one MetricsRow per (n, estimator).

    Repetition ``r`` at grid position ``i`` draws from the stream
    ``SeedSequence(seed, spawn_key=(i, r))``, so results do not depend on
    thread scheduling. Failed fits are counted and excluded.
    """
    if repetitions < 1:
        raise InputError("repetitions must be at least 1")
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    estimators = list(estimators)
    for name in estimators:
        if name not in ESTIMATORS:
            raise InputError(f"unknown estimator {name!r}; expected one of {', '.join(ESTIMATORS)}")
    spec = make_spec(dgp, seed)

    def one(task):
        i, n, r = task
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, r)))
        out = {}
        try:
            joint = _repetition_joint(dgp, spec, n, rng, exact)
        except SpaceTsivError as exc:
            log.warning("n=%d rep=%d: data generation failed: %s", n, r, exc)
            return {name: None for name in estimators}
        for name in estimators:
            try:
                out[name] = run_estimator(name, joint, alpha)
            except (SpaceTsivError, np.linalg.LinAlgError) as exc:
                log.warning("n=%d rep=%d %s failed: %s", n, r, name, exc)
                out[name] = None
        return out

    rows = []
    for i, n in enumerate(n_grid):
        tasks = [(i, int(n), r) for r in range(repetitions)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, tasks))
        else:
            results = [one(t) for t in tasks]
        for name in estimators:
            cell = _Cell()
            for res in results:
                if res[name] is None:
                    cell.failures += 1
                else:
                    cell.estimates.append(res[name][0])
                    cell.supports.append(res[name][1])
            if cell.estimates:
                rows.append(evaluate(cell.estimates, cell.supports, spec.beta_star,
                                     n=int(n), estimator=name, failures=cell.failures))
            else:
                nan = (math.nan,) * spec.d
                rows.append(MetricsRow(int(n), name, nan, nan, math.nan, math.nan, math.nan, 0, cell.failures))
            log.info("dgp=%s n=%d estimator=%s done (%d failures)", dgp, n, name, cell.failures)
    return rows


def plot_metrics(rows, path, causal=None):
    """Bias/rmse and selection metrics against n, one line per estimator."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted({r.estimator for r in rows})
    causal = causal if causal is not None else range(min(2, len(rows[0].rmse)))
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for name in names:
        sub = sorted((r for r in rows if r.estimator == name), key=lambda r: r.n)
        ns = [r.n for r in sub]
        for j in causal:
            axes[0].plot(ns, [abs(r.bias[j]) for r in sub], marker="o", label=f"{name} |bias| {j + 1}")
            axes[1].plot(ns, [r.rmse[j] for r in sub], marker="o", label=f"{name} rmse {j + 1}")
        axes[2].plot(ns, [r.jaccard_mean for r in sub], marker="o", label=f"{name} jaccard")
        axes[2].plot(ns, [r.correct_size_pct / 100 for r in sub], marker="s", ls="--", label=f"{name} size ok")
    for ax, title in zip(axes, ("absolute bias", "rmse", "selection")):
        ax.set_xscale("log")
        ax.set_xlabel("n")
        ax.set_title(title)
        ax.legend(fontsize=7)
    axes[0].set_yscale("log")
    axes[1].set_yscale("log")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
