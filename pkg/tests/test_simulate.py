import numpy as np
import pytest

from spacetsiv.errors import InputError
from spacetsiv.qstat import SupportSet
from spacetsiv.simulate import (
    DgpSpec,
    dgp1_spec,
    dgp2_spec,
    evaluate,
    run_experiment,
    simulate_dgp2_sumstats,
    simulate_individual,
)
from spacetsiv.sumstats import joint_from_individual


def test_dgp1_population_values(dgp1):
    expect = np.array([[1, 0, 1, 0, 0], [1, 1, 0, 1, 0], [0, 1, 0, 0, 1]], dtype=float)
    assert np.array_equal(dgp1.big_pi(), expect)
    assert np.array_equal(dgp1.pi(), [1.0, 3.0, 2.0])


def test_dgp3_offset(dgp3):
    assert np.allclose(dgp3.pi() - dgp3.big_pi() @ dgp3.beta_star, [0.1, 0.1, 0, 0, 0])
    offs = []
    for rep in range(40):
        j = joint_from_individual(*simulate_individual(dgp3, 20_000, 20_000, rng=np.random.default_rng(rep)))
        offs.append(j.pi - j.big_pi @ dgp3.beta_star)
    offs = np.array(offs)
    se = offs.std(axis=0, ddof=1) / np.sqrt(len(offs))
    assert np.all(np.abs(offs.mean(axis=0) - [0.1, 0.1, 0, 0, 0]) < 4 * se)


def test_reduced_form_consistency(dgp1):
    wins = 0
    for rep in range(50):
        rng = np.random.default_rng(rep)
        small = joint_from_individual(*simulate_individual(dgp1, 1000, 1000, rng=rng))
        large = joint_from_individual(*simulate_individual(dgp1, 100_000, 100_000, rng=rng))
        err = lambda j: np.abs(j.big_pi - dgp1.big_pi()).max() + np.abs(j.pi - dgp1.pi()).max()  # noqa: E731
        wins += err(large) < err(small)
        if rep == 0:
            assert np.abs(large.big_pi - dgp1.big_pi()).max() < 0.05
    assert wins >= 45


def test_independence_without_effects():
    spec = DgpSpec(a=np.zeros((2, 3)), b=np.zeros((2, 2)), beta_star=[0.0, 0.0], confounding=False)
    y, z, _, _ = simulate_individual(spec, 200_000, 10, rng=np.random.default_rng(0))
    corr = [np.corrcoef(y, z[:, k])[0, 1] for k in range(3)]
    assert np.max(np.abs(corr)) < 0.01


def test_seed_determinism(dgp1):
    a = simulate_individual(dgp1, 100, 120)
    b = simulate_individual(dgp1, 100, 120)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    assert np.array_equal(simulate_dgp2_sumstats(1000, 3).pi, simulate_dgp2_sumstats(1000, 3).pi)


def test_spec_validation():
    with pytest.raises(InputError, match="strictly lower"):
        DgpSpec(a=np.eye(2), b=np.array([[0.0, 1.0], [0.0, 0.0]]), beta_star=[1.0, 0.0])
    with pytest.raises(InputError):
        DgpSpec(a=np.eye(2), b=np.zeros((2, 2)), beta_star=[1.0])
    with pytest.raises(InputError):
        DgpSpec(a=np.eye(2), b=np.zeros((2, 2)), beta_star=[1.0, 0.0], var_z=-np.eye(2))


def test_dgp2_structure():
    spec = dgp2_spec(4)
    assert spec.d == 100 and spec.m == 5
    assert np.count_nonzero(spec.beta_star) == 2
    assert spec.beta_star[0] == 1.0 and spec.beta_star[1] == 2.0
    assert set(np.unique(spec.cov_nu_xy)) <= {0.2, 0.4, 0.6, 0.8}
    pi = spec.big_pi()
    assert np.array_equal(pi[:, 0], [1, 1, 0, 0, 0])
    assert np.array_equal(pi[:, 1], [0, 1, 2, 0, 0])
    assert np.allclose(spec.pi(), [1, 3, 4, 0, 0])


def test_dgp2_kronecker_elementwise():
    spec = dgp2_spec(1, d=8)
    _, sigma_big = spec.population_sigmas()
    inv = np.linalg.inv(np.eye(8) - spec.b)
    var_z_inv = np.linalg.inv(spec.var_z)
    m = 5
    for k in range(8):
        for l in range(8):
            # Cov(u_k, u_l) where u = nu_X (I - B)^{-1}, built entry by entry
            cov_kl = sum(inv[p, k] * spec.var_nu_x[p, q] * inv[q, l] for p in range(8) for q in range(8))
            assert np.allclose(sigma_big[k * m:(k + 1) * m, l * m:(l + 1) * m], cov_kl * var_z_inv, atol=1e-12)


def test_dgp2_sampling_moments():
    spec = dgp2_spec(0, d=6)
    sigma_pi, sigma_big = spec.population_sigmas()
    draws = [simulate_dgp2_sumstats(400, 0, spec=spec, rng=np.random.default_rng(r)) for r in range(4000)]
    pis = np.array([j.pi for j in draws])
    se = pis.std(axis=0, ddof=1) / np.sqrt(len(pis))
    assert np.all(np.abs(pis.mean(axis=0) - spec.pi()) < 4 * se)
    assert np.allclose(np.cov(pis.T) * 400, sigma_pi, atol=0.15 * np.abs(sigma_pi).max())
    vec = np.array([j.big_pi.T.ravel() for j in draws])  # column stacking
    assert np.allclose(np.cov(vec.T) * 400, sigma_big, atol=0.15 * np.abs(sigma_big).max())


def test_dgp2_noise_covariance_not_joint_psd():
    assert not dgp2_spec(0).joint_noise_is_psd()
    with pytest.raises(InputError):
        simulate_individual(dgp2_spec(0), 10, 10)


def test_dgp2_limit_recovers_truth():
    from spacetsiv.qstat import fit_restricted

    spec = dgp2_spec(0)
    fit = fit_restricted(spec.population_joint(10**5), [0, 1])
    assert np.allclose(fit.beta[:2], [1.0, 2.0], atol=1e-9)


def test_evaluate_ideal():
    row = evaluate([np.array([1.0, 2.0, 0.0])] * 3, [SupportSet([0, 1])] * 3, [1.0, 2.0, 0.0])
    assert row.bias == (0.0, 0.0, 0.0) and row.rmse == (0.0, 0.0, 0.0)
    assert row.jaccard_mean == 1.0 and row.correct_size_pct == 100.0 and row.tpr_mean == 1.0


def test_evaluate_partial_overlap():
    row = evaluate([np.array([0.0, 1.0, 1.0])], [SupportSet([1, 2])], [1.0, 2.0, 0.0])
    assert row.jaccard_mean == pytest.approx(1 / 3)
    assert row.tpr_mean == pytest.approx(1 / 2)
    assert row.bias == pytest.approx((-1.0, -1.0, 1.0))
    with pytest.raises(InputError):
        evaluate([], [], [1.0])


def test_exact_mode_is_ideal():
    rows = run_experiment("dgp1", [1000], repetitions=1, estimators=["l0"], exact=True)
    (row,) = rows
    assert row.jaccard_mean == 1.0 and row.correct_size_pct == 100.0 and row.tpr_mean == 1.0
    assert max(row.rmse) < 1e-9


def test_experiment_deterministic_and_counts_failures(monkeypatch):
    a = run_experiment("dgp1", [500], repetitions=3, estimators=["l0", "tsiv"], seed=5)
    b = run_experiment("dgp1", [500], repetitions=3, estimators=["l0", "tsiv"], seed=5)
    assert a == b

    from spacetsiv import simulate
    from spacetsiv.errors import NumericalError

    calls = {"n": 0}
    real = simulate.spacetsiv_l0

    def flaky(joint, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericalError("boom")
        return real(joint, **kw)

    monkeypatch.setattr(simulate, "spacetsiv_l0", flaky)
    (row,) = run_experiment("dgp1", [500], repetitions=3, estimators=["l0"], seed=5)
    assert row.failures == 1 and row.repetitions == 2


def test_experiment_rejects_unknown_names():
    with pytest.raises(InputError):
        run_experiment("dgp7", [100], repetitions=1)
    with pytest.raises(InputError):
        run_experiment("dgp1", [100], repetitions=1, estimators=["ridge"])


def test_threads_same_result():
    a = run_experiment("dgp3", [800], repetitions=4, estimators=["l1"], seed=2, threads=1)
    b = run_experiment("dgp3", [800], repetitions=4, estimators=["l1"], seed=2, threads=3)
    assert a == b
