import numpy as np
import pytest

from mblprobe.inference import (convergence_diagnostic, gelman_rubin, gibbs_run, kde_mode,
                                summarize)

SHORT = dict(iterations=40_000, burn_in=20_000, thin=10)


def test_retained_draw_bookkeeping():
    s = gibbs_run(np.ones((3, 4)) + np.arange(4), chains=2, iterations=1000, burn_in=800, thin=10)
    assert s.draws.shape == (2, 20, 6)
    assert s.names == ["mu", "tau", "delta", "theta_0", "theta_1", "theta_2"]
    assert (1_000_000 - 800_000) // 10 == 20_000


def test_constant_data_concentrates_mu():
    s = gibbs_run(np.full((3, 10), 3.0), **SHORT)
    assert abs(summarize(s)["parameters"]["mu"]["mode"] - 3.0) < 0.05
    assert np.all(s["delta"] > 0) and np.all(s["tau"] > 0)


def test_gelman_rubin_cases():
    gen = np.random.default_rng(0)
    assert gelman_rubin(gen.normal(size=(3, 5000))) < 1.01
    apart = np.stack([gen.normal(0, 1, 2000), gen.normal(10, 1, 2000)])
    assert gelman_rubin(apart) > 1.1
    with pytest.raises(ValueError):
        gelman_rubin(gen.normal(size=(1, 100)))


def test_conjugate_oracle_one_group():
    # theta ~ N(mu, tau2), flat mu, known delta: mu | y ~ N(ybar, delta2/n + tau2)
    gen = np.random.default_rng(4)
    y = gen.normal(1.3, 0.8, 12)
    delta2, tau2 = 0.64, 0.25
    s = gibbs_run([y], chains=2, iterations=200_000, burn_in=20_000, thin=5,
                  fixed={"delta2": delta2, "tau2": tau2})
    mu = s["mu"].reshape(-1)
    sd = np.sqrt(delta2 / y.size + tau2)
    # thinned draws are nearly independent here; allow a generous MC margin
    assert abs(mu.mean() - y.mean()) < 5 * sd / np.sqrt(mu.size / 10)
    assert mu.std() == pytest.approx(sd, rel=0.03)


def test_shift_equivariance():
    gen = np.random.default_rng(1)
    y = gen.normal(3, 1, (3, 10))
    a = gibbs_run(y, seed=5, **SHORT)
    b = gibbs_run(y + 2.5, seed=5, **SHORT)
    # same random stream, so draws shift by the constant up to float rounding
    np.testing.assert_allclose(b["mu"], a["mu"] + 2.5, atol=1e-8)
    np.testing.assert_allclose(b["tau"], a["tau"], atol=1e-8)


def test_exchangeability_of_groups():
    y = np.array([[3.5, 3.5, 2.5, 4, 4.5, 2, 3.5, 3, 4, 4],
                  [2, 2, 2.5, 4.5, 2.5, 2, 3, 2, 2.5, 5],
                  [4, 2, 3, 5, 5, 2, 3, 6.5, 4, 2.5]])
    a = summarize(gibbs_run(y, seed=1, iterations=300_000, burn_in=100_000, thin=10))
    b = summarize(gibbs_run(y[::-1], seed=2, iterations=300_000, burn_in=100_000, thin=10))
    ma, mb = a["parameters"]["mu"], b["parameters"]["mu"]
    # mu is heavy-tailed with three groups; compare robust summaries
    assert abs(ma["mode"] - mb["mode"]) < 0.15
    assert abs(np.diff(ma["ci95"])[0] - np.diff(mb["ci95"])[0]) < 0.1 * np.diff(ma["ci95"])[0]
    assert a["parameters"]["theta_0"]["mean"] == pytest.approx(
        b["parameters"]["theta_2"]["mean"], abs=0.03)


def test_summary_of_degenerate_draws():
    assert kde_mode(np.full(100, 2.5)) == 2.5
    gen = np.random.default_rng(3)
    modes = np.array([kde_mode(gen.normal(1.0, 0.2, 20_000)) for _ in range(20)])
    se = modes.std(ddof=1) / np.sqrt(modes.size)
    assert abs(modes.mean() - 1.0) < 3 * se


def test_summary_flags_unconverged_chains():
    s = gibbs_run(np.array([[1.0, 2, 3], [2, 3, 4], [5, 6, 7]]), chains=3, **SHORT)
    s.draws[0, :, 0] += 100.0
    report = summarize(s)
    assert not report["converged"] and report["flag"] == "unconverged"
    assert set(convergence_diagnostic(s)) == set(s.names)


def test_input_validation():
    with pytest.raises(ValueError):
        gibbs_run([[1.0, np.nan]], **SHORT)
    with pytest.raises(ValueError):
        gibbs_run(np.ones((3, 3)), iterations=100, burn_in=100, thin=1)
    with pytest.raises(ValueError):
        gibbs_run([[1.0, 2.0]], **SHORT)
