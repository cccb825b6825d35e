import math

import numpy as np
import pytest
from scipy.stats import norm

from spectralcp.detection import detect, refit_models
from spectralcp.errors import (
    GridTooSmallWarning,
    InsufficientHistory,
    InvalidParams,
    NoJump,
    TableIncomplete,
)
from spectralcp.inference import (
    DEFAULT_PROBS,
    MonteCarloSettings,
    NuisanceEstimates,
    QuantileTable,
    confidence_interval,
    nuisance_estimates,
    probs_for_levels,
    simulate_argmax_quantiles,
)
from spectralcp.simulation import generate_scenario, scenario_preset
from spectralcp.tscore import ArModel


def ar1_splice(phi1, phi2, T, k, seed, burn=300):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(T + burn)
    x = np.zeros(T + burn)
    for t in range(1, T + burn):
        x[t] = (phi1 if t < k + burn else phi2) * x[t - 1] + e[t]
    return x[burn:]


def symmetric_argmax_cdf(x):
    """Closed-form CDF of argmax_r {2 W(r) - |r|} (two-sided Brownian motion)."""
    if x < 0:
        return 1.0 - symmetric_argmax_cdf(-x)
    s = math.sqrt(x)
    return (
        1.0
        + math.sqrt(x / (2 * math.pi)) * math.exp(-x / 8)
        - 0.5 * (x + 5) * norm.cdf(-s / 2)
        + 1.5 * math.exp(x) * norm.cdf(-1.5 * s)
    )


@pytest.fixture(scope="module")
def symmetric_table():
    return simulate_argmax_quantiles((1, 1, 1, 1), R=200, delta=0.05, M=50000, seed=1, probs=np.linspace(0.01, 0.99, 99))


def make_nuis(scale_target=2.0, a=1.0, b=1.0):
    # sigma1 = 1, sigma1_star = 1 -> c = 1 / xi^2
    xi = 1.0 / math.sqrt(scale_target)
    return NuisanceEstimates(xi, 1.0, b, 1.0, a * a, 1.0, 1.0)


def make_table(probs, quants, params=(1.0, 1.0, 1.0, 1.0)):
    return QuantileTable(params, np.asarray(probs, float), np.asarray(quants, float), MonteCarloSettings())


class TestNuisance:
    def test_unit_jump_white_noise(self):
        x = np.random.default_rng(0).standard_normal(20000) * math.sqrt(2.5)
        est = nuisance_estimates(x, 10000, ArModel([1.0], 1.0), ArModel([0.0], 1.0))
        assert est.xi2 == 1.0
        assert est.sigma1_sq == pytest.approx(np.mean(x[0:9999] ** 2), rel=1e-12)
        assert est.sigma2_sq == pytest.approx(np.mean(x[9999:19999] ** 2), rel=1e-12)
        assert est.sigma1_sq == pytest.approx(2.5, rel=0.05)
        assert est.sigma2_sq == pytest.approx(2.5, rel=0.05)

    def test_xi_is_padded_distance(self):
        x = np.random.default_rng(1).standard_normal(300)
        est = nuisance_estimates(x, 150, ArModel([0.5], 1.0), ArModel([0.1, -0.2, 0.2], 1.0))
        assert est.xi2 == pytest.approx(math.sqrt(0.4**2 + 0.2**2 + 0.2**2))
        assert min(est.sigma1_sq, est.sigma2_sq, est.sigma1_star_sq, est.sigma2_star_sq) >= 0

    def test_no_jump(self):
        x = np.random.default_rng(1).standard_normal(300)
        with pytest.raises(NoJump):
            nuisance_estimates(x, 150, ArModel([0.4], 1.0), ArModel([0.4], 1.0))

    def test_short_segment(self):
        x = np.random.default_rng(1).standard_normal(300)
        with pytest.raises(InsufficientHistory):
            nuisance_estimates(x, 297, ArModel([0.4, 0.1], 1.0), ArModel([0.0, 0.0], 1.0))

    def test_robust_matches_factorized_for_independent_noise(self):
        x = ar1_splice(0.5, -0.3, 5000, 2500, seed=5)
        m1, m2, p = refit_models(x, 2500, lags=(1, 1))
        robust = nuisance_estimates(x, 2500, m1, m2, p)
        fact = nuisance_estimates(x, 2500, m1, m2, p, factorized=True)
        assert robust.sigma1_star_sq == pytest.approx(fact.sigma1_star_sq, rel=0.15)
        assert robust.sigma2_star_sq == pytest.approx(fact.sigma2_star_sq, rel=0.15)
        assert fact.sigma1_star_sq == pytest.approx(fact.resid_var_pre * fact.sigma1_sq, rel=1e-12)

    def test_scale_invariant_index_scale(self):
        x = ar1_splice(0.5, -0.3, 600, 300, seed=2)
        m1, m2, p = refit_models(x, 300)
        base = nuisance_estimates(x, 300, m1, m2, p)
        s1, s2, p2 = refit_models(7 * x, 300)
        scaled = nuisance_estimates(7 * x, 300, s1, s2, p2)
        assert scaled.scale == pytest.approx(base.scale, rel=1e-9)
        np.testing.assert_allclose(scaled.params, np.array(base.params) * [7, 7, 49, 49], rtol=1e-9)


class TestArgmaxQuantiles:
    def test_symmetric_median(self, symmetric_table):
        assert abs(symmetric_table.median) <= 0.5
        assert symmetric_table.truncation_fraction < 0.01

    def test_matches_closed_form_cdf(self, symmetric_table):
        # quantile table inverted through the closed form should give back the probabilities
        for prob in (0.05, 0.1, 0.25, 0.75, 0.9, 0.95):
            q = symmetric_table.quantile(round(prob, 12))
            assert symmetric_argmax_cdf(q) == pytest.approx(prob, abs=0.01)

    def test_closed_form_reference_quantile(self):
        # reference value of the 97.5% point of this law
        assert symmetric_argmax_cdf(11.03) == pytest.approx(0.975, abs=5e-4)

    def test_independent_seeds_agree(self):
        a = simulate_argmax_quantiles((1, 1, 1, 1), M=50000, seed=11)
        b = simulate_argmax_quantiles((1, 1, 1, 1), M=50000, seed=12)
        c = simulate_argmax_quantiles((1, 1, 1, 1), R=100, delta=0.025, M=50000, seed=13)
        for other in (b, c):
            for prob in (0.025, 0.05, 0.95, 0.975):
                assert other.quantile(prob) == pytest.approx(a.quantile(prob), rel=0.05)

    @pytest.mark.parametrize("params", [(1, 1, 1, 1), (1, 2, 1, 3), (2, 1, 0.5, 0.2), (0.3, 0.9, 1.7, 0.4)])
    def test_monotone(self, params):
        t = simulate_argmax_quantiles(params, M=5000, seed=3)
        assert t.quantile(0.05) < t.quantile(0.5) < t.quantile(0.95)
        assert np.all(np.diff(t.quants) >= 0)
        assert set(DEFAULT_PROBS) <= set(t.probs.tolist())

    def test_deterministic_and_worker_independent(self):
        a = simulate_argmax_quantiles((1, 1.5, 1, 2), M=3000, seed=5, workers=1)
        b = simulate_argmax_quantiles((1, 1.5, 1, 2), M=3000, seed=5, workers=3)
        np.testing.assert_array_equal(a.quants, b.quants)

    def test_heavier_post_noise_widens_right_tail(self):
        base = simulate_argmax_quantiles((1, 1, 1, 1), M=5000, seed=4)
        wide = simulate_argmax_quantiles((1, 1, 1, 3), M=5000, seed=4)
        assert wide.quantile(0.975) > base.quantile(0.975)

    def test_tiny_grid_flags_truncation(self):
        with pytest.warns(GridTooSmallWarning):
            t = simulate_argmax_quantiles((1, 1, 1, 1), R=1.0, delta=0.01, M=2000, seed=0)
        assert t.truncation_warning and t.truncation_fraction > 0.01

    @pytest.mark.parametrize(
        "kw",
        [
            {"params": (1, 1, 1, 0)},
            {"params": (1, 1, 1)},
            {"R": -1},
            {"delta": 5.0},
            {"M": 10},
            {"probs": [0.5, 1.0]},
        ],
    )
    def test_invalid(self, kw):
        args = {"params": (1, 1, 1, 1), "M": 1000} | kw
        with pytest.raises(InvalidParams):
            simulate_argmax_quantiles(**args)

    def test_json_round_trip(self):
        t = simulate_argmax_quantiles((1, 1.2, 0.9, 1.1), M=2000, seed=9)
        back = QuantileTable.from_json(t.to_json())
        np.testing.assert_array_equal(back.quants, t.quants)
        np.testing.assert_array_equal(back.probs, t.probs)
        assert back.params == t.params and back.mc == t.mc
        assert back.to_dict() == t.to_dict()

    def test_schema_version_checked(self):
        d = simulate_argmax_quantiles((1, 1, 1, 1), M=1000).to_dict()
        d["schema_version"] = 99
        with pytest.raises(InvalidParams):
            QuantileTable.from_dict(d)

    def test_probs_for_levels(self):
        probs = probs_for_levels([0.80, 0.99])
        assert 0.1 in probs and 0.9 in probs and 0.005 in probs and 0.995 in probs
        assert list(probs) == sorted(probs)


class TestConfidenceInterval:
    def test_symmetric_algebra(self):
        table = make_table([0.025, 0.5, 0.975], [-4.0, 0.0, 4.0])
        ci = confidence_interval(300, 1000, make_nuis(2.5), table, 0.95)
        assert (ci.lower, ci.upper) == (290, 310)
        assert ci.scale_c == pytest.approx(2.5)
        assert ci.length == 20 and ci.contains(300) and not ci.contains(311)

    def test_outward_rounding_and_asymmetry(self):
        table = make_table([0.05, 0.95], [-1.3, 3.7])
        ci = confidence_interval(100, 500, make_nuis(1.0), table, 0.90)
        # lower uses the upper quantile, upper the lower one
        assert (ci.lower, ci.upper) == (math.floor(100 - 3.7), math.ceil(100 + 1.3))

    def test_collapse_for_huge_jump(self):
        table = make_table([0.025, 0.975], [-11.0, 11.0])
        ci = confidence_interval(250, 500, make_nuis(1e-9), table, 0.95)
        assert (ci.lower, ci.upper) == (250, 250)

    def test_clipped_to_series(self):
        table = make_table([0.025, 0.975], [-11.0, 11.0])
        ci = confidence_interval(5, 40, make_nuis(10.0), table, 0.95)
        assert ci.lower == 1 and ci.upper == 40

    def test_missing_probability(self):
        table = make_table([0.05, 0.95], [-2.0, 2.0])
        with pytest.raises(TableIncomplete):
            confidence_interval(100, 500, make_nuis(), table, 0.95)

    def test_mismatched_table(self):
        table = make_table([0.025, 0.975], [-2.0, 2.0], params=(1.0, 2.0, 1.0, 1.0))
        with pytest.raises(InvalidParams):
            confidence_interval(100, 500, make_nuis(), table, 0.95)

    def test_no_jump(self):
        table = make_table([0.025, 0.975], [-2.0, 2.0])
        with pytest.raises(NoJump):
            confidence_interval(100, 500, NuisanceEstimates(0.0, 1, 1, 1, 1, 1, 1), table, 0.95)

    def test_nested_levels_on_scenario_fits(self):
        levels = (0.80, 0.90, 0.95, 0.99)
        for seed in range(5):
            x = generate_scenario(scenario_preset("II", 500, theta=-0.9, phi=0.5), seed=seed).values
            res = detect(x)
            nuis = nuisance_estimates(x, res.k_tilde, res.model_pre, res.model_post, res.p_common)
            table = simulate_argmax_quantiles(nuis.params, M=5000, seed=seed, probs=probs_for_levels(levels))
            cis = [confidence_interval(res.k_tilde, 500, nuis, table, lv) for lv in levels]
            for small, big in zip(cis, cis[1:]):
                assert big.lower <= small.lower <= res.k_tilde <= small.upper <= big.upper
            assert 1 <= cis[-1].lower and cis[-1].upper <= 500

    def test_scale_invariance_of_endpoints(self):
        x = generate_scenario(scenario_preset("I", 500, theta=-0.9, phi=-0.5), seed=3).values
        out = []
        for c in (1.0, 0.1, 100.0):
            y = c * x
            res = detect(y)
            nuis = nuisance_estimates(y, res.k_tilde, res.model_pre, res.model_post, res.p_common)
            table = simulate_argmax_quantiles(nuis.params, M=5000, seed=0)
            ci = confidence_interval(res.k_tilde, 500, nuis, table, 0.95)
            out.append((res.k_tilde, ci.lower, ci.upper))
        assert out[0] == out[1] == out[2]
