"""
Tests for PPML, zero augmentation, fixed effects and the count baselines.
"""

import numpy as np
import pandas as pd
import pytest

from ambit.errors import DataError, EstimationError
from ambit.glm import (
    DesignSpec,
    build_gravity_design,
    build_zero_augmented_sample,
    design_spec,
    drop_separated_rows,
    fit_negbin,
    fit_ppml,
    fit_ppml_fe,
    fit_zip,
    poisson_loglik,
    poisson_score,
    predict_glm,
)
from ambit.schemas import FixedEffectsConfig, ZeroAugmentationConfig


# ============================================================================
# Fixtures
# ============================================================================

def pair_rows(n: int, n_hours: int) -> pd.DataFrame:
    o, d = np.nonzero(~np.eye(n, dtype=bool))
    return pd.DataFrame({
        "o_idx": np.tile(o, n_hours),
        "d_idx": np.tile(d, n_hours),
        "hour_idx": np.repeat(np.arange(n_hours), len(o)),
    })


@pytest.fixture(scope="module")
def poisson_city():
    """Poisson draws around 0.05 m_o m_d d^-1.5 for 30 zones and 40 hours."""
    rng = np.random.default_rng(42)
    n = 30
    m_o = rng.uniform(5, 60, n)
    m_d = rng.uniform(5, 60, n)
    xy = rng.uniform(0, 10, (n, 2))
    d = np.maximum(np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1)), 0.1)
    rows = pair_rows(n, 40)
    o, dd = rows["o_idx"].to_numpy(), rows["d_idx"].to_numpy()
    rate = 0.05 * m_o[o] * m_d[dd] * d[o, dd] ** -1.5
    rows["flow"] = rng.poisson(rate)
    return rows, m_o, m_d, d


# ============================================================================
# PPML
# ============================================================================

class TestPpml:
    """Tests for PPML by IRLS."""

    def test_recovers_exponents(self, poisson_city):
        rows, m_o, m_d, d = poisson_city
        fit = fit_ppml(build_gravity_design(rows, m_o, m_d, d), rows["flow"].to_numpy())
        assert fit.converged
        assert fit.coef("log_m_o") == pytest.approx(1.0, abs=0.05)
        assert fit.coef("log_m_d") == pytest.approx(1.0, abs=0.05)
        assert -fit.coef("log_d") == pytest.approx(1.5, abs=0.05)

    def test_deviance_trace_non_increasing(self, poisson_city):
        rows, m_o, m_d, d = poisson_city
        fit = fit_ppml(build_gravity_design(rows, m_o, m_d, d), rows["flow"].to_numpy())
        trace = np.asarray(fit.deviance_trace)
        assert np.all(np.diff(trace) <= 1e-8 * trace.max())

    def test_predictions_reproduce_total(self, poisson_city):
        # with an intercept the Poisson score equations match the observed total
        rows, m_o, m_d, d = poisson_city
        design = build_gravity_design(rows, m_o, m_d, d)
        fit = fit_ppml(design, rows["flow"].to_numpy())
        assert predict_glm(fit, design).sum() == pytest.approx(rows["flow"].sum(), rel=1e-6)

    def test_score_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
        y = rng.poisson(2.0, 200).astype(float)
        beta = np.array([0.5, 0.1, -0.2])
        h = 1e-5
        numeric = np.array([
            (poisson_loglik(beta + h * e, X, y) - poisson_loglik(beta - h * e, X, y)) / (2 * h)
            for e in np.eye(3)
        ])
        np.testing.assert_allclose(poisson_score(beta, X, y), numeric, rtol=1e-5)

    def test_negative_counts_rejected(self, poisson_city):
        rows, m_o, m_d, d = poisson_city
        y = rows["flow"].to_numpy().astype(float)
        y[0] = -1
        with pytest.raises(DataError):
            fit_ppml(build_gravity_design(rows, m_o, m_d, d), y)

    def test_column_mismatch(self, poisson_city):
        rows, m_o, m_d, d = poisson_city
        fit = fit_ppml(build_gravity_design(rows, m_o, m_d, d), rows["flow"].to_numpy())
        other = build_gravity_design(rows, m_o, m_d, d, DesignSpec(continuous=("log_d",)))
        with pytest.raises(EstimationError):
            predict_glm(fit, other)


# ============================================================================
# Zero Augmentation
# ============================================================================

class TestZeroAugmentation:
    """Tests for zero-augmented samples."""

    @pytest.fixture
    def sparse_flows(self) -> tuple[pd.DataFrame, pd.DatetimeIndex]:
        hours = pd.date_range("2025-01-06", periods=10, freq="h")
        frame = pd.DataFrame({
            "o_idx": [0] * 10 + [1],
            "d_idx": [1] * 10 + [2],
            "hour": list(hours) + [hours[0]],
            "flow": [2] * 10 + [0],
        })
        return frame, hours

    def test_all_zero_cells_within_budget(self, sparse_flows):
        flows, hours = sparse_flows
        config = ZeroAugmentationConfig(sampled_hours=10, zero_budget=1000)
        sample, stats = build_zero_augmented_sample(flows, hours, np.arange(3), 3, config, seed=0)
        assert stats.positives == 10
        assert stats.zeros == 10 * 6 - 10
        assert stats.rows == len(sample) == 60
        assert (sample["o_idx"] != sample["d_idx"]).all()
        assert not sample.duplicated(["o_idx", "d_idx", "hour"]).any()
        assert "hour_of_day" in sample.columns

    def test_ratio_target_caps_zeros(self, sparse_flows):
        flows, hours = sparse_flows
        config = ZeroAugmentationConfig(sampled_hours=10, zero_budget=1000, zero_pos_ratio_target=2.0)
        _, stats = build_zero_augmented_sample(flows, hours, np.arange(3), 3, config, seed=0)
        assert stats.zeros == 20
        assert stats.zero_pos_ratio == pytest.approx(2.0)

    def test_universe_restricts_cells(self, sparse_flows):
        flows, hours = sparse_flows
        config = ZeroAugmentationConfig(sampled_hours=10, zero_budget=1000)
        _, stats = build_zero_augmented_sample(flows, hours, np.array([0, 1]), 3, config, seed=0)
        assert stats.positives == 10
        assert stats.zeros == 10

    def test_diagonal_cells_when_included(self, sparse_flows):
        flows, hours = sparse_flows
        config = ZeroAugmentationConfig(sampled_hours=10, zero_budget=1000)
        _, stats = build_zero_augmented_sample(flows, hours, np.arange(3), 3, config, seed=0, include_diagonal=True)
        assert stats.zeros == 10 * 9 - 10

    def test_seeded_hours(self, sparse_flows):
        flows, hours = sparse_flows
        config = ZeroAugmentationConfig(sampled_hours=4, zero_budget=5)
        a, _ = build_zero_augmented_sample(flows, hours, np.arange(3), 3, config, seed=7)
        b, _ = build_zero_augmented_sample(flows, hours, np.arange(3), 3, config, seed=7)
        pd.testing.assert_frame_equal(a, b)
        assert a["hour"].nunique() <= 4
        assert (a["flow"] == 0).sum() == 5


# ============================================================================
# Fixed Effects
# ============================================================================

class TestFixedEffects:
    """Tests for FE-PPML."""

    FE = FixedEffectsConfig(origin=True, destination=True, time=False, interactions=False)

    @pytest.fixture(scope="class")
    def fe_city(self):
        rng = np.random.default_rng(8)
        n = 12
        a = rng.normal(0, 0.5, n)
        b = rng.normal(0, 0.5, n)
        d = rng.uniform(1, 5, (n, n))
        rows = pair_rows(n, 60)
        o, dd = rows["o_idx"].to_numpy(), rows["d_idx"].to_numpy()
        rows["flow"] = rng.poisson(20 * np.exp(a[o] + b[dd]) * d[o, dd] ** -1.5)
        return rows, np.ones(n), np.ones(n), d

    def test_mass_columns_dropped_under_zone_effects(self, fe_city):
        rows, *_ = fe_city
        spec = design_spec(rows, self.FE)
        assert spec.continuous == ("log_d",)
        assert [g.name for g in spec.fe_groups] == ["origin", "destination"]

    def test_recovers_distance_decay(self, fe_city):
        rows, m_o, m_d, d = fe_city
        fit, spec, meta = fit_ppml_fe(rows, m_o, m_d, d, self.FE, seed=0)
        assert -fit.coef("log_d") == pytest.approx(1.5, abs=0.05)
        assert meta["rows_post"] == len(rows)
        assert meta["levels"] == {"origin": 12, "destination": 12}
        assert meta["categories"] == 22

    def test_subsample_is_seeded(self, fe_city):
        rows, m_o, m_d, d = fe_city
        fe = self.FE.model_copy(update={"max_rows": 2000})
        a, _, meta = fit_ppml_fe(rows, m_o, m_d, d, fe, seed=1)
        b, _, _ = fit_ppml_fe(rows, m_o, m_d, d, fe, seed=1)
        assert meta["rows_post"] == 2000
        assert a.coefficients == b.coefficients

    def test_too_few_rows(self):
        rows = pd.DataFrame({"o_idx": [0, 1, 2], "d_idx": [1, 2, 0], "flow": [1, 2, 3]})
        with pytest.raises(EstimationError) as exc:
            fit_ppml_fe(rows, np.ones(3), np.ones(3), np.full((3, 3), 2.0), self.FE, seed=0)
        assert exc.value.code == "estimation:fe_identifiability"
        assert exc.value.diagnostics["levels"] == {"origin": 3, "destination": 3}

    def test_all_zero_levels_are_dropped_and_flagged(self, fe_city):
        rows, m_o, m_d, d = fe_city
        rows = rows.copy()
        rows.loc[rows["o_idx"] == 3, "flow"] = 0
        fit, spec, meta = fit_ppml_fe(rows, m_o, m_d, d, self.FE, seed=0)
        assert "separated_levels_dropped" in fit.flags
        assert meta["separated_levels"] == {"origin": 1}
        assert meta["separated_rows"] == int((rows["o_idx"] == 3).sum())
        assert "3" not in spec.fe_groups[0].levels

        held = rows[rows["o_idx"] == 3]
        design = build_gravity_design(held, m_o, m_d, d, spec)
        assert design.unseen == len(held)
        assert np.isfinite(predict_glm(fit, design)).all()

    def test_drop_separated_rows_keeps_positive_levels(self):
        rows = pd.DataFrame({"o_idx": [0, 0, 1, 1, 2], "d_idx": [1, 1, 1, 2, 2], "flow": [0, 3, 0, 0, 1]})
        kept, dropped = drop_separated_rows(rows, self.FE)
        assert kept["o_idx"].tolist() == [0, 0, 2]
        assert dropped == {"origin": 1}

    def test_predictions_invariant_to_reference_level(self, fe_city):
        rows, m_o, m_d, d = fe_city
        n = len(m_o)
        perm = np.roll(np.arange(n), 1)
        relabeled = rows.copy()
        relabeled["o_idx"] = perm[rows["o_idx"].to_numpy()]
        relabeled["d_idx"] = perm[rows["d_idx"].to_numpy()]
        d_perm = np.empty_like(d)
        d_perm[np.ix_(perm, perm)] = d

        fit_a, spec_a, _ = fit_ppml_fe(rows, m_o, m_d, d, self.FE, seed=0)
        fit_b, spec_b, _ = fit_ppml_fe(relabeled, m_o, m_d, d_perm, self.FE, seed=0)
        assert spec_a.fe_groups[0].reference == "0"
        assert spec_b.fe_groups[0].reference == "0"
        a = predict_glm(fit_a, build_gravity_design(rows, m_o, m_d, d, spec_a))
        b = predict_glm(fit_b, build_gravity_design(relabeled, m_o, m_d, d_perm, spec_b))
        np.testing.assert_allclose(a, b, rtol=1e-5)

    def test_origin_shift_against_intercept(self, fe_city):
        rows, m_o, m_d, d = fe_city
        fit, spec, _ = fit_ppml_fe(rows, m_o, m_d, d, self.FE, seed=0)
        design = build_gravity_design(rows, m_o, m_d, d, spec)
        origin_cols = [i for i, c in enumerate(fit.columns) if c.startswith("origin=")]
        coef = np.asarray(fit.coefficients)
        coef[0] -= 0.7
        coef[origin_cols] += 0.7
        shifted = predict_glm(fit.model_copy(update={"coefficients": coef.tolist()}), design)
        base = predict_glm(fit, design)
        # the reference origin has no column and absorbs the shift
        reference = rows["o_idx"].to_numpy() == int(spec.fe_groups[0].reference)
        np.testing.assert_allclose(shifted[~reference], base[~reference], rtol=1e-12)
        np.testing.assert_allclose(shifted[reference], base[reference] * np.exp(-0.7), rtol=1e-12)

    def test_unseen_levels_use_reference(self):
        train = pd.DataFrame({"o_idx": [0, 1], "d_idx": [1, 0]})
        spec = design_spec(train, self.FE)
        new = pd.DataFrame({"o_idx": [2], "d_idx": [1]})
        design = build_gravity_design(new, np.ones(3), np.ones(3), np.full((3, 3), 2.0), spec)
        assert design.sparse
        assert design.unseen == 1


# ============================================================================
# Count Baselines
# ============================================================================

class TestCountBaselines:
    """Tests for negative binomial and zero-inflated Poisson."""

    @pytest.fixture(scope="class")
    def covariate_rows(self):
        rng = np.random.default_rng(5)
        n = 20_000
        d = rng.uniform(1, 5, n)
        rows = pd.DataFrame({"o_idx": np.zeros(n, dtype=int), "d_idx": np.arange(n)})
        return rows, d, rng

    def design(self, rows, d, spec=DesignSpec(continuous=("log_d",))):
        imp = np.zeros((1, len(d)))
        imp[0] = d
        return build_gravity_design(rows, np.ones(1), np.ones(len(d)), imp, spec)

    def test_negbin_dispersion_recovered(self, covariate_rows):
        rows, d, rng = covariate_rows
        mu = 6.0 * d ** -1.0
        a = 0.5
        y = rng.poisson(rng.gamma(1.0 / a, a * mu))
        fit = fit_negbin(self.design(rows, d), y)
        assert fit.family == "negbin"
        assert fit.dispersion == pytest.approx(0.5, abs=0.1)
        assert fit.coef("log_d") == pytest.approx(-1.0, abs=0.1)

    def test_negbin_underdispersed_clamps(self, covariate_rows):
        rows, d, _ = covariate_rows
        y = np.round(6.0 * d ** -1.0)
        fit = fit_negbin(self.design(rows, d), y)
        assert fit.dispersion == 0.0
        assert "dispersion_clamped" in fit.flags

    def test_zip_inflation_recovered(self, covariate_rows):
        rows, d, rng = covariate_rows
        y = np.where(rng.random(len(d)) < 0.3, 0, rng.poisson(4.0, len(d)))
        design = self.design(rows, d, DesignSpec(continuous=()))
        fit = fit_zip(design, y)
        assert fit.inflation == pytest.approx(0.3, abs=0.03)
        assert np.exp(fit.coefficients[0]) == pytest.approx(4.0, rel=0.05)
        assert predict_glm(fit, design).mean() == pytest.approx(y.mean(), rel=0.05)

    def test_zip_needs_zeros(self, covariate_rows):
        rows, d, _ = covariate_rows
        with pytest.raises(DataError) as exc:
            fit_zip(self.design(rows, d), np.ones(len(d)))
        assert exc.value.code == "data:no_zeros"
