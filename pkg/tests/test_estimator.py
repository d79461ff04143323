"""Doubly robust stage-survival estimation: exact reductions, weighting
identities and diagnostic accounting."""

import numpy as np
import pytest

from rmtif.data import Dataset, DesignConfig
from rmtif.errors import EstimationError
from rmtif.estimator import (StageSurvivalSet, build_time_grid,
                             estimate_stage_survival_crt,
                             estimate_stage_survival_irt, isotonic_projection,
                             km_plug_in_stage_survival)

from conftest import build_irt, progressive_times


def config(*taus, **kw):
    return DesignConfig(tau_grid=tuple(taus), **kw)


class TestTimeGrid:
    def test_contains_zero_taus_and_event_times(self, rng):
        ds = build_irt(rng, n=20, censor_rate=0.5)
        grid = build_time_grid(ds, (1.0, 2.5))
        assert grid[0] == 0.0
        assert {1.0, 2.5} <= set(grid.tolist())
        events = ds.times[ds.indicators == 1]
        for t in events[events <= 2.5]:
            assert t in grid

    def test_contains_censoring_times(self, rng):
        ds = build_irt(rng, n=20, censor_rate=1.0)
        grid = build_time_grid(ds, (2.0,))
        cens = ds.times[ds.indicators[:, -1] == 0, -1]
        for t in cens[cens <= 2.0]:
            assert t in grid

    def test_rejects_empty_tau(self, rng):
        ds = build_irt(rng, n=10)
        with pytest.raises(EstimationError):
            build_time_grid(ds, ())


class TestStageSurvivalSet:
    def test_final_row_is_constant_one(self, rng):
        ds = build_irt(rng, n=30, censor_rate=0.4)
        sset = km_plug_in_stage_survival(ds, config(1.0))
        np.testing.assert_array_equal(sset.values[-1], 1.0)
        assert sset.n_stages == ds.n_stages

    def test_at_is_left_continuous(self):
        grid = np.array([0.0, 1.0, 2.0])
        values = np.ones((3, 2, 3))
        values[0, 0] = [1.0, 0.6, 0.2]
        sset = StageSurvivalSet(grid=grid, values=values, level="irt")
        # the curve is constant on (t_{l-1}, t_l] and equals the grid value
        # at t_l, so evaluation just before a grid point already returns it
        assert sset.at(1, 0, [0.0])[0] == 1.0
        assert sset.at(1, 0, [0.999])[0] == 0.6
        assert sset.at(1, 0, [1.0])[0] == 0.6
        assert sset.at(1, 0, [1.5])[0] == 0.2
        assert sset.at(1, 0, [5.0])[0] == 0.2

    def test_flags_detect_violations(self):
        grid = np.array([0.0, 1.0])
        values = np.ones((2, 2, 2))
        values[0, 1] = [0.5, 0.8]   # increases
        values[0, 0] = [1.0, -0.2]  # leaves [0, 1]
        sset = StageSurvivalSet(grid=grid, values=values, level="irt")
        assert sset.monotone_violated[0, 1]
        assert sset.range_violated[0, 0]
        assert not sset.monotone_violated[1, 0]

    def test_isotonic_projection_repairs(self):
        grid = np.array([0.0, 1.0, 2.0])
        values = np.ones((2, 2, 3))
        values[0, 0] = [1.0, 1.2, 0.5]
        fixed = isotonic_projection(
            StageSurvivalSet(grid=grid, values=values, level="irt"))
        assert not fixed.monotone_violated.any()
        assert not fixed.range_violated.any()


class TestNoCensoringReduction:
    def test_aipwcc_equals_plug_in_without_censoring(self, rng):
        # with balanced arms, no censoring and a covariate-free outcome
        # model every augmentation term vanishes identically
        ds = build_irt(rng, n=40, censor_rate=0.0, balanced=True)
        cfg = config(1.0, 2.0)
        dr = estimate_stage_survival_irt(ds, cfg, outcome_model="none",
                                         censor_model="cox",
                                         outcome_covariates=["z1", "z2"],
                                         censor_covariates=["z1", "z2"])
        km = km_plug_in_stage_survival(ds, cfg)
        assert np.max(np.abs(dr.values - km.values)) <= 1e-12
        assert dr.truncation_counts == {"censoring_weight": 0,
                                        "outcome_denominator": 0,
                                        "hazard_atom": 0}

    def test_holds_for_any_censoring_model(self, rng):
        ds = build_irt(rng, n=30, censor_rate=0.0, balanced=True)
        cfg = config(1.5)
        km = km_plug_in_stage_survival(ds, cfg)
        for cmodel in ("cox", "km_arm", "km_pooled"):
            dr = estimate_stage_survival_irt(
                ds, cfg, outcome_model="none", censor_model=cmodel,
                censor_covariates=["z1"])
            assert np.max(np.abs(dr.values - km.values)) <= 1e-12


class TestClusterCollapse:
    def test_size_one_clusters_reproduce_irt_bitwise(self, rng):
        n = 36
        times, ind = progressive_times(rng, n, 3, censor_rate=0.5)
        arm = np.tile([0, 1], n // 2)
        Z = rng.normal(size=(n, 2))
        irt = Dataset.from_arrays(times, ind, arm, Z, ["z1", "z2"])
        crt = Dataset.from_arrays(times, ind, arm, Z, ["z1", "z2"],
                                  design="crt",
                                  cluster_ids=[f"c{i}" for i in range(n)])
        cfg = config(1.0, 2.0)
        base = estimate_stage_survival_irt(
            irt, cfg, outcome_covariates=["z1", "z2"],
            censor_covariates=["z1", "z2"])
        clus, indiv = estimate_stage_survival_crt(
            crt, cfg, outcome_covariates=["z1", "z2"],
            censor_covariates=["z1", "z2"])
        assert np.array_equal(base.values, clus.values)
        assert np.array_equal(base.values, indiv.values)
        assert np.array_equal(base.grid, clus.grid)

    def test_plug_in_collapse_is_bitwise_too(self, rng):
        n = 24
        times, ind = progressive_times(rng, n, 3, censor_rate=0.5)
        arm = np.tile([0, 1], n // 2)
        Z = np.zeros((n, 1))
        irt = Dataset.from_arrays(times, ind, arm, Z, ["z"])
        crt = Dataset.from_arrays(times, ind, arm, Z, ["z"], design="crt",
                                  cluster_ids=[f"c{i}" for i in range(n)])
        cfg = config(1.5)
        a = km_plug_in_stage_survival(irt, cfg, level="irt")
        b = km_plug_in_stage_survival(crt, cfg, level="crt_cluster")
        c = km_plug_in_stage_survival(crt, cfg, level="crt_individual")
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.values, c.values)


class TestPlugInWeights:
    def test_equal_size_clusters_match_unweighted(self, rng):
        from conftest import build_crt
        ds = build_crt(rng, m=8, size=5, censor_rate=0.5)
        cfg = config(1.0)
        clus = km_plug_in_stage_survival(ds, cfg, level="crt_cluster")
        indiv = km_plug_in_stage_survival(ds, cfg, level="crt_individual")
        assert np.max(np.abs(clus.values - indiv.values)) <= 1e-15


class TestDesignGuards:
    def test_irt_estimator_rejects_crt_data(self, rng):
        from conftest import build_crt
        ds = build_crt(rng)
        with pytest.raises(EstimationError, match="design=irt"):
            estimate_stage_survival_irt(ds, config(1.0))

    def test_crt_estimator_rejects_irt_data(self, rng):
        ds = build_irt(rng)
        with pytest.raises(EstimationError, match="design=crt"):
            estimate_stage_survival_crt(ds, config(1.0))

    def test_unknown_models_rejected(self, rng):
        ds = build_irt(rng)
        with pytest.raises(EstimationError, match="outcome model"):
            estimate_stage_survival_irt(ds, config(1.0),
                                        outcome_model="logistic")
        with pytest.raises(EstimationError, match="censoring model"):
            estimate_stage_survival_irt(ds, config(1.0),
                                        censor_model="uniform")


class TestAgainstPopulation:
    def test_aipwcc_tracks_km_with_light_censoring(self, rng):
        # with light independent censoring both estimators target the same
        # curves; on one moderate dataset they should agree closely
        ds = build_irt(rng, n=600, censor_rate=0.1)
        cfg = config(1.0)
        dr = estimate_stage_survival_irt(
            ds, cfg, outcome_model="km_arm", censor_model="km_arm")
        km = km_plug_in_stage_survival(ds, cfg)
        assert np.max(np.abs(dr.values - km.values)) < 0.05
