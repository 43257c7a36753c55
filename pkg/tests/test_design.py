"""Design construction, priors, and the stationarity check."""

import numpy as np
import pytest

from hetglm import PriorConfig, build_design, check_stationary
from hetglm.design import ChainState, Dataset, _standardize


def _rng(seed=0):
    return np.random.default_rng(seed)


def _raw_inputs(t=48, n_act=2, n_mot=2, seed=0):
    rng = _rng(seed)
    activity = rng.normal(size=(t, n_act))
    motion = rng.normal(size=(t, n_mot)).cumsum(axis=0)
    return activity, motion


class TestBuildDesign:
    def test_column_order_and_counts(self):
        activity, motion = _raw_inputs(t=40, n_act=2, n_mot=3)
        pair = build_design(activity, motion, n_trends=2)
        assert pair.p == 2 + 1 + 2 + 3 + 3
        assert pair.column_kinds == (
            ["activity"] * 2
            + ["intercept"]
            + ["trend"] * 2
            + ["motion"] * 3
            + ["motion_derivative"] * 3
        )
        assert pair.column_names[:3] == ["activity1", "activity2", "intercept"]
        assert pair.q == pair.p
        assert list(pair.z_from_x) == list(range(pair.p))
        pair.validate()

    def test_columns_standardized(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion, n_trends=3)
        for j, kind in enumerate(pair.column_kinds):
            if kind == "intercept":
                np.testing.assert_array_equal(pair.x[:, j], 1.0)
                continue
            col = pair.x[:, j]
            assert abs(col.mean()) < 1e-12
            assert abs(np.mean(col**2) - 1.0) < 1e-12

    def test_standardize_idempotent(self):
        col = _rng(3).normal(2.0, 5.0, size=64)
        once = _standardize(col, "c")
        twice = _standardize(once, "c")
        np.testing.assert_allclose(twice, once, atol=1e-12)

    def test_motion_derivative_is_backward_difference(self):
        activity, motion = _raw_inputs(t=30, n_mot=1)
        pair = build_design(activity, motion, n_trends=0)
        j = pair.column_kinds.index("motion_derivative")
        diff = np.zeros(30)
        diff[1:] = np.diff(motion[:, 0])
        np.testing.assert_allclose(pair.x[:, j], _standardize(diff, "d"))
        # Z carries |diff| scaled to unit variance, no centering
        zcol = pair.z[:, j]
        assert np.all(zcol >= 0)
        expect = np.abs(diff) / np.sqrt(np.mean(np.abs(diff) ** 2) - np.mean(np.abs(diff)) ** 2)
        np.testing.assert_allclose(zcol, expect, atol=1e-12)
        var = np.mean(zcol**2) - zcol.mean() ** 2
        assert abs(var - 1.0) < 1e-10

    def test_external_motion_derivative(self):
        activity, motion = _raw_inputs(t=30, n_mot=2)
        ext = _rng(9).normal(size=(30, 2))
        pair = build_design(activity, motion, n_trends=1, raw_motion_derivative=ext)
        j = pair.column_kinds.index("motion_derivative")
        np.testing.assert_allclose(pair.x[:, j], _standardize(ext[:, 0], "d"))

    def test_no_motion_derivative_flag(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion, use_motion_derivative=False)
        assert "motion_derivative" not in pair.column_kinds

    def test_only_intercept_forced(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion)
        assert pair.forced_in_mean.sum() == 1
        assert pair.forced_in_mean[pair.intercept_index]
        assert pair.forced_in_var.sum() == 1

    def test_row_mismatch_rejected(self):
        activity, motion = _raw_inputs(t=40)
        with pytest.raises(ValueError, match="rows"):
            build_design(activity, motion[:-1])


class TestRestrictVarianceDesign:
    def test_keep_subset(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion, n_trends=1)
        keep = np.zeros(pair.p, dtype=bool)
        keep[0] = True
        sub = pair.restrict_variance_design(keep)
        # intercept comes back even when not requested
        assert sub.q == 2
        assert sub.z_column_kinds == ["activity", "intercept"]
        np.testing.assert_allclose(sub.z[:, 0], pair.x[:, 0])
        sub.validate()

    def test_double_restriction_rejected(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion)
        keep = np.zeros(pair.p, dtype=bool)
        sub = pair.restrict_variance_design(keep)
        with pytest.raises(ValueError, match="already restricted"):
            sub.restrict_variance_design(keep)


class TestValidate:
    def test_unstandardized_column_rejected(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion)
        pair.x[:, 0] *= 2.0
        with pytest.raises(ValueError, match="not standardized"):
            pair.validate()

    def test_missing_intercept_rejected(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion)
        pair.x[:, pair.intercept_index] = 0.5
        with pytest.raises(ValueError, match="intercept"):
            pair.validate()


class TestDataset:
    def test_mask_shape_checked(self):
        values = _rng(1).normal(size=(16, 4))
        with pytest.raises(ValueError, match="mask"):
            Dataset(values, ["a", "b", "c", "d"], masks={"m": np.ones(3, dtype=bool)})

    def test_layout_product_checked(self):
        values = _rng(1).normal(size=(16, 4))
        with pytest.raises(ValueError, match="layout"):
            Dataset(values, list("abcd"), layout=(3, 2))

    def test_duplicate_ids_rejected(self):
        values = _rng(1).normal(size=(16, 2))
        with pytest.raises(ValueError, match="unique"):
            Dataset(values, ["v", "v"])


class TestPriorConfig:
    def test_for_design_defaults(self):
        activity, motion = _raw_inputs()
        pair = build_design(activity, motion)
        priors = PriorConfig.for_design(pair, 4)
        assert priors.mu_beta[pair.intercept_index] == 800.0
        assert np.count_nonzero(priors.mu_beta) == 1
        np.testing.assert_array_equal(priors.mu_gamma, 0.0)
        np.testing.assert_allclose(
            priors.pi_rho, 0.5 / np.sqrt([1.0, 2.0, 3.0, 4.0])
        )
        assert priors.tau_beta == 10.0 and priors.tau_gamma == 10.0
        assert priors.tau_rho == 1.0 and priors.r == 0.5 and priors.zeta == 1.0

    def test_omega_rho_shrinks_with_lag(self):
        priors = PriorConfig(
            mu_beta=np.zeros(2), mu_gamma=np.zeros(1),
            pi_rho=0.5 / np.sqrt([1.0, 2.0, 3.0]), tau_rho=2.0, zeta=1.5,
        )
        np.testing.assert_allclose(
            priors.omega_rho_diag, 4.0 / np.arange(1.0, 4.0) ** 1.5
        )
        np.testing.assert_allclose(priors.mu_rho, [0.5, 0.0, 0.0])

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            PriorConfig(np.zeros(1), np.zeros(1), np.array([0.5]), tau_beta=0.0)
        with pytest.raises(ValueError):
            PriorConfig(np.zeros(1), np.zeros(1), np.array([0.5]), r=1.0)
        with pytest.raises(ValueError):
            PriorConfig(np.zeros(1), np.zeros(1), np.array([1.0]))


class TestChainState:
    def test_excluded_coefficients_must_be_zero(self):
        state = ChainState(
            beta=np.array([1.0, 0.5]),
            ind_beta=np.array([True, False]),
            gamma=np.zeros(1),
            ind_gamma=np.zeros(1, dtype=bool),
            rho=np.zeros(1),
            ind_rho=np.zeros(1, dtype=bool),
            pi_beta=0.5,
            pi_gamma=0.5,
            rng=_rng(0),
        )
        with pytest.raises(ValueError, match="beta"):
            state.validate()


class TestCheckStationary:
    def test_scalar_cases(self):
        assert check_stationary([0.99])
        assert not check_stationary([1.0])
        assert not check_stationary([-1.2])

    def test_boundary_pair(self):
        # lam=1 solves lam^2 = 0.5 lam + 0.5
        assert not check_stationary([0.5, 0.5])
        assert check_stationary([0.5, 0.4999])

    def test_l1_shortcut_matches_eigenvalues(self):
        rng = _rng(42)
        for _ in range(400):
            k = int(rng.integers(1, 7))
            rho = rng.uniform(-1.5, 1.5, size=k)
            comp = np.zeros((k, k))
            comp[0] = rho
            comp[np.arange(1, k), np.arange(k - 1)] = 1.0
            direct = bool(np.max(np.abs(np.linalg.eigvals(comp))) < 1.0)
            assert check_stationary(rho) == direct

    def test_outside_l1_ball_but_stationary(self):
        # AR(2) triangle corner: rho = (1.2, -0.5) has |.|_1 > 1 yet roots inside
        assert check_stationary([1.2, -0.5])

    def test_bad_input(self):
        with pytest.raises(ValueError):
            check_stationary([])
        with pytest.raises(ValueError):
            check_stationary([np.nan])
