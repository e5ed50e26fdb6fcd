"""Synthetic reward surfaces, classification conversion, logged panels."""

import math

import numpy as np
import pytest

from bandit_forest.environments import (
    ClassificationBanditEnv,
    EnvironmentExhausted,
    LoggedPanel,
    classification_step,
    friedman1,
    friedman2,
    friedman3,
    load_logged_panel,
    load_tabular_csv,
    make_scenario,
    make_synthetic_panel,
    save_logged_panel,
)


class TestFriedmanFunctions:
    def test_friedman1_at_origin(self):
        assert friedman1(np.zeros(5)) == pytest.approx(5.0)

    def test_friedman1_at_half(self):
        assert friedman1(np.full(5, 0.5)) == pytest.approx(14.57107, abs=1e-5)

    def test_friedman1_linear_coordinate(self):
        x = np.full(5, 0.3)
        h = 1e-6
        xp = x.copy()
        xp[3] += h
        assert (friedman1(xp) - friedman1(x)) / h == pytest.approx(10.0, rel=1e-4)

    def test_friedman2_at_origin(self):
        assert friedman2(np.zeros(4)) == pytest.approx(1.0 / (125 * 40 * math.pi), rel=1e-9)

    def test_friedman2_nonnegative(self):
        X = np.random.default_rng(0).random((500, 4))
        assert np.all(friedman2(X) >= 0)

    def test_friedman3_limit_at_zero_first_coordinate(self):
        x = np.array([0.0, 0.5, 0.9, 0.2])
        assert friedman3(x) == pytest.approx((math.pi / 2) / 0.1, rel=1e-12)

    def test_friedman3_zero_over_zero(self):
        # numerator vanishes when x2'x3' = 1/(x2'x4'); with x3=0 that needs
        # 1/(x2'x4') = 0, unreachable, so force both terms via x1=0, x3 chosen
        x2p = 40 * math.pi
        x3 = 1.0 / (x2p * x2p)  # x4'=1: x2'x3' - 1/x2' = 0
        val = friedman3(np.array([0.0, 0.0, x3, 0.0]))
        assert val == pytest.approx(0.0, abs=1e-12)


class TestSyntheticScenarios:
    def test_disjoint_palindromic_context(self):
        env = make_scenario("friedman_sparse_disjoint").replicate(0)
        x = np.full(20, 0.37)  # palindrome
        mu = env.arm_means(x)
        assert mu[0] == pytest.approx(mu[1])

    def test_shared_equal_when_sin_vanishes(self):
        env = make_scenario("friedman").replicate(0)
        x = np.array([0.0, 0.7, 0.3, 0.2, 0.9])
        mu = env.arm_means(x)
        assert mu[1] == pytest.approx(mu[0])

    def test_linear_unit_vector(self):
        env = make_scenario("linear").replicate(3)
        env._betas = np.zeros_like(env._betas)
        env._betas[1, 0] = 1.0
        x = np.zeros(10)
        x[0] = 0.3
        assert env.arm_means(x)[1] == pytest.approx(0.3)

    def test_replication_determinism(self):
        a = make_scenario("linear").replicate(5)
        b = make_scenario("linear").replicate(5)
        x = np.random.default_rng(0).random(10)
        assert np.allclose(a.arm_means(x), b.arm_means(x))

    def test_heteroscedastic_noise_range(self):
        for seed in range(30):
            env = make_scenario("friedman_heteroscedastic").replicate(seed)
            assert np.all(env.arm_noise_sd**2 >= 0.1)
            assert np.all(env.arm_noise_sd**2 <= 10.0)

    def test_unknown_scenario(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            make_scenario("nope")


class TestSynBart:
    def test_determinism(self):
        a = make_scenario("synbart").replicate(9)
        b = make_scenario("synbart").replicate(9)
        X = np.random.default_rng(1).random((20, 4))
        assert np.allclose(a.arm_means_matrix(X), b.arm_means_matrix(X))

    def test_piecewise_constant(self):
        env = make_scenario("synbart").replicate(2)
        thresholds = sorted(
            t for f in env._forests for tree in f.trees for t in
            [n.threshold for n in tree.internal_nodes() if n.feature == 0]
        )
        hi = max(thresholds) if thresholds else 0.5
        x1 = np.full(4, 0.5)
        x1[0] = min(hi + 1e-6, 1.0)
        x2 = x1.copy()
        x2[0] = 1.0
        base = np.full(4, 0.5)
        # moving coordinate 0 beyond every split threshold changes nothing
        if x1[0] > hi:
            assert np.allclose(env.arm_means(x1), env.arm_means(x2))

    def test_marginal_scale(self):
        rng = np.random.default_rng(3)
        X = rng.random((2000, 4))
        sds = []
        for seed in range(5):
            env = make_scenario("synbart").replicate(seed)
            sds.append(env.arm_means_matrix(X).std())
        # sqrt(m) * sigma_mu = 0.25; allow a factor-3 envelope across seeds
        assert 0.25 / 3 < np.mean(sds) < 0.25 * 3

    def test_noise_sd(self):
        env = make_scenario("synbart").replicate(0)
        assert np.allclose(env.arm_noise_sd, 0.1)


class TestClassification:
    def test_step_rewards(self):
        env = ClassificationBanditEnv(np.zeros((3, 2)), np.array([0, 1, 0]))
        assert classification_step(env, 0, 0) == (1.0, 0.0)
        assert classification_step(env, 1, 0) == (0.0, 1.0)

    def test_exhausted(self):
        env = ClassificationBanditEnv(np.zeros((2, 1)), np.array([0, 1]))
        with pytest.raises(EnvironmentExhausted):
            classification_step(env, 2, 0)

    def test_cumulative_regret_counts_mistakes(self):
        env = ClassificationBanditEnv(np.zeros((5, 1)), np.array([0, 1, 1, 0, 1]))
        actions = [0, 0, 1, 1, 1]
        total = sum(classification_step(env, t, a)[1] for t, a in enumerate(actions))
        assert total == 2.0


class TestLoadTabularCsv:
    def test_scaling_one_hot_and_labels(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "num,cat,label\n"
            "0,a,yes\n"
            "10,b,no\n"
            "5,c,yes\n"
        )
        env = load_tabular_csv(path, "label")
        assert env.K == 2
        # numeric scaled to [0,1]; categorical one-hot with 3 levels
        assert env.X.shape == (3, 4)
        assert np.allclose(env.X[:, 0], [0.0, 1.0, 0.5])
        assert np.allclose(env.X[:, 1:].sum(axis=1), 1.0)
        assert list(env.labels) == [1, 0, 1]  # sorted levels: no=0, yes=1

    def test_constant_column_maps_to_zero(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("num,label\n3,1\n3,0\n")
        env = load_tabular_csv(path, "label")
        assert np.allclose(env.X[:, 0], 0.0)

    def test_unparseable_cell_reports_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("num,label\n1,0\noops,1\n")
        with pytest.raises(ValueError, match="row 3.*'num'"):
            load_tabular_csv(path, "label")

    def test_single_class_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("num,label\n1,0\n2,0\n")
        with pytest.raises(ValueError, match="single class"):
            load_tabular_csv(path, "label")

    def test_shuffle_is_seeded(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = "\n".join(f"{i},{i % 2}" for i in range(20))
        path.write_text("num,label\n" + rows + "\n")
        env = load_tabular_csv(path, "label")
        a = env.shuffled(3)
        b = env.shuffled(3)
        c = env.shuffled(4)
        assert np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.labels, c.labels)


class TestLoggedPanel:
    def test_round_trip(self, tmp_path):
        panel, _, _ = make_synthetic_panel(50, seed=1)
        path = tmp_path / "panel.csv"
        save_logged_panel(panel, path)
        back = load_logged_panel(path)
        assert np.allclose(back.contexts, panel.contexts)
        assert np.array_equal(back.actions, panel.actions)
        assert np.allclose(back.propensities, panel.propensities)

    def test_propensity_sum_validated(self):
        with pytest.raises(ValueError, match="sum to"):
            LoggedPanel(
                np.zeros((1, 2)),
                np.array([0]),
                np.array([1.0]),
                np.array([[0.5, 0.4]]),
                np.array([0]),
                np.array([0]),
            )

    def test_cluster_resampling_preserves_order(self):
        panel, _, _ = make_synthetic_panel(30, seed=2, n_clusters=3)
        out = panel.take_clusters([2, 0, 0])
        c2 = (panel.cluster_ids == 2).sum()
        c0 = (panel.cluster_ids == 0).sum()
        assert len(out) == c2 + 2 * c0
        assert list(out.steps[:c2]) == sorted(out.steps[:c2])
