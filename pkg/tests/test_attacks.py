import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit import attacks, privacy
from clinaudit.data import split_holdout
from clinaudit.errors import DataError
from clinaudit.models import TrainConfig, log_loss, logistic, make_model, mlp, train, train_tree

from conftest import task_dataset


def _linear(weights, bias=0.0):
    return make_model(logistic(), [*weights, bias], len(weights))


class TestMembershipScoring:
    def test_perfect_separation(self):
        res = attacks.score_membership([1.0] * 5, [0.5] * 5)
        assert res.auc == 1.0 and res.advantage == 1.0

    def test_equal_scores_are_chance(self):
        assert attacks.score_membership([0.7] * 4, [0.7] * 4).auc == 0.5

    def test_unequal_sizes(self):
        with pytest.raises(DataError, match="equal size"):
            attacks.score_membership([1.0, 0.9], [0.5])

    def test_attack_features(self):
        F = attacks.attack_features(lambda X: np.array([0.9, 0.2]), np.zeros((2, 1)), np.array([1, 1]))
        np.testing.assert_allclose(F, [[0.9, -math.log(0.9)], [0.8, -math.log(0.2)]])


class TestShadowAttack:
    def _split(self, seed=0):
        ds = task_dataset(400, seed)
        perm = np.random.default_rng(seed).permutation(ds.n)
        return ds.subset(perm[:80]), ds.subset(perm[80:160]), ds.subset(perm[160:])

    def test_overlap_rejected(self):
        mem, non, pool = self._split()
        setup = attacks.MiaSetup(_linear([0.1] * 10), logistic(), TrainConfig(epochs=2))
        with pytest.raises(DataError, match="disjoint"):
            attacks.mia_shadow_attack(setup, mem, mem.subset(np.arange(80)), pool)

    def test_target_training_overlap_rejected(self):
        mem, non, pool = self._split()
        setup = attacks.MiaSetup(_linear([0.1] * 10), logistic(), TrainConfig(epochs=2))
        with pytest.raises(DataError, match="overlaps"):
            attacks.mia_shadow_attack(setup, mem, non, pool, target_train_ids=pool.row_ids[:3])

    def test_unequal_member_sets(self):
        mem, non, pool = self._split()
        setup = attacks.MiaSetup(_linear([0.1] * 10), logistic(), TrainConfig(epochs=2))
        with pytest.raises(DataError, match="equal size"):
            attacks.mia_shadow_attack(setup, mem, non.subset(np.arange(10)), pool)

    def test_bad_setup(self):
        with pytest.raises(ValueError):
            attacks.MiaSetup(None, logistic(), TrainConfig(), n_shadows=0)
        with pytest.raises(ValueError):
            attacks.MiaSetup(None, logistic(), TrainConfig(), features="entropy")

    def test_overfit_target_leaks_and_is_deterministic(self):
        mem, non, pool = self._split(1)
        cfg = TrainConfig(lr=0.1, epochs=60, batch_size=16, seed=1)
        target = train(mem, mlp(32), cfg)
        setup = attacks.MiaSetup(target, mlp(32), cfg, seed=1)
        a = attacks.mia_shadow_attack(setup, mem, non, pool, mem.row_ids)
        b = attacks.mia_shadow_attack(setup, mem, non, pool, mem.row_ids)
        assert a.auc > 0.55
        assert a.auc == b.auc and a.config["shadow_size"] == 80

    def test_dp_target_leaks_less(self):
        wins = 0
        for seed in range(10):
            ds = task_dataset(600, seed)
            perm = np.random.default_rng(seed).permutation(ds.n)
            mem, non, pool = ds.subset(perm[:100]), ds.subset(perm[100:200]), ds.subset(perm[200:])
            cfg = TrainConfig(lr=0.1, epochs=60, batch_size=16, seed=seed)
            base = train(mem, mlp(32), cfg)
            dp, _ = privacy.dp_sgd_train(mem, mlp(32), cfg, privacy.PrivacySpec(clip=1.0, sigma=1.0))
            aucs = [attacks.mia_shadow_attack(attacks.MiaSetup(t, mlp(32), cfg, seed=seed), mem, non, pool,
                                              mem.row_ids).auc for t in (base, dp)]
            wins += aucs[1] <= aucs[0]
        assert wins >= 7


class TestFgsm:
    def test_hand_example(self):
        x_adv = attacks.fgsm(_linear([1.0, -2.0]), np.zeros((1, 2)), np.array([1]), 0.1)
        np.testing.assert_allclose(x_adv, [[-0.1, 0.1]], atol=0)

    def test_zero_budget_is_identity(self, small_ds):
        m = _linear([1.0, -0.5, 0.8])
        assert np.array_equal(attacks.fgsm(m, small_ds.features, small_ds.labels, 0.0), small_ds.features)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), eps=st.floats(1e-3, 2.0))
    def test_linear_loss_never_decreases(self, seed, eps):
        rng = np.random.default_rng(seed)
        m = _linear(rng.normal(size=3), rng.normal())
        X, y = rng.normal(size=(20, 3)), rng.integers(0, 2, 20)
        X_adv = attacks.fgsm(m, X, y, eps)
        assert np.all(log_loss(y, m.predict_proba(X_adv)) >= log_loss(y, m.predict_proba(X)))
        assert np.all(np.abs(X_adv - X) <= eps)

    def test_bounds_respected(self):
        X = np.array([[0.95, 0.05]])
        X_adv = attacks.fgsm(_linear([-1.0, 1.0]), X, np.array([1]), 0.1, bounds=(0.0, 1.0))
        assert X_adv.min() >= 0.0 and X_adv.max() <= 1.0

    def test_tree_rejected(self, small_ds):
        tree = train_tree(small_ds, 2)
        with pytest.raises(TypeError, match="tree"):
            attacks.fgsm(tree, small_ds.features, small_ds.labels, 0.1)

    def test_negative_eps(self):
        with pytest.raises(ValueError):
            attacks.fgsm(_linear([1.0]), np.zeros((1, 1)), np.array([1]), -0.1)


class TestProject:
    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=10),
           st.floats(1e-6, 10.0))
    def test_exact_budget(self, pairs, eps):
        x0 = np.array([a for a, _ in pairs])
        x = np.array([b for _, b in pairs])
        assert np.all(np.abs(attacks.project(x, x0, eps) - x0) <= eps)


class TestPgd:
    def test_single_step_equals_fgsm(self, small_ds):
        m = train(small_ds, mlp(8), TrainConfig(epochs=5))
        a = attacks.pgd(m, small_ds.features, small_ds.labels, 0.2, 0.2, 1)
        assert np.array_equal(a, attacks.fgsm(m, small_ds.features, small_ds.labels, 0.2))

    def test_path_within_ball_and_box(self, small_ds):
        m = train(small_ds, mlp(8), TrainConfig(epochs=5))
        X = np.clip(small_ds.features, -2.0, 2.0)
        _, path = attacks.pgd(m, X, small_ds.labels, 0.15, 0.05, 8, bounds=(-2.0, 2.0), return_path=True)
        assert len(path) == 9
        for xt in path:
            assert np.all(np.abs(xt - X) <= 0.15)
            assert xt.min() >= -2.0 and xt.max() <= 2.0

    def test_dominates_fgsm_on_average(self):
        fg, pg = [], []
        for seed in range(10):
            tr, te = split_holdout(task_dataset(600, seed), 0.7, seed=seed)
            m = train(tr, mlp(16), TrainConfig(lr=0.1, epochs=30, seed=seed))
            fg.append(attacks.evasion_attack(m, te, "fgsm", 0.3).success_rate)
            pg.append(attacks.evasion_attack(m, te, "pgd", 0.3, iters=10).success_rate)
        assert np.mean(pg) >= np.mean(fg)


class TestZoo:
    def test_square_hand_example(self):
        g = attacks.zoo_gradient(lambda z: z[0] ** 2, [1.0], h=0.01)
        assert g[0] == pytest.approx(2.0, abs=1e-12)

    def test_second_order_convergence(self):
        m = _linear([1.5, -0.7], 0.2)
        x = np.array([0.3, 0.8])
        p = float(m.predict_proba(x[None, :])[0])
        exact = p * (1 - p) * np.array([1.5, -0.7])
        err = [np.abs(attacks.zoo_gradient(lambda z: float(m.predict_proba(z[None, :])[0]), x, h) - exact).max()
               for h in (0.1, 0.05)]
        assert err[0] / err[1] == pytest.approx(4.0, rel=0.05)

    def test_constant_model(self):
        assert attacks.zoo_gradient(lambda z: 0.3, np.ones(4)).tolist() == [0.0] * 4

    def test_underflow_warns(self):
        with pytest.warns(RuntimeWarning, match="underflow"):
            attacks.zoo_gradient(lambda z: float(z[0]), [1e20], h=1e-4)

    def test_no_warning_normally(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            attacks.zoo_gradient(lambda z: float(z[0]), [1.0])

    def test_bad_h(self):
        with pytest.raises(ValueError):
            attacks.zoo_gradient(lambda z: 0.0, [1.0], h=0.0)

    def test_query_attack_works_on_tree(self, small_ds):
        tree = train_tree(small_ds, 3)
        sub = small_ds.subset(np.arange(20))
        res = attacks.evasion_attack(tree, sub, "zoo", eps=0.5, iters=3, h=0.3)
        assert np.all(np.abs(res.adversarial - sub.features) <= 0.5)


class TestDefenseComparison:
    def test_identity(self, small_ds):
        m = _linear([1.0, -0.5, 0.8])
        res = attacks.evasion_attack(m, small_ds, "fgsm", 0.2)
        rows = attacks.evaluate_defense(res, res)
        assert rows == [{"metric": "success_rate", "baseline": res.success_rate,
                         "defended": res.success_rate, "delta": 0.0}]

    def test_mismatched_config(self, small_ds):
        m = _linear([1.0, -0.5, 0.8])
        with pytest.raises(DataError):
            attacks.evaluate_defense(attacks.evasion_attack(m, small_ds, "fgsm", 0.2),
                                     attacks.evasion_attack(m, small_ds, "fgsm", 0.3))

    def test_softplus_smoothing_directional(self):
        wins = 0
        for seed in range(10):
            tr, te = split_holdout(task_dataset(600, seed), 0.7, seed=seed)
            cfg = TrainConfig(lr=0.1, epochs=30, batch_size=32, seed=seed)
            relu = attacks.evasion_attack(train(tr, mlp(16), cfg), te, "fgsm", 0.3)
            soft = attacks.evasion_attack(train(tr, mlp(16, activation="softplus", beta=0.5), cfg), te, "fgsm", 0.3)
            wins += attacks.evaluate_defense(relu, soft)[0]["delta"] < 0
        assert wins >= 6
