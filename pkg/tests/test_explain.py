import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit import explain
from clinaudit.data import Dataset, SyntheticSpec, gen_synthetic
from clinaudit.errors import DataError
from clinaudit.models import leaf_count, logistic, make_model, sigmoid


def _linear(weights, bias=0.0):
    return make_model(logistic(), [*weights, bias], len(weights))


class TestPermutationImportance:
    def test_zero_weight_feature_exactly_zero(self, small_ds):
        imp = explain.permutation_importance(_linear([1.0, 0.0, 0.8]), small_ds, "auc", n_repeats=3)
        assert imp.values[1] == 0.0

    def test_dominant_feature_ranks_first(self):
        ds = gen_synthetic(SyntheticSpec(n=1000, true_weights=(3.0, 0.3, 0.3), seed=4))
        imp = explain.permutation_importance(_linear([3.0, 0.3, 0.3]), ds, "auc")
        assert int(np.argmax(imp.values)) == 0

    def test_lower_is_better_sign(self):
        ds = gen_synthetic(SyntheticSpec(n=500, true_weights=(2.0, 0.0), seed=5))
        imp = explain.permutation_importance(_linear([2.0, 0.0]), ds, "log_loss")
        assert imp.values[0] > 0

    def test_deterministic(self, small_ds):
        m = _linear([1.0, -0.5, 0.8])
        a = explain.permutation_importance(m, small_ds, seed=3)
        b = explain.permutation_importance(m, small_ds, seed=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_csv(self, small_ds, tmp_path):
        imp = explain.permutation_importance(_linear([1.0, -0.5, 0.8]), small_ds, n_repeats=1)
        imp.to_csv(tmp_path / "a.csv")
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == "feature,value" and len(lines) == 4


def _shapley_oracle(f, x, background):
    # permutation-average definition, independent of the subset-weight formula
    d = len(x)
    phi = [0.0] * d

    def value(present):
        Z = np.array(background, dtype=float)
        for j in present:
            Z[:, j] = x[j]
        return float(np.mean(f(Z)))

    perms = list(itertools.permutations(range(d)))
    for order in perms:
        present = []
        for j in order:
            before = value(present)
            present.append(j)
            phi[j] += value(present) - before
    return [v / len(perms) for v in phi]


class TestShapley:
    def test_additive_hand_example(self):
        f = lambda X: X[:, 0] + X[:, 1]
        phi = explain.shapley_exact(f, [2.0, 2.0], [[1.0, -1.0], [-1.0, 1.0]]).values
        assert phi.tolist() == [2.0, 2.0]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6), d=st.integers(1, 4))
    def test_matches_permutation_oracle_and_efficiency(self, seed, d):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=d)
        f = lambda X: sigmoid(X @ w + 0.3 * X[:, 0] * X[:, -1])
        x = rng.normal(size=d)
        bg = rng.normal(size=(5, d))
        phi = explain.shapley_exact(f, x, bg).values
        np.testing.assert_allclose(phi, _shapley_oracle(f, x, bg), atol=1e-12)
        assert math.fsum(phi) == pytest.approx(float(f(x[None, :])[0] - np.mean(f(bg))), abs=1e-12)

    def test_too_wide(self):
        with pytest.raises(DataError, match="permutation_importance"):
            explain.shapley_exact(lambda X: X[:, 0], np.zeros(13), np.zeros((2, 13)))

    def test_background_width(self):
        with pytest.raises(DataError):
            explain.shapley_exact(lambda X: X[:, 0], np.zeros(3), np.zeros((2, 2)))

    def test_names_from_dataset(self):
        bg = Dataset(np.zeros((3, 2)), [0, 1, 0], feature_names=("age", "bp"))
        att = explain.shapley_exact(_linear([1.0, 1.0]), [1.0, 0.0], bg)
        assert att.feature_names == ("age", "bp") and att.scope == "local"


class TestSurrogate:
    def test_self_fidelity(self, small_ds):
        m = _linear([1.0, -0.5, 0.8])
        assert explain.surrogate_fidelity(m, m, small_ds) == 1.0

    def test_constant_surrogate_near_half(self):
        ds = gen_synthetic(SyntheticSpec(n=4000, true_weights=(1.0,), seed=6))
        fid = explain.surrogate_fidelity(_linear([1.0]), lambda X: np.zeros(len(X)), ds)
        assert fid == pytest.approx(0.5, abs=0.03)

    def test_tree_surrogate_one_dimensional(self):
        ds = gen_synthetic(SyntheticSpec(n=1000, true_weights=(2.0,), seed=7))
        task = _linear([2.0], -0.4)
        tree = explain.fit_tree_surrogate(task, ds, max_depth=2)
        assert explain.surrogate_fidelity(task, tree, ds) >= 0.9
        assert explain.surrogate_parsimony(tree) == leaf_count(tree)

    def test_single_class_task(self, small_ds):
        with pytest.raises(DataError):
            explain.fit_tree_surrogate(lambda X: np.zeros(len(X)), small_ds)
