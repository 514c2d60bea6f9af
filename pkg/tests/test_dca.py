import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit import dca
from clinaudit.errors import DataError


def _scored(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    return y, np.clip(0.3 * y + 0.7 * rng.random(n), 0, 1)


def _nb_oracle(y, p, t):
    treat = [pi >= t for pi in p]
    tp = sum(1 for yi, ti in zip(y, treat) if ti and yi == 1)
    fp = sum(1 for yi, ti in zip(y, treat) if ti and yi == 0)
    return tp / len(y) - fp / len(y) * t / (1 - t)


class TestNetBenefit:
    def test_hand_example(self):
        assert dca.net_benefit_from_counts(30, 20, 100, 0.5) == pytest.approx(0.10, abs=1e-15)

    def test_no_positive_predictions(self):
        assert dca.net_benefit([0, 1, 1], [0.1, 0.2, 0.3], 0.5) == 0.0

    def test_treat_all_zero_at_prevalence(self):
        assert dca.treat_all_net_benefit(0.2, [0.2])[0] == pytest.approx(0.0, abs=1e-15)

    def test_perfect_predictor_gives_prevalence(self):
        y = np.array([1, 0, 0, 1, 0])
        curve = dca.decision_curve(y, y.astype(float))
        np.testing.assert_allclose(curve.nb_model, 0.4, atol=1e-15)

    @pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.2])
    def test_endpoint_thresholds_rejected(self, t):
        with pytest.raises(ValueError):
            dca.net_benefit([1], [0.5], t)
        with pytest.raises(ValueError):
            dca.decision_curve([0, 1], [0.2, 0.8], [t])

    def test_grid_must_ascend(self):
        with pytest.raises(ValueError):
            dca.decision_curve([0, 1], [0.2, 0.8], [0.5, 0.3])

    def test_misaligned(self):
        with pytest.raises(DataError):
            dca.decision_curve([0, 1], [0.2])


class TestCurve:
    def test_default_grid(self):
        grid = dca.default_grid()
        assert grid.size == 99 and grid[0] == 0.01 and grid[-1] == 0.99

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=50))
    def test_matches_oracle_and_bounded(self, rows):
        y = [r[0] for r in rows]
        p = [r[1] for r in rows]
        grid = dca.default_grid(0.05, 0.95, 0.05)
        curve = dca.decision_curve(y, p, grid)
        expected = [_nb_oracle(y, p, t) for t in grid]
        np.testing.assert_allclose(curve.nb_model, expected, rtol=0, atol=1e-12)
        assert np.all(curve.nb_model <= np.mean(y) + 1e-12)
        assert np.all(curve.nb_treat_none == 0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_rank_preserving_transform_with_matching_thresholds(self, seed):
        y, p = _scored(80, seed)
        grid = dca.default_grid(0.1, 0.9, 0.1)
        f = np.sqrt
        a = dca.decision_curve(y, p, grid)
        # treating p >= t is the same as treating sqrt(p) >= sqrt(t)
        tp = [int(np.sum((f(p) >= f(t)) & (y == 1))) for t in grid]
        fp = [int(np.sum((f(p) >= f(t)) & (y == 0))) for t in grid]
        again = [dca.net_benefit_from_counts(a_, b_, y.size, t) for a_, b_, t in zip(tp, fp, grid)]
        np.testing.assert_allclose(a.nb_model, again, atol=1e-15)

    def test_comparator_fixed_counts(self):
        y = np.array([1, 1, 0, 0, 0, 1])
        test = np.array([1, 0, 1, 0, 0, 1])
        grid = np.array([0.1, 0.5, 0.9])
        curve = dca.decision_curve(y, np.zeros(6) + 0.5, grid, {"biomarker": test})
        expected = 2 / 6 - (1 / 6) * grid / (1 - grid)
        np.testing.assert_allclose(curve.comparators["biomarker"], expected, atol=1e-15)

    def test_bad_comparator(self):
        with pytest.raises(DataError):
            dca.decision_curve([0, 1], [0.2, 0.8], comparators={"t": [0, 2]})

    def test_columns_and_csv_round_trip(self, tmp_path):
        y, p = _scored(120, 1)
        curve = dca.decision_curve(y, p, comparators={"t": (p > 0.6).astype(int)})
        assert list(curve.columns()) == ["threshold", "nb_model", "nb_treat_all", "nb_treat_none", "nb_test_t"]
        curve.to_csv(tmp_path / "d.csv")
        back = dca.DecisionCurve.read_csv(tmp_path / "d.csv")
        for k, v in curve.columns().items():
            np.testing.assert_array_equal(back[k], v)

    def test_to_dict_has_prevalence(self):
        y, p = _scored(20, 2)
        assert dca.decision_curve(y, p).to_dict()["prevalence"] == pytest.approx(y.mean())
