import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit import privacy
from clinaudit.data import split_holdout
from clinaudit.errors import DataError
from clinaudit.metrics import score
from clinaudit.models import TrainConfig, logistic, mlp, train

from conftest import task_dataset


class TestLaplace:
    def test_scale(self):
        assert privacy.laplace_scale(1.0, 1e9) == 1e-9
        assert privacy.laplace_scale(2.0, 0.5) == 4.0

    def test_variance(self):
        draws = privacy.laplace_mechanism(np.zeros(100_000), 1.0, 1.0, seed=1)
        assert draws.var() == pytest.approx(2.0, rel=0.05)

    def test_scalar(self):
        assert isinstance(privacy.laplace_mechanism(3.0, 1.0, 1.0), float)

    def test_pdf_closed_form(self):
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(privacy.laplace_pdf(x, 0.5, 2.0),
                                   [math.exp(-abs(v - 0.5) / 2.0) / 4.0 for v in x], rtol=1e-15)

    def test_non_finite_input(self):
        with pytest.raises(DataError):
            privacy.laplace_mechanism([np.nan], 1.0, 1.0)

    @pytest.mark.parametrize("sens,eps", [(0, 1), (1, 0), (-1, 1)])
    def test_bad_parameters(self, sens, eps):
        with pytest.raises(ValueError):
            privacy.laplace_scale(sens, eps)


class TestGaussian:
    def test_sigma_value(self):
        oracle = math.sqrt(2 * math.log(1.25e5)) / 0.5
        assert privacy.gaussian_sigma(1.0, 0.5, 1e-5) == pytest.approx(oracle, rel=1e-15)
        assert privacy.gaussian_sigma(1.0, 0.5, 1e-5) == pytest.approx(9.69, abs=5e-3)

    def test_linear_in_sensitivity(self):
        assert privacy.gaussian_sigma(2.0, 0.5, 1e-5) == pytest.approx(2 * privacy.gaussian_sigma(1.0, 0.5, 1e-5))

    def test_delta_zero_rejected(self):
        with pytest.raises(ValueError, match="delta > 0"):
            privacy.gaussian_sigma(1.0, 0.5, 0.0)

    def test_epsilon_out_of_range(self):
        with pytest.raises(ValueError):
            privacy.gaussian_sigma(1.0, 1.5, 1e-5)

    def test_mechanism_spread(self):
        out = privacy.gaussian_mechanism(np.zeros(50_000), 1.0, 0.5, 1e-5, seed=2)
        assert out.std() == pytest.approx(privacy.gaussian_sigma(1.0, 0.5, 1e-5), rel=0.02)


class TestClipping:
    def test_hand_example(self):
        np.testing.assert_allclose(privacy.clip_gradient([3.0, 4.0], 2.5), [1.5, 2.0], rtol=1e-15)

    def test_short_vector_unchanged(self):
        g = np.array([0.3, -0.4])
        assert privacy.clip_gradient(g, 1.0).tolist() == g.tolist()

    @settings(max_examples=200)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(1e-3, 1e3))
    def test_norm_bound_and_direction(self, g, c):
        g = np.array(g)
        out = privacy.clip_gradient(g, c)
        assert np.linalg.norm(out) <= c
        if np.linalg.norm(g) > c:
            assert np.dot(out, g) >= 0
        else:
            assert out.tolist() == g.tolist()

    def test_clip_rows_returns_raw_norms(self):
        _, norms = privacy.clip_rows(np.array([[3.0, 4.0], [0.0, 1.0]]), 1.0)
        assert norms.tolist() == [5.0, 1.0]


class TestComposition:
    def test_two_steps(self):
        assert privacy.compose_privacy([(1.0, 1e-6), (1.0, 1e-6)]) == (2.0, 2e-6)

    def test_hundred_steps(self):
        eps, delta = privacy.compose_privacy([(0.01, 1e-8)] * 100)
        assert eps == pytest.approx(1.0, abs=1e-15) and delta == pytest.approx(1e-6, abs=1e-21)

    def test_empty(self):
        with pytest.raises(ValueError):
            privacy.compose_privacy([])


class TestPrivacySpec:
    @pytest.mark.parametrize("kw", [{"epsilon": 0}, {"delta": 1.0}, {"clip": 0}, {"sigma": -1}, {"batch_size": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            privacy.PrivacySpec(**kw)

    def test_pure(self):
        assert privacy.PrivacySpec().pure and not privacy.PrivacySpec(delta=1e-5).pure


class TestDpSgd:
    def test_zero_noise_huge_clip_matches_sgd(self, small_ds):
        cfg = TrainConfig(lr=0.1, epochs=3, batch_size=16, seed=2)
        dp, _ = privacy.dp_sgd_train(small_ds, logistic(), cfg, privacy.PrivacySpec(clip=1e12, sigma=0.0))
        plain = train(small_ds, logistic(), cfg)
        np.testing.assert_allclose(dp.params, plain.params, rtol=1e-12, atol=1e-14)

    def test_audit_log(self, small_ds, tmp_path):
        cfg = TrainConfig(lr=0.1, epochs=1, batch_size=50, seed=1)
        priv = privacy.PrivacySpec(clip=0.5, sigma=1.0)
        _, log = privacy.dp_sgd_train(small_ds, mlp(4), cfg, priv)
        assert len(log) == 4
        assert all(e["max_clipped_norm"] <= 0.5 and e["noise_scale"] == 0.5 for e in log)
        privacy.write_audit_log(log, tmp_path / "audit.jsonl")
        assert privacy.read_audit_log(tmp_path / "audit.jsonl") == log

    def test_step_budget(self, small_ds):
        cfg = TrainConfig(lr=0.1, epochs=100, batch_size=10, seed=1)
        _, log = privacy.dp_sgd_train(small_ds, logistic(), cfg, privacy.PrivacySpec(sigma=0.5, steps=7))
        assert [e["step"] for e in log] == list(range(7))

    def test_deterministic(self, small_ds):
        cfg = TrainConfig(lr=0.1, epochs=2, batch_size=20, seed=5)
        priv = privacy.PrivacySpec(clip=1.0, sigma=2.0)
        a, _ = privacy.dp_sgd_train(small_ds, logistic(), cfg, priv)
        b, _ = privacy.dp_sgd_train(small_ds, logistic(), cfg, priv)
        assert a.params.tolist() == b.params.tolist()

    def test_more_noise_does_not_help(self):
        cfg = TrainConfig(lr=0.2, epochs=5, batch_size=32)
        acc = {}
        for sigma in (0.0, 8.0):
            scores = []
            for seed in range(5):
                train_ds, test_ds = split_holdout(task_dataset(600, seed), 0.7, seed=seed)
                m, _ = privacy.dp_sgd_train(train_ds, logistic(), TrainConfig(**{**cfg.__dict__, "seed": seed}),
                                            privacy.PrivacySpec(clip=1.0, sigma=sigma))
                scores.append(score("accuracy", test_ds.labels, m.predict_proba(test_ds.features)))
            acc[sigma] = np.mean(scores)
        assert acc[8.0] <= acc[0.0]

    def test_width_mismatch(self, small_ds):
        with pytest.raises(DataError):
            privacy.dp_sgd_train(small_ds, logistic(), TrainConfig(), privacy.PrivacySpec(), init=np.zeros(2))
