import json

import numpy as np
import pytest

from clinaudit.report import EvaluationReport, merge_reports, stable_view, to_jsonable


class TestReport:
    def test_round_trip(self, tmp_path):
        rep = EvaluationReport("calibrate", {"bins": 10}, 3, {"ece": 0.05, "alpha": None},
                               {"bins": [{"count": 4}]}, {"calibration": "calibration_curve.csv"}, ["few events"])
        rep.write(tmp_path / "r.json")
        back = EvaluationReport.read(tmp_path / "r.json")
        assert back == rep
        assert back.to_json() == rep.to_json()

    def test_numpy_and_non_finite(self):
        doc = to_jsonable({"a": np.float64(0.5), "b": np.arange(3), "c": float("nan"), 1: np.bool_(True)})
        assert doc == {"a": 0.5, "b": [0, 1, 2], "c": None, "1": True}
        assert isinstance(doc["b"][0], int)

    def test_stable_view_drops_timestamp(self):
        a = EvaluationReport("dca", {}, 0, created_at="t1").to_dict()
        b = EvaluationReport("dca", {}, 0, created_at="t2").to_dict()
        assert a != b and stable_view(a) == stable_view(b)

    def test_schema_version_present(self):
        assert json.loads(EvaluationReport("x", {}, 0).to_json())["schema_version"] == "1.0"

    def test_merge(self):
        a = EvaluationReport("calibrate", {"bins": 10}, 1, {"ece": 0.1}, warnings=["w"])
        b = EvaluationReport("dca", {}, 2, {"prevalence": 0.2})
        m = merge_reports([a, b])
        assert m.config["sources"] == ["calibrate", "dca"]
        assert m.metrics == {"0:calibrate": {"ece": 0.1}, "1:dca": {"prevalence": 0.2}}
        assert m.warnings == ["[calibrate] w"]

    def test_missing_command(self):
        with pytest.raises(KeyError):
            EvaluationReport.from_dict({})
