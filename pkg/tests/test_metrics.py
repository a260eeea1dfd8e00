import json

import numpy as np
import pytest

from interdoc.metrics import EvalReport, build_report, mrr_at_k, recall_at_k


class TestRecallAtK:
    def test_rank_one(self):
        assert recall_at_k(["a", "b", "c"], {"a"}, 1) == 1

    def test_outside_window(self):
        ranked = [f"d{i}" for i in range(12)]
        assert recall_at_k(ranked, {"d10"}, 10) == 0

    def test_boundary_inclusive(self):
        ranked = [f"d{i}" for i in range(12)]
        assert recall_at_k(ranked, {"d9"}, 10) == 1

    def test_requires_positive_k(self):
        with pytest.raises(ValueError):
            recall_at_k(["a"], {"a"}, 0)


class TestMrrAtK:
    def test_rank_three(self):
        assert mrr_at_k(["x", "y", "a"], {"a"}, 10) == pytest.approx(1 / 3)

    def test_no_hit(self):
        assert mrr_at_k(["x", "y"], {"a"}, 10) == 0.0

    def test_rank_one(self):
        assert mrr_at_k(["a", "b"], {"a"}, 10) == 1.0

    def test_tuple_ids(self):
        ranked = [("d1", "s0"), ("d1", "s1")]
        assert mrr_at_k(ranked, {("d1", "s1")}, 10) == pytest.approx(0.5)


class TestBuildReport:
    def _rows(self):
        return [
            {"query_id": "q1", "ranked": ["a", "b", "c"], "relevant": {"b"}},
            {"query_id": "q2", "ranked": ["x", "y", "z"], "relevant": {"nope"}},
        ]

    def test_means(self):
        report = build_report(self._rows(), ks=(1, 2), config={}, seed=0)
        assert report.metrics["R@1"] == 0.0
        assert report.metrics["R@2"] == 0.5
        assert report.metrics["MRR@10"] == pytest.approx(0.25)

    def test_recall_monotone_in_k(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            rows = []
            for q in range(10):
                ranked = [f"d{i}" for i in rng.permutation(30)]
                rows.append({"query_id": f"q{q}", "ranked": ranked,
                             "relevant": {f"d{rng.integers(35)}"}})
            report = build_report(rows, ks=(1, 5, 10, 20), config={}, seed=0)
            values = [report.metrics[f"R@{k}"] for k in (1, 5, 10, 20)]
            assert values == sorted(values)
            assert report.metrics["MRR@10"] <= report.metrics["R@10"]

    def test_json_is_deterministic_and_parseable(self):
        report = build_report(self._rows(), ks=(1,), config={"mode": "t"}, seed=4)
        parsed = json.loads(report.to_json())
        assert parsed["seed"] == 4
        assert parsed["metrics"]["R@1"] == 0.0
        assert report.to_json() == build_report(self._rows(), ks=(1,), config={"mode": "t"}, seed=4).to_json()

    def test_text_table_contains_metrics(self):
        report = build_report(self._rows(), ks=(1,), config={}, seed=0)
        text = report.to_text()
        assert "R@1" in text and "MRR@10" in text

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_report([], ks=(1,), config={}, seed=0)
