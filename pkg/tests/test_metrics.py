from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gfigs.errors import DegenerateClassError
from gfigs.metrics import (
    SENSITIVITY_LEVELS,
    accuracy,
    avg_precision,
    evaluate,
    f1,
    format_sensitivity_table,
    roc_auc,
    spec_at_sens,
)
from oracles import brute_auc, brute_spec_at_sens


@st.composite
def scored_labels(draw, max_n=200):
    n = draw(st.integers(2, max_n))
    s = draw(hnp.arrays(float, n, elements=st.integers(0, 20).map(lambda v: v / 20)))
    y = draw(hnp.arrays(np.int64, n, elements=st.integers(0, 1)))
    y[0], y[1] = 0, 1
    return s, y


class TestSpecAtSens:
    def test_hand_example(self):
        assert spec_at_sens([0.9, 0.8, 0.4, 0.3, 0.1], [1, 1, 0, 1, 0], 1.0) == 0.5

    def test_separated(self):
        s, y = [0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0]
        assert all(spec_at_sens(s, y, lv) == 1.0 for lv in SENSITIVITY_LEVELS + (1.0,))

    def test_inverted(self):
        assert spec_at_sens([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0], 0.92) == 0.0

    @given(scored_labels(), st.sampled_from([0.5, 0.9, 0.92, 0.94, 0.96, 0.98, 1.0]))
    def test_matches_brute_force(self, data, level):
        s, y = data
        assert spec_at_sens(s, y, level) == brute_spec_at_sens(s, y, level)

    @given(scored_labels())
    def test_non_increasing_in_level(self, data):
        s, y = data
        vals = [spec_at_sens(s, y, lv) for lv in (0.5, 0.9, 0.92, 0.94, 0.96, 0.98, 1.0)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_single_class(self):
        with pytest.raises(DegenerateClassError):
            spec_at_sens([0.1, 0.2], [1, 1], 0.9)


class TestRanking:
    @given(scored_labels(60))
    def test_auc_brute_force(self, data):
        s, y = data
        assert roc_auc(s, y) == pytest.approx(brute_auc(s, y), abs=1e-12)

    @given(scored_labels())
    def test_auc_monotone_invariance(self, data):
        s, y = data
        assert roc_auc(s, y) == roc_auc(np.exp(3 * s) - 7, y) == roc_auc(s ** 3, y)

    @given(scored_labels())
    def test_against_sklearn(self, data):
        from sklearn.metrics import average_precision_score, roc_auc_score

        s, y = data
        assert roc_auc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
        assert avg_precision(s, y) == pytest.approx(average_precision_score(y, s), abs=1e-12)

    def test_null_auc(self, rng):
        s = rng.random(2000)
        y = np.r_[np.ones(1000, int), np.zeros(1000, int)]
        assert abs(roc_auc(s, y) - 0.5) < 0.05

    def test_perfect(self):
        s, y = [0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]
        assert roc_auc(s, y) == 1.0 and avg_precision(s, y) == 1.0


class TestThresholded:
    def test_two_rows(self):
        assert accuracy([0.9, 0.1], [1, 0]) == 1.0
        assert f1([0.9, 0.1], [1, 0]) == 1.0

    def test_cutoff_inclusive(self):
        assert accuracy([0.5, 0.49], [1, 0]) == 1.0

    def test_f1_without_predicted_positives(self):
        assert f1([0.1, 0.2], [1, 0]) == 0.0


class TestReport:
    @given(scored_labels())
    def test_rates_in_unit_interval(self, data):
        s, y = data
        r = evaluate(s, y)
        vals = list(r.spec_at_sens.values()) + [r.roc_auc, r.avg_precision, r.accuracy, r.f1]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert r.n_pos + r.n_neg == len(y)

    def test_table_layout(self):
        r = evaluate([0.9, 0.8, 0.4, 0.3, 0.1], [1, 1, 0, 1, 0])
        lines = format_sensitivity_table({"G-FIGS": r}).splitlines()
        assert lines[0].split()[:2] == ["Sensitivity", "level:"]
        assert [c for c in lines[0].split() if c.endswith("%")] == ["92%", "94%", "96%", "98%"]
        assert lines[2].startswith("G-FIGS")
        assert r.to_dict()["spec_at_sens"]["0.94"] == r.spec_at_sens[0.94]
