import math

import pytest

from audit_kit.detect import (
    MetricsReport,
    SurveyCounts,
    compute_metrics,
    published_consistency,
    render_survey_report,
)
from audit_kit.errors import EmptyModelError

# Published columns from a four-firm survey of project finance models:
# (name, unique formulae t, integrity tests o, optimisation tests i,
#  printed % testing, printed calcs-per-integrity ratio)
PUBLISHED = [
    ("Big 4", 5930.0, 25.5, 72.0, 1.6, 228),
    ("Smaller Firm", 3098.5, 201.0, 39.0, 7.7, 14),
    ("Bank", 7709.0, 33.0, 91.5, 1.6, 229),
    ("Promoter", 6378.5, 36.0, 87.0, 1.9, 173),
]


@pytest.mark.parametrize("name,t,o,i,pct,ratio", PUBLISHED)
def test_published_survey_reproduction(name, t, o, i, pct, ratio):
    m = compute_metrics(SurveyCounts(name, t, o, i))
    assert m.c == t - o - i
    # printed percentage is rounded to one decimal place
    assert round(100 * m.pct_testing, 1) == pct
    # printed ratios are whole numbers, truncated
    assert int(m.calcs_per_integrity) == ratio


def test_published_inconsistency_flagged():
    # one published column prints 16% against counts implying 29.4%
    t, o, i = 7855.0, 2181.0, 132.0
    m = compute_metrics(SurveyCounts("Inconsistent", t, o, i))
    assert round(100 * m.pct_testing, 1) == 29.4
    assert not published_consistency(t, o, i, printed_pct=0.16)
    # the consistent columns pass the same check
    for _name, ct, co, ci, pct, _ratio in PUBLISHED:
        assert published_consistency(ct, co, ci, printed_pct=pct / 100)


def test_compute_metrics_edge_cases():
    with pytest.raises(EmptyModelError):
        compute_metrics(SurveyCounts("empty", 0.0, 0.0, 0.0))
    no_integrity = compute_metrics(SurveyCounts("x", 100.0, 0.0, 10.0))
    assert math.isinf(no_integrity.calcs_per_integrity)


def test_render_survey_report_formatting():
    reports = [
        compute_metrics(SurveyCounts(n, t, o, i)) for n, t, o, i, _p, _r in PUBLISHED
    ]
    text = render_survey_report(reports)
    assert "Unique formulae (t)" in text
    assert "1.6%" in text and "7.7%" in text and "1.9%" in text
    # large ratios are truncated integers, small ones keep a decimal
    assert "228" in text and "229" in text and "173" in text
    assert "14.2" in text
    # infinite ratio renders as n/a
    text2 = render_survey_report([compute_metrics(SurveyCounts("x", 10.0, 0.0, 0.0))])
    assert "n/a" in text2


def test_render_includes_per_category_rows():
    m = MetricsReport("m", 100.0, 8.0, 2.0, 90.0, 0.1, 11.25, {1: 1, 14: 2})
    text = render_survey_report([m])
    assert " 1 " in text and "14 " in text
