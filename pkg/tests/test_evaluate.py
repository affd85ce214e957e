import csv
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from claimlens.errors import DuplicatePrediction, FormatError, MissingPrediction
from claimlens.evaluate import (
    UNKNOWN,
    analytics,
    compare_runs,
    confusion,
    per_viewpoint_report,
    percent,
    score_run,
    scores,
    write_analytics_csv,
    write_report_files,
)
from claimlens.model import (
    ActorProfile,
    AveragingMode,
    Claim,
    Confusion,
    ContextConfig,
    DatasetInstance,
    LearningMode,
    Prediction,
    Split,
)


def _instance(i, label, viewpoint_id=1, actor="Actor A", claim_id=None):
    return DatasetInstance(
        instance_id=f"inst{i:04d}",
        claim_id=claim_id or f"claim{i:04d}",
        utterance=f"utterance {i}",
        article_url="",
        article_body="Body.",
        actor_name=actor,
        actor_description="",
        viewpoint_id=viewpoint_id,
        viewpoint_description="v",
        label=label,
        split=Split.TEST,
    )


def _prediction(instance, label):
    return Prediction(
        instance_id=instance.instance_id,
        predicted_label=label,
        model_id="m",
        context_config=ContextConfig.KG,
        learning_mode=LearningMode.ZERO_SHOT,
    )


# --------------------------------------------------------------------------
# confusion
# --------------------------------------------------------------------------


def test_confusion_all_correct():
    gold = [_instance(i, i % 2 == 0) for i in range(10)]
    preds = [_prediction(g, g.label) for g in gold]
    overall, _ = confusion(preds, gold)
    assert overall.fp == overall.fn == 0
    assert overall.tp == 5 and overall.tn == 5


def test_confusion_fixture_counts():
    # tp=3, fp=1, fn=1, tn=5
    gold = [_instance(i, i < 4) for i in range(10)]
    predicted = [True, True, True, False, True, False, False, False, False, False]
    preds = [_prediction(g, p) for g, p in zip(gold, predicted)]
    overall, per_vp = confusion(preds, gold)
    assert (overall.tp, overall.fp, overall.fn, overall.tn) == (3, 1, 1, 5)
    assert overall.total == 10
    assert per_vp[1].total == 10


def test_confusion_missing_prediction():
    gold = [_instance(i, True) for i in range(3)]
    preds = [_prediction(gold[0], True)]
    with pytest.raises(MissingPrediction) as exc:
        confusion(preds, gold)
    assert set(exc.value.ids) == {"inst0001", "inst0002"}


def test_confusion_duplicate_prediction():
    gold = [_instance(0, True)]
    preds = [_prediction(gold[0], True), _prediction(gold[0], False)]
    with pytest.raises(DuplicatePrediction):
        confusion(preds, gold)


def test_confusion_unknown_prediction():
    gold = [_instance(0, True)]
    stray = _prediction(_instance(99, True), True)
    with pytest.raises(FormatError):
        confusion([_prediction(gold[0], True), stray], gold)


# --------------------------------------------------------------------------
# metric engine
# --------------------------------------------------------------------------


def bruteforce_scores(gold_labels, pred_labels, positive=True):
    """Independent metric oracle: literal counting and formula."""
    if not positive:
        gold_labels = [not g for g in gold_labels]
        pred_labels = [not p for p in pred_labels]
    tp = sum(1 for g, p in zip(gold_labels, pred_labels) if g and p)
    fp = sum(1 for g, p in zip(gold_labels, pred_labels) if not g and p)
    fn = sum(1 for g, p in zip(gold_labels, pred_labels) if g and not p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def test_metrics_positive_class_formula():
    conf = Confusion(tp=3, fp=1, fn=1, tn=5)
    s = scores(conf, AveragingMode.POSITIVE_CLASS)
    assert s.precision == s.recall == s.f1 == 0.75


def test_metrics_perfect_predictions():
    conf = Confusion(tp=5, fp=0, fn=0, tn=5)
    for mode in AveragingMode:
        s = scores(conf, mode)
        assert s.precision == s.recall == s.f1 == 1.0


def test_metrics_rare_positive_all_negative_macro_plateau():
    # 10 instances, 1 positive, everything predicted negative
    conf = Confusion(tp=0, fp=0, fn=1, tn=9)
    macro = scores(conf, AveragingMode.MACRO_TWO_CLASS)
    assert macro.f1 == pytest.approx(0.47368421052631576, abs=1e-9)
    assert abs(macro.f1 - 0.474) < 0.001
    positive = scores(conf, AveragingMode.POSITIVE_CLASS)
    assert positive.f1 == 0.0
    assert positive.zero_division


def test_metric_engine_matches_bruteforce_on_random_sets():
    rng = random.Random(99)
    for trial in range(1000):
        n = rng.randint(1, 60)
        gold_labels = [rng.random() < 0.4 for _ in range(n)]
        pred_labels = [rng.random() < 0.5 for _ in range(n)]
        gold = [_instance(i, g) for i, g in enumerate(gold_labels)]
        preds = [_prediction(gd, p) for gd, p in zip(gold, pred_labels)]
        overall, _ = confusion(preds, gold)
        pos = scores(overall, AveragingMode.POSITIVE_CLASS)
        assert (pos.precision, pos.recall, pos.f1) == bruteforce_scores(
            gold_labels, pred_labels
        ), trial
        macro = scores(overall, AveragingMode.MACRO_TWO_CLASS)
        p1, r1, f1 = bruteforce_scores(gold_labels, pred_labels, positive=True)
        p0, r0, f0 = bruteforce_scores(gold_labels, pred_labels, positive=False)
        assert (macro.precision, macro.recall, macro.f1) == (
            (p1 + p0) / 2,
            (r1 + r0) / 2,
            (f1 + f0) / 2,
        ), trial


def test_metrics_report_invariants():
    gold = [_instance(i, i % 3 == 0, viewpoint_id=(i % 2) + 1) for i in range(12)]
    preds = [_prediction(g, i % 2 == 0) for i, g in enumerate(gold)]
    reports = score_run(preds, gold, model_id="m")
    pos = reports[AveragingMode.POSITIVE_CLASS.value]
    # f1 is the harmonic mean of reported P/R under positive-class mode
    p, r = pos.overall.precision, pos.overall.recall
    expected = 2 * p * r / (p + r) if p + r else 0.0
    assert pos.overall.f1 == pytest.approx(expected)
    assert pos.confusion.total == 12
    assert sum(c.total for _, c in pos.per_viewpoint_confusion) == 12


# --------------------------------------------------------------------------
# per-viewpoint report
# --------------------------------------------------------------------------


def test_per_viewpoint_homogeneous_equals_overall():
    gold = [_instance(i, i % 2 == 0, viewpoint_id=1) for i in range(8)]
    preds = [_prediction(g, g.label) for g in gold]
    rows = per_viewpoint_report(preds, gold)
    assert len(rows) == 1
    assert rows[0].positive_class.f1 == 1.0
    assert rows[0].support_positive == 4
    assert rows[0].support_negative == 4


def test_per_viewpoint_rare_positive_support_exposed():
    gold = [_instance(i, i == 0, viewpoint_id=6) for i in range(20)]
    preds = [_prediction(g, False) for g in gold]
    rows = per_viewpoint_report(preds, gold)
    assert rows[0].support_positive == 1
    assert rows[0].support_negative == 19
    assert abs(rows[0].macro_two_class.f1 - 0.5) < 0.02
    assert rows[0].positive_class.f1 == 0.0


def test_compare_runs_deltas():
    gold = [_instance(i, i % 2 == 0) for i in range(8)]
    perfect = per_viewpoint_report([_prediction(g, g.label) for g in gold], gold)
    inverted = per_viewpoint_report([_prediction(g, not g.label) for g in gold], gold)
    deltas = compare_runs(perfect, inverted)
    assert deltas[0]["delta_f1_positive_class"] == 1.0


# --------------------------------------------------------------------------
# report files
# --------------------------------------------------------------------------


def test_percent_two_decimals():
    assert percent(0.9174) == "91.74"
    assert percent(1.0) == "100.00"
    assert percent(0.47368421) == "47.37"


def test_write_report_files(tmp_path):
    gold = [_instance(i, i % 2 == 0) for i in range(6)]
    preds = [_prediction(g, g.label) for g in gold]
    reports = score_run(preds, gold, model_id="m")
    rows = per_viewpoint_report(preds, gold)
    out = write_report_files(reports, rows, tmp_path, "cell")
    assert out["json"].exists() and out["text"].exists() and out["csv"].exists()
    text = out["text"].read_text()
    assert "100.00" in text
    with open(out["csv"]) as fh:
        reader = csv.DictReader(fh)
        first = next(reader)
    assert first["f1_macro_two_class"] == "100.00"


# --------------------------------------------------------------------------
# analytics
# --------------------------------------------------------------------------


def _claim(claim_id, source="Example Times", date="2023-06-14"):
    return Claim(
        claim_id=claim_id,
        utterance="u",
        actor_name="Actor A",
        article_id="a1",
        source=source,
        date=date,
        topic="immigration",
    )


def test_analytics_single_labour_claim():
    inst = _instance(0, True, viewpoint_id=2)
    profiles = {"Actor A": ActorProfile(qid="Q1", name="Actor A", parties=("Labour Party",))}
    rows = analytics([inst], "party", profiles=profiles)
    assert len(rows) == 1
    assert rows[0].dimension_value == "Labour Party"
    assert rows[0].viewpoint_id == 2
    assert rows[0].share == 1.0


def test_analytics_two_party_shares_match_hand_tally():
    labour = ActorProfile(qid="Q1", name="A", parties=("Labour Party",))
    tory = ActorProfile(qid="Q2", name="B", parties=("Conservative Party",))
    profiles = {"Actor A": labour, "Actor B": tory}
    instances = [
        _instance(i, True, viewpoint_id=1 if i < 4 else 2, actor="Actor A")
        for i in range(6)
    ] + [_instance(10 + i, True, viewpoint_id=2, actor="Actor B") for i in range(4)]
    rows = analytics(instances, "party", profiles=profiles)
    table = {(r.dimension_value, r.viewpoint_id): (r.count, r.share) for r in rows}
    assert table[("Labour Party", 1)] == (4, 4 / 6)
    assert table[("Labour Party", 2)] == (2, 2 / 6)
    assert table[("Conservative Party", 2)] == (4, 1.0)


def test_analytics_unknown_party_bucket():
    rows = analytics([_instance(0, True)], "party", profiles={})
    assert rows[0].dimension_value == UNKNOWN


def test_analytics_source_and_month_dimensions():
    instances = [_instance(i, True, claim_id=f"c{i}") for i in range(4)]
    claims = {
        "c0": _claim("c0", source="Example Times", date="2023-06-14"),
        "c1": _claim("c1", source="Example Times", date="2023-06-30"),
        "c2": _claim("c2", source="Example Mail", date="2023-07-02"),
        "c3": _claim("c3", source="Example Mail", date="2023-07-21"),
    }
    by_source = analytics(instances, "source", claims=claims)
    assert {r.dimension_value for r in by_source} == {"Example Times", "Example Mail"}
    by_month = analytics(instances, "month", claims=claims)
    assert {r.dimension_value for r in by_month} == {"2023-06", "2023-07"}


def test_analytics_actor_dimension():
    instances = [_instance(0, True, actor="Jo"), _instance(1, True, actor="Sam")]
    rows = analytics(instances, "actor")
    assert {r.dimension_value for r in rows} == {"Jo", "Sam"}


def test_analytics_rejects_unknown_dimension():
    with pytest.raises(ValueError):
        analytics([_instance(0, True)], "constellation")


@given(
    st.lists(
        st.tuples(st.integers(0, 3), st.integers(1, 9)),
        min_size=1,
        max_size=40,
    )
)
def test_analytics_shares_sum_to_one(items):
    instances = [
        _instance(i, True, viewpoint_id=vid, actor=f"Actor {a}")
        for i, (a, vid) in enumerate(items)
    ]
    rows = analytics(instances, "actor")
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for row in rows:
        sums[row.dimension_value] = sums.get(row.dimension_value, 0.0) + row.share
        counts[row.dimension_value] = counts.get(row.dimension_value, 0) + row.count
    for total in sums.values():
        assert abs(total - 1.0) <= 1e-9
    assert sum(counts.values()) == len(instances)


def test_write_analytics_csv(tmp_path):
    rows = analytics([_instance(0, True)], "actor")
    path = tmp_path / "actor.csv"
    write_analytics_csv(rows, "actor", path)
    with open(path) as fh:
        reader = csv.DictReader(fh)
        row = next(reader)
    assert row["actor"] == "Actor A"
    assert row["share"] == "1.000000"
