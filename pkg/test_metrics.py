#!/usr/bin/env python3
"""
Metrics tests: legacy accuracies, CSSS/APCS hand evaluations, over-prediction contrast, report aggregation
"""

import itertools
import math

import numpy as np
import pandas as pd
import pytest

from cad_core import (
    BooleanOp, CadSequence, CommandType, LegacyCommand, Loop, PrimitiveDelta, SketchStep, TokenType,
    generate_random_sequence, make_arc, make_line, tokenize,
)
from conftest import polygon_loop, regular_polygon_loop, single_step, unit_extrusion
from metrics import (
    EmptyEvaluationError, MetricsError, ScoringConfig, acc_cmd, acc_param, acc_param_detail,
    aggregate_report, apcs, apcs_from_score, component_apcs, csss, equal_count_bins, f1_types,
    report_from_csv, score_prediction,
)

TRIANGLE = [(0.2, 0.2), (0.8, 0.2), (0.5, 0.8)]


def _extend(seq, *steps):
    return CadSequence(seq.steps + tuple(steps), seq.quantization)


def _octagon_step(k):
    return SketchStep((regular_polygon_loop((0.5, 0.5), 0.3, 8, 0.1 * k),
                       regular_polygon_loop((0.5, 0.5), 0.1, 8, 0.1 * k)),
                      unit_extrusion(op=BooleanOp.JOIN))


# ---------------------------------------------------------------------------
# Legacy accuracies
# ---------------------------------------------------------------------------

def test_acc_cmd_flipped_first_command(triangle_sequence):
    gt = triangle_sequence
    arc_first = Loop((make_arc((0.5, 0.0), 0.36, 2.5, -1.8),) + gt.loops[0].primitives[1:])
    pred = single_step(arc_first)
    assert acc_cmd(gt, gt) == 1.0
    assert acc_cmd(pred, gt) == pytest.approx(0.75)


def test_acc_param_one_of_ten_off():
    gt = [LegacyCommand(CommandType.LINE, (10 * i, 10 * i + 5)) for i in range(5)]
    pred = list(gt)
    pred[2] = LegacyCommand(CommandType.LINE, (20 + 10, 25))
    assert acc_param(pred, gt) == pytest.approx(0.9)


def test_acc_param_tolerance_saturates():
    gt = [LegacyCommand(CommandType.LINE, (0, 0)), LegacyCommand(CommandType.LINE, (255, 255))]
    pred = [LegacyCommand(CommandType.LINE, (255, 255)), LegacyCommand(CommandType.LINE, (0, 0))]
    assert acc_param(pred, gt) == 0.0
    assert acc_param(pred, gt, ScoringConfig(eta=256)) == 1.0


def test_acc_param_vacuous_when_no_type_matches():
    gt = [LegacyCommand(CommandType.LINE, (1, 2))]
    pred = [LegacyCommand(CommandType.CIRCLE, (1, 2, 3))]
    assert acc_param_detail(pred, gt) == (1.0, True)


# ---------------------------------------------------------------------------
# CSSS and APCS
# ---------------------------------------------------------------------------

def test_identity_scores_one():
    for seed in range(200):
        seq = generate_random_sequence(seed)
        assert csss(seq, seq).total == pytest.approx(1.0, abs=1e-12)
        assert apcs(seq, seq) == 1.0


def test_extra_single_line_loop(cylinder_sequence):
    gt = cylinder_sequence
    step = gt.steps[0]
    pred = CadSequence((SketchStep(step.loops + (Loop((make_line((0.1, 0.1), (0.9, 0.1)),)),),
                                   step.extrusion),))
    result = csss(pred, gt)
    assert (result.n_rho, result.n_delta, result.n_e) == (2, 2, 1)
    assert result.loop_term == pytest.approx(0.25)
    assert result.ext_term == pytest.approx(0.5)
    assert result.total == pytest.approx(0.75)


def test_extrusion_offset_by_ln2(cylinder_sequence):
    shift = math.log(2) / math.sqrt(3)
    moved = unit_extrusion(origin=(0.5 + shift, 0.5 + shift, 0.5 + shift))
    pred = single_step(*cylinder_sequence.loops, extrusion=moved)
    assert csss(pred, cylinder_sequence).total == pytest.approx(0.75)


def test_closed_form_endpoint_shift(triangle_sequence):
    d = 0.07
    prims = list(triangle_sequence.loops[0].primitives)
    first = prims[0]
    prims[0] = PrimitiveDelta((first.start[0] + d, first.start[1]), None, first.end)
    result = csss(single_step(Loop(tuple(prims))), triangle_sequence)
    assert result.loop_term == pytest.approx((math.exp(-d) + 2) / 6)
    assert result.per_component["Line"] == pytest.approx((math.exp(-d) + 2) / 3)


def test_type_mismatch_scores_zero(triangle_sequence):
    prims = list(triangle_sequence.loops[0].primitives)
    a, b = prims[0].start, prims[0].end
    prims[0] = PrimitiveDelta(a, ((a[0] + b[0]) / 2, a[1] - 0.1), b)
    result = csss(single_step(Loop(tuple(prims))), triangle_sequence)
    assert result.loop_term == pytest.approx(2 / 6)


def test_per_component_absent_types_are_none(triangle_sequence):
    result = csss(triangle_sequence, triangle_sequence)
    assert result.per_component["Line"] == pytest.approx(1.0)
    assert result.per_component["Arc"] is None
    assert result.per_component["Circle"] is None
    assert component_apcs(result)["Origin"] == 1.0


def test_empty_sides_contribute_half():
    empty = CadSequence()
    assert csss(empty, empty).total == pytest.approx(1.0)


def test_categorical_gate(cylinder_sequence):
    pred = single_step(*cylinder_sequence.loops, extrusion=unit_extrusion(op=BooleanOp.JOIN))
    plain = csss(pred, cylinder_sequence)
    gated = csss(pred, cylinder_sequence, ScoringConfig(categorical_gate=True))
    assert plain.ext_term == pytest.approx(0.5 * math.exp(-1 / 3))
    assert gated.ext_term == 0.0


def test_csss_is_symmetric_and_bounded():
    seqs = [generate_random_sequence(seed) for seed in range(20)]
    for a, b in itertools.combinations(seqs, 2):
        ab, ba = csss(a, b).total, csss(b, a).total
        assert ab == pytest.approx(ba, abs=1e-12)
        assert 0.0 <= ab <= 1.0


def test_apcs_is_monotone_and_order_free():
    thresholds = ScoringConfig().thresholds
    shuffled = list(np.random.default_rng(0).permutation(thresholds))
    previous = 0.0
    for score in np.linspace(0.0, 1.0, 101):
        value = apcs_from_score(score, thresholds)
        assert value >= previous
        assert apcs_from_score(score, shuffled) == value
        previous = value
    assert apcs_from_score(1.0, thresholds) == 1.0


def test_apcs_threshold_counting():
    thresholds = ScoringConfig().thresholds
    assert len(thresholds) == 19
    assert apcs_from_score(0.52, thresholds) == pytest.approx(10 / 19)
    assert apcs_from_score(0.5, thresholds) == pytest.approx(10 / 19)
    assert apcs_from_score(0.01, thresholds) == 0.0


def test_scoring_config_validation():
    with pytest.raises(MetricsError):
        ScoringConfig(thresholds=(0.5, 0.2))
    with pytest.raises(MetricsError):
        ScoringConfig(k=0.0)
    cfg = ScoringConfig.from_settings({"k": 2, "eta": 1, "thresholds": [0.25, 0.75]})
    assert cfg.thresholds == (0.25, 0.75) and cfg.k == 2.0


# ---------------------------------------------------------------------------
# Over-prediction: accuracy stays perfect while CSSS collapses
# ---------------------------------------------------------------------------

def test_two_extra_steps(triangle_sequence):
    extra = SketchStep((polygon_loop(TRIANGLE),), unit_extrusion(op=BooleanOp.JOIN))
    pred = _extend(triangle_sequence, extra, extra)
    assert acc_cmd(pred, triangle_sequence) == 1.0
    assert acc_param(pred, triangle_sequence) == 1.0
    assert csss(pred, triangle_sequence).total == pytest.approx(1 / 3)
    assert apcs(pred, triangle_sequence) == pytest.approx(6 / 19)


def test_massive_over_prediction(triangle_sequence):
    pred = _extend(triangle_sequence, *[_octagon_step(k) for k in range(6)])
    assert len(tokenize(pred)) == 24
    assert tokenize(pred).index(TokenType.EOS) == 20
    result = csss(pred, triangle_sequence)
    assert result.n_delta == 99
    assert result.loop_term == pytest.approx(3 / 198)
    assert result.ext_term == pytest.approx(1 / 14)
    assert result.total == pytest.approx(3 / 198 + 1 / 14)
    assert acc_cmd(pred, triangle_sequence) == 1.0
    assert apcs(pred, triangle_sequence) == pytest.approx(1 / 19)


def test_appending_anything_lowers_csss():
    for seed in range(30):
        seq = generate_random_sequence(seed)
        bigger = _extend(seq, seq.steps[-1])
        assert csss(bigger, seq).total < csss(seq, seq).total
        assert acc_cmd(bigger, seq) == 1.0


# ---------------------------------------------------------------------------
# Token F1 and per-model rows
# ---------------------------------------------------------------------------

def test_f1_types():
    L, E, EOS = TokenType.LOOP, TokenType.EXTRUSION, TokenType.EOS
    gt = [L, E] + [EOS] * 22
    assert f1_types(gt, gt) == 1.0
    eos_f1 = 2 * (22 / 24) / (22 / 24 + 1)
    assert f1_types([EOS] * 24, gt) == pytest.approx(eos_f1 / 3)
    extra_loop = [L, E, L] + [EOS] * 21
    assert f1_types(extra_loop, gt) == pytest.approx((2 / 3 + 1.0 + 42 / 43) / 3)
    with pytest.raises(MetricsError):
        f1_types([EOS], gt)


def test_score_prediction_rows(cube_sequence):
    row = score_prediction("m0", cube_sequence, cube_sequence, cd_x1000=0.2, complexity=1.5)
    assert row["apcs"] == 1.0 and row["valid"] and row["f1"] == 1.0
    assert row["cd_x1000"] == 0.2
    assert row["apcs_line"] == 1.0 and row["apcs_arc"] is None

    missing = score_prediction("m1", None, cube_sequence)
    assert missing["apcs"] == 0.0 and missing["valid"] is False

    loops_only = CadSequence((SketchStep(cube_sequence.steps[0].loops, None),))
    invalid = score_prediction("m2", loops_only, cube_sequence, cd_x1000=5.0)
    assert invalid["valid"] is False and invalid["cd_x1000"] is None


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _rows(n=10, invalid=(9,)):
    rows = []
    for i in range(n):
        ok = i not in invalid
        rows.append({"id": f"model_{i:05d}", "apcs": 0.5, "csss": 0.5, "valid": ok,
                     "cd_x1000": float(i + 1) if ok else 1000.0, "acc_cmd": 1.0, "acc_param": 1.0,
                     "f1": 1.0, "complexity": float(i), "length": 6 + i, "acc_param_vacuous": False})
    return rows


def test_all_valid_identical_scores():
    report = aggregate_report(_rows(invalid=()))
    assert report.summary["mean_apcs"] == pytest.approx(0.5)
    assert report.summary["ir"] == 0.0


def test_invalid_ratio_and_median():
    report = aggregate_report(_rows())
    assert report.summary["ir"] == pytest.approx(0.1)
    assert report.summary["n_invalid"] == 1
    assert report.summary["median_cd_x1000"] == pytest.approx(5.0)


def test_equal_count_binning():
    report = aggregate_report(_rows(), complexity_bins=2, length_bins=5)
    bins = report.summary["complexity_bins"]
    assert [b["n_models"] for b in bins] == [5, 5]
    assert bins[0]["max"] < bins[1]["min"]
    assert len(report.summary["length_bins"]) == 5
    ties = equal_count_bins(pd.Series([1.0] * 6), 3)
    assert sorted(ties.value_counts().tolist()) == [2, 2, 2]


def test_report_csv_round_trip(tmp_path):
    report = aggregate_report(_rows())
    csv_path, json_path = report.write(tmp_path, {"k": 1.0})
    assert json_path.exists()
    again = report_from_csv(csv_path)
    assert again.summary["ir"] == pytest.approx(0.1)
    assert again.summary["median_cd_x1000"] == pytest.approx(5.0)
    assert np.isclose(again.summary["mean_apcs"], report.summary["mean_apcs"])


def test_empty_report():
    with pytest.raises(EmptyEvaluationError):
        aggregate_report([])
