#!/usr/bin/env python3
"""
CAD core tests: quantization, primitive types, validity, tokens, serialization, generator
"""

import json
import math

import numpy as np
import pytest

from cad_core import (
    CadParseError, CadSequence, CommandType, Extrusion, FailureCode, Loop, MalformedPrimitiveError,
    PrimitiveDelta, PrimitiveType, QuantizationSpec, SketchStep, TokenOverflowError, TokenType,
    circumcircle, circle_center_radius, dequantize, dequantize_loop, dequantize_sequence, deserialize,
    drop_extrusions, generate_random_sequence, import_command_sequence, infer_primitive_type,
    load_sequence, make_circle, make_line, open_loop, quantize, quantize_loop, quantize_sequence,
    save_sequence, sequence_length, serialize, snap_to_grid, to_legacy_commands, tokenize,
    truncate_loop_to_single_line, validate,
)
from conftest import polygon_loop, single_step, square_loop, unit_extrusion

L, E, EOS = TokenType.LOOP, TokenType.EXTRUSION, TokenType.EOS


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

def test_quantize_bounds_and_half_away_rounding():
    assert quantize(0.0) == 0
    assert quantize(1.0) == 255
    assert quantize(0.5) == 128
    assert quantize(-0.2) == 0
    assert quantize(1.7) == 255


def test_quantize_known_coordinate():
    assert quantize(0.3) == 77
    assert dequantize(77) == pytest.approx(77 / 255, abs=1e-15)
    assert quantize(77 / 255) == 77


def test_grid_is_fixed_point():
    spec = QuantizationSpec()
    for i in range(spec.bins):
        assert quantize(dequantize(i, spec), spec) == i


def test_round_trip_error_bound():
    values = np.random.default_rng(0).random(1_000_000)
    err = np.abs(dequantize(quantize(values)) - values)
    assert err.max() <= 1 / 510 + 1e-12


def test_sentinel_round_trip_for_line_mid():
    loop = polygon_loop([(0.1, 0.1), (0.9, 0.1), (0.5, 0.9)])
    classes = quantize_loop(loop)
    assert classes.shape == (3, 6)
    assert np.all(classes[:, 2:4] == 256)
    back = dequantize_loop(classes)
    assert all(p.mid is None for p in back.primitives)


def test_sequence_quantized_view_round_trip(triangle_sequence):
    snapped = snap_to_grid(triangle_sequence)
    view = quantize_sequence(snapped)
    again = dequantize_sequence(view)
    assert serialize(again) == serialize(snapped)
    for a, b in zip(snapped.loops[0].primitives, triangle_sequence.loops[0].primitives):
        assert max(abs(x - y) for x, y in zip(a.start + a.end, b.start + b.end)) <= 1 / 510 + 1e-12


# ---------------------------------------------------------------------------
# Primitive types
# ---------------------------------------------------------------------------

def test_infer_line_circle_arc():
    assert infer_primitive_type(PrimitiveDelta((0, 0), None, (1, 0))) is PrimitiveType.LINE
    circle = PrimitiveDelta((0.75, 0.5), (0.25, 0.5), (0.75, 0.5))
    assert infer_primitive_type(circle) is PrimitiveType.CIRCLE
    center, radius = circle_center_radius(circle)
    assert center == pytest.approx((0.5, 0.5))
    assert radius == pytest.approx(0.25)
    arc = PrimitiveDelta((0, 0), (0.5, 0.5), (1, 0))
    assert infer_primitive_type(arc) is PrimitiveType.ARC
    center, radius = circumcircle(arc.start, arc.mid, arc.end)
    assert center == pytest.approx((0.5, 0.0))
    assert radius == pytest.approx(0.5)


def test_collinear_arc_is_a_line():
    assert infer_primitive_type(PrimitiveDelta((0, 0), (0.5, 0.0), (1, 0))) is PrimitiveType.LINE


def test_zero_length_line_is_malformed():
    with pytest.raises(MalformedPrimitiveError):
        infer_primitive_type(PrimitiveDelta((0.3, 0.3), None, (0.3, 0.3)))


def test_type_stable_under_quantization_for_generator_output():
    spec = QuantizationSpec()
    for seed in range(200):
        seq = generate_random_sequence(seed)
        for loop in seq.loops:
            for prim in loop.primitives:
                snapped = dequantize_loop(quantize_loop(Loop((prim,)), spec), spec).primitives[0]
                assert infer_primitive_type(snapped) is infer_primitive_type(prim)


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------

def test_tokenize_layouts():
    two_loops = single_step(square_loop(0.1, 0.9), square_loop(0.3, 0.6))
    assert tokenize(two_loops)[:4] == [L, L, E, EOS]
    assert len(tokenize(two_loops)) == 24

    two_steps = CadSequence((SketchStep((square_loop(),), unit_extrusion()),
                             SketchStep((square_loop(0.2, 0.4),), unit_extrusion())))
    assert tokenize(two_steps)[:5] == [L, E, L, E, EOS]
    assert tokenize(CadSequence()) == [EOS] * 24


def test_tokenize_counts_and_first_eos():
    seq = generate_random_sequence(3)
    tokens = tokenize(seq)
    assert tokens.count(L) == seq.n_loops
    assert tokens.count(E) == seq.n_extrusions
    assert tokens.index(EOS) == seq.n_loops + seq.n_extrusions


def test_tokenize_overflow():
    loops = [square_loop(0.1, 0.2)] * 23
    with pytest.raises(TokenOverflowError):
        tokenize(single_step(*loops))


# ---------------------------------------------------------------------------
# Validity
# ---------------------------------------------------------------------------

def test_valid_circle_sequence(cylinder_sequence):
    report = validate(cylinder_sequence)
    assert report.valid
    assert report.failure_codes == ()


def test_failure_codes():
    loops_only = CadSequence((SketchStep((square_loop(),), None),))
    assert validate(loops_only).failure_codes == (FailureCode.NO_EXTRUSION_TOKEN,)

    single_line = single_step(Loop((make_line((0.1, 0.1), (0.9, 0.1)),)))
    assert FailureCode.SINGLE_LINE_LOOP in validate(single_line).failure_codes

    gap = polygon_loop([(0.1, 0.1), (0.9, 0.1), (0.5, 0.9)])
    broken = Loop(gap.primitives[:2] + (make_line((0.5, 0.9), (0.1, 0.15)),))
    assert FailureCode.OPEN_LOOP in validate(single_step(broken)).failure_codes

    flat = single_step(square_loop(), extrusion=unit_extrusion(e1=0.0))
    assert validate(flat).failure_codes == (FailureCode.ZERO_VOLUME,)

    crowded = single_step(*([square_loop(0.1, 0.2)] * 23))
    assert FailureCode.TOKEN_OVERFLOW in validate(crowded).failure_codes

    mixed = single_step(Loop((make_circle((0.5, 0.5), 0.2), make_line((0.1, 0.1), (0.2, 0.2)))))
    assert FailureCode.MALFORMED_PRIMITIVE in validate(mixed).failure_codes


def test_extrusion_without_loops_is_malformed():
    seq = CadSequence((SketchStep((), unit_extrusion()),))
    assert FailureCode.MALFORMED_PRIMITIVE in validate(seq).failure_codes


def test_empty_sequence_has_no_extrusion():
    assert validate(CadSequence()).failure_codes == (FailureCode.NO_EXTRUSION_TOKEN,)


def test_mutation_oracles_have_no_false_negatives():
    for seed in range(500):
        seq = generate_random_sequence(seed)
        assert FailureCode.NO_EXTRUSION_TOKEN in validate(drop_extrusions(seq)).failure_codes
        assert FailureCode.SINGLE_LINE_LOOP in validate(truncate_loop_to_single_line(seq)).failure_codes
        assert FailureCode.OPEN_LOOP in validate(open_loop(seq)).failure_codes


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_serialize_round_trip_is_byte_stable():
    for seed in range(50):
        text = serialize(generate_random_sequence(seed))
        assert serialize(deserialize(text)) == text


def test_serialize_preserves_quantized_view():
    seq = generate_random_sequence(11)
    back = deserialize(serialize(seq))
    for a, b in zip(seq.loops, back.loops):
        assert np.array_equal(quantize_loop(a), quantize_loop(b))
    for a, b in zip(seq.extrusions, back.extrusions):
        assert np.array_equal(a.quantized(), b.quantized())


def test_canonical_text_is_sorted_and_null_encodes_sentinel(triangle_sequence):
    obj = json.loads(serialize(triangle_sequence))
    assert list(obj) == ["quantization", "steps"]
    assert obj["steps"][0]["loops"][0]["primitives"][0]["mid"] is None


def test_missing_key_names_the_field(triangle_sequence):
    obj = json.loads(serialize(triangle_sequence))
    del obj["steps"][0]["extrusion"]
    with pytest.raises(CadParseError) as info:
        deserialize(json.dumps(obj))
    assert "extrusion" in str(info.value)
    assert info.value.field == "steps.0"


def test_bad_enum_and_bad_json():
    obj = json.loads(serialize(generate_random_sequence(1)))
    obj["steps"][0]["extrusion"]["boolean_op"] = "fuse"
    with pytest.raises(CadParseError) as info:
        deserialize(json.dumps(obj))
    assert info.value.field.startswith("steps.0.extrusion")

    with pytest.raises(CadParseError) as info:
        deserialize('{\n  "steps": [\n  oops\n]}')
    assert info.value.line == 3


def test_save_and_load(tmp_path, cylinder_sequence):
    path = save_sequence(cylinder_sequence, tmp_path / "nested" / "model.json")
    assert serialize(load_sequence(path)) == serialize(cylinder_sequence)


# ---------------------------------------------------------------------------
# Legacy command list
# ---------------------------------------------------------------------------

def _row(kind, **slots):
    args = [-1] * 16
    for index, value in slots.items():
        args[int(index[1:])] = value
    return [kind] + args


def _ext_row():
    row = [5] + [-1] * 16
    row[6:17] = [128, 128, 128, 128, 128, 128, 128, 128, 0, 0, 0]
    return row


def test_import_command_sequence_square():
    rows = [
        _row(4),
        _row(0, a0=255, a1=0), _row(0, a0=255, a1=255), _row(0, a0=0, a1=255), _row(0, a0=0, a1=0),
        _ext_row(),
        _row(3),
    ]
    seq = import_command_sequence({"commands": rows})
    assert seq.n_loops == 1 and seq.n_extrusions == 1
    assert validate(seq).valid
    prims = seq.loops[0].primitives
    assert prims[0].start == pytest.approx((0.0, 0.0))
    assert prims[0].end == pytest.approx((1.0, 0.0))


def test_import_circle_and_arc():
    rows = [
        _row(4), _row(2, a0=128, a1=128, a4=64),
        _ext_row(),
        _row(4),
        _row(1, a0=200, a1=100, a2=64, a3=1), _row(0, a0=100, a1=100),
        _ext_row(),
        _row(3),
    ]
    seq = import_command_sequence(rows)
    circle = seq.loops[0].primitives[0]
    assert infer_primitive_type(circle) is PrimitiveType.CIRCLE
    assert circle_center_radius(circle)[1] == pytest.approx(64 / 255)
    arc = seq.loops[1].primitives[0]
    assert infer_primitive_type(arc) is PrimitiveType.ARC
    assert validate(seq).valid


def test_import_rejects_bad_rows():
    with pytest.raises(CadParseError):
        import_command_sequence([[0, 1, 2]])
    with pytest.raises(CadParseError):
        import_command_sequence([_row(0, a0=1, a1=1)])
    with pytest.raises(CadParseError):
        import_command_sequence([_row(9)])


def test_legacy_commands_and_length(triangle_sequence, cylinder_sequence):
    kinds = [c.kind for c in to_legacy_commands(triangle_sequence)]
    assert kinds == [CommandType.LINE] * 3 + [CommandType.EXT]
    assert len(to_legacy_commands(triangle_sequence)[-1].params) == 11
    assert sequence_length(triangle_sequence) == 6
    circle = to_legacy_commands(cylinder_sequence)[0]
    assert circle.kind is CommandType.CIRCLE
    assert circle.params == (quantize(0.5), quantize(0.5), quantize(0.25))


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def test_generator_is_deterministic():
    assert serialize(generate_random_sequence(7)) == serialize(generate_random_sequence(7))
    assert serialize(generate_random_sequence(7)) != serialize(generate_random_sequence(8))


def test_generator_output_is_valid():
    for seed in range(1000):
        seq = generate_random_sequence(seed)
        assert validate(seq).valid, seed
        assert 1 <= len(seq.steps) <= 2
        for step in seq.steps:
            assert 1 <= len(step.loops) <= 2
            for loop in step.loops:
                assert len(loop.primitives) == 1 or 3 <= len(loop.primitives) <= 6


def test_generator_output_sits_on_the_grid():
    seq = generate_random_sequence(5)
    assert serialize(snap_to_grid(seq)) == serialize(seq)
    for ext in seq.extrusions:
        assert isinstance(ext, Extrusion)
        assert all(0.0 <= v <= 1.0 for v in ext.continuous_vector())
    assert math.isclose(dequantize(quantize(0.25)), 64 / 255)
