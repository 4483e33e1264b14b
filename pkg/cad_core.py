"""
CAD Sequence Toolkit - CAD Core
Sketch-extrude sequence data model, quantization, primitive type inference,
validity checking, serialization and synthetic sequence generation
"""

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from jsonschema import Draft202012Validator

from utils import logger

EPS_CLOSE = 1e-6
EPS_COL = 1e-6
L_MAX = 24
N_P_MAX = 8
SENTINEL_POINT = (-1.0, -1.0)

SCHEMA_PATH = Path(__file__).resolve().parent / "schemas" / "cad_sequence.schema.json"


class CadSequenceError(Exception):
    """Base class for sequence model errors"""


class CadParseError(CadSequenceError):
    """Malformed sequence document; carries the offending field path and line"""

    def __init__(self, message: str, field: str = "<root>", line: Optional[int] = None):
        self.field = field
        self.line = line
        where = f"{field}" + (f" (line {line})" if line is not None else "")
        super().__init__(f"{where}: {message}")


class TokenOverflowError(CadSequenceError):
    pass


class MalformedPrimitiveError(CadSequenceError):
    pass


class OpenLoopError(CadSequenceError):
    pass


class GeneratorExhaustedError(CadSequenceError):
    pass


class TokenType(Enum):
    LOOP = 0
    EXTRUSION = 1
    EOS = 2


class PrimitiveType(Enum):
    LINE = "line"
    ARC = "arc"
    CIRCLE = "circle"


class BooleanOp(Enum):
    NEW = "new"
    JOIN = "join"
    CUT = "cut"
    INTERSECT = "intersect"


class ExtentType(Enum):
    ONE_SIDED = "one_sided"
    SYMMETRIC = "symmetric"
    TWO_SIDED = "two_sided"


BOOLEAN_OPS = list(BooleanOp)
EXTENT_TYPES = list(ExtentType)


class FailureCode(Enum):
    NO_EXTRUSION_TOKEN = "NoExtrusionToken"
    SINGLE_LINE_LOOP = "SingleLineLoop"
    OPEN_LOOP = "OpenLoop"
    MALFORMED_PRIMITIVE = "MalformedPrimitive"
    ZERO_VOLUME = "ZeroVolume"
    TOKEN_OVERFLOW = "TokenOverflow"


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantizationSpec:
    """Uniform quantization of [0,1] into `bins` levels plus one sentinel class"""
    bins: int = 256

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")

    @property
    def sentinel_index(self) -> int:
        return self.bins

    @property
    def n_classes(self) -> int:
        return self.bins + 1

    @property
    def half_step(self) -> float:
        return 1.0 / (2 * (self.bins - 1))


DEFAULT_QUANTIZATION = QuantizationSpec()


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, spec: QuantizationSpec = DEFAULT_QUANTIZATION):
    """Map [0,1] to a bin index; out-of-range values are clamped. Works on scalars and arrays."""
    arr = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    idx = np.clip(_round_half_away(arr * (spec.bins - 1)), 0, spec.bins - 1).astype(np.int64)
    if idx.ndim == 0:
        return int(idx)
    return idx


def dequantize(i, spec: QuantizationSpec = DEFAULT_QUANTIZATION):
    arr = np.asarray(i, dtype=np.float64) / (spec.bins - 1)
    if arr.ndim == 0:
        return float(arr)
    return arr


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

Point2 = Tuple[float, float]


@dataclass(frozen=True)
class PrimitiveDelta:
    """start/mid/end encoding of a line, arc or circle; mid is None for lines"""
    start: Point2
    mid: Optional[Point2]
    end: Point2

    def as_vector(self) -> np.ndarray:
        """6-vector with the sentinel point in place of a missing mid"""
        mid = self.mid if self.mid is not None else SENTINEL_POINT
        return np.array([*self.start, *mid, *self.end], dtype=np.float64)


@dataclass(frozen=True)
class Loop:
    primitives: Tuple[PrimitiveDelta, ...]


@dataclass(frozen=True)
class Extrusion:
    orientation: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    origin: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    scale: float = 0.5
    distances: Tuple[float, float] = (0.5, 0.0)
    boolean_op: BooleanOp = BooleanOp.NEW
    extent_type: ExtentType = ExtentType.ONE_SIDED

    def continuous_vector(self) -> np.ndarray:
        """The 9 continuous slots: orientation, origin, scale, distances"""
        return np.array([*self.orientation, *self.origin, self.scale, *self.distances],
                        dtype=np.float64)

    def flat_vector(self) -> np.ndarray:
        """All 11 slots with categoricals embedded at evenly spaced values in [0,1]"""
        b = BOOLEAN_OPS.index(self.boolean_op) / (len(BOOLEAN_OPS) - 1)
        u = EXTENT_TYPES.index(self.extent_type) / (len(EXTENT_TYPES) - 1)
        return np.concatenate([self.continuous_vector(), [b, u]])

    def quantized(self, spec: QuantizationSpec = DEFAULT_QUANTIZATION) -> np.ndarray:
        """e* : 9 quantized continuous slots followed by the two category indices"""
        q = quantize(self.continuous_vector(), spec)
        return np.concatenate([q, [BOOLEAN_OPS.index(self.boolean_op),
                                   EXTENT_TYPES.index(self.extent_type)]]).astype(np.int64)


@dataclass(frozen=True)
class SketchStep:
    loops: Tuple[Loop, ...]
    extrusion: Optional[Extrusion]


@dataclass(frozen=True)
class CadSequence:
    """Ordered sketch-extrusion steps. A step without extrusion only appears in
    predicted (possibly invalid) sequences."""
    steps: Tuple[SketchStep, ...] = ()
    quantization: QuantizationSpec = DEFAULT_QUANTIZATION

    @property
    def loops(self) -> List[Loop]:
        return [loop for step in self.steps for loop in step.loops]

    @property
    def extrusions(self) -> List[Extrusion]:
        return [step.extrusion for step in self.steps if step.extrusion is not None]

    @property
    def n_loops(self) -> int:
        return sum(len(step.loops) for step in self.steps)

    @property
    def n_extrusions(self) -> int:
        return len(self.extrusions)


@dataclass(frozen=True)
class ValidityReport:
    failure_codes: Tuple[FailureCode, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.failure_codes


# ---------------------------------------------------------------------------
# Primitive geometry
# ---------------------------------------------------------------------------

def _dist(a: Point2, b: Point2) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def infer_primitive_type(d: PrimitiveDelta) -> PrimitiveType:
    """Deduce the primitive type from its point configuration"""
    closed = _dist(d.start, d.end) <= EPS_CLOSE
    if d.mid is None:
        if closed:
            raise MalformedPrimitiveError(f"zero-length line at {d.start}")
        return PrimitiveType.LINE
    if closed:
        return PrimitiveType.CIRCLE
    cross = ((d.mid[0] - d.start[0]) * (d.end[1] - d.start[1])
             - (d.mid[1] - d.start[1]) * (d.end[0] - d.start[0]))
    if abs(cross) <= EPS_COL:
        return PrimitiveType.LINE
    return PrimitiveType.ARC


def circumcircle(a: Point2, b: Point2, c: Point2) -> Tuple[Point2, float]:
    """Center and radius of the circle through three points"""
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) <= EPS_COL:
        raise MalformedPrimitiveError(f"collinear points {a}, {b}, {c} have no circumcircle")
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return (ux, uy), math.hypot(ax - ux, ay - uy)


def circle_center_radius(d: PrimitiveDelta) -> Tuple[Point2, float]:
    """Diametral encoding: start and mid are opposite points of the circle"""
    center = ((d.start[0] + d.mid[0]) / 2.0, (d.start[1] + d.mid[1]) / 2.0)
    return center, _dist(d.start, d.mid) / 2.0


def arc_geometry(d: PrimitiveDelta) -> Tuple[Point2, float, float, float]:
    """(center, radius, start angle, signed sweep) of an arc passing start -> mid -> end"""
    center, radius = circumcircle(d.start, d.mid, d.end)
    a0 = math.atan2(d.start[1] - center[1], d.start[0] - center[0])
    am = math.atan2(d.mid[1] - center[1], d.mid[0] - center[0])
    a1 = math.atan2(d.end[1] - center[1], d.end[0] - center[0])
    ccw_end = (a1 - a0) % (2 * math.pi)
    ccw_mid = (am - a0) % (2 * math.pi)
    if ccw_mid < ccw_end:
        sweep = ccw_end
    else:
        sweep = ccw_end - 2 * math.pi
    return center, radius, a0, sweep


def make_line(start: Point2, end: Point2) -> PrimitiveDelta:
    return PrimitiveDelta(tuple(start), None, tuple(end))


def make_circle(center: Point2, radius: float) -> PrimitiveDelta:
    start = (center[0] + radius, center[1])
    mid = (center[0] - radius, center[1])
    return PrimitiveDelta(start, mid, start)


def make_arc(center: Point2, radius: float, a0: float, sweep: float) -> PrimitiveDelta:
    def at(angle):
        return (center[0] + radius * math.cos(angle), center[1] + radius * math.sin(angle))
    return PrimitiveDelta(at(a0), at(a0 + sweep / 2.0), at(a0 + sweep))


# ---------------------------------------------------------------------------
# Tokens and validity
# ---------------------------------------------------------------------------

def token_expansion(seq: CadSequence) -> List[TokenType]:
    """Unpadded token list: loops, extrusion per step, then one EOS"""
    tokens: List[TokenType] = []
    for step in seq.steps:
        tokens.extend([TokenType.LOOP] * len(step.loops))
        if step.extrusion is not None:
            tokens.append(TokenType.EXTRUSION)
    tokens.append(TokenType.EOS)
    return tokens


def tokenize(seq: CadSequence, l_max: int = L_MAX) -> List[TokenType]:
    """Token types padded with EOS up to l_max"""
    tokens = token_expansion(seq)
    if len(tokens) > l_max:
        raise TokenOverflowError(f"sequence expands to {len(tokens)} tokens > L_max={l_max}")
    return tokens + [TokenType.EOS] * (l_max - len(tokens))


def _loop_failures(loop: Loop) -> List[FailureCode]:
    codes: List[FailureCode] = []
    prims = loop.primitives
    if not prims or len(prims) > N_P_MAX:
        return [FailureCode.MALFORMED_PRIMITIVE]
    types = []
    for prim in prims:
        try:
            types.append(infer_primitive_type(prim))
        except MalformedPrimitiveError:
            codes.append(FailureCode.MALFORMED_PRIMITIVE)
            types.append(None)
    if len(prims) == 1 and types[0] is PrimitiveType.LINE:
        codes.append(FailureCode.SINGLE_LINE_LOOP)
    if PrimitiveType.CIRCLE in types and len(prims) > 1:
        codes.append(FailureCode.MALFORMED_PRIMITIVE)
    for i, prim in enumerate(prims):
        nxt = prims[(i + 1) % len(prims)]
        if types[i] is PrimitiveType.CIRCLE:
            continue
        if _dist(prim.end, nxt.start) > EPS_CLOSE:
            codes.append(FailureCode.OPEN_LOOP)
            break
    return codes


def validate(seq: CadSequence, l_max: int = L_MAX) -> ValidityReport:
    """Apply every failure rule; failures are reported, never raised"""
    codes: List[FailureCode] = []
    if seq.n_extrusions == 0 or any(step.extrusion is None for step in seq.steps):
        codes.append(FailureCode.NO_EXTRUSION_TOKEN)
    # an extrusion with no sketch loops has nothing to sweep
    if any(not step.loops for step in seq.steps):
        codes.append(FailureCode.MALFORMED_PRIMITIVE)
    for loop in seq.loops:
        for code in _loop_failures(loop):
            if code not in codes:
                codes.append(code)
    for ext in seq.extrusions:
        e1, e2 = quantize(ext.distances[0], seq.quantization), quantize(ext.distances[1], seq.quantization)
        if e1 == 0 and e2 == 0:
            if FailureCode.ZERO_VOLUME not in codes:
                codes.append(FailureCode.ZERO_VOLUME)
    if len(token_expansion(seq)) > l_max:
        codes.append(FailureCode.TOKEN_OVERFLOW)
    return ValidityReport(tuple(codes))


# ---------------------------------------------------------------------------
# Quantized view
# ---------------------------------------------------------------------------

def quantize_loop(loop: Loop, spec: QuantizationSpec = DEFAULT_QUANTIZATION) -> np.ndarray:
    """rho* : (n_p, 6) class indices, sentinel for line mids"""
    rows = []
    for prim in loop.primitives:
        row = np.empty(6, dtype=np.int64)
        row[0:2] = quantize(prim.start, spec)
        if prim.mid is None:
            row[2:4] = spec.sentinel_index
        else:
            row[2:4] = quantize(prim.mid, spec)
        row[4:6] = quantize(prim.end, spec)
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(-1, 6)


def dequantize_loop(classes: np.ndarray, spec: QuantizationSpec = DEFAULT_QUANTIZATION) -> Loop:
    """Inverse of quantize_loop; rows whose start or end is sentinel are dropped as padding"""
    prims = []
    for row in np.asarray(classes, dtype=np.int64).reshape(-1, 6):
        if row[0] == spec.sentinel_index or row[1] == spec.sentinel_index \
                or row[4] == spec.sentinel_index or row[5] == spec.sentinel_index:
            continue
        start = tuple(float(v) for v in dequantize(row[0:2], spec))
        end = tuple(float(v) for v in dequantize(row[4:6], spec))
        if row[2] == spec.sentinel_index or row[3] == spec.sentinel_index:
            mid = None
        else:
            mid = tuple(float(v) for v in dequantize(row[2:4], spec))
        prims.append(PrimitiveDelta(start, mid, end))
    return Loop(tuple(prims))


def dequantize_extrusion(classes: Sequence[int], spec: QuantizationSpec = DEFAULT_QUANTIZATION) -> Extrusion:
    c = [int(v) for v in classes]
    cont = [dequantize(min(v, spec.bins - 1), spec) for v in c[:9]]
    op = BOOLEAN_OPS[min(c[9], len(BOOLEAN_OPS) - 1)]
    extent = EXTENT_TYPES[min(c[10], len(EXTENT_TYPES) - 1)]
    return Extrusion(tuple(cont[0:3]), tuple(cont[3:6]), cont[6], tuple(cont[7:9]), op, extent)


def quantize_sequence(seq: CadSequence) -> Dict[str, Any]:
    """Quantized view: per step, loop class arrays and extrusion class vector"""
    spec = seq.quantization
    return {
        "bins": spec.bins,
        "steps": [
            {
                "loops": [quantize_loop(loop, spec) for loop in step.loops],
                "extrusion": None if step.extrusion is None else step.extrusion.quantized(spec),
            }
            for step in seq.steps
        ],
    }


def dequantize_sequence(view: Dict[str, Any]) -> CadSequence:
    spec = QuantizationSpec(int(view["bins"]))
    steps = []
    for step in view["steps"]:
        loops = tuple(dequantize_loop(classes, spec) for classes in step["loops"])
        ext = None if step["extrusion"] is None else dequantize_extrusion(step["extrusion"], spec)
        steps.append(SketchStep(loops, ext))
    return CadSequence(tuple(steps), spec)


def snap_to_grid(seq: CadSequence) -> CadSequence:
    """Round trip through the quantized view"""
    return dequantize_sequence(quantize_sequence(seq))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> float:
    return float(f"{float(x):.9g}")


def _pt(p: Optional[Point2]):
    return None if p is None else [_fmt(p[0]), _fmt(p[1])]


def sequence_to_dict(seq: CadSequence) -> Dict[str, Any]:
    steps = []
    for step in seq.steps:
        entry: Dict[str, Any] = {
            "loops": [
                {"primitives": [{"start": _pt(p.start), "mid": _pt(p.mid), "end": _pt(p.end)}
                                for p in loop.primitives]}
                for loop in step.loops
            ],
            "extrusion": None,
        }
        if step.extrusion is not None:
            ext = step.extrusion
            entry["extrusion"] = {
                "orientation": [_fmt(v) for v in ext.orientation],
                "origin": [_fmt(v) for v in ext.origin],
                "scale": _fmt(ext.scale),
                "distances": [_fmt(v) for v in ext.distances],
                "boolean_op": ext.boolean_op.value,
                "extent": ext.extent_type.value,
            }
        steps.append(entry)
    return {"quantization": {"bins": seq.quantization.bins}, "steps": steps}


def serialize(seq: CadSequence) -> str:
    """Canonical JSON text (sorted keys, 9 significant digits, null for sentinel)"""
    return json.dumps(sequence_to_dict(seq), sort_keys=True, indent=2) + "\n"


_validator: Optional[Draft202012Validator] = None


def _schema_validator() -> Draft202012Validator:
    global _validator
    if _validator is None:
        with open(SCHEMA_PATH, 'r', encoding='utf-8') as f:
            _validator = Draft202012Validator(json.load(f))
    return _validator


def _field_path(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def sequence_from_dict(obj: Any) -> CadSequence:
    """Schema-checked decoding of a parsed sequence document"""
    errors = sorted(_schema_validator().iter_errors(obj), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        raise CadParseError(err.message, _field_path(err.absolute_path))

    spec = QuantizationSpec(int(obj["quantization"]["bins"]))
    steps = []
    for s_idx, step in enumerate(obj["steps"]):
        loops = []
        for l_idx, loop in enumerate(step["loops"]):
            prims = []
            for p_idx, prim in enumerate(loop["primitives"]):
                mid = prim["mid"]
                prims.append(PrimitiveDelta(tuple(prim["start"]),
                                            None if mid is None else tuple(mid),
                                            tuple(prim["end"])))
            loops.append(Loop(tuple(prims)))
        ext_obj = step["extrusion"]
        ext = None
        if ext_obj is not None:
            ext = Extrusion(
                orientation=tuple(ext_obj["orientation"]),
                origin=tuple(ext_obj["origin"]),
                scale=ext_obj["scale"],
                distances=tuple(ext_obj["distances"]),
                boolean_op=BooleanOp(ext_obj["boolean_op"]),
                extent_type=ExtentType(ext_obj["extent"]),
            )
        steps.append(SketchStep(tuple(loops), ext))
    return CadSequence(tuple(steps), spec)


def deserialize(text: str) -> CadSequence:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise CadParseError(e.msg, "<root>", e.lineno) from e
    return sequence_from_dict(obj)


def save_sequence(seq: CadSequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize(seq), encoding="utf-8")
    return path


def load_sequence(path) -> CadSequence:
    with open(path, 'r', encoding='utf-8') as f:
        return deserialize(f.read())


# ---------------------------------------------------------------------------
# Legacy command-list view and importer
# ---------------------------------------------------------------------------

class CommandType(Enum):
    LINE = 0
    ARC = 1
    CIRCLE = 2
    EOS = 3
    SOL = 4
    EXT = 5


@dataclass(frozen=True)
class LegacyCommand:
    kind: CommandType
    params: Tuple[int, ...]


N_COMMAND_ARGS = 16
_ARG_SLOTS = {
    CommandType.LINE: (0, 1),
    CommandType.ARC: (0, 1, 2, 3),
    CommandType.CIRCLE: (0, 1, 4),
    CommandType.EXT: tuple(range(5, 16)),
}


def to_legacy_commands(seq: CadSequence) -> List[LegacyCommand]:
    """Primitive and extrusion commands with quantized parameters (no SOL/EOS)"""
    spec = seq.quantization
    commands: List[LegacyCommand] = []
    for step in seq.steps:
        for loop in step.loops:
            for prim in loop.primitives:
                try:
                    kind = infer_primitive_type(prim)
                except MalformedPrimitiveError:
                    kind = PrimitiveType.LINE
                if kind is PrimitiveType.CIRCLE:
                    center, radius = circle_center_radius(prim)
                    commands.append(LegacyCommand(CommandType.CIRCLE, (
                        quantize(center[0], spec), quantize(center[1], spec), quantize(radius, spec))))
                elif kind is PrimitiveType.ARC:
                    _, _, _, sweep = arc_geometry(prim)
                    commands.append(LegacyCommand(CommandType.ARC, (
                        quantize(prim.end[0], spec), quantize(prim.end[1], spec),
                        quantize(abs(sweep) / (2 * math.pi), spec), int(sweep > 0))))
                else:
                    commands.append(LegacyCommand(CommandType.LINE, (
                        quantize(prim.end[0], spec), quantize(prim.end[1], spec))))
        if step.extrusion is not None:
            commands.append(LegacyCommand(CommandType.EXT,
                                          tuple(int(v) for v in step.extrusion.quantized(spec))))
    return commands


def sequence_length(seq: CadSequence) -> int:
    """Length in the command-list format: SOL markers, primitives, extrusions and EOS"""
    return seq.n_loops + sum(len(loop.primitives) for loop in seq.loops) + seq.n_extrusions + 1


def import_command_sequence(obj: Any, spec: QuantizationSpec = DEFAULT_QUANTIZATION) -> CadSequence:
    """Convert a command-list export (rows of command id + 16 quantized args) to a CadSequence"""
    rows = obj["commands"] if isinstance(obj, dict) else obj
    steps: List[SketchStep] = []
    loops: List[Loop] = []
    current: Optional[List[Tuple[CommandType, List[int]]]] = None

    def close_loop():
        if current:
            loops.append(_loop_from_commands(current, spec))

    for r_idx, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or len(row) != 1 + N_COMMAND_ARGS:
            raise CadParseError(f"expected {1 + N_COMMAND_ARGS} values", f"commands.{r_idx}")
        try:
            kind = CommandType(int(row[0]))
        except ValueError as e:
            raise CadParseError(f"unknown command id {row[0]}", f"commands.{r_idx}.0") from e
        args = [int(v) for v in row[1:]]
        if kind is CommandType.SOL:
            close_loop()
            current = []
        elif kind in (CommandType.LINE, CommandType.ARC, CommandType.CIRCLE):
            if current is None:
                raise CadParseError("primitive before loop start", f"commands.{r_idx}")
            current.append((kind, args))
        elif kind is CommandType.EXT:
            close_loop()
            current = None
            ext_args = args[5:16]
            steps.append(SketchStep(tuple(loops), dequantize_extrusion(ext_args, spec)))
            loops = []
        else:
            break
    if current:
        close_loop()
    if loops:
        steps.append(SketchStep(tuple(loops), None))
    return CadSequence(tuple(steps), spec)


def _loop_from_commands(cmds: List[Tuple[CommandType, List[int]]], spec: QuantizationSpec) -> Loop:
    if len(cmds) == 1 and cmds[0][0] is CommandType.CIRCLE:
        args = cmds[0][1]
        center = (dequantize(args[0], spec), dequantize(args[1], spec))
        return Loop((make_circle(center, dequantize(args[4], spec)),))
    ends = [(dequantize(a[0], spec), dequantize(a[1], spec)) for _, a in cmds]
    prims = []
    for i, (kind, args) in enumerate(cmds):
        start = ends[i - 1]
        end = ends[i]
        if kind is CommandType.ARC:
            sweep = dequantize(args[2], spec) * 2 * math.pi * (1 if args[3] else -1)
            prims.append(_arc_from_chord(start, end, sweep))
        else:
            prims.append(make_line(start, end))
    return Loop(tuple(prims))


def _arc_from_chord(start: Point2, end: Point2, sweep: float) -> PrimitiveDelta:
    chord = _dist(start, end)
    if chord <= EPS_CLOSE or abs(sweep) <= 1e-9:
        return make_line(start, end)
    radius = chord / (2 * math.sin(abs(sweep) / 2))
    mx, my = (start[0] + end[0]) / 2, (start[1] + end[1]) / 2
    dx, dy = (end[0] - start[0]) / chord, (end[1] - start[1]) / chord
    # center lies left of the chord for counter-clockwise sweeps below pi
    h = math.sqrt(max(radius * radius - (chord / 2) ** 2, 0.0))
    side = 1.0 if (sweep > 0) == (abs(sweep) < math.pi) else -1.0
    center = (mx - dy * h * side, my + dx * h * side)
    a0 = math.atan2(start[1] - center[1], start[0] - center[0])
    mid_angle = a0 + sweep / 2
    mid = (center[0] + radius * math.cos(mid_angle), center[1] + radius * math.sin(mid_angle))
    return PrimitiveDelta(start, mid, end)


# ---------------------------------------------------------------------------
# Mutations used by the validity suite
# ---------------------------------------------------------------------------

def drop_extrusions(seq: CadSequence) -> CadSequence:
    return replace(seq, steps=tuple(SketchStep(s.loops, None) for s in seq.steps))


def truncate_loop_to_single_line(seq: CadSequence, loop_index: int = 0) -> CadSequence:
    """Replace one loop with a single line from its first start point"""
    steps = []
    k = 0
    for step in seq.steps:
        loops = []
        for loop in step.loops:
            if k == loop_index:
                first = loop.primitives[0]
                end = first.mid if first.mid is not None and _dist(first.start, first.end) <= EPS_CLOSE \
                    else first.end
                loop = Loop((make_line(first.start, end),))
            loops.append(loop)
            k += 1
        steps.append(SketchStep(tuple(loops), step.extrusion))
    return replace(seq, steps=tuple(steps))


def open_loop(seq: CadSequence, loop_index: int = 0, gap: float = 0.05) -> CadSequence:
    """Move the end of the loop's last non-circle primitive away from the next start"""
    steps = []
    k = 0
    for step in seq.steps:
        loops = []
        for loop in step.loops:
            if k == loop_index:
                prims = list(loop.primitives)
                if len(prims) == 1:
                    p = prims[0]
                    prims = [make_line(p.start, p.mid if p.mid is not None else p.end),
                             make_line(p.mid if p.mid is not None else p.end,
                                       (p.start[0], p.start[1] + gap))]
                else:
                    last = prims[-1]
                    moved = (last.end[0] + gap if last.end[0] + gap <= 1 else last.end[0] - gap,
                             last.end[1])
                    prims[-1] = PrimitiveDelta(last.start, last.mid, moved)
                loop = Loop(tuple(prims))
            loops.append(loop)
            k += 1
        steps.append(SketchStep(tuple(loops), step.extrusion))
    return replace(seq, steps=tuple(steps))


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    min_steps: int = 1
    max_steps: int = 2
    min_loops: int = 1
    max_loops: int = 2
    min_primitives: int = 3
    max_primitives: int = 6
    circle_probability: float = 0.35
    arc_probability: float = 0.3
    max_retries: int = 100
    grid_snap: bool = True

    def __post_init__(self):
        if not 1 <= self.min_steps <= self.max_steps:
            raise ValueError("step bounds must satisfy 1 <= min <= max")
        if not 1 <= self.min_loops <= self.max_loops:
            raise ValueError("loop bounds must satisfy 1 <= min <= max")
        if not 3 <= self.min_primitives <= self.max_primitives <= N_P_MAX:
            raise ValueError(f"primitive bounds must lie in [3, {N_P_MAX}]")


MIN_FEATURE = 4.0 / 255.0


def _polygon_loop(rng: np.random.Generator, center: Point2, radius: float,
                  n_prims: int, arc_probability: float) -> Loop:
    """Star-shaped polygon around center; some edges bulge outward as arcs"""
    # jitter stays under a quarter spacing so vertices keep their angular order
    spacing = 2 * math.pi / n_prims
    offset = rng.uniform(0, 2 * math.pi)
    angles = np.arange(n_prims) * spacing + rng.uniform(-0.25, 0.25, n_prims) * spacing + offset
    radii = radius * rng.uniform(0.75, 1.0, n_prims)
    verts = [(center[0] + r * math.cos(a), center[1] + r * math.sin(a)) for a, r in zip(angles, radii)]
    prims = []
    for i in range(n_prims):
        start, end = verts[i], verts[(i + 1) % n_prims]
        if rng.random() < arc_probability:
            chord = _dist(start, end)
            bulge = chord * rng.uniform(0.15, 0.3)
            mx, my = (start[0] + end[0]) / 2, (start[1] + end[1]) / 2
            dx, dy = (end[0] - start[0]) / chord, (end[1] - start[1]) / chord
            # outward normal of a counter-clockwise polygon edge is (dy, -dx)
            prims.append(PrimitiveDelta(start, (mx + dy * bulge, my - dx * bulge), end))
        else:
            prims.append(make_line(start, end))
    return Loop(tuple(prims))


def _snap_point(p: Point2, spec: QuantizationSpec) -> Point2:
    return tuple(float(v) for v in dequantize(quantize(p, spec), spec))


def _snap_loop(loop: Loop, spec: QuantizationSpec) -> Loop:
    prims = []
    for prim in loop.primitives:
        prims.append(PrimitiveDelta(_snap_point(prim.start, spec),
                                    None if prim.mid is None else _snap_point(prim.mid, spec),
                                    _snap_point(prim.end, spec)))
    return Loop(tuple(prims))


def _type_stable(loop: Loop, spec: QuantizationSpec) -> bool:
    snapped = _snap_loop(loop, spec)
    try:
        return all(infer_primitive_type(a) == infer_primitive_type(b)
                   for a, b in zip(loop.primitives, snapped.primitives))
    except MalformedPrimitiveError:
        return False


def _random_sketch(rng: np.random.Generator, n_loops: int, gspec: GeneratorSpec) -> List[Loop]:
    """An outer profile plus optional inner holes, all inside [0.05, 0.95]^2"""
    loops = []
    center = (0.5 + rng.uniform(-0.05, 0.05), 0.5 + rng.uniform(-0.05, 0.05))
    outer_r = rng.uniform(0.28, 0.36)
    if rng.random() < gspec.circle_probability:
        loops.append(Loop((make_circle(center, outer_r),)))
    else:
        n = int(rng.integers(gspec.min_primitives, gspec.max_primitives + 1))
        loops.append(_polygon_loop(rng, center, outer_r, n, gspec.arc_probability))
    for _ in range(n_loops - 1):
        inner_r = outer_r * rng.uniform(0.2, 0.35)
        offset = outer_r * 0.2
        c = (center[0] + rng.uniform(-offset, offset), center[1] + rng.uniform(-offset, offset))
        if rng.random() < 0.6:
            loops.append(Loop((make_circle(c, inner_r),)))
        else:
            n = int(rng.integers(gspec.min_primitives, gspec.max_primitives + 1))
            loops.append(_polygon_loop(rng, c, inner_r, n, 0.0))
    return loops


def _random_extrusion(rng: np.random.Generator, step_index: int) -> Extrusion:
    # axis-aligned sketch planes: Euler angles on the quarter-turn grid
    quarter = [0.25, 0.5, 0.75]
    orientation = (float(rng.choice(quarter)), float(rng.choice([0.5, 0.75])), 0.5)
    origin = tuple(float(v) for v in rng.uniform(0.4, 0.6, 3))
    scale = float(rng.uniform(0.35, 0.6))
    extent_type = EXTENT_TYPES[int(rng.integers(0, 3))]
    distances = (float(rng.uniform(0.1, 0.5)),
                 float(rng.uniform(0.1, 0.4)) if extent_type is ExtentType.TWO_SIDED else 0.0)
    op = BooleanOp.NEW if step_index == 0 else BOOLEAN_OPS[int(rng.integers(1, 3))]
    return Extrusion(orientation, origin, scale, distances, op, extent_type)


def generate_random_sequence(rng_seed: int, spec: Optional[GeneratorSpec] = None,
                             quantization: QuantizationSpec = DEFAULT_QUANTIZATION) -> CadSequence:
    """Deterministic valid synthetic sequence for a seed"""
    spec = spec or GeneratorSpec()
    rng = np.random.default_rng(rng_seed)
    for attempt in range(spec.max_retries):
        n_steps = int(rng.integers(spec.min_steps, spec.max_steps + 1))
        steps = []
        for s in range(n_steps):
            n_loops = int(rng.integers(spec.min_loops, spec.max_loops + 1))
            loops = _random_sketch(rng, n_loops, spec)
            if spec.grid_snap:
                if not all(_type_stable(loop, quantization) for loop in loops):
                    break
                loops = [_snap_loop(loop, quantization) for loop in loops]
            ext = _random_extrusion(rng, s)
            if spec.grid_snap:
                ext = dequantize_extrusion(ext.quantized(quantization), quantization)
            steps.append(SketchStep(tuple(loops), ext))
        if len(steps) != n_steps:
            continue
        seq = CadSequence(tuple(steps), quantization)
        if validate(seq).valid:
            if attempt:
                logger(f"🔄 seed {rng_seed}: valid sequence after {attempt + 1} attempts", "DEBUG")
            return seq
    raise GeneratorExhaustedError(f"no valid sequence for seed {rng_seed} after {spec.max_retries} retries")
