"""
CAD Sequence Toolkit - Evaluation Metrics
Legacy command/parameter accuracy, sequence similarity score and its
threshold-averaged precision, invalidity ratio, token-type F1 and report aggregation
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import f1_score

from cad_core import (
    CadSequence, LegacyCommand, MalformedPrimitiveError,
    PrimitiveType, TokenOverflowError, TokenType, infer_primitive_type, sequence_length,
    to_legacy_commands, token_expansion, tokenize, validate,
)
from utils import logger, safe_divide, write_json

COMPONENTS = ("Line", "Arc", "Circle", "Ext", "Origin", "Orientation", "Size")

# slices of Extrusion.flat_vector()
_ORIENTATION = slice(0, 3)
_ORIGIN = slice(3, 6)
_SIZE = slice(6, 7)
_EXT_PARAMS = [7, 8, 9, 10]

REPORT_COLUMNS = ["id", "apcs", "csss", "cd_x1000", "valid", "acc_cmd", "acc_param", "f1",
                  "complexity", "duplicate", "bin", "length", "length_bin", "acc_param_vacuous"] \
                 + [f"apcs_{c.lower()}" for c in COMPONENTS]


class MetricsError(Exception):
    """Base class for metric errors"""


class EmptyEvaluationError(MetricsError):
    pass


def default_thresholds() -> Tuple[float, ...]:
    return tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class ScoringConfig:
    k: float = 1.0
    thresholds: Tuple[float, ...] = field(default_factory=default_thresholds)
    eta: float = 3
    categorical_gate: bool = False

    def __post_init__(self):
        if self.k <= 0:
            raise MetricsError(f"k must be > 0, got {self.k}")
        if self.eta < 0:
            raise MetricsError(f"eta must be >= 0, got {self.eta}")
        t = list(self.thresholds)
        if not t or any(b <= a for a, b in zip(t, t[1:])) or not all(0 < x < 1 for x in t):
            raise MetricsError("thresholds must be strictly ascending values in (0, 1)")

    @classmethod
    def from_settings(cls, settings: Dict[str, Any]) -> "ScoringConfig":
        return cls(k=float(settings.get("k", 1.0)),
                   thresholds=tuple(settings.get("thresholds", default_thresholds())),
                   eta=float(settings.get("eta", 3)),
                   categorical_gate=bool(settings.get("categorical_gate", False)))


# ---------------------------------------------------------------------------
# Legacy accuracies
# ---------------------------------------------------------------------------

Commands = Union[CadSequence, Sequence[LegacyCommand]]


def _commands(x: Commands) -> List[LegacyCommand]:
    return to_legacy_commands(x) if isinstance(x, CadSequence) else list(x)


def acc_cmd(pred: Commands, gt: Commands) -> float:
    """Share of ground-truth positions whose command type is predicted; extra predictions are ignored"""
    p, g = _commands(pred), _commands(gt)
    if not g:
        return 1.0
    hits = sum(1 for i in range(min(len(p), len(g))) if p[i].kind is g[i].kind)
    return hits / len(g)


def acc_param_detail(pred: Commands, gt: Commands, cfg: ScoringConfig = ScoringConfig()) -> Tuple[float, bool]:
    """(accuracy, vacuous) where vacuous marks the K = 0 convention"""
    p, g = _commands(pred), _commands(gt)
    total = 0
    close = 0
    for i in range(min(len(p), len(g))):
        if p[i].kind is not g[i].kind:
            continue
        for a, b in zip(p[i].params, g[i].params):
            total += 1
            if abs(a - b) < cfg.eta:
                close += 1
    if total == 0:
        return 1.0, True
    return close / total, False


def acc_param(pred: Commands, gt: Commands, cfg: ScoringConfig = ScoringConfig()) -> float:
    return acc_param_detail(pred, gt, cfg)[0]


# ---------------------------------------------------------------------------
# Sequence similarity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsssBreakdown:
    total: float
    loop_term: float
    ext_term: float
    per_component: Dict[str, Optional[float]]
    n_delta: int
    n_rho: int
    n_e: int
    n_rho_j: Tuple[int, ...]


def _score(a: np.ndarray, b: np.ndarray, k: float) -> float:
    return math.exp(-k * float(np.linalg.norm(a - b)))


def _safe_type(prim) -> Optional[PrimitiveType]:
    try:
        return infer_primitive_type(prim)
    except MalformedPrimitiveError:
        return None


def _primitive_score(pp, gp, k: float) -> Tuple[Optional[PrimitiveType], float]:
    """(gt type, type-gated similarity)"""
    gt_type = _safe_type(gp)
    pred_type = _safe_type(pp)
    if gt_type is None or pred_type is not gt_type:
        return gt_type, 0.0
    if gt_type is PrimitiveType.LINE:
        # both mids are absent or irrelevant for lines
        a = np.array([*pp.start, *pp.end])
        b = np.array([*gp.start, *gp.end])
    else:
        a, b = pp.as_vector(), gp.as_vector()
    return gt_type, _score(a, b, k)


def _extrusion_score(pe, ge, k: float, gate: bool) -> Dict[str, float]:
    a, b = pe.flat_vector(), ge.flat_vector()
    if gate:
        matched = pe.boolean_op is ge.boolean_op and pe.extent_type is ge.extent_type
        total = _score(a[:9], b[:9], k) if matched else 0.0
        ext = _score(a[7:9], b[7:9], k) if matched else 0.0
    else:
        total = _score(a, b, k)
        ext = _score(a[_EXT_PARAMS], b[_EXT_PARAMS], k)
    return {
        "total": total,
        "Ext": ext,
        "Origin": _score(a[_ORIGIN], b[_ORIGIN], k),
        "Orientation": _score(a[_ORIENTATION], b[_ORIENTATION], k),
        "Size": _score(a[_SIZE], b[_SIZE], k),
    }


def csss(pred: CadSequence, gt: CadSequence, cfg: ScoringConfig = ScoringConfig()) -> CsssBreakdown:
    """Positionally aligned similarity of loops and extrusions, each half normalized by the larger side"""
    p_loops, g_loops = pred.loops, gt.loops
    n_rho = max(len(p_loops), len(g_loops))
    n_rho_j: List[int] = []
    loop_sum = 0.0
    type_scores: Dict[PrimitiveType, List[float]] = {t: [] for t in PrimitiveType}

    for j in range(n_rho):
        pl = p_loops[j].primitives if j < len(p_loops) else ()
        gl = g_loops[j].primitives if j < len(g_loops) else ()
        n_rho_j.append(max(len(pl), len(gl)))
        for i, gp in enumerate(gl):
            if i >= len(pl):
                gt_type, s = _safe_type(gp), 0.0
            else:
                gt_type, s = _primitive_score(pl[i], gp, cfg.k)
            loop_sum += s
            if gt_type is not None:
                type_scores[gt_type].append(s)

    n_delta = sum(n_rho_j)
    loop_term = loop_sum / (2 * n_delta) if n_delta else 0.5

    p_ext, g_ext = pred.extrusions, gt.extrusions
    n_e = max(len(p_ext), len(g_ext))
    ext_parts = {name: 0.0 for name in ("total", "Ext", "Origin", "Orientation", "Size")}
    for j in range(min(len(p_ext), len(g_ext))):
        for name, value in _extrusion_score(p_ext[j], g_ext[j], cfg.k, cfg.categorical_gate).items():
            ext_parts[name] += value
    ext_term = ext_parts["total"] / (2 * n_e) if n_e else 0.5

    per_component: Dict[str, Optional[float]] = {
        "Line": float(np.mean(type_scores[PrimitiveType.LINE])) if type_scores[PrimitiveType.LINE] else None,
        "Arc": float(np.mean(type_scores[PrimitiveType.ARC])) if type_scores[PrimitiveType.ARC] else None,
        "Circle": float(np.mean(type_scores[PrimitiveType.CIRCLE])) if type_scores[PrimitiveType.CIRCLE] else None,
    }
    for name in ("Ext", "Origin", "Orientation", "Size"):
        per_component[name] = ext_parts[name] / n_e if n_e else None

    return CsssBreakdown(
        total=loop_term + ext_term,
        loop_term=loop_term,
        ext_term=ext_term,
        per_component=per_component,
        n_delta=n_delta,
        n_rho=n_rho,
        n_e=n_e,
        n_rho_j=tuple(n_rho_j),
    )


def apcs_from_score(score: float, thresholds: Sequence[float]) -> float:
    """Fraction of thresholds the score reaches"""
    return safe_divide(sum(1 for t in thresholds if score >= t), len(thresholds))


def apcs(pred: CadSequence, gt: CadSequence, cfg: ScoringConfig = ScoringConfig()) -> float:
    return apcs_from_score(csss(pred, gt, cfg).total, cfg.thresholds)


def component_apcs(breakdown: CsssBreakdown, cfg: ScoringConfig = ScoringConfig()) -> Dict[str, Optional[float]]:
    return {name: None if value is None else apcs_from_score(value, cfg.thresholds)
            for name, value in breakdown.per_component.items()}


# ---------------------------------------------------------------------------
# Token types
# ---------------------------------------------------------------------------

def _token_ids(tokens: Sequence[Union[TokenType, int]]) -> List[int]:
    return [t.value if isinstance(t, TokenType) else int(t) for t in tokens]


def f1_types(pred_tokens: Sequence[Union[TokenType, int]], gt_tokens: Sequence[Union[TokenType, int]]) -> float:
    """Macro F1 over {Loop, Extrusion, EOS} with positional alignment"""
    y_pred, y_true = _token_ids(pred_tokens), _token_ids(gt_tokens)
    if len(y_pred) != len(y_true):
        raise MetricsError(f"token lists differ in length: {len(y_pred)} vs {len(y_true)}")
    labels = [t.value for t in TokenType]
    return float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))


def _safe_tokens(seq: CadSequence, l_max: int) -> List[int]:
    try:
        return _token_ids(tokenize(seq, l_max))
    except TokenOverflowError:
        # overflowing predictions keep their first l_max tokens
        return _token_ids(token_expansion(seq)[:l_max])


# ---------------------------------------------------------------------------
# Per-model rows and report
# ---------------------------------------------------------------------------

def score_prediction(model_id: str, pred: Optional[CadSequence], gt: CadSequence,
                     cfg: ScoringConfig = ScoringConfig(), cd_x1000: Optional[float] = None,
                     complexity: Optional[float] = None, l_max: int = 24) -> Dict[str, Any]:
    """One report row. pred=None marks an unparseable prediction (APCS 0, invalid)."""
    row: Dict[str, Any] = {
        "id": model_id,
        "complexity": complexity,
        "length": sequence_length(gt),
        "cd_x1000": None,
    }
    if pred is None:
        row.update({"apcs": 0.0, "csss": 0.0, "valid": False, "acc_cmd": 0.0, "acc_param": 0.0,
                    "acc_param_vacuous": False, "f1": 0.0})
        row.update({f"apcs_{c.lower()}": None for c in COMPONENTS})
        return row

    breakdown = csss(pred, gt, cfg)
    acc_p, vacuous = acc_param_detail(pred, gt, cfg)
    valid = validate(pred).valid
    row.update({
        "apcs": apcs_from_score(breakdown.total, cfg.thresholds),
        "csss": breakdown.total,
        "valid": valid,
        "acc_cmd": acc_cmd(pred, gt),
        "acc_param": acc_p,
        "acc_param_vacuous": vacuous,
        "f1": f1_types(_safe_tokens(pred, l_max), _safe_tokens(gt, l_max)),
        "cd_x1000": cd_x1000 if valid else None,
    })
    row.update({f"apcs_{name.lower()}": value for name, value in component_apcs(breakdown, cfg).items()})
    return row


@dataclass
class EvalReport:
    table: pd.DataFrame
    summary: Dict[str, Any]

    def write(self, out_dir, config_echo: Optional[Dict[str, Any]] = None) -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "report.csv"
        self.table.to_csv(csv_path, index=False, encoding="utf-8", float_format="%.9g")
        summary = dict(self.summary)
        if config_echo is not None:
            summary["config"] = config_echo
        json_path = write_json(out_dir / "summary.json", summary)
        logger(f"✅ Report written to {csv_path}", "DEBUG")
        return csv_path, json_path


def equal_count_bins(values: pd.Series, q: int) -> pd.Series:
    """Bin labels 0..q-1 with approximately equal counts; rank ties are broken by order"""
    q = min(int(q), int(values.notna().sum()))
    if q <= 0:
        return pd.Series([None] * len(values), index=values.index, dtype="object")
    ranks = values.rank(method="first")
    return pd.qcut(ranks, q, labels=False)


def _nan_to_none(value):
    if value is None:
        return None
    try:
        return None if pd.isna(value) else float(value)
    except TypeError:
        return value


def _group_summary(frame: pd.DataFrame) -> Dict[str, Any]:
    cd = pd.to_numeric(frame.loc[frame["valid"].astype(bool), "cd_x1000"], errors="coerce").dropna()
    return {
        "n_models": int(len(frame)),
        "n_invalid": int((~frame["valid"].astype(bool)).sum()),
        "mean_apcs": float(frame["apcs"].mean()),
        "mean_csss": float(frame["csss"].mean()),
        "median_cd_x1000": float(cd.median()) if len(cd) else None,
        "ir": float((~frame["valid"].astype(bool)).mean()),
        "mean_acc_cmd": float(frame["acc_cmd"].mean()),
        "mean_acc_param": float(frame["acc_param"].mean()),
        "macro_f1": float(frame["f1"].mean()),
    }


def aggregate_report(rows: Sequence[Dict[str, Any]], complexity_bins: int = 0,
                     length_bins: int = 0) -> EvalReport:
    """Dataset aggregates with optional equal-count binning by complexity and by sequence length"""
    if not rows:
        raise EmptyEvaluationError("no models to aggregate")

    table = pd.DataFrame(list(rows))
    for column in REPORT_COLUMNS:
        if column not in table.columns:
            table[column] = None
    table = table[REPORT_COLUMNS]

    summary = _group_summary(table)
    summary["component_apcs"] = {
        name: _nan_to_none(pd.to_numeric(table[f"apcs_{name.lower()}"], errors="coerce").mean())
        for name in COMPONENTS
    }
    summary["acc_param_vacuous"] = int(table["acc_param_vacuous"].fillna(False).astype(bool).sum())
    summary["n_duplicates"] = int(table["duplicate"].fillna(False).astype(bool).sum())

    if complexity_bins:
        table["bin"] = equal_count_bins(pd.to_numeric(table["complexity"], errors="coerce"), complexity_bins)
        summary["complexity_bins"] = _binned(table, "bin", "complexity")
    if length_bins:
        table["length_bin"] = equal_count_bins(pd.to_numeric(table["length"], errors="coerce"), length_bins)
        summary["length_bins"] = _binned(table, "length_bin", "length")

    return EvalReport(table=table, summary=summary)


def _binned(table: pd.DataFrame, bin_column: str, value_column: str) -> List[Dict[str, Any]]:
    out = []
    for label, group in table.dropna(subset=[bin_column]).groupby(bin_column, sort=True):
        entry = _group_summary(group)
        values = pd.to_numeric(group[value_column], errors="coerce")
        entry.update({"bin": int(label), "min": float(values.min()), "max": float(values.max())})
        out.append(entry)
    return out


def report_from_csv(csv_path, complexity_bins: int = 0, length_bins: int = 0) -> EvalReport:
    """Re-aggregate a report CSV written by EvalReport.write"""
    table = pd.read_csv(csv_path)
    if table.empty:
        raise EmptyEvaluationError(f"{csv_path} holds no rows")
    for column in ("valid", "acc_param_vacuous", "duplicate"):
        if column in table.columns:
            table[column] = table[column].astype(str).str.lower().isin(["true", "1"])
    table = table.astype(object).where(table.notna(), None)
    return aggregate_report(table.to_dict("records"), complexity_bins, length_bins)
