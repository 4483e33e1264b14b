"""
CAD Sequence Toolkit - Command Line Interface
Batch subcommands: synth, sample, perturb, eval, train, infer, retrieve, report
"""

import argparse
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from jsonschema import Draft202012Validator

from cad_core import (
    CadParseError, CadSequenceError, GeneratorSpec, load_sequence, save_sequence, validate,
    generate_random_sequence,
)
from config import MODEL_PRESETS, ConfigError, ConfigManager
from geometry import (
    DUPLICATE_THRESHOLD, ChamferIndex, GeometryError, PointCloud, chamfer_reported, model_complexity,
    nearest_index, read_ply, sample_surface, write_ply,
)
from metrics import MetricsError, ScoringConfig, aggregate_report, report_from_csv, score_prediction
from perturb import (
    HoleSpec, InsufficientPointsError, NoiseSpec, PerturbationError, apply_noise, hole_metadata,
    punch_holes,
)
from transcad_model import ModelConfig, ModelError, ModelState, TrainingConfig, build_model, infer, train
from nn_core import NNError
from utils import (
    configure_logging, derive_seed, get_system_info, logger, read_json, sha256_bytes, sha256_file,
    canonical_json, write_json, PerformanceTimer,
)

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = Path(__file__).resolve().parent / "schemas" / "dataset_manifest.schema.json"
SPLITS = ("train", "val", "test")

EXIT_OK = 0
EXIT_ERRORS = 1
EXIT_ABORT = 2

# Per-item failures that are reported and collected instead of stopping the batch
ITEM_ERRORS = (CadSequenceError, GeometryError, PerturbationError, MetricsError, ModelError, NNError,
               OSError, ValueError)


class CommandError(Exception):
    """Raised when a command cannot start (bad inputs or mismatched directories)"""


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> ConfigManager:
    """Defaults, then the config file, then global flags"""
    manager = ConfigManager(args.config)
    manager.load_config()
    if args.seed is not None:
        manager.update_config("seed", int(args.seed))
    if args.preset is not None:
        manager.update_config("model.preset", args.preset)
    if args.jobs is not None:
        manager.update_config("cli.jobs", int(args.jobs))
    if getattr(args, "points", None):
        manager.update_config("geometry.n_points", int(args.points))

    errors = manager.validate_config()
    if errors:
        raise ConfigError("; ".join(errors))

    configure_logging(
        manager.get_setting("logging.log_level", "INFO"),
        bool(manager.get_setting("logging.log_to_file", False)),
        manager.get_setting("logging.log_dir", "logs"),
        manager.get_setting("logging.log_timezone", "UTC"),
    )
    return manager


def _args_echo(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items()) if k != "handler"}


def write_run_config(out_dir: Path, command: str, args: argparse.Namespace,
                     manager: ConfigManager) -> Path:
    """Resolved configuration and its digest next to a command's outputs"""
    return write_json(Path(out_dir) / "run_config.json", {
        "command": command,
        "args": _args_echo(args),
        "config": manager.get_config(),
        "echo_hash": manager.config_hash(),
        "system": get_system_info(),
    })


def map_ordered(fn: Callable[[int, Any], Any], items: Sequence[Any], jobs: int
                ) -> List[Tuple[Any, Optional[Exception]]]:
    """Apply fn(index, item) to every item, results in input order; item failures are captured"""
    def guarded(pair):
        i, item = pair
        try:
            return fn(i, item), None
        except ITEM_ERRORS as e:
            return None, e

    pairs = list(enumerate(items))
    if jobs <= 1 or len(pairs) <= 1:
        return [guarded(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(guarded, pairs))


def _report_failures(kind: str, names: Sequence[str],
                     results: Sequence[Tuple[Any, Optional[Exception]]]) -> List[str]:
    failed = []
    for name, (_, error) in zip(names, results):
        if error is not None:
            logger(f"❌ {kind} {name}: {error}", "ERROR")
            failed.append(name)
    return failed


def _jobs(manager: ConfigManager) -> int:
    return int(manager.get_setting("cli.jobs", 1))


def _generator_spec(manager: ConfigManager) -> GeneratorSpec:
    settings = manager.get_setting("generator", {}) or {}
    known = GeneratorSpec.__dataclass_fields__
    return GeneratorSpec(**{k: v for k, v in settings.items() if k in known})


def _scoring(manager: ConfigManager) -> ScoringConfig:
    return ScoringConfig.from_settings(manager.get_setting("scoring", {}) or {})


def _n_points(manager: ConfigManager) -> int:
    return int(manager.get_setting("geometry.n_points", 4096))


def _sample(seq, manager: ConfigManager, seed: int, n: Optional[int] = None) -> PointCloud:
    return sample_surface(
        seq, n or _n_points(manager), seed,
        oversample=int(manager.get_setting("geometry.oversample", 8)),
        delta_csg=float(manager.get_setting("geometry.delta_csg", 1e-4)),
        arc_segments=int(manager.get_setting("geometry.arc_segments", 64)),
    )


def _files(directory: Path, suffix: str) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CommandError(f"{directory} is not a directory")
    return sorted(directory.glob(f"*{suffix}"))


def load_manifest(data_dir: Path) -> Dict[str, Any]:
    """Schema-checked dataset manifest"""
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise CommandError(f"{path} not found")
    manifest = read_json(path)
    with open(MANIFEST_SCHEMA, 'r', encoding='utf-8') as f:
        validator = Draft202012Validator(json.load(f))
    errors = sorted(validator.iter_errors(manifest), key=lambda e: list(e.path))
    if errors:
        details = "; ".join(f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors)
        raise CommandError(f"{path} is not a valid manifest: {details}")
    return manifest


def load_pairs(data_dir: Path, split: str = "train") -> List[Tuple[str, PointCloud, Any]]:
    """(id, cloud, sequence) for every manifest entry of a split ("all" for every entry)"""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    pairs = []
    for entry in manifest["entries"]:
        if split != "all" and entry["split"] != split:
            continue
        pairs.append((entry["id"], read_ply(data_dir / entry["cloud"]),
                      load_sequence(data_dir / entry["sequence"])))
    return pairs


# ---------------------------------------------------------------------------
# synth / sample
# ---------------------------------------------------------------------------

def assign_splits(count: int, seed: int, ratios: Dict[str, float]) -> List[str]:
    """Deterministic split label per index from the configured ratios"""
    order = np.random.default_rng(seed).permutation(count)
    n_train = int(count * float(ratios.get("train", 0.8)))
    n_val = int(count * float(ratios.get("val", 0.1)))
    labels = [""] * count
    for rank, idx in enumerate(order):
        labels[int(idx)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return labels


def cmd_synth(args: argparse.Namespace, manager: ConfigManager) -> int:
    out_dir = Path(args.out)
    seed = int(manager.get_setting("seed", 0))
    n = _n_points(manager)
    gspec = _generator_spec(manager)
    ids = [f"model_{i:05d}" for i in range(args.count)]
    splits = assign_splits(args.count, seed, manager.get_setting("cli.split", {}) or {})

    def build(i: int, model_id: str) -> Dict[str, Any]:
        item_seed = derive_seed(seed, i)
        seq = generate_random_sequence(item_seed, gspec)
        cloud = _sample(seq, manager, item_seed, n)
        seq_path = save_sequence(seq, out_dir / "sequences" / f"{model_id}.json")
        cloud_path = write_ply(out_dir / "clouds" / f"{model_id}.ply", cloud)
        return {
            "id": model_id,
            "split": splits[i],
            "seed": item_seed,
            "sequence": f"sequences/{model_id}.json",
            "cloud": f"clouds/{model_id}.ply",
            "sequence_sha256": sha256_file(seq_path),
            "cloud_sha256": sha256_file(cloud_path),
        }

    with PerformanceTimer(f"synth {args.count} models", "INFO"):
        results = map_ordered(build, ids, _jobs(manager))
    failed = _report_failures("synth", ids, results)

    entries = [r for r, e in results if e is None]
    manifest = {
        "version": manager.get_setting("version", "1.0"),
        "seed": seed,
        "count": len(entries),
        "n_points": n,
        "splits": {s: sum(1 for e in entries if e["split"] == s) for s in SPLITS},
        "entries": entries,
    }
    path = write_json(out_dir / MANIFEST_NAME, manifest)
    write_run_config(out_dir, "synth", args, manager)
    digest = sha256_bytes(canonical_json(manifest).encode("utf-8"))
    logger(f"✅ {len(entries)} models written, manifest {path} ({digest[:12]})")
    return EXIT_ERRORS if failed else EXIT_OK


def cmd_sample(args: argparse.Namespace, manager: ConfigManager) -> int:
    files = _files(args.input, ".json")
    out_dir = Path(args.out)
    seed = int(manager.get_setting("seed", 0))

    def run(i: int, path: Path) -> Path:
        cloud = _sample(load_sequence(path), manager, derive_seed(seed, i))
        return write_ply(out_dir / f"{path.stem}.ply", cloud)

    results = map_ordered(run, files, _jobs(manager))
    failed = _report_failures("sample", [p.name for p in files], results)
    write_run_config(out_dir, "sample", args, manager)
    logger(f"✅ Sampled {len(files) - len(failed)}/{len(files)} sequences into {out_dir}")
    return EXIT_ERRORS if failed else EXIT_OK


# ---------------------------------------------------------------------------
# perturb
# ---------------------------------------------------------------------------

def _parse_amplitudes(args: argparse.Namespace, manager: ConfigManager) -> List[float]:
    if args.amplitudes:
        return [float(a) for a in args.amplitudes.split(",") if a.strip()]
    if args.amplitude is not None:
        return [float(args.amplitude)]
    return [float(manager.get_setting("noise.amplitude", 0.001))]


def _perturb_batch(files: List[Path], out_dir: Path, args: argparse.Namespace,
                   manager: ConfigManager, amplitude: Optional[float]) -> Tuple[List[str], List[str]]:
    seed = int(manager.get_setting("seed", 0))
    noise = manager.get_setting("noise", {}) or {}
    holes = dict(manager.get_setting("holes", {}) or {})
    if args.min_remaining is not None:
        holes["min_remaining"] = int(args.min_remaining)

    def run(i: int, path: Path) -> Dict[str, Any]:
        cloud = read_ply(path)
        item_seed = derive_seed(seed, i)
        if args.mode == "noise":
            spec = NoiseSpec(
                octaves=int(noise.get("octaves", 64)), amplitude=float(amplitude), seed=item_seed,
                persistence=float(noise.get("persistence", 0.5)),
                lacunarity=float(noise.get("lacunarity", 2.0)),
                normal_k=int(manager.get_setting("geometry.normal_k", 30)),
            )
            result = apply_noise(cloud, spec)
            meta = {"mode": "noise", "seed": item_seed, "amplitude": spec.amplitude,
                    "octaves": spec.octaves, "n_input": len(cloud), "n_output": len(result)}
        else:
            known = HoleSpec.__dataclass_fields__
            spec = HoleSpec(**{k: v for k, v in holes.items() if k in known and k != "seed"}, seed=item_seed)
            result, removed = punch_holes(cloud, spec)
            meta = hole_metadata(spec, removed, len(cloud))
        write_ply(out_dir / path.name, result)
        write_json(out_dir / f"{path.stem}.json", meta)
        return meta

    results = map_ordered(run, files, _jobs(manager))
    skipped, failed = [], []
    for path, (_, error) in zip(files, results):
        if isinstance(error, InsufficientPointsError):
            logger(f"⚠️ Skipped {path.name}: {error}", "WARNING")
            skipped.append(path.name)
        elif error is not None:
            logger(f"❌ perturb {path.name}: {error}", "ERROR")
            failed.append(path.name)
    write_json(out_dir / "perturb_summary.json", {
        "mode": args.mode,
        "amplitude": amplitude,
        "processed": len(files) - len(skipped) - len(failed),
        "skipped": skipped,
        "failed": failed,
    })
    return skipped, failed


def cmd_perturb(args: argparse.Namespace, manager: ConfigManager) -> int:
    files = _files(args.input, ".ply")
    out_dir = Path(args.out)
    failed: List[str] = []
    if args.mode == "noise":
        amplitudes = _parse_amplitudes(args, manager)
        sweep = len(amplitudes) > 1 or bool(args.amplitudes)
        for amplitude in amplitudes:
            target = out_dir / f"amp_{amplitude:g}" if sweep else out_dir
            _, bad = _perturb_batch(files, target, args, manager, amplitude)
            failed.extend(bad)
    else:
        _, failed = _perturb_batch(files, out_dir, args, manager, None)
    write_run_config(out_dir, "perturb", args, manager)
    logger(f"✅ Perturbed {len(files)} clouds ({args.mode}) into {out_dir}")
    return EXIT_ERRORS if failed else EXIT_OK


# ---------------------------------------------------------------------------
# eval / report
# ---------------------------------------------------------------------------

def _train_index(train_dir: Optional[Path]) -> Optional[ChamferIndex]:
    if train_dir is None:
        return None
    train_dir = Path(train_dir)
    if (train_dir / MANIFEST_NAME).exists():
        clouds = [cloud for _, cloud, _ in load_pairs(train_dir, "train")]
    else:
        clouds = [read_ply(p) for p in _files(train_dir, ".ply")]
    if not clouds:
        raise CommandError(f"no training clouds in {train_dir}")
    return ChamferIndex(clouds)


def _bins(args: argparse.Namespace, manager: ConfigManager) -> Tuple[int, int]:
    """Flag values, falling back to cli.complexity_bins / cli.length_bins"""
    complexity = args.complexity_bins if args.complexity_bins is not None \
        else int(manager.get_setting("cli.complexity_bins", 0))
    length = args.length_bins if args.length_bins is not None else int(manager.get_setting("cli.length_bins", 0))
    return complexity, length


def cmd_eval(args: argparse.Namespace, manager: ConfigManager) -> int:
    gt_files = _files(args.gt, ".json")
    pred_dir = Path(args.pred)
    ids = [p.stem for p in gt_files]
    missing = [i for i in ids if not (pred_dir / f"{i}.json").exists()]
    if missing:
        for model_id in missing:
            logger(f"❌ missing prediction for {model_id}", "ERROR")
        raise CommandError(f"{len(missing)} prediction(s) missing: {', '.join(missing)}")

    seed = int(manager.get_setting("seed", 0))
    cfg = _scoring(manager)
    index = _train_index(args.train)
    gt_clouds = Path(args.gt_clouds) if args.gt_clouds else None
    duplicate_threshold = float(manager.get_setting("geometry.duplicate_threshold", DUPLICATE_THRESHOLD))

    def gt_cloud(i: int, model_id: str, gt) -> PointCloud:
        if gt_clouds is not None and (gt_clouds / f"{model_id}.ply").exists():
            return read_ply(gt_clouds / f"{model_id}.ply")
        return _sample(gt, manager, derive_seed(seed, 2 * i))

    def score(i: int, model_id: str) -> Dict[str, Any]:
        gt = load_sequence(Path(args.gt) / f"{model_id}.json")
        try:
            pred = load_sequence(pred_dir / f"{model_id}.json")
        except CadParseError as e:
            logger(f"⚠️ {model_id}: unparseable prediction ({e})", "WARNING")
            pred = None

        reference = None
        complexity = None
        if index is not None:
            reference = gt_cloud(i, model_id, gt)
            complexity = model_complexity(reference, index)

        cd = None
        rebuilt = True
        if pred is not None and validate(pred).valid:
            reference = reference if reference is not None else gt_cloud(i, model_id, gt)
            try:
                cd = chamfer_reported(_sample(pred, manager, derive_seed(seed, 2 * i + 1)), reference)
            except GeometryError as e:
                logger(f"⚠️ {model_id}: prediction has no solid ({e})", "WARNING")
                rebuilt = False

        row = score_prediction(model_id, pred, gt, cfg, cd, complexity)
        if not rebuilt:
            row["valid"] = False
        if complexity is not None:
            row["duplicate"] = complexity < duplicate_threshold
        return row

    with PerformanceTimer(f"eval {len(ids)} models", "INFO"):
        results = map_ordered(score, ids, _jobs(manager))
    failed = _report_failures("eval", ids, results)
    rows = [r for r, e in results if e is None]

    complexity_bins, length_bins = _bins(args, manager)
    report = aggregate_report(rows, complexity_bins if args.train else 0, length_bins)
    echo = {"echo_hash": manager.config_hash(), "failed": failed}
    report.write(args.out, echo)
    write_run_config(Path(args.out), "eval", args, manager)
    summary = report.summary
    logger(f"✅ APCS {summary['mean_apcs']:.3f} | IR {summary['ir']:.3f} | "
           f"median CD {summary['median_cd_x1000']} over {summary['n_models']} models")
    return EXIT_ERRORS if failed else EXIT_OK


def cmd_report(args: argparse.Namespace, manager: ConfigManager) -> int:
    report = report_from_csv(args.csv, *_bins(args, manager))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "summary.json", dict(report.summary, echo_hash=manager.config_hash()))
    write_run_config(out_dir, "report", args, manager)
    logger(f"✅ Summary of {report.summary['n_models']} models written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / infer / retrieve
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace, manager: ConfigManager) -> int:
    pairs = load_pairs(Path(args.data), args.split)
    if not pairs:
        raise CommandError(f"split '{args.split}' of {args.data} is empty")

    settings = manager.get_model_settings()
    config = ModelConfig.from_dict(settings)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = int(args.steps)
    if args.batch_size is not None:
        overrides["batch_size"] = int(args.batch_size)
    training = TrainingConfig.from_preset(manager.get_setting("model.preset", "toy"),
                                          **dict(manager.get_training_settings(), **overrides))

    init_stem = args.init or manager.get_setting("training.init_checkpoint")
    init_state = ModelState.load(init_stem) if init_stem else None
    out_dir = Path(args.out)
    state, curve = train([(cloud, seq) for _, cloud, seq in pairs], config,
                         seed=int(manager.get_setting("seed", 0)), training=training,
                         init_state=init_state, out_dir=out_dir)
    write_run_config(out_dir, "train", args, manager)
    first, last = curve["total"].iloc[0], curve["total"].iloc[-1]
    logger(f"✅ Trained {len(curve)} steps on {len(pairs)} samples: loss {first:.4f} -> {last:.4f}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace, manager: ConfigManager) -> int:
    files = _files(args.input, ".ply")
    model = build_model(ModelState.load(args.checkpoint))
    out_dir = Path(args.out)

    def run(i: int, path: Path) -> Path:
        return save_sequence(infer(read_ply(path), model), out_dir / f"{path.stem}.json")

    results = map_ordered(run, files, _jobs(manager))
    failed = _report_failures("infer", [p.name for p in files], results)
    write_run_config(out_dir, "infer", args, manager)
    logger(f"✅ Predicted {len(files) - len(failed)}/{len(files)} sequences into {out_dir}")
    return EXIT_ERRORS if failed else EXIT_OK


def cmd_retrieve(args: argparse.Namespace, manager: ConfigManager) -> int:
    files = _files(args.input, ".ply")
    candidates = load_pairs(Path(args.train), args.split)
    if not candidates:
        raise CommandError(f"no retrieval candidates in {args.train}")
    index = ChamferIndex([cloud for _, cloud, _ in candidates])
    out_dir = Path(args.out)

    def run(i: int, path: Path) -> str:
        best = nearest_index(read_ply(path), index)
        model_id, _, seq = candidates[best]
        save_sequence(seq, out_dir / f"{path.stem}.json")
        return model_id

    results = map_ordered(run, files, _jobs(manager))
    failed = _report_failures("retrieve", [p.name for p in files], results)
    write_json(out_dir / "retrieval.json",
               {p.stem: r for p, (r, e) in zip(files, results) if e is None})
    write_run_config(out_dir, "retrieve", args, manager)
    logger(f"✅ Retrieved {len(files) - len(failed)}/{len(files)} sequences into {out_dir}")
    return EXIT_ERRORS if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadseq", description="CAD sequence toolkit")
    parser.add_argument("--seed", type=int, default=None, help="base seed (default from config)")
    parser.add_argument("--config", default=None, help="JSON config file merged over defaults")
    parser.add_argument("--jobs", type=int, default=None, help="worker threads for per-file commands")
    parser.add_argument("--preset", choices=sorted(MODEL_PRESETS), default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate sequences and sampled clouds")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("sample", help="sample clouds from sequence JSON files")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=None)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("perturb", help="add noise or punch holes into PLY clouds")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["noise", "holes"], required=True)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--amplitudes", default=None, help="comma separated noise sweep")
    p.add_argument("--min-remaining", type=int, default=None)
    p.set_defaults(handler=cmd_perturb)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-clouds", default=None)
    p.add_argument("--train", default=None, help="dataset dir or PLY dir for model complexity")
    p.add_argument("--complexity-bins", type=int, default=None)
    p.add_argument("--length-bins", type=int, default=None)
    p.add_argument("--points", type=int, default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("train", help="train the sequence model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=list(SPLITS) + ["all"])
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--init", default=None, help="checkpoint stem to fine-tune from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="predict sequences for PLY clouds")
    p.add_argument("--checkpoint", required=True, help="checkpoint stem (without .bin/.json)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("retrieve", help="nearest training sequence per cloud")
    p.add_argument("--train", required=True, help="dataset dir with a manifest")
    p.add_argument("--split", default="train", choices=list(SPLITS) + ["all"])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("report", help="re-aggregate an eval CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--complexity-bins", type=int, default=None)
    p.add_argument("--length-bins", type=int, default=None)
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manager = resolve_config(args)
        return args.handler(args, manager)
    except (CommandError, ConfigError) as e:
        logger(f"❌ {args.command}: {e}", "ERROR")
        return EXIT_ABORT
    except ITEM_ERRORS as e:
        logger(f"❌ {args.command} failed: {e}", "ERROR")
        return EXIT_ERRORS


if __name__ == "__main__":
    raise SystemExit(main())
