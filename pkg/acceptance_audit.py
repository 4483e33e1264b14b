#!/usr/bin/env python3
"""
Acceptance Audit - Verification of metric oracles, geometry contracts and toy-scale training
Runs every acceptance check and writes acceptance_report.json
"""

import argparse
import math
import os
import sys
import time
from datetime import datetime

import numpy as np

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cad_core import (
    CadSequence, Extrusion, FailureCode, Loop, SketchStep, drop_extrusions, generate_random_sequence,
    make_circle, make_line, open_loop, quantize, dequantize, truncate_loop_to_single_line, validate,
)
from config import ConfigManager
from geometry import chamfer_distance, chamfer_distance_brute, chamfer_reported, find_duplicates, sample_surface
from metrics import acc_cmd, acc_param, apcs, apcs_from_score, csss, f1_types, ScoringConfig
from perturb import HoleSpec, NoiseSpec, apply_noise, knn_graph, punch_holes
from transcad_model import (
    ModelConfig, TrainingConfig, TransCadModel, coordinate_error, infer, prepare_sample, routing_types,
    synthesize_pairs, train, uniform_init_loss,
)
from utils import PerformanceTimer, get_system_info, logger, safe_divide, write_json


def _square(lo=0.0, hi=1.0):
    pts = [(lo, lo), (hi, lo), (hi, hi), (lo, hi)]
    return Loop(tuple(make_line(pts[i], pts[(i + 1) % 4]) for i in range(4)))


def _polygon(center, radius, n, phase):
    pts = [(center[0] + radius * math.cos(phase + 2 * math.pi * i / n),
            center[1] + radius * math.sin(phase + 2 * math.pi * i / n)) for i in range(n)]
    return Loop(tuple(make_line(pts[i], pts[(i + 1) % n]) for i in range(n)))


class AcceptanceAudit:
    """Acceptance checks grouped by subsystem"""

    def __init__(self, seed: int = 0, with_training: bool = False, steps: int = 2000):
        """Initialize the audit with its seed and training switch"""
        self.config_manager = ConfigManager()
        self.seed = seed
        self.with_training = with_training
        self.steps = steps
        self.test_results = {}
        self.passed_tests = 0
        self.total_tests = 0

    def run_all_tests(self) -> bool:
        print("🔍 ACCEPTANCE AUDIT - CAD Sequence Toolkit")
        print("=" * 60)

        self.config_manager.load_config()

        self.test_metric_oracles()
        self.test_overprediction_contrast()
        self.test_chamfer_oracle()
        self.test_quantization()
        self.test_validity_taxonomy()
        self.test_initial_loss()
        self.test_perturbation_contracts()
        self.test_duplicate_detection()
        if self.with_training:
            self.test_overfit_training()
            self.test_ablation_direction()

        return self.generate_audit_report()

    def _check(self, test_name, fn):
        """Run one check; fn returns (passed, details)"""
        start = time.perf_counter()
        try:
            passed, details = fn()
        except Exception as e:
            passed, details = False, f"{type(e).__name__}: {e}"
        self.record_test(test_name, passed, f"{details} ({time.perf_counter() - start:.2f}s)")

    # ------------------------------------------------------------------
    # Metrics
    # ------------------------------------------------------------------

    def test_metric_oracles(self):
        print("\n📏 Testing Metric Oracles...")

        def identity():
            worst = min(csss(s, s).total for s in (generate_random_sequence(i) for i in range(200)))
            return worst == 1.0, f"min CSSS(C, C) over 200 sequences = {worst}"
        self._check("csss_identity", identity)

        def fixtures():
            circle = Loop((make_circle((0.5, 0.5), 0.25),))
            gt = CadSequence((SketchStep((circle,), Extrusion()),))
            extra = CadSequence((SketchStep((circle, Loop((make_line((0.1, 0.1), (0.9, 0.1)),))),
                                            Extrusion()),))
            shift = math.log(2) / math.sqrt(3)
            moved = CadSequence((SketchStep((circle,), Extrusion(origin=(0.5 + shift,) * 3)),))
            values = (csss(extra, gt).total, csss(moved, gt).total, csss(gt, gt).total)
            ok = all(abs(v - e) <= 1e-9 for v, e in zip(values, (0.75, 0.75, 1.0)))
            return ok, "extra loop {:.12f}, offset {:.12f}, identity {:.12f}".format(*values)
        self._check("csss_fixtures", fixtures)

        def threshold():
            value = apcs_from_score(0.52, ScoringConfig().thresholds)
            return abs(value - 10 / 19) <= 1e-12, f"APCS(0.52) = {value}"
        self._check("apcs_thresholds", threshold)

    def test_overprediction_contrast(self):
        print("\n🧮 Testing Over-prediction Contrast...")

        def contrast():
            tri = [(0.2, 0.2), (0.8, 0.2), (0.5, 0.8)]
            gt = CadSequence((SketchStep((Loop(tuple(make_line(tri[i], tri[(i + 1) % 3]) for i in range(3))),),
                                         Extrusion()),))
            extra = tuple(SketchStep((_polygon((0.5, 0.5), 0.3, 8, 0.1 * k), _polygon((0.5, 0.5), 0.1, 8, 0.1 * k)),
                                     Extrusion()) for k in range(6))
            pred = CadSequence(gt.steps + extra)
            a_cmd, a_param, score = acc_cmd(pred, gt), acc_param(pred, gt), apcs(pred, gt)
            return a_cmd == 1.0 and a_param == 1.0 and score < 0.1, \
                f"acc_cmd {a_cmd}, acc_param {a_param}, APCS {score:.4f}"
        self._check("overprediction_contrast", contrast)

    # ------------------------------------------------------------------
    # Geometry
    # ------------------------------------------------------------------

    def test_chamfer_oracle(self):
        print("\n📐 Testing Chamfer Distance...")

        def kdtree_vs_brute():
            rng = np.random.default_rng(self.seed)
            worst = 0.0
            for _ in range(50):
                a, b = rng.uniform(-1, 1, (512, 3)), rng.uniform(-1, 1, (512, 3))
                worst = max(worst, abs(chamfer_distance(a, b) - chamfer_distance_brute(a, b)))
                worst = max(worst, abs(chamfer_distance(a, b) - chamfer_distance(b, a)))
                worst = max(worst, abs(chamfer_distance(2 * a, 2 * b) - 4 * chamfer_distance(a, b)))
            self_cd = chamfer_distance(a, a)
            return worst <= 1e-9 and self_cd == 0.0, f"worst deviation {worst:.2e}"
        self._check("chamfer_kdtree_matches_brute_force", kdtree_vs_brute)

        def cube_resampling():
            cube = CadSequence((SketchStep((_square(),), Extrusion()),))
            cd = chamfer_reported(sample_surface(cube, 4096, 1), sample_surface(cube, 4096, 2))
            return cd <= 1.0, f"self-CD of cube resamplings {cd:.3f}"
        self._check("chamfer_cube_resampling", cube_resampling)

    def test_quantization(self):
        print("\n🔢 Testing Quantization...")

        def round_trip():
            x = np.random.default_rng(self.seed).uniform(0, 1, 1_000_000)
            err = float(np.abs(dequantize(quantize(x)) - x).max())
            return err <= 1 / 510, f"max round-trip error {err:.6f}"
        self._check("quantization_round_trip", round_trip)

    def test_validity_taxonomy(self):
        print("\n🧪 Testing Validity Taxonomy...")

        def mutations():
            misses = 0
            for i in range(500):
                seq = generate_random_sequence(i)
                misses += FailureCode.NO_EXTRUSION_TOKEN not in validate(drop_extrusions(seq)).failure_codes
                misses += FailureCode.SINGLE_LINE_LOOP not in validate(truncate_loop_to_single_line(seq)).failure_codes
                misses += FailureCode.OPEN_LOOP not in validate(open_loop(seq)).failure_codes
            return misses == 0, f"{misses} false negatives over 1500 mutations"
        self._check("mutation_detection", mutations)

    # ------------------------------------------------------------------
    # Model
    # ------------------------------------------------------------------

    def test_initial_loss(self):
        print("\n🧠 Testing Initial Loss...")

        def init_loss():
            config = ModelConfig.from_preset("toy", zero_init_heads=True, use_refiner=False)
            cloud, seq = synthesize_pairs(1, self.seed, config.n_points)[0]
            sample = prepare_sample(cloud, seq, config)
            value = float(TransCadModel(config, self.seed).loss(sample).total.data)
            expected = uniform_init_loss(sample, config)
            return abs(value - expected) <= 0.05 * expected, f"loss {value:.4f} vs uniform {expected:.4f}"
        self._check("initial_loss_uniform", init_loss)

    # ------------------------------------------------------------------
    # Perturbations
    # ------------------------------------------------------------------

    def test_perturbation_contracts(self):
        print("\n🌪️ Testing Perturbations...")
        seq = generate_random_sequence(self.seed)
        cloud = sample_surface(seq, 8192, self.seed)

        def noise():
            spec = NoiseSpec(seed=self.seed)
            out = apply_noise(cloud, spec)
            shift = float(np.linalg.norm(out.points - cloud.points, axis=1).max())
            again = apply_noise(cloud, spec)
            deterministic = np.array_equal(out.points, again.points)
            return shift <= spec.amplitude + 1e-12 and deterministic, f"max displacement {shift:.6f}"
        self._check("noise_bounded", noise)

        def holes():
            from scipy.sparse.csgraph import connected_components
            spec = HoleSpec(max_holes=1, seed=self.seed)
            out, removed = punch_holes(cloud, spec)
            graph = knn_graph(cloud.points, spec.knn)
            n_parts, _ = connected_components(graph[removed][:, removed], directed=False)
            _, again = punch_holes(cloud, spec)
            ok = len(out) >= 4096 and n_parts == 1 and np.array_equal(removed, again)
            return ok, f"{len(removed)} removed, {len(out)} kept, {n_parts} component(s)"
        self._check("holes_connected", holes)

    def test_duplicate_detection(self):
        print("\n👯 Testing Duplicate Detection...")

        def duplicates():
            n = int(self.config_manager.get_setting("geometry.n_points", 4096))
            pool_seqs = [generate_random_sequence(1000 + i) for i in range(50)]
            pool = [sample_surface(s, n, i) for i, s in enumerate(pool_seqs)]
            planted = [sample_surface(pool_seqs[i], n, 10_000 + i) for i in range(5)]
            fresh = [sample_surface(generate_random_sequence(5000 + i), n, i) for i in range(5)]
            flags = find_duplicates(planted + fresh, pool)
            recall = sum(flags[:5]) / 5
            false_pos = sum(flags[5:])
            return recall == 1.0 and false_pos == 0, f"recall {recall:.2f}, false positives {false_pos}"
        self._check("duplicate_detection", duplicates)

    # ------------------------------------------------------------------
    # Training
    # ------------------------------------------------------------------

    def _train(self, config, pairs):
        training = TrainingConfig.from_preset("toy", steps=self.steps)
        samples = [prepare_sample(c, s, config) for c, s in pairs]
        state, curve = train(samples, config, seed=self.seed, training=training)
        return state, curve, samples

    def test_overfit_training(self):
        print("\n🏋️ Testing Overfit Training...")

        def overfit():
            config = ModelConfig.from_preset("toy")
            pairs = synthesize_pairs(64, self.seed, config.n_points)
            with PerformanceTimer("overfit run", "INFO"):
                state, curve, samples = self._train(config, pairs)
            drop = curve["total"].head(10).mean() / max(curve["total"].tail(10).mean(), 1e-12)
            f1s, scores = [], []
            for s in samples:
                seq, out = infer(s.cloud, state, return_outputs=True)
                f1s.append(f1_types(routing_types(out.type_logits.data), s.token_targets))
                scores.append(csss(seq, s.sequence).total)
            ok = drop >= 10 and np.mean(f1s) >= 0.95 and np.mean(scores) >= 0.8
            return ok, f"loss drop {drop:.1f}x, F1 {np.mean(f1s):.3f}, CSSS {np.mean(scores):.3f}"
        self._check("overfit_training", overfit)

    def test_ablation_direction(self):
        print("\n⚖️ Testing Ablation Direction...")

        def ablation():
            base = ModelConfig.from_preset("toy")
            pairs = synthesize_pairs(64, self.seed, base.n_points)
            full, _, samples = self._train(base, pairs)
            no_refine, _, _ = self._train(ModelConfig.from_preset("toy", use_refiner=False), pairs)
            flat, _, _ = self._train(ModelConfig.from_preset("toy", hierarchical=False), pairs)
            err_full, err_plain = coordinate_error(full, samples), coordinate_error(no_refine, samples)
            csss_hier = np.mean([csss(infer(s.cloud, full), s.sequence).total for s in samples])
            csss_flat = np.mean([csss(infer(s.cloud, flat), s.sequence).total for s in samples])
            ok = err_full < err_plain and csss_hier >= csss_flat
            return ok, (f"coord error {err_full:.5f} vs {err_plain:.5f} without refiner, "
                        f"CSSS {csss_hier:.3f} vs {csss_flat:.3f} flat")
        self._check("ablation_direction", ablation)

    # ------------------------------------------------------------------
    # Reporting
    # ------------------------------------------------------------------

    def record_test(self, test_name, passed, details=""):
        """Record test result"""
        self.test_results[test_name] = {
            'passed': bool(passed),
            'details': details,
            'timestamp': datetime.now().isoformat(),
        }
        self.total_tests += 1
        if passed:
            self.passed_tests += 1
        status = "✅ PASS" if passed else "❌ FAIL"
        print(f"   {test_name}: {status} - {details}")

    def generate_audit_report(self) -> bool:
        print("\n" + "=" * 60)
        print("📊 ACCEPTANCE REPORT")
        print("=" * 60)

        success_rate = safe_divide(100.0 * self.passed_tests, self.total_tests)
        print(f"\n🎯 Overall Results:")
        print(f"   ✅ Passed: {self.passed_tests}/{self.total_tests}")
        print(f"   📈 Success Rate: {success_rate:.1f}%")

        report_data = {
            'timestamp': datetime.now().isoformat(),
            'seed': self.seed,
            'with_training': self.with_training,
            'system': get_system_info(),
            'total_tests': self.total_tests,
            'passed_tests': self.passed_tests,
            'success_rate': success_rate,
            'test_results': self.test_results,
        }
        write_json('acceptance_report.json', report_data)
        print(f"\n📄 Detailed report saved to: acceptance_report.json")
        return self.passed_tests == self.total_tests


def main(argv=None) -> int:
    """Run the acceptance audit"""
    parser = argparse.ArgumentParser(description="CAD sequence toolkit acceptance audit")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--with-training", action="store_true", help="include the overfit and ablation runs")
    parser.add_argument("--steps", type=int, default=2000)
    args = parser.parse_args(argv)

    passed = AcceptanceAudit(args.seed, args.with_training, args.steps).run_all_tests()
    logger(f"🎯 FINAL ACCEPTANCE RESULT: {'✅ PASSED' if passed else '❌ FAILED'}")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
