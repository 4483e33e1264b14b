"""
CAD Sequence Toolkit - Hierarchical Sequence Model
Point encoder, loop-extrusion decoder with type head, routed loop and extrusion
decoders, loop refiner, joint loss, deterministic training and inference
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from cad_core import (
    BOOLEAN_OPS, EXTENT_TYPES, CadSequence, GeneratorSpec, Loop, PrimitiveDelta, QuantizationSpec,
    SketchStep, TokenType,
    dequantize, dequantize_extrusion, generate_random_sequence, quantize_loop, tokenize,
)
from config import MODEL_PRESETS, TRAINING_PRESETS
from geometry import PointCloud, sample_surface
from nn_core import (
    MLP, Adam, DecoderBlock, LayerNorm, Linear, Module, Parameter, Tensor, concat,
    cross_entropy, load_checkpoint, mse, save_checkpoint, softmax, take_rows,
)
from utils import PerformanceTimer, derive_seed, logger

N_TYPES = len(TokenType)
N_EXT_SLOTS = 11
N_LOOP_COORDS = 6
LOSS_COLUMNS = ["step", "total", "L_type", "L_loop", "L_ext", "L_refine"]


class ModelError(Exception):
    """Base class for model errors"""


class DivergenceError(ModelError):
    pass


class EncoderInputError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 512
    d_p: int = 16
    d_z: int = 32
    heads: int = 4
    ff_dim: int = 64
    dropout: float = 0.0
    l_max: int = 24
    n_p_max: int = 8
    bins: int = 256
    decoder_blocks: int = 4
    loop_decoder_blocks: int = 4
    refiner_layers: int = 4
    encoder_points: Tuple[int, ...] = (128, 64, 32, 16)
    encoder_radius: Tuple[float, ...] = (0.1, 0.2, 0.4, 0.8)
    encoder_samples: Tuple[int, ...] = (64, 64, 64, 32)
    encoder_mlp_width: int = 32
    use_refiner: bool = True
    hierarchical: bool = True
    zero_init_heads: bool = False

    def __post_init__(self):
        if self.d_z % self.heads != 0:
            raise ModelError(f"d_z={self.d_z} must be divisible by heads={self.heads}")
        if not (len(self.encoder_points) == len(self.encoder_radius) == len(self.encoder_samples)):
            raise ModelError("encoder schedule lists must have equal length")
        pts = list(self.encoder_points)
        if any(b >= a for a, b in zip(pts, pts[1:])) or pts[0] > self.n_points:
            raise ModelError("encoder point counts must strictly decrease from at most n_points")

    @classmethod
    def from_preset(cls, name: str = "toy", **overrides) -> "ModelConfig":
        if name not in MODEL_PRESETS:
            raise ModelError(f"unknown preset '{name}', expected one of {list(MODEL_PRESETS)}")
        settings = dict(MODEL_PRESETS[name])
        settings.update(overrides)
        return cls.from_dict(settings)

    @classmethod
    def from_dict(cls, settings: Dict[str, Any]) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        values = {k: v for k, v in settings.items() if k in known}
        for key in ("encoder_points", "encoder_radius", "encoder_samples"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key in ("encoder_points", "encoder_radius", "encoder_samples"):
            out[key] = list(out[key])
        return out

    @property
    def n_classes(self) -> int:
        return self.bins + 1

    @property
    def sentinel(self) -> int:
        return self.bins

    @property
    def half_step(self) -> float:
        return 1.0 / (2 * (self.bins - 1))

    @property
    def quantization(self) -> QuantizationSpec:
        return QuantizationSpec(self.bins)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 8
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    steps: int = 2000
    checkpoint_every: int = 500
    log_every: int = 50

    @classmethod
    def from_preset(cls, name: str = "toy", **overrides) -> "TrainingConfig":
        settings = dict(TRAINING_PRESETS.get(name, TRAINING_PRESETS["toy"]))
        settings.update(overrides)
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in settings.items() if k in known})


@dataclass
class ModelState:
    """Configuration plus every learned parameter"""
    config: ModelConfig
    params: Dict[str, np.ndarray]

    def save(self, stem) -> Tuple[Path, Path]:
        return save_checkpoint(stem, self.params, self.config.to_dict())

    @classmethod
    def load(cls, stem) -> "ModelState":
        params, config = load_checkpoint(stem)
        return cls(ModelConfig.from_dict(config), params)


# ---------------------------------------------------------------------------
# Point encoder
# ---------------------------------------------------------------------------

def farthest_point_sample(points: np.ndarray, m: int) -> np.ndarray:
    """Greedy farthest point sampling seeded at index 0; ties go to the lowest index"""
    n = len(points)
    chosen = np.zeros(m, dtype=np.int64)
    dist = np.full(n, np.inf)
    current = 0
    for i in range(m):
        chosen[i] = current
        dist = np.minimum(dist, np.sum((points - points[current]) ** 2, axis=1))
        current = int(np.argmax(dist))
    return chosen


def ball_group(points: np.ndarray, centers: np.ndarray, radius: float, nsample: int) -> np.ndarray:
    """Up to nsample nearest neighbors within radius per center, padded with the nearest one"""
    k = min(nsample, len(points))
    dist, idx = cKDTree(points).query(centers, k=k, distance_upper_bound=radius)
    dist = np.asarray(dist).reshape(len(centers), k)
    idx = np.asarray(idx).reshape(len(centers), k)
    missing = ~np.isfinite(dist)
    idx = np.where(missing, idx[:, :1], idx)
    if k < nsample:
        idx = np.concatenate([idx, np.repeat(idx[:, :1], nsample - k, axis=1)], axis=1)
    return idx


@dataclass
class EncoderPlan:
    """Parameter-free sampling and grouping for one cloud"""
    positions: List[np.ndarray]
    groups: List[np.ndarray]


def build_encoder_plan(points: np.ndarray, config: ModelConfig) -> EncoderPlan:
    if len(points) < config.encoder_points[0]:
        raise EncoderInputError(f"{len(points)} points cannot feed an encoder level of {config.encoder_points[0]}")
    positions = [points]
    groups = []
    current = points
    for m, r, s in zip(config.encoder_points, config.encoder_radius, config.encoder_samples):
        centroids = current[farthest_point_sample(current, m)]
        groups.append(ball_group(current, centroids, r, s))
        positions.append(centroids)
        current = centroids
    return EncoderPlan(positions, groups)


class PointEncoder(Module):
    """Set abstraction levels: grouped relative coordinates and features, shared MLP, max pool"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        """Initialize one shared MLP per level"""
        self.radius = list(config.encoder_radius)
        width = config.encoder_mlp_width
        in_ch = 6
        self.levels = []
        for i in range(len(config.encoder_points)):
            out_ch = config.d_p if i == len(config.encoder_points) - 1 else width
            self.levels.append(MLP([3 + in_ch, width, out_ch], rng))
            in_ch = out_ch

    def __call__(self, plan: EncoderPlan, normals: np.ndarray) -> Tensor:
        features = Tensor(np.hstack([plan.positions[0], normals]))
        for i, level in enumerate(self.levels):
            prev, centers, group = plan.positions[i], plan.positions[i + 1], plan.groups[i]
            rel = (prev[group] - centers[:, None, :]) / self.radius[i]
            grouped = concat([Tensor(rel), features[group]], axis=-1)
            features = level(grouped).max(axis=1)
        return features


# ---------------------------------------------------------------------------
# Training sample
# ---------------------------------------------------------------------------

@dataclass
class TrainingSample:
    cloud: PointCloud
    sequence: CadSequence
    plan: EncoderPlan
    token_targets: np.ndarray
    loop_targets: np.ndarray
    offset_targets: np.ndarray
    offset_mask: np.ndarray
    ext_targets: np.ndarray
    loop_continuous: np.ndarray


def fit_cloud(cloud: PointCloud, n: int) -> PointCloud:
    """Evenly strided subset of exactly n points"""
    if len(cloud) < n:
        raise EncoderInputError(f"cloud has {len(cloud)} points, model expects {n}")
    if len(cloud) == n:
        return cloud
    return cloud.subset(np.linspace(0, len(cloud) - 1, n).round().astype(np.int64))


def loop_targets_for(seq: CadSequence, config: ModelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(classes [L_rho*n_p_max, 6], continuous coords, coordinate mask) with sentinel-padded slots"""
    spec = config.quantization
    classes, coords, mask = [], [], []
    for loop in seq.loops:
        if len(loop.primitives) > config.n_p_max:
            raise ModelError(f"loop with {len(loop.primitives)} primitives exceeds n_p_max={config.n_p_max}")
        q = quantize_loop(loop, spec)
        c = np.full((config.n_p_max, N_LOOP_COORDS), spec.sentinel_index, dtype=np.int64)
        c[:len(q)] = q
        v = np.zeros((config.n_p_max, N_LOOP_COORDS))
        for i, prim in enumerate(loop.primitives):
            v[i] = [*prim.start, *(prim.mid if prim.mid is not None else (0.0, 0.0)), *prim.end]
        classes.append(c)
        coords.append(v)
        mask.append(c != spec.sentinel_index)
    if not classes:
        empty = np.zeros((0, N_LOOP_COORDS))
        return empty.astype(np.int64), empty, empty.astype(bool)
    return np.concatenate(classes), np.concatenate(coords), np.concatenate(mask)


def prepare_sample(cloud: PointCloud, seq: CadSequence, config: ModelConfig) -> TrainingSample:
    """Teacher-forcing targets and the cached encoder plan for one (cloud, sequence) pair"""
    cloud = fit_cloud(cloud, config.n_points)
    tokens = np.array([t.value for t in tokenize(seq, config.l_max)], dtype=np.int64)
    classes, coords, mask = loop_targets_for(seq, config)
    grid = np.where(mask, dequantize(np.minimum(classes, config.bins - 1), config.quantization), 0.0)
    offsets = np.where(mask, coords - grid, 0.0)
    ext = np.array([e.quantized(config.quantization) for e in seq.extrusions],
                   dtype=np.int64).reshape(-1, N_EXT_SLOTS)
    return TrainingSample(
        cloud=cloud, sequence=seq, plan=build_encoder_plan(cloud.points, config),
        token_targets=tokens, loop_targets=classes, offset_targets=offsets, offset_mask=mask,
        ext_targets=ext, loop_continuous=coords,
    )


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

def routing_types(type_logits: np.ndarray) -> List[TokenType]:
    return [TokenType(int(i)) for i in np.argmax(np.asarray(type_logits), axis=-1)]


def route_embeddings(f_pe: Tensor, types, mode: str = "train"
                     ) -> Tuple[Optional[Tensor], Optional[Tensor], List[int], List[int]]:
    """Split token embeddings into loop and extrusion rows in token order, up to the first EOS.

    In train mode `types` are ground-truth TokenTypes (or their ids); in infer
    mode `types` are type logits and the argmax decides.
    """
    if mode == "infer":
        seq_types = routing_types(types)
    elif mode == "train":
        seq_types = [t if isinstance(t, TokenType) else TokenType(int(t)) for t in types]
    else:
        raise ModelError(f"unknown routing mode '{mode}'")
    loop_rows: List[int] = []
    ext_rows: List[int] = []
    for i, t in enumerate(seq_types):
        if t is TokenType.EOS:
            break
        (loop_rows if t is TokenType.LOOP else ext_rows).append(i)
    f_rho = take_rows(f_pe, loop_rows) if loop_rows else None
    f_e = take_rows(f_pe, ext_rows) if ext_rows else None
    return f_rho, f_e, loop_rows, ext_rows


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

@dataclass
class ModelOutputs:
    type_logits: Tensor
    loop_logits: Optional[Tensor] = None
    ext_logits: Optional[Tensor] = None
    offsets: Optional[Tensor] = None
    loop_rows: List[int] = field(default_factory=list)
    ext_rows: List[int] = field(default_factory=list)


@dataclass
class LossBreakdown:
    total: Tensor
    components: Dict[str, float]


class TransCadModel(Module):
    """Hierarchical decoder network; `hierarchical=False` gives the flat single-decoder variant"""

    def __init__(self, config: ModelConfig, seed: int = 0):
        """Initialize every parameter from the seed"""
        rng = np.random.default_rng(seed)
        self.config = config
        self.dropout_rng = np.random.default_rng(derive_seed(seed, 0x5EED))
        d, c, zero = config.d_z, config.n_classes, config.zero_init_heads

        self.encoder = PointEncoder(config, rng)
        self.memory_proj = Linear(config.d_p + 3, d, rng)

        self.token_const = Parameter(rng.normal(0.0, 0.02, (config.l_max, d)))
        self.token_pos = Parameter(rng.normal(0.0, 0.02, (config.l_max, d)))
        self.token_blocks = [DecoderBlock(d, config.heads, config.ff_dim, rng, config.dropout)
                             for _ in range(config.decoder_blocks)]
        self.token_norm = LayerNorm(d)
        self.type_head = MLP([d, d, d, N_TYPES], rng, zero_last=zero)
        self.ext_head = MLP([d, d, d, N_EXT_SLOTS * c], rng, zero_last=zero)

        if config.hierarchical:
            slots = config.n_p_max * config.l_max
            self.slot_const = Parameter(rng.normal(0.0, 0.02, (slots, d)))
            self.slot_pos = Parameter(rng.normal(0.0, 0.02, (slots, d)))
            self.loop_pos = Parameter(rng.normal(0.0, 0.02, (config.l_max, d)))
            self.loop_blocks = [DecoderBlock(d, config.heads, config.ff_dim, rng, config.dropout)
                                for _ in range(config.loop_decoder_blocks)]
            self.loop_norm = LayerNorm(d)
            self.loop_head = Linear(d, N_LOOP_COORDS * c, rng, zero=zero)
            if config.use_refiner:
                dims = [d + N_LOOP_COORDS * c] + [d] * (config.refiner_layers - 1) + [N_LOOP_COORDS]
                self.refiner = MLP(dims, rng, zero_last=zero)
        else:
            self.flat_loop_head = MLP([d, d, d, config.n_p_max * N_LOOP_COORDS * c], rng, zero_last=zero)

        for block in self.modules():
            if hasattr(block, "rng"):
                block.rng = self.dropout_rng

    # -- stages ------------------------------------------------------------

    def encode_points(self, plan: EncoderPlan, normals: np.ndarray) -> Tensor:
        """Per-point features F_p of the last encoder level"""
        return self.encoder(plan, normals)

    def memory(self, plan: EncoderPlan, normals: np.ndarray) -> Tensor:
        features = self.encode_points(plan, normals)
        return self.memory_proj(concat([features, Tensor(plan.positions[-1])], axis=-1))

    def decode_loop_extrusion(self, memory: Tensor) -> Tuple[Tensor, Tensor]:
        """(F_{rho,e} [L_max x d_z], type logits [L_max x 3])"""
        x = self.token_const + self.token_pos
        for block in self.token_blocks:
            x = block(x, memory)
        x = self.token_norm(x)
        return x, self.type_head(x)

    def decode_extrusion(self, f_e: Tensor) -> Tensor:
        """[L_e x 11 x (bins+1)] logits"""
        return self.ext_head(f_e).reshape(f_e.shape[0], N_EXT_SLOTS, self.config.n_classes)

    def decode_loop(self, f_rho: Tensor) -> Tuple[Tensor, Tensor]:
        """(slot embeddings, [(n_p_max*L_rho) x 6 x (bins+1)] logits)"""
        n_loops = f_rho.shape[0]
        slots = self.config.n_p_max * n_loops
        owner = np.repeat(np.arange(n_loops), self.config.n_p_max)
        x = self.slot_const[:slots] + self.slot_pos[:slots] + take_rows(f_rho, owner)
        source = f_rho + self.loop_pos[:n_loops]
        for block in self.loop_blocks:
            x = block(x, source)
        x = self.loop_norm(x)
        logits = self.loop_head(x).reshape(slots, N_LOOP_COORDS, self.config.n_classes)
        return x, logits

    def refine_loops(self, slot_emb: Tensor, loop_logits: Tensor) -> Tensor:
        """Continuous offsets bounded by the quantization half step"""
        slots = loop_logits.shape[0]
        probs = softmax(loop_logits, axis=-1).reshape(slots, N_LOOP_COORDS * self.config.n_classes)
        raw = self.refiner(concat([slot_emb, probs], axis=-1))
        return raw.tanh() * self.config.half_step

    # -- full passes -------------------------------------------------------

    def forward(self, plan: EncoderPlan, normals: np.ndarray, types, mode: str) -> ModelOutputs:
        memory = self.memory(plan, normals)
        f_pe, type_logits = self.decode_loop_extrusion(memory)
        routing = type_logits.data if mode == "infer" else types
        f_rho, f_e, loop_rows, ext_rows = route_embeddings(f_pe, routing, mode)
        out = ModelOutputs(type_logits=type_logits, loop_rows=loop_rows, ext_rows=ext_rows)
        if f_e is not None:
            out.ext_logits = self.decode_extrusion(f_e)
        if f_rho is not None:
            if self.config.hierarchical:
                slot_emb, out.loop_logits = self.decode_loop(f_rho)
                if self.config.use_refiner:
                    out.offsets = self.refine_loops(slot_emb, out.loop_logits)
            else:
                out.loop_logits = self.flat_loop_head(f_rho).reshape(
                    f_rho.shape[0] * self.config.n_p_max, N_LOOP_COORDS, self.config.n_classes)
        return out

    def loss(self, sample: TrainingSample) -> LossBreakdown:
        out = self.forward(sample.plan, sample.cloud.normals, sample.token_targets, "train")
        return total_loss(out, sample, self.config)


def total_loss(out: ModelOutputs, sample: TrainingSample, config: ModelConfig) -> LossBreakdown:
    """Unweighted sum of type, loop, extrusion and refinement losses under teacher forcing"""
    c = config.n_classes
    l_type = cross_entropy(out.type_logits, sample.token_targets)
    zero = Tensor(0.0)

    l_loop = zero
    if out.loop_logits is not None and len(sample.loop_targets):
        rows = out.loop_logits.reshape(-1, c)
        l_loop = cross_entropy(rows, sample.loop_targets.reshape(-1)) * float(N_LOOP_COORDS)

    l_ext = zero
    if out.ext_logits is not None and len(sample.ext_targets):
        rows = out.ext_logits.reshape(-1, c)
        l_ext = cross_entropy(rows, sample.ext_targets.reshape(-1)) * float(N_EXT_SLOTS)

    l_refine = zero
    if out.offsets is not None and config.use_refiner and np.any(sample.offset_mask):
        scale = 1.0 / config.half_step
        l_refine = mse(out.offsets * scale, sample.offset_targets * scale, sample.offset_mask)

    total = l_type + l_loop + l_ext + l_refine
    return LossBreakdown(total, {
        "L_type": float(l_type.data),
        "L_loop": float(l_loop.data),
        "L_ext": float(l_ext.data),
        "L_refine": float(l_refine.data),
    })


# ---------------------------------------------------------------------------
# Decoding to sequences
# ---------------------------------------------------------------------------

def decode_extrusion_classes(logits: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Argmax per slot; continuous slots ignore the sentinel, categoricals use their own range"""
    classes = np.argmax(logits[:, :9, :config.bins], axis=-1)
    op = np.argmax(logits[:, 9, :len(BOOLEAN_OPS)], axis=-1)
    extent = np.argmax(logits[:, 10, :len(EXTENT_TYPES)], axis=-1)
    return np.concatenate([classes, op[:, None], extent[:, None]], axis=1)


def decode_loop_coordinates(logits: np.ndarray, offsets: Optional[np.ndarray],
                            config: ModelConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(classes, continuous coordinates): dequantized argmax plus refiner offsets off-sentinel"""
    classes = np.argmax(logits, axis=-1)
    valid = classes != config.sentinel
    coords = np.where(valid, dequantize(np.minimum(classes, config.bins - 1), config.quantization), -1.0)
    if offsets is not None:
        coords = np.where(valid, np.clip(coords + offsets, 0.0, 1.0), coords)
    return classes, coords


def _loops_from_slots(classes: np.ndarray, coords: np.ndarray, config: ModelConfig):
    loops = []
    for k in range(len(classes) // config.n_p_max):
        prims = []
        for row_c, row_v in zip(classes[k * config.n_p_max:(k + 1) * config.n_p_max],
                                coords[k * config.n_p_max:(k + 1) * config.n_p_max]):
            if config.sentinel in (row_c[0], row_c[1], row_c[4], row_c[5]):
                continue
            mid = None if config.sentinel in (row_c[2], row_c[3]) else (float(row_v[2]), float(row_v[3]))
            prims.append(PrimitiveDelta((float(row_v[0]), float(row_v[1])), mid,
                                        (float(row_v[4]), float(row_v[5]))))
        loops.append(Loop(tuple(prims)))
    return loops


def outputs_to_sequence(out: ModelOutputs, config: ModelConfig) -> CadSequence:
    """Assemble steps in token order: loops gather until an extrusion token closes the sketch"""
    loops = []
    if out.loop_logits is not None:
        offsets = out.offsets.data if out.offsets is not None else None
        classes, coords = decode_loop_coordinates(out.loop_logits.data, offsets, config)
        loops = _loops_from_slots(classes, coords, config)
    extrusions = []
    if out.ext_logits is not None:
        ext_classes = decode_extrusion_classes(out.ext_logits.data, config)
        extrusions = [dequantize_extrusion(row, config.quantization) for row in ext_classes]

    order = sorted([(r, "L") for r in out.loop_rows] + [(r, "E") for r in out.ext_rows])
    steps: List[SketchStep] = []
    pending = []
    li = ei = 0
    for _, kind in order:
        if kind == "L":
            pending.append(loops[li])
            li += 1
        else:
            steps.append(SketchStep(tuple(pending), extrusions[ei]))
            pending = []
            ei += 1
    if pending:
        steps.append(SketchStep(tuple(pending), None))
    return CadSequence(tuple(steps), config.quantization)


def build_model(state: ModelState) -> TransCadModel:
    model = TransCadModel(state.config)
    model.load_state_dict(state.params)
    return model.eval()


def infer(cloud: PointCloud, state, return_outputs: bool = False):
    """Predicted sequence for a cloud (possibly invalid); `state` is a ModelState or a built model"""
    model = state if isinstance(state, TransCadModel) else build_model(state)
    model.eval()
    cloud = fit_cloud(cloud, model.config.n_points)
    plan = build_encoder_plan(cloud.points, model.config)
    out = model.forward(plan, cloud.normals, None, "infer")
    seq = outputs_to_sequence(out, model.config)
    return (seq, out) if return_outputs else seq


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def synthesize_pairs(count: int, seed: int, n_points: int,
                     spec: Optional[GeneratorSpec] = None) -> List[Tuple[PointCloud, CadSequence]]:
    """Deterministic (cloud, sequence) pairs from the synthetic generator"""
    pairs = []
    for i in range(count):
        s = derive_seed(seed, i)
        seq = generate_random_sequence(s, spec)
        pairs.append((sample_surface(seq, n_points, s), seq))
    return pairs


def _checkpoint_stem(out_dir: Path, step: int) -> Path:
    return out_dir / f"checkpoint_{step:06d}"


def train(dataset: Sequence, config: ModelConfig, seed: int = 0,
          training: Optional[TrainingConfig] = None, init_state: Optional[ModelState] = None,
          out_dir=None) -> Tuple[ModelState, pd.DataFrame]:
    """Deterministic teacher-forced training; returns the final state and the loss curve"""
    training = training or TrainingConfig()
    samples = [s if isinstance(s, TrainingSample) else prepare_sample(s[0], s[1], config) for s in dataset]
    if not samples:
        raise ModelError("training needs at least one sample")

    model = TransCadModel(config, seed)
    if init_state is not None:
        model.load_state_dict(init_state.params)
        logger("🔄 Fine-tuning from the provided state", "DEBUG")
    model.train()
    optimizer = Adam(model.parameters(), training.learning_rate, training.warmup_steps)
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir) if out_dir is not None else None

    curve: List[Dict[str, float]] = []
    queue: List[int] = []
    batch_size = min(training.batch_size, len(samples))
    with PerformanceTimer(f"training {training.steps} steps", "INFO"):
        for step in range(1, training.steps + 1):
            if len(queue) < batch_size:
                queue.extend(int(i) for i in rng.permutation(len(samples)))
            batch, queue = queue[:batch_size], queue[batch_size:]

            optimizer.zero_grad()
            parts = [model.loss(samples[i]) for i in batch]
            total = parts[0].total
            for p in parts[1:]:
                total = total + p.total
            total = total * (1.0 / len(parts))
            value = float(total.data)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} at step {step}")
            total.backward()
            optimizer.step()

            row = {"step": step, "total": value}
            for name in ("L_type", "L_loop", "L_ext", "L_refine"):
                row[name] = float(np.mean([p.components[name] for p in parts]))
            curve.append(row)
            if step % training.log_every == 0 or step == 1:
                logger(f"🔄 step {step}/{training.steps} loss {value:.4f}", "DEBUG")
            if out_dir is not None and training.checkpoint_every and step % training.checkpoint_every == 0:
                ModelState(config, model.state_dict()).save(_checkpoint_stem(out_dir, step))

    state = ModelState(config, model.state_dict())
    frame = pd.DataFrame(curve, columns=LOSS_COLUMNS)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        state.save(out_dir / "model")
        frame.to_csv(out_dir / "loss_curve.csv", index=False, float_format="%.9g")
    return state, frame


def uniform_init_loss(sample: TrainingSample, config: ModelConfig) -> float:
    """Analytic teacher-forced loss of uniform logits"""
    value = math.log(N_TYPES)
    if len(sample.loop_targets):
        value += N_LOOP_COORDS * math.log(config.n_classes)
    if len(sample.ext_targets):
        value += N_EXT_SLOTS * math.log(config.n_classes)
    return value


def coordinate_error(state, samples: Sequence[TrainingSample]) -> float:
    """Mean |predicted - true| loop coordinate over non-sentinel slots, GT-routed"""
    model = state if isinstance(state, TransCadModel) else build_model(state)
    model.eval()
    errors = []
    for s in samples:
        out = model.forward(s.plan, s.cloud.normals, s.token_targets, "train")
        if out.loop_logits is None:
            continue
        offsets = out.offsets.data if out.offsets is not None else None
        _, coords = decode_loop_coordinates(out.loop_logits.data, offsets, model.config)
        errors.append(np.abs(coords - s.loop_continuous)[s.offset_mask])
    return float(np.mean(np.concatenate(errors))) if errors else 0.0
