"""Fusing an acoustic and a linguistic stream at four levels.

Feature fusion concatenates the two streams (acoustic dimensions
first) into one stream for a single-trunk model. Early model fusion
gives each modality its own first biLSTM layer and shares the
remaining layers; late model fusion gives each modality its own first
three layers and shares only the last. Decision fusion combines the
predictions of two independently trained models elementwise as
w_a * pred_a + (1 - w_a) * pred_l, with w_a picked by an exhaustive
grid search (0.10 to 0.90, step 0.01) maximizing Dev CCC; ties go to
the smallest weight, and the searched grid is returned as the
optimality certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .corpus import Corpus, gold_reference
from .dsp import FeatureStream, NormStats, normalize_array
from .errors import (
    GridMismatchError,
    ModelFormatError,
    TrainingDivergedError,
    ValidationError,
)
from .metrics import CccReport
from .neural import (
    ModelConfig,
    _as_input,
    _layer_backward,
    _take_block,
    inference_dtype,
    make_layers,
    read_layer_blocks,
    run_layers,
)
from . import neural as _neural

__all__ = [
    "FusionSpec",
    "FusedRegressorModel",
    "DecisionFusedModel",
    "WeightGrid",
    "DecisionSearchResult",
    "fuse_features",
    "build_model_fusion",
    "forward_fused",
    "backward_fused",
    "decision_fuse",
    "search_decision_weight",
    "write_fusion_report",
]

logger = logging.getLogger(__name__)

_SPLIT_INDEX = {"early": 1, "late": -1}


def fuse_features(stream_a: FeatureStream, stream_l: FeatureStream) -> FeatureStream:
    """Concatenate two streams on the grid, acoustic dimensions first."""
    if len(stream_a) != len(stream_l):
        raise GridMismatchError(
            f"cannot fuse streams of different grid lengths: "
            f"{len(stream_a)} vs {len(stream_l)}"
        )
    merged = np.concatenate([stream_a.segments, stream_l.segments], axis=1)
    label = "+".join(p for p in (stream_a.label, stream_l.label) if p)
    return FeatureStream(merged, label=label)


@dataclass(frozen=True)
class FusionSpec:
    """Recipe for a fused architecture: kind plus both branch configs."""

    kind: str
    config_a: ModelConfig
    config_l: ModelConfig
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("early", "late"):
            raise ValidationError(f"fusion kind must be 'early' or 'late', got {self.kind!r}")


@dataclass
class FusedRegressorModel:
    """Two modality branches feeding a shared biLSTM trunk and head."""

    fusion_kind: str
    config_a: ModelConfig
    config_l: ModelConfig
    branch_a: list
    branch_l: list
    shared: list
    out_w: np.ndarray
    out_b: np.ndarray
    norm_a: NormStats
    norm_l: NormStats
    seed: int = 0

    @property
    def kind(self) -> str:
        return self.fusion_kind

    def named_parameters(self):
        for prefix, layers in (("a", self.branch_a), ("l", self.branch_l)):
            for i, layer in enumerate(layers):
                for tag, d in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                    yield f"{prefix}.layer{i}.{tag}.w", d.w
                    yield f"{prefix}.layer{i}.{tag}.u", d.u
                    yield f"{prefix}.layer{i}.{tag}.b", d.b
        base = len(self.branch_a)
        for j, layer in enumerate(self.shared):
            for tag, d in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                yield f"shared.layer{base + j}.{tag}.w", d.w
                yield f"shared.layer{base + j}.{tag}.u", d.u
                yield f"shared.layer{base + j}.{tag}.b", d.b
        yield "out.w", self.out_w
        yield "out.b", self.out_b

    def header_dict(self) -> dict:
        return {
            "kind": self.fusion_kind,
            "input_dim_a": self.config_a.input_dim,
            "widths_a": list(self.config_a.widths),
            "units_are_total_a": self.config_a.units_are_total,
            "seed_a": self.config_a.seed,
            "input_dim_l": self.config_l.input_dim,
            "widths_l": list(self.config_l.widths),
            "units_are_total_l": self.config_l.units_are_total,
            "seed_l": self.config_l.seed,
            "seed": self.seed,
        }

    def block_arrays(self) -> list[np.ndarray]:
        blocks = [self.norm_a.mean, self.norm_a.std, self.norm_l.mean, self.norm_l.std]
        blocks += [arr for _, arr in self.named_parameters()]
        return blocks


def _split_point(kind: str, depth: int) -> int:
    return 1 if kind == "early" else depth - 1


def build_model_fusion(
    kind: str, config_a: ModelConfig, config_l: ModelConfig, seed: int | None = None
) -> FusedRegressorModel:
    """Initialize an early- or late-fusion model from two branch configs.

    Both configs must have the same depth and agree on the widths of the
    layers that end up shared. The reference depth is 4; other depths
    work but are flagged in the log.
    """
    if kind not in ("early", "late"):
        raise ValidationError(f"fusion kind must be 'early' or 'late', got {kind!r}")
    wa = config_a.per_direction_widths()
    wl = config_l.per_direction_widths()
    if len(wa) != len(wl):
        raise ValidationError(
            f"branch configs must have the same depth, got {len(wa)} vs {len(wl)}"
        )
    if len(wa) < 2:
        raise ValidationError("model fusion needs at least two layers")
    if len(wa) != 4:
        logger.warning("fused model built with depth %d (reference depth is 4)", len(wa))
    split = _split_point(kind, len(wa))
    if wa[split:] != wl[split:]:
        raise ValidationError(
            f"shared layer widths must agree, got {wa[split:]} vs {wl[split:]}"
        )
    if seed is None:
        seed = config_a.seed
    rng = np.random.default_rng(seed)
    branch_a = make_layers(rng, config_a.input_dim, wa[:split])
    branch_l = make_layers(rng, config_l.input_dim, wl[:split])
    shared_in = 2 * wa[split - 1] + 2 * wl[split - 1]
    shared = make_layers(rng, shared_in, wa[split:])
    last = 2 * wa[-1]
    sh = 1.0 / np.sqrt(last)
    out_w = rng.uniform(-sh, sh, last)
    return FusedRegressorModel(
        fusion_kind=kind,
        config_a=config_a,
        config_l=config_l,
        branch_a=branch_a,
        branch_l=branch_l,
        shared=shared,
        out_w=out_w,
        out_b=np.zeros(1),
        norm_a=NormStats.identity(config_a.input_dim),
        norm_l=NormStats.identity(config_l.input_dim),
        seed=seed,
    )


def _pair_inputs(model: FusedRegressorModel, pair) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(pair, (tuple, list)) or len(pair) != 2:
        raise ValidationError("a fused model takes (acoustic, linguistic) stream pairs")
    xa = _as_input(model.config_a.input_dim, pair[0])
    xl = _as_input(model.config_l.input_dim, pair[1])
    if xa.shape[0] != xl.shape[0]:
        raise GridMismatchError(
            f"modality streams disagree on grid length: {xa.shape[0]} vs {xl.shape[0]}"
        )
    return xa, xl


def _forward_cached_fused(model: FusedRegressorModel, xa: np.ndarray, xl: np.ndarray):
    za = normalize_array(xa, model.norm_a)
    zl = normalize_array(xl, model.norm_l)
    if _neural._step_counter is not None:
        _neural._step_counter.steps += za.shape[0]
    ya, caches_a = run_layers(model.branch_a, za, need_cache=True)
    yl, caches_l = run_layers(model.branch_l, zl, need_cache=True)
    joint = np.concatenate([ya, yl], axis=1)
    ys, caches_s = run_layers(model.shared, joint, need_cache=True)
    pred = ys @ model.out_w + model.out_b[0]
    cache = (caches_a, caches_l, caches_s, ys, ya.shape[1])
    return pred, cache


def forward_fused(model: FusedRegressorModel, pair) -> np.ndarray:
    """Predictions for one (acoustic, linguistic) stream pair."""
    xa, xl = _pair_inputs(model, pair)
    dtype = inference_dtype()
    za = normalize_array(xa, model.norm_a).astype(dtype, copy=False)
    zl = normalize_array(xl, model.norm_l).astype(dtype, copy=False)
    if _neural._step_counter is not None:
        _neural._step_counter.steps += za.shape[0]
    ya, _ = run_layers(model.branch_a, za, need_cache=False)
    yl, _ = run_layers(model.branch_l, zl, need_cache=False)
    ys, _ = run_layers(model.shared, np.concatenate([ya, yl], axis=1), need_cache=False)
    pred = ys @ model.out_w.astype(dtype, copy=False) + dtype(model.out_b[0])
    return pred.astype(np.float64, copy=False)


def _fused_backward_one(model: FusedRegressorModel, cache, dpred: np.ndarray) -> dict:
    caches_a, caches_l, caches_s, ys, a_dim = cache
    grads = {
        "out.w": ys.T @ dpred,
        "out.b": np.array([dpred.sum()]),
    }
    dz = np.outer(dpred, model.out_w)
    base = len(model.branch_a)
    for j in range(len(model.shared) - 1, -1, -1):
        dz, layer_grads = _layer_backward(model.shared[j], caches_s[j], dz)
        for key, val in layer_grads.items():
            grads[f"shared.layer{base + j}.{key}"] = val
    da = dz[:, :a_dim]
    dl = dz[:, a_dim:]
    for prefix, layers, caches, dcur in (
        ("a", model.branch_a, caches_a, da),
        ("l", model.branch_l, caches_l, dl),
    ):
        for i in range(len(layers) - 1, -1, -1):
            dcur, layer_grads = _layer_backward(layers[i], caches[i], dcur)
            for key, val in layer_grads.items():
                grads[f"{prefix}.layer{i}.{key}"] = val
    return grads


def backward_fused(model: FusedRegressorModel, batch, refs) -> tuple[dict, float]:
    """Batch gradients for a fused model; mirrors the single-model rules."""
    if len(batch) == 0 or len(batch) != len(refs):
        raise ValidationError(
            f"batch and refs must be equal-length and non-empty, got {len(batch)}/{len(refs)}"
        )
    preds = []
    caches = []
    lengths = []
    for pair, ref in zip(batch, refs):
        xa, xl = _pair_inputs(model, pair)
        r = np.asarray(ref, dtype=np.float64)
        if r.ndim != 1 or r.size != xa.shape[0]:
            raise ValidationError(
                f"reference length {r.size} does not match stream length {xa.shape[0]}"
            )
        p, cache = _forward_cached_fused(model, xa, xl)
        preds.append(p)
        caches.append(cache)
        lengths.append(xa.shape[0])
    pred_cat = np.concatenate(preds)
    ref_cat = np.concatenate([np.asarray(r, dtype=np.float64) for r in refs])
    if not np.all(np.isfinite(pred_cat)):
        raise TrainingDivergedError("model produced non-finite predictions")
    loss, dpred_cat = metrics.ccc_loss_grad(pred_cat, ref_cat)
    grads: dict[str, np.ndarray] = {}
    offset = 0
    for cache, n in zip(caches, lengths):
        conv_grads = _fused_backward_one(model, cache, dpred_cat[offset: offset + n])
        offset += n
        for key, val in conv_grads.items():
            if key in grads:
                grads[key] += val
            else:
                grads[key] = val
    return grads, loss


def assemble_fused(header: dict, blob: bytes, offset: int, path: str) -> FusedRegressorModel:
    kind = header["kind"]

    def _config(suffix: str) -> ModelConfig:
        try:
            return ModelConfig(
                input_dim=int(header[f"input_dim_{suffix}"]),
                widths=tuple(int(w) for w in header[f"widths_{suffix}"]),
                seed=int(header.get(f"seed_{suffix}", header.get("seed", 0))),
                units_are_total=bool(header.get(f"units_are_total_{suffix}", False)),
            )
        except (KeyError, TypeError, ValueError):
            raise ModelFormatError(
                f"{path}: header fields for branch {suffix!r} missing or invalid"
            ) from None

    config_a = _config("a")
    config_l = _config("l")
    wa = config_a.per_direction_widths()
    wl = config_l.per_direction_widths()
    if len(wa) != len(wl) or len(wa) < 2:
        raise ModelFormatError(f"{path}: branch depths invalid ({len(wa)} vs {len(wl)})")
    split = _split_point(kind, len(wa))
    mean_a, offset = _take_block(blob, offset, (config_a.input_dim,), path, "norm_a.mean")
    std_a, offset = _take_block(blob, offset, (config_a.input_dim,), path, "norm_a.std")
    mean_l, offset = _take_block(blob, offset, (config_l.input_dim,), path, "norm_l.mean")
    std_l, offset = _take_block(blob, offset, (config_l.input_dim,), path, "norm_l.std")
    branch_a, offset = read_layer_blocks(blob, offset, config_a.input_dim, wa[:split], path, "a.")
    branch_l, offset = read_layer_blocks(blob, offset, config_l.input_dim, wl[:split], path, "l.")
    shared_in = 2 * wa[split - 1] + 2 * wl[split - 1]
    shared, offset = read_layer_blocks(blob, offset, shared_in, wa[split:], path, "shared.")
    last = 2 * wa[-1]
    out_w, offset = _take_block(blob, offset, (last,), path, "out.w")
    out_b, offset = _take_block(blob, offset, (1,), path, "out.b")
    if offset != len(blob):
        raise ModelFormatError(f"{path}: {len(blob) - offset} unexpected trailing bytes")
    return FusedRegressorModel(
        fusion_kind=kind,
        config_a=config_a,
        config_l=config_l,
        branch_a=branch_a,
        branch_l=branch_l,
        shared=shared,
        out_w=out_w.ravel(),
        out_b=out_b.ravel(),
        norm_a=NormStats(mean_a.ravel(), std_a.ravel()),
        norm_l=NormStats(mean_l.ravel(), std_l.ravel()),
        seed=int(header.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# decision fusion

@dataclass(frozen=True)
class WeightGrid:
    """Inclusive weight grid for the decision search."""

    low: float = 0.10
    high: float = 0.90
    step: float = 0.01

    def weights(self) -> list[float]:
        if not (0.0 < self.low <= self.high < 1.0) or self.step <= 0:
            raise ValidationError(
                f"bad weight grid [{self.low}, {self.high}] step {self.step}"
            )
        count = (self.high - self.low) / self.step
        if abs(count - round(count)) > 1e-9:
            raise ValidationError(
                f"step {self.step} does not divide [{self.low}, {self.high}] evenly"
            )
        return [round(self.low + k * self.step, 10) for k in range(int(round(count)) + 1)]


@dataclass
class DecisionFusedModel:
    """Two trained members and the weights combining their predictions."""

    w_a: float
    w_l: float
    model_a: object
    model_l: object

    def __post_init__(self):
        if abs(self.w_a + self.w_l - 1.0) > 1e-9:
            raise ValidationError(f"weights must sum to 1, got {self.w_a} + {self.w_l}")
        if not (0.1 - 1e-9 <= self.w_a <= 0.9 + 1e-9):
            raise ValidationError(f"w_a must lie in [0.1, 0.9], got {self.w_a}")

    def predict(self, stream_a, stream_l) -> np.ndarray:
        pa = _neural.forward(self.model_a, stream_a)
        pl = _neural.forward(self.model_l, stream_l)
        return decision_fuse(pa, pl, self.w_a)


def decision_fuse(pred_a: np.ndarray, pred_l: np.ndarray, w_a: float) -> np.ndarray:
    """Elementwise weighted sum of two prediction series."""
    pa = np.asarray(pred_a, dtype=np.float64)
    pl = np.asarray(pred_l, dtype=np.float64)
    if pa.shape != pl.shape:
        raise ValidationError(f"prediction shapes differ: {pa.shape} vs {pl.shape}")
    if not (0.0 <= w_a <= 1.0):
        raise ValidationError(f"w_a must lie in [0, 1], got {w_a}")
    return w_a * pa + (1.0 - w_a) * pl


@dataclass
class DecisionSearchResult:
    w_a: float
    w_l: float
    dev_report: CccReport
    test_report: CccReport
    grid_scores: list[tuple[float, float]] = field(default_factory=list)


def _split_predictions(model, corpus: Corpus, streams, part: str):
    preds = []
    refs = []
    for cid in corpus.ids_in(part):
        if cid not in streams:
            raise ValidationError(f"no stream for conversation {cid}")
        preds.append(_neural.forward(model, streams[cid]))
        refs.append(gold_reference(corpus.conversations[cid]).values)
    return np.concatenate(preds), np.concatenate(refs)


def search_decision_weight(
    model_a,
    model_l,
    corpus: Corpus,
    streams_a: dict,
    streams_l: dict,
    grid: WeightGrid | None = None,
    combine: str = "predictions",
    z_mult: float = 1.64,
) -> DecisionSearchResult:
    """Exhaustive Dev-side grid search for the decision weight.

    ``combine="predictions"`` (default) scores each candidate weight by
    the CCC of the weighted prediction sum; ``combine="scores"`` instead
    weights the two members' own Dev CCCs. Ties pick the smallest w_a.
    """
    if combine not in ("predictions", "scores"):
        raise ValidationError(f"combine must be 'predictions' or 'scores', got {combine!r}")
    grid = grid or WeightGrid()
    weights = grid.weights()
    dev_a, dev_refs = _split_predictions(model_a, corpus, streams_a, "dev")
    dev_l, _ = _split_predictions(model_l, corpus, streams_l, "dev")
    if combine == "scores":
        score_a = metrics.ccc(dev_a, dev_refs).ccc
        score_l = metrics.ccc(dev_l, dev_refs).ccc
        scores = [w * score_a + (1.0 - w) * score_l for w in weights]
    else:
        scores = [
            metrics.ccc(decision_fuse(dev_a, dev_l, w), dev_refs).ccc for w in weights
        ]
    best_idx = 0
    for k in range(1, len(scores)):
        if scores[k] > scores[best_idx]:
            best_idx = k
    w_a = weights[best_idx]
    dev_report = metrics.ccc_report(decision_fuse(dev_a, dev_l, w_a), dev_refs, z_mult=z_mult)
    test_a, test_refs = _split_predictions(model_a, corpus, streams_a, "test")
    test_l, _ = _split_predictions(model_l, corpus, streams_l, "test")
    test_report = metrics.ccc_report(
        decision_fuse(test_a, test_l, w_a), test_refs, z_mult=z_mult
    )
    return DecisionSearchResult(
        w_a=w_a,
        w_l=round(1.0 - w_a, 10),
        dev_report=dev_report,
        test_report=test_report,
        grid_scores=list(zip(weights, scores)),
    )


def write_fusion_report(path, rows) -> None:
    """CSV of fusion results: level, Dev CCC, Test CCC, Dev-to-Test %.

    ``rows`` is an iterable of (level, dev_ccc, test_ccc).
    """
    lines = ["level,dev,test,diff_pct"]
    for level, dev, test in rows:
        diff = (test - dev) / dev * 100.0 if dev else float("nan")
        lines.append(f"{level},{dev:.4f},{test:.4f},{diff:.1f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
