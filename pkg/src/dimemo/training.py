"""Training loop, seed sweeps, and the per-annotator protocol.

Training minimizes 1 - CCC over concatenated conversation batches with
Adam, evaluates the Dev split after every epoch, and returns the
parameter snapshot of the best-Dev epoch (earliest epoch wins ties)
together with a record of the run. Conversations are never padded: a
batch is processed conversation by conversation and the gradients of
the shared concatenated loss are summed.

The reference signal is either the gold standard (mean of all
annotator tracks) or a single annotator's track. The per-annotator
protocol trains one model per annotator and scores each against its
own annotator and against the gold standard, summarizing with the mean
and the coefficient of variation; a seed sweep repeats one training
under different seeds and reports the spread of Test CCCs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import fusion as _fusion
from . import metrics
from . import neural as _neural
from .corpus import Conversation, Corpus, gold_reference
from .dsp import fit_norm
from .errors import MissingDataError, TrainingDivergedError, ValidationError
from .fusion import FusedRegressorModel, FusionSpec, build_model_fusion
from .metrics import CccReport
from .neural import (
    ModelConfig,
    RegressorModel,
    init_adam,
    init_model,
    restore_parameters,
    snapshot_parameters,
)

__all__ = [
    "TrainConfig",
    "TrainRecord",
    "SweepResult",
    "PerAnnotatorEntry",
    "PerAnnotatorResult",
    "train",
    "evaluate",
    "seed_sweep",
    "per_annotator_protocol",
    "write_train_record",
    "write_sweep_result",
    "write_annotator_table",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the architecture lives in ModelConfig."""

    epochs: int = 50
    batch_size: int = 8
    lr: float = 0.001
    shuffle: bool = True
    seed: int = 0
    reference: str = "gold"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.reference != "gold" and not self.reference.startswith("annotator:"):
            raise ValidationError(
                f"reference must be 'gold' or 'annotator:<id>', got {self.reference!r}"
            )


@dataclass
class TrainRecord:
    """Per-epoch Dev CCC, the selected epoch, and the final Test report.

    Wall time is informational only and is deliberately left out of the
    CSV serialization so identical runs produce identical files.
    """

    dev_ccc: list[float]
    best_epoch: int
    test_report: CccReport
    wall_time: float = 0.0


@dataclass
class SweepResult:
    seeds: list[int]
    test_cccs: list[float]
    min: float
    max: float
    mean: float
    std: float


@dataclass
class PerAnnotatorEntry:
    annotator: str
    dev: CccReport
    test: CccReport


@dataclass
class PerAnnotatorResult:
    """Scores per annotator-specific model, against two reference kinds.

    ``individual`` evaluates each model against its own annotator;
    ``averaged`` evaluates the same models against the gold standard.
    """

    individual: list[PerAnnotatorEntry] = field(default_factory=list)
    averaged: list[PerAnnotatorEntry] = field(default_factory=list)

    def summary(self, half: str, part: str) -> tuple[float, float]:
        entries = getattr(self, half)
        scores = [getattr(e, part).ccc for e in entries]
        return float(np.mean(scores)), metrics.coefficient_of_variation(scores)


def reference_track(conversation: Conversation, policy: str) -> np.ndarray:
    """Resolve a reference policy against one conversation."""
    if policy == "gold":
        return gold_reference(conversation).values
    if policy.startswith("annotator:"):
        name = policy.split(":", 1)[1]
        if name not in conversation.annotations:
            raise MissingDataError(
                f"conversation {conversation.id} has no annotator {name!r}"
            )
        return conversation.annotations[name].values
    raise ValidationError(f"unknown reference policy {policy!r}")


def _make_model(model_spec, seed: int | None = None):
    if isinstance(model_spec, ModelConfig):
        if seed is not None:
            model_spec = replace(model_spec, seed=seed)
        return init_model(model_spec)
    if isinstance(model_spec, FusionSpec):
        if seed is not None:
            model_spec = replace(model_spec, seed=seed)
        chosen = model_spec.seed if model_spec.seed is not None else None
        return build_model_fusion(
            model_spec.kind, model_spec.config_a, model_spec.config_l, seed=chosen
        )
    if hasattr(model_spec, "named_parameters"):
        if seed is not None:
            raise ValidationError(
                "cannot re-seed an already-built model; pass a config instead"
            )
        return model_spec
    raise ValidationError(
        f"model_spec must be a ModelConfig, FusionSpec, or model, got {type(model_spec)!r}"
    )


def _stream_for(streams: dict, cid: str, fused: bool):
    if cid not in streams:
        raise MissingDataError(f"no feature stream for conversation {cid}")
    entry = streams[cid]
    if fused and not (isinstance(entry, (tuple, list)) and len(entry) == 2):
        raise ValidationError(
            f"conversation {cid}: fused training needs (acoustic, linguistic) pairs"
        )
    if not fused and isinstance(entry, (tuple, list)):
        raise ValidationError(
            f"conversation {cid}: single-modality training got a stream pair"
        )
    return entry


def _forward_any(model, entry) -> np.ndarray:
    if isinstance(model, FusedRegressorModel):
        return _fusion.forward_fused(model, entry)
    return _neural.forward(model, entry)


def _backward_any(model, batch, refs):
    if isinstance(model, FusedRegressorModel):
        return _fusion.backward_fused(model, batch, refs)
    return _neural.backward(model, batch, refs)


def _fit_norms(model, streams: dict, train_ids: list[str]) -> None:
    fused = isinstance(model, FusedRegressorModel)
    entries = [_stream_for(streams, cid, fused) for cid in train_ids]
    if fused:
        model.norm_a = fit_norm([e[0] for e in entries])
        model.norm_l = fit_norm([e[1] for e in entries])
    else:
        model.norm = fit_norm(entries)


def _concat_predictions(model, corpus: Corpus, streams: dict, part: str, policy: str):
    fused = isinstance(model, FusedRegressorModel)
    preds = []
    refs = []
    for cid in corpus.ids_in(part):
        conv = corpus.conversations[cid]
        preds.append(_forward_any(model, _stream_for(streams, cid, fused)))
        refs.append(reference_track(conv, policy))
    if not preds:
        raise ValidationError(f"split {part!r} is empty")
    return np.concatenate(preds), np.concatenate(refs)


def evaluate(
    model,
    corpus: Corpus,
    streams: dict,
    part: str = "test",
    reference: str = "gold",
    z_mult: float = 1.64,
) -> CccReport:
    """CCC with confidence interval over a split's concatenated segments."""
    preds, refs = _concat_predictions(model, corpus, streams, part, reference)
    return metrics.ccc_report(preds, refs, z_mult=z_mult)


def train(corpus: Corpus, streams: dict, config: TrainConfig, model_spec):
    """Train on the corpus's train split; returns (model, TrainRecord).

    ``model_spec`` is a ModelConfig, a FusionSpec, or an initialized
    model. Normalization statistics are fitted on the train split and
    embedded in the model; the returned model carries the parameters of
    the epoch with the best Dev CCC.
    """
    start = time.perf_counter()
    config.validate()
    model = _make_model(model_spec)
    fused = isinstance(model, FusedRegressorModel)
    train_ids = corpus.ids_in("train")
    if not train_ids:
        raise ValidationError("train split is empty")
    if not corpus.ids_in("dev") or not corpus.ids_in("test"):
        raise ValidationError("dev and test splits must be non-empty")
    _fit_norms(model, streams, train_ids)
    refs = {
        cid: reference_track(corpus.conversations[cid], config.reference)
        for cid in train_ids
    }
    rng = np.random.default_rng(config.seed)
    adam = init_adam(model, lr=config.lr)
    dev_history: list[float] = []
    best_score = -np.inf
    best_epoch = 0
    best_snapshot = None
    for epoch in range(1, config.epochs + 1):
        order = list(train_ids)
        if config.shuffle:
            order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        try:
            for lo in range(0, len(order), config.batch_size):
                chunk = order[lo: lo + config.batch_size]
                batch = [_stream_for(streams, cid, fused) for cid in chunk]
                grads, loss = _backward_any(model, batch, [refs[cid] for cid in chunk])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss {loss}")
                _neural.adam_step(model, grads, adam)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"epoch {epoch}: {exc}", epoch=epoch) from None
        dev_preds, dev_refs = _concat_predictions(
            model, corpus, streams, "dev", config.reference
        )
        dev_score = metrics.ccc(dev_preds, dev_refs).ccc
        dev_history.append(dev_score)
        if dev_score > best_score:
            best_score = dev_score
            best_epoch = epoch
            best_snapshot = snapshot_parameters(model)
    restore_parameters(model, best_snapshot)
    test_report = evaluate(model, corpus, streams, "test", config.reference)
    record = TrainRecord(
        dev_ccc=dev_history,
        best_epoch=best_epoch,
        test_report=test_report,
        wall_time=time.perf_counter() - start,
    )
    return model, record


def seed_sweep(
    corpus: Corpus, streams: dict, config: TrainConfig, model_spec, seeds
) -> SweepResult:
    """Independent full trainings differing only in seed.

    Each seed drives both the parameter initialization and the batch
    shuffling of its run.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValidationError(f"need at least 2 seeds, got {len(seeds)}")
    if not isinstance(model_spec, (ModelConfig, FusionSpec)):
        raise ValidationError("seed_sweep needs a ModelConfig or FusionSpec")
    scores = []
    for seed in seeds:
        run_config = replace(config, seed=seed)
        _, record = train(corpus, streams, run_config, _spec_with_seed(model_spec, seed))
        scores.append(record.test_report.ccc)
    arr = np.asarray(scores)
    return SweepResult(
        seeds=seeds,
        test_cccs=scores,
        min=float(arr.min()),
        max=float(arr.max()),
        mean=float(arr.mean()),
        std=float(arr.std()),
    )


def _spec_with_seed(model_spec, seed: int):
    if isinstance(model_spec, ModelConfig):
        return replace(model_spec, seed=seed)
    return replace(model_spec, seed=seed)


def per_annotator_protocol(
    corpus: Corpus, streams: dict, config: TrainConfig, model_spec
) -> PerAnnotatorResult:
    """Train one model per annotator; score against self and gold.

    All runs share the same seeds, so score spread isolates reference
    disagreement. Requires every conversation to carry the same set of
    at least two annotators.
    """
    if not isinstance(model_spec, (ModelConfig, FusionSpec)):
        raise ValidationError("per_annotator_protocol needs a ModelConfig or FusionSpec")
    all_ids = sorted(corpus.conversations)
    if not all_ids:
        raise ValidationError("corpus is empty")
    annotators = sorted(corpus.conversations[all_ids[0]].annotations)
    if len(annotators) < 2:
        raise ValidationError(f"need at least 2 annotators, got {len(annotators)}")
    for cid in all_ids:
        if sorted(corpus.conversations[cid].annotations) != annotators:
            raise ValidationError(
                f"conversation {cid} has a different annotator set"
            )
    result = PerAnnotatorResult()
    for name in annotators:
        policy = f"annotator:{name}"
        model, _ = train(corpus, streams, replace(config, reference=policy), model_spec)
        result.individual.append(PerAnnotatorEntry(
            annotator=name,
            dev=evaluate(model, corpus, streams, "dev", policy),
            test=evaluate(model, corpus, streams, "test", policy),
        ))
        result.averaged.append(PerAnnotatorEntry(
            annotator=name,
            dev=evaluate(model, corpus, streams, "dev", "gold"),
            test=evaluate(model, corpus, streams, "test", "gold"),
        ))
    return result


# ---------------------------------------------------------------------------
# serialization

def write_train_record(record: TrainRecord, path) -> None:
    """CSV of per-epoch Dev CCC plus a summary comment line.

    Bit-identical across identical runs: full-precision floats, no
    timestamps.
    """
    lines = ["epoch,dev_ccc"]
    for epoch, score in enumerate(record.dev_ccc, start=1):
        lines.append(f"{epoch},{score!r}")
    rep = record.test_report
    lines.append(
        f"# best_epoch={record.best_epoch},test_ccc={rep.ccc!r},"
        f"test_ci_low={rep.ci_low!r},test_ci_high={rep.ci_high!r},n={rep.n}"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_result(result: SweepResult, path) -> None:
    lines = ["seed,test_ccc"]
    for seed, score in zip(result.seeds, result.test_cccs):
        lines.append(f"{seed},{score!r}")
    lines.append(
        f"# min={result.min!r},max={result.max!r},mean={result.mean!r},std={result.std!r}"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_annotator_table(result: PerAnnotatorResult, path) -> None:
    """One row per (reference kind, annotator), plus AVG and CV rows."""
    lines = [
        "reference,annotator,dev_ccc,dev_ci_low,dev_ci_high,"
        "test_ccc,test_ci_low,test_ci_high"
    ]
    for half in ("individual", "averaged"):
        for entry in getattr(result, half):
            d, t = entry.dev, entry.test
            lines.append(
                f"{half},{entry.annotator},{d.ccc:.4f},{d.ci_low:.4f},{d.ci_high:.4f},"
                f"{t.ccc:.4f},{t.ci_low:.4f},{t.ci_high:.4f}"
            )
        for stat_idx, stat in enumerate(("AVG", "CV")):
            dev_stats = result.summary(half, "dev")
            test_stats = result.summary(half, "test")
            lines.append(
                f"{half},{stat},{dev_stats[stat_idx]:.4f},,,"
                f"{test_stats[stat_idx]:.4f},,"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
