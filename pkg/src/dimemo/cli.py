"""Command line front-end.

Subcommands cover the full pipeline: ``synth`` (generate a corpus),
``features`` (extract MFCC or synthetic-channel streams), ``train``,
``eval``, ``fuse`` (all four fusion strategies), ``sweep`` (seed
variability), ``annotators`` (per-annotator protocol), and ``lingua``
(orality dynamics). Every invocation writes a RunManifest JSON next to
its primary output with the exact options, inputs, outputs, and
package version needed to reproduce it. Package errors print one
machine-parsable ``<class>: <message>`` line on stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from . import corpus as corpus_mod
from . import dsp, embeddings, fusion, lingua, metrics, neural, training
from .errors import DimemoError, MissingDataError, ValidationError

__all__ = ["main"]


def _manifest_path(out: Path) -> Path:
    if out.is_dir():
        return out / "manifest.json"
    return Path(str(out) + ".manifest.json")


def _write_manifest(command: str, args: argparse.Namespace, out: Path,
                    inputs: list[str], outputs: list[str], started: float) -> None:
    options = {
        k: v for k, v in vars(args).items()
        if k != "func" and not k.startswith("_") and isinstance(v, (str, int, float, bool, list, type(None)))
    }
    manifest = {
        "command": command,
        "options": options,
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "precision": os.environ.get("DIMEMO_PRECISION", "f64"),
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    path = _manifest_path(out)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_widths(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValidationError(f"bad widths {text!r}; expected comma-separated integers") from None
    if not widths:
        raise ValidationError("widths must name at least one layer")
    return widths


def _stream_template(corpus_dir: Path, modality: str) -> str:
    if modality == "mfcc":
        return str(corpus_dir / "features" / "mfcc" / "{id}.fstm")
    if modality.startswith("stream:"):
        template = modality.split(":", 1)[1]
        if "{id}" not in template:
            raise ValidationError(
                f"stream template {template!r} must contain the {{id}} placeholder"
            )
        return template
    raise ValidationError(
        f"modality must be 'mfcc' or 'stream:<path-template>', got {modality!r}"
    )


def _load_streams(corpus: corpus_mod.Corpus, corpus_dir: Path, modality: str,
                  ids, expected_dim: int | None = None) -> dict:
    template = _stream_template(corpus_dir, modality)
    streams = {}
    for cid in ids:
        conv = corpus.conversations[cid]
        path = Path(template.format(id=cid))
        streams[cid] = embeddings.load_stream(path, expected_dim=expected_dim, grid=conv.grid)
        if expected_dim is None:
            expected_dim = streams[cid].dim
    return streams


def _all_ids(corpus: corpus_mod.Corpus) -> list[str]:
    return corpus.ids_in("train") + corpus.ids_in("dev") + corpus.ids_in("test")


def _train_config(args: argparse.Namespace) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        shuffle=not getattr(args, "no_shuffle", False),
        seed=args.seed,
        reference=getattr(args, "reference", "gold"),
    )


def _add_train_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--reference", default="gold",
                     help="gold or annotator:<id> (default: gold)")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--epochs", type=int, default=50)
    sub.add_argument("--batch", type=int, default=8)
    sub.add_argument("--lr", type=float, default=0.001)
    sub.add_argument("--widths", default="200,64,32,32",
                     help="per-direction layer widths, comma-separated")
    sub.add_argument("--no-shuffle", action="store_true",
                     help="keep conversation order fixed across epochs")


# ---------------------------------------------------------------------------
# commands

def _cmd_synth(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    spec = corpus_mod.SyntheticSpec(
        seed=args.seed,
        train_count=args.train,
        dev_count=args.dev,
        test_count=args.test,
        duration_mean=args.duration_mean,
        duration_min=args.duration_min,
        duration_max=args.duration_max,
        annotator_noise=args.annotator_noise,
        acoustic_noise=args.acoustic_noise,
        linguistic_noise=args.linguistic_noise,
        drops_per_minute=args.drops_per_minute,
        with_audio=args.audio,
    )
    corpus = corpus_mod.generate_synthetic(spec)
    out = Path(args.out)
    corpus_mod.save_corpus(corpus, out)
    outputs = [str(out / cid) for cid in corpus.conversations]
    _write_manifest("synth", args, out, [], outputs + [str(out / "split.json")], started)
    print(f"wrote {len(corpus.conversations)} conversations to {out}")
    return 0


def _cmd_features(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    kind = args.kind
    if kind not in ("mfcc", "synth:acoustic", "synth:linguistic"):
        raise ValidationError(
            f"kind must be mfcc, synth:acoustic, or synth:linguistic, got {kind!r}"
        )
    out = Path(args.out) if args.out else corpus_dir / "features" / kind.replace(":", "-")
    out.mkdir(parents=True, exist_ok=True)
    ids = _all_ids(corpus)

    def _extract(item) -> str:
        idx, cid = item
        conv = corpus.conversations[cid]
        if kind == "mfcc":
            if conv.audio is None:
                raise MissingDataError(f"conversation {cid} has no audio for MFCC")
            frames = dsp.mfcc(conv.audio, conv.sample_rate)
            stream = dsp.aggregate_to_segments(frames, conv.duration, label="mfcc")
        else:
            channel = kind.split(":", 1)[1]
            stream = embeddings.export_synthetic_modality(
                conv, channel, dim=args.dim, noise=args.noise,
                seed=args.seed * 1_000_003 + idx,
            )
        path = out / f"{cid}.fstm"
        dsp.save_stream(stream, path)
        return str(path)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outputs = list(pool.map(_extract, enumerate(ids)))
    else:
        outputs = [_extract(item) for item in enumerate(ids)]
    _write_manifest("features", args, out, [str(corpus_dir)], outputs, started)
    print(f"wrote {len(outputs)} streams to {out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    streams = _load_streams(corpus, corpus_dir, args.modality, _all_ids(corpus))
    input_dim = next(iter(streams.values())).dim
    model_config = neural.ModelConfig(
        input_dim=input_dim, widths=_parse_widths(args.widths), seed=args.seed
    )
    model, record = training.train(corpus, streams, _train_config(args), model_config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    neural.save_model(model, out)
    record_path = Path(str(out) + ".record.csv")
    training.write_train_record(record, record_path)
    _write_manifest("train", args, out, [str(corpus_dir)],
                    [str(out), str(record_path)], started)
    rep = record.test_report
    print(
        f"best dev ccc {max(record.dev_ccc):.4f} at epoch {record.best_epoch}; "
        f"test ccc {rep.ccc:.4f} [{rep.ci_low:.4f}; {rep.ci_high:.4f}]"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    model = neural.load_model(args.model)
    ids = corpus.ids_in(args.split)
    if isinstance(model, fusion.FusedRegressorModel):
        if not (args.modality_a and args.modality_l):
            raise ValidationError(
                "evaluating a fused model needs --modality-a and --modality-l"
            )
        streams_a = _load_streams(corpus, corpus_dir, args.modality_a, ids,
                                  expected_dim=model.config_a.input_dim)
        streams_l = _load_streams(corpus, corpus_dir, args.modality_l, ids,
                                  expected_dim=model.config_l.input_dim)
        streams = {cid: (streams_a[cid], streams_l[cid]) for cid in ids}
    else:
        if not args.modality:
            raise ValidationError("evaluating a single model needs --modality")
        streams = _load_streams(corpus, corpus_dir, args.modality, ids,
                                expected_dim=model.config.input_dim)
    report = training.evaluate(model, corpus, streams, args.split, args.reference)
    out = Path(args.out)
    name = f"{Path(args.model).stem}-{args.split}"
    metrics.write_ccc_reports(out, [(name, report)])
    _write_manifest("eval", args, out, [str(corpus_dir), str(args.model)], [str(out)], started)
    print(f"{name}: ccc {report.ccc:.4f} [{report.ci_low:.4f}; {report.ci_high:.4f}] n={report.n}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    ids = _all_ids(corpus)
    streams_a = _load_streams(corpus, corpus_dir, args.modality_a, ids)
    streams_l = _load_streams(corpus, corpus_dir, args.modality_l, ids)
    dim_a = next(iter(streams_a.values())).dim
    dim_l = next(iter(streams_l.values())).dim
    widths = _parse_widths(args.widths)
    config = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    report_rows: list[tuple[str, float, float]] = []

    def _dev_test(model, streams) -> tuple[float, float]:
        dev = training.evaluate(model, corpus, streams, "dev", args.reference)
        test = training.evaluate(model, corpus, streams, "test", args.reference)
        return dev.ccc, test.ccc

    if args.kind == "feature":
        fused_streams = {
            cid: fusion.fuse_features(streams_a[cid], streams_l[cid]) for cid in ids
        }
        model_config = neural.ModelConfig(
            input_dim=dim_a + dim_l, widths=widths, seed=args.seed
        )
        model, _ = training.train(corpus, fused_streams, config, model_config)
        model_path = out / "feature.mdl"
        neural.save_model(model, model_path)
        outputs.append(str(model_path))
        report_rows.append(("feature", *_dev_test(model, fused_streams)))
    elif args.kind in ("early", "late"):
        spec = fusion.FusionSpec(
            kind=args.kind,
            config_a=neural.ModelConfig(input_dim=dim_a, widths=widths, seed=args.seed),
            config_l=neural.ModelConfig(input_dim=dim_l, widths=widths, seed=args.seed),
            seed=args.seed,
        )
        pairs = {cid: (streams_a[cid], streams_l[cid]) for cid in ids}
        model, _ = training.train(corpus, pairs, config, spec)
        model_path = out / f"{args.kind}.mdl"
        neural.save_model(model, model_path)
        outputs.append(str(model_path))
        report_rows.append((args.kind, *_dev_test(model, pairs)))
    elif args.kind == "decision":
        config_a = neural.ModelConfig(input_dim=dim_a, widths=widths, seed=args.seed)
        config_l = neural.ModelConfig(input_dim=dim_l, widths=widths, seed=args.seed)
        model_a, _ = training.train(corpus, streams_a, config, config_a)
        model_l, _ = training.train(corpus, streams_l, config, config_l)
        result = fusion.search_decision_weight(
            model_a, model_l, corpus, streams_a, streams_l
        )
        for tag, model in (("acoustic", model_a), ("linguistic", model_l)):
            model_path = out / f"decision-{tag}.mdl"
            neural.save_model(model, model_path)
            outputs.append(str(model_path))
        grid_path = out / "decision.grid.csv"
        with open(grid_path, "w", encoding="utf-8") as fh:
            fh.write("w_a,dev_score\n")
            for w, score in result.grid_scores:
                fh.write(f"{w},{score!r}\n")
        outputs.append(str(grid_path))
        report_rows.append(("decision", result.dev_report.ccc, result.test_report.ccc))
        print(f"decision weights: w_a={result.w_a:.2f} w_l={result.w_l:.2f}")
    else:
        raise ValidationError(
            f"kind must be feature, early, late, or decision, got {args.kind!r}"
        )
    report_path = out / "fusion.csv"
    fusion.write_fusion_report(report_path, report_rows)
    outputs.append(str(report_path))
    _write_manifest("fuse", args, out, [str(corpus_dir)], outputs, started)
    for level, dev, test in report_rows:
        print(f"{level}: dev {dev:.4f} test {test:.4f}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    streams = _load_streams(corpus, corpus_dir, args.modality, _all_ids(corpus))
    input_dim = next(iter(streams.values())).dim
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"bad seeds {args.seeds!r}; expected comma-separated integers") from None
    model_config = neural.ModelConfig(input_dim=input_dim, widths=_parse_widths(args.widths))
    result = training.seed_sweep(corpus, streams, _train_config(args), model_config, seeds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    training.write_sweep_result(result, out)
    _write_manifest("sweep", args, out, [str(corpus_dir)], [str(out)], started)
    print(
        f"test ccc over {len(seeds)} seeds: min {result.min:.4f} max {result.max:.4f} "
        f"mean {result.mean:.4f} std {result.std:.4f}"
    )
    return 0


def _cmd_annotators(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    streams = _load_streams(corpus, corpus_dir, args.modality, _all_ids(corpus))
    input_dim = next(iter(streams.values())).dim
    model_config = neural.ModelConfig(
        input_dim=input_dim, widths=_parse_widths(args.widths), seed=args.seed
    )
    result = training.per_annotator_protocol(
        corpus, streams, _train_config(args), model_config
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    training.write_annotator_table(result, out)
    _write_manifest("annotators", args, out, [str(corpus_dir)], [str(out)], started)
    for half in ("individual", "averaged"):
        avg, cv = result.summary(half, "test")
        print(f"{half}: test AVG {avg:.4f} CV {cv:.4f}")
    return 0


def _cmd_lingua(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus(corpus_dir, jobs=args.jobs)
    ids = [args.conv] if args.conv else _all_ids(corpus)
    for cid in ids:
        if cid not in corpus.conversations:
            raise ValidationError(f"no conversation {cid!r} in the corpus")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lexicon = lingua.default_lexicon()
    outputs = []
    profile_lines = ["conversation," + ",".join(lingua.FEATURES) + ",words,utterances"]
    for cid in ids:
        conv = corpus.conversations[cid]
        profile = lingua.extract_profile(conv.transcript, lexicon, bin_width=args.bin_width)
        gold = corpus_mod.gold_reference(conv).values
        table = lingua.align_profile_with_reference(profile, gold)
        table_path = out / f"{cid}.dynamics.csv"
        table.to_csv(table_path)
        outputs.append(str(table_path))
        counts = ",".join(str(profile.totals[f]) for f in lingua.FEATURES)
        profile_lines.append(
            f"{cid},{counts},{profile.word_count},{profile.utterance_count}"
        )
    profiles_path = out / "profiles.csv"
    with open(profiles_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(profile_lines) + "\n")
    outputs.append(str(profiles_path))
    _write_manifest("lingua", args, out, [str(corpus_dir)], outputs, started)
    print(f"wrote orality dynamics for {len(ids)} conversations to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimemo",
        description="Continuous satisfaction tracking over call conversations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=201)
    p.add_argument("--dev", type=int, default=42)
    p.add_argument("--test", type=int, default=60)
    p.add_argument("--duration-mean", type=float, default=444.0)
    p.add_argument("--duration-min", type=float, default=32.0)
    p.add_argument("--duration-max", type=float, default=2460.0)
    p.add_argument("--annotator-noise", type=float, default=0.04)
    p.add_argument("--acoustic-noise", type=float, default=0.15)
    p.add_argument("--linguistic-noise", type=float, default=0.05)
    p.add_argument("--drops-per-minute", type=float, default=0.25)
    p.add_argument("--audio", action="store_true", help="also synthesize 8 kHz audio")
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("features", help="extract feature streams")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", required=True,
                   help="mfcc, synth:acoustic, or synth:linguistic")
    p.add_argument("--out", default=None)
    p.add_argument("--dim", type=int, default=1, help="synthetic stream dimension")
    p.add_argument("--noise", type=float, default=0.0, help="synthetic stream noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_features)

    p = subs.add_parser("train", help="train a single-modality model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--modality", required=True, help="mfcc or stream:<path-template>")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_options(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="evaluate a saved model on a split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--modality", default=None)
    p.add_argument("--modality-a", default=None)
    p.add_argument("--modality-l", default=None)
    p.add_argument("--split", choices=("dev", "test"), default="test")
    p.add_argument("--reference", default="gold")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("fuse", help="train and score a fusion strategy")
    p.add_argument("--kind", required=True, help="feature, early, late, or decision")
    p.add_argument("--corpus", required=True)
    p.add_argument("--modality-a", required=True)
    p.add_argument("--modality-l", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_options(p)
    p.set_defaults(func=_cmd_fuse)

    p = subs.add_parser("sweep", help="repeat a training across seeds")
    p.add_argument("--corpus", required=True)
    p.add_argument("--modality", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--out", required=True, help="sweep CSV to write")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_options(p)
    p.set_defaults(func=_cmd_sweep)

    p = subs.add_parser("annotators", help="per-annotator training protocol")
    p.add_argument("--corpus", required=True)
    p.add_argument("--modality", required=True)
    p.add_argument("--out", required=True, help="table CSV to write")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_options(p)
    p.set_defaults(func=_cmd_annotators)

    p = subs.add_parser("lingua", help="orality-clue dynamics per conversation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--conv", default=None, help="restrict to one conversation id")
    p.add_argument("--bin-width", type=float, default=10.0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_lingua)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DimemoError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
