"""Conversation corpus: types, synthetic generation, and disk layout.

A conversation couples optional 8 kHz mono audio, a time-stamped
transcript, and several annotator tracks sampled every 250 ms on a
common grid. The synthetic generator produces corpora whose ground
truth is a latent satisfaction trajectory in [0, 1]: annotator tracks
are the trajectory plus independent smooth noise, two latent feature
channels (acoustic, linguistic) are distinct noisy maps of the
trajectory, and the transcript emits disfluency and complaint clues at
rates that rise as satisfaction falls.

On disk a corpus is a directory per conversation (``audio.wav``
optional, ``transcript.jsonl``, ``annotations.csv``) plus a top-level
``split.json``. Synthetic conversations additionally persist
``latents.csv`` and ``synthetic.json`` so a reloaded corpus can still
export latent-channel streams and locate injected frustration drops.
"""

from __future__ import annotations

import json
import math
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusFormatError, GridMismatchError, MissingDataError, ValidationError

__all__ = [
    "GRID_STEP",
    "SAMPLE_RATE",
    "grid_length",
    "TimedWord",
    "AnnotationTrack",
    "SyntheticLatent",
    "Conversation",
    "DatasetSplit",
    "Corpus",
    "SyntheticSpec",
    "generate_synthetic",
    "gold_reference",
    "save_corpus",
    "load_corpus",
]

GRID_STEP = 0.25
SAMPLE_RATE = 8000

_NEUTRAL_WORDS = (
    "bonjour", "oui", "non", "alors", "merci", "dossier", "compte", "demande",
    "service", "monsieur", "madame", "facture", "contrat", "ligne", "probleme",
    "question", "reponse", "jour", "semaine", "mois", "numero", "client",
    "agence", "courrier", "paiement", "rendez-vous", "solution", "attente",
    "chose", "temps", "personne", "moment", "raison", "niveau", "part",
)
_FILLED = ("euh", "euh", "euh", "bah", "hein", "eh")
_NEGATIONS = ("pas", "pas", "pas", "ne", "n'")
_STRONG = ("réclamation", "inadmissible", "scandaleux", "inquiet", "important", "gonflé")
_WEAK = (("quand", "même"), ("franchement",))


def grid_length(duration: float) -> int:
    """Number of 250 ms grid steps covering ``duration`` seconds."""
    if not duration > 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    return int(math.ceil(duration / GRID_STEP - 1e-9))


@dataclass(frozen=True)
class TimedWord:
    """One transcript token with start/end times in seconds."""

    token: str
    start: float
    end: float


@dataclass
class AnnotationTrack:
    """One annotator's satisfaction values on the 250 ms grid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class SyntheticLatent:
    """Generator ground truth kept alongside a synthetic conversation."""

    trajectory: np.ndarray
    acoustic: np.ndarray
    linguistic: np.ndarray
    drop_times: list[float] = field(default_factory=list)


@dataclass
class Conversation:
    id: str
    duration: float
    annotations: dict[str, AnnotationTrack]
    transcript: list[TimedWord] = field(default_factory=list)
    audio: np.ndarray | None = None
    sample_rate: int = SAMPLE_RATE
    latent: SyntheticLatent | None = None

    @property
    def grid(self) -> int:
        return grid_length(self.duration)


@dataclass
class DatasetSplit:
    train: list[str]
    dev: list[str]
    test: list[str]

    def validate(self, ids=None) -> None:
        parts = {"train": set(self.train), "dev": set(self.dev), "test": set(self.test)}
        for name, seen in parts.items():
            listed = getattr(self, name)
            if len(seen) != len(listed):
                dupes = sorted({c for c in listed if listed.count(c) > 1})
                raise ValidationError(f"split partition {name} repeats ids: {dupes}")
        names = list(parts)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                overlap = parts[a] & parts[b]
                if overlap:
                    raise ValidationError(
                        f"split partitions {a} and {b} overlap: {sorted(overlap)}"
                    )
        if ids is not None:
            union = parts["train"] | parts["dev"] | parts["test"]
            ids = set(ids)
            if union != ids:
                missing = sorted(ids - union)
                extra = sorted(union - ids)
                raise ValidationError(
                    f"split does not partition the corpus (missing {missing}, extra {extra})"
                )


@dataclass
class Corpus:
    conversations: dict[str, Conversation]
    split: DatasetSplit

    def ids_in(self, part: str) -> list[str]:
        try:
            return sorted(getattr(self.split, part))
        except AttributeError:
            raise ValidationError(f"unknown split part {part!r}") from None

    def in_split(self, part: str) -> list[Conversation]:
        return [self.conversations[cid] for cid in self.ids_in(part)]


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic corpus generator.

    Defaults mirror the reference corpus scale: 201/42/60 conversations
    averaging 444 s, clipped to [32 s, 2460 s]. Noise levels are standard
    deviations of the smooth perturbations added to annotator tracks and
    to the two latent channels; the acoustic channel is noisier by
    default so linguistic features carry more information.
    """

    seed: int = 0
    train_count: int = 201
    dev_count: int = 42
    test_count: int = 60
    duration_mean: float = 444.0
    duration_min: float = 32.0
    duration_max: float = 2460.0
    duration_sigma: float = 0.7
    annotator_noise: float = 0.04
    acoustic_noise: float = 0.15
    linguistic_noise: float = 0.05
    drops_per_minute: float = 0.25
    with_audio: bool = False

    def validate(self) -> None:
        if min(self.train_count, self.dev_count, self.test_count) < 1:
            raise ValidationError("every split needs at least one conversation")
        if not (0 < self.duration_min <= self.duration_mean <= self.duration_max):
            raise ValidationError(
                "duration bounds must satisfy 0 < min <= mean <= max, got "
                f"{self.duration_min}/{self.duration_mean}/{self.duration_max}"
            )
        for name in ("annotator_noise", "acoustic_noise", "linguistic_noise", "drops_per_minute"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


def _smooth(values: np.ndarray, width: int) -> np.ndarray:
    # moving average with edge replication; width forced odd
    if width <= 1:
        return values.copy()
    if width % 2 == 0:
        width += 1
    half = width // 2
    padded = np.concatenate([
        np.full(half, values[0]), values, np.full(half, values[-1])
    ])
    kernel = np.full(width, 1.0 / width)
    return np.convolve(padded, kernel, mode="valid")


def _smooth_noise(rng: np.random.Generator, n: int, level: float, width: int = 9) -> np.ndarray:
    if level == 0.0:
        return np.zeros(n)
    # pre-scale so the smoothed series keeps roughly the requested std
    raw = rng.normal(0.0, level * math.sqrt(width), n)
    return _smooth(raw, width)


def _trajectory(rng: np.random.Generator, steps: int, drops_per_minute: float):
    start = rng.uniform(0.5, 0.9)
    walk = start + np.cumsum(rng.normal(0.0, 0.012, steps))
    duration = steps * GRID_STEP
    n_drops = int(rng.poisson(drops_per_minute * duration / 60.0))
    drop_times: list[float] = []
    offset = np.zeros(steps)
    for _ in range(n_drops):
        k0 = int(rng.integers(int(steps * 0.1), max(int(steps * 0.9), int(steps * 0.1) + 1)))
        depth = rng.uniform(0.25, 0.5)
        offset[k0:] -= depth
        # slow partial recovery after the drop
        recover = rng.uniform(0.2, 0.6) * depth
        span = min(steps - k0, int(240))
        offset[k0:k0 + span] += np.linspace(0.0, recover, span)
        offset[k0 + span:] += recover
        drop_times.append(k0 * GRID_STEP)
    traj = _smooth(np.clip(walk + offset, 0.0, 1.0), 5)
    return traj, sorted(drop_times)


def _transcript(rng: np.random.Generator, traj: np.ndarray, duration: float) -> list[TimedWord]:
    words: list[TimedWord] = []
    t = rng.uniform(0.3, 0.9)
    while t < duration - 0.6:
        v = float(traj[min(int(t / GRID_STEP), traj.size - 1)])
        unhappy = 1.0 - v
        r = rng.random()
        token: str | None = None
        extra: str | None = None
        if words and r < 0.02 + 0.18 * unhappy:
            if len(words) >= 2 and rng.random() < 0.25:
                # repeat the last two tokens -> second-degree repetition
                token = words[-2].token
                extra = words[-1].token
            else:
                token = words[-1].token
        elif r < 0.10 + 0.45 * unhappy:
            r -= 0.02 + 0.18 * unhappy
            budget = 0.08 + 0.27 * unhappy
            if r < budget * 0.45:
                token = _FILLED[rng.integers(len(_FILLED))]
            elif r < budget * 0.80:
                token = _NEGATIONS[rng.integers(len(_NEGATIONS))]
            elif r < budget * 0.90:
                token = "c'est"
            elif r < budget * 0.96:
                token = _STRONG[rng.integers(len(_STRONG))] if unhappy > 0.3 else "bon"
            else:
                pattern = _WEAK[rng.integers(len(_WEAK))]
                token = pattern[0]
                extra = pattern[1] if len(pattern) > 1 else None
        if token is None:
            token = _NEUTRAL_WORDS[rng.integers(len(_NEUTRAL_WORDS))]
        for tok in (token, extra):
            if tok is None or t >= duration:
                break
            w_dur = rng.uniform(0.12, 0.38)
            end = min(t + w_dur, duration)
            words.append(TimedWord(tok, round(t, 3), round(end, 3)))
            t = end + rng.uniform(0.03, 0.18)
        gap_roll = rng.random()
        if gap_roll < 0.05 + 0.03 * unhappy:
            t += rng.uniform(0.6, 2.5)  # utterance boundary
        elif gap_roll < 0.08:
            t += rng.uniform(3.0, 9.0)  # other-party turn, no words kept
    return words


def _audio_from_channel(rng: np.random.Generator, channel: np.ndarray) -> np.ndarray:
    # one 250 ms tone per grid step; pitch and level follow the channel
    level = np.clip(channel, 0.0, 1.0)
    freq = 350.0 + 450.0 * level
    per_step = int(GRID_STEP * SAMPLE_RATE)
    freq_per_sample = np.repeat(freq, per_step)
    phase = 2.0 * math.pi * np.cumsum(freq_per_sample) / SAMPLE_RATE
    amp = np.repeat(0.2 + 0.2 * level, per_step)
    signal = amp * np.sin(phase) + rng.normal(0.0, 0.01, phase.size)
    return np.clip(signal, -0.999, 0.999)


def generate_synthetic(spec: SyntheticSpec) -> Corpus:
    """Generate a corpus per ``spec``; fully determined by ``spec.seed``."""
    spec.validate()
    total = spec.train_count + spec.dev_count + spec.test_count
    seeds = np.random.SeedSequence(spec.seed).spawn(total)
    conversations: dict[str, Conversation] = {}
    # lognormal durations around the requested mean, snapped to the grid
    sigma = spec.duration_sigma
    mu = math.log(spec.duration_mean) - 0.5 * sigma * sigma
    for idx in range(total):
        rng = np.random.default_rng(seeds[idx])
        cid = f"conv{idx:04d}"
        duration = float(np.clip(rng.lognormal(mu, sigma), spec.duration_min, spec.duration_max))
        steps = grid_length(duration)
        duration = steps * GRID_STEP
        traj, drop_times = _trajectory(rng, steps, spec.drops_per_minute)
        annotations = {}
        for a in ("a1", "a2", "a3"):
            noise = _smooth_noise(rng, steps, spec.annotator_noise)
            annotations[a] = AnnotationTrack(np.clip(traj + noise, 0.0, 1.0))
        acoustic = (
            0.7 * traj + 0.3 * np.sin(2.2 * traj)
            + _smooth_noise(rng, steps, spec.acoustic_noise)
        )
        linguistic = (
            0.9 * traj - 0.25 * np.cos(1.7 * traj + 0.4)
            + _smooth_noise(rng, steps, spec.linguistic_noise)
        )
        transcript = _transcript(rng, traj, duration)
        audio = _audio_from_channel(rng, acoustic) if spec.with_audio else None
        conversations[cid] = Conversation(
            id=cid,
            duration=duration,
            annotations=annotations,
            transcript=transcript,
            audio=audio,
            latent=SyntheticLatent(traj, acoustic, linguistic, drop_times),
        )
    ids = list(conversations)
    split = DatasetSplit(
        train=ids[: spec.train_count],
        dev=ids[spec.train_count: spec.train_count + spec.dev_count],
        test=ids[spec.train_count + spec.dev_count:],
    )
    corpus = Corpus(conversations, split)
    for conv in conversations.values():
        validate_conversation(conv)
    split.validate(ids)
    return corpus


def gold_reference(conversation: Conversation) -> AnnotationTrack:
    """Mean of all annotator tracks, averaged in sorted-annotator order."""
    if not conversation.annotations:
        raise MissingDataError(f"conversation {conversation.id} has no annotations")
    stacked = np.stack(
        [conversation.annotations[a].values for a in sorted(conversation.annotations)]
    )
    return AnnotationTrack(stacked.mean(axis=0))


def validate_conversation(conv: Conversation) -> None:
    """Check grid, transcript ordering, and audio consistency."""
    steps = conv.grid
    if not conv.annotations:
        raise ValidationError(f"conversation {conv.id} has no annotation tracks")
    for name, track in conv.annotations.items():
        if track.values.ndim != 1 or track.values.size != steps:
            raise GridMismatchError(
                f"conversation {conv.id}: track {name} has {track.values.size} "
                f"steps, grid expects {steps}"
            )
        if not np.all(np.isfinite(track.values)):
            raise ValidationError(f"conversation {conv.id}: track {name} has non-finite values")
    prev_start = -1.0
    for i, word in enumerate(conv.transcript):
        if word.start < 0 or word.end < word.start:
            raise ValidationError(
                f"conversation {conv.id}: word {i} has invalid interval "
                f"[{word.start}, {word.end}]"
            )
        if word.start < prev_start:
            raise ValidationError(
                f"conversation {conv.id}: word {i} starts before its predecessor"
            )
        prev_start = word.start
    if conv.audio is not None:
        if conv.sample_rate != SAMPLE_RATE:
            raise ValidationError(
                f"conversation {conv.id}: sample rate {conv.sample_rate}, expected {SAMPLE_RATE}"
            )
        audio_steps = grid_length(conv.audio.size / conv.sample_rate)
        if audio_steps != steps:
            raise GridMismatchError(
                f"conversation {conv.id}: audio covers {audio_steps} grid steps, "
                f"annotations cover {steps}"
            )


# ---------------------------------------------------------------------------
# disk layout

def _write_wav(path: Path, audio: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(audio * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def _read_wav(path: Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise CorpusFormatError("audio must be mono 16-bit PCM", path=str(path))
        rate = fh.getframerate()
        frames = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(frames, dtype="<i2").astype(np.float64)
    return pcm / 32768.0, rate


def save_corpus(corpus: Corpus, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for cid, conv in corpus.conversations.items():
        cdir = root / cid
        cdir.mkdir(parents=True, exist_ok=True)
        if conv.audio is not None:
            _write_wav(cdir / "audio.wav", conv.audio, conv.sample_rate)
        with open(cdir / "transcript.jsonl", "w", encoding="utf-8") as fh:
            for word in conv.transcript:
                fh.write(json.dumps(
                    {"token": word.token, "start": word.start, "end": word.end},
                    ensure_ascii=False, sort_keys=True,
                ) + "\n")
        names = sorted(conv.annotations)
        with open(cdir / "annotations.csv", "w", encoding="utf-8") as fh:
            fh.write("time," + ",".join(names) + "\n")
            for k in range(conv.grid):
                row = [repr(round(k * GRID_STEP, 6))]
                row += [repr(float(conv.annotations[a].values[k])) for a in names]
                fh.write(",".join(row) + "\n")
        if conv.latent is not None:
            with open(cdir / "latents.csv", "w", encoding="utf-8") as fh:
                fh.write("time,trajectory,acoustic,linguistic\n")
                for k in range(conv.grid):
                    fh.write(",".join([
                        repr(round(k * GRID_STEP, 6)),
                        repr(float(conv.latent.trajectory[k])),
                        repr(float(conv.latent.acoustic[k])),
                        repr(float(conv.latent.linguistic[k])),
                    ]) + "\n")
            with open(cdir / "synthetic.json", "w", encoding="utf-8") as fh:
                json.dump({"drop_times": conv.latent.drop_times}, fh, sort_keys=True)
                fh.write("\n")
    with open(root / "split.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"train": corpus.split.train, "dev": corpus.split.dev, "test": corpus.split.test},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")


def _parse_float(text: str, path: str, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise CorpusFormatError(f"bad {what} value {text!r}", path=path, line=line) from None


def _load_annotations(path: Path) -> dict[str, AnnotationTrack]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusFormatError("empty annotation file", path=str(path))
    header = lines[0].split(",")
    if header[0] != "time" or len(header) < 2:
        raise CorpusFormatError(
            "header must be 'time,<annotator>,...'", path=str(path), line=1
        )
    names = header[1:]
    if len(set(names)) != len(names) or any(not n for n in names):
        raise CorpusFormatError("annotator columns must be unique and non-empty",
                                path=str(path), line=1)
    columns: list[list[float]] = [[] for _ in names]
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        fields = raw.split(",")
        if len(fields) != len(header):
            raise CorpusFormatError(
                f"expected {len(header)} fields, got {len(fields)}",
                path=str(path), line=lineno,
            )
        t = _parse_float(fields[0], str(path), lineno, "time")
        k = len(columns[0])
        if abs(t - k * GRID_STEP) > 1e-6:
            raise GridMismatchError(
                f"{path}:{lineno}: time {t} breaks the 250 ms grid "
                f"(expected {k * GRID_STEP}); a row is missing or misplaced"
            )
        for j, fval in enumerate(fields[1:]):
            columns[j].append(_parse_float(fval, str(path), lineno, "annotation"))
    if not columns[0]:
        raise CorpusFormatError("annotation file has no rows", path=str(path))
    return {n: AnnotationTrack(np.asarray(col)) for n, col in zip(names, columns)}


def _load_transcript(path: Path) -> list[TimedWord]:
    words: list[TimedWord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                words.append(TimedWord(str(obj["token"]), float(obj["start"]), float(obj["end"])))
            except (ValueError, KeyError, TypeError):
                raise CorpusFormatError("bad transcript record", path=str(path), line=lineno) from None
    return words


def _load_latent(cdir: Path) -> SyntheticLatent | None:
    lpath = cdir / "latents.csv"
    if not lpath.exists():
        return None
    with open(lpath, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "time,trajectory,acoustic,linguistic":
        raise CorpusFormatError("bad latents header", path=str(lpath), line=1)
    cols = [[], [], []]
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        fields = raw.split(",")
        if len(fields) != 4:
            raise CorpusFormatError("expected 4 fields", path=str(lpath), line=lineno)
        for j in range(3):
            cols[j].append(_parse_float(fields[j + 1], str(lpath), lineno, "latent"))
    drop_times: list[float] = []
    spath = cdir / "synthetic.json"
    if spath.exists():
        with open(spath, encoding="utf-8") as fh:
            drop_times = [float(t) for t in json.load(fh).get("drop_times", [])]
    return SyntheticLatent(
        np.asarray(cols[0]), np.asarray(cols[1]), np.asarray(cols[2]), drop_times
    )


def _load_conversation(root: Path, cid: str) -> Conversation:
    cdir = root / cid
    if not cdir.is_dir():
        raise CorpusFormatError(f"conversation directory missing: {cdir}")
    apath = cdir / "annotations.csv"
    if not apath.exists():
        raise CorpusFormatError("annotations.csv missing", path=str(cdir))
    annotations = _load_annotations(apath)
    tpath = cdir / "transcript.jsonl"
    transcript = _load_transcript(tpath) if tpath.exists() else []
    audio = None
    rate = SAMPLE_RATE
    wpath = cdir / "audio.wav"
    if wpath.exists():
        audio, rate = _read_wav(wpath)
    steps = len(next(iter(annotations.values())).values)
    duration = audio.size / rate if audio is not None else steps * GRID_STEP
    conv = Conversation(
        id=cid,
        duration=duration,
        annotations=annotations,
        transcript=transcript,
        audio=audio,
        sample_rate=rate,
        latent=_load_latent(cdir),
    )
    try:
        validate_conversation(conv)
    except GridMismatchError as exc:
        raise GridMismatchError(f"{apath}: {exc}") from None
    return conv


def load_corpus(root, jobs: int = 1) -> Corpus:
    """Load a corpus directory; per-conversation loading may parallelize."""
    root = Path(root)
    spath = root / "split.json"
    if not spath.exists():
        raise CorpusFormatError("split.json missing", path=str(root))
    with open(spath, encoding="utf-8") as fh:
        try:
            parts = json.load(fh)
        except ValueError as exc:
            raise CorpusFormatError(f"bad split.json: {exc}", path=str(spath)) from None
    try:
        split = DatasetSplit(
            train=list(parts["train"]), dev=list(parts["dev"]), test=list(parts["test"])
        )
    except (KeyError, TypeError):
        raise CorpusFormatError("split.json needs train/dev/test lists", path=str(spath)) from None
    ids = sorted(split.train) + sorted(split.dev) + sorted(split.test)
    split.validate()
    # auxiliary directories (feature caches, reports) carry no annotations.csv
    on_disk = sorted(
        p.name for p in root.iterdir() if (p / "annotations.csv").is_file()
    )
    extra = set(on_disk) - set(ids)
    if extra:
        raise ValidationError(f"conversations on disk missing from split.json: {sorted(extra)}")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            loaded = list(pool.map(lambda cid: _load_conversation(root, cid), ids))
    else:
        loaded = [_load_conversation(root, cid) for cid in ids]
    conversations = {conv.id: conv for conv in loaded}
    split.validate(list(conversations))
    return Corpus(conversations, split)
