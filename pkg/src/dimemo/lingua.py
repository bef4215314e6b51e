"""Orality clues in transcripts and their relation to satisfaction.

Counts seven interpretable features over a time-stamped transcript:
first- and second-degree repetitions (a word, or a two-word sequence,
repeated immediately), filled pauses, strong and weak complaint
markers, negation tokens, and the presentative "c'est". Counts come in
totals and in fixed-width time bins so they can be laid against the
reference satisfaction curve; utterances are spans separated by
silences of at least 0.5 s.

Tokens are lowercased and apostrophe-normalized once. Lexicon lookups
run on the apostrophe-split stream (so "c'est" matches as the bigram
("c'", "est") and the elided negation "n'" is matchable), while
repetition detection runs on the unsplit tokens (so "c'est c'est" is a
first-degree repetition, not a repeated bigram). Lexicon files list
one token or space-separated n-gram per line, UTF-8, with ``#``
comments; the built-in French lists can be replaced per feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources as _resources
from pathlib import Path

import numpy as np

from .corpus import GRID_STEP, TimedWord
from .errors import ValidationError

__all__ = [
    "FEATURES",
    "UTTERANCE_GAP",
    "ClueLexicon",
    "OralityProfile",
    "DynamicsTable",
    "Event",
    "normalize_token",
    "load_lexicon_file",
    "default_lexicon",
    "extract_profile",
    "align_profile_with_reference",
    "tag_events",
]

FEATURES = ("deg1", "deg2", "filled", "strong", "weak", "neg", "cest")
UTTERANCE_GAP = 0.5

_APOSTROPHES = ("’", "ʼ", "`")


def normalize_token(token: str) -> list[str]:
    """Lowercase, unify apostrophes, and split after the first one.

    Returns the (possibly multi-piece) normalized form: ``"C'est"`` ->
    ``["c'", "est"]``, ``"n'"`` -> ``["n'"]``, plain words unchanged.
    Empty input normalizes to an empty list.
    """
    tok = token.strip().lower()
    for variant in _APOSTROPHES:
        tok = tok.replace(variant, "'")
    if not tok:
        return []
    cut = tok.find("'")
    if 0 <= cut < len(tok) - 1:
        return [tok[: cut + 1], tok[cut + 1:]]
    return [tok]


def _normalize_pattern(text: str) -> tuple[str, ...]:
    pieces: list[str] = []
    for chunk in text.split():
        pieces.extend(normalize_token(chunk))
    return tuple(pieces)


def load_lexicon_file(path) -> tuple[tuple[str, ...], ...]:
    """One token or n-gram per line; ``#`` starts a comment."""
    patterns: list[tuple[str, ...]] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            pattern = _normalize_pattern(text)
            if pattern:
                patterns.append(pattern)
    if not patterns:
        raise ValidationError(f"lexicon file {path} has no entries")
    return tuple(patterns)


@dataclass(frozen=True)
class ClueLexicon:
    """Normalized patterns per lexical feature."""

    filled: tuple[tuple[str, ...], ...]
    strong: tuple[tuple[str, ...], ...]
    weak: tuple[tuple[str, ...], ...]
    neg: tuple[tuple[str, ...], ...]
    cest: tuple[tuple[str, ...], ...]

    def patterns_for(self, feature: str) -> tuple[tuple[str, ...], ...]:
        return getattr(self, feature)


def default_lexicon() -> ClueLexicon:
    base = _resources.files("dimemo.resources")
    names = {
        "filled": "filled_pauses.txt",
        "strong": "strong_markers.txt",
        "weak": "weak_markers.txt",
        "neg": "negations.txt",
        "cest": "cest.txt",
    }
    loaded = {}
    for feature, filename in names.items():
        with _resources.as_file(base / filename) as path:
            loaded[feature] = load_lexicon_file(path)
    return ClueLexicon(**loaded)


@dataclass
class OralityProfile:
    """Feature totals, per-bin counts, and transcript-level tallies."""

    totals: dict[str, int]
    bin_counts: np.ndarray  # (n_bins, len(FEATURES)) ints
    bin_width: float
    word_count: int
    utterance_count: int

    def __post_init__(self):
        self.bin_counts = np.asarray(self.bin_counts, dtype=np.int64)


def _utterance_count(words: list[TimedWord]) -> int:
    if not words:
        return 0
    count = 1
    for prev, cur in zip(words, words[1:]):
        if cur.start - prev.end >= UTTERANCE_GAP:
            count += 1
    return count


def extract_profile(
    transcript, lexicon: ClueLexicon | None = None, bin_width: float = 10.0
) -> OralityProfile:
    """Count the seven orality features over a transcript."""
    if bin_width <= 0:
        raise ValidationError(f"bin_width must be positive, got {bin_width}")
    lexicon = lexicon or default_lexicon()
    words = list(transcript)
    plain: list[tuple[str, float]] = []  # unsplit normalized tokens
    split: list[tuple[str, float]] = []  # apostrophe-split stream
    for word in words:
        pieces = normalize_token(word.token)
        if not pieces:
            continue
        plain.append(("".join(pieces), word.start))
        for piece in pieces:
            split.append((piece, word.start))
    last_end = max((w.end for w in words), default=0.0)
    n_bins = max(int(math.ceil(last_end / bin_width - 1e-9)), 1 if plain else 0)
    counts = np.zeros((n_bins, len(FEATURES)), dtype=np.int64)
    col = {name: k for k, name in enumerate(FEATURES)}

    def _tally(feature: str, start: float) -> None:
        idx = min(int(start / bin_width), n_bins - 1)
        counts[idx, col[feature]] += 1

    # repetitions on the unsplit stream, binned at the pair's first token
    for i in range(len(plain) - 1):
        if plain[i][0] == plain[i + 1][0]:
            _tally("deg1", plain[i][1])
    for i in range(len(plain) - 3):
        if plain[i][0] == plain[i + 2][0] and plain[i + 1][0] == plain[i + 3][0]:
            _tally("deg2", plain[i][1])
    # lexicon features on the split stream
    tokens = [piece for piece, _ in split]
    for feature in ("filled", "strong", "weak", "neg", "cest"):
        for pattern in lexicon.patterns_for(feature):
            size = len(pattern)
            for i in range(len(tokens) - size + 1):
                if tuple(tokens[i: i + size]) == pattern:
                    _tally(feature, split[i][1])
    totals = {name: int(counts[:, col[name]].sum()) for name in FEATURES}
    return OralityProfile(
        totals=totals,
        bin_counts=counts,
        bin_width=bin_width,
        word_count=len(plain),
        utterance_count=_utterance_count(words),
    )


@dataclass
class DynamicsTable:
    """Binned feature counts laid against the mean reference value."""

    bin_starts: np.ndarray
    counts: np.ndarray
    satisfaction: np.ndarray
    bin_width: float

    def to_csv(self, path) -> None:
        header = "bin_start," + ",".join(FEATURES) + ",satisfaction"
        lines = [header]
        for k in range(self.bin_starts.size):
            row = [repr(float(self.bin_starts[k]))]
            row += [str(int(v)) for v in self.counts[k]]
            row.append(repr(float(self.satisfaction[k])))
            lines.append(",".join(row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def align_profile_with_reference(
    profile: OralityProfile, gold_values, bin_width: float | None = None
) -> DynamicsTable:
    """Join binned counts with the mean gold value per bin.

    The gold track defines the conversation span; bins beyond the
    transcript get zero counts. Totals are preserved exactly.
    """
    if bin_width is not None and abs(bin_width - profile.bin_width) > 1e-9:
        raise ValidationError(
            f"profile was binned at {profile.bin_width}s, not {bin_width}s"
        )
    gold = np.asarray(gold_values, dtype=np.float64)
    if gold.ndim != 1 or gold.size == 0:
        raise ValidationError("gold track must be a non-empty 1-d array")
    width = profile.bin_width
    duration = gold.size * GRID_STEP
    n_bins = max(int(math.ceil(duration / width - 1e-9)), profile.bin_counts.shape[0])
    counts = np.zeros((n_bins, len(FEATURES)), dtype=np.int64)
    counts[: profile.bin_counts.shape[0]] = profile.bin_counts
    steps_per_bin = width / GRID_STEP
    satisfaction = np.empty(n_bins)
    for k in range(n_bins):
        lo = int(round(k * steps_per_bin))
        hi = min(int(round((k + 1) * steps_per_bin)), gold.size)
        if hi <= lo:
            raise ValidationError(
                f"bin {k} covers no reference steps; transcript outruns the gold track"
            )
        satisfaction[k] = gold[lo:hi].mean()
    return DynamicsTable(
        bin_starts=np.arange(n_bins) * width,
        counts=counts,
        satisfaction=satisfaction,
        bin_width=width,
    )


@dataclass(frozen=True)
class Event:
    """A tagged interval of the reference curve, times in seconds."""

    kind: str
    start: float
    end: float


def tag_events(
    gold_values,
    frustration_threshold: float = 0.35,
    drop_delta: float = 0.2,
    drop_window: float = 10.0,
) -> list[Event]:
    """Tag high-frustration intervals and frustration drops.

    High-frustration events are maximal runs strictly below the
    threshold. A grid step is a drop point if the curve falls by at
    least ``drop_delta`` within the next ``drop_window`` seconds;
    consecutive drop points merge into one event.
    """
    gold = np.asarray(gold_values, dtype=np.float64)
    if gold.ndim != 1 or gold.size == 0:
        raise ValidationError("gold track must be a non-empty 1-d array")
    if drop_delta <= 0 or drop_window <= 0:
        raise ValidationError("drop_delta and drop_window must be positive")
    events: list[Event] = []
    below = gold < frustration_threshold
    k = 0
    while k < gold.size:
        if below[k]:
            j = k
            while j + 1 < gold.size and below[j + 1]:
                j += 1
            events.append(Event("high-frustration", k * GRID_STEP, (j + 1) * GRID_STEP))
            k = j + 1
        else:
            k += 1
    win = max(int(round(drop_window / GRID_STEP)), 1)
    is_drop = np.zeros(gold.size, dtype=bool)
    for k in range(gold.size - 1):
        future = gold[k + 1: k + 1 + win]
        if future.size and gold[k] - future.min() >= drop_delta:
            is_drop[k] = True
    k = 0
    while k < gold.size:
        if is_drop[k]:
            j = k
            while j + 1 < gold.size and is_drop[j + 1]:
                j += 1
            events.append(Event("frustration-drop", k * GRID_STEP, (j + 1) * GRID_STEP))
            k = j + 1
        else:
            k += 1
    events.sort(key=lambda e: (e.start, e.kind))
    return events
