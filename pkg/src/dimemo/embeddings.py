"""Pre-computed embedding streams and token-to-grid alignment.

Token embeddings (word vectors with time stamps) are averaged onto the
250 ms grid: a segment's vector is the mean over all tokens whose time
interval overlaps the segment, and zero where no token overlaps.
Segment streams produced elsewhere (acoustic encoders, sentence
encoders with or without surrounding-context windows) are loaded from
stream files and reconciled against the conversation grid: a length
mismatch of at most 2 segments is repaired by truncation or by
repeating the last segment, with a logged warning; larger mismatches
are errors.

For corpus-free experimentation the module can also export a synthetic
conversation's latent acoustic or linguistic channel as a stream of any
dimension with controlled noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import GRID_STEP, Conversation, grid_length
from .dsp import FeatureStream, read_stream_file
from .errors import (
    DimensionMismatchError,
    GridMismatchError,
    MissingDataError,
    StreamFormatError,
    ValidationError,
)

__all__ = [
    "TokenEmbedding",
    "ContextVariant",
    "align_tokens_to_grid",
    "load_token_embeddings",
    "save_token_embeddings",
    "load_stream",
    "export_synthetic_modality",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenEmbedding:
    """A token's vector with its time interval in seconds."""

    token: str
    start: float
    end: float
    vector: np.ndarray


class ContextVariant(Enum):
    """Whether a sentence encoding saw surrounding conversation context."""

    WITHOUT_CONTEXT = "woc"
    WITH_CONTEXT = "wc"

    def tag(self, label: str) -> str:
        return f"{label}-{self.value}"


def align_tokens_to_grid(
    tokens, duration: float, label: str = "tokens"
) -> FeatureStream:
    """Mean token vector per 250 ms segment; zeros where nothing overlaps.

    A token counts toward every segment its [start, end] interval
    intersects (zero-length tokens count toward the segment containing
    their instant). Tokens are interchangeable: order does not matter.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValidationError("need at least one token to align")
    dim = tokens[0].vector.size
    n_seg = grid_length(duration)
    total = np.zeros((n_seg, dim))
    counts = np.zeros(n_seg)
    for tok in tokens:
        vec = np.asarray(tok.vector, dtype=np.float64)
        if vec.size != dim:
            raise DimensionMismatchError(
                f"token {tok.token!r} has dim {vec.size}, expected {dim}"
            )
        if tok.end < tok.start:
            raise ValidationError(f"token {tok.token!r} ends before it starts")
        lo = max(int(tok.start / GRID_STEP), 0)
        hi = min(int(np.ceil(tok.end / GRID_STEP + 1e-12)), n_seg)
        for seg in range(lo, max(hi, lo + 1)):
            if seg >= n_seg:
                break
            seg_start = seg * GRID_STEP
            seg_end = seg_start + GRID_STEP
            overlaps = tok.start < seg_end and tok.end > seg_start
            instant = tok.start == tok.end and seg_start <= tok.start < seg_end
            if overlaps or instant:
                total[seg] += vec
                counts[seg] += 1.0
    nonzero = counts > 0
    total[nonzero] /= counts[nonzero, None]
    return FeatureStream(total, label=label)


def load_token_embeddings(path) -> list[TokenEmbedding]:
    """Read the tab-separated token embedding format.

    First line ``dim=<D>``, then one token per line:
    ``token<TAB>start<TAB>end<TAB>v0<TAB>...<TAB>v{D-1}``.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise StreamFormatError(f"{path}: first line must be 'dim=<D>'")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise StreamFormatError(f"{path}: bad dim header {lines[0]!r}") from None
    if dim < 1:
        raise StreamFormatError(f"{path}: dim must be positive, got {dim}")
    tokens: list[TokenEmbedding] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        fields = raw.split("\t")
        if len(fields) != 3 + dim:
            raise StreamFormatError(
                f"{path}:{lineno}: expected {3 + dim} fields, got {len(fields)}"
            )
        try:
            start, end = float(fields[1]), float(fields[2])
            vec = np.asarray([float(v) for v in fields[3:]])
        except ValueError:
            raise StreamFormatError(f"{path}:{lineno}: bad float value") from None
        tokens.append(TokenEmbedding(fields[0], start, end, vec))
    return tokens


def save_token_embeddings(path, tokens) -> None:
    tokens = list(tokens)
    if not tokens:
        raise ValidationError("no tokens to save")
    dim = tokens[0].vector.size
    lines = [f"dim={dim}"]
    for tok in tokens:
        if tok.vector.size != dim:
            raise DimensionMismatchError(
                f"token {tok.token!r} has dim {tok.vector.size}, expected {dim}"
            )
        vals = "\t".join(repr(float(v)) for v in tok.vector)
        lines.append(f"{tok.token}\t{repr(float(tok.start))}\t{repr(float(tok.end))}\t{vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_stream(
    path, expected_dim: int | None = None, grid: int | None = None
) -> FeatureStream:
    """Load a stream file, checking dimension and reconciling grid length.

    With ``grid`` given, a stream off by at most 2 segments is repaired
    (truncated, or padded by repeating its last segment) and a warning is
    logged; a larger mismatch raises.
    """
    stream = read_stream_file(path)
    if not np.all(np.isfinite(stream.segments)):
        raise StreamFormatError(f"{path}: stream contains non-finite values")
    if expected_dim is not None and stream.dim != expected_dim:
        raise DimensionMismatchError(
            f"{path}: stream dim {stream.dim}, expected {expected_dim}"
        )
    if grid is not None and len(stream) != grid:
        diff = grid - len(stream)
        if abs(diff) > 2:
            raise GridMismatchError(
                f"{path}: stream has {len(stream)} segments, grid expects {grid}"
            )
        if diff > 0:
            pad = np.repeat(stream.segments[-1:], diff, axis=0)
            segments = np.concatenate([stream.segments, pad], axis=0)
        else:
            segments = stream.segments[:grid]
        logger.warning(
            "%s: reconciled stream length %d to grid %d", path, len(stream), grid
        )
        stream = FeatureStream(segments, label=stream.label)
    return stream


def export_synthetic_modality(
    conversation: Conversation,
    channel: str,
    dim: int = 1,
    noise: float = 0.0,
    seed: int = 0,
    mapping: str = "identity",
) -> FeatureStream:
    """Turn a synthetic conversation's latent channel into a stream.

    ``channel`` is ``"acoustic"`` or ``"linguistic"``. With the
    ``identity`` mapping the channel lands in dimension 0 and the other
    dimensions carry only noise; the ``random`` mapping spreads the
    channel across all dimensions through a fixed random linear map.
    With ``noise=0``, ``dim=1``, and the identity mapping the stream
    equals the latent channel exactly.
    """
    if conversation.latent is None:
        raise MissingDataError(
            f"conversation {conversation.id} has no synthetic latent channels"
        )
    if channel not in ("acoustic", "linguistic"):
        raise ValidationError(f"unknown latent channel {channel!r}")
    if dim < 1:
        raise ValidationError(f"dim must be positive, got {dim}")
    if noise < 0:
        raise ValidationError(f"noise must be non-negative, got {noise}")
    latent = getattr(conversation.latent, channel)
    rng = np.random.default_rng(seed)
    if mapping == "identity":
        out = np.zeros((latent.size, dim))
        out[:, 0] = latent
    elif mapping == "random":
        weights = rng.uniform(0.5, 1.5, dim) * rng.choice([-1.0, 1.0], dim)
        out = latent[:, None] * weights[None, :]
    else:
        raise ValidationError(f"unknown mapping {mapping!r}")
    if noise > 0:
        out = out + rng.normal(0.0, noise, out.shape)
    return FeatureStream(out, label=f"synthetic-{channel}")
