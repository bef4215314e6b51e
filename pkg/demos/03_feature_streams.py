"""
From raw signals to 250 ms feature segments
===========================================

Both modalities end up in the same place: one feature vector per 250 ms
grid step, stored as an FSTM stream. Acoustics get there through MFCCs
aggregated over each segment; words get there by averaging token
vectors over the segments they overlap.
"""

import tempfile
from pathlib import Path

import numpy as np

from dimemo.corpus import SyntheticSpec, generate_synthetic
from dimemo.dsp import aggregate_to_segments, fit_norm, apply_norm, mfcc, save_stream
from dimemo.embeddings import TokenEmbedding, align_tokens_to_grid, load_stream

# 1. A conversation with synthesized 8 kHz telephone audio.
spec = SyntheticSpec(
    seed=3, train_count=1, dev_count=1, test_count=1,
    duration_mean=30.0, duration_min=20.0, duration_max=40.0, with_audio=True,
)
corpus = generate_synthetic(spec)
conv = corpus.conversations[corpus.split.train[0]]
print(f"{conv.id}: {conv.duration:.1f} s of audio, {conv.grid} grid steps")

# 2. MFCC frames: 30 ms windows every 10 ms, cepstra c1..c12 plus their
#    deltas = 24 coefficients per frame.
frames = mfcc(conv.audio, conv.sample_rate)
print(f"frames: {frames.frames.shape[0]} x {frames.frames.shape[1]} "
      f"(frame step {frames.hop * 1000:.0f} ms)")

# 3. Aggregation to the annotation grid: mean and spread of the frames
#    inside each 250 ms segment, giving 48 dims per segment.
acoustic = aggregate_to_segments(frames, conv.duration, label="mfcc")
print(f"acoustic stream: {acoustic.segments.shape} '{acoustic.label}'")

# 4. The linguistic path: token vectors averaged per overlapped segment.
#    Here the vectors are random stand-ins for sentence-encoder slices.
rng = np.random.default_rng(11)
tokens = [
    TokenEmbedding(w.token, w.start, w.end, rng.normal(0, 1, 16))
    for w in conv.transcript
]
linguistic = align_tokens_to_grid(tokens, conv.duration, label="tokens")
covered = (np.abs(linguistic.segments).sum(axis=1) > 0).mean()
print(f"linguistic stream: {linguistic.segments.shape}, "
      f"{covered:.0%} of segments overlap a word")

# 5. Normalization statistics are fitted on training streams only, then
#    applied everywhere, so dev and test never leak into the scaling.
stats = fit_norm([acoustic])
normed = apply_norm(acoustic, stats)
print(f"after normalization: per-dim mean ~{normed.segments.mean():.1e}, "
      f"std ~{normed.segments.std():.3f}")

# 6. Streams persist as compact binary FSTM files and reload exactly.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / f"{conv.id}.fstm"
    save_stream(acoustic, path)
    back = load_stream(path, expected_dim=acoustic.dim, grid=conv.grid)
    print(f"FSTM file {path.stat().st_size} bytes; "
          f"round trip max error {np.abs(back.segments - acoustic.segments).max():.1e}")
