import math
import struct

import numpy as np
import pytest

from dimemo.dsp import (
    FRAME_HOP,
    FRAME_LEN,
    MFCC_DIM,
    N_MELS,
    FeatureStream,
    FrameFeatures,
    NormStats,
    aggregate_to_segments,
    apply_norm,
    fit_norm,
    mfcc,
    normalize_array,
    read_stream_file,
    save_stream,
)
from dimemo.errors import DimensionMismatchError, StreamFormatError, ValidationError

from conftest import rng_for

SR = 8000


def hz_to_mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


class TestMfcc:
    def test_frame_count_one_second(self):
        audio = rng_for("frames").normal(0, 0.1, SR)
        feats = mfcc(audio)
        # 240-sample window sliding by 80: floor((8000 - 240) / 80) + 1
        assert feats.frames.shape == (98, MFCC_DIM)
        assert feats.hop == FRAME_HOP

    def test_silence_is_finite_with_zero_deltas(self):
        feats = mfcc(np.zeros(SR)).frames
        assert np.all(np.isfinite(feats))
        # every frame identical (floored log energy), so deltas vanish
        assert np.max(np.abs(feats[:, 12:])) == 0.0
        assert np.max(np.ptp(feats[:, :12], axis=0)) == 0.0

    def test_tone_lands_in_matching_mel_band(self):
        freq = 1000.0
        t = np.arange(2 * SR) / SR
        tone = 0.5 * np.sin(2 * np.pi * freq * t)
        capture = {}
        mfcc(tone, capture=capture)
        energies = capture["filterbank_energy"]
        assert energies.shape[1] == N_MELS
        # centers of the triangular filters on the HTK mel scale, 0-4000 Hz
        edges = np.linspace(hz_to_mel(0.0), hz_to_mel(4000.0), N_MELS + 2)
        centers = np.array([mel_to_hz(m) for m in edges[1:-1]])
        expected = int(np.argmin(np.abs(centers - freq)))
        got = int(np.argmax(energies.mean(axis=0)))
        assert abs(got - expected) <= 1

    def test_hop_shift_reproduces_interior_frames(self):
        rng = rng_for("shift")
        signal = rng.normal(0, 0.2, SR)
        shifted = np.concatenate([np.zeros(80), signal])
        a = mfcc(signal).frames
        b = mfcc(shifted).frames
        # static coefficients: frame i of the original is frame i+1 shifted
        n = a.shape[0] - 1
        assert np.allclose(b[1:1 + n, :12], a[:n, :12], atol=1e-12)
        # deltas need two clean neighbours on each side
        assert np.allclose(b[3:n - 1, 12:], a[2:n - 2, 12:], atol=1e-12)

    def test_rejects_too_short_audio(self):
        with pytest.raises(ValidationError):
            mfcc(np.zeros(100))

    def test_window_constants(self):
        assert FRAME_LEN == pytest.approx(0.030)
        assert FRAME_HOP == pytest.approx(0.010)


class TestAggregate:
    def test_one_second_gives_four_segments(self):
        audio = rng_for("agg-sec").normal(0, 0.1, SR)
        stream = aggregate_to_segments(mfcc(audio), 1.0, label="x")
        assert stream.segments.shape == (4, 2 * MFCC_DIM)
        assert stream.label == "x"

    def test_matches_two_pass_oracle(self):
        rng = rng_for("agg-oracle")
        frames = rng.normal(0, 1, (98, 5))
        stream = aggregate_to_segments(FrameFeatures(frames), 1.0)
        for s in range(4):
            chunk = frames[s * 25: (s + 1) * 25]
            mean = chunk.sum(axis=0) / chunk.shape[0]
            var = ((chunk - mean) ** 2).sum(axis=0) / chunk.shape[0]
            assert np.allclose(stream.segments[s, :5], mean, atol=1e-12)
            assert np.allclose(stream.segments[s, 5:], np.sqrt(var), atol=1e-12)

    def test_constant_frames_give_zero_spread(self):
        frames = np.full((50, 3), 2.5)
        stream = aggregate_to_segments(FrameFeatures(frames), 0.5)
        assert np.allclose(stream.segments[:, :3], 2.5)
        assert np.max(np.abs(stream.segments[:, 3:])) == 0.0

    def test_empty_tail_copies_previous_row(self):
        rng = rng_for("agg-tail")
        frames = rng.normal(0, 1, (98, 4))
        # 1.5 s needs 6 segments but 98 frames only reach into the 4th
        stream = aggregate_to_segments(FrameFeatures(frames), 1.5)
        assert stream.segments.shape == (6, 8)
        assert np.array_equal(stream.segments[4], stream.segments[3])
        assert np.array_equal(stream.segments[5], stream.segments[3])

    def test_row_count_follows_duration_not_frames(self):
        frames = rng_for("agg-rows").normal(0, 1, (98, 4))
        assert aggregate_to_segments(FrameFeatures(frames), 0.9).segments.shape[0] == 4
        assert aggregate_to_segments(FrameFeatures(frames), 1.01).segments.shape[0] == 5

    def test_no_frames_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_to_segments(FrameFeatures(np.zeros((0, 4))), 1.0)

    def test_incompatible_hop_rejected(self):
        frames = FrameFeatures(np.zeros((10, 2)), hop=0.03)
        with pytest.raises(ValidationError):
            aggregate_to_segments(frames, 1.0)


class TestNorm:
    def test_pooled_stats_standardize(self):
        rng = rng_for("norm")
        streams = [
            FeatureStream(rng.normal(3.0, 2.0, (40, 6))),
            FeatureStream(rng.normal(-1.0, 0.5, (25, 6))),
        ]
        stats = fit_norm(streams)
        pooled = np.vstack([normalize_array(s.segments, stats) for s in streams])
        assert np.allclose(pooled.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(pooled.std(axis=0), 1.0, atol=1e-10)

    def test_constant_dimension_passes_through_centered(self):
        base = rng_for("norm-const").normal(0, 1, (30, 2))
        seg = np.column_stack([base, np.full(30, 7.0)])
        stats = fit_norm([FeatureStream(seg)])
        out = normalize_array(seg, stats)
        assert np.allclose(out[:, 2], 0.0)
        assert np.allclose(out[:, :2].std(axis=0), 1.0, atol=1e-10)

    def test_identity_stats(self):
        seg = rng_for("norm-id").normal(0, 1, (10, 3))
        stats = NormStats.identity(3)
        assert np.array_equal(normalize_array(seg, stats), seg)

    def test_apply_norm_keeps_label(self):
        seg = rng_for("norm-label").normal(0, 1, (10, 3))
        stream = FeatureStream(seg, label="keep")
        out = apply_norm(stream, fit_norm([stream]))
        assert out.label == "keep"
        assert out.segments.shape == seg.shape

    def test_dim_mismatch_rejected(self):
        stats = NormStats.identity(3)
        with pytest.raises(DimensionMismatchError):
            normalize_array(np.zeros((4, 5)), stats)


class TestStreamFiles:
    def test_binary_round_trip_is_exact(self, tmp_path):
        rng = rng_for("fstm")
        seg = rng.normal(0, 1, (17, 48)).astype(np.float32).astype(np.float64)
        stream = FeatureStream(seg, label="conv0001/mfcc")
        path = tmp_path / "s.fstm"
        save_stream(stream, path)
        back = read_stream_file(path)
        assert np.array_equal(back.segments, seg)
        assert back.label == "conv0001/mfcc"

    def test_payload_is_single_precision_little_endian(self, tmp_path):
        seg = np.array([[1.5, -2.25]])
        path = tmp_path / "s.fstm"
        save_stream(FeatureStream(seg, label="z"), path)
        blob = path.read_bytes()
        assert blob.startswith(b"FSTM")
        assert blob[-8:] == struct.pack("<2f", 1.5, -2.25)

    def test_truncated_payload_rejected(self, tmp_path):
        seg = rng_for("trunc").normal(0, 1, (5, 4))
        path = tmp_path / "s.fstm"
        save_stream(FeatureStream(seg), path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(StreamFormatError):
            read_stream_file(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(StreamFormatError):
            read_stream_file(tmp_path / "absent.fstm")

    def test_csv_mirror_reads(self, tmp_path):
        path = tmp_path / "feat.csv"
        path.write_text(
            "time,f0,f1\n"
            "0.0,1.0,2.0\n"
            "0.25,3.0,4.0\n"
        )
        stream = read_stream_file(path)
        assert np.array_equal(stream.segments, [[1.0, 2.0], [3.0, 4.0]])

    def test_csv_bad_field_count_names_line(self, tmp_path):
        path = tmp_path / "feat.csv"
        path.write_text("time,f0,f1\n0.0,1.0,2.0\n0.25,3.0\n")
        with pytest.raises(StreamFormatError) as err:
            read_stream_file(path)
        assert ":3:" in str(err.value)
