"""End-to-end acceptance checks for the whole toolkit.

Each check prints one verdict line, so a verbose run doubles as a
release checklist. The corpora here are synthetic but sized so that
every number is produced by the real pipeline, not by shortcuts.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from dimemo import corpus as corpus_mod
from dimemo import embeddings, fusion, metrics, neural, training
from dimemo.corpus import SyntheticSpec, generate_synthetic, gold_reference
from dimemo.dsp import save_stream
from dimemo.lingua import FEATURES, extract_profile
from dimemo.metrics import ccc, ccc_ci, ccc_loss

from conftest import rng_for
from test_corpus import tree_digest
from test_metrics import correlated_pair, oracle_ccc


@contextmanager
def verdict(capsys, number, label):
    try:
        yield
    except BaseException:
        _announce(capsys, number, label, "FAIL")
        raise
    else:
        _announce(capsys, number, label, "PASS")


def _announce(capsys, number, label, state):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {number:2d} ({label}): {state}")


def export_all(corpus, channel, dim, noise, base_seed):
    return {
        cid: embeddings.export_synthetic_modality(
            conv, channel, dim=dim, noise=noise, seed=base_seed + i
        )
        for i, (cid, conv) in enumerate(corpus.conversations.items())
    }


def concat_gold(corpus, part):
    return np.concatenate(
        [gold_reference(corpus.conversations[cid]).values for cid in corpus.ids_in(part)]
    )


# ---------------------------------------------------------------------------
# shared corpora and training runs

@pytest.fixture(scope="module")
def learning_run():
    """One full single-modality training at the reference desk scale."""
    started = time.perf_counter()
    spec = SyntheticSpec(
        seed=11, train_count=60, dev_count=10, test_count=10, duration_mean=60.0
    )
    corpus = generate_synthetic(spec)
    streams = export_all(corpus, "linguistic", dim=6, noise=0.05, base_seed=900)
    config = training.TrainConfig(epochs=12, batch_size=8, lr=0.01, shuffle=True, seed=0)
    model, record = training.train(
        corpus, streams, config, neural.ModelConfig(input_dim=6, widths=(12, 8), seed=0)
    )
    return {
        "corpus": corpus,
        "streams": streams,
        "model": model,
        "record": record,
        "epochs": config.epochs,
        "seconds": time.perf_counter() - started,
    }


@pytest.fixture(scope="module")
def small_setup():
    spec = SyntheticSpec(
        seed=21, train_count=10, dev_count=3, test_count=3,
        duration_mean=40.0, duration_min=25.0, duration_max=60.0,
    )
    corpus = generate_synthetic(spec)
    streams = export_all(corpus, "linguistic", dim=4, noise=0.05, base_seed=300)
    return corpus, streams


@pytest.fixture(scope="module")
def fusion_setup():
    """Complementary modalities: the acoustic stream is the noisier one."""
    spec = SyntheticSpec(
        seed=41, train_count=16, dev_count=4, test_count=4,
        duration_mean=50.0, duration_min=30.0, duration_max=75.0,
    )
    corpus = generate_synthetic(spec)
    streams_a = export_all(corpus, "acoustic", dim=4, noise=0.30, base_seed=100)
    streams_l = export_all(corpus, "linguistic", dim=4, noise=0.05, base_seed=200)
    return corpus, streams_a, streams_l


# ---------------------------------------------------------------------------
# criteria

def test_criterion_01_agreement_oracle(capsys):
    with verdict(capsys, 1, "agreement vs direct oracle"):
        started = time.perf_counter()
        assert ccc([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).ccc == 1.0
        assert ccc([-1.0, 0.0, 1.0], [1.0, 0.0, -1.0]).ccc == -1.0
        assert ccc([0.0, 1.0], [0.0, 2.0]).ccc == pytest.approx(2.0 / 3.0, abs=1e-15)
        rng = rng_for("acceptance-ccc")
        for _ in range(1000):
            n = int(rng.integers(2, 501))
            x = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3.0), n)
            mix = rng.uniform(-1.0, 1.0)
            y = mix * x + rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3.0), n)
            assert abs(ccc(x, y).ccc - oracle_ccc(x, y)) <= 1e-12
        assert time.perf_counter() - started < 5.0


def test_criterion_02_interval_width_band(capsys):
    with verdict(capsys, 2, "day-scale interval widths"):
        started = time.perf_counter()
        for rho, lo, hi in ((0.65, 0.004, 0.008), (0.92, 0.001, 0.003)):
            for seed in (1, 2, 3):
                x, y = correlated_pair(86400, rho, seed)
                report = ccc_ci(x, y)
                assert report.ccc == pytest.approx(rho, abs=1e-12)
                width = report.ci_high - report.ci_low
                assert lo <= width <= hi, f"rho={rho}: width {width:.5f}"
        assert time.perf_counter() - started < 10.0


def _finite_difference_check(model, batch, refs, forward_fn, backward_fn):
    def loss():
        return ccc_loss([forward_fn(model, item) for item in batch], refs)

    grads, _ = backward_fn(model, batch, refs)
    h = 1e-5
    for name, param in model.named_parameters():
        numeric = np.zeros_like(param)
        flat_p = param.reshape(-1)
        flat_n = numeric.reshape(-1)
        for j in range(flat_p.size):
            keep = flat_p[j]
            flat_p[j] = keep + h
            up = loss()
            flat_p[j] = keep - h
            down = loss()
            flat_p[j] = keep
            flat_n[j] = (up - down) / (2 * h)
        a = grads[name]
        rel = np.linalg.norm(a - numeric) / max(
            np.linalg.norm(a) + np.linalg.norm(numeric), 1e-12
        )
        assert rel <= 1e-4, f"{name}: block error {rel:.3e}"


def test_criterion_03_gradient_correctness(capsys):
    with verdict(capsys, 3, "analytic vs numeric gradients"):
        started = time.perf_counter()
        rng = rng_for("acceptance-grad")
        single = neural.init_model(neural.ModelConfig(input_dim=3, widths=(4, 3), seed=7))
        batch = [rng.normal(0, 1, (7, 3)), rng.normal(0, 1, (4, 3))]
        refs = [rng.uniform(0, 1, 7), rng.uniform(0, 1, 4)]
        _finite_difference_check(single, batch, refs, neural.forward, neural.backward)

        config_a = neural.ModelConfig(input_dim=3, widths=(3, 2, 2), seed=1)
        config_l = neural.ModelConfig(input_dim=4, widths=(3, 2, 2), seed=2)
        pair_batch = [
            (rng.normal(0, 1, (6, 3)), rng.normal(0, 1, (6, 4))),
            (rng.normal(0, 1, (4, 3)), rng.normal(0, 1, (4, 4))),
        ]
        pair_refs = [rng.uniform(0, 1, 6), rng.uniform(0, 1, 4)]
        for kind in ("early", "late"):
            fused = fusion.build_model_fusion(kind, config_a, config_l, seed=5)
            _finite_difference_check(
                fused, pair_batch, pair_refs, fusion.forward_fused, fusion.backward_fused
            )
        assert time.perf_counter() - started < 60.0


def test_criterion_04_end_to_end_learning(learning_run, capsys):
    with verdict(capsys, 4, "end-to-end learning bands"):
        record = learning_run["record"]
        assert learning_run["epochs"] <= 200
        assert max(record.dev_ccc) >= 0.85, f"dev {max(record.dev_ccc):.4f}"
        assert record.test_report.ccc >= 0.80, f"test {record.test_report.ccc:.4f}"
        assert learning_run["seconds"] < 600.0


def test_criterion_05_model_selection(learning_run, capsys):
    with verdict(capsys, 5, "returned model is the dev argmax"):
        corpus = learning_run["corpus"]
        model = learning_run["model"]
        record = learning_run["record"]
        preds = np.concatenate(
            [neural.forward(model, learning_run["streams"][cid])
             for cid in corpus.ids_in("dev")]
        )
        score = ccc(preds, concat_gold(corpus, "dev")).ccc
        assert score == max(record.dev_ccc)
        assert record.dev_ccc[record.best_epoch - 1] == max(record.dev_ccc)
        assert record.best_epoch == record.dev_ccc.index(max(record.dev_ccc)) + 1


def test_criterion_06_decision_weight_oracle(fusion_setup, capsys):
    with verdict(capsys, 6, "decision-weight grid oracle"):
        corpus, streams_a, streams_l = fusion_setup
        dev_refs = concat_gold(corpus, "dev")
        for k in range(20):
            model_a = neural.init_model(
                neural.ModelConfig(input_dim=4, widths=(6, 4), seed=1000 + k)
            )
            model_l = neural.init_model(
                neural.ModelConfig(input_dim=4, widths=(6, 4), seed=2000 + k)
            )
            result = fusion.search_decision_weight(
                model_a, model_l, corpus, streams_a, streams_l
            )
            preds_a = np.concatenate(
                [neural.forward(model_a, streams_a[cid]) for cid in corpus.ids_in("dev")]
            )
            preds_l = np.concatenate(
                [neural.forward(model_l, streams_l[cid]) for cid in corpus.ids_in("dev")]
            )
            oracle = [
                ccc(w * preds_a + (1.0 - w) * preds_l, dev_refs).ccc
                for w, _ in result.grid_scores
            ]
            best = 0
            for j in range(1, len(oracle)):
                if oracle[j] > oracle[best]:
                    best = j
            assert result.w_a == result.grid_scores[best][0]
            for (w, score), expected in zip(result.grid_scores, oracle):
                assert score == expected, f"instance {k}, w={w}"
            chosen = dict(result.grid_scores)[result.w_a]
            assert all(chosen >= score for _, score in result.grid_scores)


def test_criterion_07_fusion_beats_weak_modality(fusion_setup, capsys):
    with verdict(capsys, 7, "fusion beats the noisy modality"):
        corpus, streams_a, streams_l = fusion_setup
        ids = list(corpus.conversations)
        fused_streams = {
            cid: fusion.fuse_features(streams_a[cid], streams_l[cid]) for cid in ids
        }
        pairs = {cid: (streams_a[cid], streams_l[cid]) for cid in ids}
        widths = (8, 6, 4)
        scores = {k: [] for k in ("acoustic", "feature", "early", "late", "decision")}
        for seed in (0, 1, 2):
            config = training.TrainConfig(
                epochs=12, batch_size=4, lr=0.01, shuffle=True, seed=seed
            )
            config_a = neural.ModelConfig(input_dim=4, widths=widths, seed=seed)
            config_l = neural.ModelConfig(input_dim=4, widths=widths, seed=seed)
            model_a, record_a = training.train(corpus, streams_a, config, config_a)
            model_l, _ = training.train(corpus, streams_l, config, config_l)
            scores["acoustic"].append(record_a.test_report.ccc)
            _, record = training.train(
                corpus, fused_streams, config,
                neural.ModelConfig(input_dim=8, widths=widths, seed=seed),
            )
            scores["feature"].append(record.test_report.ccc)
            for kind in ("early", "late"):
                spec = fusion.FusionSpec(
                    kind=kind, config_a=config_a, config_l=config_l, seed=seed
                )
                _, record = training.train(corpus, pairs, config, spec)
                scores[kind].append(record.test_report.ccc)
            result = fusion.search_decision_weight(
                model_a, model_l, corpus, streams_a, streams_l
            )
            scores["decision"].append(result.test_report.ccc)
        weak = np.mean(scores["acoustic"])
        for strategy in ("feature", "early", "late", "decision"):
            fused_mean = np.mean(scores[strategy])
            assert fused_mean > weak, (
                f"{strategy}: {fused_mean:.4f} vs acoustic {weak:.4f}"
            )


def test_criterion_08_annotator_variability(capsys):
    with verdict(capsys, 8, "per-annotator spread tracks noise"):
        mean_cvs = []
        for noise in (0.0, 0.05, 0.15):
            cvs = []
            for seed in (0, 1, 2):
                spec = SyntheticSpec(
                    seed=21, train_count=10, dev_count=3, test_count=3,
                    duration_mean=40.0, duration_min=25.0, duration_max=60.0,
                    annotator_noise=noise,
                )
                corpus = generate_synthetic(spec)
                streams = export_all(corpus, "linguistic", dim=4, noise=0.05, base_seed=300)
                config = training.TrainConfig(
                    epochs=6, batch_size=4, lr=0.01, shuffle=True, seed=seed
                )
                result = training.per_annotator_protocol(
                    corpus, streams, config,
                    neural.ModelConfig(input_dim=4, widths=(8, 6), seed=seed),
                )
                tests = np.array([entry.test.ccc for entry in result.individual])
                oracle_cv = tests.std() / tests.mean()
                avg, cv = result.summary("individual", "test")
                assert abs(cv - oracle_cv) <= 1e-12
                assert abs(avg - tests.mean()) <= 1e-12
                if noise == 0.0:
                    assert cv < 0.02, f"seed {seed}: cv {cv:.4f}"
                cvs.append(cv)
            mean_cvs.append(np.mean(cvs))
        assert mean_cvs[0] < mean_cvs[1] < mean_cvs[2], mean_cvs


def test_criterion_09_determinism_and_spread(small_setup, tmp_path, capsys):
    with verdict(capsys, 9, "bit-identical reruns, seeded spread"):
        corpus, streams = small_setup
        config = training.TrainConfig(epochs=4, batch_size=4, lr=0.01, shuffle=True, seed=0)
        model_config = neural.ModelConfig(input_dim=4, widths=(8, 6), seed=0)
        blobs = []
        records = []
        for run in range(2):
            model, record = training.train(corpus, streams, config, model_config)
            model_path = tmp_path / f"run{run}.mdl"
            neural.save_model(model, model_path)
            blobs.append(model_path.read_bytes())
            record_path = tmp_path / f"run{run}.csv"
            training.write_train_record(record, record_path)
            records.append(record_path.read_bytes())
        assert blobs[0] == blobs[1]
        assert records[0] == records[1]

        sweep = training.seed_sweep(
            corpus, streams,
            training.TrainConfig(epochs=3, batch_size=4, lr=0.01, shuffle=True, seed=0),
            neural.ModelConfig(input_dim=4, widths=(8, 6)),
            seeds=(0, 1, 2, 3, 4),
        )
        assert sweep.std > 0.0
        assert sweep.min < sweep.max


def test_criterion_10_orality_counts(capsys):
    with verdict(capsys, 10, "orality hand counts and drop response"):
        def spoken(text, step=0.3):
            return [
                corpus_mod.TimedWord(tok, round(i * step, 3), round(i * step + 0.2, 3))
                for i, tok in enumerate(text.split())
            ]

        profile = extract_profile(spoken("c'est c'est pas bien hein"))
        assert profile.totals == {
            "deg1": 1, "deg2": 0, "filled": 1, "strong": 0,
            "weak": 0, "neg": 1, "cest": 2,
        }
        profile = extract_profile(spoken("euh bon bon quand même"))
        assert profile.totals == {
            "deg1": 1, "deg2": 0, "filled": 1, "strong": 0,
            "weak": 1, "neg": 0, "cest": 0,
        }

        spec = SyntheticSpec(
            seed=31, train_count=20, dev_count=2, test_count=2,
            duration_mean=90.0, duration_min=60.0, duration_max=150.0,
            drops_per_minute=1.0,
        )
        corpus = generate_synthetic(spec)
        width, window = 2.5, 15.0
        k = int(window / width)
        clue_cols = [FEATURES.index("filled"), FEATURES.index("neg")]
        pre_total = post_total = drops_used = 0
        for conv in corpus.conversations.values():
            if not conv.transcript:
                continue
            counts = extract_profile(conv.transcript, bin_width=width).bin_counts
            clue = counts[:, clue_cols].sum(axis=1)
            for drop_time in conv.latent.drop_times:
                if drop_time < window or drop_time + window > conv.duration:
                    continue
                b = int(drop_time / width)
                pre_total += clue[b - k: b].sum()
                post_total += clue[b: b + k].sum()
                drops_used += 1
        assert drops_used >= 10
        assert post_total > pre_total, f"post {post_total} <= pre {pre_total}"


def test_criterion_11_round_trips(learning_run, tmp_path, capsys):
    with verdict(capsys, 11, "save-load-save byte identity"):
        spec = SyntheticSpec(
            seed=51, train_count=3, dev_count=1, test_count=1,
            duration_mean=25.0, duration_min=15.0, duration_max=40.0,
            with_audio=True,
        )
        corpus = generate_synthetic(spec)
        first, second = tmp_path / "c1", tmp_path / "c2"
        corpus_mod.save_corpus(corpus, first)
        corpus_mod.save_corpus(corpus_mod.load_corpus(first), second)
        assert tree_digest(first) == tree_digest(second)

        stream = next(iter(learning_run["streams"].values()))
        s1, s2 = tmp_path / "a.fstm", tmp_path / "b.fstm"
        save_stream(stream, s1)
        save_stream(embeddings.load_stream(s1), s2)
        assert s1.read_bytes() == s2.read_bytes()

        m1, m2 = tmp_path / "a.mdl", tmp_path / "b.mdl"
        neural.save_model(learning_run["model"], m1)
        neural.save_model(neural.load_model(m1), m2)
        assert m1.read_bytes() == m2.read_bytes()
