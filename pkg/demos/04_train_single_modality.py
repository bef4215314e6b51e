"""
Training a bidirectional recurrent regressor
============================================

One model per modality: a stacked bidirectional LSTM reads the whole
conversation and emits one satisfaction value per 250 ms step. The
trainer minimizes 1 - ccc with Adam, tracks the Dev score every epoch,
and hands back the parameters of the best epoch, not the last one.
"""

import tempfile
from pathlib import Path

import numpy as np

from dimemo.corpus import SyntheticSpec, generate_synthetic
from dimemo.embeddings import export_synthetic_modality
from dimemo.neural import ModelConfig, forward, load_model, parameter_count, save_model
from dimemo.training import TrainConfig, train, write_train_record

# 1. A small corpus and a linguistic feature stream per conversation.
spec = SyntheticSpec(
    seed=11, train_count=12, dev_count=4, test_count=4,
    duration_mean=45.0, duration_min=25.0, duration_max=70.0,
)
corpus = generate_synthetic(spec)
streams = {
    cid: export_synthetic_modality(conv, "linguistic", dim=6, noise=0.05, seed=900 + i)
    for i, (cid, conv) in enumerate(corpus.conversations.items())
}

# 2. Two stacked biLSTM layers, 12 and 8 units per direction.
model_config = ModelConfig(input_dim=6, widths=(12, 8), seed=0)
config = TrainConfig(epochs=10, batch_size=4, lr=0.01, shuffle=True, seed=0)
model, record = train(corpus, streams, config, model_config)
print(f"parameters: {parameter_count(model)}")

print("\nepoch  dev ccc")
for epoch, score in enumerate(record.dev_ccc, start=1):
    marker = "  <- kept" if epoch == record.best_epoch else ""
    print(f"  {epoch:3d}   {score:.4f}{marker}")

report = record.test_report
print(f"\ntest ccc {report.ccc:.4f}  [{report.ci_low:.4f}; {report.ci_high:.4f}]"
      f"  over n={report.n} steps")

# 3. The record serializes without timestamps, so a rerun with the same
#    seeds writes the identical file. The model file reloads bitwise.
with tempfile.TemporaryDirectory() as tmp:
    record_path = Path(tmp) / "run.record.csv"
    write_train_record(record, record_path)
    print(f"\nrecord file:\n{record_path.read_text().strip().splitlines()[-1]}")

    model_path = Path(tmp) / "run.mdl"
    save_model(model, model_path)
    clone = load_model(model_path)
    cid = corpus.split.test[0]
    same = np.array_equal(forward(model, streams[cid]), forward(clone, streams[cid]))
    print(f"reloaded model predicts identically: {same}")
