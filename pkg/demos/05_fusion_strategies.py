"""
Four ways to combine acoustics and words
========================================

Fusion can happen at the input (feature), after the first layer
(early), before the head (late), or on the predictions themselves
(decision). This script trains all four on a corpus where the acoustic
stream is deliberately the noisier one, then prints the usual Dev/Test
table. Expect every fused variant to beat acoustic-only.
"""

import numpy as np

from dimemo.corpus import SyntheticSpec, generate_synthetic
from dimemo.embeddings import export_synthetic_modality
from dimemo.fusion import FusionSpec, fuse_features, search_decision_weight
from dimemo.neural import ModelConfig
from dimemo.training import TrainConfig, evaluate, train

# 1. Complementary modalities: acoustic noise 0.30 vs linguistic 0.05.
spec = SyntheticSpec(
    seed=41, train_count=16, dev_count=4, test_count=4,
    duration_mean=50.0, duration_min=30.0, duration_max=75.0,
)
corpus = generate_synthetic(spec)
ids = list(corpus.conversations)
streams_a = {cid: export_synthetic_modality(conv, "acoustic", dim=4, noise=0.30, seed=100 + i)
             for i, (cid, conv) in enumerate(corpus.conversations.items())}
streams_l = {cid: export_synthetic_modality(conv, "linguistic", dim=4, noise=0.05, seed=200 + i)
             for i, (cid, conv) in enumerate(corpus.conversations.items())}

widths = (8, 6, 4)
config = TrainConfig(epochs=12, batch_size=4, lr=0.01, shuffle=True, seed=0)
config_a = ModelConfig(input_dim=4, widths=widths, seed=0)
config_l = ModelConfig(input_dim=4, widths=widths, seed=0)
rows = []

# 2. Single-modality baselines; the acoustic one is the bar to clear.
model_a, record_a = train(corpus, streams_a, config, config_a)
model_l, record_l = train(corpus, streams_l, config, config_l)
rows.append(("acoustic only", record_a.test_report.ccc))
rows.append(("linguistic only", record_l.test_report.ccc))

# 3. Feature fusion: concatenate the streams, train one wider model.
fused_streams = {cid: fuse_features(streams_a[cid], streams_l[cid]) for cid in ids}
_, record = train(corpus, fused_streams, config, ModelConfig(input_dim=8, widths=widths, seed=0))
rows.append(("feature fusion", record.test_report.ccc))

# 4. Early and late model fusion: two branch stacks that merge into a
#    shared trunk after one layer, or only before the output head.
pairs = {cid: (streams_a[cid], streams_l[cid]) for cid in ids}
for kind in ("early", "late"):
    fusion_spec = FusionSpec(kind=kind, config_a=config_a, config_l=config_l, seed=0)
    _, record = train(corpus, pairs, config, fusion_spec)
    rows.append((f"{kind} fusion", record.test_report.ccc))

# 5. Decision fusion: keep both single models and grid-search the
#    weight of their prediction average on Dev (81 candidates).
result = search_decision_weight(model_a, model_l, corpus, streams_a, streams_l)
rows.append(("decision fusion", result.test_report.ccc))
print(f"decision weight: w_a = {result.w_a:.2f}, w_l = {result.w_l:.2f}")

print("\nstrategy          test ccc")
for name, score in rows:
    print(f"  {name:<15s} {score:.4f}")
bar = dict(rows)["acoustic only"]
beaten = sum(score > bar for name, score in rows if "fusion" in name)
print(f"\nfused variants beating the noisy modality: {beaten}/4")
