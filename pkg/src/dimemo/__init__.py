"""Continuous satisfaction/frustration tracking over call conversations.

The package predicts a continuous satisfaction value every 250 ms of a
conversation from acoustic or linguistic feature streams with a
from-scratch bidirectional LSTM, evaluates agreement with annotator
references through the concordance correlation coefficient (with
confidence intervals), fuses modalities at the feature, model, and
decision levels, and relates interpretable orality clues in the
transcript to the satisfaction curve. A synthetic corpus generator
provides fully reproducible end-to-end experiments.
"""

__version__ = "0.1.0"

from .corpus import (
    Conversation,
    Corpus,
    DatasetSplit,
    SyntheticSpec,
    generate_synthetic,
    gold_reference,
    load_corpus,
    save_corpus,
)
from .dsp import (
    FeatureStream,
    FrameFeatures,
    NormStats,
    aggregate_to_segments,
    apply_norm,
    fit_norm,
    mfcc,
    read_stream_file,
    save_stream,
)
from .embeddings import (
    ContextVariant,
    TokenEmbedding,
    align_tokens_to_grid,
    export_synthetic_modality,
    load_stream,
    load_token_embeddings,
)
from .errors import DimemoError
from .fusion import (
    DecisionFusedModel,
    FusedRegressorModel,
    FusionSpec,
    WeightGrid,
    build_model_fusion,
    decision_fuse,
    fuse_features,
    search_decision_weight,
)
from .lingua import (
    ClueLexicon,
    OralityProfile,
    align_profile_with_reference,
    default_lexicon,
    extract_profile,
    tag_events,
)
from .metrics import CccReport, ccc, ccc_ci, ccc_loss, coefficient_of_variation
from .neural import (
    ModelConfig,
    RegressorModel,
    forward,
    init_model,
    load_model,
    save_model,
)
from .training import (
    TrainConfig,
    TrainRecord,
    evaluate,
    per_annotator_protocol,
    seed_sweep,
    train,
)

__all__ = [
    "__version__",
    "Conversation", "Corpus", "DatasetSplit", "SyntheticSpec",
    "generate_synthetic", "gold_reference", "load_corpus", "save_corpus",
    "FeatureStream", "FrameFeatures", "NormStats", "aggregate_to_segments",
    "apply_norm", "fit_norm", "mfcc", "read_stream_file", "save_stream",
    "ContextVariant", "TokenEmbedding", "align_tokens_to_grid",
    "export_synthetic_modality", "load_stream", "load_token_embeddings",
    "DimemoError",
    "DecisionFusedModel", "FusedRegressorModel", "FusionSpec", "WeightGrid",
    "build_model_fusion", "decision_fuse", "fuse_features", "search_decision_weight",
    "ClueLexicon", "OralityProfile", "align_profile_with_reference",
    "default_lexicon", "extract_profile", "tag_events",
    "CccReport", "ccc", "ccc_ci", "ccc_loss", "coefficient_of_variation",
    "ModelConfig", "RegressorModel", "forward", "init_model", "load_model", "save_model",
    "TrainConfig", "TrainRecord", "evaluate", "per_annotator_protocol",
    "seed_sweep", "train",
]
