"""Relation-aware class/attribute association learning and zero-shot classification.

The pieces most callers need are re-exported here; everything else lives in
the submodules (``embeddings``, ``relations``, ``factor_model``,
``associations``, ``zsl``, ``metrics``).
"""

__version__ = "0.1.0"

from .associations import (
    FIXED_HALF,
    AssociationPrediction,
    ThresholdPair,
    calibrate_thresholds,
    predict_associations,
    select_hyperparameters,
)
from .embeddings import EmbeddingTable, embed_phrase, load_embeddings, nearest_neighbors
from .errors import DataError, MissingTokenError, TrainingError
from .factor_model import (
    FactorizedRelationModel,
    TrainConfig,
    init_model,
    load_model,
    project_l1,
    save_model,
    train,
)
from .metrics import average_precision, binary_accuracy, mean_ap, mean_per_class_accuracy, pr_curve
from .relations import (
    UNKNOWN,
    AssociationMatrix,
    AttributeDataset,
    AttributeVocabulary,
    ClassVocabulary,
    RelationSchema,
    build_triplets,
    discover_relations,
    merge_vocabularies,
)
from .zsl import classify_zsl, dap_score

__all__ = [name for name in dir() if not name.startswith("_")]
