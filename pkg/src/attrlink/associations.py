"""Binary association decisions for unseen classes, threshold calibration and
hyperparameter selection by cross-validation over seen classes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .factor_model import (
    FactorizedRelationModel,
    TrainConfig,
    association_probabilities,
    init_model,
    train,
)
from .metrics import mean_ap, per_class_accuracy
from .relations import AttributeDataset, ClassVocabulary, RelationSchema, build_triplets
from .zsl import ABSTAIN, NEGATIVE, POSITIVE, PosteriorDataset, dap_log_scores

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdPair:
    t_minus: float
    t_plus: float

    def __post_init__(self):
        if not (0 <= self.t_minus <= self.t_plus <= 1):
            raise DataError(f"need 0 <= t_minus <= t_plus <= 1, got ({self.t_minus}, {self.t_plus})")


FIXED_HALF = ThresholdPair(0.5, 0.5)


@dataclass(frozen=True, eq=False)
class AssociationPrediction:
    class_name: str
    attribute_names: tuple[str, ...]
    probabilities: np.ndarray
    decisions: np.ndarray  # POSITIVE / NEGATIVE / ABSTAIN per attribute

    def positives(self):
        return [a for a, d in zip(self.attribute_names, self.decisions) if d == POSITIVE]

    def negatives(self):
        return [a for a, d in zip(self.attribute_names, self.decisions) if d == NEGATIVE]


def decide(probabilities, thresholds: ThresholdPair) -> np.ndarray:
    p = np.asarray(probabilities, dtype=np.float64)
    out = np.full(p.shape, ABSTAIN, dtype=np.int8)
    out[p > thresholds.t_plus] = POSITIVE
    out[p < thresholds.t_minus] = NEGATIVE
    return out


def predict_associations(
    model: FactorizedRelationModel,
    schema: RelationSchema | None,
    class_vec,
    thresholds: ThresholdPair,
    class_name: str = "",
) -> AssociationPrediction:
    assignment = model.assignment if schema is None else schema.assignment
    probs = association_probabilities(model, class_vec, assignment)[0]
    return AssociationPrediction(class_name, tuple(model.attribute_names), probs, decide(probs, thresholds))


def threshold_grid(step: float) -> list[ThresholdPair]:
    """All pairs on ``{0, step, ..., 1}`` with ``t_minus <= t_plus``."""
    if not 0 < step <= 1:
        raise DataError(f"grid step {step} must lie in (0, 1]")
    n = int(math.floor(1 / step + 1e-9))
    values = [round(i * step, 12) for i in range(n + 1)]
    pairs = [ThresholdPair(a, b) for i, a in enumerate(values) for b in values[i:]]
    if not pairs:
        raise DataError("empty threshold grid")
    return pairs


def select_thresholds(grid, scores) -> ThresholdPair:
    """Best-scoring pair; ties go to the wider abstention band, then smaller t_minus."""
    best = max(
        range(len(grid)),
        key=lambda i: (scores[i], round(grid[i].t_plus - grid[i].t_minus, 12), -grid[i].t_minus),
    )
    return grid[best]


def _restrict(dataset: AttributeDataset, train_names) -> AttributeDataset:
    """Same data with only ``train_names`` marked as seen."""
    train_names = set(train_names)
    classes = ClassVocabulary(dataset.classes.names, tuple(n in train_names for n in dataset.classes.names))
    return AttributeDataset(classes, dataset.attrs, dataset.schema, dataset.assoc)


def fit(dataset: AttributeDataset, class_emb, attr_emb, cfg: TrainConfig) -> FactorizedRelationModel:
    """Initialise and train a model on the seen classes of ``dataset``."""
    data = build_triplets(dataset.assoc, dataset.schema, dataset.classes)
    model = init_model(
        np.shape(class_emb)[1], dataset.schema.n_relations, cfg.n_factors, cfg.lam,
        class_emb, attr_emb, seed=cfg.seed, init_scale=cfg.init_scale,
        relation_names=dataset.schema.relation_names,
        attribute_names=dataset.attrs.names,
        assignment=dataset.schema.assignment,
    )
    model, _ = train(model, data, cfg)
    return model


def holdout_folds(n_seen: int, k_holdout: int, folds: int, seed: int) -> list[np.ndarray]:
    """``folds`` sets of ``k_holdout`` positions, taken cyclically from a seeded permutation."""
    if not 0 < k_holdout < n_seen:
        raise DataError(f"k_holdout={k_holdout} must be in [1, {n_seen - 1}]")
    perm = np.random.default_rng(seed).permutation(n_seen)
    return [perm[(f * k_holdout + np.arange(k_holdout)) % n_seen] for f in range(folds)]


def score_threshold_grid(
    dataset: AttributeDataset,
    class_emb,
    attr_emb,
    posteriors: PosteriorDataset,
    cfg: TrainConfig,
    k_holdout: int | None = None,
    folds: int = 5,
    grid_step: float = 0.05,
):
    """Mean held-out ZSL accuracy of every grid pair. Returns ``(grid, scores)``."""
    grid = threshold_grid(grid_step)
    seen = dataset.classes.seen_names()
    if k_holdout is None:
        k_holdout = max(1, math.ceil(0.2 * len(seen)))
    class_emb = np.asarray(class_emb, dtype=np.float64)
    col = {a: i for i, a in enumerate(posteriors.attribute_names)}
    usable = [m for m, a in enumerate(dataset.attrs.names) if a in col]
    if not usable:
        raise DataError("posteriors share no attributes with the dataset")
    post_cols = [col[dataset.attrs.names[m]] for m in usable]

    totals = np.zeros(len(grid))
    for f, held_pos in enumerate(holdout_folds(len(seen), k_holdout, folds, cfg.seed)):
        held = [seen[i] for i in sorted(held_pos)]
        model = fit(_restrict(dataset, [n for n in seen if n not in held]), class_emb, attr_emb, cfg)
        idx = [dataset.classes.index(n) for n in held]
        probs = association_probabilities(model, class_emb[idx])[:, usable]
        images = posteriors.images_of(held)
        if not images.image_ids:
            raise DataError(f"no posterior images for held-out classes {held}")
        P = images.posteriors[:, post_cols]
        prior = images.attribute_prior[post_cols]
        for g, pair in enumerate(grid):
            decisions = decide(probs, pair)
            if np.any((decisions != ABSTAIN).sum(axis=1) == 0):
                continue  # some class has no usable attribute: scores 0
            pred = np.argmax(dap_log_scores(decisions, P, prior), axis=1)
            totals[g] += per_class_accuracy([held[i] for i in pred], images.true_class, held)[0]
        log.debug("fold %d held out %s", f, held)
    return grid, totals / folds


def calibrate_thresholds(
    dataset: AttributeDataset,
    class_emb,
    attr_emb,
    posteriors: PosteriorDataset,
    cfg: TrainConfig,
    k_holdout: int | None = None,
    folds: int = 5,
    grid_step: float = 0.05,
) -> ThresholdPair:
    """Leave-K-class-out search for the (t_minus, t_plus) pair maximising held-out ZSL accuracy."""
    grid, scores = score_threshold_grid(
        dataset, class_emb, attr_emb, posteriors, cfg, k_holdout, folds, grid_step
    )
    return select_thresholds(grid, scores)


def select_hyperparameters(
    factor_candidates,
    lambda_candidates,
    dataset: AttributeDataset,
    class_emb,
    attr_emb,
    cfg: TrainConfig,
    folds: int = 5,
    return_scores: bool = False,
):
    """Grid search over (L, lambda) by mean validation association mAP.

    Seen classes are split into ``folds`` disjoint groups; ties prefer smaller
    L, then smaller lambda.
    """
    factor_candidates, lambda_candidates = list(factor_candidates), list(lambda_candidates)
    if not factor_candidates or not lambda_candidates:
        raise DataError("candidate lists must be non-empty")
    seen = dataset.classes.seen_names()
    if not 2 <= folds <= len(seen):
        raise DataError(f"folds={folds} must be in [2, {len(seen)}] seen classes")
    class_emb = np.asarray(class_emb, dtype=np.float64)
    perm = np.random.default_rng(cfg.seed).permutation(len(seen))
    groups = [sorted(g) for g in np.array_split(perm, folds)]

    scores = {}
    for L in factor_candidates:
        for lam in lambda_candidates:
            fold_cfg = TrainConfig(**{**cfg.__dict__, "n_factors": L, "lam": lam})
            maps = []
            for g in groups:
                held = [seen[i] for i in g]
                model = fit(_restrict(dataset, [n for n in seen if n not in held]), class_emb, attr_emb, fold_cfg)
                idx = [dataset.classes.index(n) for n in held]
                truth = dataset.assoc.values[idx]
                if not np.any(truth == 1):
                    continue
                maps.append(mean_ap(association_probabilities(model, class_emb[idx]), truth))
            scores[(L, lam)] = float(np.mean(maps)) if maps else 0.0
    best = max(sorted(scores), key=lambda key: (scores[key], -key[0], -key[1]))
    return (best, scores) if return_scores else best
