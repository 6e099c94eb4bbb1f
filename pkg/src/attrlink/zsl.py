"""Zero-shot classification with Direct Attribute Prediction, and the baselines.

DAP scores an image ``x`` for class ``z`` as the product, over attributes with
a decided association, of ``p(a_m = a^z_m | x) / p(a_m = a^z_m)``. Scores are
accumulated in log space; a zero posterior for a required attribute gives a
log score of ``-inf`` (score exactly 0).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingTable, embed_names
from .errors import DataError
from .relations import UNKNOWN

log = logging.getLogger(__name__)

POSITIVE, NEGATIVE, ABSTAIN = 1, -1, 0


@dataclass(frozen=True, eq=False)
class PosteriorDataset:
    image_ids: tuple[str, ...]
    true_class: tuple[str, ...]
    attribute_names: tuple[str, ...]
    posteriors: np.ndarray  # (images, M), p(a_m | x)
    attribute_prior: np.ndarray | None = None  # (M,), p(a_m); defaults to 0.5

    def __post_init__(self):
        post = np.asarray(self.posteriors, dtype=np.float64)
        n, m = len(self.image_ids), len(self.attribute_names)
        if post.shape != (n, m) or len(self.true_class) != n:
            raise DataError(f"posterior matrix {post.shape} does not match {n} images x {m} attributes")
        if not np.all((post >= 0) & (post <= 1)):
            raise DataError("posteriors must lie in [0, 1]")
        prior = np.full(m, 0.5) if self.attribute_prior is None else np.asarray(
            self.attribute_prior, dtype=np.float64
        )
        if prior.shape != (m,) or not np.all((prior > 0) & (prior < 1)):
            raise DataError("attribute priors must lie strictly inside (0, 1)")
        object.__setattr__(self, "posteriors", post)
        object.__setattr__(self, "attribute_prior", prior)
        for name in ("image_ids", "true_class", "attribute_names"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def with_prior(self, prior) -> PosteriorDataset:
        prior = np.broadcast_to(np.asarray(prior, dtype=np.float64), (len(self.attribute_names),))
        return PosteriorDataset(self.image_ids, self.true_class, self.attribute_names,
                                self.posteriors, prior.copy())

    def select(self, mask) -> PosteriorDataset:
        idx = np.flatnonzero(mask)
        return PosteriorDataset(
            tuple(self.image_ids[i] for i in idx),
            tuple(self.true_class[i] for i in idx),
            self.attribute_names,
            self.posteriors[idx],
            self.attribute_prior,
        )

    def images_of(self, classes) -> PosteriorDataset:
        classes = set(classes)
        return self.select([c in classes for c in self.true_class])


@dataclass(frozen=True, eq=False)
class ClassScoreDataset:
    image_ids: tuple[str, ...]
    true_class: tuple[str, ...]
    class_names: tuple[str, ...]  # seen classes, one column each
    scores: np.ndarray  # (images, K)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.image_ids), len(self.class_names)) or len(self.true_class) != len(self.image_ids):
            raise DataError("class score matrix does not match its images and classes")
        object.__setattr__(self, "scores", scores)

    def columns(self, names) -> np.ndarray:
        try:
            idx = [self.class_names.index(n) for n in names]
        except ValueError as exc:
            raise DataError(f"class scores lack a column: {exc}") from None
        return self.scores[:, idx]


@dataclass(frozen=True, eq=False)
class HitCountTable:
    class_names: tuple[str, ...]
    attribute_names: tuple[str, ...]
    h_class: np.ndarray  # (K,)
    h_attr: np.ndarray  # (M,)
    h_pair: np.ndarray  # (K, M)

    def __post_init__(self):
        K, M = len(self.class_names), len(self.attribute_names)
        hc, ha, hp = (np.asarray(x, dtype=np.float64) for x in (self.h_class, self.h_attr, self.h_pair))
        if hc.shape != (K,) or ha.shape != (M,) or hp.shape != (K, M):
            raise DataError("hit count arrays do not match the class/attribute lists")
        if (hc < 0).any() or (ha < 0).any() or (hp < 0).any():
            raise DataError("hit counts must be non-negative")
        object.__setattr__(self, "h_class", hc)
        object.__setattr__(self, "h_attr", ha)
        object.__setattr__(self, "h_pair", hp)

    def rows(self, names) -> HitCountTable:
        idx = []
        for n in names:
            if n not in self.class_names:
                raise DataError(f"no hit counts for class {n!r}")
            idx.append(self.class_names.index(n))
        return HitCountTable(tuple(names), self.attribute_names, self.h_class[idx],
                             self.h_attr, self.h_pair[idx])


# -- DAP ----------------------------------------------------------------------


def _log_ratios(posteriors, prior):
    post = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    prior = np.asarray(prior, dtype=np.float64)
    if np.any((prior <= 0) | (prior >= 1)):
        raise DataError("attribute priors of 0 or 1 make DAP ratios degenerate")
    with np.errstate(divide="ignore"):
        return np.log(post) - np.log(prior), np.log1p(-post) - np.log1p(-prior)


def dap_log_scores(decisions, posteriors, prior) -> np.ndarray:
    """(images, classes) log DAP scores for a (classes, M) decision matrix."""
    decisions = np.atleast_2d(np.asarray(decisions))
    log_pos, log_neg = _log_ratios(posteriors, prior)
    terms = np.where(
        decisions[None, :, :] == POSITIVE,
        log_pos[:, None, :],
        np.where(decisions[None, :, :] == NEGATIVE, log_neg[:, None, :], 0.0),
    )
    return terms.sum(axis=2)


def dap_score(decisions, posterior_row, prior) -> float:
    """DAP score of one image for one class; abstained attributes are skipped."""
    decisions = np.asarray(getattr(decisions, "decisions", decisions))
    return float(np.exp(dap_log_scores(decisions[None, :], posterior_row, prior)[0, 0]))


def _aligned_decisions(preds, attribute_names):
    """Map each prediction's decisions onto the posterior columns.

    Posterior columns with no prediction become abstentions.
    """
    out = np.zeros((len(preds), len(attribute_names)), dtype=np.int8)
    col = {a: i for i, a in enumerate(attribute_names)}
    for k, p in enumerate(preds):
        for a, d in zip(p.attribute_names, p.decisions):
            if a in col:
                out[k, col[a]] = d
    return out


def classify_zsl(preds, data: PosteriorDataset) -> list[str]:
    """Predict a class per image: argmax DAP score, ties to the earlier class."""
    if not preds:
        raise DataError("need at least one unseen class")
    decisions = _aligned_decisions(preds, data.attribute_names)
    scores = dap_log_scores(decisions, data.posteriors, data.attribute_prior)
    names = [p.class_name for p in preds]
    return [names[i] for i in np.argmax(scores, axis=1)]


# -- baselines ----------------------------------------------------------------


def baseline_dice(table: HitCountTable) -> np.ndarray:
    """Co-occurrence score ``H_ca / (H_c + H_a)``; 0 where the denominator is 0."""
    denom = table.h_class[:, None] + table.h_attr[None, :]
    if np.any(denom == 0):
        log.warning("zero hit counts for some class/attribute pairs; scoring them 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, table.h_pair / np.where(denom > 0, denom, 1.0), 0.0)


def _pairwise_distances(X, Y):
    return np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)


def baseline_similarity(table: EmbeddingTable, classes, attrs) -> np.ndarray:
    """``exp(-||v(c) - v(a)||)`` for every class/attribute name pair."""
    return np.exp(-_pairwise_distances(embed_names(table, list(classes)), embed_names(table, list(attrs))))


def average_positive_count(assoc) -> int:
    """Mean number of positive attributes per class row, rounded to nearest."""
    values = np.asarray(getattr(assoc, "values", assoc))
    return int(np.floor(np.mean((values == 1).sum(axis=1)) + 0.5))


def top_q(scores, q: int) -> np.ndarray:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if not 0 <= q <= scores.shape[1]:
        raise DataError(f"Q={q} outside [0, {scores.shape[1]}]")
    out = np.zeros(scores.shape, dtype=np.int8)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :q]
    np.put_along_axis(out, order, 1, axis=1)
    return out


def _assoc_accuracy(binary, labels):
    known = labels != UNKNOWN
    return float(np.mean(binary[known] == labels[known]))


def best_threshold(scores, labels, objective=None) -> float:
    """Scalar cut (positive iff score >= cut) maximising ``objective(binary, labels)``.

    Candidates are the distinct score values plus +inf; the smallest best cut wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(getattr(labels, "values", labels))
    objective = objective or _assoc_accuracy
    candidates = np.append(np.unique(scores), np.inf)
    values = [objective((scores >= c).astype(np.int8), labels) for c in candidates]
    return float(candidates[int(np.argmax(values))])


def matrix_to_associations(
    scores,
    strategy: str = "top_q",
    *,
    q: int | None = None,
    threshold: float | None = None,
    calib_scores=None,
    labels=None,
    objective=None,
) -> np.ndarray:
    """Binarise a class x attribute score matrix.

    ``top_q`` marks each row's ``q`` largest scores. ``best_threshold`` uses
    ``threshold`` if given, otherwise the cut that maximises ``objective`` of
    ``calib_scores`` (default: ``scores``) against ``labels``.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if strategy == "top_q":
        if q is None:
            raise DataError("top_q needs q")
        return top_q(scores, q)
    if strategy == "best_threshold":
        if threshold is None:
            if labels is None:
                raise DataError("best_threshold needs labels or an explicit threshold")
            threshold = best_threshold(scores if calib_scores is None else calib_scores, labels, objective)
        return (scores >= threshold).astype(np.int8)
    raise DataError(f"unknown strategy {strategy!r}")


def nearest_seen_class(table: EmbeddingTable, unseen: str, seen) -> int:
    dist = _pairwise_distances(embed_names(table, [unseen]), embed_names(table, list(seen)))[0]
    return int(np.argmin(dist))


def baseline_nearest_class(table: EmbeddingTable, unseen, seen, class_scores: ClassScoreDataset) -> list[str]:
    """Score each unseen class with the classifier of its nearest seen class."""
    unseen, seen = list(unseen), list(seen)
    S = class_scores.columns(seen)
    nearest = [nearest_seen_class(table, z, seen) for z in unseen]
    scores = S[:, nearest]
    return [unseen[i] for i in np.argmax(scores, axis=1)]


def baseline_weighted_classes(table: EmbeddingTable, unseen, seen, class_scores: ClassScoreDataset) -> np.ndarray:
    """(images, unseen) scores ``sum_k exp(-||v(z) - v(c_k)||) s(c_k | x)``."""
    W = np.exp(-_pairwise_distances(embed_names(table, list(unseen)), embed_names(table, list(seen))))
    return class_scores.columns(list(seen)) @ W.T


def argmax_classes(scores, names) -> list[str]:
    return [names[i] for i in np.argmax(np.asarray(scores), axis=1)]
