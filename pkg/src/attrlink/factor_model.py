"""Factorized bilinear relation model.

Each relation slice is a mixture ``R_j = sum_l mixing[j, l] * factors[l]`` of
shared d x d latent factors, and the probability that class ``c`` holds
attribute ``a`` under relation ``j`` is ``sigmoid(c^T R_j a)``. Training
minimises the logistic negative log-likelihood with mini-batch SGD while each
mixing row is kept inside an L1 ball of radius ``lam``. Class embeddings are
never updated; attribute embeddings optionally are.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DataError, TrainingError
from .relations import TripletDataset

FORMAT_MAGIC = "attrlink-relation-model"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    lam: float = 1.0
    n_factors: int = 4
    init_scale: float = 0.1
    learn_attr_embeddings: bool = True
    optimizer: str = "sgd"  # "sgd" or "sgd_momentum"
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 0:
            raise DataError("epochs must be non-negative")
        for name in ("learning_rate", "batch_size", "lam", "n_factors", "init_scale"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    initial_loss: float
    final_loss: float
    wall_time: float

    def to_dict(self):
        return {
            "initial_loss": self.initial_loss,
            "epoch_losses": self.epoch_losses,
            "final_loss": self.final_loss,
            "wall_time": self.wall_time,
        }


@dataclass(eq=False)
class FactorizedRelationModel:
    factors: np.ndarray  # (L, d, d)
    mixing: np.ndarray  # (N, L)
    class_embeddings: np.ndarray  # (K, d), frozen
    attr_embeddings: np.ndarray  # (M, d)
    lam: float
    relation_names: tuple[str, ...] = ()
    attribute_names: tuple[str, ...] = ()
    assignment: np.ndarray | None = None  # attribute -> relation, when known

    @property
    def dim(self) -> int:
        return self.factors.shape[1]

    @property
    def n_relations(self) -> int:
        return self.mixing.shape[0]

    @property
    def n_factors(self) -> int:
        return self.factors.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.attr_embeddings.shape[0]

    def copy(self) -> FactorizedRelationModel:
        return replace(
            self,
            factors=self.factors.copy(),
            mixing=self.mixing.copy(),
            class_embeddings=self.class_embeddings.copy(),
            attr_embeddings=self.attr_embeddings.copy(),
            assignment=None if self.assignment is None else self.assignment.copy(),
        )

    def slices(self) -> np.ndarray:
        """All relation matrices stacked, (N, d, d)."""
        return np.einsum("jl,lxy->jxy", self.mixing, self.factors)

    def same_parameters(self, other) -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("factors", "mixing", "class_embeddings", "attr_embeddings")
        ) and self.lam == other.lam


def init_model(
    d: int,
    n_relations: int,
    n_factors: int,
    lam: float,
    class_emb,
    attr_emb,
    seed: int = 0,
    init_scale: float = 0.1,
    relation_names=None,
    attribute_names=None,
    assignment=None,
) -> FactorizedRelationModel:
    class_emb = np.asarray(class_emb, dtype=np.float64)
    attr_emb = np.asarray(attr_emb, dtype=np.float64)
    # allow [] for an empty vocabulary
    if class_emb.size == 0:
        class_emb = class_emb.reshape(0, d)
    if attr_emb.size == 0:
        attr_emb = attr_emb.reshape(0, d)
    for name, mat in (("class", class_emb), ("attribute", attr_emb)):
        if mat.ndim != 2 or mat.shape[1] != d:
            raise DataError(f"{name} embeddings have shape {mat.shape}, expected (*, {d})")
    if n_relations < 1 or n_factors < 1 or lam <= 0:
        raise DataError("need n_relations >= 1, n_factors >= 1 and lam > 0")
    rng = np.random.default_rng(seed)
    factors = rng.uniform(-init_scale, init_scale, size=(n_factors, d, d))
    mixing = np.full((n_relations, n_factors), lam / (2 * n_factors))
    if relation_names is None:
        relation_names = tuple(f"r{j}" for j in range(n_relations))
    if attribute_names is None:
        attribute_names = tuple(f"a{m}" for m in range(len(attr_emb)))
    if len(relation_names) != n_relations or len(attribute_names) != len(attr_emb):
        raise DataError("relation/attribute names do not match the model dimensions")
    if assignment is not None:
        assignment = np.asarray(assignment, dtype=np.int64).copy()
        if assignment.shape != (len(attr_emb),):
            raise DataError("assignment must give one relation per attribute")
    return FactorizedRelationModel(
        factors=factors,
        mixing=mixing,
        class_embeddings=class_emb.copy(),
        attr_embeddings=attr_emb.copy(),
        lam=float(lam),
        relation_names=tuple(relation_names),
        attribute_names=tuple(attribute_names),
        assignment=assignment,
    )


def relation_matrix(model: FactorizedRelationModel, j: int) -> np.ndarray:
    if not 0 <= j < model.n_relations:
        raise IndexError(f"relation index {j} out of range [0, {model.n_relations})")
    return np.tensordot(model.mixing[j], model.factors, axes=1)


def bilinear_score(model: FactorizedRelationModel, class_vec, j: int, m: int) -> float:
    if not 0 <= m < model.n_attributes:
        raise IndexError(f"attribute index {m} out of range [0, {model.n_attributes})")
    c = np.asarray(class_vec, dtype=np.float64)
    return float(expit(c @ relation_matrix(model, j) @ model.attr_embeddings[m]))


def score_class(model: FactorizedRelationModel, class_vec) -> np.ndarray:
    """(N, M) matrix of probabilities for every relation/attribute pair."""
    c = np.asarray(class_vec, dtype=np.float64)
    return expit(np.einsum("x,jxy->jy", c, model.slices()) @ model.attr_embeddings.T)


def association_logits(model: FactorizedRelationModel, class_vecs, assignment=None) -> np.ndarray:
    """(K, M) logits for each class with attribute m scored under its own relation."""
    if assignment is None:
        assignment = model.assignment
    if assignment is None:
        raise DataError("model has no attribute->relation assignment")
    C = np.atleast_2d(np.asarray(class_vecs, dtype=np.float64))
    slices = model.slices()[assignment]  # (M, d, d)
    return np.einsum("kx,mxy,my->km", C, slices, model.attr_embeddings)


def association_probabilities(model, class_vecs, assignment=None) -> np.ndarray:
    return expit(association_logits(model, class_vecs, assignment))


def _logits(model, j, k, m, slices=None):
    if slices is None:
        slices = model.slices()
    C = model.class_embeddings[k]
    A = model.attr_embeddings[m]
    return np.einsum("bx,bxy,by->b", C, slices[j], A)


def _nll_from_logits(z, t):
    # -log sigmoid(z) for t=1, -log(1 - sigmoid(z)) for t=0
    return float(np.sum(np.logaddexp(0.0, np.where(t == 1, -z, z))))


def nll_loss(model: FactorizedRelationModel, data: TripletDataset) -> float:
    if len(data) == 0:
        return 0.0
    j, k, m, t = data.arrays()
    return _nll_from_logits(_logits(model, j, k, m), t)


def _loss_and_gradients(model, j, k, m, t, learn_attr=True):
    slices = model.slices()
    C = model.class_embeddings[k]
    A = model.attr_embeddings[m]
    z = np.einsum("bx,bxy,by->b", C, slices[j], A)
    loss = _nll_from_logits(z, t)
    e = expit(z) - t
    mix = model.mixing[j]  # (B, L)
    d_factors = np.einsum("b,bl,bx,by->lxy", e, mix, C, A)
    proj = np.einsum("bx,lxy,by->bl", C, model.factors, A)
    d_mixing = np.zeros_like(model.mixing)
    np.add.at(d_mixing, j, e[:, None] * proj)
    d_attr = np.zeros_like(model.attr_embeddings)
    if learn_attr:
        np.add.at(d_attr, m, e[:, None] * np.einsum("bxy,bx->by", slices[j], C))
    return loss, d_factors, d_mixing, d_attr


def gradients(model: FactorizedRelationModel, batch: TripletDataset, learn_attr_embeddings=True):
    """Gradients of :func:`nll_loss` summed over ``batch``.

    Returns ``(d_factors, d_mixing, d_attr)``; class embeddings get none.
    """
    if len(batch) == 0:
        raise DataError("gradients need a non-empty batch")
    _, *grads = _loss_and_gradients(model, *batch.arrays(), learn_attr=learn_attr_embeddings)
    return tuple(grads)


def project_l1(v, lam: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w : ||w||_1 <= lam}``.

    Sort-based simplex projection of ``|v|`` followed by sign restoration.
    """
    if not lam > 0:
        raise DataError("lam must be positive")
    v = np.asarray(v, dtype=np.float64)
    u = np.abs(v)
    if u.sum() <= lam:
        return v.copy()
    s = np.sort(u)[::-1]
    css = np.cumsum(s)
    support = np.nonzero(s * np.arange(1, len(s) + 1) > css - lam)[0]
    # the largest entry always qualifies; rounding can hide that for huge inputs
    rho = support[-1] if support.size else 0
    theta = (css[rho] - lam) / (rho + 1.0)
    return np.sign(v) * np.maximum(u - theta, 0.0)


def project_mixing(mixing: np.ndarray, lam: float) -> np.ndarray:
    return np.vstack([project_l1(row, lam) for row in mixing])


def train(
    model: FactorizedRelationModel, data: TripletDataset, cfg: TrainConfig
) -> tuple[FactorizedRelationModel, TrainReport]:
    """Mini-batch SGD on the summed batch NLL, projecting mixing rows after each step.

    The input model is left untouched; a trained copy is returned.
    """
    if len(data) == 0:
        raise DataError("training needs at least one triplet")
    start = time.perf_counter()
    model = model.copy()
    j_all, k_all, m_all, t_all = data.arrays()
    n = len(t_all)
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(model.factors), np.zeros_like(model.mixing),
                np.zeros_like(model.attr_embeddings)]
    initial = nll_loss(model, data) / n
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            loss, *grads = _loss_and_gradients(
                model, j_all[idx], k_all[idx], m_all[idx], t_all[idx],
                learn_attr=cfg.learn_attr_embeddings,
            )
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            params = [model.factors, model.mixing, model.attr_embeddings]
            with np.errstate(over="ignore", invalid="ignore"):  # caught just below
                for p, g, vel in zip(params, grads, velocity):
                    step = g * cfg.learning_rate
                    if cfg.optimizer == "sgd_momentum":
                        vel *= cfg.momentum
                        vel -= step
                        p += vel
                    else:
                        p -= step
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError(f"non-finite parameters at epoch {epoch}, batch {b}")
            model.mixing = project_mixing(model.mixing, model.lam)
        losses.append(nll_loss(model, data) / n)
        if not math.isfinite(losses[-1]):
            raise TrainingError(f"non-finite loss at end of epoch {epoch}")
    report = TrainReport(
        epoch_losses=losses,
        initial_loss=initial,
        final_loss=losses[-1] if losses else initial,
        wall_time=time.perf_counter() - start,
    )
    return model, report


# -- model file -------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _fmt_array(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        return "[" + ", ".join(_fmt(x) for x in a) + "]"
    return "[" + ", ".join(_fmt_array(row) for row in a) + "]"


def format_model(model: FactorizedRelationModel) -> str:
    meta = {
        "format": FORMAT_MAGIC,
        "format_version": FORMAT_VERSION,
        "d": model.dim,
        "N": model.n_relations,
        "L": model.n_factors,
        "M": model.n_attributes,
    }
    parts = [f"  {json.dumps(k)}: {json.dumps(v)}" for k, v in meta.items()]
    parts.append(f'  "lambda": {_fmt(model.lam)}')
    parts.append(f'  "relation_names": {json.dumps(list(model.relation_names))}')
    parts.append(f'  "attribute_names": {json.dumps(list(model.attribute_names))}')
    assignment = None if model.assignment is None else [int(x) for x in model.assignment]
    parts.append(f'  "assignment": {json.dumps(assignment)}')
    parts.append(f'  "factors": {_fmt_array(model.factors) if model.n_factors else "[]"}')
    parts.append(f'  "mixing": {_fmt_array(model.mixing)}')
    attr = _fmt_array(model.attr_embeddings) if model.n_attributes else "[]"
    parts.append(f'  "attr_embeddings": {attr}')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def save_model(model: FactorizedRelationModel, path) -> None:
    Path(path).write_text(format_model(model), encoding="utf-8")


def parse_model(text: str) -> FactorizedRelationModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON (truncated?): {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_MAGIC:
        raise DataError("not a relation model file (bad magic)")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {doc.get('format_version')!r}")
    try:
        d, N, L, M = doc["d"], doc["N"], doc["L"], doc["M"]
        factors = np.array(doc["factors"], dtype=np.float64).reshape(L, d, d)
        mixing = np.array(doc["mixing"], dtype=np.float64).reshape(N, L)
        attr = np.array(doc["attr_embeddings"], dtype=np.float64).reshape(M, d)
        assignment = doc.get("assignment")
        model = FactorizedRelationModel(
            factors=factors,
            mixing=mixing,
            class_embeddings=np.zeros((0, d)),
            attr_embeddings=attr,
            lam=float(doc["lambda"]),
            relation_names=tuple(doc["relation_names"]),
            attribute_names=tuple(doc["attribute_names"]),
            assignment=None if assignment is None else np.array(assignment, dtype=np.int64),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed model file: {exc}") from None
    if len(model.relation_names) != N or len(model.attribute_names) != M:
        raise DataError("model names do not match its dimensions")
    return model


def load_model(path) -> FactorizedRelationModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))
