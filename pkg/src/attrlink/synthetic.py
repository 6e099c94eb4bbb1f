"""Planted-model fixtures: data generated from a known factorized relation tensor.

Used for recovery checks and for the bundled toy dataset. Planted latent
factors are rank one. Optionally the attribute embeddings the learner sees are
noisy copies of the planted ones (``attr_noise``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from pathlib import Path

from .embeddings import EmbeddingTable, format_embeddings
from .relations import (
    AssociationMatrix,
    AttributeDataset,
    AttributeVocabulary,
    ClassVocabulary,
    RelationSchema,
)


@dataclass
class PlantedFixture:
    dataset: AttributeDataset
    class_embeddings: np.ndarray  # (K, d), exactly what the learner sees
    attr_embeddings: np.ndarray  # (M, d), noisy observation
    true_attr_embeddings: np.ndarray
    true_factors: np.ndarray  # (L*, d, d)
    true_mixing: np.ndarray  # (N, L*)
    table: EmbeddingTable

    @property
    def true_logits(self) -> np.ndarray:
        slices = np.einsum("jl,lxy->jxy", self.true_mixing, self.true_factors)
        assignment = self.dataset.schema.assignment
        return np.einsum(
            "kx,mxy,my->km", self.class_embeddings, slices[assignment], self.true_attr_embeddings
        )


def planted_fixture(
    n_classes: int = 40,
    n_unseen: int = 10,
    n_attrs: int = 20,
    dim: int = 16,
    n_factors: int = 4,
    n_relations: int = 3,
    attr_noise: float = 0.0,
    seed: int = 0,
    class_prefix: str = "class",
    attr_prefix: str = "attr",
) -> PlantedFixture:
    """Classes ``class{k}`` and attributes ``attr{m}``; the last ``n_unseen`` classes are unseen.

    Attribute ``m`` belongs to relation ``m % n_relations``. Embeddings are
    unit-norm Gaussian directions; the association of (k, m) is whether the
    planted logit is positive.
    """
    rng = np.random.default_rng(seed)

    def unit(shape):
        x = rng.standard_normal(shape)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    class_emb = unit((n_classes, dim))
    true_attr = unit((n_attrs, dim))
    u, w = rng.standard_normal((2, n_factors, dim))
    factors = np.einsum("lx,ly->lxy", u, w)  # rank-one latent factors
    mixing = rng.standard_normal((n_relations, n_factors))
    observed = true_attr + attr_noise * rng.standard_normal(true_attr.shape) / np.sqrt(dim)

    assignment = np.arange(n_attrs) % n_relations
    slices = np.einsum("jl,lxy->jxy", mixing, factors)
    logits = np.einsum("kx,mxy,my->km", class_emb, slices[assignment], true_attr)
    assoc = (expit(logits) > 0.5).astype(np.int8)

    class_names = tuple(f"{class_prefix}{k}" for k in range(n_classes))
    attr_names = tuple(f"{attr_prefix}{m}" for m in range(n_attrs))
    classes = ClassVocabulary(class_names, tuple(k < n_classes - n_unseen for k in range(n_classes)))
    schema = RelationSchema(tuple(f"rel{j}" for j in range(n_relations)), assignment)
    dataset = AttributeDataset(classes, AttributeVocabulary(attr_names), schema, AssociationMatrix(assoc))
    table = EmbeddingTable(class_names + attr_names, np.vstack([class_emb, observed]))
    return PlantedFixture(dataset, class_emb, observed, true_attr, factors, mixing, table)


TOY_CONFIG = """\
# Bundled toy dataset: 8 seen classes, 3 unseen, 12 attributes, d=16.
embeddings = "embeddings.txt"
associations = ["associations.tsv"]
schema = ["schema.tsv"]
posteriors = "posteriors.tsv"
class_scores = "class_scores.tsv"
hit_counts = "hit_counts.tsv"
unseen = ["class8", "class9", "class10"]
seed = 0
"""


def toy_files(images_per_class: int = 4, seed: int = 3) -> dict[str, str]:
    """Text of every file in the bundled toy dataset, keyed by file name.

    Posteriors are oracle: p(a|x) is the ground-truth association bit of the
    image's class. Class scores are a softmax over negative embedding distance
    to the image's class; hit counts are noisy and loosely follow the truth.
    """
    from .formats import format_hit_counts, format_image_matrix
    from .relations import format_associations, format_schema
    from .zsl import HitCountTable

    fx = planted_fixture(n_classes=11, n_unseen=3, n_attrs=12, dim=16, seed=seed)
    ds = fx.dataset
    rng = np.random.default_rng(seed + 1000)
    names = ds.classes.names
    seen = ds.classes.seen_names()

    ids, truth, post, scores = [], [], [], []
    seen_emb = fx.class_embeddings[ds.classes.seen_indices]
    for k, name in enumerate(names):
        dist = np.linalg.norm(seen_emb - fx.class_embeddings[k], axis=1)
        soft = np.exp(-5 * dist)
        for i in range(images_per_class):
            ids.append(f"img{k:02d}_{i}")
            truth.append(name)
            post.append(ds.assoc.values[k].astype(float))
            scores.append(soft / soft.sum())

    h_class = rng.integers(2000, 20000, size=len(names)).astype(float)
    h_attr = rng.integers(2000, 20000, size=len(ds.attrs)).astype(float)
    frac = np.where(ds.assoc.values == 1, 0.3, 0.05) * rng.uniform(0.5, 1.5, size=ds.assoc.shape)
    h_pair = np.round(frac * np.minimum.outer(h_class, h_attr))
    hits = HitCountTable(names, ds.attrs.names, h_class, h_attr, h_pair)

    return {
        "embeddings.txt": format_embeddings(fx.table),
        "associations.tsv": format_associations(names, ds.attrs, ds.assoc),
        "schema.tsv": format_schema(ds.schema, ds.attrs),
        "posteriors.tsv": format_image_matrix(ids, truth, ds.attrs.names, post),
        "class_scores.tsv": format_image_matrix(ids, truth, seen, scores),
        "hit_counts.tsv": format_hit_counts(hits),
        "config.toml": TOY_CONFIG,
    }


def toy_dataset_dir() -> Path:
    """Location of the bundled copy of :func:`toy_files`."""
    return Path(__file__).parent / "data" / "toy"


def write_toy_dataset(directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in toy_files().items():
        (directory / name).write_text(text, encoding="utf-8")
    return directory
