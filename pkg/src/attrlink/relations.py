"""Class/attribute vocabularies, relation schemas and training triplets.

Association matrices use ``UNKNOWN`` (-1) for cells with no annotation so that
merged datasets never invent negatives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable, embed_names
from .errors import DataError

log = logging.getLogger(__name__)

UNKNOWN = -1


def _check_unique(names, what):
    seen = set()
    for n in names:
        if n in seen:
            raise DataError(f"duplicate {what} name {n!r}")
        seen.add(n)


@dataclass(frozen=True)
class ClassVocabulary:
    names: tuple[str, ...]
    seen_mask: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "seen_mask", tuple(bool(s) for s in self.seen_mask))
        _check_unique(self.names, "class")
        if len(self.seen_mask) != len(self.names):
            raise DataError("seen_mask length does not match class names")

    @classmethod
    def from_split(cls, names, unseen=()):
        unseen = set(unseen)
        missing = unseen.difference(names)
        if missing:
            raise DataError(f"unseen classes not in vocabulary: {sorted(missing)}")
        return cls(tuple(names), tuple(n not in unseen for n in names))

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown class {name!r}") from None

    @property
    def seen_indices(self) -> np.ndarray:
        return np.flatnonzero(self.seen_mask)

    @property
    def unseen_indices(self) -> np.ndarray:
        return np.flatnonzero(~np.asarray(self.seen_mask, dtype=bool))

    def seen_names(self):
        return [n for n, s in zip(self.names, self.seen_mask) if s]

    def unseen_names(self):
        return [n for n, s in zip(self.names, self.seen_mask) if not s]


@dataclass(frozen=True)
class AttributeVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        _check_unique(self.names, "attribute")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown attribute {name!r}") from None


@dataclass(frozen=True, eq=False)
class RelationSchema:
    relation_names: tuple[str, ...]
    assignment: np.ndarray  # attribute index -> relation index

    def __post_init__(self):
        names = tuple(self.relation_names)
        _check_unique(names, "relation")
        assignment = np.asarray(self.assignment, dtype=np.int64).copy()
        if assignment.ndim != 1:
            raise DataError("assignment must be one-dimensional")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= len(names)):
            raise DataError("assignment refers to a relation index out of range")
        assignment.setflags(write=False)
        object.__setattr__(self, "relation_names", names)
        object.__setattr__(self, "assignment", assignment)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def as_mapping(self, attrs: AttributeVocabulary) -> dict[str, str]:
        return {a: self.relation_names[j] for a, j in zip(attrs.names, self.assignment)}

    def __eq__(self, other):
        return (
            isinstance(other, RelationSchema)
            and self.relation_names == other.relation_names
            and np.array_equal(self.assignment, other.assignment)
        )


@dataclass(frozen=True, eq=False)
class AssociationMatrix:
    values: np.ndarray  # K x M over {1, 0, UNKNOWN}

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int8).copy()
        if values.ndim != 2:
            raise DataError("association matrix must be 2-D")
        if not np.isin(values, (0, 1, UNKNOWN)).all():
            raise DataError("association entries must be 0, 1 or unknown")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def known(self) -> np.ndarray:
        return self.values != UNKNOWN

    def __eq__(self, other):
        return isinstance(other, AssociationMatrix) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class TripletDataset:
    """Positive and negative (relation, class, attribute) index triplets."""

    positives: np.ndarray  # (P, 3)
    negatives: np.ndarray  # (Q, 3)

    def __post_init__(self):
        for name in ("positives", "negatives"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 3)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.positives) + len(self.negatives)

    def arrays(self):
        """Flattened ``(j, k, m, target)`` arrays, positives first."""
        both = np.vstack([self.positives, self.negatives])
        target = np.concatenate(
            [np.ones(len(self.positives)), np.zeros(len(self.negatives))]
        )
        return both[:, 0], both[:, 1], both[:, 2], target

    def subset(self, idx) -> TripletDataset:
        j, k, m, t = self.arrays()
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.stack([j[idx], k[idx], m[idx]], axis=1)
        pos = t[idx] == 1
        return TripletDataset(rows[pos], rows[~pos])


@dataclass(frozen=True)
class AttributeDataset:
    """Everything one annotated dataset contributes to training."""

    classes: ClassVocabulary
    attrs: AttributeVocabulary
    schema: RelationSchema
    assoc: AssociationMatrix

    def __post_init__(self):
        K, M = self.assoc.shape
        if K != len(self.classes) or M != len(self.attrs):
            raise DataError(
                f"association matrix {self.assoc.shape} does not match "
                f"{len(self.classes)} classes x {len(self.attrs)} attributes"
            )
        if len(self.schema.assignment) != M:
            raise DataError("schema does not cover the attribute vocabulary")


# -- file formats -----------------------------------------------------------


def _read_tsv(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        rows = [line.rstrip("\r\n").split("\t") for line in fh if line.strip()]
    return path, rows


def schema_from_mapping(mapping: dict, attrs: AttributeVocabulary) -> RelationSchema:
    unknown = [a for a in mapping if a not in attrs.names]
    if unknown:
        raise DataError(f"schema names unknown attributes: {unknown}")
    unmapped = [a for a in attrs.names if a not in mapping]
    if unmapped:
        raise DataError(f"attributes without a relation: {unmapped}")
    names: list[str] = []
    for a in attrs.names:
        if mapping[a] not in names:
            names.append(mapping[a])
    return RelationSchema(tuple(names), [names.index(mapping[a]) for a in attrs.names])


def load_semantic_schema(path, attrs: AttributeVocabulary) -> RelationSchema:
    """Read ``attribute<TAB>relation`` lines into a schema over ``attrs``.

    Relations are numbered in order of first use along the attribute vocabulary.
    """
    path, rows = _read_tsv(path)
    mapping = {}
    for lineno, row in enumerate(rows, 1):
        if len(row) != 2:
            raise DataError(f"{path}:{lineno}: expected 'attribute<TAB>relation'")
        attr, rel = row[0].strip(), row[1].strip()
        if attr in mapping and mapping[attr] != rel:
            raise DataError(f"{path}:{lineno}: attribute {attr!r} assigned to two relations")
        mapping[attr] = rel
    return schema_from_mapping(mapping, attrs)


def format_schema(schema: RelationSchema, attrs: AttributeVocabulary) -> str:
    return "".join(
        f"{a}\t{schema.relation_names[j]}\n" for a, j in zip(attrs.names, schema.assignment)
    )


def single_relation_schema(attrs: AttributeVocabulary, name="has_attribute") -> RelationSchema:
    return RelationSchema((name,), np.zeros(len(attrs), dtype=np.int64))


_CELL = {"1": 1, "0": 0, "?": UNKNOWN}


def load_associations(path) -> tuple[list[str], AttributeVocabulary, AssociationMatrix]:
    """Read a class x attribute TSV matrix with cells in {0, 1, ?}."""
    path, rows = _read_tsv(path)
    if not rows:
        raise DataError(f"{path}: empty association file")
    attrs = AttributeVocabulary(tuple(c.strip() for c in rows[0][1:]))
    names, values = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(attrs) + 1:
            raise DataError(f"{path}:{lineno}: expected {len(attrs) + 1} columns, got {len(row)}")
        try:
            values.append([_CELL[c.strip()] for c in row[1:]])
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: bad cell {exc.args[0]!r}") from None
        names.append(row[0].strip())
    _check_unique(names, "class")
    return names, attrs, AssociationMatrix(np.array(values, dtype=np.int8).reshape(len(names), len(attrs)))


def format_associations(class_names, attrs: AttributeVocabulary, assoc: AssociationMatrix) -> str:
    inv = {v: k for k, v in _CELL.items()}
    lines = ["class\t" + "\t".join(attrs.names)]
    for name, row in zip(class_names, assoc.values):
        lines.append(name + "\t" + "\t".join(inv[int(v)] for v in row))
    return "\n".join(lines) + "\n"


# -- operations -------------------------------------------------------------


def average_linkage(points: np.ndarray, n_clusters: int) -> np.ndarray:
    """Agglomerative clustering with average linkage on Euclidean distances.

    Returns a cluster label per point, labels numbered by smallest member index.
    Among equally distant pairs the one with the smallest (min-index, max-index)
    is merged first, where a cluster's index is its smallest member index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= n_clusters <= n:
        raise DataError(f"n_clusters={n_clusters} outside [1, {n}]")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    dist[np.tril_indices(n)] = np.inf  # keep only i < j
    sizes = np.ones(n)
    parent = np.arange(n)
    active = n
    while active > n_clusters:
        flat = int(np.argmin(dist))  # row-major: first hit has smallest (i, j)
        i, j = divmod(flat, n)
        # Lance-Williams update for average linkage; i < j so i stays the representative
        merged = (sizes[i] * _sym(dist, i) + sizes[j] * _sym(dist, j)) / (sizes[i] + sizes[j])
        sizes[i] += sizes[j]
        parent[parent == j] = i
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        for k in range(n):
            if k == i or not np.isfinite(merged[k]):
                continue
            if k < i:
                dist[k, i] = merged[k]
            else:
                dist[i, k] = merged[k]
        active -= 1
    reps = sorted(set(parent.tolist()))
    return np.array([reps.index(p) for p in parent], dtype=np.int64)


def _sym(upper, i):
    """Row ``i`` of the symmetric matrix stored in the strict upper triangle."""
    row = upper[i].copy()
    row[:i] = upper[:i, i]
    row[i] = np.inf
    return row


def discover_relations(
    table: EmbeddingTable, attrs: AttributeVocabulary, n_clusters: int = 10
) -> RelationSchema:
    if n_clusters > len(attrs):
        raise DataError(f"n_clusters={n_clusters} exceeds {len(attrs)} attributes")
    labels = average_linkage(embed_names(table, attrs.names), n_clusters)
    return RelationSchema(tuple(f"dr_{i}" for i in range(n_clusters)), labels)


def build_triplets(
    assoc: AssociationMatrix, schema: RelationSchema, classes: ClassVocabulary
) -> TripletDataset:
    K, M = assoc.shape
    if K != len(classes) or M != len(schema.assignment):
        raise DataError(
            f"association matrix {assoc.shape} does not match "
            f"{len(classes)} classes x {len(schema.assignment)} attributes"
        )
    seen = np.asarray(classes.seen_mask, dtype=bool)
    pos, neg = [], []
    for k in np.flatnonzero(seen):
        for m in range(M):
            v = assoc.values[k, m]
            if v == 1:
                pos.append((schema.assignment[m], k, m))
            elif v == 0:
                neg.append((schema.assignment[m], k, m))
    return TripletDataset(np.array(pos).reshape(-1, 3), np.array(neg).reshape(-1, 3))


def merge_vocabularies(
    a: AttributeDataset, b: AttributeDataset, sources=("a", "b")
) -> AttributeDataset:
    """Union two datasets over class and attribute names.

    Cells a source never annotated become unknown. A shared attribute keeps its
    relation from ``a``; relation names present in both sources are prefixed with
    ``<source>:``. Conflicting labels for the same cell resolve to positive.
    """
    for ds in (a, b):
        if len(ds.schema.assignment) != len(ds.attrs):
            raise DataError("schema does not cover the attribute vocabulary")

    class_names = list(a.classes.names) + [n for n in b.classes.names if n not in a.classes.names]
    seen = {n: s for n, s in zip(a.classes.names, a.classes.seen_mask)}
    for n, s in zip(b.classes.names, b.classes.seen_mask):
        seen[n] = seen.get(n, False) or s
    attr_names = list(a.attrs.names) + [n for n in b.attrs.names if n not in a.attrs.names]

    collide = set(a.schema.relation_names) & set(b.schema.relation_names)

    def rel_name(src, name):
        return f"{src}:{name}" if name in collide else name

    attr_rel = {}
    for src, ds in zip(sources, (a, b)):
        for name, j in zip(ds.attrs.names, ds.schema.assignment):
            attr_rel.setdefault(name, rel_name(src, ds.schema.relation_names[j]))
    relation_names: list[str] = []
    for src, ds in zip(sources, (a, b)):
        for r in ds.schema.relation_names:
            r = rel_name(src, r)
            # relations emptied by attribute deduplication are dropped
            if r in attr_rel.values() and r not in relation_names:
                relation_names.append(r)
    schema = RelationSchema(
        tuple(relation_names), [relation_names.index(attr_rel[n]) for n in attr_names]
    )

    values = np.full((len(class_names), len(attr_names)), UNKNOWN, dtype=np.int8)
    cidx = {n: i for i, n in enumerate(class_names)}
    aidx = {n: i for i, n in enumerate(attr_names)}
    for ds in (a, b):
        rows = [cidx[n] for n in ds.classes.names]
        cols = [aidx[n] for n in ds.attrs.names]
        for r, src_row in zip(rows, ds.assoc.values):
            for c, v in zip(cols, src_row):
                if v == UNKNOWN:
                    continue
                cur = values[r, c]
                if cur != UNKNOWN and cur != v:
                    log.warning(
                        "conflicting labels for (%s, %s); keeping positive",
                        class_names[r], attr_names[c],
                    )
                    v = 1
                values[r, c] = max(cur, v)
    return AttributeDataset(
        ClassVocabulary(tuple(class_names), tuple(seen[n] for n in class_names)),
        AttributeVocabulary(tuple(attr_names)),
        schema,
        AssociationMatrix(values),
    )
