"""Pretrained word embeddings: loading, phrase composition, neighbour queries."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MissingTokenError

_SPLIT = re.compile(r"[\s_]+")


@dataclass(frozen=True)
class PhraseVector:
    phrase: str
    vector: np.ndarray
    constituent_tokens: list[str]


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Token -> vector map. Tokens are stored lowercased."""

    tokens: tuple[str, ...]
    vectors: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.tokens):
            raise DataError(
                f"vectors shape {vectors.shape} does not match {len(self.tokens)} tokens"
            )
        if vectors.shape[1] < 1:
            raise DataError("embedding dimension must be positive")
        if not np.all(np.isfinite(vectors)):
            raise DataError("embedding vectors contain non-finite values")
        tokens = tuple(t.lower() for t in self.tokens)
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise DataError(f"duplicate token {tok!r}")
            index[tok] = i
        vectors.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token.lower() in self._index

    def index(self, token: str) -> int:
        return self._index[token.lower()]

    def lookup(self, token: str) -> np.ndarray:
        try:
            return self.vectors[self._index[token.lower()]]
        except KeyError:
            raise MissingTokenError(token, [token.lower()], self._suggest([token.lower()])) from None

    def _suggest(self, missing, n=5):
        return {tok: closest_tokens(tok, self.tokens, n) for tok in missing}


def _edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def closest_tokens(word: str, vocabulary, n: int = 5) -> list[str]:
    """The ``n`` vocabulary entries nearest to ``word`` in Levenshtein distance."""
    scored = sorted(
        ((_edit_distance(word, tok), i, tok) for i, tok in enumerate(vocabulary))
    )
    return [tok for _, _, tok in scored[:n]]


def load_embeddings(path) -> EmbeddingTable:
    """Read the text format: ``<vocab_size> <dim>`` header, then one token per line.

    Errors carry the 1-based line number of the offending line.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        try:
            if len(parts) != 2:
                raise ValueError
            size, dim = int(parts[0]), int(parts[1])
            if size < 0 or dim < 1:
                raise ValueError
        except ValueError:
            raise DataError(f"{path}:1: malformed header {header.strip()!r}") from None

        tokens, rows, seen = [], [], {}
        lineno = 1
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(" ")
            fields = [f for f in fields if f != ""]
            tok = fields[0].lower()
            if len(fields) - 1 != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values for {tok!r}, got {len(fields) - 1}"
                )
            if tok in seen:
                raise DataError(
                    f"{path}:{lineno}: duplicate token {tok!r} (first at line {seen[tok]})"
                )
            try:
                row = [float(x) for x in fields[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value for {tok!r}") from None
            if not all(np.isfinite(row)):
                raise DataError(f"{path}:{lineno}: non-finite value for {tok!r}")
            if len(tokens) == size:
                raise DataError(f"{path}:{lineno}: more rows than the declared {size}")
            seen[tok] = lineno
            tokens.append(tok)
            rows.append(row)
    if len(tokens) != size:
        raise DataError(f"{path}:{lineno}: declared {size} rows, found {len(tokens)}")
    vectors = np.array(rows, dtype=np.float64).reshape(size, dim)
    return EmbeddingTable(tuple(tokens), vectors)


def format_embeddings(table: EmbeddingTable) -> str:
    lines = [f"{len(table)} {table.dim}"]
    for tok, vec in zip(table.tokens, table.vectors):
        lines.append(tok + " " + " ".join(format(float(x), ".17g") for x in vec))
    return "\n".join(lines) + "\n"


def save_embeddings(table: EmbeddingTable, path) -> None:
    Path(path).write_text(format_embeddings(table), encoding="utf-8")


def embed_phrase(table: EmbeddingTable, phrase: str) -> PhraseVector:
    """Vector for a class/attribute name.

    A name present verbatim in the vocabulary (``humpback_whale``) uses its own
    vector; otherwise it is split on whitespace/underscores and the token
    vectors are averaged.
    """
    key = phrase.strip().lower()
    if key in table:
        return PhraseVector(phrase, table.lookup(key).copy(), [key])
    tokens = [t for t in _SPLIT.split(key) if t]
    if not tokens:
        raise DataError(f"empty phrase {phrase!r}")
    missing = [t for t in tokens if t not in table]
    if missing:
        raise MissingTokenError(phrase, missing, table._suggest(missing))
    vec = np.mean([table.lookup(t) for t in tokens], axis=0)
    return PhraseVector(phrase, vec, tokens)


def embed_names(table: EmbeddingTable, names) -> np.ndarray:
    """Stack phrase vectors for ``names`` into a (len(names), dim) matrix."""
    if len(names) == 0:
        return np.zeros((0, table.dim))
    return np.vstack([embed_phrase(table, n).vector for n in names])


def nearest_neighbors(
    table: EmbeddingTable, query, k: int, metric: str = "euclidean"
) -> list[tuple[str, float]]:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (table.dim,):
        raise DataError(f"query has shape {query.shape}, expected ({table.dim},)")
    if not 1 <= k <= len(table):
        raise DataError(f"k={k} outside [1, {len(table)}]")
    if metric == "euclidean":
        dist = np.linalg.norm(table.vectors - query, axis=1)
    elif metric == "cosine":
        norms = np.linalg.norm(table.vectors, axis=1) * np.linalg.norm(query)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (table.vectors @ query) / norms
        # zero vectors have undefined direction; treat them as orthogonal
        dist = 1.0 - np.where(norms > 0, cos, 0.0)
    else:
        raise DataError(f"unknown metric {metric!r}")
    order = np.argsort(dist, kind="stable")[:k]
    return [(table.tokens[i], float(dist[i])) for i in order]
