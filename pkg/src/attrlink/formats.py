"""TSV readers/writers for posteriors, class scores, hit counts, predictions and
PR curves, plus all-or-nothing output staging."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .associations import AssociationPrediction
from .errors import DataError
from .metrics import PRCurve
from .zsl import ABSTAIN, NEGATIVE, POSITIVE, ClassScoreDataset, HitCountTable, PosteriorDataset

_DECISION_CODE = {POSITIVE: "+", NEGATIVE: "-", ABSTAIN: "0"}
_CODE_DECISION = {v: k for k, v in _DECISION_CODE.items()}


def fmt(x) -> str:
    return format(float(x), ".17g")


def _rows(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return path, [line.rstrip("\r\n").split("\t") for line in fh if line.strip()]


def _float(value, path, lineno):
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{path}:{lineno}: not a number: {value!r}") from None


def _image_matrix(path, what):
    path, rows = _rows(path)
    if not rows or len(rows[0]) < 3:
        raise DataError(f"{path}: expected header 'image_id<TAB>class<TAB><{what}>...'")
    columns = tuple(c.strip() for c in rows[0][2:])
    ids, classes, values = [], [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(columns) + 2:
            raise DataError(f"{path}:{lineno}: expected {len(columns) + 2} columns, got {len(row)}")
        ids.append(row[0].strip())
        classes.append(row[1].strip())
        values.append([_float(v, path, lineno) for v in row[2:]])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate image ids")
    return tuple(ids), tuple(classes), columns, np.array(values, dtype=np.float64).reshape(len(ids), len(columns))


def load_posteriors(path, prior=0.5) -> PosteriorDataset:
    ids, classes, attrs, values = _image_matrix(path, "attribute")
    return PosteriorDataset(ids, classes, attrs, values, np.full(len(attrs), float(prior)))


def format_image_matrix(ids, classes, columns, values) -> str:
    lines = ["image_id\tclass\t" + "\t".join(columns)]
    for i, c, row in zip(ids, classes, values):
        lines.append(f"{i}\t{c}\t" + "\t".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def load_class_scores(path) -> ClassScoreDataset:
    ids, classes, names, values = _image_matrix(path, "class")
    return ClassScoreDataset(ids, classes, names, values)


def load_hit_counts(path) -> HitCountTable:
    """Read ``class<TAB>attribute<TAB>h_class<TAB>h_attr<TAB>h_pair`` rows.

    Pairs never listed get a joint count of 0.
    """
    path, rows = _rows(path)
    if rows and rows[0][0].strip().lower() == "class" and rows[0][2:3] == ["h_class"]:
        rows = rows[1:]
        start = 2
    else:
        start = 1
    classes, attrs, hc, ha, pairs = [], [], {}, {}, {}
    for lineno, row in enumerate(rows, start):
        if len(row) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 columns")
        c, a = row[0].strip(), row[1].strip()
        h = [_float(v, path, lineno) for v in row[2:]]
        if c not in hc:
            classes.append(c)
        if a not in ha:
            attrs.append(a)
        if hc.setdefault(c, h[0]) != h[0] or ha.setdefault(a, h[1]) != h[1]:
            raise DataError(f"{path}:{lineno}: inconsistent marginal hit counts")
        pairs[c, a] = h[2]
    classes.sort()
    attrs.sort()
    hp = np.array([[pairs.get((c, a), 0.0) for a in attrs] for c in classes]).reshape(len(classes), len(attrs))
    return HitCountTable(tuple(classes), tuple(attrs), [hc[c] for c in classes], [ha[a] for a in attrs], hp)


def format_hit_counts(table: HitCountTable) -> str:
    lines = ["class\tattribute\th_class\th_attr\th_pair"]
    for k, c in enumerate(table.class_names):
        for m, a in enumerate(table.attribute_names):
            lines.append(
                f"{c}\t{a}\t{fmt(table.h_class[k])}\t{fmt(table.h_attr[m])}\t{fmt(table.h_pair[k, m])}"
            )
    return "\n".join(lines) + "\n"


def format_predictions(preds) -> str:
    lines = ["class\tattribute\tprobability\tdecision"]
    for p in preds:
        for a, prob, d in zip(p.attribute_names, p.probabilities, p.decisions):
            lines.append(f"{p.class_name}\t{a}\t{fmt(prob)}\t{_DECISION_CODE[int(d)]}")
    return "\n".join(lines) + "\n"


def load_predictions(path) -> list[AssociationPrediction]:
    """Read the association TSV; classes keep first-appearance order."""
    path, rows = _rows(path)
    if rows and rows[0][:2] == ["class", "attribute"]:
        rows = rows[1:]
    by_class: dict[str, dict[str, tuple[float, int]]] = {}
    for lineno, row in enumerate(rows, 2):
        if len(row) != 4:
            raise DataError(f"{path}:{lineno}: expected 'class, attribute, probability, decision'")
        c, a, p, d = (x.strip() for x in row)
        if d not in _CODE_DECISION:
            raise DataError(f"{path}:{lineno}: decision must be one of + - 0")
        entry = by_class.setdefault(c, {})
        if a in entry:
            raise DataError(f"{path}:{lineno}: duplicate row for ({c}, {a})")
        entry[a] = (_float(p, path, lineno), _CODE_DECISION[d])
    preds = []
    for c, entry in by_class.items():
        attrs = tuple(entry)
        preds.append(AssociationPrediction(
            c, attrs,
            np.array([entry[a][0] for a in attrs]),
            np.array([entry[a][1] for a in attrs], dtype=np.int8),
        ))
    return preds


def format_pr_curve(curve: PRCurve) -> str:
    lines = ["threshold\tprecision\trecall"]
    for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
        lines.append(f"{fmt(t)}\t{fmt(p)}\t{fmt(r)}")
    return "\n".join(lines) + "\n"


class OutputSet:
    """Stage output files in memory and write them together at the end.

    Each file is written to a temporary sibling and renamed into place, so a
    run that fails before :meth:`commit` leaves no outputs behind.
    """

    def __init__(self):
        self._files: dict[Path, bytes] = {}

    def add(self, path, content) -> Path:
        path = Path(path)
        self._files[path] = content.encode("utf-8") if isinstance(content, str) else bytes(content)
        return path

    def add_figure(self, path, fig) -> Path:
        import io

        buf = io.BytesIO()
        fig.savefig(buf, format=Path(path).suffix.lstrip(".") or "png", metadata={"Software": None})
        return self.add(path, buf.getvalue())

    def paths(self):
        return list(self._files)

    def commit(self):
        for path, data in self._files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
