"""Command-line front end.

Subcommands: cluster-relations, train, calibrate, predict, zsl, eval-assoc.
Options may also come from a TOML file (``--config``); top-level keys apply to
every command, a ``[<command>]`` table to one command, and flags win over both.
Relative paths in the file are resolved against the file's directory.

Exit codes: 0 success, 1 computation failure, 2 bad input or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .associations import (
    FIXED_HALF,
    AssociationPrediction,
    ThresholdPair,
    decide,
    predict_associations,
    score_threshold_grid,
    select_hyperparameters,
    select_thresholds,
)
from .embeddings import embed_names, embed_phrase, load_embeddings
from .errors import DataError, TrainingError
from .factor_model import TrainConfig, format_model, init_model, load_model, train
from .formats import (
    OutputSet,
    format_pr_curve,
    format_predictions,
    load_class_scores,
    load_hit_counts,
    load_posteriors,
    load_predictions,
)
from .metrics import average_precision, binary_accuracy, mean_ap, per_class_accuracy, pr_curve
from .relations import (
    UNKNOWN,
    AssociationMatrix,
    AttributeDataset,
    AttributeVocabulary,
    ClassVocabulary,
    build_triplets,
    discover_relations,
    format_schema,
    load_associations,
    load_semantic_schema,
    merge_vocabularies,
    single_relation_schema,
)
from .zsl import (
    NEGATIVE,
    POSITIVE,
    average_positive_count,
    baseline_dice,
    baseline_nearest_class,
    baseline_similarity,
    baseline_weighted_classes,
    argmax_classes,
    classify_zsl,
    matrix_to_associations,
)

log = logging.getLogger("attrlink")

PATH_KEYS = {
    "embeddings", "associations", "schema", "posteriors", "class_scores", "hit_counts",
    "model", "thresholds", "predictions", "truth", "out", "out_dir", "report",
}
INPUT_KEYS = PATH_KEYS - {"out", "out_dir", "report"}

DEFAULTS = {
    "epochs": 200,
    "learning_rate": 0.05,
    "batch_size": 64,
    "seed": 0,
    "lam": 1.0,
    "n_factors": 4,
    "init_scale": 0.1,
    "optimizer": "sgd",
    "relations": "semantic",
    "n_clusters": 10,
    "search_folds": 5,
    "folds": 5,
    "grid_step": 0.05,
    "threshold_mode": "learned",
    "baseline": "relations",
    "threshold_objective": "seen-accuracy",
    "prior": 0.5,
    "single_relation": False,
    "fixed_attr_embeddings": False,
    "unseen": [],
}


# -- helpers ----------------------------------------------------------------


def _names(value):
    if value is None:
        return []
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def _numbers(value, kind):
    return [kind(v) for v in _names(value)]


def _listify(value):
    if value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=int(args.epochs),
        learning_rate=float(args.learning_rate),
        batch_size=int(args.batch_size),
        seed=int(args.seed),
        lam=float(args.lam),
        n_factors=int(args.n_factors),
        init_scale=float(args.init_scale),
        learn_attr_embeddings=not args.fixed_attr_embeddings,
        optimizer=args.optimizer,
    )


def _config_of(cfg: TrainConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _sorted_dataset(names, attrs, assoc, unseen):
    """Rows ordered by class name so input row order never matters."""
    order = sorted(range(len(names)), key=lambda i: names[i])
    names = [names[i] for i in order]
    return ClassVocabulary.from_split(names, [u for u in unseen if u in names]), attrs, AssociationMatrix(assoc.values[order])


def load_training_data(args):
    """Embedding table plus the (possibly merged) annotated dataset."""
    table = load_embeddings(args.embeddings)
    assoc_paths = _listify(args.associations)
    schema_paths = _listify(args.schema)
    if not assoc_paths:
        raise DataError("no association file given (--associations)")
    if args.relations == "semantic" and not args.single_relation and len(schema_paths) != len(assoc_paths):
        raise DataError("semantic relations need one --schema per --associations file")
    unseen = _names(args.unseen)

    datasets = []
    for i, path in enumerate(assoc_paths):
        names, attrs, assoc = load_associations(path)
        classes, attrs, assoc = _sorted_dataset(names, attrs, assoc, unseen)
        if args.single_relation:
            schema = single_relation_schema(attrs)
        elif args.relations == "semantic":
            schema = load_semantic_schema(schema_paths[i], attrs)
        elif args.relations == "data-driven":
            schema = discover_relations(table, attrs, min(int(args.n_clusters), len(attrs)))
        else:
            raise DataError(f"unknown relation mode {args.relations!r}")
        datasets.append((Path(path).stem, AttributeDataset(classes, attrs, schema, assoc)))

    name, dataset = datasets[0]
    for other_name, other in datasets[1:]:
        dataset = merge_vocabularies(dataset, other, sources=(name, other_name))
        name = f"{name}+{other_name}"
    if args.single_relation and len(datasets) > 1:
        dataset = AttributeDataset(dataset.classes, dataset.attrs,
                                   single_relation_schema(dataset.attrs), dataset.assoc)
    missing = set(unseen).difference(dataset.classes.names)
    if missing:
        raise DataError(f"unseen classes not found in any association file: {sorted(missing)}")
    if not dataset.classes.seen_names():
        raise DataError("no seen classes to train on")
    class_emb = embed_names(table, dataset.classes.names)
    attr_emb = embed_names(table, dataset.attrs.names)
    return table, dataset, class_emb, attr_emb


def _load_thresholds(path) -> ThresholdPair:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return ThresholdPair(float(doc["t_minus"]), float(doc["t_plus"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a thresholds file ({exc})") from None


# -- commands ---------------------------------------------------------------


def cmd_cluster_relations(args, out: OutputSet):
    table = load_embeddings(args.embeddings)
    attrs = None
    for path in _listify(args.associations):
        _, a, _ = load_associations(path)
        names = list(a.names) if attrs is None else list(attrs.names) + [n for n in a.names if n not in attrs.names]
        attrs = AttributeVocabulary(tuple(names))
    if attrs is None:
        raise DataError("need --associations to know the attribute vocabulary")
    schema = discover_relations(table, attrs, int(args.n_clusters))
    out.add(args.out, format_schema(schema, attrs))
    log.info("grouped %d attributes into %d relations", len(attrs), schema.n_relations)


def cmd_train(args, out: OutputSet):
    _, dataset, class_emb, attr_emb = load_training_data(args)
    cfg = _train_config(args)
    search = None
    factor_cands, lam_cands = _numbers(args.search_factors, int), _numbers(args.search_lambda, float)
    if factor_cands or lam_cands:
        factor_cands = factor_cands or [cfg.n_factors]
        lam_cands = lam_cands or [cfg.lam]
        (L, lam), scores = select_hyperparameters(
            factor_cands, lam_cands, dataset, class_emb, attr_emb, cfg,
            folds=int(args.search_folds), return_scores=True,
        )
        cfg = TrainConfig(**{**_config_of(cfg), "n_factors": L, "lam": lam})
        search = {
            "selected": {"n_factors": L, "lambda": lam},
            "validation_map": [{"n_factors": k[0], "lambda": k[1], "map": v} for k, v in sorted(scores.items())],
        }
    data = build_triplets(dataset.assoc, dataset.schema, dataset.classes)
    model = init_model(
        class_emb.shape[1], dataset.schema.n_relations, cfg.n_factors, cfg.lam,
        class_emb, attr_emb, seed=cfg.seed, init_scale=cfg.init_scale,
        relation_names=dataset.schema.relation_names,
        attribute_names=dataset.attrs.names,
        assignment=dataset.schema.assignment,
    )
    model, report = train(model, data, cfg)
    model_path = out.add(args.model, format_model(model))
    report_path = Path(args.report) if args.report else model_path.with_name(model_path.stem + "_report.json")
    doc = {
        # wall time is left out so reruns produce identical reports
        **{k: v for k, v in report.to_dict().items() if k != "wall_time"},
        "config": _config_of(cfg),
        "seed": cfg.seed,
        "n_positive": int(len(data.positives)),
        "n_negative": int(len(data.negatives)),
        "seen_classes": dataset.classes.seen_names(),
        "unseen_classes": dataset.classes.unseen_names(),
        "relations": {r: [dataset.attrs.names[m] for m in dataset.schema.members(j)]
                      for j, r in enumerate(dataset.schema.relation_names)},
        "hyperparameter_search": search,
    }
    out.add(report_path, _dump_json(doc))
    from .plotting import loss_curve_figure

    out.add_figure(report_path.with_name(report_path.stem + "_loss.png"),
                   loss_curve_figure(report.epoch_losses, report.initial_loss))
    log.info("trained on %d triplets in %.1fs, final loss %.4g", len(data), report.wall_time, report.final_loss)


def cmd_calibrate(args, out: OutputSet):
    _, dataset, class_emb, attr_emb = load_training_data(args)
    cfg = _train_config(args)
    if args.model:
        model = load_model(args.model)
        cfg = TrainConfig(**{**_config_of(cfg), "n_factors": model.n_factors, "lam": model.lam})
    posteriors = load_posteriors(args.posteriors, prior=float(args.prior))
    k = int(args.k_holdout) if args.k_holdout else None
    grid, scores = score_threshold_grid(
        dataset, class_emb, attr_emb, posteriors, cfg, k_holdout=k,
        folds=int(args.folds), grid_step=float(args.grid_step),
    )
    best = select_thresholds(grid, scores)
    n_seen = len(dataset.classes.seen_names())
    out.add(args.out, _dump_json({
        "t_minus": best.t_minus,
        "t_plus": best.t_plus,
        "heldout_accuracy": float(scores[grid.index(best)]),
        "k_holdout": k or max(1, math.ceil(0.2 * n_seen)),
        "folds": int(args.folds),
        "grid_step": float(args.grid_step),
        "n_factors": cfg.n_factors,
        "lambda": cfg.lam,
    }))
    log.info("thresholds t- = %g, t+ = %g", best.t_minus, best.t_plus)


def cmd_predict(args, out: OutputSet):
    model = load_model(args.model)
    table = load_embeddings(args.embeddings)
    classes = _names(args.classes) or _names(args.unseen)
    if not classes:
        raise DataError("no classes to predict (--classes)")
    if args.threshold_mode == "fixed":
        thresholds = FIXED_HALF
    elif args.thresholds:
        thresholds = _load_thresholds(args.thresholds)
    else:
        raise DataError("learned threshold mode needs --thresholds (or use --threshold-mode fixed)")
    preds = [
        predict_associations(model, None, embed_phrase(table, c).vector, thresholds, class_name=c)
        for c in classes
    ]
    out.add(args.out, format_predictions(preds))


def _truth_predictions(class_names, attrs, assoc, names):
    """Binary associations of ``names`` turned into DAP decisions."""
    preds = []
    for c in names:
        row = assoc[class_names.index(c)]
        dec = np.where(row == 1, POSITIVE, np.where(row == 0, NEGATIVE, 0)).astype(np.int8)
        preds.append(AssociationPrediction(c, tuple(attrs), row.astype(float), dec))
    return preds


def cmd_zsl(args, out: OutputSet):
    posteriors = load_posteriors(args.posteriors, prior=float(args.prior))
    baseline = args.baseline
    unseen = sorted(_names(args.unseen))

    def seen_split():
        names, attrs, assoc = load_associations(_listify(args.associations)[0])
        if not unseen:
            raise DataError(f"baseline {baseline!r} needs --unseen")
        seen = sorted(n for n in names if n not in unseen)
        return names, attrs, assoc.values, seen

    if baseline == "relations":
        if not args.predictions:
            raise DataError("relation-based ZSL needs --predictions from 'predict'")
        preds = sorted(load_predictions(args.predictions), key=lambda p: p.class_name)
        if unseen:
            preds = [p for p in preds if p.class_name in unseen]
    elif baseline in ("supervised", "dice", "similarity", "top-q"):
        names, attrs, assoc, seen = seen_split()
        seen_rows = [names.index(n) for n in seen]
        if baseline == "supervised":
            binary = assoc[[names.index(u) for u in unseen]]
        elif baseline == "dice":
            hits = load_hit_counts(args.hit_counts)
            cols = [hits.attribute_names.index(a) for a in attrs.names]
            S_seen = baseline_dice(hits.rows(seen))[:, cols]
            S = baseline_dice(hits.rows(unseen))[:, cols]
            binary = _binarise(args, S, S_seen, assoc[seen_rows], posteriors, unseen, attrs.names)
        else:
            table = load_embeddings(args.embeddings)
            S = baseline_similarity(table, unseen, attrs.names)
            if baseline == "similarity":
                S_seen = baseline_similarity(table, seen, attrs.names)
                binary = _binarise(args, S, S_seen, assoc[seen_rows], posteriors, unseen, attrs.names)
            else:
                binary = matrix_to_associations(S, "top_q", q=average_positive_count(assoc[seen_rows]))
        preds = _truth_predictions(list(unseen), attrs.names, np.asarray(binary), unseen)
    elif baseline in ("nearest-class", "weighted-classes"):
        table = load_embeddings(args.embeddings)
        scores = load_class_scores(args.class_scores)
        if not unseen:
            raise DataError(f"baseline {baseline!r} needs --unseen")
        seen = sorted(scores.class_names)
        keep = [c in unseen for c in scores.true_class]
        from .zsl import ClassScoreDataset

        scores = ClassScoreDataset(
            tuple(i for i, k in zip(scores.image_ids, keep) if k),
            tuple(c for c, k in zip(scores.true_class, keep) if k),
            scores.class_names, scores.scores[np.flatnonzero(keep)],
        )
        if baseline == "nearest-class":
            predicted = baseline_nearest_class(table, unseen, seen, scores)
        else:
            predicted = argmax_classes(baseline_weighted_classes(table, unseen, seen, scores), unseen)
        _write_zsl(out, args, scores.image_ids, scores.true_class, predicted, unseen, baseline)
        return
    else:
        raise DataError(f"unknown baseline {baseline!r}")

    if not preds:
        raise DataError("no unseen classes to classify")
    names = [p.class_name for p in preds]
    images = posteriors.images_of(names)
    if not images.image_ids:
        raise DataError("no posterior images belong to the predicted classes")
    predicted = classify_zsl(preds, images)
    _write_zsl(out, args, images.image_ids, images.true_class, predicted, names, baseline)


def _binarise(args, S, S_seen, seen_labels, posteriors, unseen, attrs):
    """Threshold a baseline score matrix for the unseen classes.

    ``seen-accuracy`` picks the cut that best reproduces the seen-class
    associations. ``unseen-zsl`` picks the cut with the best zero-shot accuracy
    on the unseen images themselves, which peeks at test labels and is only
    offered to reproduce that protocol.
    """
    if args.threshold_objective == "seen-accuracy":
        return matrix_to_associations(S, "best_threshold", calib_scores=S_seen, labels=seen_labels)
    if args.threshold_objective != "unseen-zsl":
        raise DataError(f"unknown threshold objective {args.threshold_objective!r}")
    log.warning("tuning the baseline threshold on unseen-class accuracy uses test labels")
    images = posteriors.images_of(unseen)
    if not images.image_ids:
        raise DataError("no posterior images for the unseen classes")

    def zsl_accuracy(cut):
        preds = _truth_predictions(list(unseen), attrs, (S >= cut).astype(np.int8), unseen)
        return per_class_accuracy(classify_zsl(preds, images), images.true_class, unseen)[0]

    candidates = np.append(np.unique(S), np.inf)
    cut = candidates[int(np.argmax([zsl_accuracy(c) for c in candidates]))]
    return (S >= cut).astype(np.int8)


def _write_zsl(out, args, image_ids, truth, predicted, classes, baseline):
    mean, per_class = per_class_accuracy(predicted, truth, classes)
    out_dir = Path(args.out_dir)
    order = sorted(range(len(image_ids)), key=lambda i: image_ids[i])
    rows = ["image_id\ttrue_class\tpredicted_class"] + [
        f"{image_ids[i]}\t{truth[i]}\t{predicted[i]}" for i in order
    ]
    out.add(out_dir / "zsl_predictions.tsv", "\n".join(rows) + "\n")
    out.add(out_dir / "zsl_metrics.json", _dump_json({
        "baseline": baseline,
        "mean_per_class_accuracy": mean,
        "per_class_accuracy": per_class,
        "n_images": len(image_ids),
        "classes": list(classes),
    }))
    from .plotting import per_class_accuracy_figure

    out.add_figure(out_dir / "zsl_accuracy.png", per_class_accuracy_figure(per_class, mean))
    log.info("mean per-class accuracy %.4f over %d images", mean, len(image_ids))


def cmd_eval_assoc(args, out: OutputSet):
    preds = {p.class_name: p for p in load_predictions(args.predictions)}
    names, attrs, assoc = load_associations(args.truth)
    if args.schema:
        schema = load_semantic_schema(args.schema, attrs)
    elif args.model:
        model = load_model(args.model)
        mapping = {a: model.relation_names[j] for a, j in zip(model.attribute_names, model.assignment)}
        from .relations import schema_from_mapping

        schema = schema_from_mapping({a: mapping[a] for a in attrs.names if a in mapping}, attrs)
    else:
        raise DataError("eval-assoc needs --schema or --model for relation membership")
    classes = sorted(c for c in preds if c in names)
    if not classes:
        raise DataError("no predicted class appears in the truth file")
    P = np.empty((len(classes), len(attrs)))
    for i, c in enumerate(classes):
        lookup = dict(zip(preds[c].attribute_names, preds[c].probabilities))
        missing = [a for a in attrs.names if a not in lookup]
        if missing:
            raise DataError(f"predictions for {c!r} lack attributes {missing}")
        P[i] = [lookup[a] for a in attrs.names]
    T = assoc.values[[names.index(c) for c in classes]]

    per_class_ap = {}
    for i, c in enumerate(classes):
        known = T[i] != UNKNOWN
        if np.any(T[i][known] == 1):
            per_class_ap[c] = average_precision(P[i][known], T[i][known])
    out_dir = Path(args.out_dir)
    curves, per_relation_ap = {}, {}
    for j, rel in enumerate(schema.relation_names):
        cols = schema.members(j)
        s, y = P[:, cols].ravel(), T[:, cols].ravel()
        s, y = s[y != UNKNOWN], y[y != UNKNOWN]
        curve = pr_curve(s, y) if np.any(y == 1) else None
        curves[rel] = curve
        per_relation_ap[rel] = None if curve is None else curve.ap
        text = format_pr_curve(curve) if curve else "threshold\tprecision\trecall\n"
        out.add(out_dir / f"pr_{j:02d}_{_safe_name(rel)}.tsv", text)
    out.add(out_dir / "assoc_metrics.json", _dump_json({
        "mAP": mean_ap(P, T),
        "accuracy": binary_accuracy((P > 0.5).astype(np.int8), T),
        "per_class_ap": per_class_ap,
        "per_relation_ap": per_relation_ap,
        "n_classes": len(classes),
        "n_relations": schema.n_relations,
    }))
    from .plotting import pr_curves_figure

    out.add_figure(out_dir / "pr_curves.png", pr_curves_figure(curves))


COMMANDS = {
    "cluster-relations": cmd_cluster_relations,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "zsl": cmd_zsl,
    "eval-assoc": cmd_eval_assoc,
}

REQUIRED = {
    "cluster-relations": ["embeddings", "associations", "out"],
    "train": ["embeddings", "associations", "model"],
    "calibrate": ["embeddings", "associations", "posteriors", "out"],
    "predict": ["model", "embeddings", "out"],
    "zsl": ["posteriors", "out_dir"],
    "eval-assoc": ["predictions", "truth", "out_dir"],
}


# -- argument parsing -------------------------------------------------------


def _add_data_options(p):
    p.add_argument("--embeddings", help="text embedding file")
    p.add_argument("--associations", action="append", help="class x attribute TSV (repeat to train jointly)")
    p.add_argument("--schema", action="append", help="attribute<TAB>relation TSV, one per --associations")
    p.add_argument("--unseen", help="comma-separated unseen class names")
    p.add_argument("--relations", choices=["semantic", "data-driven"])
    p.add_argument("--n-clusters", type=int, help="relations to discover in data-driven mode")
    p.add_argument("--single-relation", action="store_true", default=None,
                   help="ablation: one relation holding every attribute")


def _add_train_options(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, help="L1 budget of each mixing row")
    p.add_argument("--n-factors", type=int, help="number of latent factors L")
    p.add_argument("--init-scale", type=float)
    p.add_argument("--optimizer", choices=["sgd", "sgd_momentum"])
    p.add_argument("--fixed-attr-embeddings", action="store_true", default=None,
                   help="ablation: do not update attribute embeddings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrlink", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="TOML file with default option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster-relations", help="group attributes into data-driven relations")
    p.add_argument("--embeddings")
    p.add_argument("--associations", action="append")
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--out", help="schema TSV to write")

    p = sub.add_parser("train", help="learn the relation model")
    _add_data_options(p)
    _add_train_options(p)
    p.add_argument("--model", help="model file to write")
    p.add_argument("--report", help="training report JSON (default: next to the model)")
    p.add_argument("--search-factors", help="comma-separated L candidates for cross-validation")
    p.add_argument("--search-lambda", help="comma-separated lambda candidates")
    p.add_argument("--search-folds", type=int)

    p = sub.add_parser("calibrate", help="learn (t-, t+) by leave-K-class-out cross-validation")
    _add_data_options(p)
    _add_train_options(p)
    p.add_argument("--posteriors")
    p.add_argument("--model", help="take L and lambda from this model")
    p.add_argument("--k-holdout", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--grid-step", type=float)
    p.add_argument("--prior", type=float)
    p.add_argument("--out", help="thresholds JSON to write")

    p = sub.add_parser("predict", help="predict associations for class names")
    p.add_argument("--model")
    p.add_argument("--embeddings")
    p.add_argument("--classes", help="comma-separated class names (default: --unseen)")
    p.add_argument("--unseen")
    p.add_argument("--thresholds", help="thresholds JSON from 'calibrate'")
    p.add_argument("--threshold-mode", choices=["learned", "fixed"])
    p.add_argument("--out", help="association TSV to write")

    p = sub.add_parser("zsl", help="zero-shot classification with DAP or a baseline")
    p.add_argument("--baseline", choices=["relations", "supervised", "dice", "similarity",
                                          "top-q", "nearest-class", "weighted-classes"])
    p.add_argument("--threshold-objective", choices=["seen-accuracy", "unseen-zsl"],
                   help="how dice/similarity scores are cut into associations")
    p.add_argument("--predictions")
    p.add_argument("--posteriors")
    p.add_argument("--embeddings")
    p.add_argument("--associations", action="append")
    p.add_argument("--hit-counts")
    p.add_argument("--class-scores")
    p.add_argument("--unseen")
    p.add_argument("--prior", type=float)
    p.add_argument("--out-dir")

    p = sub.add_parser("eval-assoc", help="score predicted associations against the truth")
    p.add_argument("--predictions")
    p.add_argument("--truth")
    p.add_argument("--schema")
    p.add_argument("--model")
    p.add_argument("--out-dir")
    return parser


def _load_config(path, command):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    path = Path(path)
    with path.open("rb") as fh:
        doc = tomllib.load(fh)
    merged = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    merged.update(doc.get(command, {}))
    merged = {k.replace("-", "_"): v for k, v in merged.items()}
    for key in PATH_KEYS & merged.keys():
        merged[key] = [str(path.parent / p) for p in merged[key]] if isinstance(merged[key], list) else str(path.parent / merged[key])
    return merged


def resolve_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(args.config, args.command) if args.config else {}
    for key, value in config.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key in ("model", "thresholds", "schema", "report", "search_factors", "search_lambda",
                "search_folds", "k_holdout", "predictions", "hit_counts", "class_scores",
                "classes", "embeddings", "associations", "posteriors", "truth", "out", "out_dir"):
        if not hasattr(args, key):
            setattr(args, key, None)
    return args


def _check_inputs(args):
    for key in REQUIRED[args.command]:
        if not getattr(args, key, None):
            raise DataError(f"missing required option --{key.replace('_', '-')}")
    for key in INPUT_KEYS:
        if args.command == "train" and key == "model":
            continue  # output of train
        for path in _listify(getattr(args, key, None)):
            if not Path(path).exists():
                raise DataError(f"--{key.replace('_', '-')}: no such file {path}")


def main(argv=None) -> int:
    try:
        args = resolve_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"attrlink: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        stream=sys.stdout,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = OutputSet()
    try:
        _check_inputs(args)
        COMMANDS[args.command](args, out)
        out.commit()
    except DataError as exc:
        print(f"attrlink {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"attrlink {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"attrlink {args.command}: training failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"attrlink {args.command}: failed: {exc!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
