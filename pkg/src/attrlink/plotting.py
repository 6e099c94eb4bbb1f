"""Report figures. Built on ``matplotlib.figure.Figure`` so no GUI backend or
global pyplot state is involved."""

from __future__ import annotations

from matplotlib.figure import Figure

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _figure(width=4.5, height=3.4):
    import matplotlib as mpl

    with mpl.rc_context(RC):
        fig = Figure(figsize=(width, height), dpi=120)
        ax = fig.add_subplot(111)
    return fig, ax


def pr_curves_figure(curves: dict, title: str = "") -> Figure:
    """One precision-recall line per relation, AP in the legend."""
    fig, ax = _figure()
    for name, curve in curves.items():
        if curve is None:
            continue
        r = [0.0, *curve.recall.tolist()]
        p = [curve.precision[0], *curve.precision.tolist()]
        ax.step(r, p, where="post", label=f"{name} (AP {100 * curve.ap:.1f})")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left", frameon=False)
    fig.tight_layout()
    return fig


def loss_curve_figure(epoch_losses, initial_loss=None) -> Figure:
    fig, ax = _figure(4.0, 3.0)
    xs = list(range(1, len(epoch_losses) + 1))
    ys = list(epoch_losses)
    if initial_loss is not None:
        xs, ys = [0, *xs], [initial_loss, *ys]
    ax.plot(xs, ys, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL per triplet")
    if ys and min(ys) > 0:
        ax.set_yscale("log")
    fig.tight_layout()
    return fig


def per_class_accuracy_figure(per_class: dict, mean: float) -> Figure:
    fig, ax = _figure(max(3.0, 0.45 * len(per_class) + 1.5), 3.0)
    names = list(per_class)
    ax.bar(range(len(names)), [100 * per_class[n] for n in names], color="0.55")
    ax.axhline(100 * mean, color="k", lw=0.8, ls="--", label=f"mean {100 * mean:.1f}%")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig
