"""SVG figures for frfx artifacts, drawn with matplotlib's Agg/SVG backend.

Renders run inside a fixed rc context (hash salt, text kept as text, no date
metadata), so two renders of the same artifact are byte-identical.
"""

import io
import logging
import math
from typing import Any, Dict, List, Literal, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.cm import ScalarMappable  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap, Normalize, to_hex  # noqa: E402
from matplotlib.lines import Line2D  # noqa: E402
from pydantic import BaseModel, ConfigDict, Field  # noqa: E402

from .config import CLASS_NAMES  # noqa: E402
from .errors import InvalidSpec, IoError  # noqa: E402
from .explain import (  # noqa: E402
    BubblePlotData,
    ClassConditionalScores,
    CurveSet,
    FpcVariation,
    HeatmapGrid,
    ImportanceTable,
    PdpCurve,
    ReconstructionBands,
)

log = logging.getLogger("render")

PlotKind = Literal["line-grid", "band", "heatmap", "bubble", "violin", "bar", "curves", "comparison"]

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
WINDOW_COLORS = ["#2c7bb6", "#abd9e9", "#fdae61", "#d7191c"]
CLASS_COLORS = ("#3b6fb6", "#2ca25f")

# green at p=0, pale yellow at 0.5, red at 1; N odd so the midpoint is an exact table entry
HEAT_CMAP = LinearSegmentedColormap.from_list("frfx_heat", ["#1a9850", "#ffffbf", "#d73027"], N=257)

DPI = 72
RC = {
    "svg.hashsalt": "frfx",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
}

DEFAULT_BAR_METRICS = ("mdg", "permutation_importance", "eta_squared", "f_statistic")
METRIC_LABELS = {
    "mdg": "Mean decrease in Gini",
    "permutation_importance": "Permutation importance",
    "eta_squared": "Eta squared",
    "f_statistic": "F statistic",
    "p_value": "ANOVA p-value",
    "explained_variance_fraction": "Explained variance",
}


class PlotSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: PlotKind
    data: Any
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    width: int = Field(960, gt=0)
    height: int = Field(720, gt=0)
    metrics: List[str] = list(DEFAULT_BAR_METRICS)
    class_names: Tuple[str, str] = CLASS_NAMES


def heat_color(p: float) -> str:
    """Hex colour of probability p on the diverging heatmap scale, clamped to [0, 1]."""
    return to_hex(HEAT_CMAP(min(1.0, max(0.0, float(p)))))


def window_color(w: int, n_windows: int) -> str:
    if n_windows <= len(WINDOW_COLORS):
        return WINDOW_COLORS[w]
    return heat_color(w / (n_windows - 1))


def _g(v: float) -> str:
    return f"{v:.3g}"


def _items(data: Any) -> list:
    return list(data) if isinstance(data, (list, tuple)) else [data]


def _grid(spec: PlotSpec, n: int):
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    fig, axes = plt.subplots(
        rows, cols, figsize=(spec.width / DPI, spec.height / DPI), squeeze=False, layout="constrained"
    )
    flat = list(axes.ravel())
    for ax in flat[n:]:
        ax.set_axis_off()
    return fig, flat[:n]


def _single(spec: PlotSpec):
    return plt.subplots(figsize=(spec.width / DPI, spec.height / DPI), layout="constrained")


def _draw_bands(ax, bands: ReconstructionBands, x_label: str = "", y_label: str = ""):
    n = len(bands.lower)
    for w, (lo, hi) in enumerate(zip(bands.lower, bands.upper)):
        ax.fill_between(
            bands.grid,
            lo,
            hi,
            color=window_color(w, n),
            alpha=0.45,
            lw=0,
            label=f"[{_g(bands.edges[w])}, {_g(bands.edges[w + 1])}] n={bands.counts[w]}",
            gid=f"band-FPC{bands.fpc_index + 1}-w{w}",
        )
    ax.plot(bands.grid, bands.mean_curve, color="black", ls="--", lw=1.2, label="mean")
    ax.set_title(f"FPC{bands.fpc_index + 1}")
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.legend(loc="best", frameon=False)


def _draw_pdp(ax, curve: PdpCurve, x_label: str = "", y_label: str = ""):
    ax.plot(curve.score_grid, curve.values, color=PALETTE[0], lw=1.5)
    ax.set_title(f"FPC{curve.fpc_index + 1}")
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)


def _render_line_grid(spec: PlotSpec):
    items = _items(spec.data)
    fig, axes = _grid(spec, len(items))
    for ax, item in zip(axes, items):
        if isinstance(item, PdpCurve):
            _draw_pdp(ax, item, spec.x_label, spec.y_label)
            continue
        last = max(1, len(item.curves) - 1)
        for j, curve in enumerate(item.curves):
            ax.plot(item.grid, curve, color=heat_color(j / last), lw=1.0)
        ax.plot(item.grid, item.mean_curve, color="black", ls="--", lw=1.2)
        ax.set_title(f"FPC{item.fpc_index + 1}")
        ax.set_xlabel(spec.x_label)
        ax.set_ylabel(spec.y_label)
    return fig


def _render_bands(spec: PlotSpec):
    items = _items(spec.data)
    fig, axes = _grid(spec, len(items))
    for ax, bands in zip(axes, items):
        _draw_bands(ax, bands, spec.x_label, spec.y_label)
    return fig


def _render_comparison(spec: PlotSpec):
    pairs = _items(spec.data)
    fig, axes = plt.subplots(
        len(pairs), 2, figsize=(spec.width / DPI, spec.height / DPI), squeeze=False, layout="constrained"
    )
    for (pdp_ax, band_ax), (curve, bands) in zip(axes, pairs):
        n = len(bands.lower)
        for w in range(n):
            pdp_ax.axvspan(
                bands.edges[w],
                bands.edges[w + 1],
                color=window_color(w, n),
                alpha=0.3,
                lw=0,
                gid=f"window-FPC{bands.fpc_index + 1}-w{w}",
            )
        _draw_pdp(pdp_ax, curve, "score", "P(class 1)" if curve.scale == "probability" else "logit")
        _draw_bands(band_ax, bands, spec.x_label or "t")
    return fig


def _render_curves(spec: PlotSpec):
    cs: CurveSet = spec.data
    fig, ax = _single(spec)
    if cs.groups is None:
        for i, (name, curve) in enumerate(zip(cs.names, cs.curves)):
            ax.plot(cs.grid, curve, color=PALETTE[i % len(PALETTE)], lw=1.3, label=name, gid=f"curve-{i}")
        ax.axhline(0.0, color="#777777", lw=0.6)
        ax.legend(loc="best", frameon=False, ncol=2 if len(cs.curves) > 8 else 1)
    else:
        values = np.asarray(cs.curves, dtype=float)
        groups = np.asarray(cs.groups)
        for i, (g, curve) in enumerate(zip(groups, values)):
            ax.plot(cs.grid, curve, color=CLASS_COLORS[int(g) % 2], lw=0.6, alpha=0.35, gid=f"curve-{i}")
        handles = []
        for g in sorted(set(groups.tolist())):
            ax.plot(cs.grid, values[groups == g].mean(axis=0), color=CLASS_COLORS[int(g) % 2], lw=2.2)
            handles.append(Line2D([], [], color=CLASS_COLORS[int(g) % 2], lw=2.2, label=spec.class_names[int(g)]))
        ax.legend(handles=handles, loc="best", frameon=False)
    ax.set_xlabel(spec.x_label)
    ax.set_ylabel(spec.y_label)
    return fig


def _render_heatmap(spec: PlotSpec):
    hm: HeatmapGrid = spec.data
    fig, ax = _single(spec)
    for c, (k, grid, probs) in enumerate(zip(hm.fpc_indices, hm.score_grids, hm.probabilities)):
        # lowest score at the bottom of each column
        cells = np.asarray(probs, dtype=float)[:, None]
        mesh = ax.pcolormesh(
            [c - 0.5, c + 0.5], np.arange(len(probs) + 1), cells, cmap=HEAT_CMAP, vmin=0.0, vmax=1.0
        )
        mesh.set_gid(f"heatmap-FPC{k + 1}")
        ax.text(c, len(probs) + 0.3, _g(grid[-1]), ha="center", va="bottom", fontsize=6)
        ax.text(c, -0.3, _g(grid[0]), ha="center", va="top", fontsize=6)
    ax.set_xticks(range(len(hm.fpc_indices)), [f"FPC{k + 1}" for k in hm.fpc_indices])
    ax.set_yticks([])
    ax.set_xlabel(spec.x_label or "FPC")
    ax.set_ylabel(spec.y_label or "score (per-FPC range)")
    bar = fig.colorbar(ScalarMappable(norm=Normalize(0.0, 1.0), cmap=HEAT_CMAP), ax=ax, ticks=[0.0, 0.5, 1.0])
    bar.set_label(f"P({spec.class_names[1]})")
    return fig


def _render_bubble(spec: PlotSpec):
    bd: BubblePlotData = spec.data
    fig, ax = _single(spec)
    area = (min(spec.width, spec.height) / 8) ** 2
    for i, p in enumerate(bd.points):
        ax.scatter(
            [p.external],
            [p.internal],
            s=max(20.0, area * max(p.size, 0.0)),
            color=PALETTE[i % len(PALETTE)],
            alpha=0.7,
            edgecolors="#333333",
            gid=f"bubble-FPC{p.fpc_index + 1}",
        )
        ax.annotate(f"FPC{p.fpc_index + 1}", (p.external, p.internal), ha="center", va="center", fontsize=8)
    ax.axvline(bd.median_external, color="#555555", ls="--", lw=1.0, gid="median-external")
    ax.axhline(bd.median_internal, color="#555555", ls="--", lw=1.0, gid="median-internal")
    for x, y, text, ha in ((0.98, 0.97, "critical", "right"), (0.02, 0.97, "model-specific", "left"),
                           (0.98, 0.02, "externally-relevant", "right"), (0.02, 0.02, "minor", "left")):
        ax.text(x, y, text, transform=ax.transAxes, ha=ha, va="top" if y > 0.5 else "bottom", color="#555555")
    ax.set_xlabel(spec.x_label or METRIC_LABELS.get(bd.external_metric, bd.external_metric))
    ax.set_ylabel(spec.y_label or METRIC_LABELS.get(bd.internal_metric, bd.internal_metric))
    return fig


def _render_violin(spec: PlotSpec):
    cs: ClassConditionalScores = spec.data
    fpcs = sorted({g.fpc_index for g in cs.groups})
    p_by_fpc = dict(zip(fpcs, cs.p_values)) if len(cs.p_values) == len(fpcs) else {}
    fig, axes = _grid(spec, len(fpcs))
    for ax, k in zip(axes, fpcs):
        for g in (g for g in cs.groups if g.fpc_index == k):
            peak = max(g.density) if g.density and max(g.density) > 0 else 1.0
            half = 0.4 * np.asarray(g.density) / peak
            ax.fill_betweenx(
                g.density_grid, g.label - half, g.label + half,
                color=CLASS_COLORS[g.label], alpha=0.55, edgecolor="#333333", lw=0.6,
            )
            ax.vlines(g.label, g.q1, g.q3, color="#222222", lw=5)
            ax.scatter([g.label], [g.median], color="white", s=12, zorder=3)
        p = p_by_fpc.get(k)
        ax.set_title(f"FPC{k + 1}" + ("" if p is None else f" (p={p:.3g})"))
        ax.set_xticks([0, 1], list(spec.class_names))
        ax.set_xlim(-0.6, 1.6)
        ax.set_ylabel(spec.y_label)
    return fig


def _render_bar(spec: PlotSpec):
    table: ImportanceTable = spec.data
    fpcs = [r.fpc_index for r in table.rows]
    fig, axes = _grid(spec, len(spec.metrics))
    for ax, metric in zip(axes, spec.metrics):
        vals = table.column(metric)
        finite = vals[np.isfinite(vals)]
        vals = np.where(np.isfinite(vals), vals, float(finite.max()) if finite.size else 1.0)
        ax.bar(range(len(fpcs)), vals, color=PALETTE[0])
        ax.axhline(0.0, color="#444444", lw=0.6)
        ax.set_title(METRIC_LABELS[metric])
        if len(fpcs) <= 20:
            ax.set_xticks(range(len(fpcs)), [str(k + 1) for k in fpcs])
        ax.set_xlabel(spec.x_label or "FPC")
        ax.set_ylabel(spec.y_label)
    return fig


_RENDERERS = {
    "line-grid": _render_line_grid,
    "band": _render_bands,
    "heatmap": _render_heatmap,
    "bubble": _render_bubble,
    "violin": _render_violin,
    "bar": _render_bar,
    "curves": _render_curves,
    "comparison": _render_comparison,
}

_EXPECTED = {
    "line-grid": (PdpCurve, FpcVariation),
    "band": (ReconstructionBands,),
    "heatmap": (HeatmapGrid,),
    "bubble": (BubblePlotData,),
    "violin": (ClassConditionalScores,),
    "bar": (ImportanceTable,),
    "curves": (CurveSet,),
}

_LISTABLE = {"line-grid", "band"}


def _check_bands(bands: ReconstructionBands):
    if len(bands.lower) != len(bands.upper) or len(bands.edges) != len(bands.lower) + 1:
        raise InvalidSpec("band windows and edges are inconsistent")


def _check_pairs(data: Any):
    if not isinstance(data, (list, tuple)) or not data:
        raise InvalidSpec("comparison needs a non-empty list of (PdpCurve, ReconstructionBands) pairs")
    for pair in data:
        if not (
            isinstance(pair, (list, tuple))
            and len(pair) == 2
            and isinstance(pair[0], PdpCurve)
            and isinstance(pair[1], ReconstructionBands)
        ):
            raise InvalidSpec("comparison panels need (PdpCurve, ReconstructionBands) pairs")
        if pair[0].fpc_index != pair[1].fpc_index:
            raise InvalidSpec(f"FPDP of FPC{pair[0].fpc_index + 1} paired with bands of FPC{pair[1].fpc_index + 1}")
        _check_bands(pair[1])


def _check(spec: PlotSpec):
    data = spec.data
    if spec.kind == "comparison":
        _check_pairs(data)
        return
    allowed = _EXPECTED[spec.kind]
    if isinstance(data, (list, tuple)):
        if spec.kind not in _LISTABLE:
            raise InvalidSpec(f"{spec.kind} plots take a single artifact, got a list")
        if not data or not all(isinstance(d, allowed) for d in data):
            raise InvalidSpec(f"{spec.kind} needs a non-empty list of {', '.join(t.__name__ for t in allowed)}")
    elif not isinstance(data, allowed):
        raise InvalidSpec(f"{spec.kind} cannot draw {type(data).__name__}")

    if spec.kind == "heatmap":
        if not data.fpc_indices or any(len(r) == 0 for r in data.probabilities):
            raise InvalidSpec("heatmap has no cells")
        if len(data.score_grids) != len(data.fpc_indices) or len(data.probabilities) != len(data.fpc_indices):
            raise InvalidSpec("heatmap needs one score grid and one probability row per FPC")
    elif spec.kind == "bubble" and not data.points:
        raise InvalidSpec("bubble plot has no points")
    elif spec.kind == "violin" and not data.groups:
        raise InvalidSpec("violin plot has no groups")
    elif spec.kind == "bar":
        if not data.rows:
            raise InvalidSpec("importance table is empty")
        for m in spec.metrics:
            if m not in METRIC_LABELS:
                raise InvalidSpec(f"unknown bar metric {m!r}")
    elif spec.kind == "band":
        for b in _items(data):
            _check_bands(b)


def svg_string(spec: PlotSpec) -> str:
    _check(spec)
    buf = io.BytesIO()
    with plt.rc_context(RC):
        fig = _RENDERERS[spec.kind](spec)
        try:
            if spec.title:
                fig.suptitle(spec.title, fontweight="bold")
            fig.savefig(buf, format="svg", dpi=DPI, metadata={"Date": None})
        finally:
            plt.close(fig)
    return buf.getvalue().decode("utf-8")


def render_svg(spec: PlotSpec, path: str) -> str:
    text = svg_string(spec)
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    log.debug("rendered %s plot to %s", spec.kind, path)
    return path


_KIND_OF_ARTIFACT = {
    PdpCurve: "line-grid",
    FpcVariation: "line-grid",
    ReconstructionBands: "band",
    HeatmapGrid: "heatmap",
    BubblePlotData: "bubble",
    ClassConditionalScores: "violin",
    ImportanceTable: "bar",
    CurveSet: "curves",
}


def spec_for(artifact: Any, **overrides) -> PlotSpec:
    """Default PlotSpec for an artifact (or a list of same-kind artifacts)."""
    first = artifact[0] if isinstance(artifact, (list, tuple)) and artifact else artifact
    kind = _KIND_OF_ARTIFACT.get(type(first))
    if kind is None:
        raise InvalidSpec(f"no figure type draws {type(first).__name__}")
    defaults: Dict[str, Any] = {
        "line-grid": {"x_label": "score", "y_label": "P(class 1)"} if isinstance(first, PdpCurve) else {"x_label": "t"},
        "band": {"x_label": "t"},
        "heatmap": {"title": "FPC probability heatmap"},
        "bubble": {"title": "Internal vs external importance (bubble = explained variance)"},
        "violin": {"y_label": "score"},
        "bar": {},
        "curves": {"x_label": "t"},
    }[kind]
    if kind == "curves":
        defaults["title"] = "Eigenfunctions" if first.groups is None else "Smoothed curves by class"
    defaults.update(overrides)
    return PlotSpec(kind=kind, data=artifact, **defaults)


def comparison_spec(pdps: Sequence[PdpCurve], bands: Sequence[ReconstructionBands], **overrides) -> PlotSpec:
    """FPDP panels shaded by score window next to the matching reconstruction bands, one row per FPC."""
    by_fpc = {b.fpc_index: b for b in bands}
    pairs = [(p, by_fpc[p.fpc_index]) for p in pdps if p.fpc_index in by_fpc]
    if not pairs:
        raise InvalidSpec("no FPC has both an FPDP and reconstruction bands")
    defaults: Dict[str, Any] = {"title": "FPDP against reconstruction bands", "height": max(720, 240 * len(pairs))}
    defaults.update(overrides)
    return PlotSpec(kind="comparison", data=pairs, **defaults)
