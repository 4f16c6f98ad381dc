from typing import Any, Dict, List, Optional

from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.units import cm
from reportlab.pdfgen import canvas

from .config import APP_BRAND
from .errors import IoError
from .explain import BubblePlotData, HeatmapGrid, ImportanceTable
from .render import heat_color


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _heatmap_page(c: canvas.Canvas, heatmap: HeatmapGrid, class_name: str):
    W, H = A4
    c.setFont("Helvetica-Bold", 13)
    c.drawString(2 * cm, H - 2 * cm, f"FPC probability heatmap: P({class_name})")
    left, right = 2.5 * cm, W - 2 * cm
    bottom, top = 4 * cm, H - 3 * cm
    cell_w = (right - left) / len(heatmap.fpc_indices)
    c.setFont("Helvetica", 7)
    for col, (k, probs) in enumerate(zip(heatmap.fpc_indices, heatmap.probabilities)):
        cell_h = (top - bottom) / len(probs)
        x = left + col * cell_w
        for j, p in enumerate(probs):
            c.setFillColor(colors.HexColor(heat_color(p)))
            c.rect(x, bottom + j * cell_h, cell_w, cell_h, stroke=0, fill=1)
        c.setFillColor(colors.black)
        c.drawCentredString(x + cell_w / 2, bottom - 0.4 * cm, f"FPC{k + 1}")
    c.drawString(left, bottom - 1 * cm, "green: low probability, red: high probability; scores increase upwards")


def make_pdf_report(
    payload: Dict[str, Any],
    out_path: str,
    importance: Optional[ImportanceTable] = None,
    bubble: Optional[BubblePlotData] = None,
    heatmap: Optional[HeatmapGrid] = None,
    tree_text: Optional[str] = None,
):
    try:
        c = canvas.Canvas(out_path, pagesize=A4, invariant=1)
    except OSError as e:
        raise IoError(f"cannot write {out_path}: {e}") from e
    W, H = A4
    y = H - 2 * cm

    def line(text: str, step: float = 0.55 * cm):
        nonlocal y
        c.drawString(2 * cm, y, text)
        y -= step
        if y < 3 * cm:
            c.showPage()
            c.setFont("Helvetica", 10)
            y = H - 2 * cm

    c.setFont("Helvetica-Bold", 16)
    c.drawString(2 * cm, y, f"{APP_BRAND}: Functional Random Forest Report")
    y -= 1.2 * cm
    c.setFont("Helvetica", 11)
    for key in ("train", "test", "n_train", "n_test", "T", "K", "trees", "mtry", "seed"):
        if key in payload:
            line(f"{key}: {_fmt(payload[key])}")
    y -= 0.3 * cm
    c.setFont("Helvetica-Bold", 12)
    line("Performance", 0.7 * cm)
    c.setFont("Helvetica", 11)
    for key in ("train_accuracy", "test_accuracy", "oob_error", "tree_accuracy"):
        if key in payload:
            line(f"{key}: {_fmt(payload[key])}")
    ev = payload.get("variance_captured") or []
    if ev:
        line(f"FPC1 share of total variance: {ev[0]:.2%}")

    if importance is not None:
        y -= 0.3 * cm
        c.setFont("Helvetica-Bold", 12)
        line(f"FPC importance (permutation on {importance.permutation_source})", 0.7 * cm)
        c.setFont("Courier", 9)
        line(f"{'FPC':>5} {'MDG':>10} {'perm':>10} {'F':>10} {'p':>10} {'eta2':>8} {'var':>8}")
        for r in importance.rows:
            line(
                f"{r.fpc_index + 1:>5} {r.mdg:>10.4g} {r.permutation_importance:>10.4g} {r.f_statistic:>10.4g} "
                f"{r.p_value:>10.3g} {r.eta_squared:>8.3f} {r.explained_variance_fraction:>8.3f}",
                0.45 * cm,
            )

    if bubble is not None:
        y -= 0.3 * cm
        c.setFont("Helvetica-Bold", 12)
        line("Quadrants (internal vs external importance)", 0.7 * cm)
        c.setFont("Helvetica", 10)
        by_quadrant: Dict[str, List[str]] = {}
        for p in bubble.points:
            by_quadrant.setdefault(p.quadrant, []).append(f"FPC{p.fpc_index + 1}")
        for q in ("critical", "model-specific", "externally-relevant", "minor"):
            line(f"{q}: {', '.join(by_quadrant.get(q, [])) or '-'}")

    timings = payload.get("timings_ms") or {}
    if timings:
        y -= 0.3 * cm
        c.setFont("Helvetica-Bold", 12)
        line("Stage timings (ms)", 0.7 * cm)
        c.setFont("Helvetica", 10)
        for stage, ms in timings.items():
            line(f"{stage}: {ms}")

    if tree_text:
        c.showPage()
        y = H - 2 * cm
        c.setFont("Helvetica-Bold", 13)
        line("Pruned functional classification tree", 0.8 * cm)
        c.setFont("Courier", 9)
        for row in tree_text.splitlines():
            line(row, 0.42 * cm)

    if heatmap is not None:
        c.showPage()
        _heatmap_page(c, heatmap, payload.get("class_names", ["", "class 1"])[1])
    c.showPage()
    try:
        c.save()
    except OSError as e:
        raise IoError(f"cannot write {out_path}: {e}") from e
    return out_path
