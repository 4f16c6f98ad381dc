import xml.etree.ElementTree as ET

import pytest

from frfx.errors import InvalidSpec, IoError
from frfx.explain import (
    BubblePlotData,
    BubblePoint,
    HeatmapGrid,
    bubble_data,
    compute_fpcph,
    compute_fpdp,
    eigenfunction_curves,
    fpc_variation,
    fpdp_all,
    importance_table,
    reconstruction_bands,
    scores_by_class,
    smoothed_curves,
)
from frfx.render import (
    WINDOW_COLORS,
    PlotSpec,
    comparison_spec,
    heat_color,
    render_svg,
    spec_for,
    svg_string,
)

SVG = "{http://www.w3.org/2000/svg}"


def _parse(text: str) -> ET.Element:
    root = ET.fromstring(text.encode("utf-8"))
    assert root.tag == SVG + "svg"
    return root


def _ids(root: ET.Element, prefix: str):
    return [el.get("id") for el in root.iter() if (el.get("id") or "").startswith(prefix)]


def _group_text(root: ET.Element, gid: str) -> str:
    el = root.find(f".//*[@id='{gid}']")
    assert el is not None, gid
    return ET.tostring(el, encoding="unicode")


@pytest.fixture
def table(forest, fpca, dataset):
    return importance_table(forest, fpca, fpca.scores, dataset.labels, repeats=2)


class TestHeatColor:
    def test_scale_points(self):
        assert heat_color(0.0) == "#1a9850"
        assert heat_color(0.5) == "#ffffbf"
        assert heat_color(1.0) == "#d73027"

    def test_clamped(self):
        assert heat_color(-3.0) == heat_color(0.0)
        assert heat_color(7.0) == heat_color(1.0)


class TestBubble:
    def test_one_bubble_per_fpc_and_two_dashed_median_lines(self):
        points = [
            BubblePoint(fpc_index=k, external=e, internal=i, size=s, quadrant="minor")
            for k, (e, i, s) in enumerate([(0.1, 0.2, 0.4), (0.5, 0.1, 0.3), (0.3, 0.4, 0.2), (0.2, 0.3, 0.1)])
        ]
        bd = BubblePlotData(points=points, median_internal=0.25, median_external=0.25)
        root = _parse(svg_string(spec_for(bd)))
        assert sorted(_ids(root, "bubble-")) == [f"bubble-FPC{k}" for k in (1, 2, 3, 4)]
        for gid in ("median-external", "median-internal"):
            assert "stroke-dasharray" in _group_text(root, gid)

    def test_from_importance(self, table):
        root = _parse(svg_string(spec_for(bubble_data(table))))
        assert len(_ids(root, "bubble-")) == len(table.rows)


class TestHeatmap:
    def test_cells_use_the_diverging_scale(self):
        hm = HeatmapGrid(
            fpc_indices=[0, 1],
            score_grids=[[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0]],
            probabilities=[[0.0, 0.5, 1.0], [0.5, 0.5, 0.5]],
            column_means=[0.0, 0.0],
        )
        root = _parse(svg_string(spec_for(hm)))
        assert sorted(_ids(root, "heatmap-")) == ["heatmap-FPC1", "heatmap-FPC2"]
        first = _group_text(root, "heatmap-FPC1")
        for color in ("#1a9850", "#ffffbf", "#d73027"):
            assert color in first
        assert "#d73027" not in _group_text(root, "heatmap-FPC2")

    def test_one_column_per_fpc(self, forest, fpca):
        hm = compute_fpcph(forest, fpca.scores, grid_size=5)
        root = _parse(svg_string(spec_for(hm)))
        assert len(_ids(root, "heatmap-FPC")) == fpca.n_components


class TestCurves:
    def test_eigenfunctions_legend_carries_variance_shares(self, fpca):
        cs = eigenfunction_curves(fpca)
        text = svg_string(spec_for(cs))
        root = _parse(text)
        assert len(_ids(root, "curve-")) == fpca.n_components
        for name in cs.names:
            assert name in text

    def test_smoothed_curves_by_class(self, smoothed, dataset):
        root = _parse(svg_string(spec_for(smoothed_curves(smoothed), class_names=("Healthy", "Diseased"))))
        assert len(_ids(root, "curve-")) == dataset.n_curves
        legend = "".join(el.text or "" for el in root.iter(f"{SVG}text"))
        assert "Healthy" in legend and "Diseased" in legend


class TestComparison:
    def test_pdp_windows_match_band_colours(self, forest, fpca):
        pdps = [compute_fpdp(forest, fpca.scores, k, grid_size=8) for k in range(2)]
        bands = [reconstruction_bands(fpca, k=k, n_windows=4) for k in range(fpca.n_components)]
        spec = comparison_spec(pdps, bands)
        assert [p.fpc_index for p, _ in spec.data] == [0, 1]
        root = _parse(svg_string(spec))
        for k in (1, 2):
            for w, color in enumerate(WINDOW_COLORS):
                assert color in _group_text(root, f"window-FPC{k}-w{w}")
                assert color in _group_text(root, f"band-FPC{k}-w{w}")

    def test_mismatched_pair(self, forest, fpca):
        pdp = compute_fpdp(forest, fpca.scores, 0, grid_size=5)
        with pytest.raises(InvalidSpec):
            svg_string(PlotSpec(kind="comparison", data=[(pdp, reconstruction_bands(fpca, k=1))]))

    def test_nothing_to_pair(self, forest, fpca):
        pdp = compute_fpdp(forest, fpca.scores, 0, grid_size=5)
        with pytest.raises(InvalidSpec):
            comparison_spec([pdp], [reconstruction_bands(fpca, k=2)])


class TestEveryKind:
    def test_all_kinds_render_well_formed(self, forest, fpca, dataset, smoothed, table):
        artifacts = [
            fpdp_all(forest, fpca.scores, grid_size=6),
            compute_fpcph(forest, fpca.scores, grid_size=6),
            table,
            scores_by_class(fpca.scores, dataset.labels, fpc_indices=[0, 1]),
            bubble_data(table),
            [reconstruction_bands(fpca, k=k) for k in range(2)],
            [fpc_variation(fpca, k) for k in range(2)],
            eigenfunction_curves(fpca),
            smoothed_curves(smoothed),
        ]
        kinds = set()
        for artifact in artifacts:
            spec = spec_for(artifact, title="A & B <test>")
            kinds.add(spec.kind)
            _parse(svg_string(spec))
        spec = comparison_spec(artifacts[0], artifacts[5], title="A & B <test>")
        kinds.add(spec.kind)
        _parse(svg_string(spec))
        assert kinds == {"line-grid", "heatmap", "bar", "violin", "bubble", "band", "curves", "comparison"}

    def test_deterministic(self, forest, fpca, tmp_path):
        spec = spec_for(fpdp_all(forest, fpca.scores, grid_size=6))
        a = render_svg(spec, str(tmp_path / "a.svg"))
        b = render_svg(spec, str(tmp_path / "b.svg"))
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_no_date_stamp(self, table):
        assert "<dc:date>" not in svg_string(spec_for(table))


class TestInvalid:
    def test_data_does_not_match_kind(self, table):
        with pytest.raises(InvalidSpec):
            svg_string(PlotSpec(kind="heatmap", data=table))

    def test_list_for_single_artifact_kind(self, table):
        with pytest.raises(InvalidSpec):
            svg_string(PlotSpec(kind="bar", data=[table]))

    def test_unknown_metric(self, table):
        with pytest.raises(InvalidSpec):
            svg_string(PlotSpec(kind="bar", data=table, metrics=["gain"]))

    def test_empty_bubble(self):
        with pytest.raises(InvalidSpec):
            svg_string(PlotSpec(kind="bubble", data=BubblePlotData(points=[], median_internal=0, median_external=0)))

    def test_no_figure_for_type(self):
        with pytest.raises(InvalidSpec):
            spec_for({"kind": "pdp"})

    def test_unwritable_path(self, table, tmp_path):
        (tmp_path / "f").write_text("")
        with pytest.raises(IoError):
            render_svg(spec_for(table), str(tmp_path / "f" / "x.svg"))
