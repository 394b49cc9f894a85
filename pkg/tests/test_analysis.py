import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pypelab.analysis import (
    CSV_HEADER,
    AnchorMetrics,
    anchor_count,
    attention_entropy,
    heatmap_pixels,
    layer_report,
    metrics_from_csv,
    metrics_to_csv,
    read_pgm,
    render_heatmap,
    topk_mass,
    visual_key_distribution,
)
from pypelab.decoder import AttentionRecord
from pypelab.grid import RasterScan, build_grid
from pypelab.layout import SequenceLayout


def test_topk_mass():
    assert topk_mass(np.full(10, 0.1), 3) == pytest.approx(0.3)
    assert topk_mass(np.eye(4)[2], 1) == 1.0
    assert topk_mass([0.5, 0.3, 0.2], 2) == pytest.approx(0.8)
    for k in (0, 4):
        with pytest.raises(ValueError):
            topk_mass([0.5, 0.3, 0.2], k)


def test_entropy():
    assert attention_entropy(np.full(7, 1 / 7)) == pytest.approx(math.log(7), abs=1e-12)
    assert attention_entropy([0, 0, 1.0, 0]) == 0.0
    assert attention_entropy([0.5, 0.5, 0, 0]) == pytest.approx(math.log(2), abs=1e-12)


def test_anchor_count():
    assert anchor_count(np.full(16, 1 / 16), 5) == 0
    planted = np.full(16, 0.1 / 15)
    planted[4] = 0.9
    assert anchor_count(planted, 5) == 1
    two = np.full(16, 0.2 / 14)
    two[[1, 9]] = 0.4
    assert anchor_count(two, 5) == 2


def test_heatmap_pixels():
    assert heatmap_pixels([[0, 1], [1, 0]]).tolist() == [[0, 255], [255, 0]]
    assert heatmap_pixels(np.zeros((2, 2))).tolist() == [[0, 0], [0, 0]]
    assert heatmap_pixels([[0.25, 0.5], [0.75, 1.0]]).tolist() == [[64, 128], [191, 255]]
    with pytest.raises(ValueError):
        heatmap_pixels([[np.nan, 1.0]])


def test_render_heatmap_format(tmp_path):
    path = render_heatmap([[0.25, 0.5, 0.0], [0.75, 1.0, 0.5]], tmp_path / "h.pgm")
    lines = path.read_text().splitlines()
    assert lines[:3] == ["P2", "3 2", "255"]
    assert lines[3:] == ["64 128 0", "191 255 128"]
    assert read_pgm(path).tolist() == [[64, 128, 0], [191, 255, 128]]


def test_render_heatmap_unwritable(tmp_path):
    with pytest.raises(OSError):
        render_heatmap([[1.0]], tmp_path / "missing" / "h.pgm")


def _uniform_records(layout, layers=1, heads=2):
    n = layout.total_len
    probs = np.tril(np.ones((n, n)))
    probs /= probs.sum(axis=1, keepdims=True)
    # instruction rows uniform over visual keys only
    probs[layout.instruction_slice] = 0
    probs[layout.instruction_slice, layout.visual_slice] = 1 / layout.num_visual
    return [AttentionRecord(l, h, probs) for l in range(1, layers + 1) for h in range(heads)]


def test_layer_report_uniform():
    layout = SequenceLayout(1, build_grid(RasterScan(), 3, 4), 2)
    (m,) = layer_report(_uniform_records(layout), layout)
    assert m.entropy == pytest.approx(math.log(12), abs=1e-9)
    assert m.anchor_count == 0
    assert m.topk_mass == pytest.approx(5 / 12)


def test_layer_report_planted():
    layout = SequenceLayout(0, build_grid(RasterScan(), 4, 4), 2)
    n = layout.total_len
    records = []
    for layer, plants in [(1, [3]), (2, [0, 9]), (3, [])]:
        probs = np.zeros((n, n))
        probs[:16, :16] = np.tril(np.ones((16, 16)))
        probs[:16] /= probs[:16].sum(axis=1, keepdims=True)
        row = np.full(16, 1 / 16)
        if plants:
            row = np.full(16, (1 - 0.4 * len(plants)) / (16 - len(plants)))
            row[plants] = 0.4
        probs[16:, :16] = row
        records += [AttentionRecord(layer, h, probs) for h in range(2)]
    metrics = layer_report(records, layout)
    assert [m.anchor_count for m in metrics] == [1, 2, 0]


def test_layer_report_without_instruction_uses_visual_queries():
    layout = SequenceLayout(0, build_grid(RasterScan(), 2, 2), 0)
    probs = np.tril(np.ones((4, 4)))
    probs /= probs.sum(axis=1, keepdims=True)
    dist = visual_key_distribution(probs, layout)
    assert dist.sum() == pytest.approx(1.0)
    assert dist[0] > dist[-1]


def test_layer_report_empty():
    with pytest.raises(ValueError):
        layer_report([], SequenceLayout(0, build_grid(RasterScan(), 2, 2), 1))


def test_metrics_csv_round_trip():
    ms = [AnchorMetrics(1, 0.123456, 2.5, 3), AnchorMetrics(2, 1.0, 0.0, 0)]
    text = metrics_to_csv(ms)
    assert text.splitlines()[0] == CSV_HEADER
    assert text.splitlines()[1] == "1,0.123456,2.500000,3"
    assert metrics_from_csv(text) == ms
    with pytest.raises(ValueError):
        metrics_from_csv("layer,mass\n1,2\n")


probs = st.lists(st.floats(0, 1), min_size=1, max_size=30).filter(lambda v: sum(v) > 1e-6)


@given(probs, st.randoms())
def test_metric_properties(raw, random):
    p = np.array(raw) / sum(raw)
    masses = [topk_mass(p, k) for k in range(1, p.size + 1)]
    assert all(b >= a - 1e-15 for a, b in zip(masses, masses[1:]))
    assert masses[-1] == pytest.approx(1.0, abs=1e-9)
    h = attention_entropy(p)
    assert -1e-12 <= h <= math.log(p.size) + 1e-9
    shuffled = p.copy()
    random.shuffle(shuffled)
    assert attention_entropy(shuffled) == pytest.approx(h, abs=1e-12)
    counts = [anchor_count(p, m) for m in (1.5, 2, 3, 5, 10)]
    assert counts == sorted(counts, reverse=True)


@given(st.lists(st.lists(st.floats(0, 1e6), min_size=3, max_size=3), min_size=1, max_size=6))
def test_pgm_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("pgm") / "h.pgm"
    render_heatmap(rows, path)
    assert np.array_equal(read_pgm(path), heatmap_pixels(rows))
