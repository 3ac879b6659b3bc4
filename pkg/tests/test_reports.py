"""Artifact writers: determinism, naming, and the summary schema."""

import json
import math

import pytest

from gamma_ladder.errors import IoError
from gamma_ladder.reports import (
    PNG_METADATA,
    SCHEMA_VERSION,
    emit_reports,
    render_landscape_figure,
    render_table_figure,
    summary_dict,
    write_json,
    write_table_csv,
)
from gamma_ladder.verify import ConvergenceTable

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def make_table(claim, rows, tolerance=None):
    t = ConvergenceTable(claim)
    for n, value, target in rows:
        t.add_row(n, value, target)
    if tolerance is not None:
        t.judge(tolerance)
    return t


def test_write_table_csv_names_the_file_after_the_claim(tmp_path):
    t = make_table("demo-claim", [(100, 1.5, 1.0)])
    path = write_table_csv(t, tmp_path)
    assert path == tmp_path / "demo-claim.csv"
    assert path.read_text() == t.to_csv()


def test_write_json_is_sorted_and_newline_terminated(tmp_path):
    path = write_json({"b": 1, "a": [1, 2]}, tmp_path / "sub" / "x.json")
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    assert json.loads(text) == {"a": [1, 2], "b": 1}


def test_table_figure_is_png_with_pinned_metadata(tmp_path):
    t = make_table("demo-claim", [(100, 1.5, 1.0), (200, 1.25, 1.0)])
    path = render_table_figure(t, tmp_path)
    assert path == tmp_path / "demo-claim.png"
    payload = path.read_bytes()
    assert payload.startswith(PNG_MAGIC)
    assert PNG_METADATA["Software"].encode() in payload
    assert len(payload) > 1000


def test_figures_are_byte_identical_across_runs(tmp_path):
    t = make_table("demo-claim", [(100, 1.5, 1.0), (200, 1.25, 1.0)])
    first = render_table_figure(t, tmp_path / "a").read_bytes()
    second = render_table_figure(t, tmp_path / "b").read_bytes()
    assert first == second


def test_figure_handles_non_positive_errors(tmp_path):
    # zero error rows force the error panel off the log scale
    t = make_table("demo-claim", [(100, 1.0, 1.0), (200, 1.0, 1.0)])
    assert render_table_figure(t, tmp_path).read_bytes().startswith(PNG_MAGIC)


def test_landscape_figures_render_in_both_dimensions(tmp_path, double_well, two_dim_well):
    one = render_landscape_figure(double_well, tmp_path / "one.png")
    two = render_landscape_figure(two_dim_well, tmp_path / "two.png")
    assert one.read_bytes().startswith(PNG_MAGIC)
    assert two.read_bytes().startswith(PNG_MAGIC)


def test_writers_wrap_os_errors(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    t = make_table("demo-claim", [(100, 1.5, 1.0)])
    with pytest.raises(IoError, match="cannot write"):
        write_table_csv(t, blocker / "nested")
    with pytest.raises(IoError, match="cannot write"):
        write_json({}, blocker / "nested" / "x.json")


def test_emit_reports_writes_sorted_pairs_and_summary(tmp_path):
    tables = [
        make_table("valley-mass-scale1", [(100, 1.0, 1.0)], tolerance=1e-3),
        make_table("point-recovery-0p25", [(100, 20.0, 21.0)], tolerance=0.1),
    ]
    written = emit_reports(tables, tmp_path)
    names = [p.name for p in written]
    assert names == [
        "point-recovery-0p25.csv",
        "point-recovery-0p25.png",
        "valley-mass-scale1.csv",
        "valley-mass-scale1.png",
        "summary.json",
    ]
    assert all(p.exists() for p in written)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["verdict"] == "pass"

    bare = emit_reports(tables, tmp_path / "bare", figures=False)
    assert [p.name for p in bare] == [
        "point-recovery-0p25.csv",
        "valley-mass-scale1.csv",
        "summary.json",
    ]


def test_summary_mirrors_the_expansion_term_by_term():
    tables = [
        make_table("point-recovery-0p25", [(100, 20.0, 21.0)], tolerance=0.1),
        make_table("saddle-recovery-0p5", [(100, 80.0, 78.0)], tolerance=0.15),
        make_table("well-rate-scale1-2-to-1", [(100, 24.0, 23.7)], tolerance=0.1),
        make_table("mixture-recovery-scale1", [(100, 12.0, 11.9)], tolerance=0.15),
        make_table("valley-mass-scale1", [(100, 1.0, 1.0)], tolerance=1e-3),
        make_table("mass-ratio-scale2-valley1-well1", [(100, 1.0, 1.0)], tolerance=1e-6),
        make_table("valley-fraction-scale2-valley1", [(100, 0.7, 0.5)], tolerance=1e-6),
        make_table("well-relaxation-over-crossing-scale", [(100, 1e-9, 0.0)], tolerance=1e-2),
        make_table("uncharted-claim", [(100, 1.0, 1.0)]),  # never judged
    ]
    summary = summary_dict(tables, meta={"potential": "double-well"})
    exp = summary["expansion"]
    assert exp["leading"] == {
        "term": "J",
        "claims": ["point-recovery-0p25"],
        "status": "pass",
    }
    assert exp["order_1_over_n"]["term"] == "(1/n) J0"
    assert exp["order_1_over_n"]["claims"] == ["saddle-recovery-0p5"]
    assert [s["level"] for s in exp["scales"]] == [1, 2]
    assert exp["scales"][0]["term"] == "(1/theta_1(n)) J_1"
    assert exp["scales"][0]["claims"] == [
        "mixture-recovery-scale1",
        "valley-mass-scale1",
        "well-rate-scale1-2-to-1",
    ]
    assert exp["scales"][0]["status"] == "pass"
    assert exp["scales"][1]["claims"] == [
        "mass-ratio-scale2-valley1-well1",
        "valley-fraction-scale2-valley1",
    ]
    assert exp["scales"][1]["status"] == "fail"  # the 0.7 fraction misses 0.5
    assert exp["hypotheses"]["claims"] == ["well-relaxation-over-crossing-scale"]
    assert exp["hypotheses"]["status"] == "pass"
    assert set(summary["tables"]) == {t.claim for t in tables}
    assert summary["counts"] == {"pass": 7, "fail": 1, "unjudged": 1}
    assert summary["verdict"] == "fail"
    assert summary["run"] == {"potential": "double-well"}


def test_summary_without_judged_tables_is_none():
    t = make_table("point-recovery-0p25", [(100, 20.0, 21.0)])
    summary = summary_dict([t])
    assert summary["expansion"]["leading"]["status"] == "none"
    assert summary["verdict"] == "none"
    assert summary["counts"] == {"pass": 0, "fail": 0, "unjudged": 1}
    assert "run" not in summary


def test_summary_serializes_non_finite_fit_fields():
    t = make_table("valley-mass-scale1", [(100, 1.0, 1.0), (200, 1.0, 1.0), (400, 1.0, 1.0)])
    t.fit = {"model": "exact", "exponent": -math.inf, "sse": 0.0, "limit": 1.0, "decreasing": True}
    summary = summary_dict([t])
    assert summary["tables"]["valley-mass-scale1"]["fit"]["exponent"] == "-inf"
    # and the whole summary stays JSON-safe
    json.dumps(summary)
