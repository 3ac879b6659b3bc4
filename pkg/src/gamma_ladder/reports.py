"""Artifact emission: delimited tables, JSON summaries, and figures.

Every writer is deterministic: filenames are derived from claim labels,
JSON is dumped with sorted keys, and figures carry pinned metadata, so a
rerun with the same tables produces byte-identical files.  That property
is what lets the golden-run tests compare artifacts directly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import IoError
from .verify import ConvergenceTable

SCHEMA_VERSION = 1
FIGURE_DPI = 120
FIGURE_SIZE = (5.0, 3.4)
PNG_METADATA = {"Software": "gamma-ladder"}

# claim-prefix -> expansion term the table certifies
_TERM_PREFIXES = (
    ("point-recovery-", "leading"),
    ("saddle-recovery-", "order-1-over-n"),
    ("well-rate-scale", "scale"),
    ("mixture-recovery-scale", "scale"),
    ("mass-ratio-scale", "scale"),
    ("valley-fraction-scale", "scale"),
    ("valley-mass-scale", "scale"),
    ("well-relaxation-", "hypotheses"),
)


def _write_bytes(path: Path, payload: bytes) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_table_csv(table: ConvergenceTable, out_dir) -> Path:
    """One CSV per claim, named after it: `<claim>.csv`."""
    return _write_bytes(Path(out_dir) / f"{table.claim}.csv", table.to_csv().encode())


def write_json(payload: dict, path) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    return _write_bytes(Path(path), text.encode())


def render_table_figure(table: ConvergenceTable, out_dir) -> Path:
    """Value-vs-n plot with the target line, `<claim>.png`."""
    path = Path(out_dir) / f"{table.claim}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=FIGURE_SIZE, dpi=FIGURE_DPI)
    ns = table.ns
    axes[0].plot(ns, table.values, marker="o", color="tab:blue")
    target = table.targets[-1] if len(table.rows) else 0.0
    axes[0].axhline(target, linestyle="--", color="tab:gray", linewidth=1.0)
    axes[0].set_xscale("log")
    axes[0].set_xlabel("n")
    axes[0].set_ylabel("value")
    errs = table.rel_errors
    finite = [e for e in errs if math.isfinite(e) and e > 0.0]
    axes[1].plot(ns, errs, marker="s", color="tab:red")
    if len(finite) == len(errs) and finite:
        axes[1].set_yscale("log")
    axes[1].set_xscale("log")
    axes[1].set_xlabel("n")
    axes[1].set_ylabel("error")
    fig.suptitle(table.claim, fontsize=9)
    fig.tight_layout()
    try:
        fig.savefig(path, format="png", metadata=dict(PNG_METADATA))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


_KIND_MARKERS = {"minimum": ("v", "tab:blue"), "saddle": ("x", "tab:red"),
                 "maximum": ("^", "tab:gray"), "higher": ("^", "tab:gray")}


def render_landscape_figure(landscape, path) -> Path:
    """Potential with critical points: a curve in 1d, level sets in 2d."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=FIGURE_SIZE, dpi=FIGURE_DPI)
    potential = landscape.potential
    if potential.dim == 1:
        xs = np.linspace(0.0, 1.0, 513)
        ax.plot(xs, potential.value(xs[:, None]), color="tab:blue", linewidth=1.2)
        if landscape.wells.h is not None:
            ax.axhline(landscape.wells.h, linestyle=":", color="tab:gray", linewidth=0.8)
        for p in landscape.critical_points:
            marker, color = _KIND_MARKERS.get(p.kind, ("o", "k"))
            ax.plot([p.location[0]], [p.value], marker=marker, color=color, linestyle="none")
        ax.set_xlabel("x")
        ax.set_ylabel("F")
    else:
        xs = np.linspace(0.0, 1.0, 129)
        grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
        values = potential.value(grid).reshape(129, 129)
        cs = ax.contourf(xs, xs, values.T, levels=21, cmap="viridis")
        fig.colorbar(cs, ax=ax)
        for p in landscape.critical_points:
            marker, color = _KIND_MARKERS.get(p.kind, ("o", "k"))
            ax.plot([p.location[0]], [p.location[1]], marker=marker, color="white",
                    markeredgecolor=color, linestyle="none", markersize=5)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_aspect("equal")
    ax.set_title(potential.source, fontsize=8)
    fig.tight_layout()
    try:
        fig.savefig(path, format="png", metadata=dict(PNG_METADATA))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def _term_of(claim: str) -> tuple[str, int | None]:
    """Map a claim label onto its term in the expansion of the functional."""
    for prefix, term in _TERM_PREFIXES:
        if claim.startswith(prefix):
            if term != "scale":
                return term, None
            digits = ""
            for ch in claim[len(prefix):]:
                if not ch.isdigit():
                    break
                digits += ch
            return term, int(digits) if digits else None
    return "other", None


def _status(tables: list) -> str:
    verdicts = [t.verdict for t in tables if t.verdict is not None]
    if not verdicts:
        return "none"
    return "fail" if "fail" in verdicts else "pass"


def summary_dict(tables, meta: dict | None = None) -> dict:
    """Top-level summary mirroring the functional expansion, term by term.

    The expansion I_n = J + (1/n) J0 + sum_p (1/theta_p(n)) J_p is reported
    as one entry per term: the leading escape-cost term (point recoveries),
    the 1/n curvature term (saddle recoveries), and one entry per depth
    scale p (rates, mixtures, and mass splitting at that scale), plus the
    time-scale-separation hypothesis checks.  Each entry carries the claims
    that certify it and their aggregated verdict.
    """
    tables = list(tables)
    groups: dict = {"leading": [], "order-1-over-n": [], "hypotheses": [], "other": []}
    scales: dict = {}
    for t in tables:
        term, level = _term_of(t.claim)
        if term == "scale":
            scales.setdefault(level, []).append(t)
        else:
            groups[term].append(t)
    pass_count = sum(1 for t in tables if t.verdict == "pass")
    fail_count = sum(1 for t in tables if t.verdict == "fail")
    summary = {
        "schema_version": SCHEMA_VERSION,
        "expansion": {
            "leading": {
                "term": "J",
                "claims": sorted(t.claim for t in groups["leading"]),
                "status": _status(groups["leading"]),
            },
            "order_1_over_n": {
                "term": "(1/n) J0",
                "claims": sorted(t.claim for t in groups["order-1-over-n"]),
                "status": _status(groups["order-1-over-n"]),
            },
            "scales": [
                {
                    "level": p,
                    "term": f"(1/theta_{p}(n)) J_{p}",
                    "claims": sorted(t.claim for t in scales[p]),
                    "status": _status(scales[p]),
                }
                for p in sorted(scales)
            ],
            "hypotheses": {
                "claims": sorted(t.claim for t in groups["hypotheses"]),
                "status": _status(groups["hypotheses"]),
            },
        },
        "tables": {t.claim: t.to_json_dict() for t in tables},
        "counts": {
            "pass": pass_count,
            "fail": fail_count,
            "unjudged": len(tables) - pass_count - fail_count,
        },
        "verdict": "fail" if fail_count else ("pass" if pass_count else "none"),
    }
    if meta:
        summary["run"] = meta
    return summary


def emit_reports(tables, out_dir, meta: dict | None = None, figures: bool = True) -> list:
    """Write per-claim CSV + PNG pairs and the summary JSON; returns the paths.

    Tables are emitted in sorted claim order so directory listings (and the
    returned path list) are stable regardless of how the tables were
    assembled.
    """
    out = Path(out_dir)
    tables = sorted(tables, key=lambda t: t.claim)
    written = []
    for table in tables:
        written.append(write_table_csv(table, out))
        if figures:
            written.append(render_table_figure(table, out))
    written.append(write_json(summary_dict(tables, meta), out / "summary.json"))
    return written
