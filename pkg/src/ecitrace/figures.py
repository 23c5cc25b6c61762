"""Report figures rendered next to the CSV output.

Two charts: the hallucination-gap view (per-class accuracy bars with the CHR
gap annotated) and a summary of CHR vs mean accuracy across reports.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import IoError
from .metrics import MetricsReport


def render_report_figures(reports: list[tuple[str, MetricsReport]], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create figure directory {out_dir}: {exc}") from exc
    if not reports:
        return []
    paths = [
        _accuracy_figure(reports, out_dir / "class_accuracy.png"),
        _gap_figure(reports, out_dir / "chr_summary.png"),
    ]
    return paths


def _accuracy_figure(reports, path: Path) -> Path:
    labels = [label for label, _r in reports]
    acc_c = [_pct(r.acc_causal) for _l, r in reports]
    acc_n = [_pct(r.acc_non_causal) for _l, r in reports]
    x = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(labels)), 4))
    ax.bar([i - width / 2 for i in x], acc_c, width, label="causal acc")
    ax.bar([i + width / 2 for i in x], acc_n, width, label="non-causal acc")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title("Per-class accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _gap_figure(reports, path: Path) -> Path:
    labels = [label for label, _r in reports]
    chrs = [_pct(r.chr) for _l, r in reports]
    maccs = [_pct(r.m_acc) for _l, r in reports]
    x = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(labels)), 4))
    ax.bar([i - width / 2 for i in x], chrs, width, label="hallucination gap")
    ax.bar([i + width / 2 for i in x], maccs, width, label="mean accuracy")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("percent")
    ax.legend()
    ax.set_title("Accuracy gap vs mean accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _pct(fraction: float | None) -> float:
    return 0.0 if fraction is None else fraction * 100.0
