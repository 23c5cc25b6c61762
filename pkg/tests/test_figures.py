"""Rendering checks for the report figures."""

import pytest

from ecitrace.errors import IoError
from ecitrace.figures import render_report_figures
from ecitrace.metrics import MetricsReport


def report(acc_causal, acc_non_causal, *, intervention=False) -> MetricsReport:
    gap = None
    mean = None
    if acc_causal is not None and acc_non_causal is not None:
        gap = acc_causal - acc_non_causal
        mean = (acc_causal + acc_non_causal) / 2
    return MetricsReport(
        n_causal=10,
        n_non_causal=10,
        acc_causal=acc_causal,
        acc_non_causal=acc_non_causal,
        chr=gap,
        m_acc=mean,
        fpr=None if acc_non_causal is None else 1 - acc_non_causal,
        tnr=acc_non_causal,
        mcc=0.0,
        unparseable_count=0,
        intervention=intervention,
    )


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_renders_one_file_per_figure(tmp_path):
    reports = [
        ("evaluation", report(0.9474, 0.1120)),
        ("robustness", report(0.25, 0.75, intervention=True)),
    ]
    paths = render_report_figures(reports, tmp_path / "figures")
    assert [p.name for p in paths] == ["class_accuracy.png", "chr_summary.png"]
    for p in paths:
        assert p.parent == tmp_path / "figures"
        data = p.read_bytes()
        assert data.startswith(PNG_MAGIC)
        assert len(data) > 1000


def test_handles_missing_class_accuracies(tmp_path):
    paths = render_report_figures([("evaluation", report(None, None))], tmp_path)
    assert len(paths) == 2
    for p in paths:
        assert p.read_bytes().startswith(PNG_MAGIC)


def test_no_reports_renders_nothing(tmp_path):
    assert render_report_figures([], tmp_path / "figures") == []
    assert list((tmp_path / "figures").glob("*.png")) == []


def test_unwritable_target_raises_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory", "utf-8")
    with pytest.raises(IoError):
        render_report_figures([("evaluation", report(0.5, 0.5))],
                              blocker / "figures")
