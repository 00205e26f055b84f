"""Result tables (markdown / csv / json) and figures for a finished run."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .dataset_io import StatsRow
from .metrics import STATUS_NA, STATUS_OK, STATUS_SKIPPED, MetricRow

FORMATS = ("markdown", "csv", "json")
CSV_COLUMNS = [f for f in MetricRow.__dataclass_fields__]


@dataclass(frozen=True)
class ErrorRow:
    dataset: str
    strategy: str
    model_id: str
    ns: int | None
    nc: int | None


@dataclass
class RunReport:
    rows: list[MetricRow] = field(default_factory=list)
    error_table: list[ErrorRow] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def row(self, dataset: str, strategy: str, model_id: str) -> MetricRow:
        for r in self.rows:
            if (r.dataset, r.strategy, r.model_id) == (dataset, strategy, model_id):
                return r
        raise KeyError((dataset, strategy, model_id))

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "error_table": [asdict(e) for e in self.error_table],
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(
            rows=[MetricRow(**r) for r in data.get("rows", [])],
            error_table=[ErrorRow(**e) for e in data.get("error_table", [])],
            manifest=dict(data.get("manifest", {})),
        )


def error_rows(rows: Iterable[MetricRow]) -> list[ErrorRow]:
    out = []
    for r in rows:
        if r.status == STATUS_OK:
            out.append(ErrorRow(r.dataset, r.strategy, r.model_id, r.ns_count, r.nc_count))
        else:
            out.append(ErrorRow(r.dataset, r.strategy, r.model_id, None, None))
    return out


# -- markdown -----------------------------------------------------------------

_CELL = {STATUS_NA: "N/A", STATUS_SKIPPED: "-"}


def _num(value: float | None, status: str, digits: int = 2) -> str:
    if status != STATUS_OK:
        return _CELL.get(status, status)
    return "" if value is None else f"{value:.{digits}f}"


def _p(value: float | None, status: str) -> str:
    if status != STATUS_OK:
        return _CELL.get(status, status)
    if value is None:
        return ""
    return "<0.001" if value < 0.001 else f"{value:.3f}"


def _table(header: Sequence[str], body: Iterable[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines)


METRIC_HEADER = ("Model", "Prompt", "accuracy", "similarity", "judge", "p vs zero", "n")
ERROR_HEADER = ("Model", "Prompt", "NS", "NC")


def _datasets(rows: Sequence) -> list[str]:
    seen: list[str] = []
    for r in rows:
        if r.dataset not in seen:
            seen.append(r.dataset)
    return seen


def render_markdown(report: RunReport) -> str:
    parts = ["## Explanation and detection metrics", ""]
    if not report.rows:
        parts += [_table(METRIC_HEADER, []), ""]
    for ds in _datasets(report.rows):
        body = [
            (
                r.model_id,
                r.strategy,
                _num(r.accuracy, r.status),
                _num(r.similarity, r.status),
                _num(r.judge, r.status),
                _p(r.p_vs_zero, r.status),
                str(r.n) if r.status == STATUS_OK else _CELL.get(r.status, ""),
            )
            for r in report.rows
            if r.dataset == ds
        ]
        parts += [f"### {ds}", "", _table(METRIC_HEADER, body), ""]

    parts += ["## Error analysis (NS = not sarcastic, NC = needs context)", ""]
    if not report.error_table:
        parts += [_table(ERROR_HEADER, []), ""]
    for ds in _datasets(report.error_table):
        body = [
            (
                e.model_id,
                e.strategy,
                "-" if e.ns is None else str(e.ns),
                "-" if e.nc is None else str(e.nc),
            )
            for e in report.error_table
            if e.dataset == ds
        ]
        parts += [f"### {ds}", "", _table(ERROR_HEADER, body), ""]
    return "\n".join(parts)


# -- csv / json -----------------------------------------------------------------

def render_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in report.rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                         for k, v in asdict(r).items()})
    return buf.getvalue()


def render_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_report_json(text: str) -> RunReport:
    return RunReport.from_dict(json.loads(text))


def render_report(report: RunReport, format: str = "markdown") -> str:
    fmt = {"md": "markdown"}.get(format, format)
    if fmt == "markdown":
        return render_markdown(report)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return render_json(report)
    raise ValueError(f"unknown report format {format!r}; choose from {FORMATS}")


# -- dataset statistics -----------------------------------------------------------

def render_stats(stats: Sequence[tuple[str, StatsRow]], format: str = "markdown") -> str:
    fmt = {"md": "markdown"}.get(format, format)
    if fmt == "markdown":
        body = [(name, str(s.n), f"{s.avg_text_words:.1f}", f"{s.avg_expl_words:.1f}") for name, s in stats]
        return _table(("Subset", "Samples", "Avg text words", "Avg expl. words"), body) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subset", "n", "avg_text_words", "avg_expl_words"])
        for name, s in stats:
            writer.writerow([name, s.n, repr(s.avg_text_words), repr(s.avg_expl_words)])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([{"subset": name, **asdict(s)} for name, s in stats], indent=2) + "\n"
    raise ValueError(f"unknown stats format {format!r}")


# -- figures ----------------------------------------------------------------------

def render_figures(report: RunReport, out_dir: str | Path) -> list[Path]:
    """Write ``metrics.png`` and ``errors.png``; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [r for r in report.rows if r.status == STATUS_OK]
    datasets = _datasets(report.rows)
    labels = sorted({(r.model_id, r.strategy) for r in rows}, key=lambda k: (k[0], _order(k[1])))
    written = []

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8), squeeze=False)
    width = 0.8 / max(1, len(labels))
    for ax, metric, top in zip(axes[0], ("accuracy", "similarity", "judge"), (1.0, 1.0, 5.0)):
        for k, (model, strategy) in enumerate(labels):
            xs, ys = [], []
            for i, ds in enumerate(datasets):
                match = [r for r in rows if (r.dataset, r.model_id, r.strategy) == (ds, model, strategy)]
                if match and getattr(match[0], metric) is not None:
                    xs.append(i + (k - (len(labels) - 1) / 2) * width)
                    ys.append(getattr(match[0], metric))
            ax.bar(xs, ys, width, label=f"{strategy} ({model})" if len({m for m, _ in labels}) > 1 else strategy)
        ax.set_xticks(range(len(datasets)))
        ax.set_xticklabels(datasets)
        ax.set_ylim(0, top)
        ax.set_title(metric)
    if labels:
        axes[0][-1].legend(fontsize="small", frameon=False)
    fig.tight_layout()
    path = out_dir / "metrics.png"
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    written.append(path)

    errs = [e for e in report.error_table if e.ns is not None]
    keys = sorted({(e.model_id, e.strategy) for e in errs}, key=lambda k: (k[0], _order(k[1])))
    fig, axes = plt.subplots(1, max(1, len(datasets)), figsize=(4 * max(1, len(datasets)), 3.5),
                             squeeze=False)
    for ax, ds in zip(axes[0], datasets):
        sub = {(e.model_id, e.strategy): e for e in errs if e.dataset == ds}
        names = [f"{s}" if len({m for m, _ in keys}) == 1 else f"{s}\n{m}" for m, s in keys]
        ns = [sub[k].ns if k in sub else 0 for k in keys]
        nc = [sub[k].nc if k in sub else 0 for k in keys]
        ax.bar(names, ns, label="NS")
        ax.bar(names, nc, bottom=ns, label="NC")
        ax.set_title(ds)
        ax.tick_params(axis="x", labelsize="small")
    if keys:
        axes[0][0].legend(frameon=False)
    fig.tight_layout()
    path = out_dir / "errors.png"
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    written.append(path)
    return written


_STRATEGY_ORDER = ("zero", "few", "origin", "kg", "pmp")


def _order(strategy: str) -> int:
    return _STRATEGY_ORDER.index(strategy) if strategy in _STRATEGY_ORDER else len(_STRATEGY_ORDER)
