"""Per-subject CSV, mean ± sd text tables and figures for experiment reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import atomic_write_text
from .metrics import METRICS, TISSUES, MetricsRecord, format_value

ROW_LABELS = {"dice": "DICE", "jaccard": "Jaccard Index", "pearson": "Pearson",
              "spearman": "Spearman", "hausdorff": "HD", "mse": "MSE"}
TABLE_METRIC_ORDER = ("dice", "jaccard", "pearson", "spearman", "hausdorff", "mse")
TISSUE_LABELS = {"GM": "Gray Matter", "WM": "White Matter", "CSF": "CSF"}
METHOD_LABELS = {"tabs": "TABS", "resunet": "ResUnet", "unet_se": "Unet-SE", "unet": "Unet",
                 "ground_truth": "Ground truth"}
REPORT_COLUMNS = ("project", "method", "subject", "tissue") + METRICS + ("mask_voxels",)


@dataclass
class SubjectRow:
    project: str
    method: str
    subject: str
    record: MetricsRecord


def mean_sd(values: list[float]) -> tuple[float | None, float | None, int]:
    """Mean and sample standard deviation (ddof=1; 0 for a single value), skipping missing."""
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return None, None, 0
    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return float(np.mean(vals)), sd, int(vals.size)


def format_cell(mean: float | None, sd: float | None) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.3f} ± {sd:.3f}"


@dataclass
class Report:
    kind: str
    rows: list[SubjectRow]
    methods: list[str]
    histories: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def projects(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.project, None)
        return list(seen)

    def summary(self) -> dict[tuple[str, str, str, str], tuple[float | None, float | None, int]]:
        out = {}
        for project in self.projects:
            for method in self.methods:
                recs = [r.record for r in self.rows if r.project == project and r.method == method]
                for tissue in TISSUES:
                    for metric in METRICS:
                        out[(project, method, tissue, metric)] = mean_sd(
                            [rec.get(tissue, metric) for rec in recs])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            for tissue in TISSUES:
                w.writerow([r.project, r.method, r.subject, tissue]
                           + [format_value(r.record.get(tissue, m)) for m in METRICS]
                           + [r.record.mask_voxel_count])
        return buf.getvalue()

    def render_table(self) -> str:
        """Tab-separated table: one row per project x metric, columns method x tissue."""
        summary = self.summary()
        head1 = ["Project", "Metrics"]
        head2 = ["", ""]
        for m in self.methods:
            head1 += [METHOD_LABELS.get(m, m), "", ""]
            head2 += [TISSUE_LABELS[t] for t in TISSUES]
        lines = ["\t".join(head1), "\t".join(head2)]
        for project in self.projects:
            for i, metric in enumerate(TABLE_METRIC_ORDER):
                cells = [project if i == 0 else "", ROW_LABELS[metric]]
                for m in self.methods:
                    for t in TISSUES:
                        mean, sd, _ = summary[(project, m, t, metric)]
                        cells.append(format_cell(mean, sd))
                lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, prefix) -> list[Path]:
        """Write ``<prefix>.csv``, ``<prefix>.txt`` and figures; return the paths."""
        from . import plotting

        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        paths = [prefix.with_name(prefix.name + ".csv"), prefix.with_name(prefix.name + ".txt"),
                 prefix.with_name(prefix.name + "_dice.png")]
        atomic_write_text(paths[0], self.to_csv())
        atomic_write_text(paths[1], self.render_table())
        plotting.metric_bars(self.summary(), self.projects, self.methods, list(TISSUES), "dice",
                             {**METHOD_LABELS, "dice": "DICE"}, paths[2])
        if self.histories:
            curve = prefix.with_name(prefix.name + "_training.png")
            plotting.loss_curves(self.histories, METHOD_LABELS, curve)
            paths.append(curve)
        return paths


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for h in history:
        w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])
    return buf.getvalue()


def write_history(history: list[dict], path) -> None:
    atomic_write_text(path, history_csv(history))
