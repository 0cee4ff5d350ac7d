"""Run reports: per-iteration CSV, text summary, learning-curve CSV and SVG plots."""

import csv
import io
import logging
import pathlib
from dataclasses import dataclass, field

from safedagger.evaluation import EvalReport

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "iteration", "dataset_size", "train_size", "valid_size", "collected", "selected",
    "selection_fraction", "collection_takeover_fraction", "iteration_label_queries",
    "iteration_takeover_queries", "label_queries", "takeover_queries", "tau", "safe_fraction",
    "safety_examples", "safety_accuracy", "primary_epochs", "primary_best_epoch", "lr_drops",
    "primary_valid_loss", "valid_steer_mse",
)
EVAL_FIELDS = ("avg_laps", "damage_per_lap", "steering_mse", "takeover_fraction")
CURVE_COLUMNS = ("iteration", "strategy", "traffic") + EVAL_FIELDS


@dataclass
class IterationRecord:
    iteration: int
    dataset_size: int = 0
    train_size: int = 0
    valid_size: int = 0
    collected: int = 0
    selected: int = 0
    selection_fraction: float | None = None
    collection_takeover_fraction: float | None = None
    iteration_label_queries: int = 0
    iteration_takeover_queries: int = 0
    label_queries: int = 0
    takeover_queries: int = 0
    tau: float | None = None
    safe_fraction: float | None = None
    safety_examples: int = 0
    safety_accuracy: float | None = None
    primary_epochs: int = 0
    primary_best_epoch: int = -1
    lr_drops: int = 0
    primary_valid_loss: float | None = None
    valid_steer_mse: float | None = None
    evals: dict[tuple[str, int], EvalReport] = field(default_factory=dict)


@dataclass
class RunReport:
    regime: str
    seed: int
    records: list[IterationRecord] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)
    eval_takeover_queries: int = 0
    eval_metric_queries: int = 0

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def label_queries(self) -> int:
        return self.final.label_queries if self.records else 0

    @property
    def takeover_queries(self) -> int:
        return self.final.takeover_queries if self.records else 0

    def eval_keys(self) -> list[tuple[str, int]]:
        keys = []
        for rec in self.records:
            for k in rec.evals:
                if k not in keys:
                    keys.append(k)
        return keys

    def columns(self) -> list[str]:
        cols = list(REPORT_COLUMNS)
        for strategy, traffic in self.eval_keys():
            cols += [f"{strategy}_traffic{traffic}_{f}" for f in EVAL_FIELDS]
        return cols

    def rows(self) -> list[list[str]]:
        keys = self.eval_keys()
        out = []
        for rec in self.records:
            row = [fmt(getattr(rec, c)) for c in REPORT_COLUMNS]
            for k in keys:
                ev = rec.evals.get(k)
                row += [fmt(getattr(ev, f)) if ev is not None else "" for f in EVAL_FIELDS]
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        w.writerows(self.rows())
        return buf.getvalue()

    def write_csv(self, path: pathlib.Path | str) -> None:
        pathlib.Path(path).write_text(self.to_csv())

    def summary_text(self) -> str:
        lines = [f"regime: {self.regime}", f"seed: {self.seed}"]
        for k, v in sorted(self.metadata.items()):
            lines.append(f"{k}: {v}")
        lines.append(f"iterations: {len(self.records)}")
        lines.append(f"label queries: {self.label_queries}")
        lines.append(f"takeover queries (collection): {self.takeover_queries}")
        lines.append(f"takeover queries (evaluation): {self.eval_takeover_queries}")
        lines.append(f"metric queries (evaluation): {self.eval_metric_queries}")
        lines.append("")
        for rec in self.records:
            line = (f"iter {rec.iteration}: |D|={rec.dataset_size} labeled {rec.iteration_label_queries} "
                    f"takeover {rec.iteration_takeover_queries}")
            if rec.selection_fraction is not None:
                line += f" selected {rec.selection_fraction:.1%}"
            if rec.safety_accuracy is not None:
                line += f" safety-acc {rec.safety_accuracy:.3f}"
            if rec.valid_steer_mse is not None:
                line += f" valid-steer-mse {rec.valid_steer_mse:.5f}"
            lines.append(line)
            for (strategy, traffic), ev in rec.evals.items():
                mse = "n/a" if ev.steering_mse is None else f"{ev.steering_mse:.5f}"
                lines.append(f"    {strategy:<5} traffic={traffic:<3} laps {ev.avg_laps:.2f} "
                             f"damage/lap {ev.damage_per_lap:.2f} steer-mse {mse} "
                             f"takeover {ev.takeover_fraction:.1%}")
        return "\n".join(lines) + "\n"


def fmt(value) -> str:
    """Deterministic CSV cell; None becomes an empty cell."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".10g")
    if isinstance(value, (list, tuple)):
        return str(len(value))
    return str(value)


def curve_rows(report: RunReport) -> list[list[str]]:
    rows = []
    for rec in report.records:
        for (strategy, traffic), ev in rec.evals.items():
            rows.append([str(rec.iteration), strategy, str(traffic)]
                        + [fmt(getattr(ev, f)) for f in EVAL_FIELDS])
    return rows


def summarize_run(report: RunReport, out_dir: pathlib.Path | str) -> list[pathlib.Path]:
    """Write curves.csv plus learning_curves.svg and takeover.svg."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not report.records:
        raise ValueError("summarize_run needs at least one iteration")
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = out_dir / "curves.csv"
    with open(curves, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        w.writerows(curve_rows(report))

    keys = report.eval_keys()
    panels = [("avg_laps", "average laps"), ("damage_per_lap", "damage per lap"),
              ("steering_mse", "steering MSE")]
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2))
    for ax, (metric, title) in zip(axes, panels):
        for key in keys:
            xs, ys = _series(report, key, metric)
            if xs:
                ax.plot(xs, ys, marker="o", label=f"{key[0]}, traffic {key[1]}")
        ax.set_title(title)
        ax.set_xlabel("iteration")
    if keys:
        axes[0].legend(fontsize="small")
    fig.suptitle(f"{report.regime} (seed {report.seed})")
    fig.tight_layout()
    learning = out_dir / "learning_curves.svg"
    fig.savefig(learning, format="svg", metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4, 3.2))
    for key in keys:
        if key[0] != "safe":
            continue
        xs, ys = _series(report, key, "takeover_fraction")
        ax.plot(xs, ys, marker="o", label=f"traffic {key[1]}")
    xs = [r.iteration for r in report.records if r.collection_takeover_fraction is not None]
    ys = [r.collection_takeover_fraction for r in report.records if r.collection_takeover_fraction is not None]
    if xs:
        ax.plot(xs, ys, marker="s", linestyle="--", label="collection")
    ax.set_title("portion driven by the reference")
    ax.set_xlabel("iteration")
    ax.set_ylim(0, 1)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="small")
    fig.tight_layout()
    takeover = out_dir / "takeover.svg"
    fig.savefig(takeover, format="svg", metadata={"Date": None})
    plt.close(fig)
    log.info("wrote curves to %s", out_dir)
    return [curves, learning, takeover]


def _series(report: RunReport, key, metric):
    xs, ys = [], []
    for rec in report.records:
        ev = rec.evals.get(key)
        value = getattr(ev, metric) if ev is not None else None
        if value is not None:
            xs.append(rec.iteration)
            ys.append(value)
    return xs, ys


EVAL_COLUMNS = ("strategy", "traffic", "track", "laps", "damage", "damage_per_lap", "steps",
                "primary_steps", "reference_steps", "steering_mse", "takeover_fraction", "status")


def eval_rows(reports: list[EvalReport]) -> list[list[str]]:
    """Per-track rows followed by an 'all' row for each report."""
    rows = []
    for ev in reports:
        for r in ev.per_track:
            mse = r.steer_sq_error / r.primary_steps if r.primary_steps else None
            takeover = r.reference_steps / r.steps if r.steps else 0.0
            rows.append([ev.strategy, str(ev.traffic), r.track_id, fmt(r.laps), str(r.damage),
                         fmt(r.damage_per_lap), str(r.steps), str(r.primary_steps),
                         str(r.reference_steps), fmt(mse), fmt(takeover), r.status])
        rows.append([ev.strategy, str(ev.traffic), "all", fmt(ev.avg_laps),
                     str(sum(r.damage for r in ev.per_track)), fmt(ev.damage_per_lap),
                     str(sum(r.steps for r in ev.per_track)),
                     str(sum(r.primary_steps for r in ev.per_track)),
                     str(sum(r.reference_steps for r in ev.per_track)),
                     fmt(ev.steering_mse), fmt(ev.takeover_fraction), ""])
    return rows


def write_eval_csv(reports: list[EvalReport], path: pathlib.Path | str) -> None:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        w.writerows(eval_rows(reports))
