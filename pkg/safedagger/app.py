"""App: central object that wires the runs directory, run plans and on-disk artifacts."""

import csv
import datetime
import hashlib
import logging
import math
import pathlib

from safedagger import __version__
from safedagger.config import format_settings, get_runs_dir, parse_settings
from safedagger.errors import ConfigError, ModelFormatError
from safedagger.perception import OBS_SIZE

log = logging.getLogger(__name__)

PARTIAL_MARKER = "PARTIAL"
COMPARE_COLUMNS = ("run", "regime", "seed", "iterations", "label_queries",
                   "bootstrap_label_queries", "iteration_label_queries", "takeover_queries")


class App:
    """Holds the shared state of one safedagger invocation.

    Usage:
        app = App(out_dir="runs")
        plan, text = load_plan("desk")
        result, run_dir = app.run("safedagger", plan, text)
        app.compare([run_dir, other_dir])

    For testing:
        app = App(out_dir=tmp_path)
    """

    def __init__(self, out_dir: pathlib.Path | str | None = None, threads: int | None = None):
        self.runs_dir = get_runs_dir(out_dir)
        self.threads = threads

    def _apply_threads(self, plan):
        if self.threads:
            return plan.model_copy(update={"eval": plan.eval.model_copy(update={"workers": self.threads})})
        return plan

    def input_hash(self, regime: str, plan, config_text: str) -> str:
        """sha256 over everything that determines a run's output."""
        from safedagger.track import format_track_spec, resolve_tracks

        h = hashlib.sha256()
        h.update(f"safedagger {__version__}\n".encode())
        h.update(f"regime {regime}\n".encode())
        h.update(plan.model_dump_json().encode())
        h.update(config_text.encode())
        for split, ids in (("train", plan.sim.tracks), ("test", plan.eval.tracks)):
            for track in resolve_tracks(ids, split):
                h.update(format_track_spec(track.spec).encode())
        return h.hexdigest()

    def new_run_dir(self, regime: str, plan, config_text: str) -> pathlib.Path:
        """Create a self-describing run directory, marked PARTIAL until complete."""
        digest = self.input_hash(regime, plan, config_text)
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        run_dir = self.runs_dir / f"{regime}-{stamp}-{digest[:8]}"
        n = 1
        while run_dir.exists():
            n += 1
            run_dir = self.runs_dir / f"{regime}-{stamp}-{digest[:8]}-{n}"
        run_dir.mkdir(parents=True)
        (run_dir / PARTIAL_MARKER).write_text("run in progress or failed\n")
        (run_dir / "config.conf").write_text(config_text)
        (run_dir / "seed").write_text(f"{plan.run.seed}\n")
        (run_dir / "inputs.sha256").write_text(f"{digest}\n")
        return run_dir

    def run(self, regime: str, plan, config_text: str):
        """Train one regime and persist every artifact; returns (RunResult, run_dir)."""
        from safedagger.imitation import REGIMES

        if regime not in REGIMES:
            raise ConfigError([f"unknown regime '{regime}' (choose from {', '.join(REGIMES)})"])
        plan = self._apply_threads(plan)
        run_dir = self.new_run_dir(regime, plan, config_text)
        log.info("run directory %s", run_dir)
        result = REGIMES[regime](plan)
        self.save_run(result, run_dir)
        (run_dir / PARTIAL_MARKER).unlink()
        return result, run_dir

    def save_run(self, result, run_dir: pathlib.Path) -> None:
        from safedagger.dataset import save_dataset
        from safedagger.nn import save_params
        from safedagger.report import summarize_run

        for i, primary in enumerate(result.primaries):
            save_params(primary.params, run_dir / f"primary_{i}.model")
        for i, safety in enumerate(result.safeties):
            save_params(safety.params, run_dir / f"safety_{i}.model")
        save_dataset(result.dataset, run_dir / "dataset.bin")
        if result.safety_set is not None:
            save_dataset(result.safety_set, run_dir / "safety_set.bin")
        report = result.report
        report.write_csv(run_dir / "report.csv")
        (run_dir / "summary.txt").write_text(report.summary_text())
        summarize_run(report, run_dir)
        tau = result.safety.tau if result.safety is not None else None
        meta = {
            "version": __version__,
            "regime": result.regime,
            "seed": result.plan.run.seed,
            "iterations": len(report.records),
            "label_queries": report.label_queries,
            "takeover_queries": report.takeover_queries,
            "eval_takeover_queries": report.eval_takeover_queries,
            "eval_metric_queries": report.eval_metric_queries,
        }
        if tau is not None:
            meta["tau"] = float(tau)
        (run_dir / "run.meta").write_text(format_settings(meta))

    def read_meta(self, run_dir: pathlib.Path | str) -> dict:
        path = pathlib.Path(run_dir) / "run.meta"
        if not path.exists():
            raise ConfigError([f"{run_dir}: not a completed run directory (no run.meta)"])
        return parse_settings(path.read_text())

    def load_primary(self, path: pathlib.Path | str):
        from safedagger.nn import load_params
        from safedagger.policies import PrimaryPolicy

        params = load_params(path)
        if params.spec.input_size != OBS_SIZE:
            raise ModelFormatError(f"{path}: expects {params.spec.input_size} inputs, "
                                   f"observations have {OBS_SIZE}")
        return PrimaryPolicy(params)

    def load_safety(self, path: pathlib.Path | str, primary):
        from safedagger.nn import load_params
        from safedagger.policies import SafetyPolicy

        path = pathlib.Path(path)
        params = load_params(path)
        if primary is not None and params.spec.input_size != primary.spec.feature_size:
            raise ModelFormatError(f"{path}: expects {params.spec.input_size} features, "
                                   f"the primary provides {primary.spec.feature_size}")
        tau = math.nan
        meta = path.parent / "run.meta"
        if meta.exists():
            tau = float(parse_settings(meta.read_text()).get("tau", math.nan))
        return SafetyPolicy(params, tau)

    def evaluate_models(self, primary_path=None, safety_path=None, *, strategies=("naive",),
                        traffic=(0,), laps: int = 3, tracks=None, seed: int = 0,
                        dump_dir: pathlib.Path | str | None = None,
                        out_csv: pathlib.Path | str | None = None):
        """Evaluate saved models (or the reference when primary_path is None) on test tracks."""
        from safedagger.evaluation import EvalConfig, evaluate
        from safedagger.models import QueryLedger
        from safedagger.policies import PolicyBundle
        from safedagger.report import write_eval_csv
        from safedagger.track import resolve_tracks

        primary = self.load_primary(primary_path) if primary_path is not None else None
        safety = self.load_safety(safety_path, primary) if safety_path is not None else None
        bundle = PolicyBundle(primary, safety)
        test_tracks = tuple(resolve_tracks(list(tracks or []), "test"))
        ledger = QueryLedger()
        reports = []
        for strategy in strategies:
            for n in traffic:
                cfg = EvalConfig(test_tracks, laps, n, strategy, seed)
                reports.append(evaluate(bundle, cfg, ledger, trajectory_dir=dump_dir,
                                        workers=self.threads or 1))
        if out_csv is not None:
            write_eval_csv(reports, out_csv)
        return reports

    def compare(self, run_dirs, out_path: pathlib.Path | str | None = None):
        """Tabulate query totals and final metrics of completed runs into compare.csv.

        Returns (rows, ratio) where ratio is SafeDAgger's label-query total over
        DAgger's when both regimes are present.
        """
        if not run_dirs:
            raise ConfigError(["compare needs at least one run directory"])
        entries = []
        metric_cols: list[str] = []
        for run_dir in run_dirs:
            run_dir = pathlib.Path(run_dir)
            meta = self.read_meta(run_dir)
            with open(run_dir / "report.csv", newline="") as f:
                records = list(csv.DictReader(f))
            if not records:
                raise ConfigError([f"{run_dir}: empty report.csv"])
            final = records[-1]
            bootstrap = int(records[0]["iteration_label_queries"])
            total = int(meta["label_queries"])
            row = {
                "run": run_dir.name,
                "regime": meta["regime"],
                "seed": str(meta["seed"]),
                "iterations": str(len(records) - 1),
                "label_queries": str(total),
                "bootstrap_label_queries": str(bootstrap),
                "iteration_label_queries": str(total - bootstrap),
                "takeover_queries": str(meta["takeover_queries"]),
            }
            for k, v in final.items():
                if "_traffic" in k:
                    row[k] = v
                    if k not in metric_cols:
                        metric_cols.append(k)
            entries.append(row)

        ratio = None
        by_regime = {}
        for row in entries:
            by_regime.setdefault(row["regime"], []).append(int(row["iteration_label_queries"]))
        if by_regime.get("dagger") and by_regime.get("safedagger"):
            dagger = sum(by_regime["dagger"])
            if dagger > 0:
                ratio = sum(by_regime["safedagger"]) / dagger

        columns = list(COMPARE_COLUMNS) + metric_cols
        rows = [[row.get(c, "") for c in columns] for row in entries]
        if out_path is None:
            out_path = self.runs_dir / "compare.csv"
        out_path = pathlib.Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)
            if ratio is not None:
                w.writerow(["safedagger/dagger", "", "", "", "", "", format(ratio, ".6g"), ""]
                           + [""] * len(metric_cols))
        return rows, ratio

    def rank(self, run_dir: pathlib.Path | str, iteration: int | None = None, top: int = 20) -> tuple[int, pathlib.Path]:
        """Dump the `top` least-safe and most-safe examples of a run's dataset."""
        from safedagger.dataset import load_dataset
        from safedagger.evaluation import export_ranked, rank_observations

        if top < 1:
            raise ConfigError(["rank: --top must be >= 1"])
        run_dir = pathlib.Path(run_dir)
        meta = self.read_meta(run_dir)
        if iteration is None:
            iteration = int(meta["iterations"]) - 1
        primary_path = run_dir / f"primary_{iteration}.model"
        safety_path = run_dir / f"safety_{iteration}.model"
        if not safety_path.exists():
            raise ConfigError([f"{run_dir}: no safety model for iteration {iteration}"])
        primary = self.load_primary(primary_path)
        safety = self.load_safety(safety_path, primary)
        dataset = load_dataset(run_dir / "dataset.bin")
        ranking = rank_observations(dataset, primary, safety)
        out = run_dir / f"ranked_{iteration}.bin"
        n = export_ranked(dataset, ranking, top, out, csv_path=run_dir / f"ranked_{iteration}.csv")
        return n, out
