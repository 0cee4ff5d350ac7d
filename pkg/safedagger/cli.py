"""CLI: command-line interface for safedagger."""

import argparse
import logging
import pathlib
import sys

from safedagger.app import App
from safedagger.config import load_plan
from safedagger.errors import (ConfigError, DatasetFormatError, ModelFormatError, SafeDaggerError,
                               TrackError)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _warn(message: str) -> None:
    print(f"safedagger: {message}", file=sys.stderr)


def cmd_tracks(args, app: App):
    from safedagger.track import (build_track, closure_residual, load_track, parse_track_spec,
                                  shipped_track_specs, shipped_tracks)

    if args.tracks_command == "list":
        for track in shipped_tracks():
            spec = track.spec
            print(f"{spec.id:<14} {spec.split:<5} lanes={spec.lane_count} "
                  f"length={track.length:.1f}m limit={spec.speed_limit:g}m/s  {spec.description}")
        return EXIT_OK

    if args.tracks_command == "validate":
        failed = 0
        if args.files:
            sources = [(str(p), pathlib.Path(p).read_text()) for p in args.files]
        else:
            sources = [(s.id, None) for s in shipped_track_specs()]
        by_id = {s.id: s for s in shipped_track_specs()}
        for name, text in sources:
            try:
                spec = parse_track_spec(text, source=name) if text is not None else by_id[name]
                build_track(spec)
                pos, heading = closure_residual(spec)
                print(f"ok    {name}  residual {pos:.2e} m / {heading:.2e} rad")
            except TrackError as e:
                failed += 1
                print(f"FAIL  {name}  {e}")
                if e.residual is not None:
                    print(f"      residual {e.residual[0]:.6g} m / {e.residual[1]:.6g} rad")
        return EXIT_INVALID if failed else EXIT_OK

    # render-ascii
    target = args.track
    if pathlib.Path(target).is_file():
        track = load_track(target)
    else:
        matches = [t for t in shipped_tracks() if t.id == target]
        if not matches:
            raise ConfigError([f"unknown track '{target}'"])
        track = matches[0]
    print(track.render_ascii(width=args.width))
    return EXIT_OK


def cmd_run(args, app: App):
    plan, text = load_plan(args.config, seed=args.seed)
    if args.no_eval:
        plan = plan.model_copy(update={"eval": plan.eval.model_copy(update={"enabled": False})})
    print(f"Running {args.regime} (seed {plan.run.seed}, {plan.run.iterations} iterations)...")
    result, run_dir = app.run(args.regime, plan, text)
    report = result.report
    print(f"Run directory: {run_dir}")
    print(f"Label queries: {report.label_queries}")
    print(f"Takeover queries: {report.takeover_queries}")
    return EXIT_OK


def cmd_eval(args, app: App):
    if args.reference:
        if args.primary or args.safety:
            raise ConfigError(["eval: --reference cannot be combined with model files"])
        primary = None
    elif args.primary:
        primary = args.primary
    else:
        raise ConfigError(["eval: give a primary model file or --reference"])
    strategies = args.strategy or ["naive"]
    if args.reference and "safe" in strategies:
        raise ConfigError(["eval: the reference driver is evaluated with the naive strategy only"])
    if "safe" in strategies and not args.safety:
        raise ConfigError(["eval: the safe strategy needs --safety MODEL"])
    out_csv = pathlib.Path(args.output) if args.output else app.runs_dir / "eval.csv"
    dump_dir = out_csv.parent / "trajectories" if args.dump_trajectories else None
    reports = app.evaluate_models(primary, args.safety, strategies=strategies,
                                  traffic=args.traffic or [0], laps=args.laps,
                                  tracks=args.tracks, seed=args.seed or 0,
                                  dump_dir=dump_dir, out_csv=out_csv)
    for ev in reports:
        mse = "n/a" if ev.steering_mse is None else f"{ev.steering_mse:.5f}"
        print(f"{ev.strategy:<5} traffic={ev.traffic:<3} avg laps {ev.avg_laps:.2f}  "
              f"damage/lap {ev.damage_per_lap:.2f}  steer-mse {mse}  "
              f"takeover {ev.takeover_fraction:.1%}")
    print(f"Wrote {out_csv}")
    if dump_dir is not None:
        print(f"Trajectories in {dump_dir}")
    return EXIT_OK


def cmd_compare(args, app: App):
    out = pathlib.Path(args.output) if args.output else app.runs_dir / "compare.csv"
    rows, ratio = app.compare(args.runs, out)
    for row in rows:
        print(f"{row[0]}: {row[1]} label queries {row[4]} "
              f"(bootstrap {row[5]}, iterations {row[6]}), takeover {row[7]}")
    if ratio is not None:
        print(f"SafeDAgger/DAgger iteration label queries: {ratio:.3f}")
    print(f"Wrote {out}")
    return EXIT_OK


def cmd_rank(args, app: App):
    n, path = app.rank(args.run, args.iteration, args.top)
    print(f"Wrote {n} ranked examples to {path}")
    return EXIT_OK


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safedagger",
                                     description="Query-efficient imitation learning lab")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for training detail")
    parser.add_argument("--out-dir", help="Runs directory (default: $SAFEDAGGER_RUNS or ./runs)")
    parser.add_argument("--threads", type=int, help="Evaluation worker threads")
    subparsers = parser.add_subparsers(dest="command")

    p_tracks = subparsers.add_parser("tracks", help="List, validate or draw tracks")
    tracks_sub = p_tracks.add_subparsers(dest="tracks_command", required=True)
    tracks_sub.add_parser("list", help="List shipped tracks")
    p_validate = tracks_sub.add_parser("validate", help="Check track files close into a loop")
    p_validate.add_argument("files", nargs="*", help="Track files (default: shipped tracks)")
    p_render = tracks_sub.add_parser("render-ascii", help="Draw a coarse map of a track")
    p_render.add_argument("track", help="Shipped track id or a track file")
    p_render.add_argument("--width", type=int, default=60)

    p_run = subparsers.add_parser("run", help="Train one regime and write a run directory")
    p_run.add_argument("regime", choices=["supervised", "dagger", "safedagger"])
    p_run.add_argument("--config", help="Config file or preset name (desk, full)")
    p_run.add_argument("--seed", type=int, help="Override run.seed")
    p_run.add_argument("--no-eval", action="store_true", help="Skip per-iteration evaluation")

    p_eval = subparsers.add_parser("eval", help="Drive saved models on the test tracks")
    p_eval.add_argument("primary", nargs="?", help="Primary model file")
    p_eval.add_argument("--safety", help="Safety model file (needed for --strategy safe)")
    p_eval.add_argument("--reference", action="store_true", help="Evaluate the reference driver")
    p_eval.add_argument("--strategy", action="append", choices=["naive", "safe"],
                        help="Driving strategy (repeatable, default: naive)")
    p_eval.add_argument("--traffic", type=int, action="append",
                        help="Traffic cars (repeatable, default: 0)")
    p_eval.add_argument("--laps", type=int, default=3)
    p_eval.add_argument("--tracks", nargs="+", help="Test track ids (default: all test tracks)")
    p_eval.add_argument("--seed", type=int, help="Spawn seed (default: 0)")
    p_eval.add_argument("--output", help="Evaluation CSV (default: RUNS/eval.csv)")
    p_eval.add_argument("--dump-trajectories", action="store_true",
                        help="Write one trajectory CSV per track next to the output")

    p_compare = subparsers.add_parser("compare", help="Tabulate query costs of finished runs")
    p_compare.add_argument("runs", nargs="+", help="Run directories")
    p_compare.add_argument("--output", help="Output CSV (default: RUNS/compare.csv)")

    p_rank = subparsers.add_parser("rank", help="Dump the least and most safe observations")
    p_rank.add_argument("run", help="Run directory")
    p_rank.add_argument("--iteration", type=int, help="Iteration (default: last)")
    p_rank.add_argument("--top", type=int, default=20, help="Examples from each end")
    return parser


COMMANDS = {
    "tracks": cmd_tracks,
    "run": cmd_run,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "rank": cmd_rank,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        sys.exit(EXIT_INVALID)
    _setup_logging(args.verbose)

    app = App(out_dir=args.out_dir, threads=args.threads)
    try:
        code = COMMANDS[args.command](args, app)
    except ConfigError as e:
        for problem in e.problems:
            _warn(problem if e.source is None else f"{e.source}: {problem}")
        code = EXIT_INVALID
    except (TrackError, ModelFormatError, DatasetFormatError) as e:
        _warn(str(e))
        code = EXIT_INVALID
    except (SafeDaggerError, OSError) as e:
        _warn(f"error: {e}")
        code = EXIT_RUNTIME
    if code != EXIT_OK:
        sys.exit(code)
