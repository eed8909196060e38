"""Command-line surface.

Subcommands: init, run, replay, aggregate, report, hpo, data, demo-train.
Tokens after `--` are forwarded verbatim to the wrapped command.

Exit codes: 0 success, 2 usage error, 3 gate refusal (dirty worktree /
no repository), 4 child failure, 5 replay divergence, 1 other harness errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from repro_harness import __version__
from repro_harness import dataprep, hpo
from repro_harness.errors import (
    DirtyWorktreeError,
    HarnessError,
    NotARepositoryError,
    SpawnFailureError,
    VcsToolUnavailableError,
)
from repro_harness.events import read_events, series_to_csv, aggregate
from repro_harness.manifest import load_manifest
from repro_harness.replay import (
    DEFAULT_TOLERANCE,
    EXACT,
    METRIC_EQUAL,
    ReplayPlan,
    plan_from_triple,
    plan_replay,
    run_replay,
    verify_reproduction,
    write_report,
)
from repro_harness.report import build_report, discover_run_dirs
from repro_harness.runner import RunRequest, run_batch, timestamp_compact
from repro_harness.seeds import make_stream, derive_subseed, RootSeed
from repro_harness.vcs import inspect_repository

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_GATE = 3
EXIT_CHILD = 4
EXIT_DIVERGENT = 5

CONFIG_FILENAME = ".repro-harness.toml"
ENV_BASE_DIR = "REPRO_HARNESS_BASE"

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _load_toml(path: Path):
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_config(cwd=".") -> dict:
    """Optional .repro-harness.toml: base_dir, ignore (globs), tolerance."""
    path = Path(cwd) / CONFIG_FILENAME
    if not path.is_file():
        return {}
    doc = _load_toml(path)
    config = {}
    if "base_dir" in doc:
        config["base_dir"] = str(doc["base_dir"])
    if "ignore" in doc:
        config["ignore"] = [str(g) for g in doc["ignore"]]
    if "tolerance" in doc:
        config["tolerance"] = float(doc["tolerance"])
    return config


def _resolve_base_dir(flag_value, config):
    if flag_value:
        return flag_value
    env_value = os.environ.get(ENV_BASE_DIR)
    if env_value:
        return env_value
    return config.get("base_dir", "runs")


def split_passthrough(argv):
    """Split argv at the first bare `--`; the right side is the child command."""
    if "--" in argv:
        i = argv.index("--")
        return argv[:i], argv[i + 1:]
    return argv, []


def params_from_command(tokens):
    """Mirror `--name value` pairs from the passthrough command as run params.

    Values are kept verbatim; `--flag` without a value records an empty
    string; non-flag tokens (program name, positionals) carry no param.
    """
    params = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.startswith("--") and len(tok) > 2:
            name = tok[2:]
            if "=" in name:
                name, value = name.split("=", 1)
                params.append((name, value))
            elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
                params.append((name, tokens[i + 1]))
                i += 1
            else:
                params.append((name, ""))
        i += 1
    return params


def _seed_type(text):
    value = int(text, 0)
    if not 0 <= value <= _MASK64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {text}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="repro-harness",
        description="Reproducible-experiment harness: VCS-gated runs, seeded "
                    "replays, metric aggregation, and hyper-parameter search.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_init = sub.add_parser("init", help="write a starter config and check the environment")
    p_init.add_argument("--force", action="store_true", help="overwrite an existing config")

    p_run = sub.add_parser("run", help="execute a command under the harness;"
                                       " child command goes after --")
    p_run.add_argument("--experiment-name", required=True)
    p_run.add_argument("--seed", type=_seed_type, default=None,
                       help="root seed (64-bit unsigned); generated and logged when omitted")
    p_run.add_argument("--multi-run", type=_positive_int, default=1, metavar="N",
                       help="run the same experiment N times with distinct sub-seeds")
    p_run.add_argument("--allow-dirty", action="store_true",
                       help="snapshot uncommitted code instead of refusing to run")
    p_run.add_argument("--parallel", type=_positive_int, default=1, metavar="K",
                       help="run up to K children concurrently")
    p_run.add_argument("--base-dir", default=None)
    p_run.add_argument("--repo", default=".", help="working tree the gate inspects")
    p_run.add_argument("--determinism-note", default="",
                       help="free-form note recorded in the environment fingerprint")

    p_replay = sub.add_parser("replay", help="reproduce a recorded run and verify it")
    p_replay.add_argument("--from", dest="from_run", default=None, metavar="RUN_DIR",
                          help="replay this run directory and compare against it")
    p_replay.add_argument("--repo", default=None, help="repository URL (triple mode, or"
                                                       " override for --from)")
    p_replay.add_argument("--commit", default=None, help="commit id (triple mode)")
    p_replay.add_argument("--seed", type=_seed_type, default=None,
                          help="seed for triple mode (default: generated)")
    p_replay.add_argument("--workspace", default=None)
    p_replay.add_argument("--tolerance", type=float, default=None,
                          help=f"relative metric tolerance (default {DEFAULT_TOLERANCE})")

    p_agg = sub.add_parser("aggregate", help="aggregate a scalar tag across a batch")
    p_agg.add_argument("--batch", required=True, metavar="DIR")
    p_agg.add_argument("--tag", required=True)
    p_agg.add_argument("--out", default=None, help="CSV path (stdout when omitted)")

    p_report = sub.add_parser("report", help="render the static report for a batch")
    p_report.add_argument("--batch", required=True, metavar="DIR")
    p_report.add_argument("--out", default=None, metavar="DIR")

    p_hpo = sub.add_parser("hpo", help="hyper-parameter optimization")
    hpo_sub = p_hpo.add_subparsers(dest="hpo_command", required=True)
    p_hpo_run = hpo_sub.add_parser("run", help="drive suggest -> run -> observe;"
                                              " child command goes after --")
    p_hpo_run.add_argument("--experiment-name", required=True)
    p_hpo_run.add_argument("--param", action="append", required=True, metavar="SPEC",
                           help="name=continuous:lo:hi[:log] | name=int:lo:hi[:log]"
                                " | name=cat:v1,v2,...")
    p_hpo_run.add_argument("--budget", type=_positive_int, required=True,
                           help="number of trials to execute")
    p_hpo_run.add_argument("--goal", choices=["maximize", "minimize"], default="maximize")
    p_hpo_run.add_argument("--objective-tag", required=True,
                           help="metrics_summary tag harvested as the objective")
    p_hpo_run.add_argument("--seed", type=_seed_type, default=0)
    p_hpo_run.add_argument("--init-random", type=_positive_int, default=None)
    p_hpo_run.add_argument("--candidates", type=_positive_int, default=512)
    p_hpo_run.add_argument("--xi", type=float, default=0.01)
    p_hpo_run.add_argument("--failure-objective", type=float, default=None,
                           help="penalty objective assigned to failed runs")
    p_hpo_run.add_argument("--study-dir", default=None)
    p_hpo_run.add_argument("--base-dir", default=None)
    p_hpo_run.add_argument("--allow-dirty", action="store_true")
    p_hpo_run.add_argument("--repo", default=".")

    p_data = sub.add_parser("data", help="dataset utilities")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)

    p_verify = data_sub.add_parser("verify", help="check the split/class/file folder layout")
    p_verify.add_argument("root")

    p_stats = data_sub.add_parser("stats", help="streaming per-channel mean/std of images")
    p_stats.add_argument("--images", required=True, metavar="DIR",
                         help="directory searched recursively for .pgm/.ppm files")
    p_stats.add_argument("--out", default=None, help="JSON path (stdout when omitted)")

    p_split = data_sub.add_parser("split", help="deterministic train/val partition")
    p_split.add_argument("--items", required=True,
                         help="CSV of id,label rows (header optional)")
    p_split.add_argument("--ratio", type=float, required=True)
    p_split.add_argument("--seed", type=_seed_type, required=True)
    p_split.add_argument("--no-stratify", action="store_true")
    p_split.add_argument("--train-out", required=True)
    p_split.add_argument("--val-out", required=True)

    p_toy = data_sub.add_parser("toy2d", help="generate a 2D toy dataset CSV")
    p_toy.add_argument("--family", required=True,
                       choices=[dataprep.XOR, dataprep.GAUSSIAN_BLOBS,
                                dataprep.SPIRAL, dataprep.DONUT])
    p_toy.add_argument("--n", type=_positive_int, required=True)
    p_toy.add_argument("--seed", type=_seed_type, required=True)
    p_toy.add_argument("--out", required=True)
    p_toy.add_argument("--centers", default="0:0,1:1",
                       help="gaussian_blobs centers as x:y[,x:y...]")
    p_toy.add_argument("--sigma", type=float, default=0.1)
    p_toy.add_argument("--turns", type=float, default=1.0)
    p_toy.add_argument("--noise-sigma", type=float, default=0.05)
    p_toy.add_argument("--r-inner", type=float, default=0.5)
    p_toy.add_argument("--r-outer", type=float, default=1.0)

    p_demo = sub.add_parser("demo-train", help="bundled deterministic logistic-regression demo")
    p_demo.add_argument("--dataset", required=True, help="x,y,label CSV")
    p_demo.add_argument("--epochs", type=_positive_int, default=100)
    p_demo.add_argument("--lr", type=float, default=0.01)
    p_demo.add_argument("--grid-resolution", type=_positive_int, default=24)
    p_demo.add_argument("--seed", type=_seed_type, default=0,
                        help="ignored when RUN_SEED is set by the harness")
    p_demo.add_argument("--out-dir", default=None,
                        help="events destination (default: $RUN_DIR or .)")

    return parser


# --- subcommand implementations ----------------------------------------------

def _cmd_init(args, config):
    path = Path(CONFIG_FILENAME)
    if path.exists() and not args.force:
        print(f"{CONFIG_FILENAME} already exists (use --force to overwrite)")
    else:
        path.write_text(
            "# repro-harness configuration\n"
            'base_dir = "runs"\n'
            "# extra snapshot ignore globs\n"
            'ignore = []\n'
            "# relative tolerance for replay metric comparison\n"
            "tolerance = 1e-6\n",
            encoding="utf-8",
        )
        print(f"wrote {CONFIG_FILENAME}")
    try:
        state = inspect_repository(".")
        tree = "dirty" if state.is_dirty else "clean"
        print(f"git repository detected: HEAD {state.head_commit[:12]}, tree {tree}")
    except (NotARepositoryError, VcsToolUnavailableError) as exc:
        print(f"note: {exc}")
        print("runs will refuse to start until the project is a committed git repository")
    return EXIT_OK


def _cmd_run(args, config, command):
    if not command:
        print("error: missing child command (pass it after --)", file=sys.stderr)
        return EXIT_USAGE
    req = RunRequest(
        experiment_name=args.experiment_name,
        command=tuple(command),
        params=tuple(params_from_command(command)),
        base_dir=_resolve_base_dir(args.base_dir, config),
        allow_dirty=args.allow_dirty,
        multi_run=args.multi_run,
        user_seed=args.seed,
        parallel=args.parallel,
        repo_path=args.repo,
        ignore_rules=tuple(config.get("ignore", ())),
        determinism_note=args.determinism_note,
    )
    results = run_batch(req)
    batch_dir = results[0].run_dir.parent
    with open(batch_dir / "batch.json", encoding="utf-8") as fh:
        batch = json.load(fh)
    print(f"root seed {batch['root_seed']} ({batch['seed_origin']})")
    any_failed = False
    for res in results:
        state = res.manifest.status
        any_failed |= state != "succeeded"
        summary = ", ".join(f"{k}={v:g}" for k, v in sorted(res.manifest.summary().items()))
        print(f"{res.run_dir}  {state} (exit {res.exit_code}, {res.duration_ms} ms)"
              + (f"  [{summary}]" if summary else ""))
    print(f"batch: {batch_dir}")
    return EXIT_CHILD if any_failed else EXIT_OK


def _cmd_replay(args, config, command):
    tolerance = args.tolerance
    if tolerance is None:
        tolerance = config.get("tolerance", DEFAULT_TOLERANCE)
    if args.from_run:
        run_dir = Path(args.from_run)
        original = load_manifest(run_dir)
        workspace = Path(args.workspace) if args.workspace else (
            run_dir / f"replay-{timestamp_compact(datetime.now(timezone.utc))}")
        plan = plan_replay(original, run_dir, workspace, repo_override=args.repo)
        replay_dir = run_replay(plan)
        report = verify_reproduction(run_dir, replay_dir, tolerance=tolerance)
        write_report(report, workspace / "report.json")
        print(f"replayed into {replay_dir}")
        print(f"verdict: {report.verdict}")
        if report.manifest_diff:
            for field, a, b in report.manifest_diff:
                print(f"  manifest {field}: original={a!r} replay={b!r}")
        if report.first_divergence:
            tag, step, a, b = report.first_divergence
            print(f"  first divergence at tag={tag} step={step}: "
                  f"original={a!r} replay={b!r}")
        print(f"report: {workspace / 'report.json'}")
        return EXIT_OK if report.verdict in (EXACT, METRIC_EQUAL) else EXIT_DIVERGENT

    if not args.repo or not args.commit:
        print("error: replay needs --from RUN_DIR, or --repo and --commit",
              file=sys.stderr)
        return EXIT_USAGE
    if not command:
        print("error: triple-mode replay needs a command after --", file=sys.stderr)
        return EXIT_USAGE
    workspace = Path(args.workspace) if args.workspace else Path(
        f"replay-{timestamp_compact(datetime.now(timezone.utc))}")
    if args.seed is None:
        from repro_harness.seeds import resolve_seed
        seed = resolve_seed(None).value
        print(f"seed not given; generated {seed}")
    else:
        seed = args.seed
    plan = plan_from_triple(args.repo, args.commit, command, seed, workspace,
                            params=tuple(params_from_command(command)))
    replay_dir = run_replay(plan)
    m = load_manifest(replay_dir)
    print(f"replayed into {replay_dir}: {m.status} (exit {m.exit_code})")
    return EXIT_OK if m.status == "succeeded" else EXIT_CHILD


def _cmd_aggregate(args, config):
    run_dirs = discover_run_dirs(args.batch)
    run_logs = [read_events(rd / "events.jsonl")[0] for rd in run_dirs]
    series = aggregate(run_logs, args.tag)
    csv_text = series_to_csv(series)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _cmd_report(args, config):
    bundle = build_report(args.batch, out_dir=args.out)
    print(f"report: {bundle.index_path}")
    for svg_name, csv_name in bundle.artifacts:
        print(f"  {svg_name}  (data: {csv_name})")
    return EXIT_OK


def _parse_param_spec(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"bad --param {text!r}")
    name, rest = text.split("=", 1)
    fields = rest.split(":")
    kind = fields[0]
    try:
        if kind in ("continuous", "float"):
            scale = fields[3] if len(fields) > 3 else "linear"
            return hpo.continuous(name, float(fields[1]), float(fields[2]), scale)
        if kind in ("int", "integer"):
            scale = fields[3] if len(fields) > 3 else "linear"
            return hpo.integer(name, int(fields[1]), int(fields[2]), scale)
        if kind in ("cat", "categorical"):
            return hpo.categorical(name, fields[1].split(","))
    except (ValueError, IndexError) as exc:
        raise argparse.ArgumentTypeError(f"bad --param {text!r}: {exc}") from exc
    raise argparse.ArgumentTypeError(f"bad --param kind {kind!r}")


def _format_param_value(value):
    return repr(value) if isinstance(value, float) else str(value)


def _cmd_hpo_run(args, config, command):
    if not command:
        print("error: missing child command (pass it after --, with {param} "
              "placeholders)", file=sys.stderr)
        return EXIT_USAGE
    try:
        specs = tuple(_parse_param_spec(p) for p in args.param)
        space = hpo.ParamSpace(specs)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    base_dir = _resolve_base_dir(args.base_dir, config)
    study_dir = Path(args.study_dir) if args.study_dir else (
        Path(base_dir) / f"{args.experiment_name}-study")
    study_dir.mkdir(parents=True, exist_ok=True)
    study_path = study_dir / hpo.STUDY_FILENAME
    if study_path.exists():
        study = hpo.load_study(study_path)
        print(f"resuming study with {len(study.observations)} observations")
    else:
        study = hpo.make_study(space, args.goal, args.seed,
                               init_random=args.init_random,
                               candidates=args.candidates, xi=args.xi)

    root = RootSeed(value=study.seed, origin="user")
    executed = 0
    while executed < args.budget:
        trial = len(study.observations)
        stream = make_stream(derive_subseed(root, f"hpo/trial/{trial}"))
        assignment = hpo.suggest_bayes(study, stream)
        values = {s.name: _format_param_value(assignment[s.name]) for s in specs}
        trial_command = tuple(tok.format(**values) for tok in command)
        req = RunRequest(
            experiment_name=args.experiment_name,
            command=trial_command,
            params=tuple((s.name, values[s.name]) for s in specs),
            base_dir=str(study_dir / "trials"),
            allow_dirty=args.allow_dirty,
            user_seed=study.seed,
            repo_path=args.repo,
            ignore_rules=tuple(config.get("ignore", ())),
        )
        result = run_batch(req)[0]
        executed += 1
        summary = result.manifest.summary()
        if result.manifest.status == "succeeded" and args.objective_tag in summary:
            objective = summary[args.objective_tag]
        elif args.failure_objective is not None:
            objective = args.failure_objective
        else:
            print(f"trial {trial}: run {result.manifest.status}, no observation "
                  f"(tag {args.objective_tag!r} missing or run failed)")
            continue
        hpo.observe(study, assignment, objective)
        hpo.save_study(study, study_path)
        _write_leaderboard(study, specs, study_dir / "leaderboard.csv")
        print(f"trial {trial}: objective {objective:g} at "
              + ", ".join(f"{k}={v}" for k, v in values.items()))

    best = study.best_observed()
    if best is not None:
        print(f"best objective {best.objective:g} at trial {best.trial_index}: "
              + ", ".join(f"{k}={v}" for k, v in best.assignment.items()))
    print(f"study: {study_path}")
    return EXIT_OK


def _write_leaderboard(study, specs, path):
    lines = ["trial_index," + ",".join(s.name for s in specs) + ",objective"]
    for obs in study.observations:
        row = [str(obs.trial_index)]
        row.extend(_format_param_value(obs.assignment[s.name]) for s in specs)
        row.append(repr(obs.objective))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_data(args, config):
    if args.data_command == "verify":
        report = dataprep.verify_folder_format(args.root)
        print(f"splits: {', '.join(report.splits_found) or '(none)'}")
        for split, classes in sorted(report.classes_per_split.items()):
            counts = ", ".join(f"{c}={report.file_counts[(split, c)]}" for c in classes)
            print(f"  {split}: {counts}")
        if report.valid:
            print("layout OK")
            return EXIT_OK
        for path, rule in report.violations:
            print(f"violation: {path}: {rule}")
        return EXIT_ERROR

    if args.data_command == "stats":
        root = Path(args.images)
        paths = sorted(p for p in root.rglob("*") if p.suffix in (".pgm", ".ppm"))
        stats = dataprep.image_channel_stats(paths)
        text = json.dumps(stats.to_json_obj(), indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
            print(f"wrote {args.out}")
        else:
            sys.stdout.write(text)
        return EXIT_OK

    if args.data_command == "split":
        items = []
        for line in Path(args.items).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line == "id,label":
                continue
            item_id, label = line.split(",", 1)
            items.append((item_id, label))
        train_ids, val_ids = dataprep.partition_train_val(
            items, args.ratio, args.seed, stratified=not args.no_stratify)
        Path(args.train_out).write_text("\n".join(train_ids) + "\n", encoding="utf-8")
        Path(args.val_out).write_text("\n".join(val_ids) + "\n", encoding="utf-8")
        print(f"train {len(train_ids)} / val {len(val_ids)} "
              f"(ratio {args.ratio}, seed {args.seed})")
        return EXIT_OK

    # toy2d
    centers = tuple(tuple(float(v) for v in c.split(":")) for c in args.centers.split(","))
    spec = dataprep.Toy2DSpec(
        family=args.family, n_points=args.n, seed=args.seed,
        centers=centers, sigma=args.sigma, turns=args.turns,
        noise_sigma=args.noise_sigma, r_inner=args.r_inner, r_outer=args.r_outer)
    points = dataprep.generate_2d(spec)
    Path(args.out).write_text(dataprep.points_to_csv(points), encoding="utf-8")
    print(f"wrote {args.out} ({len(points)} points, family {args.family})")
    return EXIT_OK


def _cmd_demo_train(args, config):
    from repro_harness.demo_trainer import TrainConfig, train, loss_and_grad, accuracy
    from repro_harness.events import EventLog
    from repro_harness.dataprep import load_2d_csv

    out_dir = Path(args.out_dir or os.environ.get("RUN_DIR") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    env_seed = os.environ.get("RUN_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    config_obj = TrainConfig(lr=args.lr, epochs=args.epochs, dataset=args.dataset,
                             grid_resolution=args.grid_resolution)
    dataset = load_2d_csv(args.dataset)
    with EventLog(out_dir / "events.jsonl") as log:
        model = train(config_obj, seed, log, dataset=dataset)
    final_loss, _, _ = loss_and_grad(model, dataset)
    print(f"trained {args.epochs} epochs (seed {seed}): "
          f"loss {final_loss:.6f}, accuracy {accuracy(model, dataset):.4f}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    argv, command = split_passthrough(list(argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    config = load_config()
    try:
        if args.subcommand == "init":
            return _cmd_init(args, config)
        if args.subcommand == "run":
            return _cmd_run(args, config, command)
        if args.subcommand == "replay":
            return _cmd_replay(args, config, command)
        if args.subcommand == "aggregate":
            return _cmd_aggregate(args, config)
        if args.subcommand == "report":
            return _cmd_report(args, config)
        if args.subcommand == "hpo":
            return _cmd_hpo_run(args, config, command)
        if args.subcommand == "data":
            return _cmd_data(args, config)
        if args.subcommand == "demo-train":
            return _cmd_demo_train(args, config)
        parser.error(f"unknown subcommand {args.subcommand!r}")
    except (DirtyWorktreeError, NotARepositoryError, VcsToolUnavailableError) as exc:
        print(f"gate refused: {exc}", file=sys.stderr)
        return EXIT_GATE
    except SpawnFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHILD
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
