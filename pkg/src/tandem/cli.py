"""Command-line entry point: ``tandem {record,train,tune,run,replay,report}``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from .backend import backend_for
from .cascade import Policy, collect_all_stages, run_episode
from .classifier import ModelBank, tune_bank, train_bank
from .config import RunConfig, resolve_config_path
from .errors import BackendError, ConfigError, TandemError, UsageError
from .harness import build_report, build_training_set, evaluate, load_dataset, make_grader, write_report
from .traces import TraceWriter, build_record, read_results, read_traces, replay, replay_one, write_results

logger = logging.getLogger("tandem")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _grid(text: str) -> tuple[float, float, float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be lo:hi:step, got {text!r}") from None
    if not (0 <= lo <= hi <= 1 and step > 0):
        raise argparse.ArgumentTypeError(f"grid {text!r} must satisfy 0 <= lo <= hi <= 1, step > 0")
    return lo, hi, step


def _policy(text: str) -> Policy:
    try:
        return Policy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tandem", description="Mentor/intern LLM cascade with staged insights.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{record,train,tune,run,replay,report}", parser_class=_Parser)
    sub.required = True

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="run config (TOML); $TANDEM_CONFIG takes precedence")
        return p

    p = add("record", "collect episodes into a trace file")
    p.add_argument("--parallel", type=_positive, default=1, help="concurrent episodes")
    p.add_argument("--policy", type=_policy, default=Policy("tandem"), help="policy stored beside each trace")
    p.add_argument("--baselines", default="", help="comma-separated mentor baselines to record, e.g. single:mentor,budget:500")
    p.add_argument("--limit", type=_positive, help="only the first N questions")
    p.add_argument("--out", help="trace file (default: paths.traces)")

    p = add("train", "fit the sufficiency classifier from traces")
    p.add_argument("--traces", help="trace file (default: paths.traces)")
    p.add_argument("--out", help="model file (default: paths.model_file)")

    p = add("tune", "grid-search per-stage thresholds into the model file")
    p.add_argument("--grid", type=_grid, default=(0.05, 0.95, 0.05), help="lo:hi:step")
    p.add_argument("--split", choices=("train", "validation", "all"), default="train")
    p.add_argument("--objective", choices=("accuracy", "f1"), default="accuracy")
    p.add_argument("--traces", help="trace file (default: paths.traces)")

    p = add("run", "run a policy live and report metrics")
    p.add_argument("--policy", type=_policy, default=Policy("tandem"))
    p.add_argument("--parallel", type=_positive, default=1)
    p.add_argument("--limit", type=_positive)
    p.add_argument("--out", help="results file (default: paths.results)")

    p = add("replay", "evaluate policies offline from traces")
    p.add_argument("--policy", type=_policy, action="append", help="repeatable; default tandem")
    p.add_argument("--parallel", type=_positive, default=1)
    p.add_argument("--traces", help="trace file (default: paths.traces)")
    p.add_argument("--out", help="results file (default: paths.results)")

    p = add("report", "render evaluation tables from results")
    p.add_argument("--results", action="append", help="results file(s) (default: paths.results)")
    p.add_argument("--traces", help="traces for classifier metrics (default: paths.traces if present)")
    p.add_argument("--focus", help="policy used for stage distribution and routing tables")
    return parser


# -- helpers ----------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    return RunConfig.load(resolve_config_path(args.config))


def _override(path: str | None, cfg: RunConfig, name: str) -> Path:
    return Path(path) if path else cfg.path(name)


def _existing(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _backends(cfg: RunConfig):
    return tuple(backend_for(m, cfg.base_dir, cfg.flags.top_k) for m in cfg.models)


def _questions(cfg: RunConfig, limit: int | None):
    qs = load_dataset(_existing(cfg.path("dataset"), "dataset"), cfg.dataset_format)
    return qs[:limit] if limit else qs


def _load_bank(cfg: RunConfig, required: bool) -> ModelBank | None:
    path = cfg.path("model_file", required=required)
    if path is None or not path.exists():
        if required:
            raise ConfigError(f"model file not found: {path}")
        return None
    bank = ModelBank.load(path)
    if cfg.thresholds is not None:
        for model in bank.models.values():
            model.thresholds = cfg.thresholds
    return bank


def _map(fn: Callable, items: Sequence, parallel: int):
    if parallel <= 1:
        return map(fn, items)
    pool = ThreadPoolExecutor(max_workers=parallel)
    try:
        # results come back in input order regardless of completion order
        return list(pool.map(fn, items))
    finally:
        pool.shutdown()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


# -- subcommands --------------------------------------------------------------------


def cmd_record(args) -> int:
    cfg = _load_config(args)
    questions = _questions(cfg, args.limit)
    backends = _backends(cfg)
    grader = make_grader(cfg.grader, cfg.grader_command)
    bank = _load_bank(cfg, required=False)
    usable = bank is not None and all(m.thresholds is not None for m in bank.models.values())
    baselines = [Policy.parse(b) for b in args.baselines.split(",") if b.strip()]
    ccfg = cfg.cascade_config()
    out = _override(args.out, cfg, "traces")
    failures = []

    def one(q):
        try:
            if cfg.flags.all_stage_recording:
                source = collect_all_stages(q, cfg.models, backends, ccfg, grader, bank if usable else None, baselines)
                rec = build_record(source, cfg.models, all_stages=True)
                if usable or not args.policy.needs_classifier:
                    rec.episode = replay_one(rec, bank, args.policy, ccfg.allow_stage0_exit)
            else:
                if args.policy.needs_classifier and not usable:
                    raise ConfigError(f"policy {args.policy} needs a tuned model file")
                episode, source = run_episode(q, args.policy, cfg.models, backends, bank, ccfg, grader)
                rec = build_record(source, cfg.models, episode)
        except BackendError as exc:
            logger.error("%s: %s", q.id, exc)
            failures.append(q.id)
            return None
        return rec

    with TraceWriter(out) as writer:
        for rec in _map(one, questions, args.parallel):
            if rec is not None:
                writer.write(rec)
    n_ok = len(questions) - len(failures)
    print(f"recorded {n_ok} of {len(questions)} episodes to {out}")
    return 2 if failures else 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    traces = _existing(_override(args.traces, cfg, "traces"), "trace file")
    examples = build_training_set(read_traces(traces))
    bank = train_bank(examples, cfg.grouping, **cfg.classifier_params())
    out = _override(args.out, cfg, "model_file")
    out.parent.mkdir(parents=True, exist_ok=True)
    bank.save(out)
    _emit({
        "model_file": str(out),
        "examples": len(examples),
        "groups": {k: m.classifier.best_val_accuracy_ for k, m in bank.models.items()},
    })
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    bank = _load_bank(cfg, required=True)
    traces = _existing(_override(args.traces, cfg, "traces"), "trace file")
    examples = build_training_set(read_traces(traces))
    lo, hi, step = args.grid
    tune_bank(bank, examples, lo, hi, step, split=args.split, objective=args.objective)
    bank.save(cfg.path("model_file"))
    _emit({k: m.thresholds.to_dict() for k, m in bank.models.items()})
    return 0


def _summary(results) -> dict:
    by_policy: dict[str, list] = {}
    for r in results:
        by_policy.setdefault(str(r.policy), []).append(r)
    return {name: evaluate(rs, by_subject=False).to_dict() for name, rs in by_policy.items()}


def cmd_run(args) -> int:
    cfg = _load_config(args)
    questions = _questions(cfg, args.limit)
    backends = _backends(cfg)
    grader = make_grader(cfg.grader, cfg.grader_command)
    bank = _load_bank(cfg, required=args.policy.needs_classifier)
    ccfg = cfg.cascade_config()

    def one(q):
        return run_episode(q, args.policy, cfg.models, backends, bank, ccfg, grader)[0]

    results = list(_map(one, questions, args.parallel))
    out = _override(args.out, cfg, "results")
    write_results(out, results)
    summary = _summary(results)
    report_dir = cfg.path("report_dir", required=False)
    if report_dir is not None:
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _emit(summary)
    return 0


def cmd_replay(args) -> int:
    cfg = _load_config(args)
    records = read_traces(_existing(_override(args.traces, cfg, "traces"), "trace file"))
    policies = args.policy or [Policy("tandem")]
    bank = _load_bank(cfg, required=any(p.needs_classifier for p in policies))
    stage0 = cfg.flags.allow_stage0_exit
    results = []
    for policy in policies:
        def one(rec, policy=policy):
            return replay([rec], bank, policy, stage0)[0]

        results.extend(_map(one, records, args.parallel))
    out = _override(args.out, cfg, "results")
    write_results(out, results)
    _emit(_summary(results))
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    paths = [Path(p) for p in args.results] if args.results else [cfg.path("results")]
    results = []
    for p in paths:
        results.extend(read_results(_existing(p, "results file")))
    by_policy: dict[str, list] = {}
    for r in results:
        by_policy.setdefault(str(r.policy), []).append(r)
    trace_path = Path(args.traces) if args.traces else cfg.path("traces", required=False)
    records = read_traces(trace_path) if trace_path is not None and trace_path.exists() else None
    report = build_report(by_policy, records, args.focus)
    txt, js = write_report(report, cfg.path("report_dir"))
    print(txt.read_text(encoding="utf-8"), end="")
    print(f"wrote {txt} and {js}")
    return 0


COMMANDS = {
    "record": cmd_record,
    "train": cmd_train,
    "tune": cmd_tune,
    "run": cmd_run,
    "replay": cmd_replay,
    "report": cmd_report,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (TandemError, OSError, ValueError) as exc:
        print(f"tandem {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
