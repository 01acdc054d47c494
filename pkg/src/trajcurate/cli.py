"""Command line entry point.

Every stage reads and writes line-delimited files so stages can run one at
a time; ``curate`` runs them all in one pass. Diagnostics go to stderr.

Exit codes: 0 ok, 1 partial (some items failed and were skipped), 2 fatal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from . import config as config_mod
from .curate import CurationReport, histogram, iter_curate, records_for
from .features import FeatureVector, extract, feature_record
from .judge import Judge, JudgeUnavailable, MockJudge, RemoteJudge
from .lrfit import NonFiniteLoss, ScreeningModel, SingleClassData, fit, label
from .mapreduce import map_corpus, dump_records
from .partition import debug_dump, partition
from .screening import decide
from .trajectory import SchemaError, Trajectory, read_trajectories

log = logging.getLogger("trajcurate")

OK, PARTIAL, FATAL = 0, 1, 2


class Fatal(Exception):
    pass


@contextmanager
def atomic_writer(path: str | Path) -> Iterator:
    """Write to a temp file and move it into place only on success."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fh = open(tmp, "w", encoding="utf-8")
    try:
        yield fh
        fh.close()
        os.replace(tmp, path)
    except BaseException:
        fh.close()
        tmp.unlink(missing_ok=True)
        raise


def _need(value, what: str):
    if value is None:
        raise Fatal(f"missing {what} (flag or io section of the config)")
    return value


def _open_trajectories(path: str):
    if not Path(path).is_file():
        raise Fatal(f"input file not found: {path}")
    return read_trajectories(path)


def _load_model(path: str) -> ScreeningModel:
    if not Path(path).is_file():
        raise Fatal(f"model file not found: {path}")
    try:
        return ScreeningModel.from_json(Path(path).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as e:
        raise Fatal(f"bad model file {path}: {e}") from e


class ParseTally:
    """Counts schema errors while passing valid trajectories through."""

    def __init__(self, strict: bool):
        self.strict = strict
        self.errors: list[SchemaError] = []

    def __call__(self, items) -> Iterator[Trajectory]:
        for item in items:
            if isinstance(item, SchemaError):
                log.warning("schema error: %s", item)
                if self.strict:
                    raise Fatal(f"--strict: {item}")
                self.errors.append(item)
                continue
            yield item


def make_judge(cfg: config_mod.PipelineConfig) -> Judge:
    j = cfg.judge
    if j.kind == "mock":
        return MockJudge(memory_cap=j.memory_cap)
    return RemoteJudge(j.endpoint, j.model, api_key_env=j.api_key_env, timeout=j.timeout,
                       max_retries=j.max_retries, max_in_flight=j.concurrency, memory_cap=j.memory_cap)


def _global_judge(cfg, judge):
    return judge if cfg.judge.reduce == "judge" else None


# -- commands ---------------------------------------------------------------


def cmd_extract(args, cfg) -> int:
    src = _need(args.input or cfg.io.trajectories, "input trajectories")
    out = _need(args.output or cfg.io.features, "features output")
    tally = ParseTally(args.strict)
    fcfg = cfg.features.build()
    n = 0
    with atomic_writer(out) as fh:
        for t in tally(_open_trajectories(src)):
            fh.write(json.dumps(feature_record(t, extract(t, config=fcfg), label(t.reward))) + "\n")
            n += 1
    log.info("extracted %d feature records, %d schema errors", n, len(tally.errors))
    if tally.errors:
        print(f"{len(tally.errors)} malformed line(s) skipped", file=sys.stderr)
        return PARTIAL
    return OK


def read_feature_records(path: str) -> list[tuple[FeatureVector, int]]:
    if not Path(path).is_file():
        raise Fatal(f"features file not found: {path}")
    data = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                data.append((FeatureVector.from_dict(d["features"]), int(d["label"])))
            except (ValueError, KeyError, TypeError) as e:
                raise Fatal(f"{path}:{lineno}: bad feature record: {e}") from e
    return data


def cmd_fit(args, cfg) -> int:
    src = _need(args.features or cfg.io.features, "features input")
    out = _need(args.model_out or cfg.io.model, "model output")
    cfg = cfg.override("fit", learning_rate=args.lr, epochs=args.epochs, l2_lambda=args.l2,
                       convergence_tol=args.tol)
    data = read_feature_records(src)
    try:
        model = fit(data, cfg.fit)
    except (SingleClassData, NonFiniteLoss) as e:
        raise Fatal(f"{type(e).__name__}: {e}") from e
    with atomic_writer(out) as fh:
        fh.write(model.to_json() + "\n")
    print(json.dumps(model.fit_report.to_dict(), indent=2), file=sys.stderr)
    return OK


def cmd_screen(args, cfg) -> int:
    src = _need(args.input or cfg.io.trajectories, "input trajectories")
    model = _load_model(_need(args.model or cfg.io.model, "model"))
    kept_path = _need(args.kept or cfg.io.kept, "kept output")
    dec_path = args.decisions or cfg.io.decisions
    cfg = cfg.override("screen", tau_global=args.tau_global)
    tally = ParseTally(args.strict)
    fcfg = cfg.features.build()
    errors = 0
    with atomic_writer(kept_path) as kept:
        dec_fh = open(dec_path, "w", encoding="utf-8") if dec_path else None
        try:
            for t in tally(_open_trajectories(src)):
                d = decide(t, model, cfg.screen.tau_global, fcfg)
                errors += d.error is not None
                if dec_fh:
                    dec_fh.write(d.to_json() + "\n")
                if d.kept:
                    kept.write(t.to_json() + "\n")
        finally:
            if dec_fh:
                dec_fh.close()
    return PARTIAL if tally.errors or errors else OK


def cmd_partition(args, cfg) -> int:
    src = _need(args.input or cfg.io.trajectories, "input trajectories")
    out = _need(args.output or cfg.io.partitions, "partition output")
    cfg = cfg.override("partition", l_min=args.l_min, l_max=args.l_max)
    tally = ParseTally(args.strict)
    with atomic_writer(out) as fh:
        for t in tally(_open_trajectories(src)):
            fh.write(debug_dump(t.task_id, partition(t, cfg.partition)) + "\n")
    return PARTIAL if tally.errors else OK


def _curate_overrides(args, cfg):
    cfg = cfg.override("screen", tau_global=getattr(args, "tau_global", None))
    cfg = cfg.override("curate", tau_seg=args.tau_seg, emit_mode=args.emit_mode)
    cfg = cfg.override("partition", l_min=args.l_min, l_max=args.l_max)
    return cfg.override("judge", endpoint=args.endpoint, model=args.judge_model, kind=args.judge_kind,
                        concurrency=args.concurrency, failure_policy=args.failure_policy)


def _judge_failures(errors) -> tuple[int, bool]:
    unavailable = any(isinstance(getattr(e, "cause", None), JudgeUnavailable) for e in errors)
    return len(errors), unavailable


def cmd_judge(args, cfg) -> int:
    src = _need(args.input or cfg.io.kept, "input (screened) trajectories")
    seg_path = _need(args.segments or cfg.io.segments, "segments output")
    ds_path = args.output or cfg.io.dataset
    cfg = _curate_overrides(args, cfg)
    ccfg = cfg.curation()
    judge = make_judge(cfg)
    tally = ParseTally(args.strict)
    failures = []
    part = lambda t: partition(t, cfg.partition)
    with atomic_writer(seg_path) as seg_fh:
        ds_fh = open(ds_path, "w", encoding="utf-8") if ds_path else None
        try:
            for out in map_corpus(tally(_open_trajectories(src)), part, judge, ccfg.failure_policy,
                                  cfg.judge.concurrency, _global_judge(cfg, judge)):
                if out.error is not None:
                    log.warning("%s", out.error)
                    failures.append(out.error)
                    continue
                for line in dump_records(out):
                    seg_fh.write(line + "\n")
                if ds_fh:
                    for r in records_for(out.trajectory, out.abstract, ccfg, judge.name):
                        ds_fh.write(r.to_json() + "\n")
        finally:
            if ds_fh:
                ds_fh.close()
    n_fail, unavailable = _judge_failures(failures)
    if unavailable:
        print(f"JudgeUnavailable: {failures[0]}", file=sys.stderr)
        return FATAL
    return PARTIAL if n_fail or tally.errors else OK


def cmd_curate(args, cfg) -> int:
    src = _need(args.input or cfg.io.trajectories, "input trajectories")
    model = _load_model(_need(args.model or cfg.io.model, "model"))
    ds_path = _need(args.output or cfg.io.dataset, "dataset output")
    rep_path = args.report or cfg.io.report
    seg_path = args.segments or cfg.io.segments
    cfg = _curate_overrides(args, cfg)
    ccfg = cfg.curation()
    judge = make_judge(cfg)
    if args.strict:
        items = ParseTally(True)(_open_trajectories(src))
    else:
        items = _open_trajectories(src)
    report = CurationReport()
    seg_fh = open(seg_path, "w", encoding="utf-8") if seg_path else None

    def on_outcome(out):
        if seg_fh:
            for line in dump_records(out):
                seg_fh.write(line + "\n")

    try:
        with atomic_writer(ds_path) as fh:
            for r in iter_curate(items, model, judge, ccfg, report, cfg.partition, cfg.features.build(),
                                 cfg.judge.concurrency, _global_judge(cfg, judge), on_outcome=on_outcome):
                fh.write(r.to_json() + "\n")
    finally:
        if seg_fh:
            seg_fh.close()
    rep = report.to_dict()
    if rep_path:
        Path(rep_path).write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(rep["counts"]), file=sys.stderr)
    if any(e.get("kind") == "JudgeUnavailable" for e in rep["errors"]):
        return FATAL
    return PARTIAL if rep["errors"] else OK


def build_report(seg_path: str) -> dict:
    scores, e_global, loops = [], [], 0
    tasks = set()
    with open(seg_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            tasks.add(d.get("task_id"))
            if d.get("type") == "global":
                e_global.append(float(d["e_global"]))
                loops += bool(d.get("loop_flag"))
            else:
                scores.append(float(d["score"]))
    return {
        "trajectories": len(e_global),
        "segments": len(scores),
        "loop_flagged": loops,
        "segment_score_histogram": histogram(scores),
        "e_global_histogram": histogram(e_global),
        "e_global_summary": {
            "n": len(e_global),
            "mean": sum(e_global) / len(e_global) if e_global else None,
            "min": min(e_global, default=None),
            "max": max(e_global, default=None),
        },
    }


def cmd_report(args, cfg) -> int:
    src = _need(args.segments or cfg.io.segments, "segments input")
    if not Path(src).is_file():
        raise Fatal(f"segments file not found: {src}")
    rep = build_report(src)
    out = args.output or cfg.io.report
    if out:
        Path(out).write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    h = rep["segment_score_histogram"]
    print(f"{rep['trajectories']} trajectories, {rep['segments']} segments", file=sys.stderr)
    for lo, c in zip(h["edges"], h["counts"]):
        print(f"  score {lo:4.1f}+ | {'#' * min(c, 60)} {c}", file=sys.stderr)
    return OK


# -- argument parsing -------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="pipeline YAML config")
    p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS,
                   help="treat any malformed input line as fatal")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def _curate_flags(p: argparse.ArgumentParser):
    p.add_argument("--tau-seg", type=float)
    p.add_argument("--emit-mode", choices=("segments", "full_trajectory", "both"))
    p.add_argument("--l-min", type=int)
    p.add_argument("--l-max", type=int)
    p.add_argument("--judge-kind", choices=("mock", "remote"))
    p.add_argument("--endpoint")
    p.add_argument("--judge-model")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--failure-policy", choices=("exclude", "degrade"))


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="trajcurate", parents=[common],
                                     description="Curate agent trajectories into an SFT dataset.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="trajectories -> feature records")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("fit", parents=[common], help="feature records -> screening model")
    p.add_argument("--features")
    p.add_argument("--model-out")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--tol", type=float)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("screen", parents=[common], help="apply the screening model")
    p.add_argument("--in", dest="input")
    p.add_argument("--model")
    p.add_argument("--kept")
    p.add_argument("--decisions")
    p.add_argument("--tau-global", type=float)
    p.set_defaults(fn=cmd_screen)

    p = sub.add_parser("partition", parents=[common], help="dump safe-split batch boundaries")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--l-min", type=int)
    p.add_argument("--l-max", type=int)
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("judge", parents=[common], help="map/reduce screened trajectories")
    p.add_argument("--in", dest="input")
    p.add_argument("--segments")
    p.add_argument("--out", dest="output", help="optional SFT dataset output")
    p.add_argument("--tau-global", type=float, help="recorded in dataset provenance only")
    _curate_flags(p)
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("curate", parents=[common], help="run the whole pipeline")
    p.add_argument("--in", dest="input")
    p.add_argument("--model")
    p.add_argument("--out", dest="output")
    p.add_argument("--report")
    p.add_argument("--segments")
    p.add_argument("--tau-global", type=float)
    _curate_flags(p)
    p.set_defaults(fn=cmd_curate)

    p = sub.add_parser("report", parents=[common], help="summarize a segment dump")
    p.add_argument("--segments")
    p.add_argument("--out", dest="output")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("strict", False), ("seed", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_mod.load(args.config)
        cfg = cfg.override("fit", seed=args.seed)
        return args.fn(args, cfg)
    except (Fatal, config_mod.ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return FATAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return FATAL


if __name__ == "__main__":
    sys.exit(main())
