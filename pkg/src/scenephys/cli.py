"""``scenephys`` command line: evaluate, optimize, grpo-train, gen-corpus,
plot and report.

Exit codes: 0 success, 1 internal error, 2 invalid input or configuration.
Every command that writes a directory also writes ``run_config.json`` (the
fully resolved configuration plus the command and its inputs).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import traceback
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .config import ConfigError, RunConfig, resolve
from .corpus import CorpusError, generate_scene, labels_to_json
from .evaluator import CSV_COLUMNS, EvaluatorConfig, PhysicsReport, evaluate
from .geometry import GeometryError
from .navigation import reachability
from .plot import render_svg
from .scene import SceneError, dumps_scene, load_scene
from .tto import TtoConfig, optimize

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2

# derived outputs that directory scans skip
_DERIVED_SUFFIXES = (".labels.json", ".report.json", ".before.json", ".after.json", ".refined.json")
_SKIP_NAMES = {"run_config.json", "manifest.json", "proxy.json", "generator.json"}
_INPUT_ERRORS = (SceneError, GeometryError, OSError, UnicodeDecodeError, ValueError)


class InputError(Exception):
    pass


def write_text(path: Path, text: str) -> None:
    """Write through a temporary sibling so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _fmt(v: float) -> str:
    return repr(float(v))


def scene_name(path: Path) -> str:
    name = path.name
    return name[: -len(".json")] if name.endswith(".json") else path.stem


def collect_inputs(paths: Iterable[str], suffix: str = ".json", skip_derived: bool = True) -> list[Path]:
    """Files named directly plus matching files in named directories, sorted
    by scene name. Duplicate names are an input error."""
    found: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if not f.is_file() or not f.name.endswith(suffix) or f.name in _SKIP_NAMES:
                    continue
                if skip_derived and f.name.endswith(_DERIVED_SUFFIXES):
                    continue
                found.append(f)
        elif p.exists():
            found.append(p)
        else:
            raise InputError(f"{raw}: no such file or directory")
    by_name: dict[str, Path] = {}
    for f in found:
        name = scene_name(f)
        if name in by_name and by_name[name].resolve() != f.resolve():
            raise InputError(f"duplicate scene name {name!r}: {by_name[name]} and {f}")
        by_name[name] = f
    return [by_name[k] for k in sorted(by_name)]


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def aggregate_csv(reports: dict[str, PhysicsReport]) -> str:
    """One row per scene (sorted by name) in report-column order, then a
    ``mean`` row. Sums run in name order so the bytes do not depend on the
    order scenes were given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scene",) + CSV_COLUMNS)
    names = sorted(reports)
    rows = [reports[n].csv_row() for n in names]
    for n, row in zip(names, rows):
        w.writerow([n] + [_fmt(v) for v in row])
    if rows:
        w.writerow(["mean"] + [_fmt(sum(r[i] for r in rows) / len(rows)) for i in range(len(CSV_COLUMNS))])
    return buf.getvalue()


def write_run_config(out: Path, config: RunConfig, command: str, inputs: Sequence[str] = ()) -> None:
    d = {"command": command, "inputs": [str(p) for p in inputs], "config": config.to_dict()}
    write_text(out / "run_config.json", json.dumps(d, indent=2, sort_keys=True) + "\n")


def _error(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# --- workers (module level so they pickle) -------------------------------------

def _evaluate_task(args: tuple[str, EvaluatorConfig]) -> tuple[str, str | None, str | None]:
    path, cfg = args
    try:
        scene = load_scene(path)
        return path, evaluate(scene, cfg).to_json(), None
    except _INPUT_ERRORS as exc:
        return path, None, f"{type(exc).__name__}: {exc}"


def _optimize_task(args: tuple[str, EvaluatorConfig, TtoConfig]) -> tuple[str, dict | None, str | None]:
    path, ecfg, tcfg = args
    try:
        scene = load_scene(path)
        before = evaluate(scene, ecfg)
        res = optimize(scene, tcfg)
        after = evaluate(res.scene, ecfg)
    except _INPUT_ERRORS as exc:
        return path, None, f"{type(exc).__name__}: {exc}"
    return path, {
        "refined": dumps_scene(res.scene),
        "before": before.to_json(),
        "after": after.to_json(),
        "trace": res.trace,
        "stopped_nonfinite": res.stopped_nonfinite,
    }, None


def _corpus_task(args) -> tuple[str, str]:
    cfg, i = args
    scene, labels = generate_scene(cfg, i)
    return dumps_scene(scene), labels_to_json(labels)


# --- commands --------------------------------------------------------------------

def cmd_evaluate(paths: Sequence[str], config: RunConfig, out: Path) -> int:
    files = collect_inputs(paths)
    if not files:
        raise InputError("no scene files found")
    results = _pool_map(_evaluate_task, [(str(f), config.evaluator) for f in files], config.run.workers)
    reports: dict[str, PhysicsReport] = {}
    status = EXIT_OK
    for path, text, err in results:
        name = scene_name(Path(path))
        if err is not None:
            _error(f"{path}: {err}")
            status = EXIT_INVALID
            continue
        write_text(out / f"{name}.report.json", text)
        reports[name] = PhysicsReport.from_dict(json.loads(text))
    write_text(out / "aggregate.csv", aggregate_csv(reports))
    write_run_config(out, config, "evaluate", paths)
    print(f"evaluated {len(reports)} of {len(files)} scenes -> {out / 'aggregate.csv'}")
    return status


def delta_csv(pairs: dict[str, tuple[PhysicsReport, PhysicsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scene", "metric", "before", "after", "delta"))
    for name in sorted(pairs):
        b, a = (r.csv_row() for r in pairs[name])
        for col, vb, va in zip(CSV_COLUMNS, b, a):
            w.writerow([name, col, _fmt(vb), _fmt(va), _fmt(va - vb)])
    return buf.getvalue()


def cmd_optimize(paths: Sequence[str], config: RunConfig, out: Path) -> int:
    files = collect_inputs(paths)
    if not files:
        raise InputError("no scene files found")
    tasks = [(str(f), config.evaluator, config.tto) for f in files]
    results = _pool_map(_optimize_task, tasks, config.run.workers)
    pairs: dict[str, tuple[PhysicsReport, PhysicsReport]] = {}
    status = EXIT_OK
    for path, res, err in results:
        name = scene_name(Path(path))
        if err is not None:
            _error(f"{path}: {err}")
            status = EXIT_INVALID
            continue
        write_text(out / f"{name}.refined.json", res["refined"])
        write_text(out / f"{name}.before.json", res["before"])
        write_text(out / f"{name}.after.json", res["after"])
        trace = "step,energy\n" + "".join(f"{k},{_fmt(e)}\n" for k, e in enumerate(res["trace"]))
        write_text(out / f"{name}.trace.csv", trace)
        if res["stopped_nonfinite"]:
            print(f"warning: {path}: non-finite energy, kept the last finite iterate", file=sys.stderr)
        pairs[name] = tuple(PhysicsReport.from_dict(json.loads(res[k])) for k in ("before", "after"))
    write_text(out / "delta.csv", delta_csv(pairs))
    write_text(out / "before.csv", aggregate_csv({n: p[0] for n, p in pairs.items()}))
    write_text(out / "after.csv", aggregate_csv({n: p[1] for n, p in pairs.items()}))
    write_run_config(out, config, "optimize", paths)
    print(f"optimized {len(pairs)} of {len(files)} scenes -> {out / 'delta.csv'}")
    return status


def cmd_grpo_train(config: RunConfig, out: Path) -> int:
    from .grpo import pretrained_generator, proxy_validation, train

    g = config.grpo
    gcfg = config.grpo_config()
    gen = pretrained_generator(g.template, seed=gcfg.seed, data_size=g.dataset_size, steps=g.pretrain_steps)
    write_text(out / "pretrained.json", gen.to_json() + "\n")
    result = train(gen, gcfg)
    write_text(out / "history.csv", result.history_csv())
    for step, text in result.checkpoints:
        write_text(out / "checkpoints" / f"step_{step:06d}.json", text + "\n")
    write_text(out / "generator.json", result.generator.to_json() + "\n")
    write_text(out / "ema.json", result.ema.to_json() + "\n")
    summary: dict = {"halted": result.halted, "steps_run": len(result.history)}
    if g.validation_groups:
        summary.update(proxy_validation(result.generator, g.validation_groups, gcfg.fm_samples,
                                        g.validation_reference_samples, seed=gcfg.seed, K=gcfg.K,
                                        ranges=gcfg.perturbation, sample_steps=gcfg.sample_steps))
    write_text(out / "proxy.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_run_config(out, config, "grpo-train")
    if result.history:
        print(f"trained {len(result.history)} steps; final mean reward {result.history[-1]['mean_reward']:.4f}")
    if "spearman" in summary:
        print(f"proxy validation: spearman {summary['spearman']:.4f}, kendall {summary['kendall']:.4f}")
    if result.halted:
        _error("training halted on a non-finite loss or gradient")
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_gen_corpus(config: RunConfig, out: Path) -> int:
    cfg = config.corpus
    results = _pool_map(_corpus_task, [(cfg, i) for i in range(cfg.count)], config.run.workers)
    kinds: Counter = Counter()
    derived: Counter = Counter()
    objects = 0
    for i, (scene_text, labels_text) in enumerate(results):
        write_text(out / f"scene_{i:04d}.json", scene_text)
        write_text(out / f"scene_{i:04d}.labels.json", labels_text)
        objects += len(json.loads(scene_text)["objects"])
        for lab in json.loads(labels_text):
            (derived if lab["derived"] else kinds)[lab["kind"]] += 1
    manifest = {
        "seed": cfg.seed,
        "count": cfg.count,
        "objects": objects,
        "injected": dict(sorted(kinds.items())),
        "derived": dict(sorted(derived.items())),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    write_text(out / "manifest.json", text)
    write_run_config(out, config, "gen-corpus")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(scene_path: str, report_path: str | None, out_svg: Path, config: RunConfig,
             show_reach: bool = False, show_occupancy: bool = False) -> int:
    try:
        scene = load_scene(scene_path)
    except _INPUT_ERRORS as exc:
        raise InputError(f"{scene_path}: {type(exc).__name__}: {exc}") from exc
    report = None
    if report_path is not None:
        try:
            report = PhysicsReport.from_dict(json.loads(Path(report_path).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{report_path}: invalid report: {exc}") from exc
    reach = reachability(scene, config.evaluator.reach) if (show_reach or show_occupancy) else None
    write_text(out_svg, render_svg(scene, report, reach, show_occupancy))
    return EXIT_OK


def cmd_report(paths: Sequence[str], out_csv: Path) -> int:
    files = collect_inputs(paths, suffix=".report.json", skip_derived=False)
    if not files:
        raise InputError("no .report.json files found")
    reports: dict[str, PhysicsReport] = {}
    status = EXIT_OK
    for f in files:
        try:
            reports[f.name[: -len(".report.json")]] = PhysicsReport.from_dict(json.loads(f.read_text("utf-8")))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            _error(f"{f}: invalid report: {exc}")
            status = EXIT_INVALID
    write_text(out_csv, aggregate_csv(reports))
    print(f"aggregated {len(reports)} reports -> {out_csv}")
    return status


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--set", dest="sets", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (repeatable, applied last)")

    p = argparse.ArgumentParser(prog="scenephys", description="Physical plausibility tools for indoor scene layouts.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("evaluate", parents=[common], help="score scenes and write reports plus an aggregate CSV")
    s.add_argument("paths", nargs="+", help="scene JSON files or directories")
    s.add_argument("-o", "--out", required=True, help="output directory")

    s = sub.add_parser("optimize", parents=[common], help="refine scenes by test-time optimization")
    s.add_argument("paths", nargs="+", help="scene JSON files or directories")
    s.add_argument("-o", "--out", required=True, help="output directory")

    s = sub.add_parser("grpo-train", parents=[common], help="pretrain and preference-train the toy generator")
    s.add_argument("-o", "--out", required=True, help="output directory")

    s = sub.add_parser("gen-corpus", parents=[common], help="generate scenes with injected violations")
    s.add_argument("-o", "--out", required=True, help="output directory")

    s = sub.add_parser("plot", parents=[common], help="top-down SVG of a scene")
    s.add_argument("scene", help="scene JSON file")
    s.add_argument("--report", help="report JSON used to color objects")
    s.add_argument("--reach", action="store_true", help="draw failed reachability pairs")
    s.add_argument("--occupancy", action="store_true", help="shade blocked occupancy cells")
    s.add_argument("-o", "--out", required=True, help="output SVG path")

    s = sub.add_parser("report", parents=[common], help="re-aggregate existing report JSON files")
    s.add_argument("paths", nargs="+", help="report JSON files or directories")
    s.add_argument("-o", "--out", required=True, help="output CSV path")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve(args.config, args.sets)
        out = Path(args.out)
        if args.command == "evaluate":
            return cmd_evaluate(args.paths, config, out)
        if args.command == "optimize":
            return cmd_optimize(args.paths, config, out)
        if args.command == "grpo-train":
            return cmd_grpo_train(config, out)
        if args.command == "gen-corpus":
            return cmd_gen_corpus(config, out)
        if args.command == "plot":
            return cmd_plot(args.scene, args.report, out, config, args.reach, args.occupancy)
        return cmd_report(args.paths, out)
    except (ConfigError, InputError, CorpusError) as exc:
        _error(str(exc))
        return EXIT_INVALID
    except Exception:  # noqa: BLE001 - last-resort handler maps to the internal-error exit code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
