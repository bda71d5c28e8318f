"""Command-line entry point: ``silbench <command> ...``.

Exit codes: 0 on success, 2 on invalid input, 3 when a task fails.

Output directories resolve as ``--out`` flag, then ``$SILBENCH_OUT_DIR``,
then the scenario file's ``output_dir`` field, then the current directory.
Seeds resolve the same way through ``--seed``, ``$SILBENCH_SEED`` and the
scenario's ``rng_seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .ekf import TRACE_COLUMNS
from .errors import SilError, ValidationError
from .harness import (
    TASKS,
    SilLoop,
    TaskConfig,
    TaskResult,
    generate_pseudo_real,
    load_results,
    read_stream,
    run_task_te,
    run_task_th,
    run_task_tl,
    run_task_tp,
    save_results,
    write_report,
)
from .quality import EnvSearchSpace, write_fit_report
from .scene import Scenario, bundled_path, load_env, load_scenario, save_scenario

OUT_ENV = "SILBENCH_OUT_DIR"
SEED_ENV = "SILBENCH_SEED"


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    b = bundled_path(arg)
    if b.exists():
        return b
    raise ValidationError(f"no scenario file or bundled scenario named {arg!r}")


def _scenario_field(path: Path, key: str):
    try:
        return json.loads(path.read_text()).get(key)
    except (OSError, json.JSONDecodeError):
        return None


def resolve_out_dir(flag: Optional[str], scenario_path: Optional[Path] = None) -> Path:
    if flag:
        return Path(flag)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if scenario_path is not None:
        v = _scenario_field(scenario_path, "output_dir")
        if v:
            return Path(v)
    return Path(".")


def resolve_seed(flag: Optional[int], scenario: Optional[Scenario] = None) -> int:
    if flag is not None:
        return flag
    if os.environ.get(SEED_ENV):
        try:
            return int(os.environ[SEED_ENV])
        except ValueError:
            raise ValidationError(f"${SEED_ENV} must be an integer") from None
    return scenario.rng_seed if scenario is not None else 0


def _load(arg: str) -> tuple[Path, Scenario]:
    p = _scenario_path(arg)
    return p, load_scenario(p)


def _grid(path: str) -> EnvSearchSpace:
    try:
        return EnvSearchSpace.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read grid {path}: {exc}") from None


def cmd_gen_scenario(args) -> int:
    _, s = _load(args.name)
    if args.env:
        s = s.with_env(load_env(args.env))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(s, out)
    print(out)
    return 0


def cmd_gen_stream(args) -> int:
    _, s = _load(args.scenario)
    env = load_env(args.env) if args.env else None
    seed = resolve_seed(args.seed, s)
    path = generate_pseudo_real(s, env, seed, args.out, args.duration, args.images, args.image_every)
    print(path)
    return 0


def _write_logs(out: Path, name: str, header, rows) -> None:
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".12g") if isinstance(v, float) else v for v in row])


def cmd_run(args) -> int:
    spath, s = _load(args.scenario)
    task = TaskConfig(args.task.upper(), env=load_env(args.env) if args.env else None,
                      seed=resolve_seed(args.seed, s))
    out = resolve_out_dir(args.out, spath)
    out.mkdir(parents=True, exist_ok=True)
    _, stream = read_stream(args.stream)
    if task.task == "TP":
        _, result = run_task_tp(s, task.env, stream=stream, seed=task.seed)
    elif task.is_localization:
        tl = run_task_tl(s, task.task, stream=stream, env=task.env, seed=task.seed)
        result = tl.result
        _write_logs(out, "trace.csv", TRACE_COLUMNS, tl.trace)
    elif task.task == "TH":
        result = run_task_th(s, task.env, seed=task.seed, stream=stream)
        _write_logs(out, "handles.csv",
                    ("t", "component", "view", "raw_deg", "smoothed_deg", "truth_deg", "confidence"),
                    result.logs["handles"])
    else:
        loop = SilLoop(s, task)
        pairs, rows = loop.run(stream)
        sims = [v for _, n, v in rows if n == "similarity"]
        summary = {"similarity_mean": sum(sims) / len(sims)} if sims else {}
        if args.grid:
            fit, default, te = run_task_te(s, _grid(args.grid), references=stream, seed=task.seed, n_refs=0)
            write_fit_report(fit, _grid(args.grid), out / "fit_report.json")
            summary.update(te.summary)
            rows = rows + te.rows
        result = TaskResult("TE", rows, summary)
    save_results([result], out / "results.json")
    for p in write_report([result], out, "csv"):
        print(p)
    for k, v in sorted(result.summary.items()):
        print(f"{result.task} {k} = {v:.6g}")
    return 0


def cmd_fit_env(args) -> int:
    spath, s = _load(args.scenario)
    _, refs = read_stream(args.refs)
    space = _grid(args.grid)
    fit, default, _ = run_task_te(s, space, references=refs, seed=resolve_seed(args.seed, s), n_refs=0)
    out = resolve_out_dir(args.out, spath)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fit_report.json"
    write_fit_report(fit, space, path)
    print(path)
    print(f"winner attenuation={list(fit.env.attenuation)} background={list(fit.env.background)} "
          f"noise={fit.env.pixel_noise_sigma} score={fit.score:.6f} default={default:.6f}")
    return 0


def cmd_report(args) -> int:
    results = []
    for p in args.results:
        results.extend(load_results(p))
    out = resolve_out_dir(args.out)
    for p in write_report(results, out, args.format):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="silbench", description="Simulation-in-the-loop benchmarking.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenario", help="write a scenario file (bundled fixture by default)")
    p.add_argument("--name", default="dexrov-panel", help="bundled scenario name or scenario path")
    p.add_argument("--env", help="environment file or bundled name (e0, estar) to embed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_scenario)

    p = sub.add_parser("gen-stream", help="generate a pseudo-real recorded stream")
    p.add_argument("--scenario", default="dexrov-panel")
    p.add_argument("--env", help="environment file or bundled name; scenario env if omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float)
    p.add_argument("--images", choices=("none", "roi", "full"), default="none")
    p.add_argument("--image-every", type=int, default=1)
    p.set_defaults(fn=cmd_gen_stream)

    p = sub.add_parser("run", help="replay a stream through the loop for one task")
    p.add_argument("--task", required=True, type=str.lower, choices=[t.lower() for t in TASKS])
    p.add_argument("--scenario", default="dexrov-panel")
    p.add_argument("--stream", required=True)
    p.add_argument("--env", help="simulation-side environment override")
    p.add_argument("--grid", help="search grid JSON (task te)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("fit-env", help="grid-search environment parameters against reference images")
    p.add_argument("--scenario", default="dexrov-panel")
    p.add_argument("--refs", required=True, help="stream file whose samples carry images")
    p.add_argument("--grid", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_fit_env)

    p = sub.add_parser("report", help="re-format saved run results")
    p.add_argument("results", nargs="+", help="results.json files written by 'run'")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SilError, OSError) as exc:
        print(f"task failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
