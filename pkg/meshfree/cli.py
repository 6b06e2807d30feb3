import argparse
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from meshfree.checks import run_checks
from meshfree.config import LOG_LEVEL, PROBLEMS, RUNS_DIR, RunConfig, parse_config
from meshfree.driver import build_problem, run_config, run_study
from meshfree.errors import ConfigError, HpAdaptError
from meshfree.problems import loading_conditions
from meshfree.records import RunRecorder
from meshfree.schemas import IterationRecord

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def setup_logging(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT,
                        handlers=[logging.FileHandler(out_dir / "solver.log"), logging.StreamHandler()],
                        force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshfree", description="Mesh-free hp-adaptive RBF-FD solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--problem", choices=PROBLEMS, help="Benchmark problem.")
        p.add_argument("--config", help="JSON run configuration file.")
        p.add_argument("--seed", type=int, help="Node generation seed.")
        p.add_argument("--out", help="Run directory (default: HPADAPT_RUNS_DIR/<problem>-<timestamp>).")

    run = sub.add_parser("run", help="Adaptive solve of one benchmark.")
    add_common(run)
    run.add_argument("--max-iter", type=int, dest="n_iter", help="Number of adaptive iterations N_iter.")
    run.add_argument("--n-max", type=int, dest="n_max", help="Node budget above which h-refinement stops.")
    run.add_argument("--gamma", type=float, help="Stop once eta_max has dropped by this factor.")
    run.add_argument("--ref", dest="reference_csv", help="Reference surface traction CSV (x,sigma_xx in mm, MPa).")
    run.add_argument("--indicator", choices=("imex", "exact"), help="Error indicator.")

    study = sub.add_parser("study", help="Unrefined convergence study over an (h, m, seed) grid.")
    add_common(study)

    sub.add_parser("check", help="Analytic self-checks.")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    text = None
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file {args.config}: {e}") from e
    overrides = {key: getattr(args, key, None)
                 for key in ("problem", "seed", "n_iter", "n_max", "gamma", "reference_csv", "indicator")}
    overrides["output_dir"] = args.out
    return parse_config(text, **overrides)


def output_dir(config: RunConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Path(RUNS_DIR) / f"{config.problem}-{datetime.now().strftime('%Y%m%d-%H%M%S')}"


def summary_line(record: IterationRecord) -> str:
    line = f"iter {record.iteration:3d}  N={record.n_nodes:7d}  eta_max={record.eta_max:.3e}"
    if record.einf is not None:
        line += f"  e_inf={record.einf:.3e}"
    if record.mean_abs_dsxx is not None:
        line += f"  mean|dsxx|={record.mean_abs_dsxx / 1e6:.3f} MPa"
    return line


def _print_loading(config: RunConfig) -> None:
    problem = build_problem(config)
    hertz = problem.metadata["hertz"]
    f = config.fretting
    print(f"Hertz: a={hertz.a * 1e3:.4f} mm  p0={hertz.p0 / 1e6:.1f} MPa  c={hertz.c * 1e3:.4f} mm  "
          f"e={hertz.e * 1e3:.4f} mm", flush=True)
    for condition, (value, holds) in loading_conditions(f.normal_force_n, f.tangential_force_n,
                                                        f.axial_stress_mpa * 1e6, f.friction, hertz.p0).items():
        print(f"loading: {condition}: {value:.4g} ({'holds' if holds else 'fails'})", flush=True)


def _fail(recorder: RunRecorder, message: str) -> int:
    recorder.finish("failed", message)
    print(message, file=sys.stderr, flush=True)
    return EXIT_FAILURE


def cmd_run(config: RunConfig, out: Path) -> int:
    recorder = RunRecorder(out, config.problem, config.seed, json.loads(config.to_json()))
    try:
        if config.problem == "fretting":
            _print_loading(config)
        result = run_config(config, recorder, on_iteration=lambda r: print(summary_line(r), flush=True))
    except HpAdaptError as e:
        return _fail(recorder, f"[{e.module}] {e}")
    except (ValueError, OSError) as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return _fail(recorder, f"[driver] {e}")
    recorder.finish("ok")
    best = result.records[result.best_iteration]
    print(f"best iteration {best.iteration}: N={best.n_nodes}"
          + (f", e_inf={best.einf:.3e}" if best.einf is not None else "")
          + f"; records in {out}", flush=True)
    return EXIT_OK


def cmd_study(config: RunConfig, out: Path) -> int:
    recorder = RunRecorder(out, config.problem, config.seed, json.loads(config.to_json()))
    try:
        rows, summary = run_study(config, recorder)
    except HpAdaptError as e:
        return _fail(recorder, f"[{e.module}] {e}")
    except ValueError as e:
        logger.error(f"Study failed: {e}", exc_info=True)
        return _fail(recorder, f"[driver] {e}")
    recorder.finish("ok")
    failed = sum(row.failed for row in rows)
    print(summary.to_string(index=False), flush=True)
    print(f"{len(rows)} cells, {failed} failed; results in {out}", flush=True)
    return EXIT_OK


def cmd_check() -> int:
    results = run_checks()
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}", flush=True)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT, force=True)
        return cmd_check()

    try:
        config = load_config(args)
    except ConfigError as e:
        print(f"[{e.module}] {e}", file=sys.stderr, flush=True)
        return EXIT_USAGE
    out = output_dir(config)
    setup_logging(out)
    logger.info(f"Starting '{args.command}' for {config.problem} in {out} (pid {os.getpid()}).")
    if args.command == "run":
        return cmd_run(config, out)
    return cmd_study(config, out)


if __name__ == "__main__":
    sys.exit(main())
