import os
import subprocess
import sys

from dagster import get_dagster_logger, op

from meshfree.config import RUNS_DIR
from meshfree.records import read_records

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BENCHMARK_DIR = os.path.join(PROJECT_ROOT, RUNS_DIR, "benchmarks")
BENCHMARK_MAX_ITER = os.getenv("HPADAPT_BENCHMARK_MAX_ITER", "10")
BENCHMARK_N_MAX = os.getenv("HPADAPT_BENCHMARK_N_MAX", "30000")
FRETTING_REFERENCE_CSV = os.getenv("HPADAPT_FRETTING_REFERENCE_CSV")


def _run_cli(label: str, args):
    """Run the solver CLI as a subprocess, logging its output; failures are logged and re-raised."""
    logger = get_dagster_logger()
    logger.info(f"Starting {label}...")
    try:
        result = subprocess.run(
            [sys.executable, "-m", "meshfree", *args],
            check=True,
            capture_output=True,
            text=True,
            cwd=PROJECT_ROOT
        )
        logger.info(f"{label} stdout:\n{result.stdout}")
        if result.stderr:
            logger.warning(f"{label} stderr:\n{result.stderr}")
        logger.info(f"{label} completed.")
        return result
    except subprocess.CalledProcessError as e:
        logger.error(f"{label} failed: {e}")
        logger.error(f"Stdout: {e.stdout}")
        logger.error(f"Stderr: {e.stderr}")
        raise
    except Exception as e:
        logger.error(f"An unexpected error occurred during {label}: {e}")
        raise


def _benchmark(problem: str, extra=()):
    out = os.path.join(BENCHMARK_DIR, problem)
    _run_cli(f"{problem} benchmark", ["run", "--problem", problem, "--out", out,
                                      "--max-iter", BENCHMARK_MAX_ITER, "--n-max", BENCHMARK_N_MAX, *extra])
    return out


@op
def run_self_checks_op():
    _run_cli("self-checks", ["check"])
    return "Self-checks passed"


@op
def run_peak_benchmark_op(checks_result):
    return _benchmark("peak")


@op
def run_fretting_benchmark_op(checks_result):
    extra = ["--ref", FRETTING_REFERENCE_CSV] if FRETTING_REFERENCE_CSV else []
    return _benchmark("fretting", extra)


@op
def run_boussinesq_benchmark_op(checks_result):
    return _benchmark("boussinesq")


@op
def summarize_benchmarks_op(peak_dir, fretting_dir, boussinesq_dir):
    """
    Collects the last record of every benchmark run into one summary.
    """
    logger = get_dagster_logger()
    summary = {}
    for run_dir in (peak_dir, fretting_dir, boussinesq_dir):
        records = read_records(run_dir)
        last = records[-1]
        summary[os.path.basename(run_dir)] = {
            "iterations": len(records),
            "n_nodes": last.n_nodes,
            "eta_max": last.eta_max,
            "einf": min((r.einf for r in records if r.einf is not None), default=None),
        }
        logger.info(f"{run_dir}: {summary[os.path.basename(run_dir)]}")
    return summary
