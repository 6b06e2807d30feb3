from dagster import job, repository, schedule

from .ops import (
    run_self_checks_op,
    run_peak_benchmark_op,
    run_fretting_benchmark_op,
    run_boussinesq_benchmark_op,
    summarize_benchmarks_op
)


@job(name="benchmark_suite")
def benchmark_suite_job():

    checks_result = run_self_checks_op()

    peak_dir = run_peak_benchmark_op(checks_result)

    fretting_dir = run_fretting_benchmark_op(checks_result)

    boussinesq_dir = run_boussinesq_benchmark_op(checks_result)

    summarize_benchmarks_op(peak_dir, fretting_dir, boussinesq_dir)


@schedule(
    cron_schedule="0 2 * * *",
    job_name="benchmark_suite",
    execution_timezone="UTC"
)
def nightly_benchmark_schedule(context):
    return {}


@repository
def meshfree_benchmarks_repo():
    return [
        benchmark_suite_job,
        nightly_benchmark_schedule
    ]
