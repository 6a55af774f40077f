"""Fitness workers: wrap the hardware model, the native trainer, and a
canned-metric stub behind the common job-in/result-out interface."""

from __future__ import annotations

from typing import Callable

from .config import HwConfig
from .dataset import Dataset
from .dispatch import EvalJob, EvalResult, failed_result
from .hwmodel import ModelError, ResourceModel, SystolicConfig, estimate
from .nnsim import TrainingDiverged, train


def make_hwdb_worker(hw: HwConfig, resources: ResourceModel = ResourceModel(),
                     screen_feasibility: bool = True) -> Callable[[EvalJob], EvalResult]:
    """Analytical-model worker: returns the five hardware metrics.

    Configurations that fail the resource screen come back as failed results,
    so the search only rewards designs believed to synthesize.
    """

    def worker(job: EvalJob) -> EvalResult:
        desc = job.network
        if desc.systolic is None:
            return failed_result(job, "network description has no systolic configuration")
        try:
            cfg = SystolicConfig.from_desc(desc.systolic, freq_mhz=hw.freq)
            est = estimate(desc, cfg, hw, resources)
        except ModelError as exc:
            return failed_result(job, str(exc))
        if screen_feasibility and not est.feasible:
            return EvalResult(
                job_id=job.job_id, genome_id=job.genome_id, eval_type=job.eval_type,
                metrics=est.metrics(), status="failed",
                diagnostics=f"resource budget exceeded: dsp {est.dsp_est:.0f}/{hw.dsp}, "
                            f"mem {est.mem_kb_est:.0f}/{hw.sram}",
            )
        return EvalResult(job_id=job.job_id, genome_id=job.genome_id,
                          eval_type=job.eval_type, metrics=est.metrics())

    return worker


def make_sim_worker(data: Dataset, base_seed: int = 0,
                    train_subset: int | None = None) -> Callable[[EvalJob], EvalResult]:
    """Trainer worker: trains the described network and reports test accuracy.

    The training seed derives from the genome id so results are reproducible
    and independent of evaluation order. ``train_subset`` caps the training
    rows for desk-scale runs.
    """
    train_data = data if train_subset is None else data.subset(train_subset)

    def worker(job: EvalJob) -> EvalResult:
        epochs = int(job.params.get("epochs", 1))
        batch_size = int(job.params.get("batchSize", job.network.batch))
        seed = int(job.params.get("seed", base_seed * 1_000_003 + job.genome_id))
        try:
            _, report = train(job.network, train_data, epochs=epochs,
                              batch_size=batch_size, seed=seed)
        except TrainingDiverged as exc:
            return failed_result(job, str(exc))
        return EvalResult(
            job_id=job.job_id, genome_id=job.genome_id, eval_type=job.eval_type,
            metrics={"accuracy": report.accuracy, "epochs": float(report.epochs),
                     "batch_size": float(report.batch_size)},
        )

    return worker


def make_phys_stub(metrics: dict[str, float] | None = None) -> Callable[[EvalJob], EvalResult]:
    """Stub for the hardware-compile worker: echoes canned metrics.

    Keeps the protocol path testable; the real synthesis backend is a
    separate deployment concern.
    """
    canned = dict(metrics or {"phys_metric": 0.0})

    def worker(job: EvalJob) -> EvalResult:
        return EvalResult(job_id=job.job_id, genome_id=job.genome_id,
                          eval_type=job.eval_type, metrics=dict(canned))

    return worker
