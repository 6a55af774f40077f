"""Analytical performance and resource model for the 2D systolic array.

Maps a network description onto an array configuration and returns the five
fitness metrics (total time, potential and effective GOP/s, images/s,
latency) plus a resource feasibility screen, without touching hardware.

Timing model per layer (GEMM of M x K by K x N):
  - compute: each PE consumes one vec-wide vector per cycle and owns
    interleave^2 accumulators, so one output block costs (K'/V) * I^2 cycles
    and the layer costs (M'/BH) * (N'/BW) * (K'/V) * I^2.
  - drain: the global drain moves one element per cycle and the flush
    sequence serializes it against compute, adding M' * N' cycles.
  - memory: every A/B block is streamed once per output block it feeds,
    plus one write of the padded output; the layer takes
    max(cycles / f, bytes / bandwidth).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import HwConfig
from .genome import NetworkDescription, SystolicDesc


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystolicConfig:
    """Array shape: rows x cols grid of PEs, vec-wide data path, interleave, scale."""

    rows: int
    cols: int
    vec: int
    interleave: int
    scale: int
    freq_mhz: float = 250.0

    def __post_init__(self) -> None:
        for name in ("rows", "cols", "vec", "interleave", "scale"):
            if getattr(self, name) < 1:
                raise ModelError(f"systolic config: {name} must be >= 1")
        if self.freq_mhz <= 0:
            raise ModelError("systolic config: freq_mhz must be positive")

    @classmethod
    def from_desc(cls, desc: SystolicDesc, freq_mhz: float = 250.0) -> "SystolicConfig":
        return cls(desc.rows, desc.cols, desc.vec, desc.interleave, desc.scale, freq_mhz)

    @classmethod
    def parse(cls, text: str, freq_mhz: float = 250.0) -> "SystolicConfig":
        """Parse the "rows,cols,vec,interleave,scale" notation."""
        parts = [int(p) for p in text.split(",")]
        if len(parts) != 5:
            raise ModelError(f"expected 5 comma-separated values, got {text!r}")
        return cls(*parts, freq_mhz=freq_mhz)

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.rows, self.cols, self.vec, self.interleave, self.scale)


def _pad_up(n: int, block: int) -> int:
    return ((n + block - 1) // block) * block


@dataclass(frozen=True)
class BlockGeometry:
    """Blocked dimensions of one GEMM on a given array configuration."""

    block_height: int    # matrix A block height = rows * interleave
    block_width: int     # matrix B block width  = cols * interleave
    common_block: int    # shared A-width / B-height = vec * scale
    m: int
    k: int
    n: int
    m_pad: int
    k_pad: int
    n_pad: int

    @property
    def m_blocks(self) -> int:
        return self.m_pad // self.block_height

    @property
    def k_blocks(self) -> int:
        return self.k_pad // self.common_block

    @property
    def n_blocks(self) -> int:
        return self.n_pad // self.block_width

    @property
    def m_efficiency(self) -> float:
        return self.m / self.m_pad

    @property
    def k_efficiency(self) -> float:
        return self.k / self.k_pad

    @property
    def n_efficiency(self) -> float:
        return self.n / self.n_pad


def block_geometry(cfg: SystolicConfig, m: int, k: int, n: int) -> BlockGeometry:
    if min(m, k, n) < 1:
        raise ModelError("matrix dimensions must be >= 1")
    bh = cfg.rows * cfg.interleave
    bw = cfg.cols * cfg.interleave
    cb = cfg.vec * cfg.scale
    return BlockGeometry(
        block_height=bh, block_width=bw, common_block=cb,
        m=m, k=k, n=n,
        m_pad=_pad_up(m, bh), k_pad=_pad_up(k, cb), n_pad=_pad_up(n, bw),
    )


def compute_cycles(cfg: SystolicConfig, m: int, k: int, n: int) -> int:
    """Exact PE-grid cycle count for one blocked GEMM."""
    g = block_geometry(cfg, m, k, n)
    return g.m_blocks * g.n_blocks * (g.k_pad // cfg.vec) * cfg.interleave ** 2


def drain_cycles(cfg: SystolicConfig, m: int, k: int, n: int) -> int:
    """Global-drain cycles: one element per cycle over the padded output."""
    g = block_geometry(cfg, m, k, n)
    return g.m_pad * g.n_pad


def stream_bytes(cfg: SystolicConfig, m: int, k: int, n: int) -> int:
    """DDR traffic: A/B blocks streamed per output block plus the output write."""
    g = block_geometry(cfg, m, k, n)
    per_pair = (g.block_height * g.common_block + g.common_block * g.block_width) * 4
    return g.m_blocks * g.n_blocks * g.k_blocks * per_pair + g.m_pad * g.n_pad * 4


def potential_gops(cfg: SystolicConfig) -> float:
    """Roofline: one multiply and one add per lane per cycle."""
    return 2.0 * cfg.rows * cfg.cols * cfg.vec * cfg.freq_mhz * 1e6 / 1e9


@dataclass(frozen=True)
class ResourceModel:
    """Calibration knobs for the resource screen; defaults are optimistic."""

    k_dsp: float = 1.0
    c_dsp: float = 32.0
    k_mem: float = 1.0
    c_mem: float = 256.0


def resource_estimate(
    cfg: SystolicConfig, hw: HwConfig, model: ResourceModel = ResourceModel()
) -> tuple[float, float, bool]:
    """(dsp_est, mem_kb_est, feasible) for this configuration on the device budget.

    DSP cost scales with the lane count (rows * cols * vec); memory cost with
    the double-buffered block caches along both grid edges, plus a constant
    covering the drain and bias buffers.
    """
    dsp_est = model.k_dsp * cfg.rows * cfg.cols * cfg.vec + model.c_dsp
    cb = cfg.vec * cfg.scale
    mem_kb_est = (
        model.k_mem * (cfg.rows + cfg.cols) * 2 * cfg.interleave * cb * 4 / 1024
        + model.c_mem
    )
    feasible = dsp_est <= hw.dsp and mem_kb_est <= hw.sram
    return dsp_est, mem_kb_est, feasible


@dataclass(frozen=True)
class LayerTiming:
    name: str
    m: int
    k: int
    n: int
    compute_cycles: int
    drain_cycles: int
    bytes: int
    seconds: float
    memory_bound: bool


@dataclass(frozen=True)
class HwEstimate:
    total_time_ms: float
    potential_gops: float
    effective_gops: float
    img_per_s: float
    latency_ms: float
    dsp_est: float
    mem_kb_est: float
    alm_est: float
    feasible: bool
    layers: tuple[LayerTiming, ...] = ()

    def metrics(self) -> dict[str, float]:
        """Flat metric map as carried by worker results."""
        return {
            "total_time_ms": self.total_time_ms,
            "potential_gops": self.potential_gops,
            "effective_gops": self.effective_gops,
            "img_per_s": self.img_per_s,
            "latency_ms": self.latency_ms,
            "dsp_est": self.dsp_est,
            "mem_kb_est": self.mem_kb_est,
            "feasible": 1.0 if self.feasible else 0.0,
        }


def total_ops(desc: NetworkDescription) -> int:
    """Unpadded multiply+add operation count for one full forward pass."""
    return 2 * desc.batch * sum(l.in_features * l.out_features for l in desc.layers)


def ops_per_image(desc: NetworkDescription) -> int:
    return 2 * sum(l.in_features * l.out_features for l in desc.layers)


def estimate(
    desc: NetworkDescription,
    cfg: SystolicConfig,
    hw: HwConfig,
    resources: ResourceModel = ResourceModel(),
) -> HwEstimate:
    """Model one network on one array configuration (single shared array)."""
    if not desc.layers:
        raise ModelError("network description has no layers")
    freq_hz = cfg.freq_mhz * 1e6
    bandwidth = hw.bandwidth_bytes_per_s

    timings: list[LayerTiming] = []
    for layer in desc.layers:
        m, k, n = desc.batch, layer.in_features, layer.out_features
        cc = compute_cycles(cfg, m, k, n)
        dc = drain_cycles(cfg, m, k, n)
        nbytes = stream_bytes(cfg, m, k, n)
        t_compute = (cc + dc) / freq_hz
        t_memory = nbytes / bandwidth
        timings.append(LayerTiming(
            name=layer.name, m=m, k=k, n=n,
            compute_cycles=cc, drain_cycles=dc, bytes=nbytes,
            seconds=max(t_compute, t_memory),
            memory_bound=t_memory > t_compute,
        ))

    total_s = math.fsum(t.seconds for t in timings)
    ops = total_ops(desc)
    effective = ops / total_s / 1e9

    # latency: all earlier layers complete, then the last layer's first
    # output block finishes its accumulation sequence
    last_k_pad = block_geometry(cfg, desc.batch, desc.layers[-1].in_features,
                                desc.layers[-1].out_features).k_pad
    first_block_cycles = (last_k_pad // cfg.vec) * cfg.interleave ** 2
    latency_s = math.fsum(t.seconds for t in timings[:-1]) + first_block_cycles / freq_hz

    dsp_est, mem_kb_est, feasible = resource_estimate(cfg, hw, resources)
    return HwEstimate(
        total_time_ms=total_s * 1e3,
        potential_gops=potential_gops(cfg),
        effective_gops=effective,
        img_per_s=desc.batch / total_s,
        latency_ms=latency_s * 1e3,
        dsp_est=dsp_est,
        mem_kb_est=mem_kb_est,
        alm_est=0.0,
        feasible=feasible,
        layers=tuple(timings),
    )
