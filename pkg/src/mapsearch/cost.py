"""Analytical cost model: per-level access counts, latency/energy/EDP.

Traffic follows a loop-order-sensitive reuse rule: a tile at a level is
re-fetched once for every iteration of the outer temporal loops from the
innermost loop that touches the tensor outward. Loops inner to that (the
innermost irrelevant run) iterate within the resident tile and are free.
Output tiles move as write-through partial sums: every refill is a
read-modify-write against the parent except the very first install.

Spatial instances share parent fetches by tile identity (ideal multicast);
density scales weight/input traffic and the effective MAC count.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

from .arch import AcceleratorConfig
from .mapping import (Mapping, StructuralError, cumulative_extents, is_legal,
                      spatial_parallelism, validate_structure)
from .workload import INPUT, OUTPUT, TENSORS, WEIGHT, LayerWorkload, total_macs


class IllegalMappingError(ValueError):
    """Cost evaluation only accepts legal mappings."""


@dataclass(frozen=True)
class DensityContext:
    weight_density: float = 1.0
    input_density: float = 1.0
    metadata_overhead: float | None = None  # words of metadata per word moved

    def __post_init__(self):
        for name, v in (("weight", self.weight_density), ("input", self.input_density)):
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} density {v} outside (0,1]")
        if self.metadata_overhead is None:
            sparse = self.weight_density < 1.0 or self.input_density < 1.0
            object.__setattr__(self, "metadata_overhead", 0.05 if sparse else 0.0)
        elif self.metadata_overhead < 0:
            raise ValueError("metadata overhead must be >= 0")

    @classmethod
    def from_workload(cls, w: LayerWorkload, input_density: float | None = None,
                      metadata_overhead: float | None = None) -> "DensityContext":
        return cls(weight_density=w.density[WEIGHT],
                   input_density=w.density[INPUT] if input_density is None else input_density,
                   metadata_overhead=metadata_overhead)


DENSE = DensityContext()


@dataclass
class CostReport:
    latency_cycles: int
    energy_uj: float
    edp: float
    accesses: dict[tuple[str, str], int]  # (memory level, tensor) -> words
    compute_cycles: int
    utilization: float
    bottleneck: str

    def to_json_dict(self) -> dict:
        levels: dict[str, dict[str, str]] = {}
        for (level, tensor), count in sorted(self.accesses.items()):
            levels.setdefault(level, {})[tensor] = str(count)
        return {
            "latency_cycles": str(self.latency_cycles),
            "energy_uj": self.energy_uj,
            "edp": self.edp,
            "accesses": levels,
            "compute_cycles": str(self.compute_cycles),
            "utilization": self.utilization,
            "bottleneck": self.bottleneck,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CostReport":
        accesses = {(level, tensor): int(count)
                    for level, per in data["accesses"].items()
                    for tensor, count in per.items()}
        return cls(latency_cycles=int(data["latency_cycles"]),
                   energy_uj=float(data["energy_uj"]), edp=float(data["edp"]),
                   accesses=accesses, compute_cycles=int(data["compute_cycles"]),
                   utilization=float(data["utilization"]), bottleneck=data["bottleneck"])


def _tile_words(cum: dict[str, int], w: LayerWorkload, tensor: str) -> int:
    """Tile footprint in words given cumulative extents: a product over the
    tensor's dims, with each sliding-window pair contributing the halo'd
    span (spatial + window - 1) instead of the plain product."""
    proj = w.projection(tensor)
    halo = dict(proj.halo_pairs)
    words = 1
    for d in proj.relevant_dims:
        if d in halo:
            words *= cum[d] + cum[halo[d]] - 1
        else:
            words *= cum[d]
    return words


def footprint(m: Mapping, w: LayerWorkload, a: AcceleratorConfig,
              level: str, tensor: str) -> int:
    """Words of `tensor` resident per instance of memory level `level`."""
    if tensor not in TENSORS:
        raise StructuralError(f"unknown tensor {tensor!r}")
    idx = a.memory_index(level)
    validate_structure(m, w, a)
    cums = cumulative_extents(m, a)
    return _tile_words(cums[idx], w, tensor)


def _multiplicity(outer_loops: list[tuple[str, int]], traffic: frozenset[str]) -> int:
    """Refetch count: factor-1 loops are no-ops; loops inner to every
    relevant loop reuse the resident tile; everything from the innermost
    relevant loop outward multiplies."""
    m = 1
    seen_relevant = False
    for d, f in reversed(outer_loops):  # innermost first
        if not seen_relevant and d not in traffic:
            continue
        seen_relevant = True
        m *= f
    return m


def access_counts(m: Mapping, w: LayerWorkload, a: AcceleratorConfig,
                  check_legal: bool = True) -> dict[tuple[str, str], int]:
    """Exact dense word-access counts at every memory level per tensor.

    Each word crossing a level boundary is counted once at each side:
    fills write into the child (every instance), the parent read is shared
    across instances needing an identical tile; output partials go up on
    every eviction and come back on every refill but the first.
    """
    if check_legal:
        verdict = is_legal(m, w, a)
        if not verdict:
            raise IllegalMappingError("; ".join(verdict.violations))
    else:
        validate_structure(m, w, a)

    n_mem = len(a.memory_levels)
    cums = cumulative_extents(m, a)
    traffic = {t: w.traffic_dims(t) for t in TENSORS}
    fanouts = {c.name: m.spatial(c.name).factors for c in a.compute_levels}

    # instances[l]: copies of level l (fan-outs strictly above it)
    instances = [1] * n_mem
    fan_between: list[list[str]] = [[] for _ in range(n_mem)]  # compute levels feeding l from l-1
    for c in a.compute_levels:
        p = a.memory_index(c.nested_below)
        total = 1
        for f in fanouts[c.name].values():
            total *= f
        for l in range(p + 1, n_mem):
            instances[l] *= total
        if p + 1 < n_mem:
            fan_between[p + 1].append(c.name)

    acc = {(lv.name, t): 0 for lv in a.memory_levels for t in TENSORS}
    outer_loops: list[tuple[str, int]] = []
    for l in range(1, n_mem):
        tiling_above = m.tiling(a.memory_levels[l - 1].name)
        outer_loops.extend((d, tiling_above.factors[d]) for d in tiling_above.permutation
                           if tiling_above.factors[d] > 1)
        lname = a.memory_levels[l].name
        pname = a.memory_levels[l - 1].name
        for t in TENSORS:
            fp = _tile_words(cums[l], w, t)
            mult = _multiplicity(outer_loops, traffic[t])
            shared = 1  # distinct tiles across the fan-out between parent and l
            for cname in fan_between[l]:
                for d, f in fanouts[cname].items():
                    if d in traffic[t]:
                        shared *= f
            if t == OUTPUT:
                up = mult * fp * instances[l]          # evictions (all partials distinct)
                down = (mult - 1) * fp * instances[l]  # refills after the first install
                acc[(lname, t)] += up + down
                acc[(pname, t)] += up + down
            else:
                fills = mult * fp
                acc[(lname, t)] += fills * instances[l]
                acc[(pname, t)] += fills * shared * instances[l - 1]
    return acc


def _ceil_frac(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


def evaluate(m: Mapping, w: LayerWorkload, a: AcceleratorConfig,
             d: DensityContext | None = None) -> CostReport:
    """Full cost report for a legal mapping under a density context.

    Zero-skipping is perfect: effective MACs and weight/input traffic scale
    linearly with density (plus a metadata tax per moved word); output
    traffic stays dense. Latency is the max of the compute bottleneck and
    each level's bandwidth bottleneck.
    """
    if d is None:
        d = DensityContext.from_workload(w)
    counts = access_counts(m, w, a)

    overhead = Fraction(d.metadata_overhead) + 1
    scale = {
        WEIGHT: Fraction(d.weight_density) * overhead,
        INPUT: Fraction(d.input_density) * overhead,
        OUTPUT: Fraction(1),
    }
    scaled = {}
    for (level, tensor), words in counts.items():
        s = scale[tensor]
        scaled[(level, tensor)] = words if s == 1 else _ceil_frac(words * s)

    par = spatial_parallelism(m)
    eff_macs = total_macs(w) * Fraction(d.weight_density) * Fraction(d.input_density)
    compute_cycles = _ceil_frac(eff_macs / par)

    fanout_above = [1] * len(a.memory_levels)
    for c in a.compute_levels:
        p = a.memory_index(c.nested_below)
        total = 1
        for f in m.spatial(c.name).factors.values():
            total *= f
        for l in range(p + 1, len(a.memory_levels)):
            fanout_above[l] *= total

    latency = compute_cycles
    bottleneck = "compute"
    for l, lv in enumerate(a.memory_levels):
        words = sum(scaled[(lv.name, t)] for t in TENSORS)
        cycles = math.ceil(words / (lv.bandwidth_words_per_cycle * fanout_above[l]))
        if cycles > latency:
            latency = cycles
            bottleneck = lv.name

    energy_pj = float(eff_macs) * a.mac_energy_pj
    for l, lv in enumerate(a.memory_levels):
        level_words = sum(scaled[(lv.name, t)] for t in TENSORS)
        energy_pj += level_words * lv.access_energy_pj
    energy_uj = energy_pj / 1e6

    return CostReport(
        latency_cycles=latency,
        energy_uj=energy_uj,
        edp=latency * energy_uj,
        accesses=scaled,
        compute_cycles=compute_cycles,
        utilization=par / a.total_units(),
        bottleneck=bottleneck,
    )


def pareto_dominates(r1: CostReport, r2: CostReport) -> bool:
    """r1 is at least as good in both energy and latency and better in one."""
    return (r1.energy_uj <= r2.energy_uj and r1.latency_cycles <= r2.latency_cycles
            and (r1.energy_uj < r2.energy_uj or r1.latency_cycles < r2.latency_cycles))
