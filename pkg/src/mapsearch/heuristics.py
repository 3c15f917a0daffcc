"""Warm-start initialization from a replay buffer, and sparsity-aware
multi-density scoring.

Warm start: when a new layer arrives, pick the stored result of the most
similar layer solved so far (editing distance over extents), inherit its
loop orders and parallelization, rescale the tile factors to the new
shape, and seed the search with it. Sparsity aware: score a mapping by its
density-weighted EDP across a sweep of activation densities so one mapping
serves a whole sparsity range.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .arch import AcceleratorConfig, arch_fingerprint
from .cost import CostReport, DensityContext, evaluate
from .factorization import ordered_factorizations, prime_multiset
from .mapping import (Mapping, canonicalize, is_legal, mapping_from_json_dict,
                      structural_key)
from .search import (Evaluator, GaConfig, SearchBudget, SearchTrace,
                     TraceEntry, _coerce_rng, ga_search, mutate_order,
                     mutate_parallelism, mutate_tile)
from .workload import CONV2D, LayerWorkload, conv2d, editing_distance, gemm


class RescaleError(RuntimeError):
    """No legal tile rescaling exists for the target workload."""


@dataclass
class ReplayEntry:
    workload: LayerWorkload   # reconstructed signature workload
    arch: str                 # accelerator fingerprint
    mapping: Mapping
    report: CostReport


@dataclass
class ReplayBuffer:
    scope: str                # arch fingerprint all entries share
    entries: list[ReplayEntry] = field(default_factory=list)

    def record_result(self, w: LayerWorkload, a: AcceleratorConfig,
                      mapping: Mapping, report: CostReport) -> None:
        """Store the best mapping found for w; a duplicate signature keeps
        whichever entry has the lower EDP."""
        fp = arch_fingerprint(a)
        if fp != self.scope:
            raise ValueError(f"arch {a.name} ({fp}) does not match buffer scope {self.scope}")
        verdict = is_legal(mapping, w, a)
        if not verdict:
            raise ValueError(f"refusing illegal mapping for {w.id}: {verdict.violations}")
        sig = w.signature()
        for i, e in enumerate(self.entries):
            if e.workload.signature() == sig:
                if report.edp < e.report.edp:
                    self.entries[i] = ReplayEntry(w, fp, mapping.copy(), report)
                return
        self.entries.append(ReplayEntry(w, fp, mapping.copy(), report))

    def to_json_dict(self) -> dict:
        return {
            "scope": self.scope,
            "entries": [{
                "workload": {"id": e.workload.id, "op": e.workload.op_kind,
                             "dims": e.workload.extents(),
                             "density": dict(e.workload.density)},
                "arch": e.arch,
                "mapping": e.mapping.to_json_dict(),
                "report": e.report.to_json_dict(),
            } for e in self.entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        data = json.loads(Path(path).read_text())
        entries = []
        for e in data["entries"]:
            rec = e["workload"]
            maker = conv2d if rec["op"] == CONV2D else gemm
            w = maker(rec["id"], density=rec.get("density", {}), **rec["dims"])
            entries.append(ReplayEntry(
                workload=w, arch=e["arch"],
                mapping=mapping_from_json_dict(e["mapping"]),
                report=CostReport.from_json_dict(e["report"])))
        return cls(scope=data["scope"], entries=entries)


def _log_ratio_sum(a: LayerWorkload, b: LayerWorkload) -> float:
    ea, eb = a.extents(), b.extents()
    return sum(abs(math.log(ea[d] / eb[d])) for d in ea)


def select_similar(w: LayerWorkload, buf: ReplayBuffer) -> ReplayEntry | None:
    """Most similar usable entry: minimal editing distance, then smallest
    total log extent ratio, then most recent."""
    best = None
    best_key = None
    for idx, e in enumerate(buf.entries):
        dist = editing_distance(w, e.workload)
        if dist == math.inf:
            continue
        key = (dist, _log_ratio_sum(w, e.workload), -idx)
        if best_key is None or key < best_key:
            best, best_key = e, key
    return best


def _inner_product(m: Mapping, dim: str) -> int:
    """Product of every factor of dim except the outermost temporal one."""
    total = 1
    for t in m.tilings[1:]:
        total *= t.factors[dim]
    for s in m.spatials:
        total *= s.factors[dim]
    return total


def _positions_of(m: Mapping) -> list[tuple[str, str]]:
    return ([("mem", t.level) for t in m.tilings]
            + [("sp", s.compute_level) for s in m.spatials])


def _factor_at(m: Mapping, pos, dim) -> int:
    kind, name = pos
    return (m.tiling(name) if kind == "mem" else m.spatial(name)).factors[dim]


def _set_factor(m: Mapping, pos, dim, value) -> None:
    kind, name = pos
    (m.tiling(name) if kind == "mem" else m.spatial(name)).factors[dim] = value


def _refactor_dim(m: Mapping, dim: str, new_extent: int) -> None:
    """Redistribute one dim: the ordered factorization of the new extent
    closest (in summed log factor ratio) to the current distribution."""
    positions = _positions_of(m)
    old = [_factor_at(m, p, dim) for p in positions]
    best = None
    best_key = None
    for split in ordered_factorizations(new_extent, len(positions)):
        key = (sum(abs(math.log(split[i] / old[i])) for i in range(len(old))), split)
        if best_key is None or key < best_key:
            best, best_key = split, key
    for p, f in zip(positions, best):
        _set_factor(m, p, dim, f)


def _shrink_until_legal(m: Mapping, w: LayerWorkload, a: AcceleratorConfig) -> Mapping:
    """Greedy capacity repair: push prime factors of the largest-footprint
    tensor's dims out to the outermost temporal level until everything fits."""
    from .cost import footprint

    for _ in range(10_000):
        verdict = is_legal(m, w, a)
        if verdict:
            return m
        level = None
        for l, lv in enumerate(a.memory_levels):
            if lv.capacity_words is None:
                continue
            total = sum(footprint(m, w, a, lv.name, t) for t in ("weight", "input", "output"))
            if total > lv.capacity_words:
                level = l
                break
        if level is None:
            raise RescaleError(f"rescaled mapping illegal beyond capacity: {verdict.violations}")
        lv = a.memory_levels[level]
        sizes = {t: footprint(m, w, a, lv.name, t) for t in ("weight", "input", "output")}
        tensor = max(sizes, key=lambda t: (sizes[t], t))
        proj = w.projection(tensor)
        dims = set(proj.relevant_dims) | {win for _, win in proj.halo_pairs}
        # movable primes at or inside the violating level; temporal sources
        # preferred so the inherited parallelization survives
        sources = [("mem", a.memory_levels[j].name)
                   for j in range(len(a.memory_levels) - 1, level - 1, -1)]
        sources += [("sp", c.name) for c in a.compute_levels
                    if a.memory_index(c.nested_below) >= level]
        move = None
        for d in sorted(dims):
            for pos in sources:
                f = _factor_at(m, pos, d)
                if f > 1:
                    prime = max(prime_multiset(f))
                    cand = (pos[0] == "mem", f, d, pos, prime)
                    if move is None or cand > move:
                        move = cand
        if move is None:
            raise RescaleError(
                f"cannot shrink {tensor} tile at {lv.name}: no movable factors")
        _, _, d, pos, prime = move
        _set_factor(m, pos, d, _factor_at(m, pos, d) // prime)
        m.tilings[0].factors[d] *= prime
    raise RescaleError("capacity repair did not converge")


def scale_tiles(m: Mapping, from_w: LayerWorkload, to_w: LayerWorkload,
                a: AcceleratorConfig) -> Mapping:
    """Rescale a mapping from one workload shape to another.

    Dims whose extent changed get their outermost temporal factor set to
    the exact quotient when it divides cleanly (the common case for layer
    progressions); otherwise the dim is refactored to the nearest ordered
    factorization. Capacity violations are repaired by pushing primes
    outward.
    """
    if from_w.op_kind != to_w.op_kind:
        raise RescaleError(f"cannot scale {from_w.op_kind} mapping to {to_w.op_kind}")
    out = m.copy()
    ef, et = from_w.extents(), to_w.extents()
    for d in from_w.dim_names():
        if ef[d] == et[d]:
            continue
        inner = _inner_product(out, d)
        if et[d] % inner == 0:
            out.tilings[0].factors[d] = et[d] // inner
        else:
            _refactor_dim(out, d, et[d])
    from .mapping import _cap_spatial
    _cap_spatial(out, a)
    return _shrink_until_legal(out, to_w, a)


def warm_start_init(w: LayerWorkload, buf: ReplayBuffer, k: int,
                    a: AcceleratorConfig, seed=0) -> list[Mapping]:
    """Seed mappings for a new layer: the rescaled most-similar stored
    solution plus k-1 single-mutation variants. Empty (or incompatible)
    buffer: empty list, the search falls back to random init."""
    if arch_fingerprint(a) != buf.scope:
        raise ValueError("replay buffer scope does not match the accelerator")
    entry = select_similar(w, buf)
    if entry is None:
        return []
    seed_mapping = scale_tiles(entry.mapping, entry.workload, w, a)
    rng = _coerce_rng(seed)
    out = [seed_mapping]
    ops = (mutate_tile, mutate_order, mutate_parallelism)
    for i in range(max(0, k - 1)):
        op = ops[i % len(ops)]
        if op is mutate_order:
            out.append(op(seed_mapping, rng))
        else:
            out.append(op(seed_mapping, w, a, rng))
    return out


@dataclass
class DensitySweep:
    levels: tuple[float, ...] = (1.0, 0.8, 0.5, 0.2, 0.1)
    weights: tuple[float, ...] | None = None  # default: 1/density per level

    def __post_init__(self):
        self.levels = tuple(float(x) for x in self.levels)
        if not self.levels:
            raise ValueError("sweep needs at least one density level")
        for x in self.levels:
            if not (0.0 < x <= 1.0):
                raise ValueError(f"density level {x} outside (0,1]")
        if list(self.levels) != sorted(self.levels, reverse=True) or \
                len(set(self.levels)) != len(self.levels):
            raise ValueError("density levels must be strictly descending")
        if self.weights is None:
            self.weights = tuple(1.0 / x for x in self.levels)
        else:
            self.weights = tuple(float(x) for x in self.weights)
            if len(self.weights) != len(self.levels):
                raise ValueError("need one weight per level")
            if any(x <= 0 for x in self.weights):
                raise ValueError("weights must be positive")

    def contexts(self, w: LayerWorkload) -> list[DensityContext]:
        return [DensityContext.from_workload(w, input_density=lvl) for lvl in self.levels]


def sparsity_aware_score(m: Mapping, w: LayerWorkload, a: AcceleratorConfig,
                         sweep: DensitySweep) -> float:
    """Weighted sum of the mapping's EDP over the density sweep (weight
    density stays at the workload's declared value; the sweep models the
    dynamic activation density). Lower is better."""
    total = 0.0
    for weight, ctx in zip(sweep.weights, sweep.contexts(w)):
        total += weight * evaluate(m, w, a, ctx).edp
    return total


class SweepObjective:
    """Scalar GA fitness: density-weighted EDP across a sweep. Each fresh
    mapping costs one budget unit per sweep level; the trace logs one row
    per scored mapping with the composite score and per-level EDPs."""

    def __init__(self, w: LayerWorkload, sweep: DensitySweep):
        self.w = w
        self.sweep = sweep
        self.contexts = sweep.contexts(w)
        self.memo: dict = {}
        self._best = None  # (score, canon_json)
        self.ev: Evaluator | None = None

    def bind(self, ev: Evaluator) -> None:
        self.ev = ev
        ev.trace.sweep_levels = self.sweep.levels

    def score(self, m: Mapping) -> tuple[float, tuple]:
        from .mapping import structural_key
        canon = canonicalize(m)
        key = structural_key(canon)
        if key in self.memo:
            return self.memo[key]
        reports = []
        for ctx in self.contexts:
            report, _ = self.ev.evaluate(m, d=ctx, log=False)
            reports.append(report)
        value = sum(wgt * r.edp for wgt, r in zip(self.sweep.weights, reports))
        canon_json = canon.to_json()
        payload = (tuple(reports), canon_json)
        self.memo[key] = (value, payload)

        trace = self.ev.trace
        if self._best is None or (value, canon_json) < self._best:
            self._best = (value, canon_json)
            trace.best_score = value
            trace.best_mapping = canon
            trace.best_report = reports[0]
            trace.best_level_reports = dict(zip(self.sweep.levels, reports))
        trace.entries.append(TraceEntry(
            sample_index=trace.evaluations, wall_s=self.ev.elapsed(),
            mapping_id=canon_json and __import__("hashlib").sha1(canon_json.encode()).hexdigest()[:12],
            report=reports[0],
            best_edp=trace.best_report.edp if trace.best_report else math.inf,
            score=value, best_score=trace.best_score,
            level_edps=tuple(r.edp for r in reports)))
        return value, payload

    def order(self, scored) -> list[int]:
        keys = [(value, payload[1]) for _, value, payload in scored]
        return sorted(range(len(scored)), key=lambda i: keys[i])


def sparsity_aware_search(w: LayerWorkload, a: AcceleratorConfig,
                          budget: SearchBudget, cfg: GaConfig | None,
                          sweep: DensitySweep,
                          init: list[Mapping] | None = None) -> SearchTrace:
    """GA driven by the sparsity-aware score. A single-level sweep is
    exactly a plain GA at that density and delegates to it."""
    if len(sweep.levels) == 1:
        ctx = DensityContext.from_workload(w, input_density=sweep.levels[0])
        return ga_search(w, a, ctx, budget, cfg, init)
    objective = SweepObjective(w, sweep)
    return ga_search(w, a, None, budget, cfg, init, objective=objective)
