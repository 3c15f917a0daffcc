"""Mappers: random, pruned-random, exhaustive oracle, and the genetic
mapper with dedicated tile/order/parallelism operators and crossover.

All mappers share one evaluation cache keyed by canonical mapping form; the
sample budget counts cost-model evaluations, so duplicate draws are free.
Every mapper is deterministic given its inputs and seed.
"""

import hashlib
import itertools
import math
import random
import statistics
import time
from dataclasses import dataclass, field

from .arch import AcceleratorConfig
from .cost import CostReport, DensityContext, evaluate
from .factorization import ordered_factorizations, prime_multiset
from .mapping import (LevelTiling, Mapping, SpatialAssignment, canonicalize,
                      is_legal, random_mapping, structural_key,
                      NoLegalSampleError)
from .workload import REFERENCE_ORDER, LayerWorkload

MUTATE_TILE = "mutate_tile"
MUTATE_ORDER = "mutate_order"
MUTATE_PARALLELISM = "mutate_parallelism"
CROSSOVER = "crossover"
ALL_OPS = (MUTATE_TILE, MUTATE_ORDER, MUTATE_PARALLELISM, CROSSOVER)

DEFAULT_OP_RATES = {MUTATE_TILE: 0.5, MUTATE_ORDER: 0.3,
                    MUTATE_PARALLELISM: 0.3, CROSSOVER: 0.7}


class SpaceTooLargeError(RuntimeError):
    """Exhaustive enumeration refused: the canonical space exceeds the cap."""


@dataclass
class SearchBudget:
    max_samples: int | None = None
    max_wall_seconds: float | None = None

    def __post_init__(self):
        if self.max_samples is None and self.max_wall_seconds is None:
            raise ValueError("budget needs max_samples and/or max_wall_seconds")
        if self.max_samples is not None and self.max_samples < 1:
            raise ValueError("max_samples must be positive")
        if self.max_wall_seconds is not None and self.max_wall_seconds <= 0:
            raise ValueError("max_wall_seconds must be positive")


@dataclass
class GaConfig:
    population_size: int = 100
    elite_fraction: float = 0.1
    op_rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_OP_RATES))
    enabled_ops: frozenset[str] = frozenset(ALL_OPS)
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not (0.0 < self.elite_fraction < 1.0):
            raise ValueError("elite_fraction must be in (0,1)")
        self.enabled_ops = frozenset(self.enabled_ops)
        unknown = self.enabled_ops - set(ALL_OPS)
        if unknown:
            raise ValueError(f"unknown operators {sorted(unknown)}")
        rates = dict(DEFAULT_OP_RATES)
        rates.update(self.op_rates)
        for op, rate in rates.items():
            if op not in ALL_OPS or not (0.0 <= rate <= 1.0):
                raise ValueError(f"bad rate {op}={rate}")
        self.op_rates = rates
        if CROSSOVER in self.enabled_ops and self.population_size < 2:
            raise ValueError("crossover needs population_size >= 2")


@dataclass
class TraceEntry:
    sample_index: int          # cost-model evaluations consumed so far
    wall_s: float
    mapping_id: str
    report: CostReport
    best_edp: float
    score: float | None = None        # composite fitness (density sweeps)
    best_score: float | None = None
    level_edps: tuple[float, ...] | None = None


@dataclass
class GenerationStat:
    index: int
    best_edp: float    # composite score in sparsity-aware traces
    median_edp: float


@dataclass
class SearchTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    generations: list[GenerationStat] = field(default_factory=list)
    best_mapping: Mapping | None = None
    best_report: CostReport | None = None
    evaluations: int = 0
    best_score: float | None = None
    sweep_levels: tuple[float, ...] | None = None
    best_level_reports: dict[float, CostReport] | None = None


class _BudgetExhausted(Exception):
    pass


def _coerce_rng(seed) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


class Evaluator:
    """Budgeted, cached cost evaluation with trace logging and deterministic
    best tracking (EDP, then energy, then canonical serialization).

    The cache key is the canonical mapping form plus the density context, so
    permutation- or tile-size-one-equivalent duplicates never spend budget.
    """

    def __init__(self, w: LayerWorkload, a: AcceleratorConfig,
                 d: DensityContext | None, budget: SearchBudget,
                 trace: SearchTrace):
        self.w, self.a = w, a
        self.d = d if d is not None else DensityContext.from_workload(w)
        self.budget = budget
        self.trace = trace
        self.cache: dict[tuple, tuple[CostReport, str]] = {}
        self.t0 = time.monotonic()
        self._best = None  # (edp, energy, canon_json, mapping, report)

    def elapsed(self) -> float:
        return time.monotonic() - self.t0

    def out_of_budget(self) -> bool:
        b = self.budget
        if b.max_samples is not None and self.trace.evaluations >= b.max_samples:
            return True
        if b.max_wall_seconds is not None and self.elapsed() >= b.max_wall_seconds:
            return True
        return False

    def _consider_best(self, canon: Mapping, canon_json: str, report: CostReport):
        cand = (report.edp, report.energy_uj, canon_json)
        if self._best is None or cand < self._best[:3]:
            self._best = cand + (canon, report)
            self.trace.best_mapping = canon
            self.trace.best_report = report

    def best_edp(self) -> float:
        return self._best[0] if self._best else math.inf

    def evaluate(self, m: Mapping, d: DensityContext | None = None,
                 log: bool = True) -> tuple[CostReport, bool]:
        ctx = d if d is not None else self.d
        canon = canonicalize(m)
        key = (structural_key(canon),
               (ctx.weight_density, ctx.input_density, ctx.metadata_overhead))
        hit = self.cache.get(key)
        if hit is not None:
            return hit[0], False
        if self.out_of_budget():
            raise _BudgetExhausted
        report = evaluate(m, self.w, self.a, ctx)
        canon_json = canon.to_json()
        mapping_id = hashlib.sha1(canon_json.encode()).hexdigest()[:12]
        self.cache[key] = (report, mapping_id)
        self.trace.evaluations += 1
        if log:
            self._consider_best(canon, canon_json, report)
            self.trace.entries.append(TraceEntry(
                sample_index=self.trace.evaluations, wall_s=self.elapsed(),
                mapping_id=mapping_id, report=report, best_edp=self.best_edp()))
        return report, True


def _draw_cap(budget: SearchBudget) -> float:
    if budget.max_samples is None:
        return math.inf
    return max(1000, 50 * budget.max_samples)


def _random_driver(w, a, d, budget, seed, init, canonical: bool) -> SearchTrace:
    trace = SearchTrace()
    ev = Evaluator(w, a, d, budget, trace)
    rng = _coerce_rng(seed)
    try:
        for m in init or []:
            ev.evaluate(canonicalize(m) if canonical else m)
        draws = 0
        cap = _draw_cap(budget)
        while draws < cap and not ev.out_of_budget():
            m = random_mapping(w, a, rng)
            draws += 1
            ev.evaluate(canonicalize(m) if canonical else m)
    except _BudgetExhausted:
        pass
    return trace


def random_search(w, a, d, budget: SearchBudget, seed, init=None) -> SearchTrace:
    """Uniform sampling of the legal space, best-by-EDP tracking."""
    return _random_driver(w, a, d, budget, seed, init, canonical=False)


def pruned_random_search(w, a, d, budget: SearchBudget, seed, init=None) -> SearchTrace:
    """Random sampling over canonical forms: permutation-equivalent and
    tile-size-one-equivalent draws collapse, so duplicates cost nothing."""
    return _random_driver(w, a, d, budget, seed, init, canonical=True)


def _canonical_permutation_choices(factors: dict[str, int], ref: tuple[str, ...]):
    active = [d for d in ref if factors[d] > 1]
    ones = tuple(d for d in ref if factors[d] == 1)
    for perm in itertools.permutations(active):
        yield perm + ones


def exhaustive_search(w: LayerWorkload, a: AcceleratorConfig,
                      d: DensityContext | None = None,
                      cap: int = 1_000_000, return_stats: bool = False):
    """Enumerate every canonical mapping, return the EDP-minimal legal one.

    Ties break by energy, then lexicographic canonical serialization. The
    cap bounds the canonical representation space (capacity-illegal points
    included); beyond it the oracle refuses.
    """
    ref = REFERENCE_ORDER[w.op_kind]
    dims = list(ref)
    extents = w.extents()
    n_mem = len(a.memory_levels)
    positions = n_mem + len(a.compute_levels)
    splits_per_dim = [list(ordered_factorizations(extents[dim], positions)) for dim in dims]

    enumerated = 0
    evaluated = 0
    best = None  # (edp, energy, canon_json, mapping, report)
    for assignment in itertools.product(*splits_per_dim):
        tilings_factors = [{dims[i]: assignment[i][l] for i in range(len(dims))}
                           for l in range(n_mem)]
        spatial_factors = [{dims[i]: assignment[i][n_mem + c] for i in range(len(dims))}
                           for c in range(len(a.compute_levels))]
        units_ok = True
        for c, lvl in enumerate(a.compute_levels):
            used = 1
            for f in spatial_factors[c].values():
                used *= f
            if used > lvl.units:
                units_ok = False
                break

        perm_choices = [list(_canonical_permutation_choices(tilings_factors[l], ref))
                        for l in range(n_mem - 1)]
        n_perms = 1
        for ch in perm_choices:
            n_perms *= len(ch)
        enumerated += n_perms
        if enumerated > cap:
            raise SpaceTooLargeError(
                f"canonical map space of {w.id} on {a.name} exceeds cap ({cap})")
        if not units_ok:
            continue

        # capacity ignores permutations, so test once per factor assignment
        base = Mapping(
            [LevelTiling(a.memory_levels[l].name, dict(tilings_factors[l]), tuple(ref))
             for l in range(n_mem)],
            [SpatialAssignment(a.compute_levels[c].name, dict(spatial_factors[c]))
             for c in range(len(a.compute_levels))])
        if not is_legal(base, w, a):
            continue

        for perms in itertools.product(*perm_choices):
            m = base.copy()
            for l, perm in enumerate(perms):
                m.tilings[l].permutation = perm
            report = evaluate(m, w, a, d)
            evaluated += 1
            canon_json = m.to_json()
            cand = (report.edp, report.energy_uj, canon_json)
            if best is None or cand < best[:3]:
                best = cand + (m, report)
    if best is None:
        raise NoLegalSampleError(f"no legal mapping exists for {w.id} on {a.name}")
    if return_stats:
        return best[3], best[4], {"enumerated": enumerated, "evaluated": evaluated}
    return best[3], best[4]


def _movable_positions(m: Mapping, dim: str) -> list[tuple[str, str]]:
    """(kind, name) positions holding a factor > 1 of dim."""
    out = [("mem", t.level) for t in m.tilings if t.factors[dim] > 1]
    out.extend(("sp", s.compute_level) for s in m.spatials if s.factors[dim] > 1)
    return out


def _all_positions(m: Mapping) -> list[tuple[str, str]]:
    return ([("mem", t.level) for t in m.tilings]
            + [("sp", s.compute_level) for s in m.spatials])


def _get_factor(m: Mapping, pos: tuple[str, str], dim: str) -> int:
    kind, name = pos
    return (m.tiling(name) if kind == "mem" else m.spatial(name)).factors[dim]


def _mul_factor(m: Mapping, pos: tuple[str, str], dim: str, by: int) -> None:
    kind, name = pos
    holder = m.tiling(name) if kind == "mem" else m.spatial(name)
    holder.factors[dim] *= by


def _div_factor(m: Mapping, pos: tuple[str, str], dim: str, by: int) -> None:
    kind, name = pos
    holder = m.tiling(name) if kind == "mem" else m.spatial(name)
    holder.factors[dim] //= by


def mutate_tile(m: Mapping, w: LayerWorkload, a: AcceleratorConfig, seed) -> Mapping:
    """Move one prime factor of one dim between positions; identity when no
    legal move exists within the retry bound."""
    rng = _coerce_rng(seed)
    dims = [d for d in w.dim_names() if w.extent(d) > 1]
    if not dims:
        return m.copy()
    positions = _all_positions(m)
    for _ in range(50):
        dim = rng.choice(dims)
        sources = _movable_positions(m, dim)
        if not sources:
            continue
        frm = rng.choice(sources)
        prime = rng.choice(prime_multiset(_get_factor(m, frm, dim)))
        to = rng.choice([p for p in positions if p != frm])
        child = m.copy()
        _div_factor(child, frm, dim, prime)
        _mul_factor(child, to, dim, prime)
        if is_legal(child, w, a):
            return child
    return m.copy()


def mutate_order(m: Mapping, seed) -> Mapping:
    """Swap two slots in one level's permutation; always legal."""
    rng = _coerce_rng(seed)
    child = m.copy()
    t = child.tilings[rng.randrange(len(child.tilings))]
    n = len(t.permutation)
    if n < 2:
        return child
    i, j = rng.sample(range(n), 2)
    perm = list(t.permutation)
    perm[i], perm[j] = perm[j], perm[i]
    t.permutation = tuple(perm)
    return child


def mutate_parallelism(m: Mapping, w: LayerWorkload, a: AcceleratorConfig, seed) -> Mapping:
    """Fold a spatial factor back into its feeding level, or push one prime
    from a temporal factor out to a compute level within its units bound."""
    rng = _coerce_rng(seed)
    dims = list(w.dim_names())
    for _ in range(50):
        c = a.compute_levels[rng.randrange(len(a.compute_levels))]
        child = m.copy()
        sp = child.spatial(c.name)
        feed = child.tiling(c.nested_below)
        if rng.random() < 0.5:  # de-parallelize
            cands = [d for d in dims if sp.factors[d] > 1]
            if not cands:
                continue
            d = rng.choice(cands)
            feed.factors[d] *= sp.factors[d]
            sp.factors[d] = 1
            return child  # footprints unchanged, always legal
        cands = [(d, t.level) for d in dims for t in child.tilings if t.factors[d] > 1]
        if not cands:
            continue
        d, level = rng.choice(cands)
        tile = child.tiling(level)
        prime = rng.choice(prime_multiset(tile.factors[d]))
        used = 1
        for f in sp.factors.values():
            used *= f
        if used * prime > c.units:
            continue
        tile.factors[d] //= prime
        sp.factors[d] *= prime
        if is_legal(child, w, a):
            return child
    return m.copy()


def crossover(p1: Mapping, p2: Mapping, w: LayerWorkload, a: AcceleratorConfig,
              seed, edp_of=None) -> Mapping:
    """Blend two mappings: each dim takes its whole factor distribution from
    one parent, each level takes one parent's permutation. Falls back to the
    EDP-better parent when no capacity-legal blend appears."""
    rng = _coerce_rng(seed)
    dims = list(w.dim_names())
    for _ in range(50):
        child = p1.copy()
        for d in dims:
            src = p1 if rng.random() < 0.5 else p2
            for t_child, t_src in zip(child.tilings, src.tilings):
                t_child.factors[d] = t_src.factors[d]
            for s_child, s_src in zip(child.spatials, src.spatials):
                s_child.factors[d] = s_src.factors[d]
        for i in range(len(child.tilings)):
            src = p1 if rng.random() < 0.5 else p2
            child.tilings[i].permutation = tuple(src.tilings[i].permutation)
        if is_legal(child, w, a):
            return child
    if edp_of is None:
        edp_of = lambda m: evaluate(m, w, a).edp
    return (p1 if edp_of(p1) <= edp_of(p2) else p2).copy()


def _nondominated_fronts(points: list[tuple[float, int]]) -> list[int]:
    """Front index per point for (energy, latency) minimization."""
    n = len(points)
    fronts = [0] * n
    dominated_by = [0] * n
    dominates: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        ei, li = points[i]
        for j in range(n):
            if i == j:
                continue
            ej, lj = points[j]
            if ei <= ej and li <= lj and (ei < ej or li < lj):
                dominates[i].append(j)
            elif ej <= ei and lj <= li and (ej < ei or lj < li):
                dominated_by[i] += 1
    current = [i for i in range(n) if dominated_by[i] == 0]
    level = 0
    while current:
        nxt = []
        for i in current:
            fronts[i] = level
            for j in dominates[i]:
                dominated_by[j] -= 1
                if dominated_by[j] == 0:
                    nxt.append(j)
        current = nxt
        level += 1
    return fronts


class EdpObjective:
    """Multi-objective ranking: non-dominated fronts on (energy, latency),
    EDP as the within-front tiebreak; fitness value is the EDP."""

    def __init__(self, evaluator: Evaluator):
        self.ev = evaluator

    def score(self, m: Mapping) -> tuple[float, CostReport]:
        report, _ = self.ev.evaluate(m)
        return report.edp, report

    def order(self, scored: list[tuple[Mapping, float, CostReport]]) -> list[int]:
        points = [(r.energy_uj, r.latency_cycles) for _, _, r in scored]
        fronts = _nondominated_fronts(points)
        keys = []
        for i, (m, edp, r) in enumerate(scored):
            keys.append((fronts[i], edp, r.energy_uj, canonicalize(m).to_json()))
        return sorted(range(len(scored)), key=lambda i: keys[i])


def ga_search(w: LayerWorkload, a: AcceleratorConfig, d: DensityContext | None,
              budget: SearchBudget, cfg: GaConfig | None = None,
              init: list[Mapping] | None = None,
              objective=None, trace: SearchTrace | None = None) -> SearchTrace:
    """Generational GA: rank, carry elites, refill by tournament +
    crossover + enabled mutations. Stops when the budget runs out; the
    answer is the lowest-EDP point ever seen (always on the global Pareto
    frontier)."""
    cfg = cfg or GaConfig()
    trace = trace if trace is not None else SearchTrace()
    ev = Evaluator(w, a, d, budget, trace)
    if objective is None:
        objective = EdpObjective(ev)
    else:
        objective.bind(ev)
    rng = random.Random(cfg.rng_seed)

    pop: list[Mapping] = []
    for m in (init or [])[:cfg.population_size]:
        verdict = is_legal(m, w, a)
        if not verdict:
            raise ValueError(f"illegal init mapping: {verdict.violations}")
        pop.append(m.copy())
    while len(pop) < cfg.population_size:
        pop.append(random_mapping(w, a, rng))

    n_elite = max(1, math.ceil(cfg.elite_fraction * cfg.population_size))
    edp_of = lambda m: ev.evaluate(m)[0].edp
    gen = 0
    stalled = 0
    scored: list[tuple[Mapping, float, object]] = []
    try:
        while True:
            fresh_before = trace.evaluations
            scored = []
            for m in pop:
                value, payload = objective.score(m)
                scored.append((m, value, payload))
            values = [v for _, v, _ in scored]
            trace.generations.append(GenerationStat(
                index=gen, best_edp=min(values), median_edp=statistics.median(values)))
            if ev.out_of_budget():
                break
            # a generation of pure cache hits spends nothing; a frozen or
            # exhausted search would otherwise spin forever
            stalled = stalled + 1 if trace.evaluations == fresh_before else 0
            if stalled >= 25:
                break
            order = objective.order(scored)
            ranked = [scored[i][0] for i in order]

            def tournament() -> Mapping:
                i, j = rng.randrange(len(ranked)), rng.randrange(len(ranked))
                return ranked[min(i, j)]

            nxt = [ranked[i].copy() for i in range(min(n_elite, len(ranked)))]
            while len(nxt) < cfg.population_size:
                if (CROSSOVER in cfg.enabled_ops
                        and rng.random() < cfg.op_rates[CROSSOVER]):
                    child = crossover(tournament(), tournament(), w, a, rng, edp_of)
                else:
                    child = tournament().copy()
                if MUTATE_TILE in cfg.enabled_ops and rng.random() < cfg.op_rates[MUTATE_TILE]:
                    child = mutate_tile(child, w, a, rng)
                if MUTATE_ORDER in cfg.enabled_ops and rng.random() < cfg.op_rates[MUTATE_ORDER]:
                    child = mutate_order(child, rng)
                if (MUTATE_PARALLELISM in cfg.enabled_ops
                        and rng.random() < cfg.op_rates[MUTATE_PARALLELISM]):
                    child = mutate_parallelism(child, w, a, rng)
                nxt.append(child)
            pop = nxt
            gen += 1
    except _BudgetExhausted:
        # the truncated generation still contributes a stat if it scored anything
        if scored:
            values = [v for _, v, _ in scored]
            trace.generations.append(GenerationStat(
                index=gen, best_edp=min(values), median_edp=statistics.median(values)))
    return trace


def convergence_generation(trace: SearchTrace) -> int:
    """First generation whose best reaches 99.5% of the total improvement."""
    if not trace.generations:
        raise ValueError("trace has no generations")
    best = []
    running = math.inf
    for g in trace.generations:
        running = min(running, g.best_edp)
        best.append(running)
    initial, final = best[0], best[-1]
    threshold = final + 0.005 * (initial - final)
    for i, b in enumerate(best):
        if b <= threshold:
            return i
    return len(best) - 1


def trace_csv_lines(trace: SearchTrace) -> list[str]:
    """CSV export; sweep traces append the composite score and per-level
    EDP columns."""
    sweep = trace.sweep_levels
    header = ["sample_index", "wall_ms", "edp", "energy_uj", "latency_cycles", "best_edp"]
    if sweep:
        header += ["score", "best_score"] + [f"edp_d{lvl:g}" for lvl in sweep]
    lines = [",".join(header)]
    for e in trace.entries:
        row = [str(e.sample_index), f"{e.wall_s * 1000:.3f}", repr(e.report.edp),
               repr(e.report.energy_uj), str(e.report.latency_cycles), repr(e.best_edp)]
        if sweep:
            row += [repr(e.score), repr(e.best_score)]
            row += [repr(v) for v in (e.level_edps or ())]
        lines.append(",".join(row))
    return lines


def trace_summary_dict(trace: SearchTrace) -> dict:
    summary = {
        "evaluations": trace.evaluations,
        "best_edp": trace.best_report.edp if trace.best_report else None,
        "best_mapping": trace.best_mapping.to_json_dict() if trace.best_mapping else None,
        "best_report": trace.best_report.to_json_dict() if trace.best_report else None,
        "generations": [{"index": g.index, "best_edp": g.best_edp,
                         "median_edp": g.median_edp} for g in trace.generations],
    }
    if trace.generations:
        summary["convergence_generation"] = convergence_generation(trace)
    if trace.best_score is not None:
        summary["best_score"] = trace.best_score
        summary["sweep_levels"] = list(trace.sweep_levels or ())
        summary["best_level_edps"] = {f"{lvl:g}": rep.edp for lvl, rep
                                      in (trace.best_level_reports or {}).items()}
    return summary
