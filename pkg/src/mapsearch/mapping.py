"""Map-space representation: tiling, loop orders, spatial parallelization.

A mapping assigns, per memory level, a temporal tile factor for every
workload dim plus a loop permutation, and per compute level a spatial
factor for every dim. The product of all factors of a dim (temporal and
spatial) must equal its extent; bounded levels must hold all three tensor
tiles at once.
"""

import hashlib
import json
import math
import random
from dataclasses import dataclass, field

from .arch import AcceleratorConfig
from .factorization import (count_ordered_factorizations, prime_multiset,
                            random_ordered_factorization)
from .workload import REFERENCE_ORDER, LayerWorkload


class StructuralError(ValueError):
    """Mapping does not structurally fit the workload/arch (unknown dims,
    missing levels); distinct from a mere legality violation."""


class NoLegalSampleError(RuntimeError):
    """Rejection sampling could not find a capacity-legal mapping."""


@dataclass
class LevelTiling:
    level: str
    factors: dict[str, int]
    permutation: tuple[str, ...]  # outermost -> innermost


@dataclass
class SpatialAssignment:
    compute_level: str
    factors: dict[str, int]

    def parallel_dims(self) -> tuple[str, ...]:
        return tuple(d for d, f in self.factors.items() if f > 1)


@dataclass
class Mapping:
    tilings: list[LevelTiling]
    spatials: list[SpatialAssignment]

    def tiling(self, level: str) -> LevelTiling:
        for t in self.tilings:
            if t.level == level:
                return t
        raise StructuralError(f"mapping has no tiling for level {level}")

    def spatial(self, compute_level: str) -> SpatialAssignment:
        for s in self.spatials:
            if s.compute_level == compute_level:
                return s
        raise StructuralError(f"mapping has no spatial assignment for {compute_level}")

    def copy(self) -> "Mapping":
        return Mapping(
            [LevelTiling(t.level, dict(t.factors), tuple(t.permutation)) for t in self.tilings],
            [SpatialAssignment(s.compute_level, dict(s.factors)) for s in self.spatials],
        )

    def to_json_dict(self) -> dict:
        return {
            "tilings": [{"level": t.level, "factors": dict(t.factors),
                         "permutation": list(t.permutation)} for t in self.tilings],
            "spatials": [{"compute_level": s.compute_level, "factors": dict(s.factors)}
                         for s in self.spatials],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))


def mapping_from_json_dict(data: dict) -> Mapping:
    tilings = []
    for t in data["tilings"]:
        perm = tuple(t["permutation"])
        factors = {d: int(f) for d, f in t["factors"].items()}
        missing = set(perm) - set(factors)
        if missing:
            raise StructuralError(f"level {t['level']}: factors missing for {sorted(missing)}")
        tilings.append(LevelTiling(t["level"], factors, perm))
    dims = set(tilings[0].permutation) if tilings else set()
    spatials = []
    for s in data.get("spatials", []):
        factors = {d: int(f) for d, f in s["factors"].items()}
        unknown = set(factors) - dims
        if unknown:
            raise StructuralError(f"spatial {s['compute_level']}: unknown dims {sorted(unknown)}")
        for d in dims:
            factors.setdefault(d, 1)
        spatials.append(SpatialAssignment(s["compute_level"], factors))
    return Mapping(tilings, spatials)


def validate_structure(m: Mapping, w: LayerWorkload, a: AcceleratorConfig) -> None:
    """Raise StructuralError unless m is structurally complete for (w, a)."""
    dims = set(w.dim_names())
    mem_names = [lv.name for lv in a.memory_levels]
    if [t.level for t in m.tilings] != mem_names:
        got = [t.level for t in m.tilings]
        raise StructuralError(f"tilings {got} do not match memory levels {mem_names}")
    for t in m.tilings:
        if set(t.factors) != dims:
            raise StructuralError(f"level {t.level}: factors cover {sorted(t.factors)}, "
                                  f"want {sorted(dims)}")
        if set(t.permutation) != dims or len(t.permutation) != len(dims):
            raise StructuralError(f"level {t.level}: permutation must order every dim once")
        for d, f in t.factors.items():
            if f < 1:
                raise StructuralError(f"level {t.level}: factor {d}={f} < 1")
    comp_names = [c.name for c in a.compute_levels]
    if [s.compute_level for s in m.spatials] != comp_names:
        got = [s.compute_level for s in m.spatials]
        raise StructuralError(f"spatials {got} do not match compute levels {comp_names}")
    for s in m.spatials:
        if set(s.factors) != dims:
            raise StructuralError(f"spatial {s.compute_level}: factors must cover every dim")
        for d, f in s.factors.items():
            if f < 1:
                raise StructuralError(f"spatial {s.compute_level}: factor {d}={f} < 1")


def compute_levels_below(a: AcceleratorConfig, mem_level_name: str) -> list[str]:
    return [c.name for c in a.compute_levels if c.nested_below == mem_level_name]


def cumulative_extents(m: Mapping, a: AcceleratorConfig) -> list[dict[str, int]]:
    """Per memory level, the tile extent of each dim at that level.

    The extent at level l multiplies the temporal factor at l with every
    factor strictly inside it (inner memory levels plus the spatial fan-outs
    they feed, including the fan-out directly below l).
    """
    dims = list(m.tilings[0].factors)
    running = {d: 1 for d in dims}
    out: list[dict[str, int]] = [dict()] * len(a.memory_levels)
    for l in range(len(a.memory_levels) - 1, -1, -1):
        for cname in compute_levels_below(a, a.memory_levels[l].name):
            sp = m.spatial(cname)
            for d in dims:
                running[d] *= sp.factors[d]
        tf = m.tiling(a.memory_levels[l].name).factors
        for d in dims:
            running[d] *= tf[d]
        out[l] = dict(running)
    return out


def spatial_parallelism(m: Mapping) -> int:
    total = 1
    for s in m.spatials:
        for f in s.factors.values():
            total *= f
    return total


@dataclass
class LegalityResult:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def is_legal(m: Mapping, w: LayerWorkload, a: AcceleratorConfig) -> LegalityResult:
    """Check the factorization and capacity invariants; violations name the
    offending dim or level. Structural mismatches raise instead."""
    from .cost import footprint  # local import: cost builds on this module

    validate_structure(m, w, a)
    violations = []
    cums = cumulative_extents(m, a)
    extents = w.extents()
    for d, ext in extents.items():
        if cums[0][d] != ext:
            violations.append(f"factorization: dim {d} factors multiply to {cums[0][d]}, "
                              f"extent is {ext}")
    for c in a.compute_levels:
        sp = m.spatial(c.name)
        used = 1
        for f in sp.factors.values():
            used *= f
        if used > c.units:
            violations.append(f"parallelism: compute level {c.name} uses {used} > "
                              f"{c.units} units")
    if not violations:  # footprints only make sense on a consistent factorization
        for l, lv in enumerate(a.memory_levels):
            if lv.capacity_words is None:
                continue
            total = 0
            sizes = {}
            for tensor in ("weight", "input", "output"):
                sizes[tensor] = footprint(m, w, a, lv.name, tensor)
                total += sizes[tensor]
            if total > lv.capacity_words:
                detail = "+".join(f"{t}={s}" for t, s in sizes.items())
                violations.append(f"capacity: level {lv.name} needs {total} words "
                                  f"({detail}) > {lv.capacity_words}")
    return LegalityResult(not violations, violations)


@dataclass(frozen=True)
class MapSpaceSize:
    tile_count: int
    order_count: int
    parallel_count: int

    @property
    def total(self) -> int:
        return self.tile_count * self.order_count * self.parallel_count


def map_space_size(w: LayerWorkload, a: AcceleratorConfig) -> MapSpaceSize:
    """Size of the raw representation space (capacity-illegal points count).

    Tile sub-space: ordered factorizations of each extent over all memory
    and compute positions. Order sub-space: one permutation per memory
    level. Parallelism sub-space: the parallelize/don't choice per dim per
    compute level (factor magnitudes already live in the tile sub-space).
    """
    positions = len(a.memory_levels) + len(a.compute_levels)
    tile = 1
    for d in w.dims:
        tile *= count_ordered_factorizations(d.extent, positions)
    n = len(w.dims)
    order = math.factorial(n) ** len(a.memory_levels)
    parallel = 2 ** (n * len(a.compute_levels))
    return MapSpaceSize(tile, order, parallel)


def _reference_order(dim_names) -> tuple[str, ...]:
    names = set(dim_names)
    for order in REFERENCE_ORDER.values():
        if names == set(order):
            return order
    return tuple(sorted(names))


def canonicalize(m: Mapping) -> Mapping:
    """Rewrite to the canonical representative of m's cost-equivalence class.

    The innermost level's loops are never outside any tile, and factor-1
    loops are no-ops, so: the innermost permutation becomes the reference
    order, and within every other level the factor-1 dims sink to the
    innermost slots in reference order (factor>1 dims keep their relative
    order).
    """
    ref = _reference_order(m.tilings[0].factors.keys())
    out = m.copy()
    last = len(out.tilings) - 1
    for i, t in enumerate(out.tilings):
        if i == last:
            t.permutation = tuple(ref)
        else:
            active = tuple(d for d in t.permutation if t.factors[d] > 1)
            ones = tuple(d for d in ref if t.factors[d] == 1)
            t.permutation = active + ones
    return out


def structural_key(m: Mapping) -> tuple:
    """Hashable identity of the exact mapping structure."""
    return (
        tuple((t.level, tuple(sorted(t.factors.items())), t.permutation)
              for t in m.tilings),
        tuple((s.compute_level, tuple(sorted(s.factors.items())))
              for s in m.spatials),
    )


def canonical_key(m: Mapping) -> tuple:
    return structural_key(canonicalize(m))


def mapping_hash(m: Mapping) -> str:
    blob = canonicalize(m).to_json()
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def trivial_mapping(w: LayerWorkload, a: AcceleratorConfig) -> Mapping:
    """Everything iterated temporally at the outermost level: tiles of one
    element everywhere inside, always capacity-legal."""
    ref = _reference_order(w.dim_names())
    extents = w.extents()
    tilings = []
    for i, lv in enumerate(a.memory_levels):
        factors = {d: (extents[d] if i == 0 else 1) for d in ref}
        tilings.append(LevelTiling(lv.name, factors, tuple(ref)))
    spatials = [SpatialAssignment(c.name, {d: 1 for d in ref}) for c in a.compute_levels]
    return Mapping(tilings, spatials)


def _fold_spatial_prime(m: Mapping, a: AcceleratorConfig, cname: str, dim: str,
                        prime: int) -> None:
    """Move one prime of a spatial factor into the feeding level's tiling."""
    sp = m.spatial(cname)
    feed = m.tiling(a.compute_level(cname).nested_below)
    sp.factors[dim] //= prime
    feed.factors[dim] *= prime


def _cap_spatial(m: Mapping, a: AcceleratorConfig) -> None:
    for c in a.compute_levels:
        sp = m.spatial(c.name)
        while True:
            used = 1
            for f in sp.factors.values():
                used *= f
            if used <= c.units:
                break
            dim = max(sp.factors, key=lambda d: (sp.factors[d], d))
            prime = prime_multiset(sp.factors[dim])[0]
            _fold_spatial_prime(m, a, c.name, dim, prime)


def random_mapping(w: LayerWorkload, a: AcceleratorConfig, seed,
                   max_retries: int = 1000) -> Mapping:
    """Sample each axis independently, then rejection-sample on capacity.

    Per dim, a uniform ordered factorization over all memory+compute
    positions; per level a uniform permutation; per compute level a uniform
    coin per dim keeps it parallelized (otherwise its spatial factor folds
    into the feeding level), then primes fold back greedily until the units
    bound holds.
    """
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    dims = list(w.dim_names())
    extents = w.extents()
    n_mem = len(a.memory_levels)
    positions = n_mem + len(a.compute_levels)
    for _ in range(max_retries):
        tilings = [LevelTiling(lv.name, {}, ()) for lv in a.memory_levels]
        spatials = [SpatialAssignment(c.name, {}) for c in a.compute_levels]
        for d in dims:
            split = random_ordered_factorization(extents[d], positions, rng)
            for l in range(n_mem):
                tilings[l].factors[d] = split[l]
            for c in range(len(a.compute_levels)):
                spatials[c].factors[d] = split[n_mem + c]
        for t in tilings:
            perm = dims[:]
            rng.shuffle(perm)
            t.permutation = tuple(perm)
        m = Mapping(tilings, spatials)
        for c in a.compute_levels:
            sp = m.spatial(c.name)
            for d in dims:
                if rng.random() >= 0.5 and sp.factors[d] > 1:
                    _fold_spatial_prime(m, a, c.name, d, sp.factors[d])
        _cap_spatial(m, a)
        if is_legal(m, w, a):
            return m
    raise NoLegalSampleError(
        f"no capacity-legal mapping for {w.id} on {a.name} in {max_retries} draws")
