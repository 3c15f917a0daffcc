"""Accelerator description: buffer hierarchy and compute parallelism levels.

Memory levels are ordered outermost to innermost; exactly the outermost one
is unbounded (DRAM). Each compute level names the memory level that feeds
it, i.e. the spatial fan-out sits between that level and the next one in.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


class ArchError(ValueError):
    """Malformed accelerator configuration."""


# Positional fallbacks when a config omits energies/bandwidths: outermost
# level behaves like DRAM, innermost like a private buffer, middle like a
# shared SRAM. Values are per word (pJ) and words/cycle.
DEFAULT_ENERGY = {"outer": 200.0, "mid": 6.0, "inner": 1.0}
DEFAULT_BANDWIDTH = {"outer": 16.0, "mid": 64.0, "inner": 1e9}
DEFAULT_MAC_ENERGY = 0.5


@dataclass(frozen=True)
class MemoryLevel:
    name: str
    capacity_words: int | None          # None = unbounded (DRAM)
    access_energy_pj: float
    bandwidth_words_per_cycle: float
    instances: int = 1

    def __post_init__(self):
        if self.capacity_words is not None and self.capacity_words < 1:
            raise ArchError(f"level {self.name}: capacity must be >= 1 word")
        if self.access_energy_pj < 0:
            raise ArchError(f"level {self.name}: negative access energy")
        if self.bandwidth_words_per_cycle <= 0:
            raise ArchError(f"level {self.name}: bandwidth must be positive")
        if self.instances < 1:
            raise ArchError(f"level {self.name}: instances must be >= 1")


@dataclass(frozen=True)
class ComputeLevel:
    name: str
    units: int
    nested_below: str  # memory level whose tile this level fans out

    def __post_init__(self):
        if self.units < 1:
            raise ArchError(f"compute level {self.name}: units must be >= 1")


@dataclass(frozen=True)
class AcceleratorConfig:
    name: str
    memory_levels: tuple[MemoryLevel, ...]   # outermost first
    compute_levels: tuple[ComputeLevel, ...]  # outer first (PE array, then ALUs)
    mac_energy_pj: float = DEFAULT_MAC_ENERGY
    bytes_per_word: int = 1

    def __post_init__(self):
        if len(self.memory_levels) < 2:
            raise ArchError(f"{self.name}: need at least 2 memory levels")
        if not self.compute_levels:
            raise ArchError(f"{self.name}: need at least 1 compute level")
        unbounded = [i for i, m in enumerate(self.memory_levels) if m.capacity_words is None]
        if unbounded != [0]:
            raise ArchError(
                f"{self.name}: exactly the outermost memory level must be unbounded, "
                f"got unbounded at positions {unbounded}")
        names = [m.name for m in self.memory_levels]
        if len(set(names)) != len(names):
            raise ArchError(f"{self.name}: duplicate memory level names")
        cnames = [c.name for c in self.compute_levels]
        if len(set(cnames)) != len(cnames) or set(cnames) & set(names):
            raise ArchError(f"{self.name}: compute level names must be unique and distinct")
        mem_index = {m.name: i for i, m in enumerate(self.memory_levels)}
        prev = -1
        for c in self.compute_levels:
            if c.nested_below not in mem_index:
                raise ArchError(f"{self.name}: compute level {c.name} nested below "
                                f"unknown memory level {c.nested_below}")
            idx = mem_index[c.nested_below]
            if idx <= prev:
                raise ArchError(f"{self.name}: compute levels must be strictly ordered "
                                "outer to inner")
            prev = idx
        if self.mac_energy_pj < 0:
            raise ArchError(f"{self.name}: negative MAC energy")
        if self.bytes_per_word < 1:
            raise ArchError(f"{self.name}: bytes_per_word must be >= 1")

    def memory_index(self, name: str) -> int:
        for i, m in enumerate(self.memory_levels):
            if m.name == name:
                return i
        raise ArchError(f"{self.name}: no memory level {name}")

    def compute_level(self, name: str) -> ComputeLevel:
        for c in self.compute_levels:
            if c.name == name:
                return c
        raise ArchError(f"{self.name}: no compute level {name}")

    def total_units(self) -> int:
        total = 1
        for c in self.compute_levels:
            total *= c.units
        return total

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "bytes_per_word": self.bytes_per_word,
            "mac_energy_pj": self.mac_energy_pj,
            "memory_levels": [
                {"name": m.name, "capacity_words": m.capacity_words,
                 "access_energy_pj": m.access_energy_pj,
                 "bandwidth": m.bandwidth_words_per_cycle,
                 "instances": m.instances}
                for m in self.memory_levels],
            "compute_levels": [
                {"name": c.name, "units": c.units, "nested_below": c.nested_below}
                for c in self.compute_levels],
        }


def arch_fingerprint(a: AcceleratorConfig) -> str:
    """Deterministic digest of a config, stable across field ordering."""
    blob = json.dumps(a.to_json_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _positional_default(table: dict, idx: int, last: int) -> float:
    if idx == 0:
        return table["outer"]
    if idx == last:
        return table["inner"]
    return table["mid"]


_MEM_KEYS = {"name", "capacity_words", "access_energy_pj", "bandwidth", "instances"}
_COMPUTE_KEYS = {"name", "units", "nested_below"}
_TOP_KEYS = {"name", "bytes_per_word", "mac_energy_pj", "memory_levels", "compute_levels"}


def parse_arch(data: dict, source: str = "<arch>") -> AcceleratorConfig:
    if not isinstance(data, dict):
        raise ArchError(f"{source}: top level must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ArchError(f"{source}: unknown keys {sorted(unknown)}")
    for key in ("name", "memory_levels", "compute_levels"):
        if key not in data:
            raise ArchError(f"{source}: missing key {key!r}")
    raw_mem = data["memory_levels"]
    if not isinstance(raw_mem, list) or not raw_mem:
        raise ArchError(f"{source}: memory_levels must be a non-empty array (outermost first)")
    last = len(raw_mem) - 1
    levels = []
    for i, m in enumerate(raw_mem):
        unknown = set(m) - _MEM_KEYS
        if unknown:
            raise ArchError(f"{source}: memory level {i}: unknown keys {sorted(unknown)}")
        if "name" not in m:
            raise ArchError(f"{source}: memory level {i}: missing name")
        levels.append(MemoryLevel(
            name=m["name"],
            capacity_words=m.get("capacity_words"),
            access_energy_pj=float(m.get("access_energy_pj",
                                         _positional_default(DEFAULT_ENERGY, i, last))),
            bandwidth_words_per_cycle=float(m.get("bandwidth",
                                                  _positional_default(DEFAULT_BANDWIDTH, i, last))),
            instances=int(m.get("instances", 1)),
        ))
    compute = []
    for i, c in enumerate(data["compute_levels"]):
        unknown = set(c) - _COMPUTE_KEYS
        if unknown:
            raise ArchError(f"{source}: compute level {i}: unknown keys {sorted(unknown)}")
        for key in ("name", "units", "nested_below"):
            if key not in c:
                raise ArchError(f"{source}: compute level {i}: missing {key!r}")
        compute.append(ComputeLevel(c["name"], int(c["units"]), c["nested_below"]))
    return AcceleratorConfig(
        name=data["name"],
        memory_levels=tuple(levels),
        compute_levels=tuple(compute),
        mac_energy_pj=float(data.get("mac_energy_pj", DEFAULT_MAC_ENERGY)),
        bytes_per_word=int(data.get("bytes_per_word", 1)),
    )


def load_arch(path) -> AcceleratorConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return parse_arch(data, source=str(path))
