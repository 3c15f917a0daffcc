"""Loop-nest workloads: operator shapes, tensor projections, densities.

A workload is a named bag of loop dimensions plus the projection of each of
the three operand tensors (weight, input, output) onto those dimensions.
CONV2D is the full 7-loop form (B,K,C,Y,X,R,S); GEMM is the 3-loop form
(M,N,K). Densities are scalar per tensor role.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

WEIGHT = "weight"
INPUT = "input"
OUTPUT = "output"
TENSORS = (WEIGHT, INPUT, OUTPUT)

CONV2D = "conv2d"
GEMM = "gemm"

# Fixed reference orders, also used for canonical permutations.
REFERENCE_ORDER = {
    CONV2D: ("B", "K", "C", "Y", "X", "R", "S"),
    GEMM: ("M", "N", "K"),
}

# Distance sentinel for workload pairs that can never be matched (different
# operator kinds): warm-start scaling is only meaningful on like loop nests.
INFINITE_DISTANCE = math.inf


class WorkloadError(ValueError):
    """Malformed workload definition or workload file."""


@dataclass(frozen=True)
class Dimension:
    name: str
    extent: int

    def __post_init__(self):
        if self.extent < 1:
            raise WorkloadError(f"dimension {self.name}: extent must be >= 1, got {self.extent}")


@dataclass(frozen=True)
class TensorProjection:
    tensor: str                                   # weight | input | output
    relevant_dims: tuple[str, ...]                # dims indexing this tensor
    halo_pairs: tuple[tuple[str, str], ...] = ()  # (spatial_dim, window_dim) sliding windows

    def __post_init__(self):
        if self.tensor not in TENSORS:
            raise WorkloadError(f"unknown tensor role {self.tensor!r}")


@dataclass
class LayerWorkload:
    id: str
    op_kind: str
    dims: tuple[Dimension, ...]
    projections: tuple[TensorProjection, ...]
    density: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.op_kind not in REFERENCE_ORDER:
            raise WorkloadError(f"{self.id}: unknown op kind {self.op_kind!r}")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise WorkloadError(f"{self.id}: duplicate dimension names")
        roles = [p.tensor for p in self.projections]
        if sorted(roles) != sorted(TENSORS):
            raise WorkloadError(f"{self.id}: need exactly one projection per tensor, got {roles}")
        name_set = set(names)
        for p in self.projections:
            for d in p.relevant_dims:
                if d not in name_set:
                    raise WorkloadError(f"{self.id}: projection {p.tensor} names unknown dim {d}")
            for s, w in p.halo_pairs:
                if s not in name_set or w not in name_set:
                    raise WorkloadError(f"{self.id}: halo pair ({s},{w}) names unknown dim")
        for role, val in self.density.items():
            if role not in TENSORS:
                raise WorkloadError(f"{self.id}: density for unknown tensor {role!r}")
            if not (0.0 < val <= 1.0):
                raise WorkloadError(f"{self.id}: density[{role}]={val} outside (0,1]")
        self.density = {t: float(self.density.get(t, 1.0)) for t in TENSORS}
        if not self.reduction_dims():
            raise WorkloadError(f"{self.id}: no reduction dimension")

    def dim_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def extents(self) -> dict[str, int]:
        return {d.name: d.extent for d in self.dims}

    def extent(self, name: str) -> int:
        for d in self.dims:
            if d.name == name:
                return d.extent
        raise WorkloadError(f"{self.id}: no dimension {name}")

    def projection(self, tensor: str) -> TensorProjection:
        for p in self.projections:
            if p.tensor == tensor:
                return p
        raise WorkloadError(f"{self.id}: no projection for {tensor}")

    def reduction_dims(self) -> tuple[str, ...]:
        """Dims that do not index the output: every revisit accumulates."""
        out = set(self.projection(OUTPUT).relevant_dims)
        return tuple(d.name for d in self.dims if d.name not in out)

    def traffic_dims(self, tensor: str) -> frozenset[str]:
        """Dims whose outer iteration forces re-accessing this tensor's tile.

        Input: its own dims plus the sliding-window dims (a window shift
        needs a new halo'd tile). Output: everything (reduction revisits are
        partial-sum re-accesses).
        """
        proj = self.projection(tensor)
        dims = set(proj.relevant_dims)
        if tensor == INPUT:
            dims.update(w for _, w in proj.halo_pairs)
        if tensor == OUTPUT:
            dims.update(self.reduction_dims())
        return frozenset(dims)

    def signature(self) -> tuple:
        """Replay-buffer key: op kind + extent vector + densities."""
        ext = self.extents()
        order = REFERENCE_ORDER[self.op_kind]
        return (self.op_kind,
                tuple(ext.get(d, 1) for d in order),
                tuple(self.density[t] for t in TENSORS))


def conv2d(id: str, *, B=1, K=1, C=1, Y=1, X=1, R=1, S=1, density=None) -> LayerWorkload:
    dims = tuple(Dimension(n, e) for n, e in
                 zip(REFERENCE_ORDER[CONV2D], (B, K, C, Y, X, R, S)))
    projections = (
        TensorProjection(WEIGHT, ("K", "C", "R", "S")),
        TensorProjection(INPUT, ("B", "C", "Y", "X"), (("Y", "R"), ("X", "S"))),
        TensorProjection(OUTPUT, ("B", "K", "Y", "X")),
    )
    return LayerWorkload(id, CONV2D, dims, projections, dict(density or {}))


def gemm(id: str, *, M=1, N=1, K=1, density=None) -> LayerWorkload:
    dims = tuple(Dimension(n, e) for n, e in zip(REFERENCE_ORDER[GEMM], (M, N, K)))
    projections = (
        TensorProjection(WEIGHT, ("K", "N")),
        TensorProjection(INPUT, ("M", "K")),
        TensorProjection(OUTPUT, ("M", "N")),
    )
    return LayerWorkload(id, GEMM, dims, projections, dict(density or {}))


def total_macs(w: LayerWorkload) -> int:
    total = 1
    for d in w.dims:
        total *= d.extent
    return total


def editing_distance(a: LayerWorkload, b: LayerWorkload):
    """Number of dimensions whose extents differ; inf across op kinds."""
    if a.op_kind != b.op_kind:
        return INFINITE_DISTANCE
    ea, eb = a.extents(), b.extents()
    if set(ea) != set(eb):
        raise WorkloadError(
            f"workloads {a.id} and {b.id} share op kind but not dimension names")
    return sum(1 for d in ea if ea[d] != eb[d])


_RECORD_KEYS = {"id", "op", "dims", "density"}


def parse_workload(record: dict, index: int = 0) -> LayerWorkload:
    if not isinstance(record, dict):
        raise WorkloadError(f"record {index}: expected an object")
    unknown = set(record) - _RECORD_KEYS
    if unknown:
        raise WorkloadError(f"record {index}: unknown keys {sorted(unknown)}")
    for key in ("id", "op", "dims"):
        if key not in record:
            raise WorkloadError(f"record {index}: missing key {key!r}")
    wid, op = record["id"], record["op"]
    if op not in REFERENCE_ORDER:
        raise WorkloadError(f"record {index} ({wid}): unknown op {op!r}")
    dims = record["dims"]
    if not isinstance(dims, dict):
        raise WorkloadError(f"record {index} ({wid}): dims must be an object")
    allowed = set(REFERENCE_ORDER[op])
    unknown = set(dims) - allowed
    if unknown:
        raise WorkloadError(f"record {index} ({wid}): unknown dims {sorted(unknown)} for {op}")
    for name, extent in dims.items():
        if not isinstance(extent, int) or isinstance(extent, bool) or extent < 1:
            raise WorkloadError(f"record {index} ({wid}): dim {name} extent must be a positive int")
    density = record.get("density", {})
    if not isinstance(density, dict):
        raise WorkloadError(f"record {index} ({wid}): density must be an object")
    kwargs = {name: dims.get(name, 1) for name in allowed}
    maker = conv2d if op == CONV2D else gemm
    return maker(wid, density=density, **kwargs)


def load_workloads(path) -> list[LayerWorkload]:
    """Parse a workload file: a JSON array of layer records in network order."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise WorkloadError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, list):
        raise WorkloadError(f"{path}: top level must be a JSON array of layer records")
    return [parse_workload(rec, i) for i, rec in enumerate(data)]
