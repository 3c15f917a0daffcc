"""Executable loop-nest simulator: independent traffic/compute oracle.

Instead of closed-form reuse reasoning, this literally iterates every step
of the temporal loop nest, tracks which tile every instance of every
bounded memory level currently holds, and counts word movements event by
event: a fill writes into every instance, the parent serves one read per
distinct tile needed across instances, and output tiles write through on
every eviction and read back on every refill except the very first install.
Deliberately brute force; only usable on small fixtures.
"""

import itertools

from mapsearch.workload import INPUT, OUTPUT, TENSORS

MAX_STEPS = 2_000_000


def _traffic_dims(w, tensor):
    proj = w.projection(tensor)
    rel = set(proj.relevant_dims)
    if tensor == INPUT:
        rel |= {win for _, win in proj.halo_pairs}
    if tensor == OUTPUT:
        out = set(proj.relevant_dims)
        rel |= {d.name for d in w.dims if d.name not in out}
    return rel


def _tile_words(cum, w, tensor):
    proj = w.projection(tensor)
    halo = dict(proj.halo_pairs)
    words = 1
    for d in proj.relevant_dims:
        if d in halo:
            words *= cum[d] + cum[halo[d]] - 1
        else:
            words *= cum[d]
    return words


def _cum_at(m, w, a, level_idx):
    cum = {d: 1 for d in w.dim_names()}
    for j in range(len(a.memory_levels) - 1, level_idx - 1, -1):
        jname = a.memory_levels[j].name
        for c in a.compute_levels:
            if c.nested_below == jname:
                sp = m.spatial(c.name)
                for d in cum:
                    cum[d] *= sp.factors[d]
        tf = m.tiling(jname).factors
        for d in cum:
            cum[d] *= tf[d]
    return cum


def simulate_compute_cycles(m, w, a):
    """One step per full setting of all temporal loop indices."""
    trips = []
    for lv in a.memory_levels:
        t = m.tiling(lv.name)
        trips.extend(t.factors[d] for d in t.permutation)
    total = 1
    for f in trips:
        total *= f
    if total > MAX_STEPS:
        raise RuntimeError(f"simulation too large: {total} steps")
    steps = 0
    for _ in itertools.product(*[range(f) for f in trips]):
        steps += 1
    return steps


def simulate_access_counts(m, w, a):
    """Word accesses at every (memory level, tensor), by literal execution."""
    n_mem = len(a.memory_levels)
    mem_idx = {lv.name: i for i, lv in enumerate(a.memory_levels)}
    acc = {(lv.name, t): 0 for lv in a.memory_levels for t in TENSORS}

    for l in range(1, n_mem):
        lname = a.memory_levels[l].name
        pname = a.memory_levels[l - 1].name
        loops = []  # (dim, trip) outermost -> innermost
        for j in range(l):
            t = m.tiling(a.memory_levels[j].name)
            loops.extend((d, t.factors[d]) for d in t.permutation)
        steps = 1
        for _, f in loops:
            steps *= f
        if steps > MAX_STEPS:
            raise RuntimeError(f"simulation too large: {steps} steps at {lname}")

        # Instance grid of level l: spatial coordinates of every fan-out above it.
        inst_axes = []  # (parent_side: bool, dim, trip)
        for c in a.compute_levels:
            below = mem_idx[c.nested_below]
            if below < l:
                sp = m.spatial(c.name)
                for d, f in sp.factors.items():
                    inst_axes.append((below < l - 1, d, f))
        instance_coords = list(itertools.product(*[range(f) for _, _, f in inst_axes]))

        cum = _cum_at(m, w, a, l)
        for tensor in TENSORS:
            rel = _traffic_dims(w, tensor)
            fp = _tile_words(cum, w, tensor)
            rel_loop_idx = [i for i, (d, _) in enumerate(loops) if d in rel]
            group_idx = [i for i, (pside, _, _) in enumerate(inst_axes) if pside]
            rel_axis_idx = [i for i, (_, d, _) in enumerate(inst_axes) if d in rel]

            # Per fill event: tiles needed per parent-instance group, shared
            # fetches deduplicated by identity.
            groups = {}
            for coord in instance_coords:
                gkey = tuple(coord[i] for i in group_idx)
                groups.setdefault(gkey, set()).add(tuple(coord[i] for i in rel_axis_idx))
            distinct_per_event = sum(len(s) for s in groups.values())
            n_inst = len(instance_coords)

            events = 0
            prev = None
            for step in itertools.product(*[range(f) for _, f in loops]):
                ident = tuple(step[i] for i in rel_loop_idx)
                if ident != prev:
                    prev = ident
                    events += 1

            if tensor == OUTPUT:
                up = events * distinct_per_event * fp       # evict on every change + final flush
                down = (events - 1) * distinct_per_event * fp  # read back except first install
                acc[(lname, tensor)] += up + down
                acc[(pname, tensor)] += up + down
            else:
                acc[(lname, tensor)] += events * n_inst * fp
                acc[(pname, tensor)] += events * distinct_per_event * fp
    return acc
