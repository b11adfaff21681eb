"""Brute-force grid oracle for the fluid optimization problems.

Independent of the solver: parameterizes the feasible polytope by the
non-unit configuration coordinates (the unit coordinates are then fixed
by the per-type conservation constraints), sweeps a regular grid over
the free box, and evaluates the objective directly.  Quality is O(step)
in the argmin and used only at small dimension.
"""

import numpy as np


def _free_axes(space, rho, step):
    unit = set(space.unit_index)
    free = [t for t in range(space.num_configs) if t not in unit]
    axes = []
    for t in free:
        k = space.configs[t]
        ub = min(rho[i] / k[i] for i in range(space.num_types) if k[i] > 0)
        axes.append(np.arange(0.0, ub + step / 2.0, step))
    return free, axes


def grid_search(space, demand, alpha, step=1e-3, aggregate=False, chunk=2_000_000):
    """Minimize the (class-)objective over a grid; returns (value, x).

    ``aggregate=False`` minimizes sum_k x_k^(1+a)/(1+a); ``aggregate=True``
    minimizes the same expression over per-class totals.
    """
    rho = np.asarray(demand.rho, dtype=float)
    p = 1.0 + alpha
    free, axes = _free_axes(space, rho, step)
    units = list(space.unit_index)
    n = space.num_configs

    # Unit coordinate i equals rho_i minus the type-i mass of the free
    # coordinates; configurations contribute to classes via class_of.
    kmat = np.array(
        [[space.configs[t][i] for t in free] for i in range(space.num_types)],
        dtype=float,
    )
    if aggregate:
        agg = space.aggregates
        assert agg is not None, "aggregate oracle needs classes"
        n_classes = agg.num_classes
        free_class = [agg.class_of[t] for t in free]
        unit_class = [agg.class_of[t] for t in units]

    sizes = [len(a) for a in axes]
    total = int(np.prod(sizes)) if sizes else 1
    best_val = np.inf
    best_x = None

    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        flat = np.arange(start, stop)
        coords = []
        rem = flat
        for s in reversed(sizes):
            coords.append(rem % s)
            rem = rem // s
        coords.reverse()
        vals = [axes[d][coords[d]] for d in range(len(axes))]

        dep = np.empty((space.num_types, stop - start))
        for i in range(space.num_types):
            load = np.zeros(stop - start)
            for d in range(len(free)):
                if kmat[i, d]:
                    load += kmat[i, d] * vals[d]
            dep[i] = rho[i] - load
        mask = np.all(dep >= -1e-12, axis=0)
        if not np.any(mask):
            continue
        dep = np.maximum(dep, 0.0)

        if aggregate:
            totals = np.zeros((n_classes + 1, stop - start))
            for d in range(len(free)):
                totals[free_class[d]] += vals[d]
            for j, i in enumerate(range(space.num_types)):
                totals[unit_class[j]] += dep[i]
            obj = np.sum(totals[1:] ** p, axis=0) / p
        else:
            obj = np.sum(dep ** p, axis=0) / p
            for d in range(len(free)):
                obj += vals[d] ** p / p

        obj = np.where(mask, obj, np.inf)
        j = int(np.argmin(obj))
        if obj[j] < best_val:
            best_val = float(obj[j])
            x = np.zeros(n)
            for d, t in enumerate(free):
                x[t] = vals[d][j]
            for i, t in enumerate(units):
                x[t] = dep[i, j]
            best_x = x

    assert best_x is not None, "no feasible grid point"
    return best_val, best_x
