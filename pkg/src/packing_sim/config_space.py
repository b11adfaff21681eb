"""Server configuration spaces for systems with packing constraints.

A configuration is a vector of customer counts, one entry per customer
type, describing what a single server currently holds.  A configuration
space is a finite, coordinate-monotone family of such vectors: removing
one customer from a valid configuration leaves a valid configuration.
Spaces are either enumerated from a vector-packing resource profile or
supplied explicitly and validated.

Conventions used throughout the package:

* the zero configuration is never stored; index ``-1`` stands for it in
  edge tables,
* nonzero configurations are sorted lexicographically and addressed by
  their position in ``ConfigSpace.configs``,
* an "edge" is a pair (configuration, type) with at least one customer
  of that type present; placements and departures move a server along
  an edge,
* when a resource profile is available, configurations with identical
  resource usage are grouped into aggregate classes.  Class id 0 is the
  zero class; nonzero classes are numbered by lexicographic order of
  their usage vectors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

Configuration = tuple[int, ...]

# Relative slack for capacity comparisons so float profiles behave.
_FEAS_RTOL = 1e-12


class ConfigSpaceError(ValueError):
    """Raised for invalid profiles, config sets, or oversized spaces."""


@dataclass(frozen=True)
class ResourceProfile:
    """Vector-packing description: capacities and per-type requirements.

    ``capacity[n]`` is the amount of resource n one server offers and
    ``requirement[i][n]`` the amount one type-i customer occupies.
    """

    capacity: tuple[float, ...]
    requirement: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        cap = tuple(float(v) for v in self.capacity)
        req = tuple(tuple(float(v) for v in row) for row in self.requirement)
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "requirement", req)
        if not cap:
            raise ConfigSpaceError("profile needs at least one resource")
        if not req:
            raise ConfigSpaceError("profile needs at least one customer type")
        for n, v in enumerate(cap):
            if not v > 0:
                raise ConfigSpaceError(f"capacity of resource {n} must be positive, got {v}")
        for i, row in enumerate(req):
            if len(row) != len(cap):
                raise ConfigSpaceError(
                    f"requirement row {i} has {len(row)} entries, expected {len(cap)}"
                )
            if any(v < 0 for v in row):
                raise ConfigSpaceError(f"requirement row {i} has a negative entry")
            if all(v == 0 for v in row):
                raise ConfigSpaceError(f"type {i} uses no resource at all")

    @property
    def num_types(self) -> int:
        return len(self.requirement)

    @property
    def num_resources(self) -> int:
        return len(self.capacity)

    def usage(self, config: Sequence[int]) -> tuple[float, ...]:
        """Total resource usage of one server in the given configuration."""
        return tuple(
            sum(k * self.requirement[i][n] for i, k in enumerate(config))
            for n in range(self.num_resources)
        )

    def fits(self, config: Sequence[int]) -> bool:
        used = self.usage(config)
        return all(u <= c * (1.0 + _FEAS_RTOL) for u, c in zip(used, self.capacity))

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceProfile":
        try:
            cap = tuple(d["B"])
            req = tuple(tuple(row) for row in d["b"])
        except (KeyError, TypeError) as exc:
            raise ConfigSpaceError(f"profile dict needs 'B' and 'b' arrays: {exc}") from exc
        return cls(cap, req)

    def to_dict(self) -> dict:
        return {"B": list(self.capacity), "b": [list(r) for r in self.requirement]}


@dataclass(frozen=True)
class AggregateInfo:
    """Partition of a configuration space by resource usage.

    ``class_of[t]`` is the class id of configuration index t (always >= 1;
    id 0 is reserved for the zero configuration).  ``members[q]`` lists the
    configuration indexes of class q, ``usage[q]`` its common usage vector.
    ``plus_type[q][i]`` is the class reached by adding one type-i customer
    (None when that does not fit), ``minus_type[q][i]`` the class reached by
    removing one (None when no member holds type i; 0 means the zero class).
    ``admit_bases[q][i]`` lists members of q that can accept one type-i
    customer within the space.
    """

    class_of: tuple[int, ...]
    members: tuple[tuple[int, ...], ...]
    usage: tuple[tuple[float, ...], ...]
    plus_type: tuple[tuple[Optional[int], ...], ...]
    minus_type: tuple[tuple[Optional[int], ...], ...]
    admit_bases: tuple[tuple[tuple[int, ...], ...], ...]

    @property
    def num_classes(self) -> int:
        """Number of nonzero classes."""
        return len(self.members) - 1


@dataclass(frozen=True)
class ConfigSpace:
    """A finite monotone family of server configurations plus lookup tables."""

    num_types: int
    configs: tuple[Configuration, ...]
    profile: Optional[ResourceProfile] = None
    aggregates: Optional[AggregateInfo] = field(default=None, repr=False)
    # Edge e moves a server between edge_base[e] (-1 for empty) and
    # edge_target[e] by one customer of type edge_type[e].  Edges are
    # ordered by (type, target index); per-type slices in edges_of_type.
    index: dict = field(default=None, repr=False, compare=False)
    edge_type: tuple[int, ...] = field(default=(), repr=False)
    edge_target: tuple[int, ...] = field(default=(), repr=False)
    edge_base: tuple[int, ...] = field(default=(), repr=False)
    edges_of_type: tuple[tuple[int, ...], ...] = field(default=(), repr=False)
    up_index: tuple[tuple[Optional[int], ...], ...] = field(default=(), repr=False)
    down_index: tuple[tuple[Optional[int], ...], ...] = field(default=(), repr=False)
    unit_index: tuple[int, ...] = field(default=(), repr=False)
    edge_by_target: tuple[dict, ...] = field(default=(), repr=False, compare=False)

    @property
    def num_configs(self) -> int:
        return len(self.configs)

    @property
    def num_edges(self) -> int:
        return len(self.edge_type)

    @property
    def edge_pairs(self) -> tuple[tuple[Configuration, int], ...]:
        """Edges in (configuration, type) form, matching edge indexes."""
        return tuple(
            (self.configs[t], i) for i, t in zip(self.edge_type, self.edge_target)
        )

    def config_index(self, config: Sequence[int]) -> int:
        """Index of a nonzero configuration; -1 for the zero configuration."""
        key = tuple(int(v) for v in config)
        if all(v == 0 for v in key):
            return -1
        try:
            return self.index[key]
        except KeyError:
            raise ConfigSpaceError(f"configuration {key} not in space") from None

    def edge_index(self, config: Sequence[int], i: int) -> int:
        """Edge index for (configuration, type)."""
        t = self.config_index(config)
        if t < 0:
            raise ConfigSpaceError("the zero configuration has no edges")
        try:
            return self.edge_by_target[i][t]
        except KeyError:
            raise ConfigSpaceError(f"({tuple(config)}, {i}) is not an edge") from None

    @property
    def has_aggregates(self) -> bool:
        return self.aggregates is not None


def _check_vector(config: Sequence[int], num_types: int) -> Configuration:
    vec = tuple(config)
    if len(vec) != num_types:
        raise ConfigSpaceError(
            f"configuration {vec} has {len(vec)} entries, expected {num_types}"
        )
    out = []
    for v in vec:
        iv = int(v)
        if iv != v or iv < 0:
            raise ConfigSpaceError(f"configuration {vec} must have nonnegative integer entries")
        out.append(iv)
    return tuple(out)


def _unit(num_types: int, i: int) -> Configuration:
    return tuple(1 if j == i else 0 for j in range(num_types))


def _build_aggregates(
    configs: tuple[Configuration, ...],
    index: dict,
    profile: ResourceProfile,
    num_types: int,
) -> AggregateInfo:
    usages = [profile.usage(k) for k in configs]
    # Group configuration indexes by usage vector; class ids follow the
    # lexicographic order of usage vectors, with 0 kept for the zero class.
    groups: dict[tuple[float, ...], list[int]] = {}
    for t, u in enumerate(usages):
        groups.setdefault(u, []).append(t)
    ordered = sorted(groups.items(), key=lambda kv: kv[0])
    members = [()] + [tuple(ts) for _, ts in ordered]
    usage = [tuple(0.0 for _ in range(profile.num_resources))] + [u for u, _ in ordered]
    class_of = [0] * len(configs)
    for q, (_, ts) in enumerate(ordered, start=1):
        for t in ts:
            class_of[t] = q

    plus_type: list[tuple[Optional[int], ...]] = []
    minus_type: list[tuple[Optional[int], ...]] = []
    admit_bases: list[tuple[tuple[int, ...], ...]] = []
    for q in range(len(members)):
        prow: list[Optional[int]] = []
        mrow: list[Optional[int]] = []
        arow: list[tuple[int, ...]] = []
        for i in range(num_types):
            if q == 0:
                ei = index.get(_unit(num_types, i))
                prow.append(None if ei is None else class_of[ei])
                mrow.append(None)
                arow.append(())
                continue
            bases = []
            target = None
            for t in members[q]:
                k = configs[t]
                up = list(k)
                up[i] += 1
                ut = index.get(tuple(up))
                if ut is not None:
                    bases.append(t)
                    target = class_of[ut]
            prow.append(target)
            arow.append(tuple(bases))
            down_class: Optional[int] = None
            for t in members[q]:
                k = configs[t]
                if k[i] >= 1:
                    dn = list(k)
                    dn[i] -= 1
                    if all(v == 0 for v in dn):
                        down_class = 0
                    else:
                        down_class = class_of[index[tuple(dn)]]
                    break
            mrow.append(down_class)
        plus_type.append(tuple(prow))
        minus_type.append(tuple(mrow))
        admit_bases.append(tuple(arow))

    return AggregateInfo(
        class_of=tuple(class_of),
        members=tuple(members),
        usage=tuple(usage),
        plus_type=tuple(plus_type),
        minus_type=tuple(minus_type),
        admit_bases=tuple(admit_bases),
    )


def _assemble(
    num_types: int,
    config_set: set[Configuration],
    profile: Optional[ResourceProfile],
) -> ConfigSpace:
    configs = tuple(sorted(config_set))
    index = {k: t for t, k in enumerate(configs)}

    # Monotonicity and unit-vector presence.
    for i in range(num_types):
        if _unit(num_types, i) not in index:
            raise ConfigSpaceError(f"unit configuration for type {i} is missing")
    for k in configs:
        for i in range(num_types):
            if k[i] >= 1:
                down = list(k)
                down[i] -= 1
                dkey = tuple(down)
                if any(dkey) and dkey not in index:
                    raise ConfigSpaceError(
                        f"set is not monotone: {k} present but {dkey} missing"
                    )

    edge_type: list[int] = []
    edge_target: list[int] = []
    edge_base: list[int] = []
    edges_of_type: list[tuple[int, ...]] = []
    for i in range(num_types):
        per_type = []
        for t, k in enumerate(configs):
            if k[i] >= 1:
                down = list(k)
                down[i] -= 1
                dkey = tuple(down)
                b = index[dkey] if any(dkey) else -1
                per_type.append(len(edge_type))
                edge_type.append(i)
                edge_target.append(t)
                edge_base.append(b)
        edges_of_type.append(tuple(per_type))

    up_index: list[tuple[Optional[int], ...]] = []
    down_index: list[tuple[Optional[int], ...]] = []
    for k in configs:
        up_row: list[Optional[int]] = []
        down_row: list[Optional[int]] = []
        for i in range(num_types):
            up = list(k)
            up[i] += 1
            up_row.append(index.get(tuple(up)))
            if k[i] >= 1:
                down = list(k)
                down[i] -= 1
                dkey = tuple(down)
                down_row.append(index[dkey] if any(dkey) else -1)
            else:
                down_row.append(None)
        up_index.append(tuple(up_row))
        down_index.append(tuple(down_row))

    aggregates = None
    if profile is not None:
        aggregates = _build_aggregates(configs, index, profile, num_types)

    return ConfigSpace(
        num_types=num_types,
        configs=configs,
        profile=profile,
        aggregates=aggregates,
        index=index,
        edge_type=tuple(edge_type),
        edge_target=tuple(edge_target),
        edge_base=tuple(edge_base),
        edges_of_type=tuple(edges_of_type),
        up_index=tuple(up_index),
        down_index=tuple(down_index),
        unit_index=tuple(index[_unit(num_types, i)] for i in range(num_types)),
        edge_by_target=tuple(
            {edge_target[e]: e for e in edges_of_type[i]} for i in range(num_types)
        ),
    )


def enumerate_configs(profile: ResourceProfile, max_configs: int = 1_000_000) -> ConfigSpace:
    """Enumerate every nonzero configuration that fits the profile.

    Depth-first over types with running capacity; raises if a unit
    configuration does not fit or the space would exceed ``max_configs``.
    """
    num_types = profile.num_types
    for i in range(num_types):
        if not profile.fits(_unit(num_types, i)):
            raise ConfigSpaceError(
                f"no nonzero feasible configurations for type {i}: one customer does not fit"
            )

    cap = profile.capacity
    found: set[Configuration] = set()

    def extend(prefix: list[int], remaining: tuple[float, ...], i: int):
        if i == num_types:
            key = tuple(prefix)
            if any(key):
                found.add(key)
                if len(found) > max_configs:
                    raise ConfigSpaceError(
                        f"configuration space exceeds cap of {max_configs}"
                    )
            return
        req = profile.requirement[i]
        count = 0
        rem = remaining
        while True:
            extend(prefix + [count], rem, i + 1)
            nxt = tuple(r - v for r, v in zip(rem, req))
            if any(n < -c * _FEAS_RTOL for n, c in zip(nxt, cap)):
                break
            count += 1
            rem = nxt

    extend([], cap, 0)
    if not found:
        raise ConfigSpaceError("no nonzero feasible configurations")
    return _assemble(num_types, found, profile)


def validate_explicit_configs(
    configs: Iterable[Sequence[int]],
    num_types: Optional[int] = None,
    profile: Optional[ResourceProfile] = None,
    max_configs: int = 1_000_000,
) -> ConfigSpace:
    """Build a space from an explicit configuration set.

    The set must be coordinate-monotone and contain every unit vector;
    the zero configuration may be listed but is never stored.  When a
    profile is supplied, every configuration must fit it and aggregate
    classes are derived from resource usage.
    """
    raw = [tuple(c) for c in configs]
    if not raw:
        raise ConfigSpaceError("empty configuration set")
    if num_types is None:
        num_types = len(raw[0])
    if profile is not None and profile.num_types != num_types:
        raise ConfigSpaceError(
            f"profile has {profile.num_types} types, configurations have {num_types}"
        )
    checked: set[Configuration] = set()
    for c in raw:
        vec = _check_vector(c, num_types)
        if any(vec):
            checked.add(vec)
    if len(checked) > max_configs:
        raise ConfigSpaceError(f"configuration space exceeds cap of {max_configs}")
    if profile is not None:
        for vec in sorted(checked):
            if not profile.fits(vec):
                raise ConfigSpaceError(f"configuration {vec} does not fit the profile")
    return _assemble(num_types, checked, profile)


def class_minus_type(space: ConfigSpace, class_id: int, i: int) -> Optional[int]:
    """Class reached from ``class_id`` by removing one type-i customer.

    Returns 0 for the zero class and None when no member of the class
    holds a type-i customer.  Well defined because all members share one
    usage vector.
    """
    agg = _require_aggregates(space)
    if not 1 <= class_id <= agg.num_classes:
        raise ConfigSpaceError(f"class id {class_id} out of range")
    if not 0 <= i < space.num_types:
        raise ConfigSpaceError(f"type {i} out of range")
    return agg.minus_type[class_id][i]


def _require_aggregates(space: ConfigSpace) -> AggregateInfo:
    if space.aggregates is None:
        raise ConfigSpaceError("space has no aggregate classes (no resource profile)")
    return space.aggregates


def space_from_dict(d: dict, max_configs: int = 1_000_000) -> ConfigSpace:
    """Build a space from a config dict with 'profile' and/or 'configs' keys.

    Accepts either the nested form {"profile": {"B":..,"b":..}} or a flat
    {"B":..,"b":..}; explicit sets use {"configs": [[..],..]}.
    """
    profile = None
    if "profile" in d:
        profile = ResourceProfile.from_dict(d["profile"])
    elif "B" in d and "b" in d:
        profile = ResourceProfile.from_dict(d)
    if "configs" in d:
        return validate_explicit_configs(
            [tuple(c) for c in d["configs"]], profile=profile, max_configs=max_configs
        )
    if profile is None:
        raise ConfigSpaceError("config dict needs a 'profile' or a 'configs' entry")
    return enumerate_configs(profile, max_configs=max_configs)


def space_to_dict(space: ConfigSpace) -> dict:
    """JSON-ready dump of configurations, edges, and aggregate classes."""
    out = {
        "num_types": space.num_types,
        "configs": [list(k) for k in space.configs],
        "edges": [
            {"config": list(space.configs[t]), "type": i}
            for i, t in zip(space.edge_type, space.edge_target)
        ],
    }
    if space.profile is not None:
        out["profile"] = space.profile.to_dict()
    if space.aggregates is not None:
        agg = space.aggregates
        out["classes"] = [
            {
                "id": q,
                "usage": list(agg.usage[q]),
                "configs": [list(space.configs[t]) for t in agg.members[q]],
            }
            for q in range(1, agg.num_classes + 1)
        ]
    return out
