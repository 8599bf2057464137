"""Named, role-tagged parameter collections.

A :class:`ParameterSet` is the unit of broadcast and aggregation: a mapping
from hierarchical names (``"backbone/conv1/weight"``) to numpy arrays, where
every entry is tagged with exactly one role out of ``backbone``, ``head`` or
``projector``.  The server holds backbone+head, clients hold
backbone+projector; moving parameters between the two sides is done with
:func:`extract_role` and :func:`stitch`.

Batch-norm running statistics live in the set alongside weights (they are
broadcast and averaged like any other entry) but are excluded from gradient
updates and from trainable-parameter counts; see :func:`is_buffer`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

ROLES = ("backbone", "head", "projector")

# Entry-name suffixes that mark non-trainable state (batch-norm statistics).
_BUFFER_SUFFIXES = ("running_mean", "running_var")


def is_buffer(name: str) -> bool:
    """True for entries updated by statistics tracking, not by gradients."""
    return name.rsplit("/", 1)[-1] in _BUFFER_SUFFIXES


@dataclass
class ParameterSet:
    """Named tensors with a role tag per entry."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    roles: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.entries) != set(self.roles):
            raise ParameterError("entries and roles must cover the same names")
        for name, role in self.roles.items():
            if role not in ROLES:
                raise ParameterError(f"unknown role {role!r} for entry {name!r}")

    def copy(self) -> "ParameterSet":
        """Deep copy; the result shares no array storage with the source."""
        return ParameterSet(
            entries={k: v.copy() for k, v in self.entries.items()},
            roles=dict(self.roles),
        )

    def names(self) -> list[str]:
        return sorted(self.entries)

    def role_of(self, name: str) -> str:
        return self.roles[name]

    def present_roles(self) -> set[str]:
        return set(self.roles.values())

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if not is_buffer(n)]

    def num_parameters(self, roles: tuple[str, ...] | None = None) -> int:
        """Count trainable scalars, optionally restricted to some roles."""
        total = 0
        for name in self.trainable_names():
            if roles is None or self.roles[name] in roles:
                total += self.entries[name].size
        return total

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries


def shape_compatible(a: ParameterSet, b: ParameterSet) -> bool:
    """Same names, same shapes, same roles."""
    if set(a.entries) != set(b.entries) or a.roles != b.roles:
        return False
    return all(a.entries[n].shape == b.entries[n].shape for n in a.entries)


def extract_role(params: ParameterSet, role: str) -> ParameterSet:
    """Sub-set holding exactly the entries of ``role``.

    Arrays are shared with the source, not copied; copy at trust boundaries
    (broadcast/upload) is the caller's job.  A valid role with no entries
    yields an empty set — e.g. extracting ``projector`` from a server-side
    state, which never holds one.
    """
    if role not in ROLES:
        raise ParameterError(f"unknown role {role!r}; expected one of {ROLES}")
    names = [n for n, r in params.roles.items() if r == role]
    return ParameterSet(
        entries={n: params.entries[n] for n in names},
        roles={n: role for n in names},
    )


def stitch(part_a: ParameterSet, part_b: ParameterSet) -> ParameterSet:
    """Union of two parameter sets with disjoint names.

    Round-trips with :func:`extract_role`: stitching the backbone and head
    extracted from a set reproduces that set restricted to those roles.
    """
    overlap = set(part_a.entries) & set(part_b.entries)
    if overlap:
        raise ParameterError(f"overlapping entries in stitch: {sorted(overlap)[:5]}")
    entries = dict(part_a.entries)
    entries.update(part_b.entries)
    roles = dict(part_a.roles)
    roles.update(part_b.roles)
    return ParameterSet(entries=entries, roles=roles)


def ema_blend(target: ParameterSet, online: ParameterSet, decay: float) -> ParameterSet:
    """Return ``decay * target + (1 - decay) * online``, entrywise.

    Both sets must be shape-compatible.  ``decay=1`` is a fixed point,
    ``decay=0`` copies the online values.
    """
    if not shape_compatible(target, online):
        raise ParameterError("EMA requires shape-compatible parameter sets")
    d = float(decay)
    entries = {
        n: d * target.entries[n] + (1.0 - d) * online.entries[n]
        for n in target.entries
    }
    return ParameterSet(entries=entries, roles=dict(target.roles))


def ema_blend_inplace(target: ParameterSet, online: ParameterSet, decay: float) -> None:
    """In-place variant of :func:`ema_blend` for hot training loops."""
    d = float(decay)
    for n, t in target.entries.items():
        t *= d
        t += (1.0 - d) * online.entries[n]


def mean_parameter_sets(sets: list[ParameterSet], weights: list[float] | None = None) -> ParameterSet:
    """Entrywise (weighted) mean of shape-compatible parameter sets.

    Accumulation happens in float64, which makes the unweighted mean of
    float32 inputs exactly invariant to the order of the inputs (each
    partial sum is exact in double precision for realistic set counts).
    """
    if not sets:
        raise ParameterError("cannot average an empty list of parameter sets")
    first = sets[0]
    for other in sets[1:]:
        if not shape_compatible(first, other):
            raise ParameterError("parameter sets to average are not shape-compatible")
    if weights is not None:
        if len(weights) != len(sets):
            raise ParameterError("one weight per parameter set required")
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise ParameterError("aggregation weights must have positive sum")
        w = w / total
    entries = {}
    for name in first.entries:
        acc = np.zeros(first.entries[name].shape, dtype=np.float64)
        if weights is None:
            # Sum raw values and divide once: float32 inputs accumulate
            # exactly in float64, so the result is order-invariant.
            for ps in sets:
                acc += ps.entries[name]
            acc /= len(sets)
        else:
            for wi, ps in zip(w, sets):
                acc += wi * ps.entries[name].astype(np.float64)
        entries[name] = acc.astype(first.entries[name].dtype)
    return ParameterSet(entries=entries, roles=dict(first.roles))
