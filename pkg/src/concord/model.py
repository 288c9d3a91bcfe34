"""Domain types for relationship assignment over metadata concepts.

A vocabulary is a dense list of concepts indexed 0..n-1.  Each candidate
concept pair carries a binary relationship variable with a prior belief.
Concept triples carry a shared ternary potential whose zero entries forbid
label configurations that would break transitivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

# Finite stand-in for log(0).  Values at or below LOG_ZERO_BOUND are treated
# as hard zeros by message and scoring arithmetic, which keeps log-domain
# additions saturating instead of overflowing to NaN.
LOG_ZERO = -1e30
LOG_ZERO_BOUND = -1e18

# Priors are clamped into [PRIOR_EPSILON, 1 - PRIOR_EPSILON] before logs.
PRIOR_EPSILON = 1e-6

# The eight label configurations (x_ij, x_jk, x_ik) of a ternary clique,
# ordered so that configuration (a, b, c) sits at table index 4a + 2b + c.
CONFIGURATIONS: tuple[tuple[int, int, int], ...] = tuple(
    (a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)
)


def configuration_index(a: int, b: int, c: int) -> int:
    return 4 * a + 2 * b + c


class RelationshipKind(Enum):
    """Relationship semantics attached to a whole graph."""

    EQUIVALENCE = "equivalence"
    PARENT_CHILD = "parent-child"

    @property
    def symmetric(self) -> bool:
        return self is RelationshipKind.EQUIVALENCE

    @property
    def zero_configurations(self) -> frozenset[tuple[int, int, int]]:
        # Equivalence forbids any triple with exactly two positive labels;
        # parent-child only forbids a broken transitive chain
        # (i->j and j->k without i->k).
        if self is RelationshipKind.EQUIVALENCE:
            return frozenset({(0, 1, 1), (1, 0, 1), (1, 1, 0)})
        return frozenset({(1, 1, 0)})

    @property
    def free_configurations(self) -> tuple[tuple[int, int, int], ...]:
        zeros = self.zero_configurations
        return tuple(cfg for cfg in CONFIGURATIONS if cfg not in zeros)

    @property
    def num_weights(self) -> int:
        return len(self.free_configurations)


def canonical_pair(left: int, right: int, kind: RelationshipKind) -> tuple[int, int]:
    """Return the identity of the relationship variable for (left, right)."""
    if left == right:
        raise ValueError(f"self-pair ({left}, {right}) has no relationship variable")
    if kind.symmetric and left > right:
        return (right, left)
    return (left, right)


def num_variables(n: int, kind: RelationshipKind) -> int:
    if n < 2:
        raise ValueError(f"need at least 2 concepts, got {n}")
    if kind.symmetric:
        return n * (n - 1) // 2
    return n * (n - 1)


def variable_index(left: int, right: int, n: int, kind: RelationshipKind) -> int:
    """Dense index of the pair variable, bijective onto [0, num_variables(n, kind)).

    Equivalence pairs are canonicalized first, so (i, j) and (j, i) share an
    index.  Parent-child pairs keep their orientation.
    """
    if not (0 <= left < n and 0 <= right < n):
        raise ValueError(f"pair ({left}, {right}) out of range for {n} concepts")
    left, right = canonical_pair(left, right, kind)
    if kind.symmetric:
        # Row-major upper triangle: row i contributes n - 1 - i entries.
        return left * (2 * n - left - 1) // 2 + (right - left - 1)
    return left * (n - 1) + (right if right < left else right - 1)


def pair_from_index(index: int, n: int, kind: RelationshipKind) -> tuple[int, int]:
    """Inverse of variable_index."""
    total = num_variables(n, kind)
    if not 0 <= index < total:
        raise ValueError(f"variable index {index} out of range [0, {total})")
    if kind.symmetric:
        i = 0
        while index >= n - 1 - i:
            index -= n - 1 - i
            i += 1
        return (i, i + 1 + index)
    left, offset = divmod(index, n - 1)
    right = offset if offset < left else offset + 1
    return (left, right)


@dataclass(frozen=True)
class Concept:
    """A vocabulary entry: integer id, display name, optional sample values."""

    id: int
    name: str
    values: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"concept id must be non-negative, got {self.id}")
        if not self.name.strip():
            raise ValueError(f"concept {self.id} has an empty name")
        object.__setattr__(self, "values", tuple(self.values))


def validate_vocabulary(concepts: Sequence[Concept]) -> int:
    """Check ids form exactly 0..n-1 and return n."""
    n = len(concepts)
    seen = {c.id for c in concepts}
    if len(seen) != n or seen != set(range(n)):
        raise ValueError("concept ids must be unique and densely cover 0..n-1")
    return n


@dataclass(frozen=True)
class PriorBelief:
    """Clamped probability that a pair's relationship label is 1."""

    p_one: float

    def __post_init__(self) -> None:
        p = float(self.p_one)
        if not (0.0 <= p <= 1.0) or math.isnan(p):
            raise ValueError(f"prior probability must lie in [0, 1], got {p}")
        p = min(max(p, PRIOR_EPSILON), 1.0 - PRIOR_EPSILON)
        object.__setattr__(self, "p_one", p)

    @property
    def p_zero(self) -> float:
        return 1.0 - self.p_one

    @property
    def argmax(self) -> int:
        # Ties break toward 0.
        return 1 if self.p_one > 0.5 else 0

    def log_potentials(self) -> tuple[float, float]:
        return (math.log(self.p_zero), math.log(self.p_one))


@dataclass(frozen=True)
class RelationshipVariable:
    """Binary variable for one (possibly ordered) concept pair."""

    left: int
    right: int
    prior: PriorBelief

    def __post_init__(self) -> None:
        if self.left == self.right:
            raise ValueError(f"self-pair ({self.left}, {self.right}) is not allowed")
        if self.left < 0 or self.right < 0:
            raise ValueError("concept ids must be non-negative")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.left, self.right)


# Default shared table weights, one value per free configuration in table
# order.  The all-zero configuration carries weight 1 and acts as the scale
# anchor; the fully positive chain gets the strongest non-trivial weight.
DEFAULT_WEIGHTS: dict[RelationshipKind, tuple[float, ...]] = {
    RelationshipKind.EQUIVALENCE: (1.0, 0.25, 0.25, 0.25, 0.75),
    RelationshipKind.PARENT_CHILD: (1.0, 0.25, 0.25, 0.25, 0.25, 0.25, 0.75),
}


@dataclass(frozen=True)
class TernaryPotential:
    """Shared potential over a clique's (x_ij, x_jk, x_ik) configuration.

    ``table`` holds the eight configuration values in index order
    4*x_ij + 2*x_jk + x_ik.  Forbidden configurations are exactly 0; free
    configurations must be strictly positive.
    """

    kind: RelationshipKind
    table: tuple[float, ...]

    def __post_init__(self) -> None:
        table = tuple(float(v) for v in self.table)
        if len(table) != 8:
            raise ValueError(f"potential table must have 8 entries, got {len(table)}")
        zeros = self.kind.zero_configurations
        for cfg, value in zip(CONFIGURATIONS, table):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"potential entry for {cfg} must be finite and >= 0")
            if cfg in zeros:
                if value != 0.0:
                    raise ValueError(f"configuration {cfg} must have zero potential")
            elif value == 0.0:
                raise ValueError(f"configuration {cfg} must have positive potential")
        object.__setattr__(self, "table", table)

    @classmethod
    def from_weights(
        cls, kind: RelationshipKind, weights: Sequence[float]
    ) -> "TernaryPotential":
        """Build a table from the free-configuration weights in table order."""
        free = kind.free_configurations
        if len(weights) != len(free):
            raise ValueError(
                f"{kind.value} expects {len(free)} weights, got {len(weights)}"
            )
        table = [0.0] * 8
        for cfg, w in zip(free, weights):
            table[configuration_index(*cfg)] = float(w)
        return cls(kind, tuple(table))

    @classmethod
    def default(cls, kind: RelationshipKind) -> "TernaryPotential":
        return cls.from_weights(kind, DEFAULT_WEIGHTS[kind])

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(
            self.table[configuration_index(*cfg)] for cfg in self.kind.free_configurations
        )

    def scaled(self, factor: float) -> "TernaryPotential":
        if factor <= 0:
            raise ValueError(f"scale factor must be positive, got {factor}")
        return TernaryPotential(self.kind, tuple(v * factor for v in self.table))

    def normalized(self) -> "TernaryPotential":
        peak = max(self.table)
        return TernaryPotential(self.kind, tuple(v / peak for v in self.table))

    def log_table(self) -> np.ndarray:
        out = np.full(8, LOG_ZERO, dtype=np.float64)
        for idx, value in enumerate(self.table):
            if value > 0.0:
                out[idx] = math.log(value)
        return out


@dataclass
class AssignmentGraph:
    """Decoded labels for a graph plus score and audit metadata.

    ``pairs[i]`` is the concept pair of variable i and ``labels[i]`` its
    decoded state.  ``violations`` lists offending ternary cliques: plain
    clique indices for a single graph, (anchor, local index) tuples for a
    merged partitioned run.
    """

    kind: RelationshipKind
    pairs: tuple[tuple[int, int], ...]
    labels: np.ndarray
    log_score: float
    violations: list
    iterations: int | None = None
    converged: bool | None = None
    margins: np.ndarray | None = None
    repaired: bool = False
    pre_repair: dict | None = None
    partition_summaries: list | None = None

    def label_map(self) -> dict[tuple[int, int], int]:
        return {pair: int(lbl) for pair, lbl in zip(self.pairs, self.labels)}
