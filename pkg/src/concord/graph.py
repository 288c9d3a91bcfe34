"""Factor graph assembly: variables, unary priors, shared ternary cliques.

Factor ids are laid out unary-first: factor i < m is the unary factor of
variable i, factor m + f is ternary clique f.  A ternary clique over
concepts (i, j, k) stores its variables in slot order (x_ij, x_jk, x_ik),
matching the potential table's configuration index 4*x_ij + 2*x_jk + x_ik.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError
from .model import (
    Concept,
    PriorBelief,
    RelationshipKind,
    RelationshipVariable,
    TernaryPotential,
    canonical_pair,
    num_variables,
    validate_vocabulary,
)

DEFAULT_PRIOR_P_ONE = 0.01


@dataclass(frozen=True, eq=False)
class FactorGraph:
    kind: RelationshipKind
    n_concepts: int
    variables: tuple[RelationshipVariable, ...]
    unary_log: np.ndarray        # (m, 2) raw log prior potentials
    triples: np.ndarray          # (t, 3) variable ids in slot order (ij, jk, ik)
    triple_concepts: np.ndarray  # (t, 3) concept ids (i, j, k)
    potential: TernaryPotential
    log_table: np.ndarray        # (8,)
    adj_offsets: np.ndarray      # (m + 1,) CSR offsets into adj_factors
    adj_factors: np.ndarray      # (m + 3t,) incident factor ids per variable
    pair_index: dict[tuple[int, int], int] = field(repr=False)

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_ternary_factors(self) -> int:
        return int(self.triples.shape[0])

    @property
    def num_factors(self) -> int:
        return self.num_variables + self.num_ternary_factors

    @property
    def num_edges(self) -> int:
        # One unary edge per variable plus three edges per ternary clique.
        return self.num_variables + 3 * self.num_ternary_factors

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(v.pair for v in self.variables)

    def degrees(self) -> np.ndarray:
        return np.diff(self.adj_offsets)

    def incident_factors(self, variable: int) -> np.ndarray:
        return self.adj_factors[self.adj_offsets[variable] : self.adj_offsets[variable + 1]]


def enumerate_ternary_cliques(
    pair_index: Mapping[tuple[int, int], int], n: int, kind: RelationshipKind
) -> tuple[np.ndarray, np.ndarray]:
    """List cliques whose three pair variables all exist.

    Returns (variable id triples, concept id triples), ordered
    lexicographically by concept triple (i, j, k).  For equivalence the
    triples run over i < j < k; for parent-child over ordered triples of
    distinct concepts following the chain pattern i->j, j->k, i->k.
    """
    var_triples: list[tuple[int, int, int]] = []
    concept_triples: list[tuple[int, int, int]] = []
    if kind.symmetric:
        # partners[j] lists k > j with variable (j, k) present.
        partners: dict[int, list[int]] = {}
        for i, j in sorted(pair_index):
            partners.setdefault(i, []).append(j)
        for i, j in sorted(pair_index):
            v_ij = pair_index[(i, j)]
            for k in partners.get(j, ()):  # k > j by construction
                v_ik = pair_index.get((i, k))
                if v_ik is None:
                    continue
                var_triples.append((v_ij, pair_index[(j, k)], v_ik))
                concept_triples.append((i, j, k))
    else:
        out: dict[int, list[int]] = {}
        for i, j in sorted(pair_index):
            out.setdefault(i, []).append(j)
        for i, j in sorted(pair_index):
            v_ij = pair_index[(i, j)]
            for k in out.get(j, ()):
                if k == i:
                    continue
                v_ik = pair_index.get((i, k))
                if v_ik is None:
                    continue
                var_triples.append((v_ij, pair_index[(j, k)], v_ik))
                concept_triples.append((i, j, k))
    if not var_triples:
        return (
            np.empty((0, 3), dtype=np.int64),
            np.empty((0, 3), dtype=np.int64),
        )
    return (
        np.array(var_triples, dtype=np.int64),
        np.array(concept_triples, dtype=np.int64),
    )


def _all_pairs(n: int, kind: RelationshipKind) -> list[tuple[int, int]]:
    if kind.symmetric:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def build_factor_graph(
    concepts: Sequence[Concept],
    priors: Mapping[tuple[int, int], PriorBelief | float],
    potential: TernaryPotential,
    mode: str = "dense",
    default_prior: float = DEFAULT_PRIOR_P_ONE,
    strict: bool = False,
) -> FactorGraph:
    """Assemble a factor graph over the vocabulary.

    dense mode creates a variable for every concept pair, falling back to
    ``default_prior`` for pairs missing from ``priors`` (an error under
    ``strict``).  sparse mode creates variables only for the listed pairs.
    """
    n = validate_vocabulary(concepts)
    kind = potential.kind
    if n < 2:
        raise ConfigurationError("need at least 2 concepts to build a graph")

    canon: dict[tuple[int, int], PriorBelief] = {}
    for (left, right), value in priors.items():
        pair = canonical_pair(int(left), int(right), kind)
        if not (0 <= pair[0] < n and 0 <= pair[1] < n):
            raise ConfigurationError(f"prior pair {pair} references unknown concept ids")
        if pair in canon:
            raise ConfigurationError(f"duplicate prior for pair {pair}")
        canon[pair] = value if isinstance(value, PriorBelief) else PriorBelief(float(value))

    if mode == "dense":
        pairs = _all_pairs(n, kind)
        if strict:
            missing = [p for p in pairs if p not in canon]
            if missing:
                raise ConfigurationError(
                    f"{len(missing)} pairs lack priors in strict dense mode, first: {missing[0]}"
                )
    elif mode == "sparse":
        if not canon:
            raise ConfigurationError("sparse mode needs a non-empty prior map")
        pairs = sorted(canon)
    else:
        raise ConfigurationError(f"unknown graph mode {mode!r}")

    default = PriorBelief(default_prior)
    variables = tuple(
        RelationshipVariable(left, right, canon.get((left, right), default))
        for left, right in pairs
    )
    pair_index = {v.pair: i for i, v in enumerate(variables)}
    unary_log = np.array([v.prior.log_potentials() for v in variables], dtype=np.float64)

    triples, triple_concepts = enumerate_ternary_cliques(pair_index, n, kind)

    m = len(variables)
    t = triples.shape[0]
    counts = np.ones(m, dtype=np.int64)  # every variable has its unary factor
    if t:
        counts += np.bincount(triples.ravel(), minlength=m)
    adj_offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=adj_offsets[1:])
    adj_factors = np.empty(adj_offsets[-1], dtype=np.int64)
    cursor = adj_offsets[:-1].copy()
    adj_factors[cursor] = np.arange(m)  # unary factor id equals variable id
    cursor += 1
    for f in range(t):
        for v in triples[f]:
            adj_factors[cursor[v]] = m + f
            cursor[v] += 1

    return FactorGraph(
        kind=kind,
        n_concepts=n,
        variables=variables,
        unary_log=unary_log,
        triples=triples,
        triple_concepts=triple_concepts,
        potential=potential,
        log_table=potential.log_table(),
        adj_offsets=adj_offsets,
        adj_factors=adj_factors,
        pair_index=pair_index,
    )


def count_graph_stats(n: int, kind: RelationshipKind = RelationshipKind.EQUIVALENCE) -> tuple[int, int, int]:
    """Closed-form (variables, ternary factors, edges) of the dense graph."""
    m = num_variables(n, kind)  # raises for n < 2
    if kind.symmetric:
        t = n * (n - 1) * (n - 2) // 6
    else:
        t = n * (n - 1) * (n - 2)
    return m, t, m + 3 * t
