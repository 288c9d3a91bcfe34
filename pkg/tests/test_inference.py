"""Max-product message passing, decoding, scoring, repair, exact oracle."""

import itertools
import math

import numpy as np
import pytest

from concord.errors import ConfigurationError
from concord.graph import build_factor_graph
from concord.inference import (
    MESSAGE_SPREAD_CAP,
    LbpConfig,
    MessageStore,
    _normalize_rows,
    configuration_codes,
    exact_map_oracle,
    factor_to_variable_message,
    greedy_repair,
    jacobi_round,
    joint_log_score,
    lbp_map,
    prior_flips,
    variable_to_factor_message,
    violated_cliques,
)
from concord.model import (
    LOG_ZERO,
    LOG_ZERO_BOUND,
    Concept,
    RelationshipKind,
    TernaryPotential,
)

EQ = RelationshipKind.EQUIVALENCE
PC = RelationshipKind.PARENT_CHILD


def _concepts(n):
    return [Concept(i, f"concept {i}") for i in range(n)]


def _graph(priors, n=None, kind=EQ, weights=None, mode="sparse"):
    n = n or max(max(p) for p in priors) + 1
    potential = (
        TernaryPotential.from_weights(kind, weights)
        if weights
        else TernaryPotential.default(kind)
    )
    return build_factor_graph(_concepts(n), priors, potential, mode=mode)


# The three-pair conflict instance: two confident positives and one
# confident negative cannot all hold, so the best valid labeling drops
# both positives rather than pay for the rejected closure.
CONFLICT_PRIORS = {(0, 1): 0.6, (0, 2): 0.6, (1, 2): 0.1}
CONFLICT_WEIGHTS = (1.0, 0.3, 0.3, 0.3, 0.9)
CONFLICT_SCORE = math.log(0.144)  # ln(0.4 * 0.4 * 0.9)


class TestNormalization:
    def test_peak_moves_to_zero(self):
        out = _normalize_rows(np.array([[1.0, 3.0], [-2.0, -5.0]]))
        assert out[0].tolist() == [-2.0, 0.0]
        assert out[1].tolist() == [0.0, -3.0]

    def test_sentinels_stay_sentinels(self):
        out = _normalize_rows(np.array([[LOG_ZERO, 7.0]]))
        assert out[0, 0] == LOG_ZERO
        assert out[0, 1] == 0.0

    def test_dead_row_degenerates_to_uniform(self):
        out = _normalize_rows(np.array([[LOG_ZERO, LOG_ZERO]]))
        assert out[0].tolist() == [0.0, 0.0]

    def test_spread_is_capped(self):
        out = _normalize_rows(np.array([[-200.0, 0.0]]))
        assert out[0, 0] == -MESSAGE_SPREAD_CAP


class TestMessagePrimitives:
    def test_unary_message_is_normalized_prior(self):
        graph = _graph({(0, 1): 0.9})
        store = MessageStore.initial(graph)
        row = store.unary_message[0]
        assert row[1] == 0.0
        assert row[0] == pytest.approx(math.log(0.1) - math.log(0.9))

    def test_variable_to_factor_sums_other_incoming(self):
        graph = _graph({}, n=4, mode="dense")
        store = MessageStore.initial(graph)
        m = graph.num_variables
        # Variable 0 is pair (0, 1); it sits in cliques (0,1,2) and (0,1,3).
        assert set(graph.incident_factors(0).tolist()) == {0, m + 0, m + 1}
        store.factor_to_var[store.edge_id(0, 0)] = [0.0, -2.0]
        store.factor_to_var[store.edge_id(0, m + 0)] = [-1.0, 0.0]
        out = variable_to_factor_message(store, 0, m + 1)
        assert out.tolist() == [0.0, -1.0]

    def test_factor_message_inherits_hard_zeros(self):
        graph = _graph({}, n=3, mode="dense")
        store = MessageStore.initial(graph)
        m = graph.num_variables
        pinned = np.array([LOG_ZERO, 0.0])
        # Pin the first two slots of the only clique to state 1; the closing
        # pair then cannot take state 0 without hitting a zero configuration.
        store.var_to_factor[m + 0] = pinned
        store.var_to_factor[m + 1] = pinned
        target = int(graph.triples[0][2])
        out = factor_to_variable_message(store, m, target)
        assert out[0] <= LOG_ZERO_BOUND
        assert out[1] == 0.0

    def test_edge_id_rejects_non_incident(self):
        graph = _graph({}, n=3, mode="dense")
        store = MessageStore.initial(graph)
        with pytest.raises(ValueError):
            store.edge_id(0, 1)  # unary factor 1 belongs to variable 1

    def test_round_batch_matches_reference_messages(self):
        rng = np.random.default_rng(7)
        priors = {(i, j): float(rng.uniform(0.05, 0.95)) for i, j in itertools.combinations(range(4), 2)}
        graph = _graph(priors, n=4, mode="dense")
        store = MessageStore.initial(graph)
        for _ in range(3):
            jacobi_round(store, damping=0.0)
        m = graph.num_variables
        expected = np.stack([
            variable_to_factor_message(store, var, factor)
            for var in range(m)
            for factor in [var]
        ])
        # After a round, stored v2f for the unary edge must equal the
        # reference recomputation from the stored f2v messages.
        fresh = np.stack([
            variable_to_factor_message(store, v, v) for v in range(m)
        ])
        np.testing.assert_allclose(fresh, expected)
        for f in range(graph.num_ternary_factors):
            for slot in range(3):
                var = int(graph.triples[f][slot])
                ref = factor_to_variable_message(store, m + f, var)
                assert np.isfinite(ref[ref > LOG_ZERO_BOUND]).all()

    def test_message_storage_covers_every_edge(self):
        graph = _graph({}, n=5, mode="dense")
        store = MessageStore.initial(graph)
        edges = graph.num_variables + 3 * graph.num_ternary_factors
        assert store.var_to_factor.shape == (edges, 2)
        assert store.factor_to_var.shape == (edges, 2)
        assert graph.num_edges == edges


class TestDecoding:
    def test_unary_only_converges_in_two_rounds(self):
        priors = {(0, 1): 0.9, (2, 3): 0.2, (4, 5): 0.7}
        graph = _graph(priors)
        result = lbp_map(graph, LbpConfig())
        assert result.converged
        assert result.iterations <= 2
        assert result.labels.tolist() == [1, 0, 1]
        assert result.log_score == pytest.approx(math.log(0.9 * 0.8 * 0.7))

    def test_tie_decodes_to_zero(self):
        graph = _graph({(0, 1): 0.5, (1, 2): 0.5})
        result = lbp_map(graph, LbpConfig())
        assert result.labels.tolist() == [0, 0]

    def test_conflict_instance_matches_oracle(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        oracle = exact_map_oracle(graph)
        decoded = lbp_map(graph, LbpConfig(), check_messages=True)
        assert oracle.labels.tolist() == [0, 0, 0]
        assert decoded.labels.tolist() == [0, 0, 0]
        assert decoded.converged
        assert decoded.log_score == pytest.approx(CONFLICT_SCORE, rel=1e-12)
        assert decoded.violations == []
        assert prior_flips(graph, decoded.labels) == [0, 1]

    def test_single_clique_graphs_are_exact(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            priors = {
                (0, 1): float(rng.uniform(0.02, 0.98)),
                (0, 2): float(rng.uniform(0.02, 0.98)),
                (1, 2): float(rng.uniform(0.02, 0.98)),
            }
            weights = (1.0, *(float(rng.uniform(0.05, 1.0)) for _ in range(4)))
            graph = _graph(priors, weights=weights)
            decoded = lbp_map(graph, LbpConfig(damping=0.0))
            oracle = exact_map_oracle(graph)
            assert decoded.log_score == pytest.approx(oracle.log_score, rel=1e-9)

    def test_scale_invariant_decoding(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        base = lbp_map(graph, LbpConfig())
        t = graph.num_ternary_factors
        for factor in (0.1, 10.0):
            scaled = build_factor_graph(
                _concepts(3), CONFLICT_PRIORS, graph.potential.scaled(factor),
                mode="sparse",
            )
            result = lbp_map(scaled, LbpConfig())
            assert result.labels.tolist() == base.labels.tolist()
            assert result.log_score == pytest.approx(
                base.log_score + t * math.log(factor)
            )

    def test_deterministic(self):
        rng = np.random.default_rng(13)
        priors = {
            (i, j): float(rng.uniform(0.1, 0.9))
            for i, j in itertools.combinations(range(6), 2)
        }
        graph = _graph(priors, n=6, mode="dense")
        a = lbp_map(graph, LbpConfig())
        b = lbp_map(graph, LbpConfig())
        assert a.labels.tolist() == b.labels.tolist()
        assert a.log_score == b.log_score
        assert a.iterations == b.iterations

    def test_tolerance_zero_runs_full_budget(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        result = lbp_map(graph, LbpConfig(max_iterations=37, tolerance=0.0))
        assert result.iterations == 37
        assert not result.converged

    def test_live_components_respect_spread_cap(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        store = MessageStore.initial(graph)
        for _ in range(80):
            jacobi_round(store, damping=0.5)
        for block in (store.var_to_factor, store.factor_to_var):
            live = block[block > LOG_ZERO_BOUND]
            assert live.min() >= -MESSAGE_SPREAD_CAP - 1e-12

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            LbpConfig(max_iterations=0)
        with pytest.raises(ConfigurationError):
            LbpConfig(damping=1.0)
        with pytest.raises(ConfigurationError):
            LbpConfig(tolerance=-0.1)


class TestScoring:
    def test_single_pair(self):
        graph = _graph({(0, 1): 0.7})
        assert joint_log_score(graph, [1]) == pytest.approx(math.log(0.7))
        assert joint_log_score(graph, [0]) == pytest.approx(math.log(0.3))

    def test_forbidden_configuration_scores_log_zero(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        # (x_01, x_02, x_12) = (1, 1, 0) closes the clique as (1, 0, 1).
        assert joint_log_score(graph, [1, 1, 0]) == LOG_ZERO

    def test_orders_assignments_correctly(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        assert joint_log_score(graph, [0, 0, 0]) > joint_log_score(graph, [1, 1, 1])

    def test_rejects_bad_labels(self):
        graph = _graph({(0, 1): 0.7})
        with pytest.raises(ValueError):
            joint_log_score(graph, [1, 0])
        with pytest.raises(ValueError):
            joint_log_score(graph, [2])

    def test_configuration_codes(self):
        triples = np.array([[0, 1, 2]])
        labels = np.array([1, 0, 1])
        assert configuration_codes(labels, triples).tolist() == [5]

    def test_violated_cliques(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        assert violated_cliques(graph, np.array([0, 0, 0])) == []
        assert violated_cliques(graph, np.array([1, 1, 0])) == [0]

    def test_prior_flips(self):
        graph = _graph({(0, 1): 0.9, (1, 2): 0.2})
        assert prior_flips(graph, np.array([1, 0])) == []
        assert prior_flips(graph, np.array([0, 1])) == [0, 1]


class TestRepair:
    def test_repairs_single_violation(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        labels, flips = greedy_repair(graph, np.array([1, 1, 0]))
        assert violated_cliques(graph, labels) == []
        assert len(flips) >= 1
        assert joint_log_score(graph, labels) > LOG_ZERO_BOUND

    def test_valid_input_is_untouched(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        labels, flips = greedy_repair(graph, np.array([0, 0, 0]))
        assert labels.tolist() == [0, 0, 0]
        assert flips == []

    def test_zero_budget_falls_back_to_demotion(self):
        graph = _graph(CONFLICT_PRIORS, weights=CONFLICT_WEIGHTS)
        labels, flips = greedy_repair(graph, np.array([1, 1, 0]), budget=0)
        assert violated_cliques(graph, labels) == []
        # Demotion only ever turns positives off.
        assert (labels <= np.array([1, 1, 0])).all()
        assert flips

    def test_dense_random_repairs_terminate_valid(self):
        rng = np.random.default_rng(17)
        for n in (4, 5, 6):
            priors = {
                (i, j): float(rng.uniform(0.05, 0.95))
                for i, j in itertools.combinations(range(n), 2)
            }
            graph = _graph(priors, n=n, mode="dense")
            labels = rng.integers(0, 2, size=graph.num_variables)
            repaired, _ = greedy_repair(graph, labels)
            assert violated_cliques(graph, repaired) == []

    def test_lbp_map_repair_plumbing(self):
        # Force a violated decode by making LBP stop after one round.
        rng = np.random.default_rng(19)
        found = False
        for _ in range(50):
            priors = {
                (i, j): float(rng.uniform(0.05, 0.95))
                for i, j in itertools.combinations(range(5), 2)
            }
            graph = _graph(priors, n=5, mode="dense")
            raw = lbp_map(graph, LbpConfig(max_iterations=1, tolerance=0.0))
            if raw.violations:
                fixed = lbp_map(
                    graph, LbpConfig(max_iterations=1, tolerance=0.0), repair=True
                )
                assert fixed.repaired
                assert fixed.violations == []
                assert fixed.pre_repair["violations"] == len(raw.violations)
                assert fixed.log_score > raw.log_score  # invalid scored LOG_ZERO
                found = True
                break
        assert found, "no violated decode found to exercise repair"


class TestExactOracle:
    def test_matches_explicit_enumeration(self):
        rng = np.random.default_rng(23)
        priors = {
            (i, j): float(rng.uniform(0.05, 0.95))
            for i, j in itertools.combinations(range(4), 2)
        }
        graph = _graph(priors, n=4, mode="dense")
        best_score = -math.inf
        best = None
        for bits in itertools.product((0, 1), repeat=graph.num_variables):
            score = joint_log_score(graph, list(bits))
            if score > best_score:
                best_score, best = score, bits
        oracle = exact_map_oracle(graph)
        assert oracle.labels.tolist() == list(best)
        assert oracle.log_score == pytest.approx(best_score, rel=1e-12)
        assert oracle.violations == []

    def test_tie_picks_lexicographically_smallest(self):
        graph = _graph({(0, 1): 0.5, (2, 3): 0.5})
        oracle = exact_map_oracle(graph)
        assert oracle.labels.tolist() == [0, 0]

    def test_refuses_large_graphs(self):
        graph = _graph({}, n=8, mode="dense")  # 28 variables
        with pytest.raises(ConfigurationError):
            exact_map_oracle(graph)

    def test_parent_child_oracle_respects_chain_rule(self):
        priors = {(0, 1): 0.9, (1, 2): 0.9, (0, 2): 0.15}
        graph = _graph(priors, n=3, kind=PC)
        oracle = exact_map_oracle(graph)
        labels = oracle.label_map()
        # i->j and j->k force i->k at these confidence levels.
        assert labels[(0, 1)] == 1 and labels[(1, 2)] == 1
        assert labels[(0, 2)] == 1
        assert oracle.violations == []
