"""
Test suite for the Q-DOPFO experiment tool.
"""
import contextlib
import dataclasses
import io
import json
import math
import os
import shutil
import sys
import tempfile
import unittest
from fractions import Fraction
from unittest import mock

import numpy as np

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from batch_processor import EXIT_OK, engine_seed, run_experiment, validate
from config_manager import (ConfigError, ConfigManager, ExperimentConfig, apply_environment, check_config,
                            expand_variants, validate_config)
from engine import (AssumptionViolationError, ConfigurationError, RunAbortedError, RunConfig, RunState, Trace,
                    quantize_state, run, step, validate_assumptions)
from evaluation_utils import CAP_TOLERANCE, SUBLINEAR_RATIO, ExperimentEvaluator
from main import main as cli_main
from metrics import (bound_constants, bound_for_trace, build_report, comparator, comparator_sequence,
                     comparator_with_gap, step_resolution_regime, dynamic_regret, frank_wolfe_gap,
                     global_average_regret, optimal_gamma, seed_statistics, regret_bound, variations)
from network import (ExplicitGraphSequence, GraphConstructionError, check_double_stochastic,
                     check_joint_connectivity, export_edge_list, generate_graphs, mixing_constants,
                     transition_matrix)
from problem import (ExplicitStream, L1Ball, L2Ball, estimate_constants, generate_regression_stream, loss_eval,
                     loss_grad, make_constraint_set)
from quantizer import QuantizerSpec, level_at, message_bits, quantize, quantize_batch, resolution
from report_io import TRACE_COLUMNS, read_summary_json, read_trace_csv, write_summary_json

RUN_SLOW = os.getenv("QDOPFO_RUN_SLOW") == "1"

IDENTITY = QuantizerSpec(kind="identity")


def single_loss(features, label, rho=0.0):
    """One agent, one round, loss 1/2 (p^T x - q)^2 + rho ||x||^2."""
    return ExplicitStream(np.array([[features]], dtype=float), np.array([[label]], dtype=float), rho)


def vertex_stream(T, labels=(4.2, 4.4, 4.6, 4.8), d=3, rho=5e-6):
    """
    Time-invariant stream with every feature vector 2 e_1 and agent labels above 4, so
    the minimizer over the radius-2 L1 ball is the vertex 2 e_1 and every tracked
    gradient points at it.
    """
    n = len(labels)
    features = np.zeros((T, n, d))
    features[:, :, 0] = 2.0
    return ExplicitStream(features, np.tile(np.asarray(labels, dtype=float), (T, 1)), rho)


def make_trace(decisions, alpha=0.5):
    decisions = np.asarray(decisions, dtype=float)
    T, n, d = decisions.shape
    return Trace(decisions=decisions, consensus_states=decisions, lmo_points=decisions,
                 losses=np.zeros((T, n)), state_bits=np.zeros((T, n), dtype=np.int64),
                 grad_bits=np.zeros((T, n), dtype=np.int64), fallback=np.zeros((T, n), dtype=bool),
                 state_error_sq=np.zeros((T, n)), mean_state_error=np.zeros((T, d)),
                 grad_bar_sum=np.zeros((T, d)), qgrad_sum=np.zeros((T, d)), x_avg=decisions.mean(axis=1),
                 v_avg=decisions.mean(axis=1), consensus_error=np.zeros(T), tracking_error=np.zeros(T),
                 resolutions=np.zeros(T), initial_grads=np.zeros((n, d)), final_decisions=decisions[-1],
                 alpha=alpha, seed=0)


def small_run_config(seed=0, n=4, d=6, T=60, Q=3, spec=None, alpha=None, rho=0.01, graph="random_window"):
    constraint_set = L1Ball(2.0, d)
    problem = generate_regression_stream(seed, n, d, T, rho, constraint_set=constraint_set)
    graphs = generate_graphs(graph, n, T, Q, seed)
    spec = spec if spec is not None else QuantizerSpec(kind="probabilistic", exponent=1.5)
    return RunConfig(problem=problem, graphs=graphs, constraint_set=constraint_set, state_quantizer=spec,
                     grad_quantizer=spec, alpha=alpha, kappa2=0.5, gamma=0.3, seed=seed)


class TestConstraintSets(unittest.TestCase):
    """Test cases for constraint sets and their linear minimization oracles."""

    def test_lmo_examples(self):
        ball = L1Ball(2.0, 3)
        np.testing.assert_array_equal(ball.lmo([3.0, -1.0, 2.0]), [-2.0, 0.0, 0.0])
        np.testing.assert_array_equal(L1Ball(2.0, 2).lmo([0.0, -5.0]), [0.0, 2.0])
        np.testing.assert_array_equal(ball.lmo([0.0, 0.0, 0.0]), [-2.0, 0.0, 0.0])

    def test_lmo_tie_breaks_to_lowest_index(self):
        np.testing.assert_array_equal(L1Ball(1.0, 3).lmo([1.0, -1.0, 1.0]), [-1.0, 0.0, 0.0])

    def test_lmo_matches_vertex_brute_force(self):
        rng = np.random.default_rng(11)
        for d in range(1, 7):
            ball = L1Ball(2.0, d)
            vertices = ball.extreme_points()
            for direction in rng.standard_normal((1700, d)):
                expected = vertices[int(np.argmin(vertices @ direction))]
                np.testing.assert_array_equal(ball.lmo(direction), expected)

    def test_lmo_is_optimal_against_members(self):
        rng = np.random.default_rng(5)
        for ball in (L1Ball(2.0, 5), L2Ball(1.5, 5)):
            points = ball.sample(rng, 1000)
            for direction in rng.standard_normal((1000, 5)):
                v = ball.lmo(direction)
                self.assertLessEqual(v @ direction, np.min(points @ direction) + 1e-12)

    def test_l2_lmo(self):
        np.testing.assert_allclose(L2Ball(2.0, 2).lmo([3.0, 4.0]), [-1.2, -1.6])
        np.testing.assert_array_equal(L2Ball(2.0, 2).lmo([0.0, 0.0]), [-2.0, 0.0])

    def test_contains(self):
        ball = L1Ball(2.0, 2)
        self.assertTrue(ball.contains([1.0, 0.5]))
        self.assertFalse(ball.contains([2.1, 0.0]))
        self.assertTrue(ball.contains([2.0, 0.0]))
        with self.assertRaises(ValueError):
            ball.contains([1.0, 0.0, 0.0])

    def test_members_and_midpoints(self):
        rng = np.random.default_rng(3)
        for kind in ("l1_ball", "l2_ball"):
            ball = make_constraint_set(kind, 2.0, 4)
            points = ball.sample(rng, 200)
            self.assertTrue(np.all(np.linalg.norm(points, axis=1) <= ball.enclosing_radius + 1e-12))
            for a, b in zip(points[:-1], points[1:]):
                self.assertTrue(ball.contains(0.5 * (a + b)))

    def test_low_discrepancy_points(self):
        ball = L1Ball(2.0, 3)
        points = ball.low_discrepancy_points(64)
        self.assertEqual(points.shape, (6 + 128, 3))
        self.assertTrue(all(ball.contains(x) for x in points))
        np.testing.assert_array_equal(points, ball.low_discrepancy_points(64))

    def test_invalid_sets(self):
        with self.assertRaises(ValueError):
            L1Ball(0.0, 2)
        with self.assertRaises(ValueError):
            make_constraint_set("simplex", 1.0, 2)


class TestProblem(unittest.TestCase):
    """Test cases for loss streams and problem constants."""

    def test_loss_examples(self):
        self.assertEqual(loss_eval(single_loss([1.0, 0.0], 1.0), 0, 1, [2.0, 0.0]), 0.5)
        self.assertEqual(loss_eval(single_loss([1.0, 0.0], 1.0), 0, 1, [1.0, 0.0]), 0.0)
        self.assertEqual(loss_eval(single_loss([1.0, 1.0], 0.0, rho=0.5), 0, 1, [1.0, -1.0]), 1.0)

    def test_gradient_examples(self):
        np.testing.assert_array_equal(loss_grad(single_loss([1.0, 0.0], 1.0), 0, 1, [2.0, 0.0]), [1.0, 0.0])
        np.testing.assert_array_equal(loss_grad(single_loss([1.0, 2.0], 3.0), 0, 1, [1.0, 1.0]), [0.0, 0.0])
        np.testing.assert_array_equal(loss_grad(single_loss([2.0, 0.0], 0.0, rho=0.5), 0, 1, [1.0, 1.0]),
                                      [5.0, 1.0])

    def test_out_of_range_indices(self):
        problem = single_loss([1.0, 0.0], 1.0)
        with self.assertRaises(ValueError):
            problem.loss(1, 1, [0.0, 0.0])
        with self.assertRaises(ValueError):
            problem.loss(0, 2, [0.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        problem = generate_regression_stream(3, n=3, d=4, T=5, rho=0.1)
        ball = L1Ball(2.0, 4)
        rng = np.random.default_rng(0)
        h = 1e-6
        for x in ball.sample(rng, 100):
            i, t = int(rng.integers(3)), int(rng.integers(1, 6))
            numeric = np.array([(problem.loss(i, t, x + h * e) - problem.loss(i, t, x - h * e)) / (2 * h)
                                for e in np.eye(4)])
            exact = problem.grad(i, t, x)
            self.assertLessEqual(np.linalg.norm(numeric - exact), 1e-5 * max(1.0, np.linalg.norm(exact)))

    def test_local_grads_match_per_agent_gradient(self):
        problem = generate_regression_stream(4, n=3, d=5, T=3, rho=0.2)
        X = L1Ball(2.0, 5).sample(np.random.default_rng(1), 3)
        grads = problem.local_grads(2, X)
        for i in range(3):
            np.testing.assert_allclose(grads[i], problem.grad(i, 2, X[i]), rtol=1e-12, atol=1e-12)

    def test_convexity(self):
        problem = generate_regression_stream(9, n=2, d=3, T=2, rho=0.05)
        rng = np.random.default_rng(2)
        ball = L1Ball(2.0, 3)
        for _ in range(200):
            x, y = ball.sample(rng, 2)
            lam = rng.random()
            lhs = problem.loss(1, 2, lam * x + (1 - lam) * y)
            rhs = lam * problem.loss(1, 2, x) + (1 - lam) * problem.loss(1, 2, y)
            self.assertLessEqual(lhs, rhs + 1e-12)

    def test_stream_is_deterministic(self):
        first = generate_regression_stream(7, n=1, d=2, T=1, rho=0.0)
        second = generate_regression_stream(7, n=1, d=2, T=1, rho=0.0)
        for a, b in zip(first.round_data(1), second.round_data(1)):
            np.testing.assert_array_equal(a, b)
        other = generate_regression_stream(8, n=1, d=2, T=1, rho=0.0)
        self.assertFalse(np.array_equal(first.round_data(1)[0], other.round_data(1)[0]))

    def test_stream_follows_label_model(self):
        problem = generate_regression_stream(1, n=4, d=6, T=20, rho=0.0)
        for t in range(1, 21):
            features, labels = problem.round_data(t)
            self.assertTrue(np.all(np.abs(features) <= 5.0))
            gap = labels - features @ problem.x0
            self.assertTrue(np.all(gap >= -1e-12))
            self.assertTrue(np.all(gap <= 1.0 / (4 * t) + 1e-12))

    def test_default_ground_truth(self):
        problem = generate_regression_stream(2, n=2, d=25, T=1, rho=0.0)
        self.assertAlmostEqual(np.sum(np.abs(problem.x0)), 1.0)
        self.assertEqual(np.count_nonzero(problem.x0), 3)

    def test_static_stream_repeats_round_one(self):
        problem = generate_regression_stream(2, n=2, d=3, T=5, rho=0.0, static=True)
        np.testing.assert_array_equal(problem.round_data(5)[0], problem.round_data(1)[0])

    def test_invalid_stream_arguments(self):
        with self.assertRaises(ValueError):
            generate_regression_stream(0, n=2, d=3, T=5, rho=-1.0)
        with self.assertRaises(ValueError):
            generate_regression_stream(0, n=2, d=2, T=5, rho=0.0, x0=np.array([3.0, 0.0]))

    def test_constants_examples(self):
        constants = estimate_constants(single_loss([1.0, 0.0], 0.0), L1Ball(2.0, 2))
        self.assertEqual(constants.smoothness, 1.0)
        zero = ExplicitStream(np.zeros((2, 3, 2)), np.zeros((2, 3)), 0.0)
        constants = estimate_constants(zero, L1Ball(2.0, 2))
        self.assertEqual((constants.lipschitz, constants.smoothness), (0.0, 0.0))

    def test_sampled_constants_never_exceed_closed_form(self):
        problem = generate_regression_stream(5, n=3, d=4, T=10, rho=0.1)
        ball = L1Ball(2.0, 4)
        closed = estimate_constants(problem, ball)
        sampled = estimate_constants(problem, ball, how="sampled", samples=128)
        self.assertLessEqual(sampled.lipschitz, closed.lipschitz + 1e-9)
        self.assertLessEqual(sampled.smoothness, closed.smoothness + 1e-12)
        self.assertGreater(sampled.lipschitz, 0.0)


class TestQuantizer(unittest.TestCase):
    """Test cases for random quantizers, level schedules and bit accounting."""

    def setUp(self):
        self.rng = np.random.default_rng(2024)
        self.spec = QuantizerSpec(kind="probabilistic", exponent=1.0)

    def _empirical(self, value, draws=100_000):
        samples = quantize_batch(self.spec, np.full((draws, 1), value), 2, self.rng)[:, 0]
        return samples

    def test_rounding_probabilities(self):
        samples = self._empirical(0.3)
        self.assertEqual(set(np.unique(samples)), {0.0, 0.5})
        self.assertAlmostEqual(np.mean(samples == 0.5), 0.6, delta=0.01)

        self.assertTrue(np.all(self._empirical(0.5) == 0.5))

        samples = self._empirical(-0.3)
        self.assertEqual(set(np.unique(samples)), {0.0, -0.5})
        self.assertAlmostEqual(np.mean(samples == 0.0), 0.4, delta=0.01)

    def test_resolution_examples(self):
        self.assertEqual(resolution(self.spec, 30, 2), 1.875)
        self.assertEqual(resolution(IDENTITY, 30, 17), 0.0)
        self.assertEqual(resolution(self.spec, 1, 1), 0.25)

    def test_resolution_schedule(self):
        spec = QuantizerSpec(kind="probabilistic", schedule="resolution", kappa1=1.0, xi=1.0)
        self.assertEqual(level_at(spec, 4, 30), 6)
        self.assertEqual(resolution(spec, 30, 4), 0.25)

    def test_level_examples(self):
        self.assertEqual(level_at(QuantizerSpec(exponent=1.5), 4), 8)
        self.assertEqual(level_at(QuantizerSpec(exponent=1.5, cap=5), 4), 5)
        self.assertEqual(level_at(QuantizerSpec(exponent=0.8), 1), 1)
        capped = QuantizerSpec(exponent=1.5, cap=50)
        self.assertTrue(all(level_at(capped, t) <= 50 for t in range(1, 500)))

    def test_bit_examples(self):
        spec = QuantizerSpec(kind="probabilistic", exponent=1.0, value_range=2.0)
        self.assertEqual(message_bits(spec, 30, 2), 120)
        self.assertEqual(message_bits(IDENTITY, 30, 5), 1920)
        self.assertEqual(message_bits(QuantizerSpec(exponent=1.0, value_range=1.0), 1, 1), 2)

    def test_bits_widen_for_out_of_range_values(self):
        spec = QuantizerSpec(kind="probabilistic", exponent=1.0, value_range=1.0)
        message = quantize(spec, np.array([3.2, 0.0]), 1, self.rng)
        self.assertEqual(message.bits, 8)

    def test_unbiased_with_bounded_variance(self):
        d, t, draws = 5, 3, 100_000
        k = level_at(self.spec, t)
        eps = resolution(self.spec, d, t)
        for _ in range(20):
            y = self.rng.uniform(-2.0, 2.0, size=d)
            if np.linalg.norm(y) < 1.0:
                y *= 1.5 / np.linalg.norm(y)
            samples = quantize_batch(self.spec, np.tile(y, (draws, 1)), t, self.rng)
            sq_norm = float(y @ y)
            self.assertLessEqual(np.linalg.norm(samples.mean(axis=0) - y), 4 * math.sqrt(eps * sq_norm / draws))
            self.assertLessEqual(np.mean(np.sum((samples - y) ** 2, axis=1)), 1.05 * eps * sq_norm)
            scaled = samples[:100] * k
            np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-9)

    def test_k_level_is_unbiased(self):
        spec = QuantizerSpec(kind="k_level", exponent=1.0)
        y = np.array([0.7, -1.2, 0.1])
        samples = quantize_batch(spec, np.tile(y, (100_000, 1)), 4, self.rng)
        np.testing.assert_allclose(samples.mean(axis=0), y, atol=0.02)
        self.assertEqual(resolution(spec, 3, 4), min(3 / 16, math.sqrt(3) / 4))

    def test_identity_is_exact(self):
        y = np.array([0.123456789, -3.0, 1e-300])
        message = quantize(IDENTITY, y, 9)
        np.testing.assert_array_equal(message.payload, y)
        self.assertEqual(message.bits, 3 * 64)
        self.assertTrue(message.exact)

    def test_resolution_is_nonincreasing(self):
        for exponent in (0.8, 1.0, 1.3, 1.5):
            spec = QuantizerSpec(exponent=exponent)
            values = [resolution(spec, 30, t) for t in range(1, 500)]
            self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))

    def test_rejects_nonfinite_input(self):
        with self.assertRaises(ValueError):
            quantize(self.spec, np.array([1.0, np.nan]), 1, self.rng)

    def test_rejects_invalid_spec(self):
        with self.assertRaises(ValueError):
            QuantizerSpec(kind="ternary")
        with self.assertRaises(ValueError):
            QuantizerSpec(cap=0)


class TestNetwork(unittest.TestCase):
    """Test cases for graph sequences, weights and mixing constants."""

    def test_generated_examples(self):
        complete = generate_graphs("complete", 3, 4, 1, seed=0)
        for W in complete.iter_weights():
            np.testing.assert_allclose(W, np.full((3, 3), 1 / 3))
        ring = generate_graphs("ring", 2, 3, 1, seed=0)
        for W in ring.iter_weights():
            np.testing.assert_array_equal(W, [[0.5, 0.5], [0.5, 0.5]])
        window = generate_graphs("random_window", 10, 50, 5, seed=4)
        self.assertTrue(check_joint_connectivity(window, 5))

    def test_generated_weights_are_symmetric_and_seeded(self):
        seq = generate_graphs("random_window", 6, 20, 3, seed=9)
        again = generate_graphs("random_window", 6, 20, 3, seed=9)
        for t in range(1, 21):
            W = seq.weights(t)
            np.testing.assert_array_equal(W, W.T)
            np.testing.assert_array_equal(W, again.weights(t))
            self.assertTrue(np.all(np.diag(W) > 0))
            self.assertTrue(check_double_stochastic(W))

    def test_zeta_is_minimum_positive_weight(self):
        seq = generate_graphs("gossip_pairs", 4, 12, 3, seed=2)
        expected = min(float(np.min(W[W > 0])) for W in seq.iter_weights())
        self.assertEqual(seq.zeta, expected)

    def test_double_stochastic_examples(self):
        self.assertTrue(check_double_stochastic([[0.5, 0.5], [0.5, 0.5]]))
        self.assertFalse(check_double_stochastic([[1.0, 0.0], [0.5, 0.5]]))
        self.assertTrue(check_double_stochastic(np.eye(4)))

    def test_joint_connectivity_examples(self):
        complete = generate_graphs("complete", 4, 6, 1, seed=0)
        self.assertTrue(check_joint_connectivity(complete, 2))
        empty = ExplicitGraphSequence([np.eye(2)] * 4)
        self.assertFalse(check_joint_connectivity(empty, 2))
        forward = [[1.0, 0.0], [0.5, 0.5]]
        backward = [[0.5, 0.5], [0.0, 1.0]]
        alternating = ExplicitGraphSequence([forward, backward, forward, backward])
        self.assertTrue(check_joint_connectivity(alternating, 2))
        self.assertFalse(check_joint_connectivity(alternating, 1))

    def test_transition_matrix(self):
        seq = generate_graphs("random_window", 5, 30, 3, seed=1)
        np.testing.assert_array_equal(transition_matrix(seq, 7, 7), seq.weights(7))
        identity = ExplicitGraphSequence([np.eye(3)] * 5)
        np.testing.assert_array_equal(transition_matrix(identity, 5, 1), np.eye(3))
        np.testing.assert_allclose(transition_matrix(seq, 30, 1) @ np.ones(5), np.ones(5), atol=1e-10)
        with self.assertRaises(ValueError):
            transition_matrix(seq, 2, 3)

    def test_mixing_constants_examples(self):
        mix = mixing_constants(2, 0.25, 1)
        self.assertEqual(mix.sigma, 0.984375)
        self.assertAlmostEqual(mix.gamma, 1.015873, places=6)
        mix = mixing_constants(1, 1.0, 1)
        self.assertEqual(mix.sigma, 0.75)
        self.assertAlmostEqual(mix.gamma, 4 / 3)
        sigmas = [mixing_constants(5, 0.2, Q).sigma for Q in range(1, 8)]
        self.assertTrue(all(b > a for a, b in zip(sigmas, sigmas[1:])))

    def test_mixing_decay(self):
        seq = generate_graphs("random_window", 10, 200, 5, seed=3)
        mix = mixing_constants(10, seq.zeta, 5)
        product = np.eye(10)
        for t in range(1, 201):
            product = seq.weights(t) @ product
            self.assertLessEqual(np.max(np.abs(product - 0.1)), mix.gamma * mix.sigma ** (t - 1))

    def test_gossip_pairs_requirements(self):
        with self.assertRaises(GraphConstructionError):
            generate_graphs("gossip_pairs", 1, 10, 1, seed=0)
        with self.assertRaises(GraphConstructionError):
            generate_graphs("gossip_pairs", 6, 10, 2, seed=0)
        seq = generate_graphs("gossip_pairs", 6, 10, 5, seed=0)
        self.assertTrue(all(len(seq.edges(t)) <= 1 for t in range(1, 11)))

    def test_export_edge_list(self):
        test_dir = tempfile.mkdtemp()
        try:
            seq = generate_graphs("ring", 4, 2, 1, seed=0)
            path = os.path.join(test_dir, "edges.txt")
            export_edge_list(seq, 1, path)
            with open(path, encoding='utf-8') as f:
                lines = f.read().splitlines()
            self.assertEqual(len(lines), len(seq.directed_edges(1)))
            u, v, weight = lines[0].split()
            self.assertEqual(float(weight), seq.weights(1)[int(v), int(u)])
        finally:
            shutil.rmtree(test_dir)

    def test_directed_edges_match_weight_support(self):
        seq = generate_graphs("random_window", 6, 8, 2, seed=3)
        for t in range(1, 9):
            W = seq.weights(t)
            received = {(int(j), int(i)) for i in range(6) for j in np.flatnonzero(W[i] > 0) if j != i}
            self.assertEqual(set(seq.directed_edges(t)), received)
        self.assertFalse(hasattr(seq, "in_neighbors"))


class TestEngine(unittest.TestCase):
    """Test cases for the quantized distributed Frank-Wolfe rounds."""

    def test_exact_averaging_round(self):
        problem = ExplicitStream(np.ones((1, 2, 2)), np.zeros((1, 2)), 0.0)
        graphs = ExplicitGraphSequence([[[0.5, 0.5], [0.5, 0.5]]])
        config = RunConfig(problem=problem, graphs=graphs, constraint_set=L1Ball(2.0, 2), alpha=0.5,
                           initial_decisions=np.array([[2.0, 0.0], [0.0, 2.0]]))
        trace = run(config)
        np.testing.assert_array_equal(trace.consensus_states[0], [[1.0, 1.0], [1.0, 1.0]])

    def test_frank_wolfe_update(self):
        problem = single_loss([1.0, 0.0], -1.0)
        config = RunConfig(problem=problem, graphs=ExplicitGraphSequence([np.eye(1)]),
                           constraint_set=L1Ball(2.0, 2), alpha=0.5)
        new_state, record = step(RunState.initial(np.zeros((1, 2))), 1, config)
        np.testing.assert_array_equal(record.v, [[-2.0, 0.0]])
        np.testing.assert_array_equal(new_state.x, [[-1.0, 0.0]])
        self.assertEqual(new_state.t, 2)
        np.testing.assert_array_equal(new_state.agent(0).x, [-1.0, 0.0])

    def test_feasibility_fallback(self):
        ball = L1Ball(2.0, 2)
        spec = QuantizerSpec(kind="probabilistic", exponent=1.0)
        x = np.array([1.5, 0.5])
        fallbacks = 0
        for seed in range(64):
            payload, bits, fallback = quantize_state(spec, ball, x, 1, np.random.default_rng(seed))
            if fallback:
                fallbacks += 1
                np.testing.assert_array_equal(payload, x)
                self.assertEqual(bits, 128)
            else:
                self.assertTrue(ball.contains(payload))
        self.assertGreater(fallbacks, 0)

    def test_alpha_zero_rejected(self):
        config = small_run_config(alpha=0.0)
        with self.assertRaises(ConfigurationError) as ctx:
            run(config)
        self.assertIn("0 < α ≤ 1", str(ctx.exception))

    def test_kappa2_above_t_gamma_rejected(self):
        config = dataclasses.replace(small_run_config(), kappa2=100.0)
        with self.assertRaises(ConfigurationError):
            config.validate()

    def test_infeasible_initial_decisions_rejected(self):
        config = dataclasses.replace(small_run_config(n=2, d=2), initial_decisions=np.array([[3.0, 0.0], [0.0, 0.0]]))
        with self.assertRaises(ConfigurationError):
            config.validate()

    def test_run_is_deterministic(self):
        first = run(small_run_config(seed=3))
        second = run(small_run_config(seed=3))
        for name in ("decisions", "consensus_states", "losses", "state_bits", "fallback", "tracking_error"):
            np.testing.assert_array_equal(getattr(first, name), getattr(second, name))

    def test_trace_is_feasible_and_consistent(self):
        trace = run(small_run_config(seed=1, T=80))
        ball = L1Ball(2.0, 6)
        self.assertEqual(trace.decisions.shape, (80, 4, 6))
        for states in (trace.decisions, trace.consensus_states):
            norms = np.sum(np.abs(states), axis=2)
            self.assertTrue(np.all(norms <= ball.radius + 1e-9))
        np.testing.assert_array_equal(trace.x_avg, trace.decisions.mean(axis=1))
        self.assertTrue(np.all(trace.bits > 0))

    def test_gradient_tracking_conservation(self):
        for spec in (IDENTITY, QuantizerSpec(kind="probabilistic", exponent=1.0)):
            trace = run(small_run_config(seed=2, T=200, spec=spec))
            scale = max(1.0, float(np.max(np.abs(trace.qgrad_sum))))
            self.assertLessEqual(np.max(np.abs(trace.grad_bar_sum - trace.qgrad_sum)), 1e-10 * scale)

    def test_average_state_recursion(self):
        trace = run(small_run_config(seed=4, T=100))
        alpha = trace.alpha
        for t in range(1, trace.T):
            expected = trace.x_avg[t - 1] + (1 - alpha) * trace.mean_state_error[t - 1] \
                + alpha * (trace.v_avg[t - 1] - trace.x_avg[t - 1])
            np.testing.assert_allclose(trace.x_avg[t], expected, rtol=0, atol=1e-10)

    def test_state_error_within_grid_resolution(self):
        spec = QuantizerSpec(kind="probabilistic", exponent=1.5)
        trace = run(small_run_config(seed=6, T=120, spec=spec))
        levels = np.array([level_at(spec, t) for t in range(1, 121)])
        bound = 6 / levels.astype(float) ** 2
        self.assertTrue(np.all(trace.state_error_sq <= bound[:, None] + 1e-12))
        self.assertLess(np.max(trace.state_error_sq[-20:]), 1e-4)

    def test_single_agent_matches_centralized_frank_wolfe(self):
        T, d, alpha = 150, 6, 0.2
        ball = L1Ball(2.0, d)
        problem = generate_regression_stream(5, 1, d, T, 0.01, constraint_set=ball)
        config = RunConfig(problem=problem, graphs=ExplicitGraphSequence([np.ones((1, 1))] * T),
                           constraint_set=ball, alpha=alpha)
        trace = run(config)

        x = np.zeros(d)
        expected = []
        for t in range(1, T + 1):
            expected.append(x)
            grad = problem.local_grads(t, x[None, :])[0]
            x = x + alpha * (ball.lmo(grad) - x)
        np.testing.assert_array_equal(trace.decisions[:, 0, :], np.array(expected))
        np.testing.assert_array_equal(trace.final_decisions[0], x)

    def test_identity_quantizers_match_unquantized_reference(self):
        n, d, T = 10, 30, 500
        config = small_run_config(seed=8, n=n, d=d, T=T, Q=5, spec=IDENTITY, rho=5e-6)
        trace = run(config)

        ball, problem, alpha = config.constraint_set, config.problem, config.step_size
        x = np.zeros((n, d))
        s_hat = last = None
        for t in range(1, T + 1):
            np.testing.assert_array_equal(trace.decisions[t - 1], x)
            W = config.graphs.weights(t)
            x_hat = W @ x.copy()
            grads = problem.local_grads(t, x_hat)
            grad_bar = grads.copy() if t == 1 else s_hat + grads - last
            s_hat = W @ grad_bar
            last = grads
            v = np.array([ball.lmo(row) for row in s_hat])
            x = x_hat + alpha * (v - x_hat)
        np.testing.assert_array_equal(trace.final_decisions, x)
        self.assertEqual(trace.fallback_count, 0)

    def test_fine_quantizers_converge_to_identity_trace(self):
        T = 600
        problem = vertex_stream(T)
        ball = L1Ball(2.0, problem.d)
        graphs = generate_graphs("random_window", problem.n, T, 3, seed=2)
        traces = {}
        for name, spec in (("identity", IDENTITY), ("power3", QuantizerSpec(kind="probabilistic", exponent=3.0))):
            config = RunConfig(problem=problem, graphs=graphs, constraint_set=ball, state_quantizer=spec,
                               grad_quantizer=spec, kappa2=0.5, gamma=0.3, seed=engine_seed(2, name))
            traces[name] = run(config)

        comparators, gaps = comparator_sequence(problem, ball)
        per_round = {name: np.diff(build_report(trace, problem, comparators, gaps, 0.0, 0.0).regret,
                                   axis=0, prepend=0.0)
                     for name, trace in traces.items()}
        late = slice(400, T)
        np.testing.assert_allclose(traces["power3"].decisions[late], traces["identity"].decisions[late],
                                   rtol=0, atol=1e-6)
        np.testing.assert_allclose(per_round["power3"][late], per_round["identity"][late], rtol=0, atol=1e-6)
        self.assertGreater(np.max(np.abs(traces["power3"].decisions[:5] - traces["identity"].decisions[:5])), 0)

    def test_nonfinite_gradient_aborts(self):
        features = np.array([[[np.inf, 1.0]], [[1.0, 1.0]]])
        problem = ExplicitStream(features, np.zeros((2, 1)), 0.0)
        config = RunConfig(problem=problem, graphs=ExplicitGraphSequence([np.eye(1)] * 2),
                           constraint_set=L1Ball(2.0, 2), alpha=0.5)
        with self.assertRaises(RunAbortedError) as ctx:
            step(RunState.initial(np.zeros((1, 2))), 1, config)
        self.assertIn("agent 0", str(ctx.exception))
        self.assertIn("round 1", str(ctx.exception))

    def test_isolated_agent_violates_network_assumption(self):
        W = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        problem = generate_regression_stream(0, 3, 2, 4, 0.0)
        graphs = ExplicitGraphSequence([W] * 4, Q=2)
        findings = validate_assumptions(problem, L1Ball(2.0, 2), graphs)
        network = [f for f in findings if f.name == "network connectivity"]
        self.assertEqual(len(network), 1)
        self.assertFalse(network[0].ok)
        config = RunConfig(problem=problem, graphs=graphs, constraint_set=L1Ball(2.0, 2), alpha=0.5)
        with self.assertRaises(AssumptionViolationError):
            run(config)

    def test_dimension_mismatch_is_reported(self):
        problem = generate_regression_stream(0, 3, 2, 4, 0.0)
        graphs = generate_graphs("complete", 2, 4, 1, seed=0)
        findings = validate_assumptions(problem, L1Ball(2.0, 2), graphs)
        self.assertFalse(findings[0].ok)


class TestMetrics(unittest.TestCase):
    """Test cases for comparators, regret, variations and the regret bound."""

    def test_comparator_interior_optimum(self):
        x = comparator(single_loss([1.0, 0.0], 1.0), L1Ball(2.0, 2), 1)
        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-9)

    def test_comparator_clipped_optimum(self):
        x = comparator(single_loss([1.0, 0.0], 10.0), L1Ball(2.0, 2), 1)
        np.testing.assert_allclose(x, [2.0, 0.0], atol=1e-9)
        x = comparator(single_loss([1.0, 0.0], 10.0), L2Ball(2.0, 2), 1)
        np.testing.assert_allclose(x, [2.0, 0.0], atol=1e-9)

    def test_comparator_beats_random_members(self):
        problem = generate_regression_stream(6, n=3, d=4, T=1, rho=0.0)
        ball = L1Ball(2.0, 4)
        x = comparator(problem, ball, 1)
        points = ball.sample(np.random.default_rng(0), 10_000)
        self.assertLessEqual(problem.global_loss(1, x), np.min(problem.global_losses(1, points)) + 1e-8)

    def test_comparator_gap_certificate(self):
        problem = generate_regression_stream(12, n=5, d=10, T=15, rho=5e-6)
        ball = L1Ball(2.0, 10)
        points, gaps = comparator_sequence(problem, ball)
        self.assertTrue(np.all(gaps <= 1e-8))
        for t in range(1, 16):
            x = points[t - 1]
            self.assertTrue(ball.contains(x))
            self.assertLessEqual(frank_wolfe_gap(ball, problem.global_grad(t, x), x), 1e-8)

    def test_comparator_square_ill_conditioned_design(self):
        # n = d = 30 leaves F_t nearly singular, the fig4_agents case with 30 agents
        ball = L1Ball(2.0, 30)
        problem = generate_regression_stream(0, n=30, d=30, T=5, rho=5e-6, constraint_set=ball)
        for t in range(1, 6):
            x, gap = comparator_with_gap(problem, ball, t)
            self.assertTrue(ball.contains(x))
            self.assertLessEqual(gap, 1e-8)
            self.assertLessEqual(frank_wolfe_gap(ball, problem.global_grad(t, x), x), 1e-8)

    def test_comparator_l1_boundary_face(self):
        # minimizer of (x1 + x2 - 10)^2 / 2 on the radius-2 ball lies on the face x1 + x2 = 2
        x, gap = comparator_with_gap(single_loss([1.0, 1.0], 10.0, rho=0.01), L1Ball(2.0, 2), 1)
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-9)
        self.assertLessEqual(gap, 1e-8)

    def test_comparator_rejects_bad_tolerance(self):
        with self.assertRaises(ValueError):
            comparator_with_gap(single_loss([1.0, 0.0], 1.0), L1Ball(2.0, 2), 1, tol=0.0)

    def test_dynamic_regret_examples(self):
        problem = generate_regression_stream(3, n=2, d=3, T=4, rho=0.1)
        ball = L1Ball(2.0, 3)
        comparators, _ = comparator_sequence(problem, ball)
        trace = make_trace(np.repeat(comparators[:, None, :], 2, axis=1))
        np.testing.assert_array_equal(dynamic_regret(trace, problem, 1, comparators), np.zeros(4))

        problem = single_loss([1.0], 0.0)
        trace = make_trace([[[math.sqrt(6.0)]]])
        series = dynamic_regret(trace, problem, 0, np.array([[math.sqrt(2.0)]]))
        self.assertEqual(len(series), 1)
        self.assertAlmostEqual(series[0], 2.0, places=12)

    def test_regret_is_nonnegative_up_to_solver_tolerance(self):
        config = small_run_config(seed=5, T=40)
        trace = run(config)
        comparators, gaps = comparator_sequence(config.problem, config.constraint_set)
        report = build_report(trace, config.problem, comparators, gaps, 0.0, 0.0)
        self.assertEqual(report.regret.shape, (40, 4))
        self.assertTrue(np.all(report.regret >= -1e-6 * 40))
        np.testing.assert_allclose(report.regret[:, 2], dynamic_regret(trace, config.problem, 2, comparators))
        np.testing.assert_allclose(report.global_average, global_average_regret(report.regret))

    def test_variations_static_and_shift(self):
        static = generate_regression_stream(1, n=2, d=3, T=6, rho=0.0, static=True)
        self.assertEqual(variations(static, L1Ball(2.0, 3), samples=64), (0.0, 0.0))
        shift = ExplicitStream(np.zeros((2, 1, 2)), np.array([[0.0], [2.0]]), rho=0.3)
        self.assertEqual(variations(shift, L1Ball(2.0, 2), samples=64), (2.0, 0.0))

    def test_sampled_variation_matches_dense_grid(self):
        problem = generate_regression_stream(21, n=2, d=2, T=2, rho=0.0)
        H_T, _ = variations(problem, L1Ball(2.0, 2))
        axis = np.linspace(-2.0, 2.0, 1001)
        grid = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
        grid = grid[np.sum(np.abs(grid), axis=1) <= 2.0]
        diff = np.zeros(len(grid))
        for i in range(2):
            p1, q1 = problem.agent_data(i, 1)
            p2, q2 = problem.agent_data(i, 2)
            change = 0.5 * ((grid @ p2 - q2) ** 2 - (grid @ p1 - q1) ** 2)
            diff = np.maximum(diff, np.abs(change))
        dense = float(np.max(diff))
        self.assertLessEqual(abs(H_T - dense) / dense, 0.05)

    def test_pinned_bound_value(self):
        bc = bound_constants(n=2, zeta=0.25, Q=1, R=2.0, lipschitz=1.0, smoothness=1.0,
                             initial_decisions=np.zeros((2, 2)), initial_grads=np.zeros((2, 2)),
                             initial_resolution=0.25)
        value = regret_bound(bc, 0.1, 10, [0.25] * 10, 0.0, 0.0)
        self.assertAlmostEqual(value / (Fraction(30205315736, 3969)), 1.0, places=10)

        # independent evaluation with exact arithmetic
        n, R, L, G = 2, Fraction(2), Fraction(1), Fraction(1)
        sigma, gamma = Fraction(63, 64), Fraction(64, 63)
        ratio = gamma / (1 - sigma)
        C2 = 2 * n * ratio + 1
        E0 = 4 * R * C2 * G + n * L
        D2 = 4 * n * R * (n * L + G * R) + 2 * n * n * R * ratio * E0 + Fraction(8 * n * n) * gamma * G * R * R / 2
        D3 = n * R * E0 * (1 + n * ratio * sigma) + n * n * L * R + 4 * n * R * L * C2 + 4 * n * n * ratio * G * R * R
        alpha = Fraction(1, 10)
        exact = D2 * alpha * 10 + D3 * 10 * Fraction(1, 2) + 2 * n * L * R / alpha + n * G * R * R / alpha * Fraction(10, 4)
        self.assertEqual(exact, Fraction(30205315736, 3969))
        self.assertAlmostEqual(bc.C2, float(C2))
        self.assertAlmostEqual(bc.E0 / float(E0), 1.0, places=12)

    def test_bound_surviving_terms_and_monotonicity(self):
        bc = bound_constants(n=3, zeta=0.3, Q=2, R=2.0, lipschitz=4.0, smoothness=2.0,
                             initial_decisions=np.array([[1.0, 0.0], [0.0, -1.0], [0.5, 0.5]]),
                             initial_grads=np.array([[1.0, 2.0], [0.0, 1.0], [3.0, 0.0]]),
                             initial_resolution=0.5)
        for value in (bc.D1, bc.D2, bc.D3, bc.D4, bc.D5, bc.D6, bc.C1, bc.C2, bc.E0):
            self.assertGreater(value, 0.0)
        alpha, T = 0.2, 50
        base = regret_bound(bc, alpha, T, np.zeros(T), 0.0, 0.0)
        self.assertAlmostEqual(base, bc.D1 + bc.D2 * alpha * T + bc.D4 / alpha)
        eps = np.full(T, 0.01)
        reference = regret_bound(bc, alpha, T, eps, 1.0, 1.0)
        self.assertGreater(regret_bound(bc, alpha, T, eps, 2.0, 1.0), reference)
        self.assertGreater(regret_bound(bc, alpha, T, eps, 1.0, 2.0), reference)
        bumped = eps.copy()
        bumped[7] = 0.02
        self.assertGreater(regret_bound(bc, alpha, T, bumped, 1.0, 1.0), reference)

    def test_bound_rejects_degenerate_mixing(self):
        bc = bound_constants(n=2, zeta=0.25, Q=1, R=2.0, lipschitz=1.0, smoothness=1.0,
                             initial_decisions=np.zeros((2, 2)), initial_grads=np.zeros((2, 2)),
                             initial_resolution=0.0)
        with self.assertRaises(ValueError):
            regret_bound(dataclasses.replace(bc, sigma=1.0), 0.1, 10, np.zeros(10), 0.0, 0.0)
        with self.assertRaises(ValueError):
            regret_bound(bc, 0.0, 10, np.zeros(10), 0.0, 0.0)

    def test_bound_for_trace(self):
        config = small_run_config(seed=7, T=30)
        trace = run(config)
        constants = estimate_constants(config.problem, config.constraint_set)
        bound, bc = bound_for_trace(trace, config.graphs.zeta, config.graphs.Q, config.constraint_set,
                                    constants, 1.0, 1.0)
        self.assertTrue(np.isfinite(bound))
        self.assertGreater(bound, 0.0)
        self.assertEqual(bc.n, 4)

    def test_regime_examples(self):
        regime = step_resolution_regime(0.5, 0.75)
        self.assertEqual(regime.case, 1)
        self.assertEqual(regime.b, 0.25)
        self.assertEqual(regime.exponent, 0.75)
        regime = step_resolution_regime(0.5, 1.0)
        self.assertEqual((regime.case, regime.exponent, regime.log_factor), (2, 0.5, True))
        regime = step_resolution_regime(0.5, 2.0)
        self.assertEqual((regime.case, regime.exponent), (3, 0.5))
        with self.assertRaises(ValueError):
            step_resolution_regime(0.5, 0.5)

    def test_optimal_gamma(self):
        self.assertAlmostEqual(optimal_gamma(0.5, 10_000).gamma, 0.2497, delta=1e-3)
        self.assertGreater(optimal_gamma(1e-6, 10 ** 12).gamma, 0.48)
        for theta in (0.1, 0.3, 0.6):
            for T in (100, 10_000, 10 ** 6):
                self.assertTrue(0 < optimal_gamma(theta, T).gamma < 0.5)
        with self.assertRaises(ValueError):
            optimal_gamma(0.99, 2)

    def test_seed_statistics(self):
        mean, se = seed_statistics([1.0, 2.0, 3.0])
        self.assertEqual(mean, 2.0)
        self.assertAlmostEqual(se, 1 / math.sqrt(3))
        self.assertEqual(seed_statistics([4.0]), (4.0, 0.0))


class TestReportIO(unittest.TestCase):
    """Test cases for trace and summary files."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_missing_trace_file(self):
        df = read_trace_csv(os.path.join(self.test_dir, "nonexistent.csv"))
        self.assertTrue(df.empty)
        self.assertEqual(list(df.columns), TRACE_COLUMNS)

    def test_trace_with_missing_columns(self):
        path = os.path.join(self.test_dir, "partial.csv")
        with open(path, 'w', encoding='utf-8') as f:
            f.write("t,agent,loss\n1,0,0.5\n")
        df = read_trace_csv(path)
        self.assertTrue(df.empty)
        self.assertEqual(list(df.columns), TRACE_COLUMNS)

    def test_summary_json_handles_numpy_values(self):
        path = os.path.join(self.test_dir, "summary.json")
        write_summary_json({'bits': np.int64(7), 'regret': np.array([1.5, 2.0]), 'ok': np.bool_(True)}, path)
        self.assertEqual(read_summary_json(path), {'bits': 7, 'regret': [1.5, 2.0], 'ok': True})


class TestConfigManager(unittest.TestCase):
    """Test cases for configuration management."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.test_dir, "test_config.json")

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_create_default_config(self):
        config = ConfigManager(self.config_file).get_config()
        self.assertIsInstance(config, ExperimentConfig)
        self.assertEqual((config.problem.n, config.problem.d, config.problem.rho), (10, 30, 5e-6))
        self.assertEqual((config.step.kappa2, config.step.gamma), (0.5, 0.3))
        self.assertEqual(config.runner.seeds, [0, 1, 2, 3, 4])
        self.assertEqual(validate_config(config), [])

    def test_save_and_load_config(self):
        manager = ConfigManager(self.config_file)
        manager.update_config(problem={'T': 500, 'n': 5}, preset="fig2_cap")
        manager.save_config()
        config = ConfigManager(self.config_file).get_config()
        self.assertEqual((config.problem.T, config.problem.n, config.preset), (500, 5, "fig2_cap"))

    def test_update_unknown_key(self):
        manager = ConfigManager(self.config_file)
        with self.assertRaises(ConfigError):
            manager.update_config(problem={'horizon': 5})

    def test_validate_config(self):
        manager = ConfigManager(self.config_file)
        manager.update_config(step={'alpha': 0.0})
        issues = manager.validate_config()
        self.assertTrue(any('step.alpha' in issue and "0 < α ≤ 1" in issue for issue in issues))
        manager.reset_to_defaults()
        manager.update_config(problem={'rho': -1.0})
        with self.assertRaises(ConfigError) as ctx:
            check_config(manager.get_config())
        self.assertEqual(ctx.exception.key, "problem.rho")

    def test_preset_variants(self):
        counts = {"custom": 1, "fig1_levels": 5, "fig2_cap": 4, "fig3_stepsizes": 5, "fig4_agents": 3}
        for preset, count in counts.items():
            variants = expand_variants(ExperimentConfig(preset=preset))
            self.assertEqual(len(variants), count)
            self.assertEqual(len({v.name for v in variants}), count)
        fig1 = expand_variants(ExperimentConfig(preset="fig1_levels"))
        self.assertEqual(fig1[0].config.quantizer.kind, "identity")
        self.assertEqual([v.config.quantizer.level_exp for v in fig1[1:]], [0.8, 1.0, 1.3, 1.5])
        fig2 = expand_variants(ExperimentConfig(preset="fig2_cap"))
        self.assertEqual([v.config.quantizer.level_cap for v in fig2], [50, 80, 100, None])
        fig4 = expand_variants(ExperimentConfig(preset="fig4_agents"))
        self.assertEqual([v.config.problem.n for v in fig4], [10, 30, 50])

    def test_config_dict_round_trip(self):
        config = ExperimentConfig(preset="fig3_stepsizes")
        config.step.alpha = 0.05
        config.runner.seeds = [3, 9]
        restored = ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict())))
        self.assertEqual(restored, config)

    def test_environment_overrides(self):
        with mock.patch.dict(os.environ, {"QDOPFO_WORKERS": "3", "QDOPFO_OUTPUT_DIR": self.test_dir}):
            config = apply_environment(ExperimentConfig(), os.path.join(self.test_dir, "missing.env"))
        self.assertEqual(config.runner.workers, 3)
        self.assertEqual(config.runner.output_dir, self.test_dir)

    def test_variant_streams_differ(self):
        names = [v.name for v in expand_variants(ExperimentConfig(preset="fig1_levels"))]
        seeds = {engine_seed(0, name) for name in names}
        self.assertEqual(len(seeds), len(names))


class TestIntegration(unittest.TestCase):
    """Integration tests for sweeps, outputs and the command line."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _config(self, preset="custom", T=25, seeds=(0, 1)):
        config = ExperimentConfig(preset=preset)
        config.problem.n, config.problem.d, config.problem.T = 3, 4, T
        config.network.window_Q = 2
        config.runner.seeds = list(seeds)
        config.runner.variation_samples = 128
        config.runner.output_dir = os.path.join(self.test_dir, preset)
        return config

    def _run(self, config):
        with contextlib.redirect_stdout(io.StringIO()):
            return run_experiment(config)

    def _snapshot(self, directory):
        snapshot = {}
        for name in sorted(os.listdir(directory)):
            with open(os.path.join(directory, name), 'rb') as f:
                snapshot[name] = f.read()
        return snapshot

    def test_custom_run_outputs(self):
        config = self._config()
        result = self._run(config)
        self.assertEqual(result.exit_code, EXIT_OK)
        files = set(os.listdir(config.runner.output_dir))
        self.assertEqual(files, {"custom_seed0.csv", "custom_seed1.csv", "custom_summary.json", "manifest.json"})

        df = read_trace_csv(os.path.join(config.runner.output_dir, "custom_seed0.csv"))
        self.assertEqual(list(df.columns), TRACE_COLUMNS)
        self.assertEqual(len(df), 25 * 3)
        self.assertTrue((df.groupby('agent')['bits_cumulative'].diff().dropna() > 0).all())

        summary = result.summaries["custom"]
        self.assertEqual(summary['seeds_completed'], 2)
        self.assertLessEqual(summary['runs'][0]['max_comparator_gap'], 1e-8)

    def test_summary_records_bound_constants_and_notes(self):
        config = self._config()
        self._run(config)
        summary = read_summary_json(os.path.join(config.runner.output_dir, "custom_summary.json"))
        for run_record in summary['runs']:
            constants = run_record['constants']
            for key in ("sigma", "gamma", "D1", "D2", "D3", "D4", "D5", "D6", "C1", "C2", "E0"):
                self.assertIn(key, constants)
                self.assertTrue(math.isfinite(constants[key]))
            self.assertTrue(0 < constants['sigma'] < 1)
            self.assertEqual(constants['n'], 3)
            self.assertEqual(constants['lipschitz'], run_record['lipschitz'])
            self.assertIn("lower estimate", run_record['notes']['variations'])

    def test_manifest_round_trip(self):
        config = self._config()
        self._run(config)
        with open(os.path.join(config.runner.output_dir, "manifest.json"), encoding='utf-8') as f:
            manifest = json.load(f)
        self.assertEqual(ExperimentConfig.from_dict(manifest['config']), config)

    def test_preset_file_counts(self):
        config = self._config(preset="fig1_levels", T=20)
        result = self._run(config)
        self.assertEqual(result.exit_code, EXIT_OK)
        files = os.listdir(config.runner.output_dir)
        self.assertEqual(len([f for f in files if f.endswith('.csv')]), 10)
        self.assertEqual(len([f for f in files if f.endswith('_summary.json')]), 5)

        report = ExperimentEvaluator(config.runner.output_dir).generate_report()
        self.assertEqual(len(report['ordering']), 4)
        self.assertEqual(set(report['sublinearity']), {v.name for v in expand_variants(config)})

    def test_rerun_is_byte_identical(self):
        config = self._config(T=20)
        self._run(config)
        first = self._snapshot(config.runner.output_dir)
        self._run(config)
        self.assertEqual(self._snapshot(config.runner.output_dir), first)

    def test_validate_findings(self):
        findings = validate(self._config())
        self.assertTrue(all(f.ok for f in findings))
        self.assertTrue(any(f.name == "network connectivity" for f in findings))
        config = self._config()
        config.problem.rho = -1.0
        findings = validate(config)
        self.assertTrue(any(f.name == "problem validity" and not f.ok for f in findings))

    def test_cli_rejects_zero_alpha(self):
        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr), contextlib.redirect_stdout(io.StringIO()):
            status = cli_main(["--preset", "custom", "--alpha", "0", "--out", self.test_dir])
        self.assertEqual(status, 2)
        self.assertIn("parameter 0 < α ≤ 1", stderr.getvalue())

    def test_cli_small_run(self):
        out = os.path.join(self.test_dir, "cli")
        with contextlib.redirect_stdout(io.StringIO()):
            status = cli_main(["--n", "3", "--d", "4", "--T", "20", "--window-Q", "2", "--seeds", "1",
                               "--level-cap", "none", "--out", out])
        self.assertEqual(status, 0)
        self.assertTrue(os.path.exists(os.path.join(out, "custom_seed0.csv")))


@unittest.skipUnless(RUN_SLOW, "set QDOPFO_RUN_SLOW=1 to run the desk-scale reproductions")
class TestAcceptance(unittest.TestCase):
    """
    Desk-scale reproductions. Orderings across variants and the bound are checked on the
    presets; within-run convergence properties are checked on vertex streams, where the
    constant step size leaves no stationary regret floor.
    """

    @classmethod
    def setUpClass(cls):
        cls.test_dir = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.test_dir)

    def _evaluate(self, preset, **problem):
        config = ExperimentConfig(preset=preset)
        for key, value in problem.items():
            setattr(config.problem, key, value)
        config.runner.output_dir = os.path.join(self.test_dir, preset)
        with contextlib.redirect_stdout(io.StringIO()):
            result = run_experiment(config)
        self.assertEqual(result.exit_code, EXIT_OK, result.failures)
        return ExperimentEvaluator(config.runner.output_dir)

    def _vertex_reports(self, spec, name, radius=2.0, T=2000, seeds=range(5), initial=None):
        problem = vertex_stream(T)
        ball = L1Ball(radius, problem.d)
        comparators, gaps = comparator_sequence(problem, ball)
        reports = []
        for seed in seeds:
            graphs = generate_graphs("random_window", problem.n, T, 3, seed)
            config = RunConfig(problem=problem, graphs=graphs, constraint_set=ball, state_quantizer=spec,
                               grad_quantizer=spec, kappa2=0.5, gamma=0.3, initial_decisions=initial,
                               seed=engine_seed(seed, name))
            reports.append(build_report(run(config), problem, comparators, gaps, 0.0, 0.0))
        return reports

    def test_level_ordering(self):
        report = self._evaluate("fig1_levels").generate_report()
        self.assertTrue(all(check['ok'] for check in report['ordering']), report['ordering'])

    def test_agent_ordering(self):
        evaluator = self._evaluate("fig4_agents")
        report = evaluator.generate_report()
        self.assertTrue(all(check['ok'] for check in report['ordering']), report['ordering'])
        for summary in evaluator.summaries.values():
            self.assertTrue(all(run_record['max_comparator_gap'] <= 1e-8 for run_record in summary['runs']))

    def test_bound_sanity(self):
        evaluator = self._evaluate("custom")
        self.assertTrue(evaluator.bound_sanity("custom")['ok'])
        self.assertIn('ratio', evaluator.sublinearity("custom"))

    def test_cap_effect(self):
        # 1.95 e_1 is a k = 100 grid point and the midpoint of two k = 50 grid points
        stats = {}
        for cap in (50, 100, None):
            spec = QuantizerSpec(kind="probabilistic", exponent=1.5, cap=cap)
            name = f"cap_{cap or 'none'}"
            reports = self._vertex_reports(spec, name, radius=1.95)
            stats[name] = seed_statistics([report.final_average for report in reports])
        (mean_50, se_50), (mean_100, se_100), (mean_none, _) = stats['cap_50'], stats['cap_100'], stats['cap_none']
        self.assertLessEqual(abs(mean_100 - mean_none), CAP_TOLERANCE * mean_none, stats)
        self.assertGreater(mean_50, mean_100 + math.hypot(se_50, se_100), stats)

    def test_sublinearity(self):
        T = 2000
        spec = QuantizerSpec(kind="probabilistic", exponent=1.5)
        for report in self._vertex_reports(spec, "level_exp_1.5", T=T):
            ratio = report.global_average[-1] / report.global_average[T // 4 - 1]
            self.assertLess(ratio, SUBLINEAR_RATIO)

    def test_consensus_error_decays_with_identity_quantizers(self):
        initial = np.array([[0.0, 2.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 2.0], [0.0, 0.0, -2.0]])
        report, = self._vertex_reports(IDENTITY, "identity", seeds=(0,), initial=initial)
        self.assertGreater(report.consensus_error[1], 0.0)
        self.assertLess(report.consensus_error[-1], 1e-6 * report.consensus_error[1])

    def test_static_problem_degeneracy(self):
        preset_stream = generate_regression_stream(0, n=10, d=30, T=2000, rho=5e-6, static=True)
        self.assertEqual(variations(preset_stream, L1Ball(2.0, 30)), (0.0, 0.0))
        problem = vertex_stream(2000)
        self.assertEqual(variations(problem, L1Ball(2.0, problem.d), samples=256), (0.0, 0.0))

        spec = QuantizerSpec(kind="probabilistic", exponent=1.5)
        for report in self._vertex_reports(spec, "custom", seeds=(0, 1)):
            self.assertLess(report.global_average[-1], 0.1 * report.global_average[9])


def run_tests():
    """Run all tests."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    test_classes = [
        TestConstraintSets,
        TestProblem,
        TestQuantizer,
        TestNetwork,
        TestEngine,
        TestMetrics,
        TestReportIO,
        TestConfigManager,
        TestIntegration,
        TestAcceptance,
    ]

    for test_class in test_classes:
        tests = loader.loadTestsFromTestCase(test_class)
        suite.addTests(tests)

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    return result.wasSuccessful()


if __name__ == "__main__":
    success = run_tests()
    exit(0 if success else 1)
