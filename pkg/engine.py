"""
Round-by-round execution of quantized distributed online Frank-Wolfe with gradient
tracking over a time-varying network.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from network import GraphSequence, check_double_stochastic, check_joint_connectivity
from problem import ConstraintSet, OnlineProblem, ProblemConstants, estimate_constants
from quantizer import FLOAT_BITS, QuantizerSpec, quantize, resolution

logger = logging.getLogger(__name__)

PURPOSE_STATE = 0
PURPOSE_GRAD = 1

ALPHA_RULE = "parameter 0 < α ≤ 1"


class ConfigurationError(ValueError):
    """The run configuration is invalid."""


class AssumptionViolationError(ConfigurationError):
    """A network, set or loss assumption check failed before round 1."""

    def __init__(self, findings: List["AssumptionFinding"]):
        self.findings = findings
        failed = "; ".join(f"{f.name}: {f.message}" for f in findings if not f.ok)
        super().__init__(f"Assumption check failed: {failed}")


class RunAbortedError(RuntimeError):
    """The run hit a nonfinite value and cannot continue."""


@dataclass
class AssumptionFinding:
    name: str
    ok: bool
    message: str = ""


@dataclass
class AgentState:
    """One agent's view of the run state."""
    x: np.ndarray
    x_hat: np.ndarray
    s_hat: np.ndarray
    grad_bar: np.ndarray
    last_qgrad: np.ndarray


@dataclass
class RunState:
    """
    Agent-stacked state entering round t; row i of every array belongs to agent i.
    """
    t: int
    x: np.ndarray
    x_hat: np.ndarray
    s_hat: np.ndarray
    grad_bar: np.ndarray
    last_qgrad: np.ndarray

    @classmethod
    def initial(cls, decisions: np.ndarray) -> "RunState":
        zeros = np.zeros_like(decisions)
        return cls(t=1, x=decisions.copy(), x_hat=zeros.copy(), s_hat=zeros.copy(),
                   grad_bar=zeros.copy(), last_qgrad=zeros.copy())

    def agent(self, i: int) -> AgentState:
        return AgentState(x=self.x[i], x_hat=self.x_hat[i], s_hat=self.s_hat[i],
                          grad_bar=self.grad_bar[i], last_qgrad=self.last_qgrad[i])


@dataclass
class RunConfig:
    """
    Everything one run needs. Give either a fixed `alpha` or the schedule
    alpha = kappa2 / T^gamma.
    """
    problem: OnlineProblem
    graphs: GraphSequence
    constraint_set: ConstraintSet
    state_quantizer: QuantizerSpec = field(default_factory=lambda: QuantizerSpec(kind="identity"))
    grad_quantizer: QuantizerSpec = field(default_factory=lambda: QuantizerSpec(kind="identity"))
    alpha: Optional[float] = None
    kappa2: Optional[float] = None
    gamma: Optional[float] = None
    initial_decisions: Optional[np.ndarray] = None
    seed: int = 0

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        if self.kappa2 is None or self.gamma is None:
            raise ConfigurationError("step size needs alpha or both kappa2 and gamma")
        return float(self.kappa2) / self.problem.T ** float(self.gamma)

    def validate(self):
        """Raise ConfigurationError on an invalid configuration."""
        alpha = self.step_size
        if not 0 < alpha <= 1:
            raise ConfigurationError(f"step size {alpha!r} violates {ALPHA_RULE}")
        if self.alpha is None and self.kappa2 > self.problem.T ** self.gamma:
            raise ConfigurationError(f"kappa2 must not exceed T^gamma ({self.problem.T ** self.gamma:g})")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {self.seed}")
        if self.initial_decisions is not None:
            decisions = np.asarray(self.initial_decisions, dtype=float)
            expected = (self.problem.n, self.problem.d)
            if decisions.shape != expected:
                raise ConfigurationError(f"initial decisions must have shape {expected}, got {decisions.shape}")
            for i, x in enumerate(decisions):
                if not self.constraint_set.contains(x):
                    raise ConfigurationError(f"initial decision of agent {i} is outside the constraint set")

    def decisions_at_start(self) -> np.ndarray:
        if self.initial_decisions is None:
            return np.zeros((self.problem.n, self.problem.d))
        return np.array(self.initial_decisions, dtype=float)


@dataclass
class RoundRecord:
    """What round t produced, before the next round starts."""
    x_hat: np.ndarray
    v: np.ndarray
    grads: np.ndarray
    qgrads: np.ndarray
    state_bits: np.ndarray
    grad_bits: np.ndarray
    fallback: np.ndarray
    state_error: np.ndarray


@dataclass
class Trace:
    """
    Recorded history of a run. Per-(t, i) arrays are indexed [t - 1, i].
    """
    decisions: np.ndarray
    consensus_states: np.ndarray
    lmo_points: np.ndarray
    losses: np.ndarray
    state_bits: np.ndarray
    grad_bits: np.ndarray
    fallback: np.ndarray
    state_error_sq: np.ndarray
    mean_state_error: np.ndarray
    grad_bar_sum: np.ndarray
    qgrad_sum: np.ndarray
    x_avg: np.ndarray
    v_avg: np.ndarray
    consensus_error: np.ndarray
    tracking_error: np.ndarray
    resolutions: np.ndarray
    initial_grads: np.ndarray
    final_decisions: np.ndarray
    alpha: float
    seed: int

    @property
    def T(self) -> int:
        return self.decisions.shape[0]

    @property
    def n(self) -> int:
        return self.decisions.shape[1]

    @property
    def bits(self) -> np.ndarray:
        return self.state_bits + self.grad_bits

    @property
    def total_bits(self) -> int:
        return int(self.bits.sum())

    @property
    def fallback_count(self) -> int:
        return int(self.fallback.sum())


def agent_rng(seed: int, t: int, i: int, purpose: int) -> np.random.Generator:
    """Independent stream for one (agent, round, purpose), split from the run seed."""
    return np.random.default_rng([seed, t, i, purpose])


def quantize_state(spec: QuantizerSpec, constraint_set: ConstraintSet, x: np.ndarray, t: int,
                   rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, int, bool]:
    """
    Quantize a decision; if the quantized value leaves X, send x exactly instead.

    Returns:
        (payload, bits, fallback)
    """
    message = quantize(spec, x, t, rng)
    if message.exact or constraint_set.contains(message.payload):
        return message.payload, message.bits, False
    return x.copy(), x.shape[0] * FLOAT_BITS, True


def step(state: RunState, t: int, config: RunConfig) -> Tuple[RunState, RoundRecord]:
    """
    Execute round t for all agents with synchronous semantics: every agent quantizes
    before any mixing happens.
    """
    problem = config.problem
    constraint_set = config.constraint_set
    n, d = state.x.shape
    W = config.graphs.weights(t)
    alpha = config.step_size
    state_random = not config.state_quantizer.is_identity
    grad_random = not config.grad_quantizer.is_identity

    # quantize states, falling back to the exact state when the message leaves X
    messages = np.empty((n, d))
    state_bits = np.empty(n, dtype=np.int64)
    fallback = np.zeros(n, dtype=bool)
    for i in range(n):
        rng = agent_rng(config.seed, t, i, PURPOSE_STATE) if state_random else None
        messages[i], state_bits[i], fallback[i] = quantize_state(
            config.state_quantizer, constraint_set, state.x[i], t, rng)

    x_hat = W @ messages

    grads = problem.local_grads(t, x_hat)
    bad = ~np.all(np.isfinite(grads), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise RunAbortedError(f"nonfinite gradient for agent {i} at round {t}")

    qgrads = np.empty((n, d))
    grad_bits = np.empty(n, dtype=np.int64)
    for i in range(n):
        rng = agent_rng(config.seed, t, i, PURPOSE_GRAD) if grad_random else None
        message = quantize(config.grad_quantizer, grads[i], t, rng)
        qgrads[i] = message.payload
        grad_bits[i] = message.bits

    if t == 1:
        grad_bar = qgrads.copy()
    else:
        grad_bar = state.s_hat + qgrads - state.last_qgrad
    s_hat = W @ grad_bar

    v = np.empty((n, d))
    for i in range(n):
        v[i] = constraint_set.lmo(s_hat[i])
    x_next = x_hat + alpha * (v - x_hat)

    new_state = RunState(t=t + 1, x=x_next, x_hat=x_hat, s_hat=s_hat, grad_bar=grad_bar, last_qgrad=qgrads)
    record = RoundRecord(x_hat=x_hat, v=v, grads=grads, qgrads=qgrads, state_bits=state_bits,
                         grad_bits=grad_bits, fallback=fallback, state_error=messages - state.x)
    return new_state, record


def validate_assumptions(problem: OnlineProblem, constraint_set: ConstraintSet, graphs: GraphSequence,
                         constants: Optional[ProblemConstants] = None) -> List[AssumptionFinding]:
    """
    Check the network, constraint set and loss assumptions; returns one finding each
    plus a dimension-compatibility finding.
    """
    findings = []

    problems = []
    if graphs.n != problem.n:
        problems.append(f"graph has {graphs.n} agents but the problem has {problem.n}")
    if graphs.T < problem.T:
        problems.append(f"graph horizon {graphs.T} is shorter than the problem horizon {problem.T}")
    if constraint_set.dimension != problem.d:
        problems.append(f"set dimension {constraint_set.dimension} differs from problem dimension {problem.d}")
    findings.append(AssumptionFinding("problem dimensions", not problems, "; ".join(problems)))
    if problems:
        return findings

    network_problems = []
    for t in range(1, problem.T + 1):
        W = graphs.weights(t)
        if not check_double_stochastic(W):
            network_problems.append(f"W_{t} is not doubly stochastic")
            break
        if np.any(np.diag(W) <= 0):
            network_problems.append(f"W_{t} has a nonpositive diagonal entry")
            break
    if not network_problems and not check_joint_connectivity(graphs, graphs.Q):
        network_problems.append(f"union graph over some window of length Q={graphs.Q} is not strongly connected")
    findings.append(AssumptionFinding("network connectivity", not network_problems, "; ".join(network_problems)))

    R = constraint_set.enclosing_radius
    set_ok = constraint_set.radius > 0 and np.isfinite(R)
    findings.append(AssumptionFinding("constraint set", bool(set_ok),
                                      "" if set_ok else "set must be a bounded ball with positive radius"))

    if constants is None:
        constants = estimate_constants(problem, constraint_set)
    lipschitz_ok = bool(np.isfinite(constants.lipschitz))
    smooth_ok = bool(np.isfinite(constants.smoothness))
    findings.append(AssumptionFinding("Lipschitz losses", lipschitz_ok,
                                      f"L_X={constants.lipschitz:.6g}"))
    findings.append(AssumptionFinding("Lipschitz gradients", smooth_ok,
                                      f"G_X={constants.smoothness:.6g}"))
    return findings


def _resolve_value_ranges(config: RunConfig, constants: ProblemConstants) -> Tuple[QuantizerSpec, QuantizerSpec]:
    state_spec = config.state_quantizer
    grad_spec = config.grad_quantizer
    if state_spec.value_range is None:
        state_spec = dataclasses.replace(state_spec, value_range=config.constraint_set.enclosing_radius)
    if grad_spec.value_range is None:
        grad_spec = dataclasses.replace(grad_spec, value_range=max(constants.lipschitz, 1e-12))
    return state_spec, grad_spec


def run(config: RunConfig, constants: Optional[ProblemConstants] = None) -> Trace:
    """
    Run rounds t = 1..T and record the trace.

    Raises:
        ConfigurationError: invalid step size, seed or initial decisions.
        AssumptionViolationError: an assumption check fails before round 1.
        RunAbortedError: a gradient became nonfinite.
    """
    config.validate()
    problem = config.problem
    if constants is None:
        constants = estimate_constants(problem, config.constraint_set)
    findings = validate_assumptions(problem, config.constraint_set, config.graphs, constants)
    if not all(f.ok for f in findings):
        raise AssumptionViolationError(findings)

    state_spec, grad_spec = _resolve_value_ranges(config, constants)
    config = dataclasses.replace(config, state_quantizer=state_spec, grad_quantizer=grad_spec)

    T, n, d = problem.T, problem.n, problem.d
    alpha = config.step_size
    logger.info(f"Starting run: n={n}, d={d}, T={T}, alpha={alpha:.4g}, "
                f"state quantizer={state_spec.describe()}, seed={config.seed}")

    decisions = np.empty((T, n, d))
    consensus_states = np.empty((T, n, d))
    lmo_points = np.empty((T, n, d))
    losses = np.empty((T, n))
    state_bits = np.empty((T, n), dtype=np.int64)
    grad_bits = np.empty((T, n), dtype=np.int64)
    fallback = np.zeros((T, n), dtype=bool)
    state_error_sq = np.empty((T, n))
    mean_state_error = np.empty((T, d))
    grad_bar_sum = np.empty((T, d))
    qgrad_sum = np.empty((T, d))
    x_avg = np.empty((T, d))
    v_avg = np.empty((T, d))
    consensus_error = np.empty(T)
    tracking_error = np.empty(T)
    resolutions = np.array([resolution(state_spec, d, t) for t in range(1, T + 1)])
    initial_grads = np.zeros((n, d))

    state = RunState.initial(config.decisions_at_start())
    progress_every = max(1, T // 10)
    for t in range(1, T + 1):
        x_t = state.x
        new_state, record = step(state, t, config)
        k = t - 1

        decisions[k] = x_t
        consensus_states[k] = record.x_hat
        lmo_points[k] = record.v
        losses[k] = problem.local_losses(t, x_t)
        state_bits[k] = record.state_bits
        grad_bits[k] = record.grad_bits
        fallback[k] = record.fallback
        state_error_sq[k] = np.sum(record.state_error ** 2, axis=1)
        mean_state_error[k] = record.state_error.mean(axis=0)
        grad_bar_sum[k] = new_state.grad_bar.sum(axis=0)
        qgrad_sum[k] = record.qgrads.sum(axis=0)
        x_avg[k] = x_t.mean(axis=0)
        v_avg[k] = record.v.mean(axis=0)
        consensus_error[k] = np.sum(np.linalg.norm(record.x_hat - x_avg[k], axis=1))
        target = problem.global_grad(t, x_avg[k]) / n
        tracking_error[k] = np.sum(np.linalg.norm(new_state.s_hat - target, axis=1))
        if t == 1:
            initial_grads = record.grads.copy()

        if t % progress_every == 0:
            logger.debug(f"Round {t}/{T}: consensus error {consensus_error[k]:.4g}, "
                         f"tracking error {tracking_error[k]:.4g}")
        state = new_state

    trace = Trace(decisions=decisions, consensus_states=consensus_states, lmo_points=lmo_points,
                  losses=losses, state_bits=state_bits, grad_bits=grad_bits, fallback=fallback,
                  state_error_sq=state_error_sq, mean_state_error=mean_state_error,
                  grad_bar_sum=grad_bar_sum, qgrad_sum=qgrad_sum, x_avg=x_avg, v_avg=v_avg,
                  consensus_error=consensus_error, tracking_error=tracking_error,
                  resolutions=resolutions, initial_grads=initial_grads,
                  final_decisions=state.x.copy(), alpha=alpha, seed=config.seed)

    share = trace.fallback_count / float(T * n)
    if share > 0.1:
        logger.warning(f"Feasibility fallback used for {share:.1%} of state messages")
    logger.info(f"Run finished: {trace.total_bits} bits sent, {trace.fallback_count} fallbacks")
    return trace
