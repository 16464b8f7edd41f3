"""
Regret metrics: comparator sequence, dynamic regret, function and gradient variations,
the regret bound and its step-size regimes.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from engine import Trace
from network import mixing_constants
from problem import ConstraintSet, L1Ball, L2Ball, OnlineProblem, ProblemConstants

logger = logging.getLogger(__name__)

COMPARATOR_TOL = 1e-8
COMPARATOR_MAX_ITER = 100_000
VARIATION_SAMPLES = 4096
PATH_STEPS_PER_DIM = 20


class ComparatorError(RuntimeError):
    """The comparator solver hit its iteration cap before reaching the tolerance."""

    def __init__(self, t: int, gap: float, iterations: int):
        self.t = t
        self.gap = gap
        self.iterations = iterations
        super().__init__(f"comparator for round {t} stopped after {iterations} iterations "
                         f"with Frank-Wolfe gap {gap:.3e}")


def frank_wolfe_gap(constraint_set: ConstraintSet, grad: np.ndarray, x: np.ndarray) -> float:
    """max over v in X of <grad, x - v>, computed with one lmo call."""
    return float(grad @ (x - constraint_set.lmo(grad)))


def _lasso_path_l1(H: np.ndarray, b: np.ndarray, radius: float, max_steps: int) -> Optional[np.ndarray]:
    """
    Follow the minimizers of 0.5 x'Hx - b'x + lam ||x||_1 from lam = ||b||_inf downward
    until ||x||_1 reaches the radius. The L1 norm is nonincreasing in lam, so the first
    such point minimizes the quadratic over the ball. Returns None when an active block
    of H is singular or the step budget runs out.
    """
    d = b.shape[0]
    x = np.zeros(d)
    corr = b.copy()
    lam = float(np.max(np.abs(corr)))
    if lam == 0.0:
        return x
    first = int(np.argmax(np.abs(corr)))
    active = [first]
    signs = {first: float(np.sign(corr[first]))}
    joined, left = first, -1

    for _ in range(max_steps):
        idx = np.array(active)
        s = np.array([signs[j] for j in active])
        try:
            direction = np.linalg.solve(H[np.ix_(idx, idx)], s)
        except np.linalg.LinAlgError:
            return None
        slope = H[:, idx] @ direction

        # the path ends where ||x||_1 hits the radius or lam hits zero
        step, event, target = lam, "end", -1
        norm_rate = float(s @ direction)
        if norm_rate > 0:
            to_boundary = (radius - float(s @ x[idx])) / norm_rate
            if to_boundary <= step:
                step, event = max(to_boundary, 0.0), "boundary"

        inactive = np.ones(d, dtype=bool)
        inactive[idx] = False
        for j in np.flatnonzero(inactive):
            if j == left:
                continue
            for gap, rate in ((lam - corr[j], 1.0 - slope[j]), (lam + corr[j], 1.0 + slope[j])):
                if rate > 1e-12:
                    candidate = max(gap, 0.0) / rate
                    if candidate < step:
                        step, event, target = candidate, "join", int(j)

        for position, j in enumerate(active):
            if j == joined or direction[position] * x[j] >= 0:
                continue
            candidate = -x[j] / direction[position]
            if 0.0 < candidate < step:
                step, event, target = candidate, "leave", j

        x[idx] += step * direction
        lam -= step
        corr = b - H @ x
        joined, left = -1, -1
        if event in ("boundary", "end"):
            return x
        if event == "join":
            active.append(target)
            signs[target] = float(np.sign(corr[target])) or 1.0
            joined = target
        else:
            active.remove(target)
            del signs[target]
            x[target] = 0.0
            left = target
    return None


def _trust_region_l2(H: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Boundary minimizer on the L2 ball: (H + lam I) x = b with ||x|| = radius."""
    eigenvalues, basis = np.linalg.eigh(H)
    coeffs = basis.T @ b

    def excess(lam: float) -> float:
        return float(np.linalg.norm(coeffs / (eigenvalues + lam))) - radius

    lower = max(0.0, -float(eigenvalues.min())) + 1e-14 * max(1.0, float(eigenvalues.max()))
    upper = lower + float(np.linalg.norm(b)) / radius + 1.0
    if excess(lower) <= 0:
        lam = lower
    else:
        lam = brentq(excess, lower, upper, xtol=1e-15, maxiter=500)
    x = basis @ (coeffs / (eigenvalues + lam))
    length = np.linalg.norm(x)
    return x if length <= radius else x * (radius / length)


def comparator_with_gap(problem: OnlineProblem, constraint_set: ConstraintSet, t: int,
                        tol: float = COMPARATOR_TOL,
                        max_iter: int = COMPARATOR_MAX_ITER) -> Tuple[np.ndarray, float]:
    """
    Minimize F_t over X and return (x_t*, Frank-Wolfe gap at x_t*).

    The unconstrained minimum-norm minimizer is accepted when it is feasible and certified.
    Otherwise the L1 ball is solved along the lasso path and the L2 ball by its trust-region
    equation. A point that misses the tolerance is refined by Frank-Wolfe with exact
    line search.

    Raises:
        ValueError: tol is not positive.
        ComparatorError: the iteration cap is reached with gap above tol.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    H = problem.global_hessian(t)
    features, labels = problem.round_data(t)
    b = features.T @ labels

    x = np.linalg.lstsq(H, b, rcond=None)[0]
    if constraint_set.contains(x):
        gap = frank_wolfe_gap(constraint_set, H @ x - b, x)
        if gap <= tol:
            return x, max(gap, 0.0)

    x = np.zeros(problem.d)
    if isinstance(constraint_set, L1Ball):
        solved = _lasso_path_l1(H, b, constraint_set.radius, PATH_STEPS_PER_DIM * problem.d)
        if solved is not None and constraint_set.contains(solved):
            x = solved
        else:
            logger.debug(f"Lasso path gave no feasible point for round {t}, using Frank-Wolfe")
    elif isinstance(constraint_set, L2Ball):
        x = _trust_region_l2(H, b, constraint_set.radius)

    gap = math.inf
    for _ in range(max_iter):
        grad = H @ x - b
        v = constraint_set.lmo(grad)
        gap = float(grad @ (x - v))
        if gap <= tol:
            return x, max(gap, 0.0)
        direction = v - x
        curvature = float(direction @ H @ direction)
        slope = float(grad @ direction)
        step = 1.0 if curvature <= 0 else min(max(-slope / curvature, 0.0), 1.0)
        x = x + step * direction
    raise ComparatorError(t, gap, max_iter)


def comparator(problem: OnlineProblem, constraint_set: ConstraintSet, t: int,
               tol: float = COMPARATOR_TOL) -> np.ndarray:
    """x_t* in argmin over X of F_t, certified to Frank-Wolfe gap at most tol."""
    return comparator_with_gap(problem, constraint_set, t, tol)[0]


def comparator_sequence(problem: OnlineProblem, constraint_set: ConstraintSet,
                        tol: float = COMPARATOR_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """Comparators for t = 1..T as a (T, d) array, plus their gaps."""
    logger.info(f"Solving {problem.T} comparator problems (tol={tol:g})")
    points = np.empty((problem.T, problem.d))
    gaps = np.empty(problem.T)
    for t in range(1, problem.T + 1):
        points[t - 1], gaps[t - 1] = comparator_with_gap(problem, constraint_set, t, tol)
    return points, gaps


def comparator_losses(problem: OnlineProblem, comparators: np.ndarray) -> np.ndarray:
    return np.array([problem.global_loss(t, comparators[t - 1]) for t in range(1, problem.T + 1)])


def dynamic_regret(trace: Trace, problem: OnlineProblem, j: int, comparators: np.ndarray) -> np.ndarray:
    """
    Partial sums over s <= t of F_s(x_{j,s}) - F_s(x_s*), where F_s sums every
    agent's loss at agent j's decision.
    """
    if comparators.shape[0] < trace.T:
        raise ValueError(f"comparators cover {comparators.shape[0]} rounds, trace has {trace.T}")
    values = np.array([problem.global_loss(t, trace.decisions[t - 1, j]) for t in range(1, trace.T + 1)])
    return np.cumsum(values - comparator_losses(problem, comparators[:trace.T]))


def dynamic_regret_all(trace: Trace, problem: OnlineProblem, comparators: np.ndarray,
                       best: Optional[np.ndarray] = None) -> np.ndarray:
    """Regret series for every agent as a (T, n) array."""
    if best is None:
        best = comparator_losses(problem, comparators[:trace.T])
    values = np.stack([problem.global_losses(t, trace.decisions[t - 1]) for t in range(1, trace.T + 1)])
    return np.cumsum(values - best[:, None], axis=0)


def global_average_regret(regret: np.ndarray) -> np.ndarray:
    """(1/n) sum_j Regret^j(t) / t from a (T, n) regret array."""
    rounds = np.arange(1, regret.shape[0] + 1)
    return regret.mean(axis=1) / rounds


def variations(problem: OnlineProblem, constraint_set: ConstraintSet,
               samples: int = VARIATION_SAMPLES, seed: int = 0) -> Tuple[float, float]:
    """
    Function variation H_T and gradient variation D_T.

    The inner maximum over X is taken over a fixed low-discrepancy member set, so
    the result is a lower estimate of the exact variations. Time-invariant streams
    return (0, 0) exactly.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    if getattr(problem, "static", False) or problem.T < 2:
        return 0.0, 0.0
    points = constraint_set.low_discrepancy_points(samples, seed)

    H_T = 0.0
    D_T = 0.0
    features, labels = problem.round_data(1)
    residual = points @ features.T - labels
    sq_norms = np.einsum('ij,ij->i', features, features)
    for t in range(1, problem.T):
        next_features, next_labels = problem.round_data(t + 1)
        next_residual = points @ next_features.T - next_labels
        next_sq_norms = np.einsum('ij,ij->i', next_features, next_features)
        cross = np.einsum('ij,ij->i', next_features, features)

        # the rho terms cancel in both differences
        H_T += float(np.max(np.abs(0.5 * (next_residual * next_residual - residual * residual))))
        sq_diff = next_residual * next_residual * next_sq_norms + residual * residual * sq_norms \
            - 2.0 * residual * next_residual * cross
        D_T += float(np.sqrt(np.max(np.maximum(sq_diff, 0.0))))

        features, residual, sq_norms = next_features, next_residual, next_sq_norms
    logger.info(f"Variations over {problem.T} rounds: H_T={H_T:.6g}, D_T={D_T:.6g}")
    return H_T, D_T


@dataclass(frozen=True)
class BoundConstants:
    """The constants of the regret bound for one problem, network and initial state."""
    D1: float
    D2: float
    D3: float
    D4: float
    D5: float
    D6: float
    C1: float
    C2: float
    E0: float
    sigma: float
    gamma: float
    lipschitz: float
    smoothness: float
    R: float
    n: int


def bound_constants(n: int, zeta: float, Q: int, R: float, lipschitz: float, smoothness: float,
                    initial_decisions: np.ndarray, initial_grads: np.ndarray,
                    initial_resolution: float) -> BoundConstants:
    """
    Evaluate C1, C2, E0 and D1..D6 from the mixing constants, problem constants and the
    round-1 decisions x_{i,1} and exact gradients at the round-1 consensus states.
    """
    mix = mixing_constants(n, zeta, Q)
    sigma, gamma = mix.sigma, mix.gamma
    if sigma >= 1:
        raise ValueError(f"mixing rate sigma={sigma} must be below 1")
    L, G = float(lipschitz), float(smoothness)
    contraction = gamma / (1.0 - sigma)

    grad_norms = float(np.sum(np.linalg.norm(initial_grads, axis=1)))
    C1 = (sigma * n * gamma * math.sqrt(initial_resolution) + n * gamma) / (1.0 - sigma) * grad_norms
    C2 = 2.0 * n * contraction + 1.0
    E0 = 4.0 * R * C2 * G + n * L

    average = initial_decisions.mean(axis=0)
    spread = float(np.sum(np.linalg.norm(initial_decisions - average, axis=1)))
    magnitude = float(np.sum(np.linalg.norm(initial_decisions, axis=1)))
    D1 = n * L * spread + n * contraction * E0 * magnitude + 4.0 * R * C1
    D2 = 4.0 * n * R * (n * L + G * R) + 2.0 * n * n * R * contraction * E0 + 8.0 * n * n * gamma * G * R * R / 2.0
    D3 = n * R * E0 * (1.0 + n * contraction * sigma) + n * n * L * R + 4.0 * n * R * L * C2 \
        + 4.0 * n * n * contraction * G * R * R
    D4 = 2.0 * n * L * R
    D5 = n * G * R * R
    D6 = 4.0 * n * n * R * contraction + 2.0 * n * R
    return BoundConstants(D1=D1, D2=D2, D3=D3, D4=D4, D5=D5, D6=D6, C1=C1, C2=C2, E0=E0,
                          sigma=sigma, gamma=gamma, lipschitz=L, smoothness=G, R=float(R), n=int(n))


def regret_bound(bc: BoundConstants, alpha: float, T: int, resolutions: Sequence[float],
                 H_T: float, D_T: float) -> float:
    """
    D1 + D2 alpha T + D3 sum sqrt(eps_t) + D4/alpha + (D5/alpha) sum eps_t
    + (2n/alpha) H_T + D6 D_T.
    """
    if bc.sigma >= 1:
        raise ValueError(f"mixing rate sigma={bc.sigma} must be below 1")
    if not 0 < alpha <= 1:
        raise ValueError(f"step size {alpha} violates 0 < alpha <= 1")
    eps = np.asarray(resolutions, dtype=float)
    inputs = np.append(eps, [alpha, H_T, D_T])
    if not np.all(np.isfinite(inputs)):
        raise ValueError("bound inputs must be finite")
    return float(bc.D1 + bc.D2 * alpha * T + bc.D3 * np.sum(np.sqrt(eps)) + bc.D4 / alpha
                 + bc.D5 / alpha * np.sum(eps) + 2.0 * bc.n / alpha * H_T + bc.D6 * D_T)


def bound_for_trace(trace: Trace, zeta: float, Q: int, constraint_set: ConstraintSet,
                    constants: ProblemConstants, H_T: float, D_T: float) -> Tuple[float, BoundConstants]:
    """Evaluate the regret bound for a finished run."""
    bc = bound_constants(trace.n, zeta, Q, constraint_set.enclosing_radius, constants.lipschitz,
                         constants.smoothness, trace.decisions[0], trace.initial_grads,
                         float(trace.resolutions[0]))
    return regret_bound(bc, trace.alpha, trace.T, trace.resolutions, H_T, D_T), bc


@dataclass(frozen=True)
class RegimeDescriptor:
    """Which step-size/resolution regime applies and the T-exponent it yields."""
    case: int
    label: str
    exponent: float
    b: Optional[float] = None
    log_factor: bool = False


def step_resolution_regime(gamma: float, xi: float) -> RegimeDescriptor:
    """
    Classify (gamma, xi) for eps_t = kappa1/t^xi and alpha = kappa2/T^gamma.

    The exponent is that of the dominant power of T outside the H_T and D_T terms.
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if xi <= gamma:
        raise ValueError(f"xi must exceed gamma, got xi={xi}, gamma={gamma}")
    if xi < 1:
        b = min(gamma, xi / 2.0, xi - gamma)
        return RegimeDescriptor(case=1, label="gamma < xi < 1", exponent=max(1.0 - b, gamma), b=b)
    if xi == 1:
        return RegimeDescriptor(case=2, label="xi = 1", exponent=max(1.0 - gamma, gamma), log_factor=True)
    return RegimeDescriptor(case=3, label="xi > 1", exponent=max(1.0 - gamma, gamma))


@dataclass(frozen=True)
class StepExponent:
    gamma: float
    theta: float
    T: int
    regret_order: str = "O(sqrt(T (1 + H_T)) + D_T)"


def optimal_gamma(theta: float, T: int) -> StepExponent:
    """gamma = 1/2 - log_T sqrt(1 + T^theta), for H_T growing like T^theta."""
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    gamma = 0.5 - 0.5 * math.log1p(T ** theta) / math.log(T)
    if gamma <= 0:
        raise ValueError(f"theta={theta} and T={T} give gamma={gamma:.4g} <= 0")
    return StepExponent(gamma=gamma, theta=theta, T=T)


@dataclass
class RegretReport:
    """
    Regret series and diagnostics of one run. `regret` is (T, n) with column j the
    partial sums for agent j.
    """
    regret: np.ndarray
    global_average: np.ndarray
    H_T: float
    D_T: float
    total_bits: int
    consensus_error: np.ndarray
    tracking_error: np.ndarray
    comparator_gaps: np.ndarray
    bound: Optional[float] = None
    notes: Dict[str, str] = field(default_factory=dict)

    @property
    def final_regret(self) -> np.ndarray:
        return self.regret[-1]

    @property
    def final_average(self) -> float:
        return float(self.global_average[-1])


def build_report(trace: Trace, problem: OnlineProblem, comparators: np.ndarray, comparator_gaps: np.ndarray,
                 H_T: float, D_T: float, bound: Optional[float] = None,
                 best: Optional[np.ndarray] = None) -> RegretReport:
    regret = dynamic_regret_all(trace, problem, comparators, best)
    return RegretReport(regret=regret, global_average=global_average_regret(regret), H_T=H_T, D_T=D_T,
                        total_bits=trace.total_bits, consensus_error=trace.consensus_error,
                        tracking_error=trace.tracking_error, comparator_gaps=comparator_gaps, bound=bound,
                        notes={"variations": "sampled lower estimate of the exact suprema"})


def seed_statistics(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error over independent seeds (standard error 0 for one seed)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("at least one value is required")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))
