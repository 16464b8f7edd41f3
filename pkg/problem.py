"""
Constraint sets with linear minimization oracles and online loss streams.
"""
import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.stats import qmc

logger = logging.getLogger(__name__)

# Tolerance on the defining norm when testing set membership.
TOL_FEAS = 1e-9

FEATURE_BOUND = 5.0

# Purpose tags mixed into the counter-based seed derivation.
_STREAM_FEATURES = 0
_STREAM_TARGET = 1


def _check_vector(x, dimension: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != dimension:
        raise ValueError(f"{name} must be a vector of length {dimension}, got shape {x.shape}")
    return x


class ConstraintSet(ABC):
    """
    A convex compact set X in R^d with a linear minimization oracle.
    """

    kind = "abstract"

    def __init__(self, radius: float, dimension: int):
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        if dimension < 1:
            raise ValueError(f"dimension must be at least 1, got {dimension}")
        self._radius = float(radius)
        self._dimension = int(dimension)

    @property
    def radius(self) -> float:
        return self._radius

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def enclosing_radius(self) -> float:
        """Smallest R such that X is contained in the Euclidean ball of radius R."""
        return self._radius

    @abstractmethod
    def norm(self, x: np.ndarray) -> float:
        """The norm whose ball defines the set."""

    @abstractmethod
    def lmo(self, direction) -> np.ndarray:
        """
        Linear minimization oracle: argmin over x in X of <x, direction>.

        Args:
            direction: vector of length d.

        Returns:
            np.ndarray: a member of X minimizing the linear function.
        """

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` members uniformly at random, shape (size, d)."""

    @abstractmethod
    def extreme_points(self) -> np.ndarray:
        """A small deterministic set of boundary points, shape (m, d)."""

    @abstractmethod
    def _scale_to_boundary(self, z: np.ndarray) -> np.ndarray:
        """Rescale each row of z onto the boundary of the set."""

    def contains(self, x, tol: float = TOL_FEAS) -> bool:
        """True iff x lies in X within `tol` on the defining norm."""
        x = _check_vector(x, self._dimension)
        return bool(self.norm(x) <= self._radius + tol)

    def low_discrepancy_points(self, samples: int, seed: int = 0) -> np.ndarray:
        """
        Deterministic member set built from a scrambled Sobol sequence: the extreme
        points, `samples` boundary points and `samples` interior points.
        """
        d = self._dimension
        sobol = qmc.Sobol(d=d + 1, scramble=True, seed=seed)
        with warnings.catch_warnings():
            # non power-of-two sizes only cost balance properties
            warnings.simplefilter("ignore", UserWarning)
            u = sobol.random(samples)
        z = 2.0 * u[:, :d] - 1.0
        z[np.all(z == 0.0, axis=1), 0] = 1.0
        boundary = self._scale_to_boundary(z)
        interior = boundary * u[:, d:d + 1]
        return np.vstack([self.extreme_points(), boundary, interior])

    def __repr__(self) -> str:
        return f"{type(self).__name__}(radius={self._radius}, dimension={self._dimension})"


class L1Ball(ConstraintSet):
    """The set {x : ||x||_1 <= radius}."""

    kind = "l1_ball"

    def norm(self, x: np.ndarray) -> float:
        return float(np.sum(np.abs(x)))

    def lmo(self, direction) -> np.ndarray:
        # lowest index among maximal |coordinate|, and sign(0) = +1
        direction = _check_vector(direction, self._dimension, "direction")
        index = int(np.argmax(np.abs(direction)))
        sign = 1.0 if direction[index] >= 0 else -1.0
        vertex = np.zeros(self._dimension)
        vertex[index] = -self._radius * sign
        return vertex

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        spacings = rng.exponential(size=(size, self._dimension + 1))
        magnitudes = spacings[:, :self._dimension] / spacings.sum(axis=1, keepdims=True)
        signs = rng.choice([-1.0, 1.0], size=(size, self._dimension))
        return self._radius * magnitudes * signs

    def extreme_points(self) -> np.ndarray:
        eye = np.eye(self._dimension) * self._radius
        return np.vstack([eye, -eye])

    def _scale_to_boundary(self, z: np.ndarray) -> np.ndarray:
        return self._radius * z / np.sum(np.abs(z), axis=1, keepdims=True)


class L2Ball(ConstraintSet):
    """The set {x : ||x||_2 <= radius}."""

    kind = "l2_ball"

    def norm(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x))

    def lmo(self, direction) -> np.ndarray:
        direction = _check_vector(direction, self._dimension, "direction")
        length = np.linalg.norm(direction)
        if length == 0.0:
            vertex = np.zeros(self._dimension)
            vertex[0] = -self._radius
            return vertex
        return -self._radius * direction / length

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        directions = rng.standard_normal((size, self._dimension))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = self._radius * rng.random(size) ** (1.0 / self._dimension)
        return directions * radii[:, None]

    def extreme_points(self) -> np.ndarray:
        eye = np.eye(self._dimension) * self._radius
        return np.vstack([eye, -eye])

    def _scale_to_boundary(self, z: np.ndarray) -> np.ndarray:
        return self._radius * z / np.linalg.norm(z, axis=1, keepdims=True)


SET_KINDS = {
    L1Ball.kind: L1Ball,
    L2Ball.kind: L2Ball,
}


def make_constraint_set(kind: str, radius: float, dimension: int) -> ConstraintSet:
    """Build a constraint set by kind name ('l1_ball' or 'l2_ball')."""
    if kind not in SET_KINDS:
        raise ValueError(f"Unknown constraint set kind: {kind}. Expected one of {sorted(SET_KINDS)}")
    return SET_KINDS[kind](radius, dimension)


class OnlineProblem(ABC):
    """
    Stream of regularized least-squares losses
    f_{i,t}(x) = 1/2 (p_{i,t}^T x - q_{i,t})^2 + rho ||x||^2.

    Agents are indexed 0..n-1 and rounds 1..T.
    """

    def __init__(self, n: int, d: int, T: int, rho: float):
        if n < 1 or d < 1 or T < 1:
            raise ValueError(f"n, d and T must be at least 1, got n={n}, d={d}, T={T}")
        if rho < 0:
            raise ValueError(f"rho must be nonnegative, got {rho}")
        self._n = int(n)
        self._d = int(d)
        self._T = int(T)
        self._rho = float(rho)

    @property
    def n(self) -> int:
        return self._n

    @property
    def d(self) -> int:
        return self._d

    @property
    def T(self) -> int:
        return self._T

    @property
    def rho(self) -> float:
        return self._rho

    @abstractmethod
    def round_data(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        """Features P_t of shape (n, d) and labels q_t of shape (n,) for round t."""

    def _check_round(self, t: int):
        if not 1 <= t <= self._T:
            raise ValueError(f"round t must be in [1, {self._T}], got {t}")

    def _check_agent(self, i: int):
        if not 0 <= i < self._n:
            raise ValueError(f"agent i must be in [0, {self._n - 1}], got {i}")

    def agent_data(self, i: int, t: int) -> Tuple[np.ndarray, float]:
        self._check_agent(i)
        features, labels = self.round_data(t)
        return features[i], float(labels[i])

    def loss(self, i: int, t: int, x) -> float:
        """f_{i,t}(x)."""
        x = _check_vector(x, self._d)
        p, q = self.agent_data(i, t)
        residual = float(p @ x) - q
        return 0.5 * residual * residual + self._rho * float(x @ x)

    def grad(self, i: int, t: int, x) -> np.ndarray:
        """Gradient of f_{i,t} at x: p (p^T x - q) + 2 rho x."""
        x = _check_vector(x, self._d)
        p, q = self.agent_data(i, t)
        return p * (float(p @ x) - q) + 2.0 * self._rho * x

    def local_losses(self, t: int, X: np.ndarray) -> np.ndarray:
        """Row i of X evaluated under f_{i,t}; returns shape (n,)."""
        features, labels = self.round_data(t)
        residual = np.sum(features * X, axis=1) - labels
        return 0.5 * residual ** 2 + self._rho * np.sum(X * X, axis=1)

    def local_grads(self, t: int, X: np.ndarray) -> np.ndarray:
        """Row i is the gradient of f_{i,t} at row i of X; shape (n, d)."""
        features, labels = self.round_data(t)
        residual = np.sum(features * X, axis=1) - labels
        return features * residual[:, None] + 2.0 * self._rho * X

    def global_loss(self, t: int, x) -> float:
        """F_t(x) = sum over agents of f_{i,t}(x)."""
        features, labels = self.round_data(t)
        residual = features @ x - labels
        return float(0.5 * residual @ residual + self._n * self._rho * (x @ x))

    def global_losses(self, t: int, points: np.ndarray) -> np.ndarray:
        """F_t evaluated at every row of `points`."""
        features, labels = self.round_data(t)
        residual = points @ features.T - labels
        return 0.5 * np.sum(residual ** 2, axis=1) + self._n * self._rho * np.sum(points * points, axis=1)

    def global_grad(self, t: int, x) -> np.ndarray:
        features, labels = self.round_data(t)
        return features.T @ (features @ x - labels) + 2.0 * self._n * self._rho * x

    def global_hessian(self, t: int) -> np.ndarray:
        features, _ = self.round_data(t)
        return features.T @ features + 2.0 * self._n * self._rho * np.eye(self._d)


def loss_eval(problem: OnlineProblem, i: int, t: int, x) -> float:
    """1/2 (p_{i,t}^T x - q_{i,t})^2 + rho ||x||_2^2."""
    return problem.loss(i, t, x)


def loss_grad(problem: OnlineProblem, i: int, t: int, x) -> np.ndarray:
    """p_{i,t} (p_{i,t}^T x - q_{i,t}) + 2 rho x."""
    return problem.grad(i, t, x)


class ExplicitStream(OnlineProblem):
    """A stream given by arrays: features (T, n, d) and labels (T, n)."""

    def __init__(self, features, labels, rho: float = 0.0):
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float)
        if features.ndim != 3 or labels.shape != features.shape[:2]:
            raise ValueError(f"features must be (T, n, d) and labels (T, n), "
                             f"got {features.shape} and {labels.shape}")
        T, n, d = features.shape
        super().__init__(n, d, T, rho)
        self._features = features
        self._labels = labels
        self._features.setflags(write=False)
        self._labels.setflags(write=False)

    def round_data(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        self._check_round(t)
        return self._features[t - 1], self._labels[t - 1]


class RegressionStream(OnlineProblem):
    """
    The regression stream q_{i,t} = p_{i,t}^T x0 + zeta_{i,t} / (4 t) with features
    uniform on [-5, 5]^d and zeta uniform on [0, 1].

    Data for (i, t) is derived from the seed by counter-based seeding, so nothing is
    stored beyond a small cache of recent rounds.
    """

    def __init__(self, seed: int, n: int, d: int, T: int, rho: float, x0: np.ndarray,
                 static: bool = False, cache_rounds: int = 4096):
        super().__init__(n, d, T, rho)
        self._seed = int(seed)
        self._x0 = _check_vector(x0, d, "x0").copy()
        self._x0.setflags(write=False)
        self._static = bool(static)
        self._cached_round = lru_cache(maxsize=cache_rounds)(self._generate_round)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def x0(self) -> np.ndarray:
        return self._x0

    @property
    def static(self) -> bool:
        return self._static

    def agent_draw(self, i: int, t: int) -> Tuple[np.ndarray, float]:
        """Features and noise zeta for (i, t); a pure function of (seed, i, t)."""
        rng = np.random.default_rng([self._seed, _STREAM_FEATURES, i, t])
        features = rng.uniform(-FEATURE_BOUND, FEATURE_BOUND, size=self._d)
        noise = float(rng.random())
        return features, noise

    def _generate_round(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        features = np.empty((self._n, self._d))
        labels = np.empty(self._n)
        for i in range(self._n):
            p, noise = self.agent_draw(i, t)
            features[i] = p
            labels[i] = p @ self._x0 + noise / (4.0 * t)
        features.setflags(write=False)
        labels.setflags(write=False)
        return features, labels

    def round_data(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        self._check_round(t)
        return self._cached_round(1 if self._static else t)


def default_ground_truth(seed: int, d: int, radius: float) -> np.ndarray:
    """
    Sparse target with ceil(d/10) nonzero coordinates at random positions, scaled so
    that ||x0||_1 = radius / 2.
    """
    rng = np.random.default_rng([seed, _STREAM_TARGET])
    support = rng.choice(d, size=math.ceil(d / 10), replace=False)
    x0 = np.zeros(d)
    x0[support] = rng.uniform(0.5, 1.0, size=support.size) * rng.choice([-1.0, 1.0], size=support.size)
    return x0 * (radius / 2.0) / np.sum(np.abs(x0))


def generate_regression_stream(seed: int, n: int, d: int, T: int, rho: float,
                               x0: Optional[np.ndarray] = None,
                               constraint_set: Optional[ConstraintSet] = None,
                               static: bool = False) -> RegressionStream:
    """
    Build the regularized online linear-regression stream.

    Args:
        seed: 64-bit seed; identical seeds give bit-identical streams.
        n, d, T: agent count, dimension and horizon.
        rho: regularization weight, at least 0.
        x0: ground truth; a sparse member of the constraint set is drawn if omitted.
        constraint_set: set the default ground truth is drawn in (L1 ball of radius 2).
        static: reuse round-1 data in every round.

    Returns:
        RegressionStream: the lazily generated stream.
    """
    if n < 1 or d < 1 or T < 1:
        raise ValueError(f"n, d and T must be at least 1, got n={n}, d={d}, T={T}")
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    if constraint_set is None:
        constraint_set = L1Ball(2.0, d)
    if x0 is None:
        x0 = default_ground_truth(seed, d, constraint_set.radius)
    elif not constraint_set.contains(x0):
        raise ValueError("x0 must be a member of the constraint set")
    logger.debug(f"Regression stream seed={seed} n={n} d={d} T={T} rho={rho} static={static}")
    return RegressionStream(seed, n, d, T, rho, np.asarray(x0, dtype=float), static=static)


@dataclass(frozen=True)
class ProblemConstants:
    """Lipschitz constants of the losses (L_X) and of their gradients (G_X)."""
    lipschitz: float
    smoothness: float
    how: str = "closed_form"


def estimate_constants(problem: OnlineProblem, constraint_set: ConstraintSet,
                       how: str = "closed_form", samples: int = 64,
                       seed: int = 0) -> ProblemConstants:
    """
    Estimate L_X and G_X over all agents and rounds.

    closed_form uses L_X = max ||p|| (||p|| R + |q|) + 2 rho R and
    G_X = max ||p||^2 + 2 rho. sampled takes the largest gradient norm over random
    members of X and the exact Hessian norm ||p||^2 + 2 rho, so it never exceeds the
    closed form.
    """
    if how not in ("closed_form", "sampled"):
        raise ValueError(f"Unknown estimation mode: {how}")
    R = constraint_set.enclosing_radius
    rho = problem.rho
    points = None
    if how == "sampled":
        points = constraint_set.sample(np.random.default_rng(seed), samples)

    lipschitz = 0.0
    smoothness = 0.0
    for t in range(1, problem.T + 1):
        features, labels = problem.round_data(t)
        norms = np.linalg.norm(features, axis=1)
        smoothness = max(smoothness, float(np.max(norms ** 2)) + 2.0 * rho)
        if points is None:
            bound = norms * (norms * R + np.abs(labels)) + 2.0 * rho * R
            lipschitz = max(lipschitz, float(np.max(bound)))
        else:
            residual = points @ features.T - labels
            # ||p r + 2 rho x||^2 expanded per (point, agent)
            sq = (residual ** 2) * norms ** 2 \
                + 4.0 * rho * residual * (points @ features.T) \
                + 4.0 * rho ** 2 * np.sum(points * points, axis=1)[:, None]
            lipschitz = max(lipschitz, float(np.sqrt(np.max(np.maximum(sq, 0.0)))))
    if rho == 0.0 and smoothness == 0.0:
        logger.warning("All features are zero and rho = 0: constants degenerate to 0")
    return ProblemConstants(lipschitz=lipschitz, smoothness=smoothness, how=how)
