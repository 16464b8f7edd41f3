"""
Time-varying communication graphs with doubly stochastic weights.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

GRAPH_KINDS = ("complete", "ring", "gossip_pairs", "random_window")

STOCHASTIC_TOL = 1e-12

_STREAM_WINDOW = 0
_STREAM_EXTRA = 1


class GraphConstructionError(ValueError):
    """A requested graph sequence cannot satisfy the network assumptions."""


@dataclass(frozen=True)
class MixingConstants:
    """Geometric decay rate sigma and prefactor Gamma for products of weight matrices."""
    sigma: float
    gamma: float


def mixing_constants(n: int, zeta: float, Q: int) -> MixingConstants:
    """
    sigma = (1 - zeta/(4 n^2))^(1/Q) and Gamma = (1 - zeta/(4 n^2))^((1 - 2Q)/Q).
    """
    if n < 1 or Q < 1:
        raise ValueError(f"n and Q must be at least 1, got n={n}, Q={Q}")
    if not 0 < zeta <= 1:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    base = 1.0 - zeta / (4.0 * n * n)
    return MixingConstants(sigma=base ** (1.0 / Q), gamma=base ** ((1.0 - 2.0 * Q) / Q))


def metropolis_weights(adjacency: np.ndarray) -> np.ndarray:
    """
    Metropolis weights on an undirected adjacency matrix:
    W_ij = 1 / (1 + max(deg_i, deg_j)) on edges, the diagonal takes the remainder.
    """
    adjacency = np.asarray(adjacency, dtype=float)
    degrees = adjacency.sum(axis=1)
    W = adjacency / (1.0 + np.maximum.outer(degrees, degrees))
    np.fill_diagonal(W, 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def check_double_stochastic(W, tol: float = STOCHASTIC_TOL) -> bool:
    """True iff every row sum and column sum of W is within tol of 1."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        return False
    return bool(np.all(np.abs(W.sum(axis=1) - 1.0) <= tol) and np.all(np.abs(W.sum(axis=0) - 1.0) <= tol))


class GraphSequence(ABC):
    """Per-round weight matrices W_1..W_T over n agents with a connectivity window Q."""

    kind = "abstract"

    def __init__(self, n: int, T: int, Q: int):
        if n < 1:
            raise ValueError(f"n must be at least 1, got {n}")
        if T < 1:
            raise ValueError(f"T must be at least 1, got {T}")
        if Q < 1:
            raise ValueError(f"window Q must be at least 1, got {Q}")
        self._n = int(n)
        self._T = int(T)
        self._Q = int(Q)
        self._zeta: Optional[float] = None

    @property
    def n(self) -> int:
        return self._n

    @property
    def T(self) -> int:
        return self._T

    @property
    def Q(self) -> int:
        return self._Q

    @property
    def zeta(self) -> float:
        """Smallest positive weight over all rounds."""
        if self._zeta is None:
            self._zeta = min(float(np.min(W[W > 0])) for W in self.iter_weights())
        return self._zeta

    def _check_round(self, t: int):
        if not 1 <= t <= self._T:
            raise ValueError(f"round t must be in [1, {self._T}], got {t}")

    @abstractmethod
    def weights(self, t: int) -> np.ndarray:
        """W_t as an n x n array."""

    def iter_weights(self):
        for t in range(1, self._T + 1):
            yield self.weights(t)

    def directed_edges(self, t: int) -> List[Tuple[int, int]]:
        """Edges (j, i) meaning agent i receives from agent j in round t."""
        W = self.weights(t)
        rows, cols = np.nonzero(W > 0)
        return [(int(j), int(i)) for i, j in zip(rows, cols) if i != j]


class ExplicitGraphSequence(GraphSequence):
    """A sequence given by its matrices; used for hand-built networks."""

    kind = "explicit"

    def __init__(self, matrices: Sequence, Q: int = 1):
        arrays = [np.asarray(W, dtype=float) for W in matrices]
        if not arrays:
            raise ValueError("at least one weight matrix is required")
        n = arrays[0].shape[0]
        for W in arrays:
            if W.shape != (n, n):
                raise ValueError(f"every weight matrix must be {n}x{n}, got {W.shape}")
            if np.any(W < 0):
                raise ValueError("weight matrices must be nonnegative")
            W.setflags(write=False)
        super().__init__(n, len(arrays), Q)
        self._matrices = arrays

    def weights(self, t: int) -> np.ndarray:
        self._check_round(t)
        return self._matrices[t - 1]


class GeneratedGraphSequence(GraphSequence):
    """
    Seeded undirected graph sequence with Metropolis weights.

    complete and ring are static. gossip_pairs activates one edge of a random spanning
    tree per round. random_window spreads the edges of a random spanning tree over each
    Q-window and adds independent extra edges with probability `extra_edge_prob`.
    """

    def __init__(self, kind: str, n: int, T: int, Q: int, seed: int,
                 extra_edge_prob: float = 0.05, cache_rounds: int = 256):
        if kind not in GRAPH_KINDS:
            raise ValueError(f"Unknown graph kind: {kind}. Expected one of {GRAPH_KINDS}")
        super().__init__(n, T, Q)
        self.kind = kind
        self._seed = int(seed)
        self._extra_edge_prob = float(extra_edge_prob)
        self._cached_weights = lru_cache(maxsize=cache_rounds)(self._build_weights)
        self._cached_window = lru_cache(maxsize=8)(self._window_tree)

    @property
    def seed(self) -> int:
        return self._seed

    def _window_tree(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self._seed, _STREAM_WINDOW, k])
        order = rng.permutation(self._n)
        edges = np.array([(order[idx], order[rng.integers(idx)]) for idx in range(1, self._n)],
                         dtype=int).reshape(-1, 2)
        window_length = min(self._Q, self._T - k * self._Q)
        if self.kind == "gossip_pairs":
            rounds = np.arange(len(edges)) % window_length
        else:
            rounds = rng.integers(window_length, size=len(edges))
        return edges, rounds

    def edges(self, t: int) -> List[Tuple[int, int]]:
        """Undirected edges (u, v), u < v, active in round t."""
        self._check_round(t)
        n = self._n
        if self.kind == "complete":
            return [(u, v) for u in range(n) for v in range(u + 1, n)]
        if self.kind == "ring":
            if n == 1:
                return []
            if n == 2:
                return [(0, 1)]
            return sorted(tuple(sorted((u, (u + 1) % n))) for u in range(n))

        k, position = divmod(t - 1, self._Q)
        tree, rounds = self._cached_window(k)
        active = {tuple(sorted((int(u), int(v)))) for (u, v), r in zip(tree, rounds) if r == position}
        if self.kind == "random_window" and self._extra_edge_prob > 0 and n > 1:
            rng = np.random.default_rng([self._seed, _STREAM_EXTRA, t])
            draws = rng.random((n, n))
            us, vs = np.nonzero(np.triu(draws < self._extra_edge_prob, k=1))
            active.update((int(u), int(v)) for u, v in zip(us, vs))
        return sorted(active)

    def _build_weights(self, t: int) -> np.ndarray:
        adjacency = np.zeros((self._n, self._n))
        for u, v in self.edges(t):
            adjacency[u, v] = adjacency[v, u] = 1.0
        W = metropolis_weights(adjacency)
        W.setflags(write=False)
        return W

    def weights(self, t: int) -> np.ndarray:
        self._check_round(t)
        return self._cached_weights(t)


def _union_graph(seq: GraphSequence, first: int, last: int) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(seq.n))
    for t in range(first, last + 1):
        graph.add_edges_from(seq.directed_edges(t))
    return graph


def check_joint_connectivity(seq: GraphSequence, Q: int) -> bool:
    """
    True iff for every window [kQ+1, (k+1)Q] inside [1, T] the union of the round
    graphs is strongly connected. With no full window the union over [1, T] is checked.
    """
    if Q < 1:
        raise ValueError(f"window Q must be at least 1, got {Q}")
    windows = seq.T // Q
    if windows == 0:
        return nx.is_strongly_connected(_union_graph(seq, 1, seq.T))
    for k in range(windows):
        if not nx.is_strongly_connected(_union_graph(seq, k * Q + 1, (k + 1) * Q)):
            logger.debug(f"Window {k} (rounds {k * Q + 1}..{(k + 1) * Q}) is not strongly connected")
            return False
    return True


def transition_matrix(seq: GraphSequence, t: int, s: int) -> np.ndarray:
    """Phi(t, s) = W_t W_{t-1} ... W_s."""
    if t < s:
        raise ValueError(f"transition matrix needs t >= s, got t={t}, s={s}")
    if s < 1:
        raise ValueError(f"s must be at least 1, got {s}")
    product = np.array(seq.weights(s), dtype=float)
    for r in range(s + 1, t + 1):
        product = seq.weights(r) @ product
    return product


def generate_graphs(kind: str, n: int, T: int, Q: int, seed: int,
                    extra_edge_prob: float = 0.05) -> GeneratedGraphSequence:
    """
    Build a seeded graph sequence and validate it.

    Raises:
        GraphConstructionError: the request cannot be met, or a generated round fails
            the double stochasticity or joint connectivity check.
    """
    if kind == "gossip_pairs":
        if n < 2:
            raise GraphConstructionError("gossip_pairs needs at least two agents (joint connectivity)")
        if Q < n - 1:
            raise GraphConstructionError(
                f"gossip_pairs with n={n} needs Q >= {n - 1} to connect each window (joint connectivity)")
    seq = GeneratedGraphSequence(kind, n, T, Q, seed, extra_edge_prob=extra_edge_prob)

    zeta = 1.0
    for t in range(1, T + 1):
        W = seq.weights(t)
        if not check_double_stochastic(W):
            raise GraphConstructionError(f"round {t} fails the double stochasticity check")
        zeta = min(zeta, float(np.min(W[W > 0])))
    seq._zeta = zeta
    if not check_joint_connectivity(seq, Q):
        raise GraphConstructionError(f"{kind} sequence fails the joint connectivity check for Q={Q}")
    logger.info(f"Generated {kind} graph sequence: n={n}, T={T}, Q={Q}, zeta={zeta:.4g}")
    return seq


def export_edge_list(seq: GraphSequence, t: int, path: str):
    """Write round t's edges as 'u v weight' lines (u sends to v)."""
    W = seq.weights(t)
    with open(path, 'w', encoding='utf-8') as f:
        for sender, receiver in seq.directed_edges(t):
            f.write(f"{sender} {receiver} {float(W[receiver, sender])!r}\n")
