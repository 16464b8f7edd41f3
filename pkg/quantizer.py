"""
Random quantizers (unbiased, bounded relative variance) with level schedules and
per-message bit accounting.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_BITS = 64

QUANTIZER_KINDS = ("identity", "probabilistic", "k_level")
SCHEDULES = ("power", "resolution")


@dataclass(frozen=True)
class QuantizerSpec:
    """
    A quantizer kind plus its level schedule.

    schedule 'power' uses k_t = ceil(t^exponent); schedule 'resolution' targets
    eps_{d,k_t} = kappa1 / t^xi, i.e. k_t = ceil(sqrt(d t^xi / (4 kappa1))).
    `cap` bounds k_t from above. `value_range` is the half-width of the representable
    interval and only matters for bit accounting; None lets the engine pick it.
    """
    kind: str = "probabilistic"
    schedule: str = "power"
    exponent: float = 1.0
    kappa1: float = 1.0
    xi: float = 1.0
    cap: Optional[int] = None
    value_range: Optional[float] = None

    def __post_init__(self):
        if self.kind not in QUANTIZER_KINDS:
            raise ValueError(f"Unknown quantizer kind: {self.kind}. Expected one of {QUANTIZER_KINDS}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"Unknown level schedule: {self.schedule}. Expected one of {SCHEDULES}")
        if self.cap is not None and self.cap < 1:
            raise ValueError(f"level cap B must be a positive integer, got {self.cap}")
        if self.schedule == "resolution" and (self.kappa1 <= 0 or self.xi <= 0):
            raise ValueError("resolution schedule needs kappa1 > 0 and xi > 0")
        if self.value_range is not None and self.value_range <= 0:
            raise ValueError(f"value_range must be positive, got {self.value_range}")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def describe(self) -> str:
        if self.is_identity:
            return "identity"
        if self.schedule == "power":
            label = f"{self.kind} k_t=ceil(t^{self.exponent:g})"
        else:
            label = f"{self.kind} eps_t={self.kappa1:g}/t^{self.xi:g}"
        if self.cap is not None:
            label += f" B={self.cap}"
        return label


@dataclass
class QuantizedMessage:
    """What an agent puts on the wire for one vector."""
    payload: np.ndarray
    bits: int
    exact: bool


def level_at(spec: QuantizerSpec, t: int, dimension: Optional[int] = None) -> int:
    """
    Effective quantization level k_t, including the cap B.

    The resolution schedule depends on the dimension, so `dimension` is required there.
    """
    if t < 1:
        raise ValueError(f"round t must be at least 1, got {t}")
    if spec.is_identity:
        return 1
    if spec.schedule == "power":
        # t^p can land a hair above an integer in floating point
        level = math.ceil(t ** spec.exponent - 1e-9)
    else:
        if dimension is None:
            raise ValueError("the resolution schedule needs the dimension d")
        level = math.ceil(math.sqrt(dimension * t ** spec.xi / (4.0 * spec.kappa1)))
    level = max(1, level)
    if spec.cap is not None:
        level = min(level, spec.cap)
    return level


def resolution(spec: QuantizerSpec, d: int, t: int) -> float:
    """
    Quantization resolution eps_{d,k_t}: 0 for identity, d/(4 k_t^2) for the
    probabilistic quantizer and min(d/k_t^2, sqrt(d)/k_t) for the k-level quantizer.
    """
    if spec.is_identity:
        return 0.0
    k = level_at(spec, t, d)
    if spec.kind == "probabilistic":
        achieved = d / (4.0 * k * k)
        if spec.schedule == "resolution":
            return max(spec.kappa1 / t ** spec.xi, achieved)
        return achieved
    return min(d / (k * k), math.sqrt(d) / k)


def message_bits(spec: QuantizerSpec, d: int, t: int, observed_range: Optional[float] = None) -> int:
    """
    Bits charged for one d-dimensional message.

    Quantized kinds cost d * ceil(log2(2 ceil(range k_t) + 1)), where range is
    value_range, widened to the observed range rounded up when a coordinate falls
    outside it. Identity costs d * 64.
    """
    if spec.is_identity:
        return d * FLOAT_BITS
    k = level_at(spec, t, d)
    value_range = spec.value_range if spec.value_range is not None else 1.0
    if observed_range is not None and observed_range > value_range:
        value_range = float(math.ceil(observed_range))
    grid_points = 2 * math.ceil(value_range * k) + 1
    return d * math.ceil(math.log2(grid_points))


def _stochastic_round(scaled: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    # integer neighbour above with probability equal to the fractional part
    floor = np.floor(scaled)
    return floor + (uniforms < (scaled - floor))


def _quantize_rows(spec: QuantizerSpec, Y: np.ndarray, k: int, uniforms: np.ndarray) -> np.ndarray:
    if spec.kind == "probabilistic":
        return _stochastic_round(Y * k, uniforms) / k
    norms = np.linalg.norm(Y, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    levels = _stochastic_round(np.abs(Y) * k / safe, uniforms)
    return np.where(norms > 0, safe * np.sign(Y) * levels / k, 0.0)


def _check_finite(y: np.ndarray):
    if not np.all(np.isfinite(y)):
        raise ValueError("cannot quantize a vector with nonfinite coordinates")


def quantize(spec: QuantizerSpec, y, t: int, rng: Optional[np.random.Generator] = None) -> QuantizedMessage:
    """
    Quantize one vector at round t.

    Each coordinate a goes to the grid point above with probability (a - floor) k_t and
    to the one below otherwise, using one uniform draw per coordinate from `rng`.

    Args:
        spec: quantizer specification.
        y: vector to quantize.
        t: round, at least 1.
        rng: random stream; unused by the identity kind.

    Returns:
        QuantizedMessage: payload, bit cost and exactness flag.
    """
    y = np.asarray(y, dtype=float)
    _check_finite(y)
    d = y.shape[0]
    if spec.is_identity:
        return QuantizedMessage(payload=y.copy(), bits=message_bits(spec, d, t), exact=True)
    if rng is None:
        raise ValueError("a random stream is required for random quantizers")
    k = level_at(spec, t, d)
    payload = _quantize_rows(spec, y, k, rng.random(d))
    observed = float(np.max(np.abs(y))) if d else 0.0
    return QuantizedMessage(payload=payload, bits=message_bits(spec, d, t, observed), exact=False)


def quantize_batch(spec: QuantizerSpec, Y, t: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Quantize each row of Y independently; returns the payload matrix only."""
    Y = np.asarray(Y, dtype=float)
    _check_finite(Y)
    if spec.is_identity:
        return Y.copy()
    if rng is None:
        raise ValueError("a random stream is required for random quantizers")
    k = level_at(spec, t, Y.shape[-1])
    return _quantize_rows(spec, Y, k, rng.random(Y.shape))
