"""Trainable per-feature activation functions.

Two families replace input normalization:

* step ladder, ``y = (1/n) * sum_i erf(k_i * (x - x_i))`` with slopes ``k``
  and positions ``x0``;
* peak sum, ``y = sum_i exp(-(x - x_i)**2 / w_i)`` with widths ``w`` and
  positions ``x0``.

``ErfScale`` (``erf(k * x)``) and ``ErfShift`` (``erf(x - x0)``) are the
single-parameter variants used by the smaller models.

Every activation exposes ``forward(x)`` and ``backward(x, upstream)``;
``backward`` returns the per-sample input gradient and the batch-summed
parameter gradients. For units with several steps/peaks, :func:`localize`
keeps the gradient of just one of them per update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.special import erf

TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
WIDTH_FLOOR = 1e-6


def _as_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("activation input must be finite")
    return x


def _vec(values) -> np.ndarray:
    return np.array(values, dtype=np.float64).reshape(-1)


class Activation:
    kind: ClassVar[str] = "none"
    params: ClassVar[tuple[str, ...]] = ()
    # parameter whose gradient ranks the units when localizing
    rank_by: ClassVar[str | None] = None

    @property
    def n(self) -> int:
        return len(getattr(self, self.params[0])) if self.params else 0

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, upstream) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        raise NotImplementedError

    def constrain(self) -> None:
        """Project parameters back into their valid range after an update."""

    def config(self) -> dict:
        return {"kind": self.kind, "n": self.n}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.params}


@dataclass(eq=False)
class Identity(Activation):
    kind: ClassVar[str] = "none"

    def forward(self, x):
        return _as_input(x).copy()

    def backward(self, x, upstream):
        return np.asarray(upstream, dtype=np.float64).copy(), {}


@dataclass(eq=False)
class StepLadder(Activation):
    k: np.ndarray
    x0: np.ndarray
    kind: ClassVar[str] = "step"
    params: ClassVar[tuple[str, ...]] = ("k", "x0")
    rank_by: ClassVar[str | None] = "x0"

    def __post_init__(self) -> None:
        self.k, self.x0 = _vec(self.k), _vec(self.x0)
        if self.k.shape != self.x0.shape or self.k.size < 1:
            raise ValueError("step ladder needs matching, non-empty k and x0")

    def forward(self, x):
        x = _as_input(x)
        u = self.k * (x[..., None] - self.x0)
        return erf(u).mean(axis=-1)

    def backward(self, x, upstream):
        x = _as_input(x)
        g = np.asarray(upstream, dtype=np.float64)
        d = x[..., None] - self.x0
        u = self.k * d
        # d/du erf(u) scaled by upstream and the 1/n average
        s = (g[..., None] / self.n) * TWO_OVER_SQRT_PI * np.exp(-u * u)
        dx = (s * self.k).sum(axis=-1)
        flat = s.reshape(-1, self.n)
        return dx, {
            "k": (flat * d.reshape(-1, self.n)).sum(axis=0),
            "x0": -(flat * self.k).sum(axis=0),
        }


@dataclass(eq=False)
class PeakSum(Activation):
    w: np.ndarray
    x0: np.ndarray
    w_floor: float = WIDTH_FLOOR
    kind: ClassVar[str] = "peak"
    params: ClassVar[tuple[str, ...]] = ("w", "x0")
    rank_by: ClassVar[str | None] = "x0"

    def __post_init__(self) -> None:
        self.w, self.x0 = _vec(self.w), _vec(self.x0)
        if self.w.shape != self.x0.shape or self.w.size < 1:
            raise ValueError("peak sum needs matching, non-empty w and x0")
        if np.any(self.w <= 0):
            raise ValueError("peak widths must be positive")

    def forward(self, x):
        x = _as_input(x)
        d = x[..., None] - self.x0
        return np.exp(-(d * d) / self.w).sum(axis=-1)

    def backward(self, x, upstream):
        x = _as_input(x)
        g = np.asarray(upstream, dtype=np.float64)
        d = x[..., None] - self.x0
        e = g[..., None] * np.exp(-(d * d) / self.w)
        gx0 = e * 2.0 * d / self.w
        gw = e * (d * d) / (self.w * self.w)
        return -gx0.sum(axis=-1), {
            "w": gw.reshape(-1, self.n).sum(axis=0),
            "x0": gx0.reshape(-1, self.n).sum(axis=0),
        }

    def constrain(self) -> None:
        np.maximum(self.w, self.w_floor, out=self.w)


@dataclass(eq=False)
class ErfScale(Activation):
    """``erf(k * x)`` with one trainable slope."""

    k: np.ndarray = field(default_factory=lambda: np.ones(1))
    kind: ClassVar[str] = "erf_scale"
    params: ClassVar[tuple[str, ...]] = ("k",)

    def __post_init__(self) -> None:
        self.k = _vec(self.k)

    def forward(self, x):
        return erf(self.k[0] * _as_input(x))

    def backward(self, x, upstream):
        x = _as_input(x)
        g = np.asarray(upstream, dtype=np.float64)
        s = g * TWO_OVER_SQRT_PI * np.exp(-(self.k[0] * x) ** 2)
        return s * self.k[0], {"k": np.array([(s * x).sum()])}


@dataclass(eq=False)
class ErfShift(Activation):
    """``erf(x - x0)`` with one trainable offset."""

    x0: np.ndarray = field(default_factory=lambda: np.zeros(1))
    kind: ClassVar[str] = "erf_shift"
    params: ClassVar[tuple[str, ...]] = ("x0",)

    def __post_init__(self) -> None:
        self.x0 = _vec(self.x0)

    def forward(self, x):
        return erf(_as_input(x) - self.x0[0])

    def backward(self, x, upstream):
        x = _as_input(x)
        g = np.asarray(upstream, dtype=np.float64)
        s = g * TWO_OVER_SQRT_PI * np.exp(-((x - self.x0[0]) ** 2))
        return s, {"x0": np.array([-s.sum()])}


KINDS = {cls.kind: cls for cls in (Identity, StepLadder, PeakSum, ErfScale, ErfShift)}


def step_forward(x, params: StepLadder):
    return params.forward(x)


def peak_forward(x, params: PeakSum):
    return params.forward(x)


def step_backward(x, params: StepLadder, upstream):
    """(dL/dx, dL/dk, dL/dx0) for a step ladder."""
    dx, g = params.backward(x, upstream)
    return dx, g["k"], g["x0"]


def peak_backward(x, params: PeakSum, upstream):
    """(dL/dx, dL/dw, dL/dx0) for a peak sum."""
    dx, g = params.backward(x, upstream)
    return dx, g["w"], g["x0"]


def localize(grads: dict[str, np.ndarray], rank_by: str = "x0") -> dict[str, np.ndarray]:
    """Keep gradients of the one step/peak with the smallest ``|grad[rank_by]|``.

    All other units get zero gradient for every parameter. Ties go to the
    lowest index; a single-unit activation passes through unchanged.
    """
    rank = np.abs(grads[rank_by])
    if rank.size <= 1:
        return {k: v.copy() for k, v in grads.items()}
    keep = int(np.argmin(rank))
    out = {}
    for name, g in grads.items():
        masked = np.zeros_like(g)
        masked[keep] = g[keep]
        out[name] = masked
    return out


def localize_gradients(unit_grads: list[dict[str, np.ndarray]], rank_by: str = "x0") -> list[dict[str, np.ndarray]]:
    return [localize(g, rank_by) for g in unit_grads]


def knot_positions(samples, n: int, floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Knots at evenly spaced quantiles and the width of the quantile band around each.

    Knot ``i`` sits at quantile ``i / (n + 1)``; its band spans
    ``+-1 / (2 (n + 1))`` around that level. A band narrower than ``floor``
    falls back to the overall spread divided by ``n + 1``, and then to 1.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("no finite samples to initialize from")
    levels = np.arange(1, n + 1) / (n + 1)
    half = 0.5 / (n + 1)
    x0 = np.quantile(x, levels)
    gap = np.quantile(x, np.minimum(levels + half, 1.0)) - np.quantile(x, np.maximum(levels - half, 0.0))
    spread = (x.max() - x.min()) / (n + 1)
    gap = np.where(gap > floor, gap, spread if spread > floor else 1.0)
    return x0, gap


def init_from_data(samples, kind: str, n: int, c: float = 2.0, floor: float = 1e-6) -> StepLadder | PeakSum:
    """Place a step ladder or peak sum on the empirical distribution of one feature.

    Steps get slope ``c / gap``; peaks get width ``gap ** 2``. A constant
    feature yields unit slopes/widths centred on the constant.
    """
    if n < 1:
        raise ValueError("need at least one step/peak")
    if kind not in ("step", "peak"):
        raise ValueError(f"unknown activation kind {kind!r}")
    x0, gap = knot_positions(samples, n, floor)
    if np.ptp(np.asarray(samples, dtype=np.float64)) == 0:
        ones = np.ones(n)
        return StepLadder(ones, x0) if kind == "step" else PeakSum(ones, x0)
    if kind == "step":
        return StepLadder(c / gap, x0)
    return PeakSum(np.maximum(gap * gap, WIDTH_FLOOR), x0)
