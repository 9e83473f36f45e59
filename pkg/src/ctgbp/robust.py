"""Robust loss functions and the corrector that folds them into Gauss-Newton.

Losses are parameterized on the squared weighted residual norm ``s = ||r||^2``
(not the norm itself) to avoid the usual delta-vs-delta^2 confusion; all
thresholds below are in squared-residual units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

TRIVIAL = "trivial"
HUBER = "huber"
CAUCHY = "cauchy"


@dataclass(frozen=True)
class LossFunction:
    kind: str
    param: float = 0.0  # huber: delta (norm units), cauchy: c (norm units)

    def __post_init__(self):
        if self.kind not in (TRIVIAL, HUBER, CAUCHY):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind != TRIVIAL and self.param <= 0.0:
            raise ValueError(f"{self.kind} loss needs a positive scale, got {self.param}")

    @staticmethod
    def trivial() -> "LossFunction":
        return LossFunction(TRIVIAL)

    @staticmethod
    def huber(delta: float) -> "LossFunction":
        return LossFunction(HUBER, float(delta))

    @staticmethod
    def cauchy(c: float) -> "LossFunction":
        return LossFunction(CAUCHY, float(c))

    @staticmethod
    def parse(spec: str) -> "LossFunction":
        """Parse config strings: "trivial", "huber:<delta>", "cauchy:<c>"."""
        name, _, arg = spec.partition(":")
        name = name.strip().lower()
        if name == TRIVIAL:
            return LossFunction.trivial()
        if name == HUBER:
            return LossFunction.huber(float(arg))
        if name == CAUCHY:
            return LossFunction.cauchy(float(arg))
        raise ValueError(f"unknown loss spec {spec!r}")

    def __str__(self) -> str:
        return self.kind if self.kind == TRIVIAL else f"{self.kind}:{self.param}"


def loss_eval(loss: LossFunction, s: float) -> Tuple[float, float, float]:
    """Value and first two derivatives of rho at s = ||r||^2 >= 0."""
    if s < 0.0:
        raise ValueError(f"squared residual must be nonnegative, got {s}")
    if loss.kind == TRIVIAL:
        return s, 1.0, 0.0
    if loss.kind == HUBER:
        d2 = loss.param * loss.param
        if s <= d2:
            return s, 1.0, 0.0
        sq = np.sqrt(s)
        return 2.0 * loss.param * sq - d2, loss.param / sq, -0.5 * loss.param / (s * sq)
    # cauchy
    c2 = loss.param * loss.param
    t = 1.0 + s / c2
    return c2 * np.log(t), 1.0 / t, -1.0 / (c2 * t * t)


def triggs_correct(r: np.ndarray, J: np.ndarray, loss: LossFunction):
    """Rescale a weighted residual/Jacobian pair so plain Gauss-Newton steps
    follow the robust energy 0.5 * rho(||r||^2).

    The radial rescaling factor alpha solves alpha^2 - 2 alpha = 2 s rho''/rho'
    (smaller root, so 1 - alpha > 0). Where that quadratic degenerates (Huber's
    outlier region sits exactly on the boundary, Cauchy beyond its scale goes
    complex) the correction falls back to alpha = 0, i.e. pure sqrt(rho')
    scaling; the gradient identity J'^T r' = 0.5 * grad rho holds either way.
    """
    s = float(r @ r)
    _, d1, d2 = loss_eval(loss, s)
    sqrt_d1 = np.sqrt(d1)
    if s == 0.0 or d2 == 0.0:
        return sqrt_d1 * r, sqrt_d1 * J
    radicand = 1.0 + 2.0 * s * d2 / d1
    if radicand <= 1e-12:
        return sqrt_d1 * r, sqrt_d1 * J
    alpha = 1.0 - np.sqrt(radicand)
    r_corr = (sqrt_d1 / (1.0 - alpha)) * r
    J_corr = sqrt_d1 * (J - (alpha / s) * np.outer(r, r @ J))
    return r_corr, J_corr
