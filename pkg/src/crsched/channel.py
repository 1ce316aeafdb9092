"""Block-fading channel primitives.

Per-slot gains are i.i.d. truncated exponentials, rates follow the
Shannon-style log law, and transmit power is clipped so a single
transmitter can never push more than `i_inst` interference onto the
primary receiver.  Channel estimates may carry a bounded relative error;
the deflated/inflated values used by the schedulers are conservative on
both the rate side and the interference side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Slot length in rate units.  Rates and packet lengths are expressed in the
# same natural-log units, so only the ratio L/rate matters.
T_S = 1.0


@dataclass(frozen=True)
class GainDistribution:
    """Exponential fading law truncated to [0, max_gain].

    `mean` is the scale of the parent exponential, not the truncated mean.
    `max_gain == mean` degenerates to a point mass at `mean`, which gives
    tests a deterministic channel without a separate code path elsewhere.
    """

    mean: float
    max_gain: float

    def __post_init__(self) -> None:
        if self.mean <= 0.0:
            raise ValueError(f"gain mean must be positive, got {self.mean}")
        if self.max_gain < self.mean:
            raise ValueError(f"max_gain {self.max_gain} < mean {self.mean}")

    @property
    def degenerate(self) -> bool:
        return self.max_gain == self.mean

    @property
    def truncated_mean(self) -> float:
        """E[X] of the truncated law (slightly below `mean`)."""
        if self.degenerate:
            return self.mean
        c, m = self.max_gain, self.mean
        z = -math.expm1(-c / m)  # 1 - exp(-c/m)
        return m - c * math.exp(-c / m) / z

    def cdf(self, x):
        if self.degenerate:
            return np.where(np.asarray(x) >= self.mean, 1.0, 0.0)
        z = -math.expm1(-self.max_gain / self.mean)
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.max_gain)
        return -np.expm1(-x / self.mean) / z

    def sample(self, u):
        """Inverse-CDF transform of uniforms u in [0, 1).

        Renormalized so there is no atom at max_gain; accepts scalars or
        arrays.  u < 1 maps strictly inside [0, max_gain).
        """
        if self.degenerate:
            return np.full_like(np.asarray(u, dtype=float), self.mean) if np.ndim(u) else self.mean
        z = -math.expm1(-self.max_gain / self.mean)
        return -self.mean * np.log1p(-z * np.asarray(u, dtype=float)) if np.ndim(u) else \
            -self.mean * math.log1p(-z * u)


def sample_gain(dist: GainDistribution, rng: np.random.Generator, size=None):
    """Draw gains from `dist` using `rng` (scalar when size is None)."""
    u = rng.random(size)
    return dist.sample(u)


def transmission_rate(power: float, gain: float) -> float:
    """Service offered in one slot at transmit power `power` over gain `gain`."""
    return T_S * math.log1p(power * gain)


def capped_power(power_param: float, g: float, i_inst: float) -> float:
    """Largest power <= power_param keeping instantaneous interference <= i_inst.

    g is the (estimated) interference gain toward the primary receiver;
    g == 0 cannot interfere, so the parameter passes through.
    """
    if g <= 0.0:
        return power_param
    return min(i_inst / g, power_param)


def apply_csi_error(gamma_true: float, g_true: float, alpha: float,
                    u_gamma: float, u_g: float) -> tuple[float, float]:
    """Map true gains to the conservative values the scheduler acts on.

    The estimator sees gain*(1 + alpha*u) with u uniform on [-1/2, 1/2].
    Deflating the rate gain by (1 + alpha/2) keeps the chosen rate at or
    below what the channel supports (no outage); inflating the
    interference gain by 1/(1 - alpha/2) keeps true interference at or
    below the cap.  alpha == 0 is the perfect-CSI identity.
    """
    if alpha == 0.0:
        return gamma_true, g_true
    gamma_used = gamma_true * (1.0 + alpha * u_gamma) / (1.0 + 0.5 * alpha)
    g_used = g_true * (1.0 + alpha * u_g) / (1.0 - 0.5 * alpha)
    return gamma_used, g_used
