"""Transmit decision, piecewise-affine encoder/decoder, noisy channel and sign side channel.

The encoder centres the source on the conditional mean of its sign region
and scales it so the transmitted power is exactly ``P_T``.  The decoder is
the matching linear shrinkage estimator.  A silent step carries
information too: the receiver knows ``|x| <= beta`` and outputs the
conditional mean of that region.

``encode``/``decode`` are plain numpy expressions, so the same functions
serve scalar steps and whole arrays of episodes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .sources import SourceModel

NOISE_FAMILIES = ("gaussian", "laplace", "uniform")


class Side(enum.IntEnum):
    """Side-channel symbol: the sign of the transmitted sample, or silence."""

    MINUS = -1
    SILENT = 0
    PLUS = 1

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ChannelSpec:
    """Additive zero-mean noise of variance ``noise_var`` under transmit power ``power``."""

    power: float
    noise_var: float
    noise_family: str = "gaussian"

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError(f"transmit power must be positive, got {self.power}")
        if not self.noise_var > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_var}")
        if self.noise_family not in NOISE_FAMILIES:
            raise ValueError(f"noise family must be one of {NOISE_FAMILIES}, got {self.noise_family!r}")

    @classmethod
    def from_gamma(cls, gamma: float, power: float = 1.0, noise_family: str = "gaussian") -> "ChannelSpec":
        if not gamma > 0:
            raise ValueError(f"gamma must be positive to build a channel, got {gamma}")
        return cls(power, power / gamma, noise_family)

    @property
    def gamma(self) -> float:
        return self.power / self.noise_var

    def sample_noise(self, rng: np.random.Generator, size=None):
        sd = math.sqrt(self.noise_var)
        if self.noise_family == "gaussian":
            return rng.normal(0.0, sd, size)
        if self.noise_family == "laplace":
            return rng.laplace(0.0, sd / math.sqrt(2.0), size)
        half = math.sqrt(3.0) * sd
        return rng.uniform(-half, half, size)


@dataclass(frozen=True)
class CodecParams:
    """Encoder/decoder constants for threshold ``beta``; fields may be arrays.

    The plus and minus slots are kept apart even though an even source makes
    them mirror images.  A threshold at or past the support edge has no
    transmit region; its gains are reported as ``inf`` and its variances as 0.
    """

    beta: np.ndarray | float
    power: float
    mu_plus: np.ndarray | float
    var_plus: np.ndarray | float
    alpha_plus: np.ndarray | float
    mu_minus: np.ndarray | float
    var_minus: np.ndarray | float
    alpha_minus: np.ndarray | float
    mu_zero: np.ndarray | float

    @classmethod
    def from_source(cls, source: SourceModel, beta, power: float) -> "CodecParams":
        beta = np.asarray(beta, float)
        if beta.ndim:
            # tables repeat thresholds heavily; evaluate each distinct value once
            uniq, inverse = np.unique(beta, return_inverse=True)
            return cls._evaluate(source, uniq, power).take(inverse.reshape(beta.shape))
        return cls._evaluate(source, beta, power)

    @classmethod
    def _evaluate(cls, source, beta, power):
        b = np.minimum(beta, source.upper)
        finite = np.isfinite(b)
        bf = np.where(finite, b, 0.0)
        m_plus, mu_plus, var_plus = (np.asarray(v, float) for v in source.region_moments(bf, math.inf))
        m_minus, mu_minus, var_minus = (np.asarray(v, float) for v in source.region_moments(-math.inf, -bf))
        m_zero, mu_zero, _ = (np.asarray(v, float) for v in source.region_moments(-bf, bf))
        sent = finite & (m_plus > 0)
        mu_plus = np.where(sent, mu_plus, b)
        mu_minus = np.where(sent, mu_minus, -b)
        var_plus = np.where(sent, var_plus, 0.0)
        var_minus = np.where(sent, var_minus, 0.0)
        with np.errstate(divide="ignore"):
            alpha_plus = np.where(var_plus > 0, np.sqrt(power / var_plus), np.inf)
            alpha_minus = np.where(var_minus > 0, np.sqrt(power / var_minus), np.inf)
        mu_zero = np.where(m_zero > 0, mu_zero, 0.0)

        def out(a):
            return float(a) if a.ndim == 0 else a

        return cls(
            out(beta), power, out(mu_plus), out(var_plus), out(alpha_plus),
            out(mu_minus), out(var_minus), out(alpha_minus), out(mu_zero),
        )

    def take(self, index) -> "CodecParams":
        """Select entries of an array-valued parameter set (e.g. by ``(t, E)``)."""
        pick = lambda a: np.asarray(a)[index]  # noqa: E731
        return CodecParams(
            pick(self.beta), self.power, pick(self.mu_plus), pick(self.var_plus), pick(self.alpha_plus),
            pick(self.mu_minus), pick(self.var_minus), pick(self.alpha_minus), pick(self.mu_zero),
        )


@dataclass(frozen=True)
class ChannelOutput:
    """What the receiver sees: noisy channel symbol (None when silent) and the side symbol."""

    y_tilde: float | None
    s: Side

    def __post_init__(self):
        if (self.s is Side.SILENT) != (self.y_tilde is None):
            raise ValueError("a silent step carries no channel symbol, and only a silent step")


def decide(x, beta, budget_remaining=None):
    """True where the sensor transmits: budget left and ``|x| > beta``.

    ``budget_remaining=None`` means no cap (soft constraint).
    """
    go = np.abs(x) > beta
    if budget_remaining is not None:
        go = go & (np.asarray(budget_remaining) > 0)
    return go if np.ndim(go) else bool(go)


def side(x):
    """Sign symbol of a transmitted sample (+1 or -1); 0 is mapped to +1."""
    return np.where(np.asarray(x) < 0, -1, 1) if np.ndim(x) else (Side.MINUS if x < 0 else Side.PLUS)


def _branch(s, params: CodecParams):
    plus = np.asarray(s) > 0
    alpha = np.where(plus, params.alpha_plus, params.alpha_minus)
    mu = np.where(plus, params.mu_plus, params.mu_minus)
    return alpha, mu


def encode(x, params: CodecParams):
    """Channel input ``s * alpha_s * (x - mu_s)`` with ``s`` the sign of ``x``.

    Raises if any ``|x| <= beta``: those samples are never sent.
    """
    if np.any(np.abs(x) <= params.beta):
        raise ValueError("encode called on a sample inside the silent region |x| <= beta")
    s = np.where(np.asarray(x) < 0, -1.0, 1.0)
    alpha, mu = _branch(s, params)
    y = s * alpha * (x - mu)
    return float(y) if np.ndim(y) == 0 else y


def transmit(y, v):
    """Additive channel: ``y + v``."""
    return y + v


def decode(out: ChannelOutput, params: CodecParams, gamma: float) -> float:
    """Estimate of ``x`` from one received step."""
    if out.s is Side.SILENT:
        return float(params.mu_zero)
    return float(decode_arrays(np.float64(out.y_tilde), int(out.s), params, gamma))


def decode_arrays(y_tilde, s, params: CodecParams, gamma: float):
    """Vector decoder; ``s`` holds +1, -1 or 0 (silent).  Silent entries ignore ``y_tilde``."""
    s = np.asarray(s)
    alpha, mu = _branch(s, params)
    shrink = gamma / (gamma + 1.0)
    with np.errstate(invalid="ignore"):
        sent = s * (shrink / alpha) * np.where(s != 0, y_tilde, 0.0) + mu
    return np.where(s != 0, sent, params.mu_zero)
