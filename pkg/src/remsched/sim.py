"""Monte-Carlo closed loop: source, threshold decision, codec, noisy channel, estimator.

Randomness is assigned per episode.  Episode ``i`` under master seed ``s``
uses a Philox stream keyed by ``(s << 64) | i`` and draws the ``T`` source
samples first, then ``T`` noise samples (noise is drawn for every step,
used or not).  Any chunking or worker count therefore reproduces the same
episodes, and the scalar ``run_episode`` replays exactly what the
vectorized ``monte_carlo`` computed.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec import ChannelOutput, ChannelSpec, CodecParams, Side, decide, decode, decode_arrays, encode, side, transmit
from .dp import HorizonSpec, PolicyTable, solve_dp
from .sources import SourceModel
from .stage import StageProblem, solve_threshold

CHUNK_EPISODES = 2000
TRACE_HEADER = ("t", "x", "u", "s", "y", "v", "y_tilde", "x_hat", "E", "stage_cost")
UNBOUNDED = "unbounded"
BUDGET_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class EpisodeConfig:
    """One closed-loop experiment.

    Exactly one of ``budget`` (hard constraint, ``policy`` is a
    ``PolicyTable``) and ``comm_cost`` (soft constraint, ``policy`` is a
    scalar threshold) is set.  A policy table solved for a larger budget
    serves any smaller one.
    """

    horizon: int
    source: SourceModel
    channel: ChannelSpec
    policy: PolicyTable | float
    seed: int = 0
    budget: int | None = None
    comm_cost: float | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if (self.budget is None) == (self.comm_cost is None):
            raise ValueError("set exactly one of budget (hard constraint) or comm_cost (soft constraint)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.hard:
            if not isinstance(self.policy, PolicyTable):
                raise TypeError("a hard-constraint run needs a PolicyTable")
            if not 0 <= self.budget <= self.horizon:
                raise ValueError(f"budget must lie in 0..{self.horizon}, got {self.budget}")
            if self.policy.horizon != self.horizon or self.policy.budget < self.budget:
                raise ValueError(
                    f"policy table covers T={self.policy.horizon}, N<={self.policy.budget}; "
                    f"run needs T={self.horizon}, N={self.budget}"
                )
        else:
            if isinstance(self.policy, PolicyTable):
                raise TypeError("a soft-constraint run needs a scalar threshold")
            if not self.comm_cost >= 0:
                raise ValueError(f"comm_cost must be >= 0, got {self.comm_cost}")

    @property
    def hard(self) -> bool:
        return self.budget is not None

    @property
    def soft_cost(self) -> float:
        return 0.0 if self.hard else float(self.comm_cost)


def hard_config(source, channel, horizon, budget, seed=0, policy=None) -> EpisodeConfig:
    """Hard-constraint config; solves the DP when no policy table is supplied."""
    if policy is None:
        _, policy = solve_dp(HorizonSpec(horizon, budget, source, channel.gamma))
    return EpisodeConfig(horizon, source, channel, policy, seed, budget=budget)


def soft_config(source, channel, horizon, comm_cost, seed=0, beta=None) -> EpisodeConfig:
    """Soft-constraint config; uses the optimal one-stage threshold unless ``beta`` is given."""
    if beta is None:
        beta = solve_threshold(StageProblem(source, channel.gamma, comm_cost)).beta_star
    return EpisodeConfig(horizon, source, channel, float(beta), seed, comm_cost=comm_cost)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Counter-based stream for one episode."""
    return np.random.Generator(np.random.Philox(key=(seed << 64) | episode))


def _draw(cfg: EpisodeConfig, rng: np.random.Generator):
    x = np.asarray(cfg.source.sample(rng, cfg.horizon), float)
    v = np.asarray(cfg.channel.sample_noise(rng, cfg.horizon), float)
    return x, v


@dataclass
class SimTrace:
    """Per-step record of one episode; channel fields are NaN on silent steps.

    ``E[t-1]`` is the budget before step ``t``; ``budget_path`` appends the
    budget left after the last step.  Soft runs carry no budget.
    """

    x: np.ndarray
    u: np.ndarray
    s: list
    y: np.ndarray
    v: np.ndarray
    y_tilde: np.ndarray
    x_hat: np.ndarray
    E: np.ndarray | None
    E_final: int | None
    stage_cost: np.ndarray

    @property
    def total_cost(self) -> float:
        return float(self.stage_cost.sum())

    @property
    def transmissions(self) -> int:
        return int(self.u.sum())

    @property
    def budget_path(self) -> np.ndarray:
        if self.E is None:
            raise ValueError("soft-constraint traces have no budget")
        return np.append(self.E, self.E_final)

    def rows(self):
        for i in range(len(self.x)):
            sent = bool(self.u[i])
            opt = lambda a: repr(float(a[i])) if sent else ""  # noqa: E731
            yield (
                i + 1,
                repr(float(self.x[i])),
                int(self.u[i]),
                self.s[i].label,
                opt(self.y),
                opt(self.v),
                opt(self.y_tilde),
                repr(float(self.x_hat[i])),
                UNBOUNDED if self.E is None else int(self.E[i]),
                repr(float(self.stage_cost[i])),
            )

    def to_csv(self, handle=None) -> str:
        """Write the trace as CSV; returns the text when no handle is given."""
        buf = io.StringIO() if handle is None else handle
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        writer.writerows(self.rows())
        return buf.getvalue() if handle is None else ""


def run_episode(cfg: EpisodeConfig, rng: np.random.Generator | None = None, episode: int = 0) -> SimTrace:
    """Step-by-step execution of one episode.

    Without an explicit ``rng`` the episode's own stream is used, so the
    result matches episode ``episode`` of ``monte_carlo``.
    """
    rng = episode_rng(cfg.seed, episode) if rng is None else rng
    x, v = _draw(cfg, rng)
    T = cfg.horizon
    gamma = cfg.channel.gamma
    soft_params = None if cfg.hard else CodecParams.from_source(cfg.source, cfg.policy, cfg.channel.power)
    E = cfg.budget
    nan = math.nan
    out = {k: np.full(T, nan) for k in ("y", "v", "y_tilde", "x_hat", "stage_cost")}
    u = np.zeros(T, dtype=np.int64)
    s_log, E_log = [], []
    for t in range(1, T + 1):
        xt = float(x[t - 1])
        if cfg.hard:
            E_log.append(E)
            beta = cfg.policy(t, E)
            params = CodecParams.from_source(cfg.source, beta, cfg.channel.power) if E > 0 else None
            go = E > 0 and decide(xt, beta, E)
        else:
            params = soft_params
            go = decide(xt, cfg.policy)
        if go:
            y = encode(xt, params)
            yt = transmit(y, float(v[t - 1]))
            msg = ChannelOutput(yt, side(xt))
            out["y"][t - 1], out["v"][t - 1], out["y_tilde"][t - 1] = y, v[t - 1], yt
        else:
            msg = ChannelOutput(None, Side.SILENT)
        xh = decode(msg, params, gamma) if params is not None else 0.0
        u[t - 1] = int(go)
        s_log.append(msg.s)
        out["x_hat"][t - 1] = xh
        out["stage_cost"][t - 1] = cfg.soft_cost * go + (xt - xh) ** 2
        if cfg.hard:
            E -= int(go)
    if cfg.hard:
        assert u.sum() <= cfg.budget, "hard constraint violated"
    return SimTrace(
        x, u, s_log, out["y"], out["v"], out["y_tilde"], out["x_hat"],
        np.array(E_log, dtype=np.int64) if cfg.hard else None,
        E if cfg.hard else None,
        out["stage_cost"],
    )


def budget_trajectory_sample(cfg: EpisodeConfig, rng: np.random.Generator | None = None, episode: int = 0) -> np.ndarray:
    """Budget left before each step, E_1..E_T, followed by the budget after step T."""
    if not cfg.hard:
        raise ValueError("budget trajectories need a hard-constraint config")
    return run_episode(cfg, rng, episode).budget_path


@dataclass
class Accumulator:
    """Mergeable running sums over episodes."""

    count: int = 0
    cost_sum: float = 0.0
    cost_sumsq: float = 0.0
    tx_sum: float = 0.0
    tx_sumsq: float = 0.0
    tx_max: int = 0
    first_sum: float = 0.0
    first_sumsq: float = 0.0
    second_sum: float = 0.0
    second_sumsq: float = 0.0
    budget_hist: np.ndarray | None = None  # (T+1, N+1) counts of E_t
    stage_sum: np.ndarray | None = None  # (T,) per-step cost sums

    def merge(self, other: "Accumulator") -> "Accumulator":
        add = lambda a, b: b if a is None else (a if b is None else a + b)  # noqa: E731
        return Accumulator(
            self.count + other.count,
            self.cost_sum + other.cost_sum,
            self.cost_sumsq + other.cost_sumsq,
            self.tx_sum + other.tx_sum,
            self.tx_sumsq + other.tx_sumsq,
            max(self.tx_max, other.tx_max),
            self.first_sum + other.first_sum,
            self.first_sumsq + other.first_sumsq,
            self.second_sum + other.second_sum,
            self.second_sumsq + other.second_sumsq,
            add(self.budget_hist, other.budget_hist),
            add(self.stage_sum, other.stage_sum),
        )


def _mean_se(total, sumsq, n):
    mean = total / n
    if n < 2:
        return mean, math.nan
    var = max(sumsq - n * mean * mean, 0.0) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass
class MonteCarloReport:
    episodes: int
    mean_total_cost: float
    std_error: float
    mean_transmissions_used: float
    transmissions_std_error: float
    max_transmissions_used: int
    first_half_mean: float
    first_half_se: float
    second_half_mean: float
    second_half_se: float
    per_stage_mean: list
    budget_quantiles: dict = field(default_factory=dict)  # quantile -> E_1..E_{T+1}
    terminal_budget_positive: float | None = None  # share of episodes ending with budget left

    @classmethod
    def from_accumulator(cls, acc: Accumulator, budget: int | None) -> "MonteCarloReport":
        n = acc.count
        mean, se = _mean_se(acc.cost_sum, acc.cost_sumsq, n)
        f_mean, f_se = _mean_se(acc.first_sum, acc.first_sumsq, n)
        s_mean, s_se = _mean_se(acc.second_sum, acc.second_sumsq, n)
        tx_mean, tx_se = _mean_se(acc.tx_sum, acc.tx_sumsq, n)
        quantiles, positive = {}, None
        if acc.budget_hist is not None:
            cdf = np.cumsum(acc.budget_hist, axis=1) / n
            for q in BUDGET_QUANTILES:
                quantiles[str(q)] = [int(np.argmax(row >= q - 1e-12)) for row in cdf]
            positive = float(1.0 - acc.budget_hist[-1, 0] / n)
        return cls(
            n, mean, se, tx_mean, tx_se, acc.tx_max, f_mean, f_se, s_mean, s_se,
            (acc.stage_sum / n).tolist(), quantiles, positive,
        )

    def split_half_gap(self) -> tuple[float, float]:
        """(|first - second| per-step mean gap, combined standard error)."""
        return abs(self.first_half_mean - self.second_half_mean), math.hypot(self.first_half_se, self.second_half_se)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _simulate_chunk(cfg: EpisodeConfig, start: int, stop: int) -> Accumulator:
    T = cfg.horizon
    n = stop - start
    X = np.empty((n, T))
    V = np.empty((n, T))
    for i, ep in enumerate(range(start, stop)):
        X[i], V[i] = _draw(cfg, episode_rng(cfg.seed, ep))

    gamma, power = cfg.channel.gamma, cfg.channel.power
    cost = np.zeros((n, T))
    used = np.zeros(n, dtype=np.int64)
    hist = None
    if cfg.hard:
        N = cfg.budget
        table = CodecParams.from_source(cfg.source, cfg.policy.beta[:, : N + 1], power)
        E = np.full(n, N, dtype=np.int64)
        hist = np.zeros((T + 1, N + 1), dtype=np.int64)
    else:
        params = CodecParams.from_source(cfg.source, cfg.policy, power)
    for t in range(T):
        x = X[:, t]
        if cfg.hard:
            hist[t] += np.bincount(E, minlength=N + 1)
            params = table.take((t, E))
            go = decide(x, params.beta, E)
        else:
            go = decide(x, params.beta)
        s = np.where(go, np.where(x < 0, -1, 1), 0)
        alpha = np.where(s > 0, params.alpha_plus, params.alpha_minus)
        mu = np.where(s > 0, params.mu_plus, params.mu_minus)
        with np.errstate(invalid="ignore"):
            y = np.where(go, s * alpha * (x - mu), 0.0)
        x_hat = decode_arrays(transmit(y, V[:, t]), s, params, gamma)
        cost[:, t] = cfg.soft_cost * go + (x - x_hat) ** 2
        used += go
        if cfg.hard:
            E -= go
    if cfg.hard:
        hist[T] += np.bincount(E, minlength=N + 1)
        assert np.all(used <= N), "hard constraint violated"

    totals = cost.sum(axis=1)
    half = T // 2
    # per-step averages over each half; the middle step of an odd horizon is left out
    first = cost[:, :half].mean(axis=1) if half else np.zeros(n)
    second = cost[:, T - half:].mean(axis=1) if half else np.zeros(n)
    return Accumulator(
        n, float(totals.sum()), float((totals**2).sum()), float(used.sum()), float((used**2).sum()),
        int(used.max(initial=0)),
        float(first.sum()), float((first**2).sum()), float(second.sum()), float((second**2).sum()),
        hist, cost.sum(axis=0),
    )


def monte_carlo(cfg: EpisodeConfig, episodes: int, workers: int = 1, chunk: int = CHUNK_EPISODES) -> MonteCarloReport:
    """Vectorized simulation of ``episodes`` episodes, streamed in fixed chunks.

    Chunks are merged in episode order, so the report does not depend on
    ``workers``.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    bounds = [(a, min(a + chunk, episodes)) for a in range(0, episodes, chunk)]
    workers = max(1, min(workers or os.cpu_count() or 1, len(bounds)))
    if workers == 1:
        parts = [_simulate_chunk(cfg, a, b) for a, b in bounds]
    else:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate_chunk, [cfg] * len(bounds), *zip(*bounds)))
    acc = Accumulator()
    for part in parts:
        acc = acc.merge(part)
    return MonteCarloReport.from_accumulator(acc, cfg.budget)


@dataclass(frozen=True)
class CodecLawReport:
    """Empirical codec statistics at a fixed threshold, with their analytic targets."""

    transmissions: int
    power_empirical: float
    power_target: float
    mse_plus: float
    mse_minus: float
    mse_transmit_target: float
    mse_silent: float
    mse_silent_target: float
    bias_plus: float
    bias_minus: float

    def relative_errors(self) -> dict:
        rel = lambda a, b: abs(a - b) / abs(b)  # noqa: E731
        return {
            "power": rel(self.power_empirical, self.power_target),
            "mse_plus": rel(self.mse_plus, self.mse_transmit_target),
            "mse_minus": rel(self.mse_minus, self.mse_transmit_target),
            "mse_silent": rel(self.mse_silent, self.mse_silent_target),
        }


def codec_law_check(source: SourceModel, channel: ChannelSpec, beta: float, samples: int, seed: int = 0) -> CodecLawReport:
    """Push ``samples`` i.i.d. source draws through decide/encode/channel/decode."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = np.asarray(source.sample(rng, samples), float)
    v = np.asarray(channel.sample_noise(rng, samples), float)
    params = CodecParams.from_source(source, beta, channel.power)
    go = decide(x, beta)
    xs = x[go]
    y = encode(xs, params)
    s = side(xs)
    x_hat_sent = decode_arrays(transmit(y, v[go]), s, params, channel.gamma)
    x_hat_silent = decode_arrays(np.zeros((~go).sum()), np.zeros((~go).sum(), dtype=int), params, channel.gamma)
    err = xs - x_hat_sent
    plus, minus = s > 0, s < 0
    return CodecLawReport(
        int(go.sum()),
        float(np.mean(y**2)),
        channel.power,
        float(np.mean(err[plus] ** 2)),
        float(np.mean(err[minus] ** 2)),
        float(params.var_plus) / (channel.gamma + 1.0),
        float(np.mean((x[~go] - x_hat_silent) ** 2)),
        float(source.truncated_var(-beta, beta)),
        float(np.mean(x_hat_sent[plus] - xs[plus])),
        float(np.mean(x_hat_sent[minus] - xs[minus])),
    )
