"""Optimal threshold scheduling for remote estimation over an additive-noise channel."""

from .codec import ChannelOutput, ChannelSpec, CodecParams, Side, decide, decode, encode, side, transmit
from .dp import (
    CostTable,
    HorizonSpec,
    PolicyTable,
    budget_sweep,
    laplace_closed_form_table,
    laplace_minimal_error,
    opportunity_cost,
    opportunity_threshold,
    solve_dp,
)
from .oracles import pd_derivative_check, soft_cost_scan, symmetric_optimality_scan, three_level_distortion
from .sim import EpisodeConfig, MonteCarloReport, SimTrace, budget_trajectory_sample, monte_carlo, run_episode
from .sources import Gaussian, Laplace, NumericSource, SourceModel, Uniform, make_source
from .stage import StageProblem, ThresholdSolution, cost_derivative, one_stage_cost, solve_threshold

__version__ = "0.1.0"
