"""Bayesian consensus filtering on gridded probability densities.

Each agent runs a grid Bayes filter, exchanges measurements with its
neighbours, then pools densities with them for a few rounds using either
the arithmetic (LinOP) or the geometric (LogOP) opinion pool over a
balanced, strongly connected digraph.
"""

from .agents import AgentState, StepResult
from .bayes import (
    GaussianLikelihood,
    LikelihoodModel,
    Measurement,
    TabularLikelihood,
    TransitionKernel,
    mutual_information_gain,
    predict,
    update_with_exchange,
)
from .comm import (
    ChannelConfig,
    GaussianMixture,
    corrupt,
    decode_grid,
    em_fit,
    encode_grid,
    fit_gaussian_sum,
    make_channel,
    particle_reconstruct,
    transmit,
)
from .consensus import (
    ConsensusConfig,
    Pool,
    brute_force_kl_minimizer,
    consensual_pdf,
    consensus_round,
    disagreement,
    max_sigma_for_n_loop,
    plan_n_loop,
    run_consensus,
)
from .density import (
    GridDensity,
    StateGrid,
    arithmetic_pool,
    entropy,
    geometric_pool,
    kl_divergence,
    l1_distance,
    log_pool,
    normalize,
    tv_distance,
)
from .errors import BCFError
from .hierarchy import TrackingPartition, hierarchical_consensual_pdf, hierarchical_round, run_hbcf_step
from .network import (
    Digraph,
    WeightMatrix,
    make_balanced_weights,
    make_hierarchical_weights,
    second_largest_singular_value,
    stationary_distribution,
    validate_hierarchical,
)

__version__ = "0.1.0"
