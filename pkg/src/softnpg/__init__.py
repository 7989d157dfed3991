"""Exact entropy-regularized natural policy gradient on finite MDPs."""

from .mdp import FiniteMdp, MdpError, chain_mdp, load_mdp, random_mdp, save_mdp, validate
from .policy import (FeatureMap, LogLinearPolicy, onehot_features, policy_from,
                     random_features)
from .dp import EvalResult, VisitationResult, evaluate, soft_optimal, value_of_mu, visitation
from .npg import RunConfig, RunTrace, auto_step_size, reference_optimum, run

__version__ = "0.1.0"
