"""Epidemic control on partially observed contact networks.

A hierarchical controller decides each step whether to trace contacts of a
few nodes or to quarantine a few nodes, using per-node abnormal-probability
estimates maintained from symptom onsets.
"""

from .netgen import ContactNetwork, GraphGenConfig, generate_scale_free
from .seir import EpidemicParams, Health
from .belief import BeliefState, one_step_update
from .env import EXPLORE, REMOVE, EpidemicControlEnv
from .agents import ExploreAgent, PolicyAgent, removal_scores, select_remove_nodes
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"
