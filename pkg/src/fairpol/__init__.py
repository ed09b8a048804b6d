"""Fair off-policy learning: policy scores, adversarial action-fair
representations, envy-free and max-min policy objectives, and analytic
checks."""

from .data import CsvSchema, Dataset, SimConfig, SimOracle, load_csv, simulate, split, standardize, write_csv
from .errors import FairPolError
from .fairrep import RepHyper, probe_accuracy, train_fair_representation
from .nn import AdamState, Mlp, adam_step
from .nuisance import NuisanceEstimates, NuisanceHyper, fit_outcome_model, fit_propensity, oracle_nuisance
from .policy import (IdentityFrontEnd, Objective, PolicyHyper, TrainedPolicy, envy_free_objective,
                     evaluate_policy, maxmin_objective, train_policy)
from .scores import ValueReport, conditional_values, empirical_value, score
from .theory import (TABLE4, TABLE5, BoundInputs, ToyProblem, action_fairness_gap_sim, bound_penalty,
                     brute_force_toy_search, check_lemma1, check_lemma2, materialize_toy, spearman_rank,
                     toy_conditional_values)

__version__ = "0.1.0"
