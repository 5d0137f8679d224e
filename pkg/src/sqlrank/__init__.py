"""Listwise collaborative ranking with stochastic queuing."""

from .data import RatingsDataset, SplitSpec, binarize, load_ratings, split_train_test
from .metrics import (EvalReport, evaluate, ndcg_at_k, precision_at_k_explicit,
                      precision_at_k_implicit, rank_items)
from .objective import FactorModel, LossValue, grad_fast, grad_naive, loss
from .perm_model import (PermutationMatrix, log_permutation_probability, phi,
                         sample_permutation_exponential, stochastic_queue)
from .trainer import TrainConfig, TrainState, fit, init_model, train_epoch

__version__ = "0.1.0"
