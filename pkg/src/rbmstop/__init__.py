"""Binary RBMs trained with contrastive divergence, with exact and
neighborhood-based monitors for choosing when to stop training."""

from .datasets import Dataset, gen_bars_and_stripes, gen_labeled_shifter, gen_random, generate
from .errors import CapabilityError, ParseError, TrainingDiverged
from .exact import exact_gradient, log_likelihood, log_partition
from .metrics import TraceSeries, detect_stop, recon_error_prob, recon_error_sq
from .model import BinaryState, RbmParams, energy, free_energy_unnorm, gibbs_chain
from .neighborhood import build_index, log_xi, sample_neighborhood, sum_probs, xi
from .training import InitSpec, TrainConfig, cd_gradient, sgd_step, train

__version__ = "0.1.0"
