"""Weakly-supervised segmentation with seeding, expansion and constrain-to-boundary losses."""

from .field import EPS_PROB, softmax, softmax_backward, resize_field
from .pooling import DecayParams, gap, gmp, gwrp, gwrp_backward, gwrp_forward, solve_decay
from .cues import UNLABELED, bg_cues, combine_cues, fg_cues, make_cues
from .densecrf import CrfConfig, mean_field, refine
from .losses import LossReport, constrain_loss, expansion_loss, sec_loss, seeding_loss
from .network import NetConfig, default_config, init_params
from .trainer import TrainConfig, TrainSample, lr_at, train
from .datagen import SynthConfig, generate
from .evaluation import EvalReport, aggregate, evaluate

__version__ = "0.1.0"
