"""Tree-based particle smoothing for hidden Markov models."""

from .baselines import bootstrap_pf as bootstrap_pf
from .baselines import ffbsi as ffbsi
from .baselines import ffbsm as ffbsm
from .baselines import kalman_filter as kalman_filter
from .baselines import rts_smoother as rts_smoother
from .experiment import ExperimentConfig as ExperimentConfig
from .experiment import run_experiment as run_experiment
from .model import ModelSpec as ModelSpec
from .model import ObservationSeq as ObservationSeq
from .model import linear_gaussian_model as linear_gaussian_model
from .model import nonlinear_benchmark_model as nonlinear_benchmark_model
from .oracle import discretize as discretize
from .oracle import forward_backward as forward_backward
from .tps import TargetFamily as TargetFamily
from .tps import Variant as Variant
from .tps import tps_run as tps_run
