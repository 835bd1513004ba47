"""
Tandem-head out-of-distribution detection for set-prediction detectors.

A shared trunk feeds two independently parameterized detection heads that
are trained to agree on matched queries and to disagree on unmatched ones.
The disagreement of their box predictions is the out-of-distribution score.
"""
__version__ = '0.1.0'

from .config import RunConfig, load_config
from .model import ModelConfig, TandemModel
from .losses import LossWeights
from .monitor import usm_image, usm_object
from .training import train
from .benchmarks import (evaluate_detection, run_ood_benchmark, run_novel_object_benchmark,
                         overhead_report, run_ablation)
from .checkpoint import save_checkpoint, load_checkpoint
from . import metrics, world
