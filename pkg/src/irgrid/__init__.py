"""Static IR-drop analysis toolkit.

Three pillars: an exact sparse solver over PDN netlists that produces
ground-truth drop maps, an attention-gated U-Net that predicts those
maps from a 12-channel image featurization, and a gradient-saliency
explainer that turns predictions into targeted grid-upsizing edits.
"""

__version__ = "0.1.0"

from .errors import (
    FormatError,
    InputError,
    IrgridError,
    ParseError,
    SolveError,
    TrainingError,
    ValidationFailure,
)
from .netlist import PdnNetlist, parse_netlist, validate, write_netlist
from .solver import IrDropMap, build_system, ir_drop_map, solve, solve_netlist
from .features import FeatureStack, TestCase, augment, featurize
from .model import AttUNet, AttUNetConfig, load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    evaluate,
    finetune,
    pretrain,
    recalibrate_batchnorm,
)
from .explain import baseline_uniform, optimize, saliency, select_hotspots

__all__ = [
    "AttUNet", "AttUNetConfig", "FeatureStack", "FormatError", "InputError",
    "IrDropMap", "IrgridError", "ParseError", "PdnNetlist", "SolveError",
    "TestCase", "TrainConfig", "TrainingError", "ValidationFailure",
    "augment", "baseline_uniform", "build_system", "evaluate", "featurize",
    "finetune", "ir_drop_map", "load_checkpoint", "optimize", "parse_netlist",
    "pretrain", "recalibrate_batchnorm", "saliency", "save_checkpoint",
    "select_hotspots", "solve", "solve_netlist", "validate", "write_netlist",
]
