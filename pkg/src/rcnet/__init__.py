"""Reverse feature pyramid + cross-scale shift neck on a taped float64 core."""

from .config import NeckConfig, desk_config, paper_width
from .csn import csn_forward, csn_params, rcnet_forward
from .fixtures import extend_stem, synth_backbone
from .fpn import fpn_forward, fpn_params
from .params import ParamStore
from .pyramid import FeaturePyramid, load_pyramid, pyramid_digest, save_pyramid
from .revfp import revfp_forward, revfp_params
from .tensor import Tape, Tensor, backward

__all__ = [
    "NeckConfig",
    "desk_config",
    "paper_width",
    "FeaturePyramid",
    "ParamStore",
    "Tensor",
    "Tape",
    "backward",
    "synth_backbone",
    "extend_stem",
    "save_pyramid",
    "load_pyramid",
    "pyramid_digest",
    "fpn_params",
    "fpn_forward",
    "revfp_params",
    "revfp_forward",
    "csn_params",
    "csn_forward",
    "rcnet_forward",
]

__version__ = "0.1.0"
