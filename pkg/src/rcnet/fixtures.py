"""Synthetic backbone pyramids and the stride-2 stem that extends them.

The backbone stand-in emits standard-normal features per stage from the
documented seeded generator; the stem then grows levels 6 (and 7) the way
single-stage detectors conventionally do: a stride-2 3x3 conv on C5, and
another on relu(C6).
"""

from __future__ import annotations

from . import counting
from .config import NeckConfig
from .params import ParamStore
from .pyramid import FeaturePyramid
from .rng import SplitMix64, fold_seed
from .tensor import Tensor, conv2d, pad2d, relu


def synth_backbone(cfg: NeckConfig) -> FeaturePyramid:
    """Seeded stand-in for backbone stages l_min..5; pure in the config."""
    tensors = {}
    for level in cfg.stage_levels():
        h, w = cfg.resolution(level)
        shape = (cfg.batch, cfg.stage_channels(level), h, w)
        stream = SplitMix64(fold_seed(cfg.seed, f"backbone/C{level}"))
        tensors[level] = Tensor(stream.standard_normal(shape))
    return FeaturePyramid(tensors)


def stem_params(store: ParamStore, cfg: NeckConfig) -> ParamStore:
    """Allocate the stem convs (one per level above 5) in `store`.

    No-op for augmented-backbone configs, which have no stem.
    """
    if not cfg.has_stem:
        return store
    store.conv("stem/c6", cfg.d, cfg.stage_channels(5), 3, 3)
    if cfg.l_max >= 7:
        store.conv("stem/c7", cfg.d, cfg.d, 3, 3)
    return store


def _stride2_conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    # pad 1 on top/left only: with an even input extent this is the exact
    # half-resolution output a symmetric-pad floor-convolution would produce
    return conv2d(pad2d(x, 1, 0, 1, 0), weight, bias, stride=2, padding=0)


def extend_stem(C: FeaturePyramid, params: ParamStore, cfg: NeckConfig) -> FeaturePyramid:
    """Add levels 6..l_max on top of a backbone pyramid ending at level 5."""
    if C.levels[-1] != 5:
        raise ValueError(f"extend_stem: highest present level is {C.levels[-1]}, expected 5")
    for level in range(6, cfg.l_max + 1):
        if level in C:
            raise ValueError(f"extend_stem: level {level} already present")
    out = C
    with counting.scope("stem/c6"):
        c6 = _stride2_conv(C[5], params["stem/c6/weight"], params["stem/c6/bias"])
    out = out.with_level(6, c6)
    if cfg.l_max >= 7:
        with counting.scope("stem/c7"):
            c7 = _stride2_conv(relu(c6), params["stem/c7/weight"], params["stem/c7/bias"])
        out = out.with_level(7, c7)
    return out


def prepare_inputs(cfg: NeckConfig, params: ParamStore) -> FeaturePyramid:
    """Complete neck input: synthetic stages plus the stem where configured."""
    C = synth_backbone(cfg)
    return extend_stem(C, params, cfg) if cfg.has_stem else C
