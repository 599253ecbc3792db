"""Reference top-down pyramid used as the structural contrast.

Information flows one way: each output is built from its own stage plus
the level above, so perturbing a low stage can never reach a higher
output. Levels above 5 carry the stem features through the same top-down
chain but own no extra convolutions.
"""

from __future__ import annotations

from . import counting
from .config import NeckConfig
from .fixtures import stem_params
from .params import ParamStore
from .pyramid import FeaturePyramid
from .rng import fold_seed
from .tensor import add, bilinear_upsample_x2, conv2d


def fpn_params(cfg: NeckConfig) -> ParamStore:
    store = ParamStore(fold_seed(cfg.seed, "fpn"))
    stem_params(store, cfg)
    for i in cfg.stage_levels():
        store.conv(f"lateral/{i}", cfg.d, cfg.stage_channels(i), 1, 1)
        store.conv(f"output/{i}", cfg.d, cfg.d, 3, 3)
    return store


def fpn_forward(C: FeaturePyramid, params: ParamStore, cfg: NeckConfig) -> FeaturePyramid:
    """Top-down pass: lateral 1x1, add upsampled higher output, 3x3 conv."""
    for i in cfg.levels():
        if i not in C:
            raise ValueError(f"fpn_forward: input pyramid is missing level {i}")
        if C[i].shape[2:] != cfg.resolution(i):
            raise ValueError(
                f"fpn_forward: level {i} resolution {C[i].shape[2:]} != {cfg.resolution(i)}"
            )
    out: dict = {}
    staged = cfg.stage_levels()
    for i in reversed(cfg.levels()):
        if i in staged:
            with counting.scope(f"lateral/{i}"):
                x = conv2d(C[i], params[f"lateral/{i}/weight"], params[f"lateral/{i}/bias"])
        else:
            x = C[i]  # stem level, already at width d; no convs of its own
        if i < cfg.l_max:
            x = add(x, bilinear_upsample_x2(out[i + 1]))
        if i in staged:
            with counting.scope(f"output/{i}"):
                x = conv2d(
                    x, params[f"output/{i}/weight"], params[f"output/{i}/bias"], padding=1
                )
        out[i] = x
    return FeaturePyramid(out)
