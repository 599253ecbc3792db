"""Reverse feature pyramid: one bottom-up pathway with local top-down links.

Each level i fuses three things: its own (lateralized) stage C_i, the next
stage C_{i+1} recalibrated by feature-guided upsampling, and the previous
output P_{i-1}. Fusion happens in two convex steps, each gated by a
per-sample scalar weight:

    pre:   P'_i = norm(conv(  w'*C_i + (1-w')*guided(C_{i+1})  ))
    post:  P_i  = norm(conv(  w *P'_i + (1-w )*maxpool(P_{i-1})  ))

with the boundary rules P'_top = lateral(C_top) (no pre-fusion above the
pyramid) and P_bottom = P'_bottom (nothing below to merge).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import counting
from .config import NeckConfig
from .fixtures import stem_params
from .params import ParamStore
from .pyramid import FeaturePyramid
from .rng import fold_seed
from .tensor import (
    Tensor,
    add,
    bilinear_upsample_x2,
    channel_norm,
    concat,
    conv2d,
    global_avg_pool,
    maxpool2d,
    mul,
    scale,
    sigmoid,
    softmax,
    sub,
)


@dataclass
class FguSite:
    weight: Tensor  # [1, 2d, 3, 3] spatial-logit conv
    bias: Tensor
    temperature: Tensor  # learnable scalar, initialized to 1


@dataclass
class FusionSite:
    head_weight: Tensor  # [1, 2d, 1, 1] scalar-weight head
    head_bias: Tensor
    conv_weight: Tensor  # [d, d, 3, 3]
    conv_bias: Tensor
    gamma: Tensor
    beta: Tensor


def revfp_params(cfg: NeckConfig) -> ParamStore:
    store = ParamStore(fold_seed(cfg.seed, "revfp"))
    stem_params(store, cfg)
    d = cfg.d
    for i in cfg.levels():
        store.conv(f"lateral/{i}", d, cfg.input_channels(i), 1, 1)
    for i in range(cfg.l_min, cfg.l_max):  # one guided-upsample site per level pair
        store.conv(f"fgu/{i}", 1, 2 * d, 3, 3)
        store.constant(f"fgu/{i}/temperature", (1,), 1.0)
    for i in range(cfg.l_min, cfg.l_max):  # pre-fusion runs everywhere but the top
        _fusion_site_params(store, f"pre/{i}", d)
    for i in range(cfg.l_min + 1, cfg.l_max + 1):  # post-fusion everywhere but the bottom
        _fusion_site_params(store, f"post/{i}", d)
    return store


def _fusion_site_params(store: ParamStore, name: str, d: int):
    store.conv(f"{name}/head", 1, 2 * d, 1, 1)
    store.conv(f"{name}/conv", d, d, 3, 3)
    store.norm(f"{name}/norm", d)


def fgu_site(store: ParamStore, i: int) -> FguSite:
    return FguSite(
        store[f"fgu/{i}/weight"], store[f"fgu/{i}/bias"], store[f"fgu/{i}/temperature"]
    )


def fusion_site(store: ParamStore, name: str) -> FusionSite:
    return FusionSite(
        store[f"{name}/head/weight"],
        store[f"{name}/head/bias"],
        store[f"{name}/conv/weight"],
        store[f"{name}/conv/bias"],
        store[f"{name}/norm/gamma"],
        store[f"{name}/norm/beta"],
    )


def feature_guided_upsample(
    c_fine: Tensor, c_coarse: Tensor, site: FguSite, trace: dict | None = None, key=None
) -> Tensor:
    """Upsample `c_coarse` 2x and reweight it by attention from `c_fine`.

    The spatial logits come from a 3x3 conv over concat(fine, upsampled),
    scaled by temperature/sqrt(d); softmax over all positions is rescaled
    by H*W so the weights average to exactly 1 and a constant-logit map
    leaves the upsampled features untouched.
    """
    n, d, h, w = c_fine.shape
    if c_coarse.shape != (n, d, h // 2, w // 2) or h % 2 or w % 2:
        raise ValueError(
            f"feature_guided_upsample: coarse shape {c_coarse.shape} is not half of {c_fine.shape}"
        )
    up = bilinear_upsample_x2(c_coarse)
    logits = conv2d(concat([c_fine, up], 1), site.weight, site.bias, padding=1)
    scaled = mul(logits, scale(site.temperature, d**-0.5))
    weights = scale(softmax(scaled, (2, 3)), float(h * w))
    if trace is not None:
        trace[("fgu_weights", key)] = weights
    return mul(up, weights)


def dynamic_weight(a: Tensor, b: Tensor, head_weight: Tensor, head_bias: Tensor) -> Tensor:
    """Per-sample scalar gate in (0,1) from pooled concat of both operands."""
    if a.shape != b.shape:
        raise ValueError(f"dynamic_weight: operand shapes {a.shape} != {b.shape}")
    pooled = global_avg_pool(concat([a, b], 1))
    return sigmoid(conv2d(pooled, head_weight, head_bias))


def _blend(current: Tensor, other: Tensor, w: Tensor) -> Tensor:
    return add(mul(w, current), mul(sub(Tensor(1.0), w), other))


def pre_fuse(
    c_i: Tensor, guided: Tensor, site: FusionSite, name: str = "pre",
    trace: dict | None = None, key=None,
) -> Tensor:
    with counting.scope(name):
        with counting.scope("head"):
            w = dynamic_weight(c_i, guided, site.head_weight, site.head_bias)
        blend = _blend(c_i, guided, w)
        if trace is not None:
            trace[("pre_blend", key)] = blend
            trace[("pre_operands", key)] = (c_i, guided)
        with counting.scope("conv"):
            out = conv2d(blend, site.conv_weight, site.conv_bias, padding=1)
        with counting.scope("norm"):
            return channel_norm(out, site.gamma, site.beta)


def post_fuse(
    p_prime: Tensor, p_prev: Tensor, site: FusionSite, name: str = "post",
    trace: dict | None = None, key=None,
) -> Tensor:
    n, d, h, w = p_prime.shape
    if p_prev.shape != (n, d, 2 * h, 2 * w):
        raise ValueError(
            f"post_fuse: previous level shape {p_prev.shape} is not twice {p_prime.shape}"
        )
    with counting.scope(name):
        down = maxpool2d(p_prev, 2, 2)
        with counting.scope("head"):
            wgt = dynamic_weight(p_prime, down, site.head_weight, site.head_bias)
        blend = _blend(p_prime, down, wgt)
        if trace is not None:
            trace[("post_blend", key)] = blend
            trace[("post_operands", key)] = (p_prime, down)
        with counting.scope("conv"):
            out = conv2d(blend, site.conv_weight, site.conv_bias, padding=1)
        with counting.scope("norm"):
            return channel_norm(out, site.gamma, site.beta)


def revfp_forward(
    C: FeaturePyramid, params: ParamStore, cfg: NeckConfig, trace: dict | None = None
) -> FeaturePyramid:
    """Bottom-up pass over all levels; see the module docstring for the rule."""
    for i in cfg.levels():
        if i not in C:
            raise ValueError(f"revfp_forward: input pyramid is missing level {i}")

    lateral = {}
    for i in cfg.levels():
        with counting.scope(f"lateral/{i}"):
            lateral[i] = conv2d(
                C[i], params[f"lateral/{i}/weight"], params[f"lateral/{i}/bias"]
            )

    out: dict = {}
    for i in cfg.levels():
        if i < cfg.l_max:
            with counting.scope(f"fgu/{i}"):
                guided = feature_guided_upsample(
                    lateral[i], lateral[i + 1], fgu_site(params, i), trace, i
                )
            p_prime = pre_fuse(
                lateral[i], guided, fusion_site(params, f"pre/{i}"), f"pre/{i}", trace, i
            )
        else:
            p_prime = lateral[i]  # top boundary: nothing above to pre-fuse
        if trace is not None:
            trace[("p_prime", i)] = p_prime
            trace[("lateral", i)] = lateral[i]
        if i == cfg.l_min:
            out[i] = p_prime  # bottom boundary: nothing below to post-fuse
        else:
            out[i] = post_fuse(
                p_prime, out[i - 1], fusion_site(params, f"post/{i}"), f"post/{i}", trace, i
            )
    return FeaturePyramid(out)
