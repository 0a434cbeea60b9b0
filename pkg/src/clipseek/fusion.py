"""State processing: query encoding, window feature pooling, and fusion.

Two fusion variants share the same query encoder:
  * gated — a sigmoid gate computed from the query multiplies the pooled
    window features elementwise (the default).
  * concat — a sigmoid self-gate on the pooled features, concatenated with
    the query encoding and projected back to feature dimension (baseline).
"""

from __future__ import annotations

import numpy as np

from . import ndcore as nd
from .data import FeatureVideo
from .env import Window, units_in_window
from .ndcore import ParamSet, Tensor

GATED = "gated"
CONCAT = "concat"
VARIANTS = (GATED, CONCAT)


def init_fusion_params(params: ParamSet, rng: np.random.Generator, *,
                       vocab_size: int, embed_dim: int, gru_hidden: int,
                       feature_dim: int, variant: str = GATED) -> None:
    """Register embedding, GRU, and fusion-head parameters under ``fusion.``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown fusion variant {variant!r}")
    params.add("fusion.embed", nd.init_matrix(rng, vocab_size, embed_dim))
    h, e = gru_hidden, embed_dim
    for gate in ("z", "r", "n"):
        params.add(f"fusion.gru.W_{gate}", nd.init_matrix(rng, h, e))
        params.add(f"fusion.gru.U_{gate}", nd.init_matrix(rng, h, h))
        params.add(f"fusion.gru.b_{gate}", np.zeros(h))
    if variant == GATED:
        params.add("fusion.gate.W", nd.init_matrix(rng, feature_dim, h))
        params.add("fusion.gate.b", np.zeros(feature_dim))
    else:
        params.add("fusion.selfgate.W", nd.init_matrix(rng, feature_dim, feature_dim))
        params.add("fusion.selfgate.b", np.zeros(feature_dim))
        params.add("fusion.proj.W", nd.init_matrix(rng, feature_dim, feature_dim + h))
        params.add("fusion.proj.b", np.zeros(feature_dim))


def _gru_params(params: ParamSet) -> dict[str, Tensor]:
    return {f"{kind}_{gate}": params[f"fusion.gru.{kind}_{gate}"]
            for kind in ("W", "U", "b") for gate in ("z", "r", "n")}


def encode_query(token_ids: list[int], params: ParamSet) -> Tensor:
    """Embed tokens and run the GRU left to right; returns the final state.

    Out-of-range ids fall back to the reserved unknown id 0.
    """
    if not token_ids:
        raise ValueError("encode_query: empty token sequence")
    embed = params["fusion.embed"]
    vocab_size = embed.shape[0]
    hidden = params["fusion.gru.b_z"].shape[0]
    gru = _gru_params(params)
    h = nd.constant(np.zeros(hidden))
    for tid in token_ids:
        if not 0 <= tid < vocab_size:
            tid = 0
        onehot = np.zeros(vocab_size)
        onehot[tid] = 1.0
        x_t = nd.matmul(nd.constant(onehot), embed)
        h = nd.gru_cell(x_t, h, gru)
    return h


def pool_window_features(video: FeatureVideo, window: Window) -> Tensor:
    """Mean of the feature rows of every unit intersecting the window."""
    units = units_in_window(window, video.unit_len_frames, video.num_units)
    if not units:
        raise ValueError(f"window [{window.start}, {window.end}) overlaps no units")
    pooled = video.features[units].astype(np.float64).mean(axis=0)
    return nd.constant(pooled)


def gated_fuse(x_m: Tensor, x_l: Tensor, params: ParamSet) -> Tensor:
    """att = sigmoid(W x_l + b); state = att * x_m."""
    att = nd.sigmoid(nd.linear(params["fusion.gate.W"], x_l,
                               params["fusion.gate.b"]))
    return nd.mul(att, x_m)


def concat_fuse(x_m: Tensor, x_l: Tensor, params: ParamSet) -> Tensor:
    """Self-gated features concatenated with the query, projected to dim(x_m)."""
    gate = nd.sigmoid(nd.linear(params["fusion.selfgate.W"], x_m,
                                params["fusion.selfgate.b"]))
    gated = nd.mul(gate, x_m)
    joint = nd.concat(gated, x_l)
    return nd.linear(params["fusion.proj.W"], joint, params["fusion.proj.b"])


def fuse(variant: str, x_m: Tensor, x_l: Tensor, params: ParamSet) -> Tensor:
    if variant == GATED:
        return gated_fuse(x_m, x_l, params)
    if variant == CONCAT:
        return concat_fuse(x_m, x_l, params)
    raise ValueError(f"unknown fusion variant {variant!r}")
