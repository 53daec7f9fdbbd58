"""Independent float64 reference implementations written as plain loops and formulas."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from cmx_fusion.config import AblationConfig
    from cmx_fusion.fusion import FfmParams
    from cmx_fusion.network import DecoderParams, NetworkParams, StageParams
    from cmx_fusion.rectify import RectifyParams
    from cmx_fusion.types import Tensor


def f64(value: object) -> Tensor:
    return np.array(getattr(value, "value", value), dtype=np.float64)


def sigmoid(x: Tensor) -> Tensor:
    return 1 / (1 + np.exp(-x))


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def gelu(x: float) -> float:
    inner = math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)
    return 0.5 * x * (1 + math.tanh(inner))


def softmax_rows(x: Tensor) -> Tensor:
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i] - x[i].max())
        out[i] = e / e.sum()
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def linear(x: Tensor, w: object, b: object) -> Tensor:
    return matmul(f64(x), f64(w)) + f64(b)


def conv1x1(x: Tensor, w: object, b: object) -> Tensor:
    x, w, b = f64(x), f64(w), f64(b)
    height, width, _ = x.shape
    out = np.zeros((height, width, w.shape[1]))
    for i in range(height):
        for j in range(width):
            out[i, j] = x[i, j] @ w + b
    return out


def dwconv3x3(x: Tensor, w: object, b: object) -> Tensor:
    x, w, b = f64(x), f64(w), f64(b)
    height, width, channels = x.shape
    out = np.zeros_like(x)
    for i in range(height):
        for j in range(width):
            for c in range(channels):
                acc = b[c]
                for di in range(3):
                    for dj in range(3):
                        y, z = i + di - 1, j + dj - 1
                        if 0 <= y < height and 0 <= z < width:
                            acc += w[di, dj, c] * x[y, z, c]
                out[i, j, c] = acc
    return out


def global_pool(kind: str, x: Tensor) -> Tensor:
    x = f64(x)
    height, width, channels = x.shape
    out = np.zeros(channels)
    for c in range(channels):
        values = [x[i, j, c] for i in range(height) for j in range(width)]
        out[c] = sum(values) / len(values) if kind == "avg" else max(values)
    return out


def channel_weights(rgb: Tensor, x: Tensor, p: RectifyParams) -> tuple[Tensor, Tensor]:
    c = p.channels
    pools = {"both": ("avg", "max"), "avg_only": ("avg",), "max_only": ("max",)}[p.pool_mode]
    y = np.concatenate([global_pool(kind, feat) for feat in (rgb, x) for kind in pools])
    hidden = relu(linear(y[None], p.mlp_w1, p.mlp_b1))
    w = sigmoid(linear(hidden, p.mlp_w2, p.mlp_b2))[0]
    return w[:c], w[c:]


def spatial_weights(rgb: Tensor, x: Tensor, p: RectifyParams) -> tuple[Tensor, Tensor]:
    both = np.concatenate([f64(rgb), f64(x)], axis=-1)
    hidden = relu(conv1x1(both, p.sconv_w1, p.sconv_b1))
    maps = sigmoid(conv1x1(hidden, p.sconv_w2, p.sconv_b2))
    return maps[..., 0], maps[..., 1]


def cm_frm(rgb: Tensor, x: Tensor, p: RectifyParams) -> tuple[Tensor, Tensor]:
    rgb, x = f64(rgb), f64(x)
    w_rgb, w_x = channel_weights(rgb, x, p)
    m_rgb, m_x = spatial_weights(rgb, x, p)
    rgb_out = rgb + p.lambda_c * x * w_x + p.lambda_s * x * m_x[..., None]
    x_out = x + p.lambda_c * rgb * w_rgb + p.lambda_s * rgb * m_rgb[..., None]
    return rgb_out, x_out


def cross_exchange(rgb: Tensor, x: Tensor, p: FfmParams, *, cross: bool = True) -> list[Tensor]:
    height, width, c = np.shape(rgb)
    d = p.head_dim
    paths = {"rgb": p.rgb, "x": p.x}
    flat = {"rgb": f64(rgb).reshape(-1, c), "x": f64(x).reshape(-1, c)}
    res = {s: linear(flat[s], paths[s].e_res, paths[s].b_res) for s in paths}
    inter = {s: linear(flat[s], paths[s].e_inter, paths[s].b_inter) for s in paths}
    attention = {}
    for s, path in paths.items():
        attention[s] = []
        for h in range(p.n_heads):
            head = inter[s][:, h * d : (h + 1) * d]
            keys = matmul(head, f64(path.k_proj[h]))
            values = matmul(head, f64(path.v_proj[h]))
            attention[s].append(softmax_rows(matmul(keys.T, values)))
    outputs = []
    for s, other in (("rgb", "x"), ("x", "rgb")):
        source = other if cross else s
        heads = [
            matmul(inter[s][:, h * d : (h + 1) * d], attention[source][h])
            for h in range(p.n_heads)
        ]
        mixed = np.concatenate([*heads, res[s]], axis=-1)
        out = linear(mixed, paths[s].out_proj, paths[s].b_out)
        outputs.append(out.reshape(height, width, c))
    return outputs


def fuse(rgb_ex: Tensor, x_ex: Tensor, p: FfmParams) -> Tensor:
    z = conv1x1(np.concatenate([f64(rgb_ex), f64(x_ex)], axis=-1), p.fuse_w1, p.fuse_b1)
    skip = z + dwconv3x3(z, p.fuse_dw, p.fuse_bdw)
    mixed = np.vectorize(gelu)(skip)
    return conv1x1(mixed, p.fuse_w2, p.fuse_b2)


def space_to_depth(x: Tensor, s: int) -> Tensor:
    x = f64(x)
    height, width, channels = x.shape
    out = np.zeros((height // s, width // s, s * s * channels))
    for i in range(height // s):
        for j in range(width // s):
            for di in range(s):
                for dj in range(s):
                    k = (di * s + dj) * channels
                    out[i, j, k : k + channels] = x[i * s + di, j * s + dj]
    return out


def upsample(x: Tensor, f: int) -> Tensor:
    height, width, channels = np.shape(x)
    out = np.zeros((height * f, width * f, channels))
    for i in range(height * f):
        for j in range(width * f):
            out[i, j] = x[i // f, j // f]
    return out


def stage_block(x: Tensor, p: StageParams) -> Tensor:
    z = conv1x1(space_to_depth(x, p.stride), p.patch_w, p.patch_b)
    hidden = np.vectorize(gelu)(conv1x1(z, p.mlp_w1, p.mlp_b1))
    return z + conv1x1(hidden, p.mlp_w2, p.mlp_b2)


def decode(features: list[Tensor], p: DecoderParams, out_height: int) -> Tensor:
    base = features[0].shape[0]
    projected = [
        upsample(conv1x1(feat, w, b), base // feat.shape[0])
        for feat, w, b in zip(features, p.proj_w, p.proj_b, strict=True)
    ]
    logits = conv1x1(np.concatenate(projected, axis=-1), p.cls_w, p.cls_b)
    return upsample(logits, out_height // base)


def forward(rgb: Tensor, x: Tensor | None, p: NetworkParams, cfg: AblationConfig) -> Tensor:
    """Logits of a network whose weights were built for `cfg`."""
    r = f64(rgb)
    if cfg.single_stream:
        features = []
        for stage in p.rgb_stages:
            r = stage_block(r, stage)
            features.append(r)
        return decode(features, p.decoder, np.shape(rgb)[0])
    s = f64(x)
    if p.x_adapter is not None:
        s = conv1x1(s, *p.x_adapter)
    fused = []
    for i, (rgb_stage, x_stage) in enumerate(zip(p.rgb_stages, p.x_stages, strict=True)):
        r, s = stage_block(r, rgb_stage), stage_block(s, x_stage)
        if cfg.use_cm_frm:
            r, s = cm_frm(r, s, p.rectify[i])
        if cfg.ffm_mode == "avg":
            fused.append((r + s) / 2)
        elif cfg.ffm_mode == "stage2_only":
            fused.append(fuse(r, s, p.ffm[i]))
        else:
            exchanged = cross_exchange(r, s, p.ffm[i], cross=cfg.ffm_mode == "full")
            fused.append(fuse(*exchanged, p.ffm[i]))
    return decode(fused, p.decoder, np.shape(rgb)[0])
