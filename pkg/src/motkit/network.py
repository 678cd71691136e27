"""The shared tracking/affinity network.

A stack of valid convolutions (the backbone) feeds three heads that are pure
functions of (inputs, parameters):

* a cross-correlation head that slides the exemplar feature over the search
  feature to localize the target,
* per-task squeeze/excitation channel gates ("sot" for localization, "aff"
  for appearance matching) applied to the shared backbone feature,
* an embedding path (ROI sampling + global average pooling + L2 norm) whose
  inner products give appearance affinities in [-1, 1], plus a two-layer
  identity classifier used only as a training signal.

Two presets are provided: a small default whose gradients can be verified by
finite differences in seconds, and a full-scale AlexNet-style stack kept for
shape checks (127 -> 6×6, 239 -> 20×20, 255 -> 22×22 feature sides).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (ContractError, ShapeError, Tensor, channel_scale, conv2d, dot,
                       fully_connected, global_avg_pool, l2_normalize, max_pool2d,
                       relu, roi_align, sigmoid)


@dataclass(frozen=True)
class ConvLayer:
    out_channels: int
    kernel: int
    stride: int = 1
    pool_window: int = 0   # 0 = no pooling after this conv
    pool_stride: int = 0


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[ConvLayer, ...]
    exemplar_size: int
    instance_size_train: int
    instance_size_track: int
    embed_dim: int
    tsa_reduction: int
    num_identities: int
    identity_hidden: int

    def __post_init__(self):
        if self.embed_dim % self.tsa_reduction != 0:
            raise ContractError(f"tsa_reduction {self.tsa_reduction} must divide "
                                f"embed_dim {self.embed_dim}")
        if self.layers[-1].out_channels != self.embed_dim:
            raise ContractError("last conv layer must emit embed_dim channels")

    def with_identities(self, n: int) -> "NetworkConfig":
        return replace(self, num_identities=n)


def toy_config(num_identities: int = 20) -> NetworkConfig:
    """Small stack: 3×3 convs with 16/32/32 channels and one 2×2 max-pool.

    Patch sizes 31/55/62 give feature sides 10/22/26 at stride 2, i.e. 13×13
    training and 17×17 tracking response maps.
    """
    return NetworkConfig(
        layers=(ConvLayer(16, 3, 1, pool_window=2, pool_stride=2),
                ConvLayer(32, 3, 1),
                ConvLayer(32, 3, 1)),
        exemplar_size=31,
        instance_size_train=55,
        instance_size_track=62,
        embed_dim=32,
        tsa_reduction=4,
        num_identities=num_identities,
        identity_hidden=64,
    )


def full_config(num_identities: int = 439) -> NetworkConfig:
    """Full-scale AlexNet-style stack (shape checks only; never trained here)."""
    return NetworkConfig(
        layers=(ConvLayer(96, 11, 2, pool_window=3, pool_stride=2),
                ConvLayer(256, 5, 1, pool_window=3, pool_stride=2),
                ConvLayer(384, 3, 1),
                ConvLayer(384, 3, 1),
                ConvLayer(256, 3, 1)),
        exemplar_size=127,
        instance_size_train=239,
        instance_size_track=255,
        embed_dim=256,
        tsa_reduction=4,
        num_identities=num_identities,
        identity_hidden=512,
    )


def feature_side(cfg: NetworkConfig, input_side: int) -> int:
    """Spatial side of the backbone output for a square input."""
    s = input_side
    for layer in cfg.layers:
        s = (s - layer.kernel) // layer.stride + 1
        if layer.pool_window:
            s = (s - layer.pool_window) // layer.pool_stride + 1
        if s < 1:
            raise ShapeError(f"input side {input_side} too small for the backbone")
    return s


def feature_geometry(cfg: NetworkConfig) -> tuple[int, float]:
    """(total stride, pixel offset): feature cell i is centred at
    stride * i + offset in input-patch pixels."""
    stride, offset = 1, 0.0
    for layer in cfg.layers:
        offset += stride * (layer.kernel - 1) / 2.0
        stride *= layer.stride
        if layer.pool_window:
            offset += stride * (layer.pool_window - 1) / 2.0
            stride *= layer.pool_stride
    return stride, offset


@dataclass
class ResponseMap:
    """Correlation scores plus the backbone stride that maps cells to pixels."""

    v: Tensor
    stride: int


def init_params(cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """He-initialized learnable tensors, keyed by layer name."""
    params: dict[str, Tensor] = {}

    def he(shape, fan_in):
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)

    cin = 3
    for i, layer in enumerate(cfg.layers, start=1):
        k, cout = layer.kernel, layer.out_channels
        params[f"conv{i}.kernel"] = he((k, k, cin, cout), k * k * cin)
        params[f"conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    params["corr.bias"] = Tensor(np.zeros(1), requires_grad=True)
    c, hidden = cfg.embed_dim, cfg.embed_dim // cfg.tsa_reduction
    for task in ("sot", "aff"):
        params[f"tsa.{task}.w1"] = he((hidden, c), c)
        params[f"tsa.{task}.w2"] = he((c, hidden), hidden)
    params["ident.fc1.weight"] = he((cfg.identity_hidden, c), c)
    params["ident.fc1.bias"] = Tensor(np.zeros(cfg.identity_hidden), requires_grad=True)
    params["ident.fc2.weight"] = he((cfg.num_identities, cfg.identity_hidden), cfg.identity_hidden)
    params["ident.fc2.bias"] = Tensor(np.zeros(cfg.num_identities), requires_grad=True)
    return params


def check_params(cfg: NetworkConfig, params: dict[str, Tensor]) -> None:
    """Verify a parameter set matches the config; raise listing mismatches."""
    expected = init_params(cfg, np.random.default_rng(0))
    problems = []
    for name, t in expected.items():
        if name not in params:
            problems.append(f"missing {name} {t.data.shape}")
        elif params[name].data.shape != t.data.shape:
            problems.append(f"{name}: got {params[name].data.shape}, want {t.data.shape}")
    for name in params:
        if name not in expected:
            problems.append(f"unexpected {name}")
    if problems:
        raise ContractError("incompatible parameters: " + "; ".join(problems))


def backbone_forward(patch: Tensor, params: dict[str, Tensor], cfg: NetworkConfig) -> Tensor:
    """Run the conv stack on an S×S×3 patch; ReLU after all but the last conv."""
    if patch.data.ndim != 3 or patch.data.shape[2] != 3:
        raise ShapeError(f"backbone: patch {patch.data.shape} must be S×S×3")
    side = patch.data.shape[0]
    allowed = (cfg.exemplar_size, cfg.instance_size_train, cfg.instance_size_track)
    if patch.data.shape[1] != side or side not in allowed:
        raise ShapeError(f"backbone: patch side {patch.data.shape[:2]} not one of {allowed}")
    # zero-centre [0,1] pixels; otherwise every feature shares one large mean
    # direction and all embeddings collapse onto it
    f = patch - 0.5
    last = len(cfg.layers)
    for i, layer in enumerate(cfg.layers, start=1):
        f = conv2d(f, params[f"conv{i}.kernel"], layer.stride, params[f"conv{i}.bias"])
        if i != last:
            f = relu(f)
        if layer.pool_window:
            f = max_pool2d(f, layer.pool_window, layer.pool_stride)
    return f


def cross_correlation(f_x: Tensor, f_z: Tensor, bias: Tensor, stride: int = 1) -> ResponseMap:
    """Slide the exemplar feature over the search feature as one correlation
    kernel summing over channels: v = f_x * f_z + b."""
    if f_x.data.ndim != 3 or f_z.data.ndim != 3 or f_x.data.shape[2] != f_z.data.shape[2]:
        raise ShapeError(f"cross_correlation: channel mismatch between search "
                         f"{f_x.data.shape} and exemplar {f_z.data.shape}")
    hz, wz, c = f_z.data.shape
    kernel = f_z.reshape((hz, wz, c, 1))
    v = conv2d(f_x, kernel, 1, bias)
    hv, wv, _ = v.data.shape
    return ResponseMap(v=v.reshape((hv, wv)), stride=stride)


def correlation_response(f_x_sot: Tensor, f_z_sot: Tensor, params: dict[str, Tensor],
                         stride: int = 1) -> ResponseMap:
    """Normalized correlation used by training and tracking: the raw sum over
    the exemplar-feature window is divided by the window element count, which
    keeps the logistic loss in range and removes the degenerate descent
    direction of simply shrinking the correlation gain."""
    gain = 1.0 / float(np.prod(f_z_sot.data.shape))
    return cross_correlation(f_x_sot * gain, f_z_sot, params["corr.bias"], stride)


def tsa_attention(f: Tensor, task: str, params: dict[str, Tensor]) -> Tensor:
    """Squeeze/excite channel gating: a = sigmoid(W2 relu(W1 GAP(f))), out = a ⊙ f."""
    if task not in ("sot", "aff"):
        raise ContractError(f"tsa_attention: unknown task '{task}'")
    w1, w2 = params[f"tsa.{task}.w1"], params[f"tsa.{task}.w2"]
    s = global_avg_pool(f)
    zero1 = Tensor(np.zeros(w1.data.shape[0]))
    zero2 = Tensor(np.zeros(w2.data.shape[0]))
    a = sigmoid(fully_connected(relu(fully_connected(s, w1, zero1)), w2, zero2))
    return channel_scale(f, a)


def embed(f_aligned: Tensor) -> Tensor:
    """Global average pooling followed by L2 normalization: a unit vector."""
    return l2_normalize(global_avg_pool(f_aligned))


def identity_logits(w: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Pre-softmax identity scores from two affine layers (ReLU in between)."""
    hiddens = relu(fully_connected(w, params["ident.fc1.weight"], params["ident.fc1.bias"]))
    return fully_connected(hiddens, params["ident.fc2.weight"], params["ident.fc2.bias"])


def affinity(w_a: Tensor, w_b: Tensor) -> Tensor:
    """Inner product of two unit embeddings; lands in [-1, 1]."""
    return dot(w_a, w_b)


def centered_roi_box(cfg: NetworkConfig, instance_side: int) -> tuple[float, float, float, float]:
    """Exemplar-sized box at the centre of an instance feature map, in feature
    corner coordinates (targets are centred in training instances)."""
    fz = feature_side(cfg, cfg.exemplar_size)
    fx = feature_side(cfg, instance_side)
    off = (fx - fz) / 2.0
    return (off, off, float(fz), float(fz))


def instance_embedding(f_aff: Tensor, box: tuple[float, float, float, float],
                       cfg: NetworkConfig) -> Tensor:
    """ROI-sample a box of the AFF-attended instance feature and embed it."""
    return embed(roi_align(f_aff, box, feature_side(cfg, cfg.exemplar_size)))
