"""Network blocks: feature/context encoders, update GRUs, and variable heads.

All convolutions run at 1/8 of the input resolution after the encoder
(three stride-2 blocks, one stride-1 block).  Every head is fully
convolutional or ends in global average pooling, so the parameter count is
independent of image size and the same weights run on any extent divisible
by 8.

The two recurrent units (one for depth, one for poses) are convolutional
GRUs whose gates use separable 5x5 convolutions — a 1x5 sweep followed by a
5x1 sweep.  Final layers of the initialization and delta heads start at
zero, so a freshly built model predicts the mid-range depth, identity poses,
and no-op updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Parameter, Tensor

DOWNSAMPLE = 8


@dataclass
class ModelConfig:
    feat_channels: int = 64
    context_channels: int = 64
    hidden_channels: int = 64
    pv_channels: int = 32
    pc_channels: int = 32
    d_min: float = 0.1
    d_max: float = 100.0
    depth_step_gain: float = 0.4    # raw (pre-sigmoid) units per unit head output
    pose_step_gain: float = 0.1     # twist units per unit head output per round
    pose_init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.d_min <= 0 or self.d_max <= self.d_min:
            raise ConfigError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        for name in ("feat_channels", "context_channels", "hidden_channels",
                     "pv_channels", "pc_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_meta(self) -> dict[str, str]:
        return {f"model.{k}": repr(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for k, typ in (("feat_channels", int), ("context_channels", int),
                       ("hidden_channels", int), ("pv_channels", int),
                       ("pc_channels", int), ("d_min", float), ("d_max", float),
                       ("depth_step_gain", float), ("pose_step_gain", float),
                       ("pose_init_scale", float), ("seed", int)):
            key = f"model.{k}"
            if key not in meta:
                raise ConfigError(f"checkpoint metadata missing {key}")
            kwargs[k] = typ(float(meta[key])) if typ is int else typ(meta[key])
        return cls(**kwargs)


class Registry:
    """Creates uniquely named parameters with seeded initialization."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: list[Parameter] = []
        self._names: set[str] = set()

    def add(self, name: str, array: np.ndarray) -> Parameter:
        if name in self._names:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._names.add(name)
        p = Parameter(name, array.astype(np.float32))
        self.params.append(p)
        return p

    def conv_weight(self, name: str, cout: int, cin: int, kh: int, kw: int,
                    zero: bool = False, smooth: bool = False) -> Parameter:
        if zero:
            w = np.zeros((cout, cin, kh, kw))
        elif smooth:
            # start as a blur + channel copy (with faint noise for symmetry
            # breaking): initial feature maps are then low-passed copies of
            # their input, so view-to-view matching works before any training
            std = np.sqrt(2.0 / (cin * kh * kw))
            w = self.rng.normal(scale=0.1 * std, size=(cout, cin, kh, kw))
            ky = np.hanning(kh + 2)[1:-1] if kh > 1 else np.ones(1)
            kx = np.hanning(kw + 2)[1:-1] if kw > 1 else np.ones(1)
            blur = np.outer(ky, kx)
            blur /= blur.sum()
            for o in range(cout):
                w[o, o % cin] += blur
        else:
            std = np.sqrt(2.0 / (cin * kh * kw))
            w = self.rng.normal(scale=std, size=(cout, cin, kh, kw))
        return self.add(name, w)

    def bias(self, name: str, cout: int) -> Parameter:
        return self.add(name, np.zeros(cout))


class Conv:
    """3x3 (or kxk) convolution with bias; padding defaults to 'same'."""

    def __init__(self, reg: Registry, name: str, cin: int, cout: int,
                 k: int = 3, stride: int = 1, zero: bool = False,
                 smooth: bool = False, pad_mode: str = "zeros"):
        self.weight = reg.conv_weight(f"{name}.weight", cout, cin, k, k,
                                      zero=zero, smooth=smooth)
        self.b = reg.bias(f"{name}.bias", cout)
        self.stride = stride
        self.pad = k // 2
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.tensor, self.b.tensor,
                        stride=self.stride, padding=self.pad,
                        pad_mode=self.pad_mode)


class SeparableConv5:
    """5x5 convolution factored into a 1x5 row sweep then a 5x1 column sweep."""

    def __init__(self, reg: Registry, name: str, cin: int, cout: int):
        std_row = np.sqrt(2.0 / (cin * 5))
        std_col = np.sqrt(2.0 / (cout * 5))
        self.w_row = reg.add(f"{name}.row", reg.rng.normal(scale=std_row,
                                                           size=(cout, cin, 1, 5)))
        self.w_col = reg.add(f"{name}.col", reg.rng.normal(scale=std_col,
                                                           size=(cout, cout, 5, 1)))
        self.b = reg.bias(f"{name}.bias", cout)

    def __call__(self, x: Tensor) -> Tensor:
        mid = T.conv2d(x, self.w_row.tensor, padding=(0, 2))
        return T.conv2d(mid, self.w_col.tensor, self.b.tensor, padding=(2, 0))


class ConvGru:
    """Convolutional GRU with separable 5x5 gates.

    step(h, m): z = sig(Wz[h,m]); r = sig(Wr[h,m]); htil = tanh(Wh[r*h, m]);
    h' = (1-z)*h + z*htil.  With h in (-1,1), h' stays in (-1,1).
    """

    def __init__(self, reg: Registry, name: str, hidden: int, input_ch: int):
        self.wz = SeparableConv5(reg, f"{name}.wz", hidden + input_ch, hidden)
        self.wr = SeparableConv5(reg, f"{name}.wr", hidden + input_ch, hidden)
        self.wh = SeparableConv5(reg, f"{name}.wh", hidden + input_ch, hidden)

    def step(self, h: Tensor, m: Tensor) -> Tensor:
        if h.shape[1:] != m.shape[1:]:
            raise DimensionError(f"hidden {h.shape} vs input {m.shape} extents differ")
        hm = T.concat([h, m], axis=0)
        z = T.sigmoid(self.wz(hm))
        r = T.sigmoid(self.wr(hm))
        htil = T.tanh(self.wh(T.concat([r * h, m], axis=0)))
        return (1.0 - z) * h + z * htil


class _TwoConvHead:
    """conv3x3 -> relu -> conv3x3, the shape shared by all variable heads."""

    def __init__(self, reg: Registry, name: str, cin: int, mid: int, cout: int,
                 zero_last: bool = True):
        self.c1 = Conv(reg, f"{name}.conv1", cin, mid)
        self.c2 = Conv(reg, f"{name}.conv2", mid, cout, zero=zero_last)

    def __call__(self, x: Tensor) -> Tensor:
        return self.c2(T.relu(self.c1(x)))


class _Encoder:
    """Four conv blocks, strides 2,2,2,1: full resolution -> 1/8.

    Blocks start as blur-and-copy kernels and pad by edge replication: fresh
    feature maps are then near-faithful image pyramids without positional
    border stamps, so the feature-metric cost is informative from step one
    instead of waiting for the encoder to unlearn its own artifacts.
    """

    def __init__(self, reg: Registry, name: str, cout: int):
        opt = {"smooth": True, "pad_mode": "edge"}
        self.blocks = [Conv(reg, f"{name}.block1", 3, 32, stride=2, **opt),
                       Conv(reg, f"{name}.block2", 32, 48, stride=2, **opt),
                       Conv(reg, f"{name}.block3", 48, 64, stride=2, **opt),
                       Conv(reg, f"{name}.block4", 64, cout, stride=1, **opt)]

    def __call__(self, image: Tensor) -> Tensor:
        x = image
        for i, blk in enumerate(self.blocks):
            x = blk(x)
            if i < len(self.blocks) - 1:
                x = T.relu(x)
        return x


class SfmNetwork:
    """Encoders, GRUs, and heads bundled behind one parameter registry."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        reg = Registry(cfg.seed)
        fc, cc, hc = cfg.feat_channels, cfg.context_channels, cfg.hidden_channels
        pv, pc = cfg.pv_channels, cfg.pc_channels

        self.encoder = _Encoder(reg, "encoder", fc)
        self.context = _Encoder(reg, "context", cc)
        self.hidden_init = Conv(reg, "context.hidden_init", cc, hc)

        # The init heads keep live final convs: with every head zeroed the
        # encoders would sit in a zero-gradient basin (no path from the loss
        # back to the features until some head weight grows on its own).
        self.depth_init_head = _TwoConvHead(reg, "depth_init", fc, fc, 1,
                                            zero_last=False)
        self.pose_init_head = _TwoConvHead(reg, "pose_init", 2 * fc, fc, 6,
                                           zero_last=False)

        gru_in = pv + pc + cc
        self.depth_pv = _TwoConvHead(reg, "depth_gru.pv", 1, pv, pv, zero_last=False)
        self.depth_pc = _TwoConvHead(reg, "depth_gru.pc", 2, pc, pc, zero_last=False)
        self.depth_gru = ConvGru(reg, "depth_gru.cell", hc, gru_in)
        self.depth_delta_head = _TwoConvHead(reg, "depth_gru.delta", hc, hc, 1)

        self.pose_pv = _TwoConvHead(reg, "pose_gru.pv", 6, pv, pv, zero_last=False)
        self.pose_pc = _TwoConvHead(reg, "pose_gru.pc", 2, pc, pc, zero_last=False)
        self.pose_gru = ConvGru(reg, "pose_gru.cell", hc, gru_in)
        self.pose_delta_head = _TwoConvHead(reg, "pose_gru.delta", hc, hc, 6)

        self.params = reg.params
        self.param_map = {p.name: p for p in self.params}

    # -- encoders ------------------------------------------------------

    @staticmethod
    def _check_image(image: Tensor) -> None:
        if image.ndim != 3 or image.shape[0] != 3:
            raise DimensionError(f"images are (3,H,W), got {image.shape}")
        if image.shape[1] % DOWNSAMPLE or image.shape[2] % DOWNSAMPLE:
            raise DimensionError(
                f"image extents must be divisible by {DOWNSAMPLE}, got {image.shape}")

    def encode_features(self, image: Tensor) -> Tensor:
        self._check_image(image)
        return self.encoder(image)

    def encode_context(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Contextual features plus the tanh-squashed initial hidden state."""
        self._check_image(image)
        ctx = self.context(image)
        return ctx, T.tanh(self.hidden_init(ctx))

    # -- variable initialization ----------------------------------------

    def depth_init_raw(self, f_ref: Tensor) -> Tensor:
        """Raw (pre-sigmoid) depth state from reference features, (1,h,w)."""
        return self.depth_init_head(f_ref)

    def pose_init(self, f_ref: Tensor, f_ctx: Tensor) -> Tensor:
        """Initial twist for one context view, scaled to start near identity."""
        if f_ref.shape != f_ctx.shape:
            raise DimensionError(
                f"feature shapes differ: {f_ref.shape} vs {f_ctx.shape}")
        pooled = T.global_avg_pool(self.pose_init_head(T.concat([f_ref, f_ctx], axis=0)))
        return pooled * self.cfg.pose_init_scale

    def bounded_depth(self, raw: Tensor) -> Tensor:
        """Map the raw state through a sigmoid into [d_min, d_max]."""
        cfg = self.cfg
        return T.sigmoid(raw) * (cfg.d_max - cfg.d_min) + cfg.d_min

    def normalized_depth(self, raw: Tensor) -> Tensor:
        """Depth rescaled to (0,1): the network-facing view of the variable."""
        return T.sigmoid(raw)

    # -- GRU input assembly ----------------------------------------------

    def _cost_channels(self, cost_values: Tensor, cost_valid: np.ndarray) -> Tensor:
        return T.concat([cost_values, T.constant(cost_valid.astype(np.float32))], axis=0)

    def depth_gru_input(self, raw_depth: Tensor, cost_values: Tensor,
                        cost_valid: np.ndarray, ctx: Tensor,
                        use_cost: bool = True) -> Tensor:
        """M = [P_v(depth), P_c(cost, mask), context] stacked on channels."""
        pv = self.depth_pv(self.normalized_depth(raw_depth))
        if use_cost:
            pcb = self.depth_pc(self._cost_channels(cost_values, cost_valid))
        else:
            pcb = T.zeros((self.cfg.pc_channels,) + pv.shape[1:])
        return T.concat([pv, pcb, ctx], axis=0)

    def pose_gru_input(self, xi: Tensor, cost_values: Tensor,
                       cost_valid: np.ndarray, ctx: Tensor,
                       use_cost: bool = True) -> Tensor:
        _, h, w = ctx.shape
        xi_map = xi.reshape(6, 1, 1) * T.constant(np.ones((1, h, w), dtype=np.float32))
        pv = self.pose_pv(xi_map)
        if use_cost:
            pcb = self.pose_pc(self._cost_channels(cost_values, cost_valid))
        else:
            pcb = T.zeros((self.cfg.pc_channels,) + pv.shape[1:])
        return T.concat([pv, pcb, ctx], axis=0)

    # -- updates -----------------------------------------------------------

    def depth_delta(self, hidden: Tensor) -> Tensor:
        return self.depth_delta_head(hidden) * self.cfg.depth_step_gain

    def pose_delta(self, hidden: Tensor) -> Tensor:
        return T.global_avg_pool(self.pose_delta_head(hidden)) * self.cfg.pose_step_gain

    # -- bookkeeping ---------------------------------------------------------

    def count_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params))

    def zero_all_parameters(self) -> None:
        for p in self.params:
            p.tensor.data[...] = 0.0
