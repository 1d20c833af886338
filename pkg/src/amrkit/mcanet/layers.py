"""Building blocks of the network.

All maps are NCHW; sequences are (N, T, d).
"""

from __future__ import annotations

import numpy as np

from .. import tensorcore as tc
from ..errors import ShapeError
from ..tensorcore import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, Parameter, Tensor
from .config import coord_mid_channels


# ---------------------------------------------------------------------------
# image branch


class ResidualBlock(Module):
    """conv3x3-BN-ReLU-conv3x3-BN plus skip, ReLU after the add."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.proj = Conv2d(in_channels, out_channels, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_channels)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        h = tc.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return tc.relu(tc.add(h, skip))


class ResidualBranch(Module):
    """Residual stages; the first block of every stage halves the resolution."""

    def __init__(self, in_channels: int, channels: list[int], blocks_per_stage: int, rng):
        super().__init__()
        blocks = []
        c_in = in_channels
        for c_out in channels:
            for b in range(blocks_per_stage):
                blocks.append(ResidualBlock(c_in, c_out, 2 if b == 0 else 1, rng))
                c_in = c_out
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class FusionGate(Module):
    """z = sigmoid(w) x + (1 - sigmoid(w)) y; a fixed 0.5/0.5 mix when disabled."""

    def __init__(self, enabled: bool = True):
        super().__init__()
        self.weight = Parameter(np.zeros(1)) if enabled else None

    def alpha(self, dtype=None) -> Tensor:
        if self.weight is None:
            return Tensor(np.array([0.5], dtype=dtype or tc.get_default_dtype()))
        return tc.sigmoid(self.weight)

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        if x.shape != y.shape:
            raise ShapeError(f"fusion gate: feature shapes differ, {x.shape} vs {y.shape}")
        a = self.alpha(x.dtype)
        return tc.add(tc.mul(a, x), tc.mul(tc.sub(1.0, a), y))


class DualEncoder(Module):
    """1x1 adapters, one residual branch per raster, fused by the gate."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.image_res = cfg.image_res
        self.cons_adapter = Conv2d(1, cfg.adapter_channels, 1, rng)
        self.eye_adapter = Conv2d(cfg.eye_channels, cfg.adapter_channels, 1, rng)
        self.cons_branch = ResidualBranch(cfg.adapter_channels, cfg.cnn_channels,
                                          cfg.cnn_blocks_per_stage, rng)
        self.eye_branch = ResidualBranch(cfg.adapter_channels, cfg.cnn_channels,
                                         cfg.cnn_blocks_per_stage, rng)
        self.gate = FusionGate(cfg.enable_fusion_gate)

    def adapt_inputs(self, cons: Tensor, eye: Tensor) -> tuple[Tensor, Tensor]:
        if cons.ndim != 4 or eye.ndim != 4:
            raise ShapeError(f"rasters must be (N, C, H, W), got {cons.shape} and {eye.shape}")
        want = (self.image_res, self.image_res)
        if cons.shape[2:] != want or eye.shape[2:] != want:
            raise ShapeError(
                f"raster resolution mismatch: constellation {cons.shape[2:]}, eye {eye.shape[2:]}, "
                f"configured {want}")
        return self.cons_adapter(cons), self.eye_adapter(eye)

    def forward(self, cons: Tensor, eye: Tensor) -> Tensor:
        a, b = self.adapt_inputs(cons, eye)
        return self.gate(self.cons_branch(a), self.eye_branch(b))


# ---------------------------------------------------------------------------
# temporal branch


class WaveFilter(Module):
    """Fixed gain on the cA2 bands, learnable sigmoid(theta) on the detail bands.

    ``theta`` holds one scalar per detail band and channel, ordered
    cD2_I, cD1_I, cD2_Q, cD1_Q.
    """

    DETAIL_BANDS = ("cD2_I", "cD1_I", "cD2_Q", "cD1_Q")

    def __init__(self, band_offsets: dict[str, tuple[int, int]], g_low: float = 1.5):
        super().__init__()
        dim = max(stop for _, stop in band_offsets.values())
        self.dim = dim
        self.theta = Parameter(np.zeros(len(self.DETAIL_BANDS)))
        dtype = self.theta.dtype
        self._mask = np.zeros((len(self.DETAIL_BANDS), dim), dtype=dtype)
        for row, name in enumerate(self.DETAIL_BANDS):
            start, stop = band_offsets[name]
            self._mask[row, start:stop] = 1.0
        self._low = np.zeros(dim, dtype=dtype)
        for name in ("cA2_I", "cA2_Q"):
            start, stop = band_offsets[name]
            self._low[start:stop] = g_low

    def gains(self) -> Tensor:
        high = tc.matmul(tc.reshape(tc.sigmoid(self.theta), (1, -1)), Tensor(self._mask))
        return tc.add(high, Tensor(self._low))

    def forward(self, v: Tensor) -> Tensor:
        if v.shape[-1] != self.dim:
            raise ShapeError(f"wave filter expects {self.dim} wavelet values, got {v.shape}")
        return tc.mul(v, self.gains())


class MultiHeadSelfAttention(Module):
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated and projected."""

    def __init__(self, d_model: int, n_heads: int, rng):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.w_q = Linear(d_model, d_model, rng, bias=False, init="xavier")
        self.w_k = Linear(d_model, d_model, rng, bias=False, init="xavier")
        self.w_v = Linear(d_model, d_model, rng, bias=False, init="xavier")
        self.w_o = Linear(d_model, d_model, rng, init="xavier")
        self.last_attention: np.ndarray | None = None

    def _heads(self, x: Tensor) -> Tensor:
        n, t, _ = x.shape
        return tc.transpose(tc.reshape(x, (n, t, self.n_heads, self.d_k)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        n, t, d = x.shape
        q, k, v = self._heads(self.w_q(x)), self._heads(self.w_k(x)), self._heads(self.w_v(x))
        scores = tc.mul(tc.matmul(q, tc.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.d_k))
        attn = tc.softmax(scores, axis=-1)
        self.last_attention = attn.data
        heads = tc.matmul(attn, v)
        merged = tc.reshape(tc.transpose(heads, (0, 2, 1, 3)), (n, t, d))
        return self.w_o(merged)


class EncoderLayer(Module):
    """Post-norm transformer layer: x = LN(x + MHSA(x)); x = LN(x + FFN(x))."""

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int, rng):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ffn_in = Linear(d_model, ffn_dim, rng, init="he")
        self.ffn_out = Linear(ffn_dim, d_model, rng, init="xavier")
        self.norm2 = LayerNorm(d_model)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(tc.add(x, self.attn(x)))
        return self.norm2(tc.add(x, self.ffn_out(tc.relu(self.ffn_in(x)))))


class FreqFormer(Module):
    """WaveFilter, 282 -> seq_len x d_model embedding, learned positions, encoder, mean over time."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.seq_len, self.d_model = cfg.seq_len, cfg.d_model
        self.wave_filter = WaveFilter(cfg.band_offsets, cfg.g_low) if cfg.enable_wavefilter else None
        self.embed = Linear(cfg.wavelet_dim, cfg.seq_len * cfg.d_model, rng, init="xavier")
        self.pos_table = Parameter(rng.normal(0.0, 0.02, (cfg.seq_len, cfg.d_model)))
        self.layers = [EncoderLayer(cfg.d_model, cfg.n_heads, cfg.ffn_dim, rng)
                       for _ in range(cfg.n_encoder_layers)]
        self.dim = cfg.wavelet_dim

    def sequence_embed(self, v: Tensor) -> Tensor:
        if v.ndim != 2 or v.shape[1] != self.dim:
            raise ShapeError(f"wavelet input must be (N, {self.dim}), got {v.shape}")
        return tc.reshape(self.embed(v), (v.shape[0], self.seq_len, self.d_model))

    def add_positional(self, x_emb: Tensor) -> Tensor:
        return tc.add(x_emb, self.pos_table)

    def encode(self, v: Tensor) -> Tensor:
        if self.wave_filter is not None:
            v = self.wave_filter(v)
        x = self.add_positional(self.sequence_embed(v))
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, v: Tensor) -> Tensor:
        return tc.adaptive_avg_pool_seq(self.encode(v))


# ---------------------------------------------------------------------------
# fusion and attention


def position_grid(h: int, w: int) -> np.ndarray:
    """(1, 2, H, W) grid: channel 0 is the row coordinate, channel 1 the column, both in [-1, 1]."""
    rows = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    cols = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    return grid[None]


class PAFF(Module):
    """x + ReLU(BN(conv1x1(P))) with P the normalised coordinate grid."""

    def __init__(self, channels: int, rng):
        super().__init__()
        self.conv = Conv2d(2, channels, 1, rng)
        self.bn = BatchNorm2d(channels)

    def position_projection(self, h: int, w: int) -> Tensor:
        grid = Tensor(position_grid(h, w).astype(self.conv.weight.dtype))
        return tc.relu(self.bn(self.conv(grid)))

    def forward(self, x: Tensor) -> Tensor:
        return tc.add(x, self.position_projection(x.shape[2], x.shape[3]))


class CoordAttentionBranch(Module):
    """Coordinate attention along height and width plus channel attention.

    Returns ``(s_h, s_w, s_c)`` shaped (N,C,H,1), (N,C,1,W), (N,C,1,1).
    """

    def __init__(self, channels: int, reduction_ratio: int, mode: str, rng, channel_pool: str = "avg"):
        super().__init__()
        self.mode = mode
        self.channel_pool = "avg" if mode == "avg" else channel_pool
        mid = coord_mid_channels(channels, reduction_ratio)
        self.mid_channels = mid
        self.conv_hw = Conv2d(channels, mid, 1, rng)
        self.bn = BatchNorm2d(mid)
        self.conv_h = Conv2d(mid, channels, 1, rng)
        self.conv_w = Conv2d(mid, channels, 1, rng)
        self.conv_c = Conv2d(channels, channels, 1, rng)

    def forward(self, f: Tensor):
        h, w = f.shape[2], f.shape[3]
        pooled_h = tc.directional_pool(f, "height", self.mode)  # (N, C, H, 1)
        pooled_w = tc.transpose(tc.directional_pool(f, "width", self.mode), (0, 1, 3, 2))  # (N, C, W, 1)
        y = tc.relu(self.bn(self.conv_hw(tc.concat([pooled_h, pooled_w], axis=2))))
        y_h, y_w = tc.split(y, [h, w], axis=2)
        s_h = tc.sigmoid(self.conv_h(y_h))
        s_w = tc.sigmoid(self.conv_w(tc.transpose(y_w, (0, 1, 3, 2))))
        s_c = tc.sigmoid(self.conv_c(tc.global_pool(f, self.channel_pool)))
        return s_h, s_w, s_c


def apply_attention(f: Tensor, s_h: Tensor, s_w: Tensor, s_c: Tensor) -> Tensor:
    return tc.mul(tc.mul(tc.mul(f, s_h), s_w), s_c)


class Scape(Module):
    """Temporal-to-spatial bridge, channel concat and 1x1 mix, PAFF, dual coordinate attention."""

    def __init__(self, cfg, image_channels: int, rng):
        super().__init__()
        c = cfg.fused_channels
        self.temporal_proj = Linear(cfg.d_model, cfg.temporal_channels, rng, init="xavier")
        self.mix = Conv2d(image_channels + cfg.temporal_channels, c, 1, rng)
        self.paff = PAFF(c, rng) if cfg.enable_paff else None
        self.max_branch = CoordAttentionBranch(c, cfg.reduction_ratio, "max", rng,
                                               cfg.max_branch_channel_pool)
        self.avg_branch = CoordAttentionBranch(c, cfg.reduction_ratio, "avg", rng)
        self.restore = Conv2d(2 * c, c, 1, rng)
        self.last_attention: dict[str, np.ndarray] = {}

    def fuse(self, img_feat: Tensor, tmp_feat: Tensor) -> Tensor:
        n, _, h, w = img_feat.shape
        if tmp_feat.ndim != 2 or tmp_feat.shape[0] != n:
            raise ShapeError(f"temporal feature {tmp_feat.shape} does not match batch {n}")
        t = tc.reshape(self.temporal_proj(tmp_feat), (n, -1, 1, 1))
        t = tc.expand(t, (n, t.shape[1], h, w))
        f = self.mix(tc.concat([img_feat, t], axis=1))
        return f if self.paff is None else self.paff(f)

    def attend(self, f: Tensor) -> Tensor:
        s_max = self.max_branch(f)
        s_avg = self.avg_branch(f)
        self.last_attention = {
            "max_h": s_max[0].data, "max_w": s_max[1].data, "max_c": s_max[2].data,
            "avg_h": s_avg[0].data, "avg_w": s_avg[1].data, "avg_c": s_avg[2].data,
        }
        y = tc.concat([apply_attention(f, *s_max), apply_attention(f, *s_avg)], axis=1)
        return y

    def forward(self, img_feat: Tensor, tmp_feat: Tensor) -> Tensor:
        return self.restore(self.attend(self.fuse(img_feat, tmp_feat)))
