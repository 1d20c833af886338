"""Network configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError
from ..featex import band_offsets_for, wavelet_length


@dataclass
class McanetConfig:
    """Shape and ablation settings for :class:`~amrkit.mcanet.McanetModel`.

    Defaults are the desk-scale network: 64x64 rasters, a 3-stage residual
    CNN per image branch, a 2-layer 4-head transformer on 8 tokens of width
    64, and SCAPE at 64 channels.
    """

    n_classes: int
    image_res: int = 64
    d_model: int = 64
    seq_len: int = 8
    n_heads: int = 4
    n_encoder_layers: int = 2
    ffn_dim: int = 128
    cnn_channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    cnn_blocks_per_stage: int = 2
    reduction_ratio: int = 32
    g_low: float = 1.5
    enable_paff: bool = True
    enable_wavefilter: bool = True
    enable_fusion_gate: bool = True
    adapter_channels: int = 16
    eye_channels: int = 1
    frame_length: int = 128
    temporal_channels: int = 64
    fused_channels: int = 64
    max_branch_channel_pool: str = "avg"
    init_seed: int = 0

    def __post_init__(self):
        self.cnn_channels = [int(c) for c in self.cnn_channels]
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.reduction_ratio < 1:
            raise ConfigError("reduction_ratio must be at least 1")
        if self.g_low < 1:
            raise ConfigError(f"g_low must be at least 1, got {self.g_low}")
        if not self.cnn_channels or min(self.cnn_channels) < 1 or self.cnn_blocks_per_stage < 1:
            raise ConfigError("cnn_channels and cnn_blocks_per_stage must be positive")
        if self.image_res % (2 ** len(self.cnn_channels)):
            raise ConfigError(
                f"image_res {self.image_res} must be divisible by 2^{len(self.cnn_channels)}")
        if self.eye_channels not in (1, 2):
            raise ConfigError("eye_channels must be 1 or 2")
        if self.max_branch_channel_pool not in ("avg", "max"):
            raise ConfigError("max_branch_channel_pool must be 'avg' or 'max'")
        for name in ("seq_len", "n_encoder_layers", "ffn_dim", "adapter_channels",
                     "temporal_channels", "fused_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def wavelet_dim(self) -> int:
        return wavelet_length(self.frame_length)

    @property
    def band_offsets(self) -> dict[str, tuple[int, int]]:
        return band_offsets_for(self.frame_length)

    @property
    def feature_res(self) -> int:
        return self.image_res // 2 ** len(self.cnn_channels)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "McanetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "McanetConfig":
        return cls.from_dict(json.loads(text))


def coord_mid_channels(channels: int, reduction_ratio: int) -> int:
    """Bottleneck width of the coordinate-attention down-projection."""
    return max(8, channels // reduction_ratio)
