"""The multimodal recognition network and its components."""

from .config import McanetConfig, coord_mid_channels
from .layers import (
    PAFF,
    CoordAttentionBranch,
    DualEncoder,
    EncoderLayer,
    FreqFormer,
    FusionGate,
    MultiHeadSelfAttention,
    ResidualBlock,
    ResidualBranch,
    Scape,
    WaveFilter,
    apply_attention,
    position_grid,
)
from .model import McanetModel, config_path_for, load_model, save_model

__all__ = [name for name in dir() if not name.startswith("_")]
