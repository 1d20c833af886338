"""Full network and its on-disk form (AMRW weights + JSON config sidecar)."""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .. import tensorcore as tc
from ..errors import ConfigError, ShapeError, WriteError
from ..tensorcore import Linear, Module, Tensor
from .config import McanetConfig
from .layers import DualEncoder, FreqFormer, Scape


@contextmanager
def _stage(name: str):
    try:
        yield
    except ShapeError as exc:
        raise ShapeError(f"{name}: {exc}") from None


class McanetModel(Module):
    """DualEncoder + FreqFormer feeding SCAPE, then global pooling and a linear head."""

    def __init__(self, cfg: McanetConfig):
        super().__init__()
        self.config = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.encoder = DualEncoder(cfg, rng)
        self.freqformer = FreqFormer(cfg, rng)
        self.scape = Scape(cfg, cfg.cnn_channels[-1], rng)
        self.head = Linear(cfg.fused_channels, cfg.n_classes, rng, init="xavier")

    @staticmethod
    def _as_input(x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=tc.get_default_dtype()))

    def features(self, cons, eye, wavelet) -> Tensor:
        """Pre-classifier embedding, (N, fused_channels)."""
        cons, eye, wavelet = self._as_input(cons), self._as_input(eye), self._as_input(wavelet)
        if not (cons.shape[0] == eye.shape[0] == wavelet.shape[0]):
            raise ShapeError(f"input: batch sizes differ ({cons.shape[0]}, {eye.shape[0]}, "
                             f"{wavelet.shape[0]})")
        with _stage("dual_encoder"):
            img = self.encoder(cons, eye)
        with _stage("freqformer"):
            tmp = self.freqformer(wavelet)
        with _stage("scape"):
            out = self.scape(img, tmp)
        n = out.shape[0]
        return tc.reshape(tc.global_pool(out, "avg"), (n, out.shape[1]))

    def forward(self, cons, eye, wavelet) -> Tensor:
        emb = self.features(cons, eye, wavelet)
        with _stage("head"):
            return self.head(emb)

    def predict(self, cons, eye, wavelet, batch_size: int = 128) -> np.ndarray:
        """Eval-mode logits as a numpy array, computed in batches."""
        was_training = self.training
        self.eval()
        out = []
        try:
            with tc.no_grad():
                for s in range(0, len(cons), batch_size):
                    out.append(self(cons[s:s + batch_size], eye[s:s + batch_size],
                                    wavelet[s:s + batch_size]).data)
        finally:
            self.train(was_training)
        return np.concatenate(out)

    def attention_maps(self) -> dict[str, np.ndarray]:
        maps = {f"scape.{k}": v for k, v in self.scape.last_attention.items()}
        for i, layer in enumerate(self.freqformer.layers):
            if layer.attn.last_attention is not None:
                maps[f"freqformer.layers.{i}.attn"] = layer.attn.last_attention
        return maps


def config_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(model: McanetModel, path) -> Path:
    path = Path(path)
    tc.save_state(model.state_dict(), path)
    try:
        config_path_for(path).write_text(model.config.to_json() + "\n")
    except OSError as exc:
        raise WriteError(f"cannot write model config: {exc}", path=str(config_path_for(path))) from exc
    return path


def load_model(path, config: McanetConfig | None = None) -> McanetModel:
    path = Path(path)
    if config is None:
        side = config_path_for(path)
        if not side.exists():
            raise ConfigError(f"missing model config sidecar {side}", path=str(side))
        config = McanetConfig.from_json(side.read_text())
    with tc.default_dtype(np.float32):
        model = McanetModel(config)
    model.load_state_dict(tc.load_state(path))
    return model
