"""Registry of finite-difference gradient checks for every op and network composite.

Each case builds a fresh function and its inputs from a seeded generator;
:func:`run_gradchecks` evaluates a scope of cases over several seeds in
64-bit mode and reports the worst relative error per case.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .errors import InvalidArgumentError
from .mcanet import (
    PAFF,
    CoordAttentionBranch,
    DualEncoder,
    EncoderLayer,
    FreqFormer,
    FusionGate,
    McanetConfig,
    McanetModel,
    MultiHeadSelfAttention,
    ResidualBlock,
    ResidualBranch,
    Scape,
    WaveFilter,
)
from .tensorcore import Tensor, check_gradients

OP_TOL = 1e-4
MODEL_TOL = 1e-3
DEFAULT_SEEDS = tuple(range(10))

# Small network used by the composite cases.
SMALL_CONFIG = dict(n_classes=3, image_res=8, d_model=8, seq_len=4, n_heads=2, n_encoder_layers=1,
                    ffn_dim=12, cnn_channels=[4, 6], cnn_blocks_per_stage=1, adapter_channels=4,
                    temporal_channels=5, fused_channels=6)


def _leaf(rng, *shape, scale=1.0, positive=False) -> Tensor:
    v = rng.standard_normal(shape) * scale
    if positive:
        v = np.abs(v) + 0.5
    return Tensor(v, requires_grad=True)


def _with_params(module: tc.Module, **inputs: Tensor) -> dict[str, Tensor]:
    named = dict(inputs)
    named.update(module.named_parameters())
    return named


def degenerate_parameters(module: tc.Module) -> list[str]:
    """Parameters whose gradient vanishes by construction, or nearly so.

    Conv biases that feed a batch norm directly cancel exactly. A 1x1 adapter on a
    single-channel raster produces affine copies of one image, so the first
    block's 1x1 projection followed by a batch norm sees only that image again,
    and its gradient is nonzero only through the batch-norm epsilon.
    """
    out = []
    for prefix, m in module.named_modules():
        dot = prefix + "." if prefix else ""
        if isinstance(m, PAFF):
            out.append(dot + "conv.bias")
        elif isinstance(m, CoordAttentionBranch):
            out.append(dot + "conv_hw.bias")
        elif isinstance(m, DualEncoder):
            for side, adapter in (("cons", m.cons_adapter), ("eye", m.eye_adapter)):
                block = getattr(m, f"{side}_branch").blocks[0]
                if adapter.weight.shape[1] == 1 and block.proj is not None:
                    out.append(f"{dot}{side}_branch.blocks.0.proj.weight")
    return out


def _case_error(res, degenerate: set[str]) -> dict[str, float]:
    """Per-input relative error; degenerate inputs are measured against the case's gradient scale.

    A vanishing gradient makes its own norm a meaningless denominator, since the
    finite-difference roundoff then dominates; the largest analytic gradient norm
    among the other inputs is the reference scale instead.
    """
    errors = dict(res.per_input)
    scale = max((n[0] for k, n in res.norms.items() if k not in degenerate), default=0.0)
    for key in degenerate & set(res.norms):
        a, n, d = res.norms[key]
        errors[key] = d / max(a, n, scale, 1e-6)
    return errors


def _randomize(module: tc.Module, rng, scale: float = 0.5) -> None:
    # Perturb every parameter so zero-initialised gates and biases do not hide errors.
    for p in module.parameters():
        p.data += rng.standard_normal(p.shape) * scale * max(1e-2, float(np.std(p.data)) or 1.0)


# ---------------------------------------------------------------------------
# tensorcore ops

def _op_add(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    return (lambda: tc.add(a, b)), [a, b]


def _op_mul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 3, 1)
    return (lambda: tc.mul(a, b)), [a, b]


def _op_sub_div(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4, positive=True)
    return (lambda: tc.div(tc.sub(a, b), b)), [a, b]


def _op_neg_pow(rng):
    a = _leaf(rng, 6, positive=True)
    return (lambda: tc.neg(a**1.5)), [a]


def _op_exp_log(rng):
    a = _leaf(rng, 5, positive=True)
    return (lambda: tc.log(tc.exp(a * 0.5) + a)), [a]


def _op_matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    return (lambda: tc.matmul(a, b)), [a, b]


def _op_linear(rng):
    x, w, b = _leaf(rng, 4, 6), _leaf(rng, 3, 6), _leaf(rng, 3)
    return (lambda: tc.linear(x, w, b)), [x, w, b]


def _op_relu(rng):
    # Keep inputs away from the kink.
    v = rng.standard_normal((4, 5))
    v[np.abs(v) < 0.05] = 0.3
    x = Tensor(v, requires_grad=True)
    return (lambda: tc.relu(x)), [x]


def _op_sigmoid_tanh(rng):
    x = _leaf(rng, 4, 5, scale=2.0)
    return (lambda: tc.mul(tc.sigmoid(x), tc.tanh(x))), [x]


def _op_softmax(rng):
    x = _leaf(rng, 3, 7)
    return (lambda: tc.softmax(x, axis=-1)), [x]


def _op_log_softmax(rng):
    x = _leaf(rng, 3, 7)
    return (lambda: tc.log_softmax(x, axis=0)), [x]


def _op_cross_entropy(rng):
    x = _leaf(rng, 5, 4)
    labels = rng.integers(0, 4, 5)
    return (lambda: tc.cross_entropy(x, labels)), [x]


def _op_conv3(rng):
    x, w, b = _leaf(rng, 2, 3, 5, 5), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    stride = int(rng.integers(1, 3))
    return (lambda: tc.conv2d(x, w, b, stride=stride)), [x, w, b]


def _op_conv1(rng):
    x, w, b = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 5, 3, 1, 1), _leaf(rng, 5)
    stride = int(rng.integers(1, 3))
    return (lambda: tc.conv2d(x, w, b, stride=stride)), [x, w, b]


def _op_batchnorm(rng):
    x, g, b = _leaf(rng, 4, 3, 2, 2), _leaf(rng, 3), _leaf(rng, 3)
    rm, rv = np.zeros(3), np.ones(3)
    return (lambda: tc.batchnorm2d(x, g, b, rm.copy(), rv.copy(), training=True)), [x, g, b]


def _op_layer_norm(rng):
    x, g, b = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    return (lambda: tc.layer_norm(x, g, b)), [x, g, b]


def _op_shape_ops(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 2, 4)

    def fn():
        c = tc.concat([a, b], axis=1)
        t = tc.transpose(tc.reshape(c, (2, 20)), (1, 0))
        parts = tc.split(t, [5, 15], axis=0)
        return tc.mul(tc.getitem(parts[1], slice(2, 9)), tc.expand(tc.getitem(parts[0], 0), (7, 2)))

    return fn, [a, b]


def _op_reductions(rng):
    x = _leaf(rng, 3, 4, 5)
    return (lambda: tc.add(tc.mean(x, axis=(0, 2)), tc.amax(x, axis=2).sum(axis=0))), [x]


def _op_pools(rng):
    x = _leaf(rng, 2, 3, 4, 5)

    def fn():
        h = tc.directional_pool(x, "height", "max")
        w = tc.directional_pool(x, "width", "avg")
        return tc.add(tc.add(h, w), tc.global_pool(x, "max"))

    return fn, [x]


def _op_seq_pool(rng):
    x = _leaf(rng, 2, 6, 5)
    return (lambda: tc.adaptive_avg_pool_seq(x)), [x]


# ---------------------------------------------------------------------------
# network composites

def _small(**overrides) -> McanetConfig:
    return McanetConfig(**{**SMALL_CONFIG, **overrides})


def _mod_adapters(rng):
    cfg = _small()
    enc = DualEncoder(cfg, rng)
    _randomize(enc, rng)
    cons, eye = _leaf(rng, 2, 1, 8, 8), _leaf(rng, 2, 1, 8, 8)

    def fn():
        a, b = enc.adapt_inputs(cons, eye)
        return tc.concat([a, b], axis=1)

    params = {k: v for k, v in enc.named_parameters() if "adapter" in k}
    return fn, {"cons": cons, "eye": eye, **params}


def _mod_residual_block(rng):
    block = ResidualBlock(3, 4, int(rng.integers(1, 3)), rng)
    _randomize(block, rng)
    x = _leaf(rng, 2, 3, 6, 6)
    return (lambda: block(x)), _with_params(block, x=x), degenerate_parameters(block)


def _mod_residual_branch(rng):
    branch = ResidualBranch(2, [3, 4], 2, rng)
    _randomize(branch, rng)
    x = _leaf(rng, 2, 2, 8, 8)
    return (lambda: branch(x)), _with_params(branch, x=x), degenerate_parameters(branch)


def _mod_fusion_gate(rng):
    gate = FusionGate()
    gate.weight.data[:] = rng.standard_normal(1)
    x, y = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 2, 3, 4, 4)
    return (lambda: gate(x, y)), _with_params(gate, x=x, y=y), degenerate_parameters(gate)


def _mod_dual_encoder(rng):
    enc = DualEncoder(_small(), rng)
    _randomize(enc, rng)
    cons, eye = _leaf(rng, 2, 1, 8, 8), _leaf(rng, 2, 1, 8, 8)
    return (lambda: enc(cons, eye)), _with_params(enc, cons=cons, eye=eye), degenerate_parameters(enc)


def _mod_wave_filter(rng):
    cfg = _small()
    wf = WaveFilter(cfg.band_offsets, cfg.g_low)
    wf.theta.data[:] = rng.standard_normal(4)
    v = _leaf(rng, 2, cfg.wavelet_dim)
    return (lambda: wf(v)), _with_params(wf, v=v), degenerate_parameters(wf)


def _mod_sequence_embed(rng):
    ff = FreqFormer(_small(), rng)
    _randomize(ff, rng)
    v = _leaf(rng, 2, ff.dim)

    def fn():
        return ff.add_positional(ff.sequence_embed(v))

    params = {k: p for k, p in ff.named_parameters() if k.startswith(("embed", "pos_table"))}
    return fn, {"v": v, **params}


def _mod_attention(rng):
    attn = MultiHeadSelfAttention(8, 2, rng)
    _randomize(attn, rng)
    x = _leaf(rng, 2, 5, 8)
    return (lambda: attn(x)), _with_params(attn, x=x), degenerate_parameters(attn)


def _mod_encoder_layer(rng):
    layer = EncoderLayer(8, 2, 12, rng)
    _randomize(layer, rng)
    x = _leaf(rng, 2, 5, 8)
    return (lambda: layer(x)), _with_params(layer, x=x), degenerate_parameters(layer)


def _mod_freqformer(rng):
    ff = FreqFormer(_small(), rng)
    _randomize(ff, rng)
    v = _leaf(rng, 2, ff.dim)
    return (lambda: ff(v)), _with_params(ff, v=v), degenerate_parameters(ff)


def _mod_paff(rng):
    paff = PAFF(3, rng)
    _randomize(paff, rng)
    x = _leaf(rng, 2, 3, 4, 5)
    return (lambda: paff(x)), _with_params(paff, x=x), degenerate_parameters(paff)


def _coord_case(mode):
    def build(rng):
        branch = CoordAttentionBranch(6, 32, mode, rng)
        _randomize(branch, rng)
        f = _leaf(rng, 2, 6, 4, 5)
        return (lambda: tc.concat([tc.reshape(s, (2, -1)) for s in branch(f)], axis=1)), \
            _with_params(branch, f=f), degenerate_parameters(branch)

    return build


def _mod_scape_fuse(rng):
    scape = Scape(_small(), 4, rng)
    _randomize(scape, rng)
    img, tmp = _leaf(rng, 2, 4, 3, 3), _leaf(rng, 2, 8)
    params = {k: p for k, p in scape.named_parameters() if k.startswith(("temporal_proj", "mix", "paff"))}
    return (lambda: scape.fuse(img, tmp)), {"img": img, "tmp": tmp, **params}, degenerate_parameters(scape)


def _mod_scape(rng):
    scape = Scape(_small(), 4, rng)
    _randomize(scape, rng)
    img, tmp = _leaf(rng, 2, 4, 3, 3), _leaf(rng, 2, 8)
    return (lambda: scape(img, tmp)), _with_params(scape, img=img, tmp=tmp), degenerate_parameters(scape)


def _mod_full_model(rng):
    # Default widths at 16x16 resolution with a 2-sample batch.
    model = McanetModel(McanetConfig(n_classes=4, image_res=16, init_seed=int(rng.integers(1 << 31))))
    _randomize(model, rng, scale=0.2)
    cons, eye = _leaf(rng, 2, 1, 16, 16), _leaf(rng, 2, 1, 16, 16)
    wav = _leaf(rng, 2, model.config.wavelet_dim)
    named = _with_params(model, cons=cons, eye=eye, wav=wav)
    return (lambda: model(cons, eye, wav)), named, degenerate_parameters(model)


@dataclass(frozen=True)
class GradCase:
    name: str
    scope: str
    build: Callable
    tol: float = OP_TOL
    eps: float = 1e-6
    max_coords: int | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS


CASES: dict[str, GradCase] = {}


def _register(*cases: GradCase) -> None:
    for case in cases:
        CASES[case.name] = case


_register(*(GradCase(name[4:], "ops", fn, eps=1e-5) for name, fn in list(globals().items())
            if name.startswith("_op_")))
_register(
    GradCase("adapters", "encoder", _mod_adapters),
    GradCase("residual_block", "encoder", _mod_residual_block),
    GradCase("residual_branch", "encoder", _mod_residual_branch, max_coords=24),
    GradCase("dual_encoder", "encoder", _mod_dual_encoder, max_coords=12),
    GradCase("fusion_gate", "fusion-gate", _mod_fusion_gate),
    GradCase("wave_filter", "freqformer", _mod_wave_filter),
    GradCase("sequence_embed", "freqformer", _mod_sequence_embed, max_coords=48),
    GradCase("attention", "freqformer", _mod_attention),
    GradCase("encoder_layer", "freqformer", _mod_encoder_layer, max_coords=48),
    GradCase("freqformer", "freqformer", _mod_freqformer, max_coords=24),
    GradCase("paff", "paff", _mod_paff),
    GradCase("coord_attention_avg", "scape", _coord_case("avg")),
    GradCase("coord_attention_max", "scape", _coord_case("max")),
    GradCase("scape_fuse", "scape", _mod_scape_fuse, max_coords=48),
    GradCase("scape", "scape", _mod_scape, max_coords=24),
    GradCase("full_model", "model", _mod_full_model, tol=MODEL_TOL, max_coords=4, seeds=(0, 1)),
)

SCOPES = ("ops", "encoder", "fusion-gate", "freqformer", "paff", "scape", "model")


@dataclass
class CaseReport:
    name: str
    scope: str
    max_rel_error: float
    tol: float
    seeds: list[int]
    checked_coords: int
    seconds: float
    worst_input: str = ""
    per_seed: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)

    def to_dict(self) -> dict:
        return {"name": self.name, "scope": self.scope, "max_rel_error": self.max_rel_error,
                "tol": self.tol, "passed": self.passed, "seeds": self.seeds,
                "checked_coords": self.checked_coords, "seconds": round(self.seconds, 3),
                "worst_input": self.worst_input}


def cases_for(scope: str) -> list[GradCase]:
    if scope == "all":
        return list(CASES.values())
    if scope not in SCOPES:
        raise InvalidArgumentError(f"unknown gradcheck scope {scope!r}; choose from "
                                   f"{', '.join(SCOPES + ('all',))}")
    return [c for c in CASES.values() if c.scope == scope]


def run_case(case: GradCase, seeds=None) -> CaseReport:
    seeds = list(case.seeds if seeds is None else seeds)
    start = time.perf_counter()
    worst, worst_input, coords, per_seed = 0.0, "", 0, []
    with tc.default_dtype(np.float64):
        for seed in seeds:
            fn, inputs, *rest = case.build(np.random.default_rng([seed, 0x67636B]))
            res = check_gradients(fn, inputs, eps=case.eps, max_coords=case.max_coords, seed=seed,
                                  name=case.name)
            errors = _case_error(res, set(rest[0]) if rest else set())
            seed_worst = max(errors.values())
            per_seed.append(seed_worst)
            coords += res.checked_coords
            if not seed_worst <= worst:
                worst = seed_worst
                worst_input = max(errors, key=errors.get)
    return CaseReport(case.name, case.scope, float(worst), case.tol, seeds, coords,
                      time.perf_counter() - start, worst_input, per_seed)


def run_gradchecks(scope: str = "all", seeds=None, progress: Callable | None = None) -> list[CaseReport]:
    """Run every case in ``scope``; ``seeds`` overrides each case's own seed list."""
    reports = []
    for case in cases_for(scope):
        rep = run_case(case, seeds)
        if progress is not None:
            progress(rep)
        reports.append(rep)
    return reports
