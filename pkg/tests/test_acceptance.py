"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (also repeated in the terminal
summary) before asserting.
"""

import contextlib
import io
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from amrkit import cli, gradsuite
from amrkit import featex as fx
from amrkit import sigsynth as ss
from amrkit import tensorcore as tc
from amrkit.featex import synth_features
from amrkit.mcanet import (
    CoordAttentionBranch,
    FusionGate,
    McanetConfig,
    McanetModel,
    MultiHeadSelfAttention,
    Scape,
    apply_attention,
    coord_mid_channels,
    load_model,
    save_model,
)
from amrkit.tensorcore import Tensor
from amrkit.trainer import TrainConfig, evaluate, split_dataset, train
from conftest import ACCEPTANCE_LINES

TINY = dict(d_model=16, seq_len=4, n_heads=2, n_encoder_layers=1, ffn_dim=32, cnn_channels=[8, 16],
            cnn_blocks_per_stage=1, adapter_channels=8, temporal_channels=8, fused_channels=16)

# Learning-check training settings, the best of the pilot runs (see docs/learning_check.md).
LEARNING_TRAIN = dict(lr=1e-3, epochs=30, batch_size=64, patience=10, augment=True)
LEARNING_SEEDS = (0, 1, 2)
LEARNING_TARGET = 0.95
LEARNING_BUDGET_S = 15 * 60


def record(n: int, title: str, checks: list[tuple[str, bool]], capsys=None):
    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{name} {'ok' if passed else 'FAILED'}" for name, passed in checks)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n} {title}: {detail}"
    ACCEPTANCE_LINES[n] = line
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return ok


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


# ---------------------------------------------------------------------------
# 1. gradient integrity

def test_criterion_1_gradient_integrity(tmp_path, capsys):
    t0 = time.process_time()
    code, out, err = run_cli("gradcheck", "all", "--json", "--out", tmp_path)
    cpu = time.process_time() - t0
    doc = json.loads(out)
    checks = {c["name"]: c for c in doc["result"]["checks"]}
    composites = ["paff", "coord_attention_avg", "coord_attention_max", "scape_fuse", "fusion_gate",
                  "wave_filter", "encoder_layer"]
    op_cases = [c.name for c in gradsuite.cases_for("ops")]
    worst_op = max(checks[n]["max_rel_error"] for n in op_cases)
    worst_comp = max(checks[n]["max_rel_error"] for n in composites)
    full = checks["full_model"]
    results = [
        (f"exit code {code}", code == 0),
        (f"{len(op_cases)} op cases worst {worst_op:.1e} < 1e-4", worst_op < 1e-4),
        (f"composites worst {worst_comp:.1e} < 1e-4", worst_comp < 1e-4),
        (f"every case under its tolerance ({len(checks)} cases)",
         all(c["max_rel_error"] < c["tol"] and c["tol"] <= 1e-4 for n, c in checks.items() if n != "full_model")),
        (f"full model 16x16/2 samples {full['max_rel_error']:.1e} < 1e-3", full["max_rel_error"] < 1e-3),
        (f"cpu {cpu:.0f}s < 300s", cpu < 300),
    ]
    assert record(1, "gradient integrity", results, capsys)


# ---------------------------------------------------------------------------
# 2. featurization laws

def test_criterion_2_featurization_laws(capsys):
    # (a) wavelet layout
    f = ss.modulate("QPSK", 16, 8, seed=0)
    v = fx.pack_wavelet_features(f)
    sizes = [v.band_offsets[n][1] - v.band_offsets[n][0] for n in fx.BAND_NAMES]
    a_ok = v.values.shape == (282,) and sizes == [37, 37, 67] * 2

    # (b) periodic-mode energy preservation
    rng = np.random.default_rng(0)
    energy_err = 0.0
    for _ in range(200):
        x = rng.standard_normal(128) * rng.uniform(0.1, 10)
        parts = fx.dwt_db4_two_level(x, "periodic")
        energy_err = max(energy_err, abs(sum((p**2).sum() for p in parts) - (x**2).sum()))

    # (c) eye-trajectory count by exhaustive enumeration
    c_ok, cases = True, 0
    for k in (2, 4, 8, 16):
        for length in range(16, 257):
            if length < 2 * k:
                continue
            x = np.arange(float(length))
            brute = [x[s:s + 2 * k] for s in range(0, length - 2 * k + 1, k)]
            traj = fx.extract_eye_trajectories(x, k)
            c_ok &= len(traj) == len(brute) == length // k - 1 and np.array_equal(traj, np.array(brute))
            cases += 1

    # (d) constellation mass conservation
    rng = np.random.default_rng(1)
    d_ok = True
    for n in range(1000):
        scheme = ss.MANDATORY_SCHEMES[n % len(ss.MANDATORY_SCHEMES)]
        frame = ss.apply_channel(ss.modulate(scheme, 16, 8, seed=n),
                                 ss.ChannelConfig(float(rng.integers(-20, 19)), rng_seed=n))
        img = fx.rasterize_constellation(frame, resolution=64)
        d_ok &= img.pixels.sum() == frame.length == 128

    results = [("(a) 282 values, bands (37,37,67)x2", a_ok),
               (f"(b) periodic energy error {energy_err:.1e} < 1e-9", energy_err < 1e-9),
               (f"(c) eye count floor(L/k)-1 over {cases} (L,k) cases", bool(c_ok)),
               ("(d) constellation mass on 1000 frames", bool(d_ok))]
    assert record(2, "featurization laws", results, capsys)


# ---------------------------------------------------------------------------
# 3. equation unit checks

def _loop_attention(x, wq, wk, wv, wo, bo):
    n, t, d = x.shape
    out = np.zeros((n, t, d))
    for b in range(n):
        q, k, v = x[b] @ wq.T, x[b] @ wk.T, x[b] @ wv.T
        for i in range(t):
            s = np.array([sum(q[i, m] * k[j, m] for m in range(d)) / np.sqrt(d) for j in range(t)])
            w = np.exp(s - s.max())
            w /= w.sum()
            out[b, i] = sum(w[j] * v[j] for j in range(t)) @ wo.T + bo
    return out


def _loop_pools(f):
    n, c, h, w = f.shape
    avg_h, max_h = np.zeros((n, c, h, 1)), np.zeros((n, c, h, 1))
    avg_w, max_w = np.zeros((n, c, 1, w)), np.zeros((n, c, 1, w))
    for a in range(n):
        for k in range(c):
            for i in range(h):
                row = [f[a, k, i, j] for j in range(w)]
                avg_h[a, k, i, 0] = sum(row) / w
                max_h[a, k, i, 0] = max(row)
            for j in range(w):
                col = [f[a, k, i, j] for i in range(h)]
                avg_w[a, k, 0, j] = sum(col) / h
                max_w[a, k, 0, j] = max(col)
    return avg_h, max_h, avg_w, max_w


def test_criterion_3_equation_checks(capsys):
    rng = np.random.default_rng(0)
    with tc.default_dtype(np.float64):
        # fusion gate: convex combination, midpoint at zero weight
        gate = FusionGate()
        x, y = Tensor(rng.standard_normal((4, 8, 5, 5))), Tensor(rng.standard_normal((4, 8, 5, 5)))
        mid_ok = np.array_equal(gate(x, y).data, (x.data + y.data) / 2)
        convex_ok = True
        for w in np.linspace(-20, 20, 41):
            gate.weight.data[:] = w
            z = gate(x, y).data
            convex_ok &= bool(np.all(z >= np.minimum(x.data, y.data) - 1e-12)
                              and np.all(z <= np.maximum(x.data, y.data) + 1e-12))

        # attention: row-stochastic and single-head loop oracle
        attn = MultiHeadSelfAttention(16, 4, rng)
        attn(Tensor(rng.standard_normal((3, 8, 16)) * 4))
        p = attn.last_attention
        row_err = float(np.abs(p.sum(-1) - 1).max())
        single = MultiHeadSelfAttention(8, 1, rng)
        single.w_o.bias.data[:] = rng.standard_normal(8)
        xa = Tensor(rng.standard_normal((2, 6, 8)))
        ref = _loop_attention(xa.data, single.w_q.weight.data, single.w_k.weight.data, single.w_v.weight.data,
                              single.w_o.weight.data, single.w_o.bias.data)
        attn_err = float(np.abs(single(xa).data - ref).max())

        # directional / global pooling and the attention product vs loops
        f = Tensor(rng.standard_normal((2, 5, 6, 7)))
        lh, mh, lw, mw = _loop_pools(f.data)
        pool_err = max(
            np.abs(tc.directional_pool(f, "height", "avg").data - lh).max(),
            np.abs(tc.directional_pool(f, "height", "max").data - mh).max(),
            np.abs(tc.directional_pool(f, "width", "avg").data - lw).max(),
            np.abs(tc.directional_pool(f, "width", "max").data - mw).max(),
            np.abs(tc.global_pool(f, "avg").data[..., 0, 0] - lh[..., 0].mean(-1)).max(),
            np.abs(tc.global_pool(f, "max").data[..., 0, 0] - mh[..., 0].max(-1)).max(),
        )
        sh, sw, sc = (Tensor(rng.uniform(size=s)) for s in ((2, 5, 6, 1), (2, 5, 1, 7), (2, 5, 1, 1)))
        prod = apply_attention(f, sh, sw, sc).data
        loop = np.zeros_like(prod)
        for a, k, i, j in np.ndindex(*prod.shape):
            loop[a, k, i, j] = f.data[a, k, i, j] * sh.data[a, k, i, 0] * sw.data[a, k, 0, j] * sc.data[a, k, 0, 0]
        pool_err = max(pool_err, float(np.abs(prod - loop).max()))

        # bottleneck width table
        table = {(256, 32): 8, (64, 32): 8, (512, 16): 32}
        table_ok = all(coord_mid_channels(c, r) == m for (c, r), m in table.items())
        branch_ok = all(CoordAttentionBranch(c, r, "avg", rng).mid_channels == m for (c, r), m in table.items())

        # saturated sigmoids: both halves of SCAPE output equal the fused map
        cfg = McanetConfig(n_classes=4, image_res=16, **TINY)
        scape = Scape(cfg, 16, rng)
        for branch in (scape.max_branch, scape.avg_branch):
            for conv in (branch.conv_h, branch.conv_w, branch.conv_c):
                conv.weight.data[:] = 0
                conv.bias.data[:] = 20.0
        fused = scape.fuse(Tensor(rng.standard_normal((2, 16, 4, 4))), Tensor(rng.standard_normal((2, 16))))
        out = scape.attend(fused).data
        c = cfg.fused_channels
        sat_err = max(float(np.abs(out[:, :c] - fused.data).max()), float(np.abs(out[:, c:] - fused.data).max()))
        sat_rel = sat_err / float(np.abs(fused.data).max())

    results = [("gate midpoint at w=0", mid_ok), ("gate convex over w in [-20,20]", bool(convex_ok)),
               (f"attention rows sum to 1 (err {row_err:.1e})", row_err < 1e-12),
               (f"attention vs loop {attn_err:.1e} < 1e-10", attn_err < 1e-10),
               (f"pooling vs loop {pool_err:.1e} < 1e-12", pool_err < 1e-12),
               ("C_mid table", table_ok and branch_ok),
               (f"saturated halves equal F (rel {sat_rel:.1e} < 1e-8)", sat_rel < 1e-8)]
    assert record(3, "equation unit checks", results, capsys)


# ---------------------------------------------------------------------------
# 4. learning check

@pytest.fixture(scope="module")
def learning_set():
    m = ss.DatasetManifest(["BPSK", "QPSK", "PAM4", "QAM16"], [18.0], 400, seed=0)
    return synth_features(m, 64)


def test_criterion_4_learning_check(learning_set, capsys):
    results = []
    for seed in LEARNING_SEEDS:
        t0, w0 = time.process_time(), time.perf_counter()
        sp = split_dataset(learning_set, seed=seed)
        tr, va, te = (learning_set.subset(i) for i in sp)
        with tc.default_dtype(np.float32):
            model = McanetModel(McanetConfig(n_classes=4, init_seed=seed))
        res = train(model, tr, va, TrainConfig(seed=seed, **LEARNING_TRAIN))
        acc = evaluate(model, te).overall_accuracy
        cpu, wall = time.process_time() - t0, time.perf_counter() - w0
        with capsys.disabled():
            print(f"\nlearning check seed {seed}: test acc {acc:.4f}, best epoch {res.best_epoch}, "
                  f"{res.epochs_run} epochs, cpu {cpu:.0f}s, wall {wall:.0f}s")
        results.append((f"seed {seed} acc {acc:.3f} >= {LEARNING_TARGET}", acc >= LEARNING_TARGET))
        results.append((f"seed {seed} {res.epochs_run} epochs <= 30", res.epochs_run <= 30))
        results.append((f"seed {seed} cpu {cpu:.0f}s < {LEARNING_BUDGET_S}s", cpu < LEARNING_BUDGET_S))
    assert record(4, "learning check", results, capsys)


# ---------------------------------------------------------------------------
# 5. SNR monotonicity

SNR_SCHEMES = ["BPSK", "QPSK", "GFSK"]
SNR_MODEL = dict(image_res=32, **TINY)
SNR_TRAIN = dict(lr=1e-3, epochs=15, batch_size=64, patience=15)


def test_criterion_5_snr_monotonicity(capsys):
    grid = list(range(-20, 19, 2))
    m = ss.DatasetManifest(SNR_SCHEMES, grid, 60, seed=11)
    fs = synth_features(m, SNR_MODEL["image_res"])
    tr, va, te = (fs.subset(i) for i in split_dataset(fs, seed=0))
    with tc.default_dtype(np.float32):
        model = McanetModel(McanetConfig(n_classes=3, **SNR_MODEL))
    train(model, tr, va, TrainConfig(seed=0, **SNR_TRAIN))
    rep = evaluate(model, te)
    snrs = rep.snr_grid
    q = len(snrs) // 4
    low = float(np.mean([rep.per_snr_accuracy[s] for s in snrs[:q]]))
    high = float(np.mean([rep.per_snr_accuracy[s] for s in snrs[-q:]]))
    with capsys.disabled():
        print("\nper-SNR test accuracy: " + ", ".join(f"{s:g}:{rep.per_snr_accuracy[s]:.2f}" for s in snrs))
    results = [(f"{len(snrs)} SNR buckets", len(snrs) == 20),
               (f"top quartile {high:.3f} - bottom quartile {low:.3f} = {100 * (high - low):.1f} pp >= 30",
                high - low >= 0.30)]
    assert record(5, "SNR monotonicity", results, capsys)


# ---------------------------------------------------------------------------
# 6. ablation mechanics

def test_criterion_6_ablation_mechanics(tmp_path, capsys):
    m = ss.DatasetManifest(["BPSK", "QPSK", "PAM4", "QAM16"], [10.0, 18.0], 20, seed=2)
    feats = tmp_path / "f.amrf"
    fx.write_features(synth_features(m, 16), feats)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": TINY, "train": {"epochs": 3, "lr": 1e-3, "batch_size": 32}}))
    code, out, err = run_cli("ablate", feats, "--config", cfg, "--out", tmp_path / "abl", "--seeds", "0,1",
                             "--json")
    doc = json.loads(out) if code == 0 else {"result": {"summary": {}, "runs": []}}
    summary, runs = doc["result"]["summary"], doc["result"]["runs"]
    n = {v: s["n_parameters"] for v, s in summary.items()}
    order = ["full", "wo_fusion_gate", "wo_wavefilter", "wo_paff"]
    strict = len(n) == 4 and all(n[a] > n[b] for a, b in zip(order, order[1:]))
    complete = len(runs) == 8 and all(1 <= r["best_epoch"] <= r["epochs_run"] for r in runs)
    ebv = all("epochs_to_best_val" in s and len(s["epochs_to_best_val"]) == 2 for s in summary.values())
    csv_text = (tmp_path / "abl" / "ablation.csv").read_text() if code == 0 else ""
    results = [(f"one command, exit {code}", code == 0),
               (f"4 variants x 2 seeds completed ({len(runs)} runs)", complete),
               ("params " + " > ".join(f"{v}={n.get(v)}" for v in order), strict),
               ("epochs-to-best-val reported (json and csv)", ebv and "epochs_to_best_val_mean" in csv_text)]
    assert record(6, "ablation mechanics", results, capsys)


# ---------------------------------------------------------------------------
# 7. reproducibility and formats

def test_criterion_7_reproducibility(tmp_path, capsys):
    m = ss.DatasetManifest(["BPSK", "QPSK", "8PSK", "GFSK"], [-10.0, 0.0, 10.0], 12, seed=7)
    a = ss.synth_dataset(m, tmp_path / "a.amrd")
    b = ss.synth_dataset(m, tmp_path / "b.amrd", workers=2, chunk_size=16)
    data_ok = (tmp_path / "a.amrd").read_bytes() == (tmp_path / "b.amrd").read_bytes() and a.sha256 == b.sha256
    other = ss.synth_dataset(replace(m, seed=8), tmp_path / "c.amrd")
    seed_matters = other.sha256 != a.sha256

    fa = fx.featurize_dataset(ss.read_dataset(tmp_path / "a.amrd"), 16)
    fx.write_features(fa, tmp_path / "a.amrf")
    fx.write_features(fx.featurize_dataset(ss.read_dataset(tmp_path / "b.amrd"), 16, workers=2, chunk_size=10),
                      tmp_path / "b.amrf")
    feat_ok = (tmp_path / "a.amrf").read_bytes() == (tmp_path / "b.amrf").read_bytes()

    blobs = []
    for run in range(2):
        tr, va, _ = (fa.subset(i) for i in split_dataset(fa, seed=3))
        with tc.default_dtype(np.float32):
            model = McanetModel(McanetConfig(n_classes=4, image_res=16, init_seed=3, **TINY))
        res = train(model, tr, va, TrainConfig(seed=3, epochs=2, lr=1e-3, batch_size=16),
                    out_dir=tmp_path / f"run{run}")
        blobs.append(res.checkpoint.read_bytes())
    ckpt_ok = blobs[0] == blobs[1]

    loaded = load_model(tmp_path / "run0" / "model.amrw")
    save_model(loaded, tmp_path / "again.amrw")
    state_a, state_b = model.state_dict(), loaded.state_dict()
    roundtrip_ok = ((tmp_path / "again.amrw").read_bytes() == blobs[0] and list(state_a) == list(state_b)
                    and all(state_a[k].dtype == state_b[k].dtype and state_a[k].tobytes() == state_b[k].tobytes()
                            for k in state_a))
    logits_ok = np.array_equal(model.predict(fa.constellation, fa.eye, fa.wavelet),
                               loaded.predict(fa.constellation, fa.eye, fa.wavelet))

    worst_db, worst_var = 0.0, 0.0
    for target in (-20.0, 0.0, 18.0):
        measured = []
        for s in range(1000):
            frame = ss.modulate(ss.MANDATORY_SCHEMES[s % 8], 16, 8, seed=s)
            _, real = ss.apply_channel(frame, ss.ChannelConfig(target, rng_seed=10_000 + s), True)
            measured.append(real.measured_snr_db())
            expect = np.mean(np.abs(real.clean) ** 2) / 10 ** (target / 10)
            worst_var = max(worst_var, abs(real.noise_variance / expect - 1))
        worst_db = max(worst_db, abs(float(np.mean(measured)) - target))

    results = [("datasets byte-identical (serial vs 2 workers)", data_ok), ("seed changes bytes", seed_matters),
               ("features byte-identical", feat_ok), ("checkpoints byte-identical", ckpt_ok),
               ("checkpoint round-trip bit-exact", roundtrip_ok and logits_ok),
               (f"AWGN mean error {worst_db:.3f} dB <= 0.2 over 1000 frames at -20/0/18 dB", worst_db <= 0.2),
               (f"noise variance calibration rel err {worst_var:.1e}", worst_var < 1e-12)]
    assert record(7, "reproducibility and formats", results, capsys)
