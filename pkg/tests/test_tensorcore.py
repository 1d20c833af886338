import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import inspect

from amrkit import gradsuite
from amrkit import tensorcore as tc
from amrkit.errors import FormatError, InvalidArgumentError, LifecycleError, ShapeError
from amrkit.tensorcore import Tensor, check_gradients

SEEDS = range(10)
TOL = 1e-4


def leaf(rng, *shape, scale=1.0, positive=False):
    v = rng.standard_normal(shape) * scale
    if positive:
        v = np.abs(v) + 0.5
    return Tensor(v, requires_grad=True)


@pytest.fixture(autouse=True)
def float64():
    with tc.default_dtype(np.float64):
        yield


# ---------------------------------------------------------------------------
# finite-difference checks, one case per op, each over ten seeds

OP_CASES = sorted(c.name for c in gradsuite.cases_for("ops"))


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", OP_CASES)
def test_op_gradients_match_finite_differences(op, seed):
    report = gradsuite.run_case(gradsuite.CASES[op], seeds=[seed])
    assert report.max_rel_error < TOL, (report.worst_input, report.max_rel_error)


def test_every_public_differentiable_op_has_a_case():
    covered = {"add", "mul", "sub", "div", "neg", "power", "exp", "log", "matmul", "linear", "relu",
               "sigmoid", "tanh", "softmax", "log_softmax", "cross_entropy", "conv2d", "batchnorm2d",
               "layer_norm", "concat", "transpose", "reshape", "split", "getitem", "expand", "mean",
               "amax", "sum_", "directional_pool", "global_pool", "adaptive_avg_pool_seq"}
    source = inspect.getsource(gradsuite)
    for name in covered:
        assert f"tc.{name}(" in source or name in ("power", "sum_"), name
    public = {n for n in tc.__all__ if callable(getattr(tc, n)) and getattr(tc, n).__module__.endswith(".ops")}
    assert public <= covered | {"power"}, public - covered


# ---------------------------------------------------------------------------
# forward semantics

def test_softmax_rows_normalised_and_positive():
    x = Tensor(np.random.default_rng(0).standard_normal((6, 9)) * 30)
    p = tc.softmax(x, axis=1).data
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_translation_invariance(x, c):
    a = tc.softmax(Tensor(x), axis=-1).data
    b = tc.softmax(Tensor(x + c), axis=-1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_survives_huge_logits():
    p = tc.softmax(Tensor(np.array([[1000.0, 0.0, -1000.0]])), axis=-1).data
    assert np.isfinite(p).all()
    assert p[0, 0] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (4, 6), elements=st.floats(-1e3, 1e3)))
def test_relu_product_is_zero(x):
    assert np.all(tc.relu(Tensor(-x)).data * tc.relu(Tensor(x)).data == 0)


def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 1, 7, 7))
    out = tc.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv3x3_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    for stride in (1, 2):
        out = tc.conv2d(Tensor(x), Tensor(w), stride=stride).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((1, 3, -(-5 // stride), -(-6 // stride)))
        for o in range(3):
            for i in range(ref.shape[2]):
                for j in range(ref.shape[3]):
                    ref[0, o, i, j] = np.sum(
                        xp[0, :, i * stride:i * stride + 3, j * stride:j * stride + 3] * w[o])
        np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (4,)), ((2, 1, 4), (3, 1)), ((5, 1), (1, 6))])
def test_broadcasting_matches_explicit_tiling(shape_a, shape_b):
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(shape_a), rng.standard_normal(shape_b)
    out_shape = np.broadcast_shapes(shape_a, shape_b)
    ta = np.tile(a.reshape((1,) * (len(out_shape) - a.ndim) + a.shape),
                 [o // s for o, s in zip(out_shape, (1,) * (len(out_shape) - a.ndim) + a.shape)])
    tb = np.tile(b.reshape((1,) * (len(out_shape) - b.ndim) + b.shape),
                 [o // s for o, s in zip(out_shape, (1,) * (len(out_shape) - b.ndim) + b.shape)])
    np.testing.assert_array_equal(tc.add(Tensor(a), Tensor(b)).data, ta + tb)
    np.testing.assert_array_equal(tc.mul(Tensor(a), Tensor(b)).data, ta * tb)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        tc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    msg = str(err.value)
    assert "(2, 3)" in msg and "(4,)" in msg and "add" in msg
    with pytest.raises(ShapeError):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_batchnorm_training_statistics():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 5, 6, 6)) * 3 + 7
    rm, rv = np.zeros(5), np.ones(5)
    out = tc.batchnorm2d(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)), rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)
    # Running stats moved a tenth of the way toward the batch stats.
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)


def test_batchnorm_eval_uses_running_stats():
    x = np.random.default_rng(5).standard_normal((2, 3, 4, 4))
    rm, rv = np.array([1.0, 2.0, 3.0]), np.array([4.0, 1.0, 0.25])
    out = tc.batchnorm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=False).data
    ref = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# pooling against loop oracles

def test_width_pool_example():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    out = tc.directional_pool(x, "height", "avg").data
    np.testing.assert_array_equal(out.reshape(-1), [1.5, 3.5])
    assert out.shape == (1, 2, 1)


@pytest.mark.parametrize("mode", ["avg", "max"])
def test_pool_constant_map(mode):
    x = Tensor(np.full((3, 4, 5), 2.5))
    for axis in ("height", "width"):
        np.testing.assert_array_equal(tc.directional_pool(x, axis, mode).data, 2.5)
    np.testing.assert_array_equal(tc.global_pool(x, mode).data, 2.5)


def test_global_pool_one_hot():
    x = np.zeros((1, 4, 8))
    x[0, 2, 5] = 1.0
    assert tc.global_pool(Tensor(x), "avg").data.item() == pytest.approx(1 / 32, abs=1e-15)
    assert tc.global_pool(Tensor(x), "max").data.item() == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_directional_pool_loop_oracle(seed):
    x = np.random.default_rng(seed).standard_normal((4, 8, 8))
    c_, h_, w_ = x.shape
    oracle = {}
    for mode in ("avg", "max"):
        by_h = np.zeros((c_, h_, 1))
        by_w = np.zeros((c_, 1, w_))
        for c in range(c_):
            for h in range(h_):
                vals = [x[c, h, i] for i in range(w_)]
                by_h[c, h, 0] = sum(vals) / w_ if mode == "avg" else max(vals)
            for w in range(w_):
                vals = [x[c, j, w] for j in range(h_)]
                by_w[c, 0, w] = sum(vals) / h_ if mode == "avg" else max(vals)
        oracle[mode] = (by_h, by_w)
        np.testing.assert_allclose(tc.directional_pool(Tensor(x), "height", mode).data, by_h, atol=1e-12)
        np.testing.assert_allclose(tc.directional_pool(Tensor(x), "width", mode).data, by_w, atol=1e-12)
        flat = [x[c].ravel() for c in range(c_)]
        glob = np.array([(sum(f) / f.size if mode == "avg" else max(f)) for f in flat]).reshape(c_, 1, 1)
        np.testing.assert_allclose(tc.global_pool(Tensor(x), mode).data, glob, atol=1e-12)


def test_batched_directional_pool_matches_unbatched():
    x = np.random.default_rng(7).standard_normal((3, 4, 5, 6))
    for axis in ("height", "width"):
        batched = tc.directional_pool(Tensor(x), axis, "max").data
        for n in range(3):
            np.testing.assert_array_equal(batched[n], tc.directional_pool(Tensor(x[n]), axis, "max").data)


def test_adaptive_seq_pool_loop_oracle():
    x = np.random.default_rng(8).standard_normal((8, 6))
    ref = np.array([sum(x[t, d] for t in range(8)) / 8 for d in range(6)])
    np.testing.assert_allclose(tc.adaptive_avg_pool_seq(Tensor(x)).data, ref, atol=1e-12)


def test_pool_bad_axis():
    with pytest.raises(ShapeError):
        tc.directional_pool(Tensor(np.ones((2, 3, 3))), "depth")
    with pytest.raises(ShapeError):
        tc.directional_pool(Tensor(np.ones((3, 3))), "height")


def test_max_gradient_goes_to_first_argmax():
    x = Tensor(np.array([[[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]]), requires_grad=True)
    tc.sum_(tc.directional_pool(x, "height", "max")).backward()
    np.testing.assert_array_equal(x.grad, [[[0, 1, 0], [1, 0, 0]]])


# ---------------------------------------------------------------------------
# backward lifecycle

def test_weighted_sum_gradient_is_input():
    x = np.random.default_rng(9).standard_normal(6)
    w = Tensor(np.zeros(6), requires_grad=True)
    tc.sum_(tc.mul(w, Tensor(x))).backward()
    np.testing.assert_array_equal(w.grad, x)


def test_position_injected_linear_weight_gradient():
    # f = W (x + P) + b, loss = sum(f): dL/dW = outer(1, x + P).
    rng = np.random.default_rng(10)
    x, p = rng.standard_normal(4), rng.standard_normal(4)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    f = tc.linear(tc.reshape(tc.add(Tensor(x), Tensor(p)), (1, 4)), w, b)
    tc.sum_(f).backward()
    np.testing.assert_allclose(w.grad, np.outer(np.ones(3), x + p), atol=1e-15)
    np.testing.assert_array_equal(b.grad, np.ones(3))


def test_backward_twice_is_lifecycle_error():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = tc.sum_(tc.mul(w, w))
    loss.backward()
    with pytest.raises(LifecycleError):
        loss.backward()


def test_retain_graph_allows_second_pass_and_accumulates():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = tc.sum_(tc.mul(w, w))
    loss.backward(retain_graph=True)
    loss.backward()
    np.testing.assert_array_equal(w.grad, 4 * w.data)


def test_non_scalar_backward_rejected():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(InvalidArgumentError):
        tc.mul(w, w).backward()


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with tc.no_grad():
        out = tc.mul(w, w)
    assert not out.requires_grad


def test_cross_entropy_label_range():
    with pytest.raises(InvalidArgumentError):
        tc.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_default_dtype_is_float32_outside_context():
    with tc.default_dtype(np.float32):
        assert Tensor([1, 2]).dtype == np.float32
        assert tc.Linear(3, 2, np.random.default_rng(0)).weight.dtype == np.float32


# ---------------------------------------------------------------------------
# modules and checkpoints

class _Net(tc.Module):
    def __init__(self, rng):
        super().__init__()
        self.conv = tc.Conv2d(2, 3, 3, rng)
        self.bn = tc.BatchNorm2d(3)
        self.head = tc.Linear(3, 2, rng)

    def forward(self, x):
        h = tc.relu(self.bn(self.conv(x)))
        return self.head(tc.reshape(tc.global_pool(h), (x.shape[0], 3)))


def test_module_parameter_names_unique_and_ordered():
    net = _Net(np.random.default_rng(0))
    names = [n for n, _ in net.named_parameters()]
    assert names == ["conv.weight", "conv.bias", "bn.gamma", "bn.beta", "head.weight", "head.bias"]
    assert len(set(names)) == len(names)
    assert net.num_parameters() == 2 * 3 * 9 + 3 + 3 + 3 + 6 + 2


def test_module_gradcheck():
    rng = np.random.default_rng(1)
    net = _Net(rng)
    x = Tensor(rng.standard_normal((3, 2, 4, 4)))
    params = dict(net.named_parameters())
    result = check_gradients(lambda: net(x), params, seed=1)
    assert result.passed(TOL), result.per_input


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    with tc.default_dtype(np.float32):
        net = _Net(np.random.default_rng(2))
    state = net.state_dict()
    path = tc.save_state(state, tmp_path / "w.amrw")
    back = tc.load_state(path)
    assert list(back) == list(state)
    for name in state:
        assert back[name].dtype == np.float32
        assert back[name].tobytes() == np.asarray(state[name], dtype=np.float32).tobytes()
    assert tc.encode_state(back) == path.read_bytes()


def test_checkpoint_layout():
    blob = tc.encode_state({"ab": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert blob[:4] == b"AMRW"
    assert blob[4:8] == (1).to_bytes(4, "little")
    assert blob[8:10] == (2).to_bytes(2, "little") and blob[10:12] == b"ab"
    assert blob[12] == 2
    assert blob[13:21] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(blob[21:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@pytest.mark.parametrize("blob", [b"XXXX\x00\x00\x00\x00", b"AMRW\x01\x00\x00\x00\x05\x00ab", b""])
def test_checkpoint_corruption_is_format_error(blob):
    with pytest.raises(FormatError):
        tc.decode_state(blob)


def test_load_state_dict_rejects_mismatch():
    from amrkit.errors import ConfigError

    net = _Net(np.random.default_rng(3))
    state = net.state_dict()
    state["head.weight"] = np.zeros((5, 5), np.float32)
    with pytest.raises(ShapeError):
        net.load_state_dict(state)
    state.pop("head.weight")
    with pytest.raises(ConfigError):
        net.load_state_dict(state)
