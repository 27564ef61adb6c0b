import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spice_pitch import backend, nn
from spice_pitch.nn import functional as F
from spice_pitch.nn import tensor as T
from spice_pitch.nn.checkpoint import CheckpointError, load, read_header, save
from spice_pitch.nn.gradcheck import gradcheck, numeric_grad
from spice_pitch.nn.layers import LayerSpec, NetworkSpec, Sequential


def rand(rng, *shape):
    return rng.standard_normal(shape)


def weighted_sum(y, seed=99):
    # a fixed random projection makes the scalar depend on every output element
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return nn.total(y * T.Tensor(w))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# --- gradients of each op/layer --------------------------------------------

@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv1d_gradients(rng, stride, pad):
    x, w, b = rand(rng, 2, 3, 9), rand(rng, 4, 3, 3), rand(rng, 4)
    gradcheck(lambda x, w, b: weighted_sum(F.conv1d(x, w, b, stride, pad)), [x, w, b])


@pytest.mark.parametrize("stride,pad,opad", [(1, 0, 0), (2, 1, 1), (2, 0, 0), (3, 1, 2)])
def test_conv_transpose1d_gradients(rng, stride, pad, opad):
    x, w, b = rand(rng, 2, 3, 5), rand(rng, 3, 2, 3), rand(rng, 2)
    gradcheck(lambda x, w, b: weighted_sum(F.conv_transpose1d(x, w, b, stride, pad, opad)), [x, w, b])


@pytest.mark.parametrize("ceil", [False, True])
def test_maxpool_gradients(rng, ceil):
    x = rand(rng, 2, 3, 10)
    gradcheck(lambda x: weighted_sum(F.maxpool1d(x, 3, 2, ceil)), [x])


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(rng, training):
    x, g, b = rand(rng, 3, 2, 5), rand(rng, 2), rand(rng, 2)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)

    def f(x, g, b):
        return weighted_sum(F.batchnorm1d(x, g, b, rm.copy(), rv.copy(), training))

    gradcheck(f, [x, g, b])


def test_dense_gradients(rng):
    x, w, b = rand(rng, 4, 5), rand(rng, 5, 3), rand(rng, 3)
    gradcheck(lambda x, w, b: weighted_sum(F.dense(x, w, b)), [x, w, b])


@pytest.mark.parametrize("op", ["relu", "sigmoid", "square", "absolute", "clamp", "mean", "total"])
def test_elementwise_gradients(rng, op):
    x = rand(rng, 3, 4)
    x[np.abs(x) < 0.05] += 0.2  # stay off kinks
    fns = {
        "relu": lambda x: weighted_sum(T.relu(x)),
        "sigmoid": lambda x: weighted_sum(T.sigmoid(x)),
        "square": lambda x: weighted_sum(T.square(x)),
        "absolute": lambda x: weighted_sum(T.absolute(x)),
        "clamp": lambda x: weighted_sum(T.clamp(x, -0.5, 0.7)),
        "mean": lambda x: T.mean(x * x),
        "total": lambda x: T.total(x * x),
    }
    if op == "clamp":
        x[np.abs(np.abs(x - 0.1) - 0.6) < 0.05] += 0.15
    gradcheck(fns[op], [x])


def test_structural_op_gradients(rng):
    a, b = rand(rng, 4, 3), rand(rng, 2, 3)

    def f(a, b):
        c = T.concat([a, b], axis=0)
        p, q = T.split(c, 2)
        r = T.reshape(p * q, (9,))
        return weighted_sum(r) + weighted_sum(T.take(c, (np.array([0, 0, 5]), slice(None))))

    gradcheck(f, [a, b])


def test_broadcast_gradients(rng):
    a, b = rand(rng, 3, 4), rand(rng, 1, 4)
    gradcheck(lambda a, b: weighted_sum(a * b - b + a), [a, b])


def test_matmul_gradients(rng):
    gradcheck(lambda a, b: weighted_sum(T.matmul(a, b)), [rand(rng, 3, 4), rand(rng, 4, 2)])


def test_whole_network_gradients():
    rng = np.random.default_rng(1)
    specs = [
        LayerSpec("conv", 1, 2, kernel=3, padding=1), LayerSpec("batchnorm", 2, 2), LayerSpec("relu"),
        LayerSpec("maxpool", kernel=3, stride=2, ceil_mode=True), LayerSpec("flatten"),
        LayerSpec("dense", 8, 3), LayerSpec("relu"), LayerSpec("dense", 3, 4),
        LayerSpec("reshape", shape=(2, 2)),
        LayerSpec("conv_transpose", 2, 1, kernel=3, stride=2, padding=1, output_padding=1),
    ]
    net = Sequential(specs, rng, np.float64)
    x = rng.standard_normal((3, 1, 8))

    def value(*_):
        return float(weighted_sum(net(T.Tensor(x))).data)

    weighted_sum(net(T.Tensor(x))).backward()
    for name, p in net.parameters().items():
        num = numeric_grad(value, [p.data], 0)
        np.testing.assert_allclose(p.grad, num, rtol=1e-4, atol=1e-8, err_msg=name)


# --- adjoint identity -------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(
    b=st.integers(1, 3), c_in=st.integers(1, 4), c_out=st.integers(1, 4), k=st.integers(1, 5),
    stride=st.integers(1, 3), pad=st.integers(0, 2), w=st.integers(5, 12), seed=st.integers(0, 2**31),
)
def test_conv_adjoint_identity(b, c_in, c_out, k, stride, pad, w, seed):
    """<conv(x), y> == <x, conv_transpose(y)> with shared weights."""
    if w + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((b, c_in, w))
    wt = rng.standard_normal((c_out, c_in, k))
    out_w = (w + 2 * pad - k) // stride + 1
    y = rng.standard_normal((b, c_out, out_w))
    lhs = np.sum(F.conv1d(T.Tensor(x), T.Tensor(wt), None, stride, pad).data * y)
    # conv_transpose weight is [C_in_of_transpose, C_out_of_transpose, K] = [c_out, c_in, K]
    opad = w - ((out_w - 1) * stride - 2 * pad + k)
    if opad >= stride and opad > 0:
        # geometry not expressible with output_padding; use the raw adjoint kernel
        xt = backend.kernels.conv1d_grad_input(y, wt, stride, pad, w)
    else:
        xt = F.conv_transpose1d(T.Tensor(y), T.Tensor(wt), None, stride, pad, opad).data
    rhs = np.sum(x * xt)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


# --- kernel backends ----------------------------------------------------------

needs_compiled = pytest.mark.skipif(not backend.compiled_available(), reason="compiled kernels not built")


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-4)])
def test_compiled_kernels_match_reference(dtype, tol):
    rng = np.random.default_rng(3)
    ref, cy = backend.get("numpy"), backend.get("cython")
    x = rng.standard_normal((3, 4, 17)).astype(dtype)
    w = rng.standard_normal((5, 4, 3)).astype(dtype)
    for stride, pad in [(1, 1), (2, 0), (2, 1)]:
        y_ref = ref.conv1d_forward(x, w, stride, pad)
        np.testing.assert_allclose(cy.conv1d_forward(x, w, stride, pad), y_ref, rtol=tol, atol=tol)
        gy = rng.standard_normal(y_ref.shape).astype(dtype)
        np.testing.assert_allclose(cy.conv1d_grad_weight(gy, x, stride, pad, 3),
                                   ref.conv1d_grad_weight(gy, x, stride, pad, 3), rtol=tol, atol=tol)
        np.testing.assert_allclose(cy.conv1d_grad_input(gy, w, stride, pad, 17),
                                   ref.conv1d_grad_input(gy, w, stride, pad, 17), rtol=tol, atol=tol)
    for out_w in (8, 9):
        y1, i1 = cy.maxpool1d_forward(x, 3, 2, out_w)
        y2, i2 = ref.maxpool1d_forward(x, 3, 2, out_w)
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_array_equal(i1, i2)
        g = rng.standard_normal(y1.shape).astype(dtype)
        np.testing.assert_allclose(cy.maxpool1d_backward(g, i1, 17), ref.maxpool1d_backward(g, i2, 17),
                                   rtol=tol, atol=tol)


def test_reference_conv_matches_direct_sum():
    """Independent oracle: explicit loops over the cross-correlation definition."""
    rng = np.random.default_rng(4)
    x, w = rng.standard_normal((2, 3, 8)), rng.standard_normal((4, 3, 3))
    stride, pad = 2, 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    out_w = (8 + 2 * pad - 3) // stride + 1
    expect = np.zeros((2, 4, out_w))
    for b in range(2):
        for o in range(4):
            for j in range(out_w):
                expect[b, o, j] = np.sum(xp[b, :, j * stride:j * stride + 3] * w[o])
    for name in ("numpy",) + (("cython",) if backend.compiled_available() else ()):
        np.testing.assert_allclose(backend.get(name).conv1d_forward(x, w, stride, pad), expect, atol=1e-12)


def test_backend_get_rejects_unknown():
    with pytest.raises(ValueError):
        backend.get("fortran")


# --- pooling geometry -----------------------------------------------------------

@pytest.mark.parametrize("w,floor_w,ceil_w", [(128, 63, 64), (4, 1, 2), (3, 1, 1), (2, None, 1)])
def test_maxpool_output_widths(w, floor_w, ceil_w):
    x = T.Tensor(np.random.default_rng(0).standard_normal((1, 1, w)))
    assert F.maxpool1d(x, 3, 2, ceil_mode=True).shape[2] == ceil_w
    if floor_w is None:
        with pytest.raises(ValueError):
            F.maxpool1d(x, 3, 2)
    else:
        assert F.maxpool1d(x, 3, 2).shape[2] == floor_w


def test_maxpool_ties_route_to_first():
    x = T.Tensor(np.ones((1, 1, 5)), requires_grad=True)
    nn.total(F.maxpool1d(x, 3, 2)).backward()
    np.testing.assert_array_equal(x.grad[0, 0], [1, 0, 1, 0, 0])


# --- batchnorm ------------------------------------------------------------------

def test_batchnorm_running_stats_update():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 2, 6)) * 3 + 1
    rm, rv = np.zeros(2), np.ones(2)
    g, b = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
    y = F.batchnorm1d(T.Tensor(x), g, b, rm, rv, training=True)
    mu = x.mean(axis=(0, 2))
    var_unbiased = x.var(axis=(0, 2), ddof=1)
    np.testing.assert_allclose(rm, 0.01 * mu)
    np.testing.assert_allclose(rv, 0.99 + 0.01 * var_unbiased)
    np.testing.assert_allclose(y.data.mean(axis=(0, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(axis=(0, 2)), x.var(axis=(0, 2)) / (x.var(axis=(0, 2)) + 1e-5))


def test_batchnorm_inference_uses_running_stats():
    x = np.arange(12, dtype=float).reshape(1, 2, 6)
    rm, rv = np.array([1.0, 2.0]), np.array([4.0, 9.0])
    y = F.batchnorm1d(T.Tensor(x), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), rm, rv, training=False)
    np.testing.assert_allclose(y.data[0, 0], (x[0, 0] - 1) / np.sqrt(4 + 1e-5))
    np.testing.assert_array_equal(rm, [1.0, 2.0])


# --- tensor/graph semantics ---------------------------------------------------------

def test_stop_gradient_blocks_flow():
    x = T.Tensor(np.array([2.0]), requires_grad=True)
    y = T.Tensor(np.array([3.0]), requires_grad=True)
    loss = nn.total(x * nn.stop_gradient(x * y)) + nn.total(y)
    loss.backward()
    np.testing.assert_allclose(x.grad, [6.0])
    np.testing.assert_allclose(y.grad, [1.0])


def test_backward_errors():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nn.GraphError):
        (x * 2.0).backward()
    with pytest.raises(nn.GraphError):
        nn.total(T.Tensor(np.ones(3))).backward()
    loss = nn.total(x * 2.0)
    loss.backward()
    with pytest.raises(nn.GraphError):
        loss.backward()


def test_non_finite_detected():
    x = T.Tensor(np.array([1.0, np.inf]))
    with pytest.raises(nn.NonFiniteError):
        x * 2.0


def test_gradients_accumulate_over_shared_use():
    x = T.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    nn.total(x * x + x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_split_rejects_uneven():
    with pytest.raises(ValueError):
        T.split(T.Tensor(np.ones(5)), 2)


def test_conv_shape_errors():
    x = T.Tensor(np.ones((1, 2, 5)))
    with pytest.raises(ValueError):
        F.conv1d(x, T.Tensor(np.ones((1, 3, 3))))
    with pytest.raises(ValueError):
        F.conv_transpose1d(x, T.Tensor(np.ones((2, 1, 3))), stride=2, output_padding=2)


# --- optimizer ----------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = nn.Parameter(np.array([1.0, -1.0, 0.5]))
    opt = nn.Adam([p], lr=0.1)
    p.grad = np.array([3.0, -0.2, 0.0])
    opt.step()
    # bias-corrected first step is lr * sign(g) (exactly 0 for a zero gradient)
    np.testing.assert_allclose(p.data, [0.9, -0.9, 0.5], atol=1e-7)


def test_adam_minimizes_quadratic():
    p = nn.Parameter(np.array([5.0, -3.0]))
    opt = nn.Adam([p], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        nn.total(nn.square(p - T.Tensor(np.array([1.0, 2.0])))).backward()
        opt.step()
    np.testing.assert_allclose(p.data, [1.0, 2.0], atol=1e-2)


# --- checkpoints ----------------------------------------------------------------------

def _net(seed=0):
    specs = [LayerSpec("conv", 1, 2, kernel=3, padding=1), LayerSpec("batchnorm", 2, 2),
             LayerSpec("flatten"), LayerSpec("dense", 8, 1)]
    return specs, Sequential(specs, np.random.default_rng(seed), np.float32)


def test_checkpoint_round_trip(tmp_path):
    specs, net = _net(0)
    for p in net.parameters().values():
        p.m += 0.5
        p.step = 7
    net.buffers()["1.batchnorm.running_mean"][:] = [3.0, 4.0]
    spec = NetworkSpec({"net": specs})
    save(tmp_path / "c.npz", net.parameters(), net.buffers(), spec.to_dict(), 42, {"note": "x"})
    _, other = _net(1)
    header = load(tmp_path / "c.npz", other.parameters(), other.buffers())
    assert header["step"] == 42 and header["meta"] == {"note": "x"}
    assert NetworkSpec.from_dict(header["network"]) == spec
    for (k, a), (_, b) in zip(net.parameters().items(), other.parameters().items()):
        np.testing.assert_array_equal(a.data, b.data)
        np.testing.assert_array_equal(a.m, b.m)
        assert b.step == 7
    np.testing.assert_array_equal(other.buffers()["1.batchnorm.running_mean"], [3.0, 4.0])


def test_checkpoint_rejects_foreign_and_mismatched(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.ones(2))
    with pytest.raises(CheckpointError):
        read_header(tmp_path / "x.npz")
    specs, net = _net(0)
    save(tmp_path / "c.npz", net.parameters(), net.buffers(), {}, 0)
    bigger = Sequential([LayerSpec("conv", 1, 3, kernel=3, padding=1)], np.random.default_rng(0))
    with pytest.raises(CheckpointError):
        load(tmp_path / "c.npz", bigger.parameters(), bigger.buffers())
