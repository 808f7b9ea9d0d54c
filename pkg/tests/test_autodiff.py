import math
import weakref

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from styletx import autodiff as ad
from styletx.autodiff import (
    DomainError,
    NonDeterministicError,
    SequenceTooShortError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    clip,
    concat,
    conv1d_maxpool,
    grad_check,
    l2_norm,
    matmul,
    max_along,
    no_grad,
    recording,
    reshape,
    softmax,
    sum_,
    take_along_last,
    take_rows,
    unfold_windows,
)


def run_taped(fn):
    tape = Tape()
    with recording(tape):
        return fn(tape)


# ---------------------------------------------------------------------------
# forward oracles


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def test_matmul_identity():
    out = matmul(Tensor(np.eye(2)), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [6.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, matmul_oracle(a, b), rtol=1e-12)


def test_matmul_zero_case():
    out = matmul(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_elementwise_basics():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.tanh(Tensor(0.0)).item() == 0.0
    a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    out = ad.add(Tensor(a), Tensor(b))
    expected = np.array([a[i] + b[i] for i in range(2)])
    np.testing.assert_array_equal(out.data, expected)


def test_relu_and_exp_and_log():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    np.testing.assert_allclose(ad.exp(Tensor([0.0, 1.0])).data, [1.0, math.e])
    np.testing.assert_allclose(ad.log(Tensor([1.0, math.e])).data, [0.0, 1.0])


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_softmax_symmetry():
    out = softmax(Tensor([0.0, 0.0, 0.0]), temperature=1.0)
    np.testing.assert_allclose(out.data, np.full(3, 1 / 3), atol=1e-15)


def test_softmax_large_inputs_no_overflow():
    out = softmax(Tensor([1000.0, 0.0]), temperature=1.0)
    assert np.all(np.isfinite(out.data))
    assert out.data[0] > 1 - 1e-12 and out.data[1] < 1e-12


def test_softmax_scalar_oracle():
    # independent scalar computation of softmax([1, 2])
    e1, e2 = math.exp(1.0), math.exp(2.0)
    expected = [e1 / (e1 + e2), e2 / (e1 + e2)]
    np.testing.assert_allclose(softmax(Tensor([1.0, 2.0])).data, expected, atol=1e-5)
    np.testing.assert_allclose(softmax(Tensor([1.0, 2.0])).data, [0.26894, 0.73106], atol=1e-5)


def test_softmax_temperature_validation():
    with pytest.raises(ValueError):
        softmax(Tensor([1.0]), temperature=0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=30),
       st.floats(min_value=0.1, max_value=10.0))
def test_softmax_rows_sum_to_one(values, temperature):
    out = softmax(Tensor(values), temperature=temperature)
    assert abs(out.data.sum() - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=30))
def test_softmax_positive_on_moderate_range(values):
    # entries only underflow to 0 once the logit spread exceeds ~745
    out = softmax(Tensor(values), temperature=1.0)
    assert np.all(out.data > 0)


def test_l2_norm_cases():
    assert l2_norm(Tensor([0.0, 0.0, 0.0])).item() == 0.0
    assert l2_norm(Tensor([3.0, 4.0])).item() == 5.0
    assert l2_norm(Tensor([-2.0, 0.0, 0.0])).item() == 2.0


def conv_maxpool_oracle(seq, filt):
    # explicit window loop: one dot product per window per map, max over time
    width, d, c = filt.shape
    n_win = seq.shape[0] - width + 1
    resp = np.zeros((n_win, c))
    for p in range(n_win):
        for m in range(c):
            acc = 0.0
            for j in range(width):
                for k in range(d):
                    acc += seq[p + j, k] * filt[j, k, m]
            resp[p, m] = acc
    return resp.max(axis=0)


def test_conv1d_maxpool_zero_sequence():
    filt = np.random.default_rng(1).normal(size=(2, 3, 4))
    out = conv1d_maxpool(Tensor(np.zeros((6, 3))), Tensor(filt))
    np.testing.assert_array_equal(out.data, np.zeros(4))


def test_conv1d_maxpool_single_window_is_identity_pool():
    rng = np.random.default_rng(2)
    seq, filt = rng.normal(size=(3, 2)), rng.normal(size=(3, 2, 5))
    out = conv1d_maxpool(Tensor(seq), Tensor(filt))
    np.testing.assert_allclose(out.data, conv_maxpool_oracle(seq, filt), rtol=1e-12)


def test_conv1d_maxpool_window_loop_oracle():
    rng = np.random.default_rng(3)
    seq, filt = rng.normal(size=(5, 2)), rng.normal(size=(2, 2, 1))
    out = conv1d_maxpool(Tensor(seq), Tensor(filt))
    np.testing.assert_allclose(out.data, conv_maxpool_oracle(seq, filt), rtol=1e-12)


def test_conv1d_maxpool_batched_matches_per_sequence():
    rng = np.random.default_rng(4)
    seqs, filt = rng.normal(size=(3, 6, 2)), rng.normal(size=(2, 2, 4))
    batched = conv1d_maxpool(Tensor(seqs), Tensor(filt))
    for i in range(3):
        single = conv1d_maxpool(Tensor(seqs[i]), Tensor(filt))
        np.testing.assert_array_equal(batched.data[i], single.data)


def test_conv1d_maxpool_too_short():
    with pytest.raises(SequenceTooShortError):
        conv1d_maxpool(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3, 1))))


# ---------------------------------------------------------------------------
# backward


def test_backward_sum_of_squares():
    def body(tape):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(sum_(ad.mul(x, x)), tape)
        return x

    x = run_taped(body)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_detached_gets_zeros():
    def body(tape):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([3.0, 4.0], requires_grad=True)
        _ = sum_(x)  # x participates in the graph but not in the loss
        backward(sum_(ad.mul(y, y)), tape)
        return x

    x = run_taped(body)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_backward_non_scalar_raises():
    def body(tape):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            backward(ad.mul(x, x), tape)

    run_taped(body)


def test_backward_accumulates_across_calls():
    def body(tape):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = sum_(ad.mul(x, x))
        backward(loss, tape)
        backward(loss, tape)
        return x

    x = run_taped(body)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


def test_zero_multiplied_loss_gives_exact_zero_grads():
    def body(tape):
        x = Tensor([1.3, -0.7], requires_grad=True)
        loss = ad.mul(sum_(ad.mul(x, x)), 0.0)
        backward(loss, tape)
        return x

    x = run_taped(body)
    assert x.grad is not None
    assert np.all(x.grad == 0.0)


def test_replay_determinism_bit_identical():
    def one_pass():
        rng = np.random.default_rng(7)
        tape = Tape()
        with recording(tape):
            x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
            loss = sum_(ad.sigmoid(matmul(x, w)))
            backward(loss, tape)
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = one_pass()
    gx2, gw2 = one_pass()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_tape_clear_releases_intermediates():
    tape = Tape()
    with recording(tape):
        x = Tensor([1.0], requires_grad=True)
        y = ad.mul(x, x)
    ref = weakref.ref(y)
    del y
    assert ref() is not None  # the tape still holds it
    tape.clear()
    assert ref() is None


def test_no_grad_blocks_recording():
    tape = Tape()
    with recording(tape):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = ad.mul(x, x)
        assert not y.requires_grad
    assert len(tape) == 0


def test_gru_cell_gradients_match_finite_differences():
    # one GRU step composed from raw primitives, checked weight-by-weight
    rng = np.random.default_rng(11)
    d_in, d_h = 3, 4
    x0 = rng.normal(size=(1, d_in))
    h0 = rng.normal(size=(1, d_h))
    packs = {name: rng.normal(size=shape) * 0.5 for name, shape in [
        ("wz", (d_in, d_h)), ("uz", (d_h, d_h)), ("bz", (d_h,)),
        ("wr", (d_in, d_h)), ("ur", (d_h, d_h)), ("br", (d_h,)),
        ("wh", (d_in, d_h)), ("uh", (d_h, d_h)), ("bh", (d_h,)),
    ]}

    def step(weights):
        x, h = Tensor(x0), Tensor(h0)
        z = ad.sigmoid(matmul(x, weights["wz"]) + matmul(h, weights["uz"]) + weights["bz"])
        r = ad.sigmoid(matmul(x, weights["wr"]) + matmul(h, weights["ur"]) + weights["br"])
        cand = ad.tanh(matmul(x, weights["wh"]) + matmul(ad.mul(r, h), weights["uh"]) + weights["bh"])
        h_next = (1.0 - z) * h + z * cand
        return sum_(h_next)

    for name in packs:
        def f(t, name=name):
            weights = {k: Tensor(v) for k, v in packs.items()}
            weights[name] = t
            return step(weights)

        report = grad_check(f, Tensor(packs[name]), step=1e-4, tol=1e-4)
        assert report.passed, f"{name}: {report.max_rel_err}"


# ---------------------------------------------------------------------------
# per-primitive finite differences, many seeds


PRIMITIVE_CASES = [
    ("add", lambda x: sum_(ad.add(x, 0.3)), (3, 2)),
    ("sub", lambda x: sum_(ad.sub(1.7, x)), (3, 2)),
    ("mul", lambda x: sum_(ad.mul(x, x)), (3, 2)),
    ("neg", lambda x: sum_(ad.neg(x)), (4,)),
    ("matmul", lambda x: sum_(matmul(x, reshape(x, (2, 3)))), (3, 2)),
    ("sigmoid", lambda x: sum_(ad.sigmoid(x)), (5,)),
    ("tanh", lambda x: sum_(ad.tanh(x)), (5,)),
    ("relu", lambda x: sum_(ad.relu(x)), (5,)),
    ("exp", lambda x: sum_(ad.exp(x)), (4,)),
    ("log", lambda x: sum_(ad.log(ad.add(ad.mul(x, x), 1.0))), (4,)),
    ("softmax", lambda x: sum_(ad.mul(softmax(x, temperature=0.7), Tensor([0.2, -1.0, 0.5]))), (3,)),
    ("sum_axis", lambda x: sum_(ad.mul(sum_(x, axis=0), Tensor([1.0, -2.0]))), (3, 2)),
    ("reshape", lambda x: sum_(ad.mul(reshape(x, (6,)), Tensor(np.arange(6.0)))), (3, 2)),
    ("broadcast", lambda x: sum_(ad.mul(ad.broadcast_to(x, (4, 3)), Tensor(np.arange(12.0).reshape(4, 3)))), (3,)),
    ("concat", lambda x: sum_(ad.mul(concat([x, ad.mul(x, 2.0)], axis=0), Tensor(np.arange(8.0).reshape(8, 1)))), (4, 1)),
    ("take_rows", lambda x: sum_(ad.mul(take_rows(x, np.array([0, 2, 2])), Tensor(np.arange(6.0).reshape(3, 2)))), (3, 2)),
    ("take_along_last", lambda x: sum_(take_along_last(x, np.array([2, 0]))), (2, 3)),
    ("max_along", lambda x: sum_(max_along(x, axis=1)), (2, 4)),
    ("unfold", lambda x: sum_(ad.mul(unfold_windows(x, 2), Tensor(np.arange(16.0).reshape(4, 4)))), (5, 2)),
    ("l2_norm", lambda x: l2_norm(x), (4,)),
    ("clip", lambda x: sum_(clip(x, -0.5, 0.5)), (6,)),
    ("conv1d_maxpool", lambda x: sum_(conv1d_maxpool(x, Tensor(np.linspace(-1, 1, 12).reshape(2, 2, 3)))), (5, 2)),
]


@pytest.mark.parametrize("name,fn,shape", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_100_seeds(name, fn, shape):
    worst = 0.0
    for seed in range(100):
        x = np.random.default_rng(seed).normal(size=shape)
        if name == "clip":
            # keep entries away from the clip boundaries where the
            # subgradient is genuinely discontinuous
            x = np.where(np.abs(np.abs(x) - 0.5) < 1e-2, x + 0.05, x)
        report = grad_check(fn, Tensor(x), step=1e-4, tol=1e-4)
        worst = max(worst, report.max_rel_err)
        assert report.passed, f"{name} seed {seed}: {report.max_rel_err}"
    assert worst <= 1e-4


# ---------------------------------------------------------------------------
# grad_check itself


def test_grad_check_linear_is_exact():
    report = grad_check(lambda x: sum_(x), Tensor(np.random.default_rng(0).normal(size=(4,))))
    assert report.max_rel_err < 1e-10


def test_grad_check_sigmoid_composite_passes():
    f = lambda x: sum_(ad.sigmoid(ad.mul(ad.tanh(x), 2.0)))
    report = grad_check(f, Tensor(np.random.default_rng(1).normal(size=(5,))), tol=1e-4)
    assert report.passed


def test_grad_check_detects_wrong_gradient():
    # detach() hides half of the true dependency, so the analytic gradient
    # is wrong by construction
    f = lambda x: sum_(ad.mul(x, x.detach()))
    report = grad_check(f, Tensor([1.0, 2.0, 3.0]))
    assert not report.passed


def test_grad_check_detects_nondeterminism():
    state = {"n": 0}

    def noisy(x):
        state["n"] += 1
        return sum_(ad.mul(x, float(state["n"])))

    with pytest.raises(NonDeterministicError):
        grad_check(noisy, Tensor([1.0, 2.0]))
