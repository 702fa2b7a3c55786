"""Gradient, optimizer, and serialization checks for the tape engine."""

import json

import numpy as np
import pytest

import npactive.autodiff as ad
from npactive.errors import IntegrityError, NumericalError, ValidationError
from oracles import gradcheck, random_composite_case


def _mat(seed, *shape, lo=-1.4, hi=1.4):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


def _signed_away_from_zero(seed, *shape, floor=0.25):
    rng = np.random.default_rng(seed)
    return rng.uniform(floor, 1.4, size=shape) * rng.choice([-1.0, 1.0], size=shape)


PRIMITIVE_CASES = [
    ("add", lambda p: ad.mean_(p[0] + p[1]), [_mat(1, 3, 4), _mat(2, 3, 4)]),
    ("add_scalar", lambda p: ad.mean_(p[0] + p[1]), [_mat(3, 3, 4), _mat(4)[()] * np.ones(())]),
    ("sub", lambda p: ad.mean_(p[0] - p[1]), [_mat(5, 3, 4), _mat(6, 3, 4)]),
    ("mul", lambda p: ad.mean_(p[0] * p[1]), [_mat(7, 3, 4), _mat(8, 3, 4)]),
    ("div", lambda p: ad.mean_(p[0] / p[1]), [_mat(9, 3, 4), _mat(10, 3, 4, lo=0.7, hi=1.7)]),
    ("neg", lambda p: ad.mean_(ad.neg(p[0])), [_mat(11, 3, 4)]),
    ("matmul", lambda p: ad.mean_(p[0] @ p[1]), [_mat(12, 3, 4), _mat(13, 4, 2)]),
    ("add_bias", lambda p: ad.mean_(ad.add_bias(p[0], p[1])), [_mat(14, 3, 4), _mat(15, 4)]),
    ("mul_bias", lambda p: ad.mean_(ad.mul_bias(p[0], p[1])), [_mat(16, 3, 4), _mat(17, 4)]),
    ("tanh", lambda p: ad.mean_(ad.tanh(p[0])), [_mat(18, 3, 3)]),
    ("sigmoid", lambda p: ad.mean_(ad.sigmoid(p[0])), [_mat(19, 3, 3)]),
    ("relu", lambda p: ad.mean_(ad.relu(p[0])), [_signed_away_from_zero(20, 3, 3)]),
    ("exp", lambda p: ad.mean_(ad.exp(p[0])), [_mat(21, 3, 3)]),
    ("log", lambda p: ad.mean_(ad.log(p[0])), [_mat(22, 3, 3, lo=0.2, hi=2.0)]),
    ("softplus", lambda p: ad.mean_(ad.softplus(p[0])), [_mat(23, 3, 3)]),
    ("sum_all", lambda p: ad.sum_(p[0]), [_mat(24, 3, 4)]),
    ("sum_axis0", lambda p: ad.mean_(ad.sum_(p[0], axis=0)), [_mat(25, 3, 4)]),
    ("sum_axis1", lambda p: ad.mean_(ad.sum_(p[0], axis=1)), [_mat(26, 3, 4)]),
    ("mean_all", lambda p: ad.mean_(p[0]), [_mat(27, 3, 4)]),
    ("mean_axis0", lambda p: ad.sum_(ad.mean_(p[0], axis=0)), [_mat(28, 3, 4)]),
    (
        "mean_rows_canonical",
        lambda p: ad.sum_(ad.mean_rows_canonical(p[0])),
        [_mat(29, 5, 3)],
    ),
    (
        "concat_axis0",
        lambda p: ad.mean_(ad.concat([p[0], p[1]], axis=0)),
        [_mat(30, 2, 4), _mat(31, 3, 4)],
    ),
    (
        "concat_axis1",
        lambda p: ad.mean_(ad.concat([p[0], p[1]], axis=1)),
        [_mat(32, 3, 2), _mat(33, 3, 4)],
    ),
    ("slice_rows", lambda p: ad.mean_(p[0][1:, :2]), [_mat(34, 4, 4)]),
    ("slice_int", lambda p: ad.mean_(p[0][0]), [_mat(35, 4, 4)]),
    ("reshape", lambda p: ad.mean_(ad.reshape(p[0], (12,)) * ad.reshape(p[0], (12,))), [_mat(36, 3, 4)]),
    (
        "node_mix",
        lambda p: ad.mean_(ad.node_mix(p[0], np.array([[0.6, 0.4], [0.3, 0.7]]))),
        [_mat(37, 6, 3)],
    ),
]


@pytest.mark.parametrize(
    "build,arrays", [(b, a) for _, b, a in PRIMITIVE_CASES], ids=[c[0] for c in PRIMITIVE_CASES]
)
def test_primitive_gradients(build, arrays):
    gradcheck(build, arrays)


@pytest.mark.parametrize("seed", range(20))
def test_random_composite_graphs(seed):
    build, arrays = random_composite_case(seed)
    gradcheck(build, arrays)


def test_fanout_accumulates_gradients():
    x = ad.parameter(np.array([0.7, -1.3, 2.0]), "x")
    with ad.Tape() as tape:
        y = ad.sum_(x * x + x)
    tape.backward(y)
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0, rtol=0, atol=1e-12)


def test_ops_outside_tape_do_not_record():
    x = ad.parameter(np.ones(3), "x")
    y = ad.tanh(x)
    assert isinstance(y, ad.Tensor)
    assert x.grad is None
    with ad.Tape() as tape:
        _ = ad.tanh(x) * 0.0
    assert len(tape) > 0


def test_tape_cannot_nest_or_rerun():
    x = ad.parameter(np.ones(2), "x")
    with ad.Tape() as tape:
        loss = ad.sum_(x * x)
        with pytest.raises(ValidationError):
            ad.Tape().__enter__()
    tape.backward(loss)
    with pytest.raises(ValidationError):
        tape.backward(loss)


def test_matmul_shape_error_names_op():
    a = ad.constant(np.ones((3, 4)))
    b = ad.constant(np.ones((3, 4)))
    with pytest.raises(ValidationError, match="matmul"):
        ad.matmul(a, b)


def test_elementwise_shape_error_rejects_broadcast():
    a = ad.constant(np.ones((3, 4)))
    b = ad.constant(np.ones((4,)))
    with pytest.raises(ValidationError, match="add"):
        ad.add(a, b)


def test_nonfinite_output_names_op():
    with np.errstate(over="ignore"):
        with pytest.raises(NumericalError, match="exp"):
            ad.exp(ad.constant(np.array([1e3])))
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericalError, match="log"):
            ad.log(ad.constant(np.array([-1.0])))


def test_adam_first_step_is_signed_learning_rate():
    p = ad.parameter(np.zeros(3), "p")
    opt = ad.Adam([p], lr=0.05)
    p.grad = np.array([3.0, -0.2, 1e-4])
    opt.step()
    np.testing.assert_allclose(p.data, [-0.05, 0.05, -0.05], rtol=1e-3)


def test_adam_skips_missing_grads():
    p = ad.parameter(np.ones(2), "p")
    q = ad.parameter(np.ones(2), "q")
    opt = ad.Adam([p, q], lr=0.1)
    p.grad = np.ones(2)
    opt.step()
    np.testing.assert_array_equal(q.data, np.ones(2))
    assert not np.array_equal(p.data, np.ones(2))


def test_adam_requires_unique_names():
    p = ad.parameter(np.ones(1), "same")
    q = ad.parameter(np.ones(1), "same")
    with pytest.raises(ValidationError):
        ad.Adam([p, q])


def _train_quadratic(seed, steps):
    rng = np.random.default_rng(seed)
    w = ad.parameter(rng.standard_normal(4), "w")
    target = np.arange(4.0)
    opt = ad.Adam([w], lr=0.05)
    for _ in range(steps):
        with ad.Tape() as tape:
            diff = w - ad.constant(target)
            loss = ad.sum_(diff * diff)
        opt.zero_grad()
        tape.backward(loss)
        opt.step()
    return w.data


def test_training_is_deterministic():
    a = _train_quadratic(3, 40)
    b = _train_quadratic(3, 40)
    np.testing.assert_array_equal(a, b)


def test_adam_state_roundtrip_matches_uninterrupted_run():
    full = _train_quadratic(5, 30)

    rng = np.random.default_rng(5)
    w = ad.parameter(rng.standard_normal(4), "w")
    target = np.arange(4.0)
    opt = ad.Adam([w], lr=0.05)

    def run(opt_obj, n):
        for _ in range(n):
            with ad.Tape() as tape:
                diff = w - ad.constant(target)
                loss = ad.sum_(diff * diff)
            opt_obj.zero_grad()
            tape.backward(loss)
            opt_obj.step()

    run(opt, 12)
    state = json.loads(json.dumps(opt.state_dict()))
    resumed = ad.Adam([w], lr=0.05)
    resumed.load_state_dict(state)
    run(resumed, 18)
    np.testing.assert_array_equal(w.data, full)


def test_parameter_payload_roundtrip(tmp_path):
    params = {
        "a": ad.parameter(np.arange(6.0).reshape(2, 3), "a"),
        "b": ad.parameter(np.array([1.5]), "b"),
    }
    payload = ad.params_to_payload(params)
    arrays = ad.payload_to_arrays(payload)
    np.testing.assert_array_equal(arrays["a"], params["a"].data)
    np.testing.assert_array_equal(arrays["b"], params["b"].data)

    path = tmp_path / "params.json"
    ad.save_params(params, path)
    loaded = ad.load_params(path)
    np.testing.assert_array_equal(loaded["a"], params["a"].data)


def test_parameter_payload_version_refusal(tmp_path):
    params = {"a": ad.parameter(np.ones(2), "a")}
    payload = ad.params_to_payload(params)
    payload["version"] = payload["version"] + 1
    with pytest.raises(IntegrityError):
        ad.payload_to_arrays(payload)

    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(IntegrityError):
        ad.load_params(path)


def test_mean_rows_canonical_is_exactly_permutation_invariant():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(17, 5))
    base = ad.mean_rows_canonical(ad.constant(x)).data
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(17)
        again = ad.mean_rows_canonical(ad.constant(x[perm])).data
        np.testing.assert_array_equal(again, base)
