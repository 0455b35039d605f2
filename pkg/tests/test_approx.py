import numpy as np
import pytest

from muesli_lab._validation import ValidationError
from muesli_lab.approx import (Network, ParamVector, fd_check, load_params, log_softmax,
                               save_params, softmax)


def test_param_views_write_through():
    pv = ParamVector([("a", (2, 3)), ("b", ())])
    pv["a"][1, 2] = 5.0
    pv["b"][...] = -1.0
    assert pv.data.tolist() == [0, 0, 0, 0, 0, 5.0, -1.0]
    assert pv.size == 7


def test_duplicate_layout_rejected():
    with pytest.raises(ValidationError):
        ParamVector([("a", (2,)), ("a", (1,))])


def test_softmax_stable():
    p = softmax(np.array([[1000.0, 0.0], [-1000.0, -1000.0]]))
    np.testing.assert_allclose(p, [[1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(np.exp(log_softmax(np.array([3.0, 1.0, -2.0]))),
                               softmax(np.array([3.0, 1.0, -2.0])))


def test_zero_init_gives_uniform_policy():
    net = Network(3, 4)
    np.testing.assert_allclose(net.policy_table(net.init_params(0)), 0.25)


@pytest.mark.parametrize("mode", ["tabular", "mlp"])
def test_network_gradient_fd(mode, rng):
    net = Network(4, 3, mode=mode, hidden=5)
    params = net.init_params(1)
    params.data[:] = rng.normal(scale=0.7, size=params.size)
    obs = rng.integers(0, 4, size=9)
    w_logit = rng.normal(size=(9, 3))
    w_val = rng.normal(size=9)

    def loss_fn(p):
        out, cache = net.forward_with_cache(p, obs)
        loss = float(np.sum(w_logit * out.policy_logits) + np.sum(w_val * out.value ** 2))
        return loss, net.backward(p, cache, w_logit, 2 * w_val * out.value)

    assert fd_check(params, loss_fn).passed


def test_fd_check_detects_wrong_gradient():
    params = ParamVector([("x", (3,))], [0.5, -1.0, 2.0])
    report = fd_check(params, lambda p: (float(np.sum(p.data ** 3)), 2 * p.data))
    assert not report.passed


def test_observation_range_checked():
    net = Network(2, 2)
    with pytest.raises(ValidationError):
        net.forward(net.init_params(), [2])


def test_params_file_roundtrip(tmp_path, rng):
    a = ParamVector([("w", (2, 2)), ("b", (3,))], rng.normal(size=7))
    b = ParamVector([("z", ())], [3.5])
    save_params(tmp_path / "p.bin", {"online": a, "other": b}, {"step": 4})
    blocks, meta = load_params(tmp_path / "p.bin")
    assert meta == {"step": 4}
    np.testing.assert_array_equal(blocks["online"].data, a.data)
    assert blocks["online"].layout == a.layout
    assert blocks["other"]["z"] == 3.5
    head = (tmp_path / "p.bin").read_bytes().split(b"\n", 2)
    assert head[0] == b"MUESLI-LAB-PARAMS 1"


def test_bad_magic_rejected(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope\n{}\n")
    with pytest.raises(ValidationError):
        load_params(tmp_path / "x.bin")
