import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensverify.nn import (Affine, Network, NetworkFormatError, Relu, classify, dumps_network, forward,
                          input_gradient, load_network, loads_network, parameter_gradients, random_network,
                          save_network, softmax, toy_network)


def test_toy_forward_trace():
    trace = forward(toy_network(), [1.0, -5.0])
    assert len(trace) == 4
    assert trace[1].tolist() == [-8.0, 1.0]
    assert trace[2].tolist() == [0.0, 1.0]
    assert trace[3].tolist() == [6.0, 3.0]


def test_toy_forward_at_origin():
    trace = forward(toy_network(), [0.0, 0.0])
    assert trace[1].tolist() == [1.0, -1.0]
    assert trace[2].tolist() == [1.0, 0.0]
    assert trace[3].tolist() == [4.0, -1.0]
    assert classify(toy_network(), [0.0, 0.0]) == 0


def test_identity_layer():
    net = Network((Affine(np.eye(2), np.zeros(2)),), 2)
    assert forward(net, [3.0, -2.0])[-1].tolist() == [3.0, -2.0]


def test_argmax_tie_goes_low():
    net = Network((Affine(np.zeros((2, 1)), np.array([5.0, 5.0])),), 1)
    assert classify(net, [0.3]) == 0
    assert classify(toy_network(), [1.0, -5.0]) == 0


def test_dimension_errors():
    with pytest.raises(ValueError):
        forward(toy_network(), [1.0])
    with pytest.raises(ValueError):
        Network((Affine(np.ones((3, 2)), np.zeros(3)), Affine(np.ones((2, 2)), np.zeros(2))), 2)
    with pytest.raises(ValueError):
        Network((Affine(np.ones((1, 2)), np.zeros(1)),), 2)  # single output
    with pytest.raises(ValueError):
        Affine(np.ones((2, 2)), np.zeros(3))


def test_gradient_linear_cases():
    W = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]])
    net = Network((Affine(W, np.zeros(2)),), 3)
    np.testing.assert_array_equal(input_gradient(net, np.ones(3), [1.0, -1.0]), W[0] - W[1])
    net = Network((Affine(np.array([[1.0], [0.0]]), np.array([0.0, 0.5])),), 1)
    np.testing.assert_array_equal(input_gradient(net, [0.2], [1.0, -1.0]), [1.0])


def test_gradient_toy_active_mask():
    g = input_gradient(toy_network(), [1.0, -5.0], [1.0, -1.0])
    assert g.tolist() == [-9.0, -3.0]


def test_relu_subgradient_zero_at_kink():
    # the single hidden unit sits exactly at 0
    net = Network((Affine(np.array([[1.0]]), np.array([0.0])), Relu(),
                   Affine(np.array([[1.0], [0.0]]), np.zeros(2))), 1)
    assert input_gradient(net, [0.0], [1.0, 0.0]).tolist() == [0.0]


def _fd_input(net, x, c, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (c @ forward(net, x + e)[-1] - c @ forward(net, x - e)[-1]) / (2 * h)
    return g


def test_input_gradient_matches_finite_differences(rng):
    checked = 0
    while checked < 50:
        net = random_network(rng, [4, 6, 5, 3])
        x = rng.normal(size=4)
        pre = [t for t, layer in zip(forward(net, x)[1:], net.layers) if isinstance(layer, Affine)][:-1]
        if min(np.abs(p).min() for p in pre) < 1e-3:
            continue
        c = rng.normal(size=3)
        np.testing.assert_allclose(input_gradient(net, x, c), _fd_input(net, x, c), atol=1e-4)
        checked += 1


def test_parameter_gradients_closed_form():
    net = Network((Affine(np.zeros((2, 3)), np.zeros(2)),), 3)
    grads = parameter_gradients(net, np.array([1.0, 2.0, 3.0]), 0)
    np.testing.assert_allclose(grads[0][1], [-0.5, 0.5])
    np.testing.assert_allclose(grads[0][0], np.outer([-0.5, 0.5], [1.0, 2.0, 3.0]))


def test_parameter_gradients_saturate():
    net = Network((Affine(np.zeros((2, 1)), np.array([60.0, 0.0])),), 1)
    grads = parameter_gradients(net, np.array([1.0]), 0)
    assert np.abs(grads[0][1]).max() < 1e-20


def test_parameter_gradients_finite_differences(rng):
    net = random_network(rng, [3, 5, 4])
    x = rng.normal(size=3)
    label = 2
    grads = parameter_gradients(net, x, label)

    def loss(n):
        p = softmax(forward(n, x)[-1])
        return -np.log(p[label])

    h = 1e-5
    idx = [i for i, layer in enumerate(net.layers) if isinstance(layer, Affine)]
    for _ in range(100):
        li = idx[rng.integers(len(idx))]
        layer = net.layers[li]
        which = rng.integers(2)
        arr = np.array(layer.weights if which == 0 else layer.bias)
        pos = tuple(rng.integers(s) for s in arr.shape)
        vals = []
        for sgn in (1, -1):
            a = arr.copy()
            a[pos] += sgn * h
            new = Affine(a, layer.bias) if which == 0 else Affine(layer.weights, a)
            layers = list(net.layers)
            layers[li] = new
            vals.append(loss(Network(tuple(layers), net.input_dim)))
        fd = (vals[0] - vals[1]) / (2 * h)
        g = grads[li][which][pos]
        assert abs(g - fd) <= 1e-4


def test_label_out_of_range():
    with pytest.raises(ValueError):
        parameter_gradients(toy_network(), np.zeros(2), 5)


def test_text_round_trip(tmp_path):
    path = tmp_path / "toy.nn"
    save_network(toy_network(), path)
    text = path.read_text()
    assert text.splitlines()[0] == "nn v1 2 2 3"
    assert forward(load_network(path), [1.0, -5.0])[-1].tolist() == [6.0, 3.0]


def test_round_trip_bit_exact(rng):
    for _ in range(100):
        net = random_network(rng, [3, int(rng.integers(1, 6)), 2])
        back = loads_network(dumps_network(net))
        assert back.parameters_equal(net)
        assert dumps_network(back) == dumps_network(net)


@pytest.mark.parametrize("text", [
    "",
    "nn v1 2 2 0\n",
    "nn v2 2 2 1\nrelu\n",
    "nn v1 2 2 1\naffine 2 2\n1 2\n3 4\n",
    "nn v1 2 2 1\naffine 2 2\n1 2\n3\n0 0\n",
    "nn v1 2 2 1\nconv 2 2\n",
    "nn v1 3 2 1\naffine 2 2\n1 2\n3 4\n0 0\n",
])
def test_malformed_files(text):
    with pytest.raises(NetworkFormatError):
        loads_network(text)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_softmax_preserves_argmax(values):
    y = np.array(values)
    net = Network((Affine(np.zeros((len(values), 1)), y),), 1)
    assert classify(net, [0.0]) == int(np.argmax(softmax(y))) or np.isclose(
        softmax(y)[classify(net, [0.0])], softmax(y).max())


def test_networks_are_immutable():
    net = toy_network()
    with pytest.raises(ValueError):
        net.layers[0].weights[0, 0] = 9.0
