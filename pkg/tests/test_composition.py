import numpy as np
import pytest

from ensverify.composition import compose_average_ensemble, compose_side_by_side, load_composite, save_composite
from ensverify.nn import Affine, Network, Relu, classify, forward, random_network, toy_network


def test_toy_side_by_side():
    comp = compose_side_by_side([toy_network(), toy_network()])
    assert forward(comp.network, [1.0, -5.0])[-1].tolist() == [6.0, 3.0, 6.0, 3.0]
    assert comp.slices == ((0, 2), (2, 4))


def test_toy_average():
    comp = compose_average_ensemble([toy_network(), toy_network()])
    assert forward(comp.network, [1.0, -5.0])[-1].tolist() == [6.0, 3.0]


def test_average_layer_structure():
    members = [toy_network()] * 3
    last = compose_average_ensemble(members).network.layers[-1]
    assert last.weights.shape == (2, 6)
    assert np.count_nonzero(last.weights) == 6
    assert set(last.weights[last.weights != 0].tolist()) == {1.0 / 3.0}
    assert not last.bias.any()


def test_rejects_mismatches():
    a = random_network(np.random.default_rng(0), [2, 3, 2])
    with pytest.raises(ValueError):
        compose_side_by_side([a, random_network(np.random.default_rng(1), [3, 3, 2])])
    with pytest.raises(ValueError):
        compose_side_by_side([a, random_network(np.random.default_rng(1), [2, 3, 3, 2])])
    with pytest.raises(ValueError):
        compose_average_ensemble([a, random_network(np.random.default_rng(1), [2, 3, 4])])


def test_relu_count_adds_up(rng):
    members = [random_network(rng, [3, 4, 5, 2]) for _ in range(3)]
    assert compose_side_by_side(members).network.relu_count == 27
    assert compose_average_ensemble(members).network.relu_count == 27


def test_side_by_side_associative(rng):
    a, b, c = (random_network(rng, [3, 4, 2]) for _ in range(3))
    x = rng.normal(size=3)
    left = compose_side_by_side([compose_side_by_side([a, b]).network, c])
    flat = compose_side_by_side([a, b, c])
    np.testing.assert_allclose(forward(left.network, x)[-1], forward(flat.network, x)[-1], atol=1e-12)


def test_classify_matches_mean_logits(rng):
    for _ in range(50):
        members = [random_network(rng, [2, 3, 3]) for _ in range(3)]
        x = rng.normal(size=2)
        mean = np.mean([forward(m, x)[-1] for m in members], axis=0)
        assert classify(compose_average_ensemble(members).network, x) == int(np.argmax(mean))


def test_sidecar_round_trip(tmp_path, rng):
    comp = compose_side_by_side([random_network(rng, [2, 3, 2]) for _ in range(2)], ["a", "b"])
    save_composite(comp, tmp_path / "pair.nn")
    back = load_composite(tmp_path / "pair.nn")
    assert back.member_ids == ("a", "b") and back.slices == comp.slices
    assert back.aggregation == "side_by_side"
    assert back.network.parameters_equal(comp.network)
