import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

import helpers
from ensverify.composition import compose_side_by_side
from ensverify.nn import Affine, Network, classify, forward, random_network
from ensverify.verifier import (FULL, RUNNER_UP, Postcondition, ReluBudgetExceeded, encode_mutual_error_query,
                                encode_robustness_query, oracle_solve, solve, validate_witness)
from ensverify.verifier.bounds import Box


def line_net():
    # y = [x, 0.5]
    return Network((Affine(np.array([[1.0], [0.0]]), np.array([0.0, 0.5])),), 1)


def test_encode_line_net():
    box, post = encode_robustness_query(line_net(), [1.0], 0.4, 0, RUNNER_UP)
    np.testing.assert_allclose(box.lower, [0.6])
    np.testing.assert_allclose(box.upper, [1.4])
    assert len(post.conjuncts) == 1
    assert post.conjuncts[0].tolist() == [[-1.0, 1.0]]


def test_line_net_verdicts():
    box, post = encode_robustness_query(line_net(), [1.0], 0.4, 0)
    assert solve(line_net(), box, post).status == "UNSAT"
    box, post = encode_robustness_query(line_net(), [1.0], 0.6, 0)
    v = solve(line_net(), box, post)
    assert v.status == "SAT"
    assert 0.4 <= v.witness[0] < 0.5
    assert classify(line_net(), v.witness) == 1


def test_encode_rejects_bad_queries():
    with pytest.raises(ValueError):
        encode_robustness_query(line_net(), [1.0], 0.0, 0)
    with pytest.raises(ValueError):
        encode_robustness_query(line_net(), [1.0], 0.1, 1)


def test_postcondition_counts(rng):
    net = random_network(rng, [3, 4, 10])
    x0 = rng.normal(size=3)
    label = classify(net, x0)
    _, post = encode_robustness_query(net, x0, 0.1, label, FULL)
    assert len(post.conjuncts) == 9
    pair = compose_side_by_side([net, net])
    _, post = encode_mutual_error_query(pair, x0, 0.1, label, FULL)
    assert len(post.conjuncts) == 81
    _, post = encode_mutual_error_query(pair, x0, 0.1, label, RUNNER_UP)
    assert len(post.conjuncts) == 1 and post.conjuncts[0].shape == (2, 20)


def test_zero_width_box_single_node():
    box = Box([1.0], [1.0])
    post = Postcondition((np.array([[-1.0, 1.0]]),), ((0, 2, 0),))
    v = solve(line_net(), box, post)
    assert v.status == "UNSAT" and v.nodes == 1


def test_tie_is_not_a_witness():
    # at x = 0.5 the logits tie and the lowest index (the true label) wins
    box = Box([0.5], [0.7])
    post = Postcondition((np.array([[-1.0, 1.0]]),), ((0, 2, 0),))
    assert post.conjuncts[0] @ forward(line_net(), [0.5])[-1] >= 0
    assert not validate_witness(line_net(), box, post, [0.5])
    assert solve(line_net(), box, post).status == "UNSAT"
    assert oracle_solve(line_net(), box, post).status == "UNSAT"


def test_self_pair_equals_single_net(rng):
    n = 0
    while n < 30:
        net = random_network(rng, [2, 4, 3])
        x0 = rng.uniform(-1, 1, 2)
        label = classify(net, x0)
        eps = float(rng.uniform(0.05, 0.8))
        for mode in (FULL, RUNNER_UP):
            single = solve(net, *encode_robustness_query(net, x0, eps, label, mode))
            pair = compose_side_by_side([net, net])
            double = solve(pair, *encode_mutual_error_query(pair, x0, eps, label, mode))
            assert single.status == double.status
        n += 1


def test_runner_up_sat_implies_full_sat(rng):
    for _ in range(60):
        net = random_network(rng, [3, 5, 4])
        x0 = rng.uniform(-1, 1, 3)
        label = classify(net, x0)
        eps = float(rng.uniform(0.05, 0.8))
        ru = solve(net, *encode_robustness_query(net, x0, eps, label, RUNNER_UP))
        if ru.status == "SAT":
            assert solve(net, *encode_robustness_query(net, x0, eps, label, FULL)).status == "SAT"


def test_eps_nesting(rng):
    for _ in range(40):
        net = random_network(rng, [2, 6, 3])
        x0 = rng.uniform(-1, 1, 2)
        label = classify(net, x0)
        verdicts = [solve(net, *encode_robustness_query(net, x0, e, label, FULL)).status
                    for e in (0.05, 0.1, 0.2, 0.4, 0.8)]
        for i, v in enumerate(verdicts):
            if v == "UNSAT":
                assert all(w == "UNSAT" for w in verdicts[:i])


def test_witnesses_validate_and_match_oracle():
    rng = np.random.default_rng(99)
    for _ in range(60):
        target, box, post = helpers.fuzz_instance(rng)
        v = solve(target, box, post)
        o = oracle_solve(target, box, post)
        assert v.status == o.status
        net = getattr(target, "network", target)
        for w in (v, o):
            if w.status == "SAT":
                assert validate_witness(net, box, post, w.witness)


def test_oracle_counts_and_budget():
    net = random_network(np.random.default_rng(0), [2, 3, 2])
    box = Box([-1.0, -1.0], [1.0, 1.0])
    # y0 == y1 forces a tie, which the lowest-index rule resolves to label 0
    post = Postcondition((np.array([[1.0, -1.0], [-1.0, 1.0]]),), ((0, 2, 0),))
    v = oracle_solve(net, box, post)
    assert v.status == "UNSAT" and v.lp_calls == 8
    big = random_network(np.random.default_rng(0), [2, 17, 2])
    with pytest.raises(ReluBudgetExceeded):
        oracle_solve(big, Box([0.0, 0.0], [1.0, 1.0]), post)
    lin = line_net()
    assert oracle_solve(lin, Box([0.0], [1.0]), post).lp_calls == 1


def test_timeout_is_a_verdict(rng):
    net = random_network(rng, [10, 40, 40, 10])
    x0 = rng.normal(size=10)
    box, post = encode_robustness_query(net, x0, 0.5, classify(net, x0), FULL)
    v = solve(net, box, post, timeout=1e-4)
    assert v.status in ("TIMEOUT", "SAT")


def test_deterministic_search(rng):
    target, box, post = helpers.fuzz_instance(np.random.default_rng(5))
    a, b = solve(target, box, post), solve(target, box, post)
    assert (a.status, a.nodes, a.lp_calls) == (b.status, b.nodes, b.lp_calls)


def test_pure_numpy_backend_agrees(tmp_path):
    script = textwrap.dedent("""
        import sys, numpy as np
        sys.path.insert(0, %r)
        import helpers
        from ensverify import _accel
        from ensverify.verifier import solve
        rng = np.random.default_rng(3)
        out = [_accel.BACKEND]
        for _ in range(40):
            t, b, p = helpers.fuzz_instance(rng)
            v = solve(t, b, p)
            out.append(f"{v.status}:{v.nodes}")
        print(" ".join(out))
    """) % os.path.dirname(__file__)
    runs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, ENSVERIFY_NO_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        runs[flag] = res.stdout.split()
    assert runs["1"][0] == "numpy"
    assert runs["0"][1:] == runs["1"][1:]
