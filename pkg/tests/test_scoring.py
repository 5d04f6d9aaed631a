import itertools

import numpy as np
import pytest

from ensverify.data import Dataset
from ensverify.nn import Affine, Network, classify_batch
from ensverify.scoring import (AgreementShortage, MutualErrorTable, PairQueryEngine, compute_mutual_error_table,
                               find_agreement_points, me_score, query_count, uniqueness_score,
                               uniqueness_score_avg)
from ensverify.verifier import RUNNER_UP, encode_robustness_query, solve


def table_from(sat, m, eps=(0.02,), members=None):
    """sat: {(i, j): count} applied to every eps."""
    members = members or sorted({v for p in sat for v in p})
    t = MutualErrorTable(members, list(eps), m, "verifier")
    for a, b in itertools.combinations(members, 2):
        for e in eps:
            s = sat.get((a, b), sat.get((b, a), 0))
            t.counts[(a, b, float(e))] = {"sat": s, "unsat": m - s, "timeout": 0}
    return t


def test_me_score_definition():
    t = table_from({(0, 1): 1}, 4)
    assert me_score(t, (0, 1), 0.02) == 0.25
    assert me_score(t, (1, 0), 0.02) == 0.25
    assert me_score(table_from({(0, 1): 0}, 4), (0, 1), 0.02) == 0.0


def test_uniqueness_from_counts():
    t = table_from({(9, 1): 2, (9, 3): 3, (9, 5): 4, (9, 7): 0}, 200, members=[1, 3, 5, 7, 9])
    assert uniqueness_score(t, 9, 0.02) == pytest.approx(1 - 9 / 800)
    t = table_from({(2, 0): 30, (2, 1): 20, (2, 3): 23, (2, 4): 20}, 200)
    assert round(100 * uniqueness_score(t, 2, 0.02), 2) == 88.38
    assert uniqueness_score(table_from({(0, 1): 0, (0, 2): 0}, 5), 0, 0.02) == 1.0


def test_one_more_sat_moves_us_by_exact_step():
    m, members = 7, [0, 1, 2, 3]
    base = table_from({(0, 1): 2, (0, 2): 1}, m, members=members)
    bumped = table_from({(0, 1): 3, (0, 2): 1}, m, members=members)
    step = 1 / (m * (len(members) - 1))
    for i in (0, 1):
        assert uniqueness_score(base, i, 0.02) - uniqueness_score(bumped, i, 0.02) == pytest.approx(step)


def test_uniqueness_average_over_eps():
    t = MutualErrorTable([0, 1], [0.01, 0.02], 10, "verifier")
    t.counts[(0, 1, 0.01)] = {"sat": 0, "unsat": 10, "timeout": 0}
    t.counts[(0, 1, 0.02)] = {"sat": 4, "unsat": 5, "timeout": 1}
    assert uniqueness_score_avg(t, 0) == pytest.approx((1.0 + 0.6) / 2)


def test_uniqueness_rejects_outsider():
    with pytest.raises(ValueError):
        uniqueness_score(table_from({(0, 1): 0}, 3), 5, 0.02)


def test_query_counts():
    assert query_count(5, 200, 6) == 12000
    assert query_count(2, 1, 1) == 1


def test_csv_round_trip(tmp_path):
    t = table_from({(0, 1): 3, (0, 2): 1, (1, 2): 0}, 9, eps=(0.01, 0.03))
    t.to_csv(tmp_path / "t.csv")
    back = MutualErrorTable.from_csv(tmp_path / "t.csv")
    assert back.counts == t.counts and back.m == 9 and back.members == [0, 1, 2]
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "member_a,member_b,eps,sat,unsat,timeout,m,backend"


def _tiny_validation():
    X = np.linspace(0, 1, 11)[:, None]
    y = (X[:, 0] > 0.5).astype(np.int64)
    return Dataset(X, y, 2, 1)


def test_agreement_identical_pool():
    net = Network((Affine(np.array([[-1.0], [1.0]]), np.array([0.45, -0.45])),), 1)
    val = _tiny_validation()
    correct = np.flatnonzero(classify_batch(net, val.images) == val.labels)
    A = find_agreement_points([net, net, net], val, len(correct))
    assert A.indices.tolist() == correct.tolist()
    with pytest.raises(AgreementShortage) as err:
        find_agreement_points([net, net], val, len(correct) + 1)
    assert err.value.found == len(correct)


def test_agreement_require_correct_and_filter():
    # everyone says label 1 everywhere
    net = Network((Affine(np.zeros((2, 1)), np.array([0.0, 1.0])),), 1)
    val = _tiny_validation()
    loose = find_agreement_points([net, net], val, 11, require_correct=False)
    assert len(loose) == 11
    strict = find_agreement_points([net, net], val, 5, label_filter=1)
    assert set(strict.labels.tolist()) == {1}
    assert all(val.labels[i] == 1 for i in strict.indices)
    with pytest.raises(AgreementShortage):
        find_agreement_points([net, net], val, 1, label_filter=0)


def test_agreement_points_first_in_order(digits_pool, digits_splits):
    A = find_agreement_points(digits_pool, digits_splits.validation, 20)
    assert np.all(np.diff(A.indices) > 0)
    for net in digits_pool:
        assert np.all(classify_batch(net, A.points) == A.labels)


def test_twin_pair_equals_single_net(digits_pool, digits_splits):
    net = digits_pool[0]
    A = find_agreement_points([net], digits_splits.validation, 15)
    eng = PairQueryEngine([net, net], A)
    table = compute_mutual_error_table([0, 1], eng, [0.04])
    single = sum(solve(net, *encode_robustness_query(net, A.points[p], 0.04, int(A.labels[p]), RUNNER_UP)).status
                 == "SAT" for p in range(len(A)))
    assert table.get(0, 1, 0.04)["sat"] == single


def test_engine_caches_and_parallel_matches(digits_pool, digits_splits):
    A = find_agreement_points(digits_pool, digits_splits.validation, 10)
    serial = PairQueryEngine(digits_pool, A)
    t1 = compute_mutual_error_table([0, 1, 2], serial, [0.02, 0.06])
    assert serial.dispatched == query_count(3, 10, 2)
    compute_mutual_error_table([0, 1, 2], serial, [0.02, 0.06])
    assert serial.dispatched == query_count(3, 10, 2)
    par = PairQueryEngine(digits_pool, A, workers=2)
    t2 = compute_mutual_error_table([0, 1, 2], par, [0.02, 0.06])
    assert t1.counts == t2.counts
    for c in t1.counts.values():
        assert c["sat"] + c["unsat"] + c["timeout"] == 10


def test_unknown_backend(digits_pool, digits_splits):
    A = find_agreement_points(digits_pool, digits_splits.validation, 2)
    with pytest.raises(ValueError):
        PairQueryEngine(digits_pool, A, backend="marabou")
