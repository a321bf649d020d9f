import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from mahbf.numerics import ContractError, Rng
from mahbf.replay import (
    SumTree,
    Transition,
    agent_priorities,
    allocate_minibatch,
    compute_priority,
)


def tr(priority, tag=0.0):
    v = np.array([tag])
    return Transition(state=v, action=v, reward=tag, next_state=v, priority=priority)


def check_sums(tree):
    for node in range(tree.n_leaves - 1):
        assert tree.tree[node] == tree.tree[2 * node + 1] + tree.tree[2 * node + 2]


class TestSumTree:
    def test_root_after_pushes(self):
        t = SumTree(4)
        for p in (1.0, 2.0, 3.0):
            t.push(tr(p))
        assert t.root == 6.0
        assert len(t) == 3
        check_sums(t)

    def test_fifo_eviction(self):
        t = SumTree(3)
        for p in (1.0, 2.0, 3.0, 10.0):
            t.push(tr(p, tag=p))
        assert t.root == 15.0
        assert sorted(x.reward for x in t.transitions()) == [2.0, 3.0, 10.0]
        assert t.cursor == 1

    def test_find_intervals(self):
        t = SumTree(4)
        for p in (1.0, 2.0, 3.0, 4.0):
            t.push(tr(p))
        assert [t.find(v) for v in (0.0, 0.99, 1.0, 2.99, 3.0, 5.99, 6.0, 9.99)] == [0, 0, 1, 1, 2, 2, 3, 3]

    def test_find_never_lands_on_padding(self):
        t = SumTree(5)  # padded to 8 leaves
        for p in (1.0, 1.0, 1.0, 1.0, 1.0):
            t.push(tr(p))
        assert t.find(t.root) == 4
        assert t.find(np.nextafter(t.root, 0)) == 4

    def test_sample_frequencies(self):
        t = SumTree(4)
        probs = np.array([1.0, 2.0, 3.0, 4.0])
        for p in probs:
            t.push(tr(p))
        draws = t.sample(20_000, Rng(1))
        counts = np.bincount([i for i, _ in draws], minlength=4)
        assert chisquare(counts, 20_000 * probs / probs.sum()).pvalue > 1e-3
        assert t.total_access == 20_000
        assert sum(x.access_count for x in t.transitions()) == 20_000

    def test_uniform_sampling(self):
        t = SumTree(4)
        for p in (1.0, 100.0, 1.0, 1.0):
            t.push(tr(p))
        counts = np.bincount([i for i, _ in t.sample(8000, Rng(2), uniform=True)], minlength=4)
        assert chisquare(counts).pvalue > 1e-3

    def test_empty_sample_warns(self, caplog):
        assert SumTree(4).sample(3, Rng(0)) == []
        assert "empty" in caplog.text

    def test_random_operations_against_list(self):
        rng = Rng(3)
        t = SumTree(7)
        ref = [0.0] * 7
        ops = rng.uniform((10_000, 3))
        for kind, a, b in ops:
            p = float(b * 10)
            if kind < 0.5:
                ref[t.cursor] = p
                t.push(tr(p))
            elif t.size:
                i = int(a * t.size)
                t.update(i, p)
                ref[i] = p
            assert abs(t.root - sum(ref)) <= 1e-9 * max(1.0, sum(ref))
        np.testing.assert_allclose(t.priorities(), ref)
        check_sums(t)

    def test_dump_restore(self, tmp_path):
        t = SumTree(3)
        for p in (0.5, 1.5, 2.5, 3.5):
            t.push(tr(p, tag=p))
        t.sample(10, Rng(4))
        path = tmp_path / "buf.jsonl"
        t.dump(path)
        r = SumTree.restore(path)
        assert (r.cursor, r.size, r.total_access) == (t.cursor, t.size, t.total_access)
        np.testing.assert_array_equal(r.tree, t.tree)
        assert [x.access_count for x in r.transitions()] == [x.access_count for x in t.transitions()]

    def test_bad_capacity(self):
        with pytest.raises(ContractError):
            SumTree(0)


class TestPriorities:
    def test_formula(self):
        assert compute_priority(2.0, 0.5, 3, 10, 1e-3) == pytest.approx(1.5 + 0.3 + 1e-3)
        # no accesses yet: the frequency term is zero rather than 0/0
        assert compute_priority(1.0, 1.0, 0, 0, 1e-3) == pytest.approx(1e-3)

    @settings(max_examples=100, deadline=None)
    @given(q=st.floats(-50, 50), r=st.floats(-50, 50), n=st.integers(0, 100), extra=st.integers(0, 100))
    def test_floor_is_delta(self, q, r, n, extra):
        assert compute_priority(q, r, n, n + extra, 1e-3) >= 1e-3

    def test_delta_must_be_positive(self):
        with pytest.raises(ContractError):
            compute_priority(0, 0, 0, 0, 0.0)

    def test_softmax_example(self):
        np.testing.assert_allclose(agent_priorities([1.0, 1.0 + np.log(3)]), [0.25, 0.75])

    def test_softmax_large_roots_stable(self):
        q = agent_priorities([1000.0, 1000.0, 1000.0])
        np.testing.assert_allclose(q, [1 / 3] * 3)

    def test_normalized_roots(self):
        q = agent_priorities([4.0, 2.0], normalize_by=[4, 2])
        np.testing.assert_allclose(q, [0.5, 0.5])


class TestAllocation:
    def test_examples(self):
        np.testing.assert_array_equal(allocate_minibatch([0.6, 0.4], 5), [3, 2])
        np.testing.assert_array_equal(allocate_minibatch([1 / 3] * 3, 32), [11, 11, 10])
        np.testing.assert_array_equal(allocate_minibatch([0.5, 0.5], 32), [16, 16])

    def test_occupancy_caps(self):
        np.testing.assert_array_equal(allocate_minibatch([0.9, 0.1], 10, occupancy=[3, 50]), [3, 7])
        np.testing.assert_array_equal(allocate_minibatch([0.5, 0.5], 10, occupancy=[2, 3]), [2, 3])
        np.testing.assert_array_equal(allocate_minibatch([0.5, 0.5], 10, occupancy=[0, 0]), [0, 0])

    @settings(max_examples=200, deadline=None)
    @given(raw=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=8), total=st.integers(0, 64),
           occ_seed=st.integers(0, 1000))
    def test_sum_and_caps(self, raw, total, occ_seed):
        q = agent_priorities(raw)
        occ = (Rng(occ_seed).uniform(len(raw)) * 40).astype(int)
        counts = allocate_minibatch(q, total, occ)
        assert counts.sum() == min(total, occ.sum())
        assert np.all(counts >= 0) and np.all(counts <= occ)
        free = allocate_minibatch(q, total)
        assert free.sum() == total
        assert np.all(np.abs(free - q * total) < 1 + 1e-9)
