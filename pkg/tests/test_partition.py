import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptmeta.partition import (
    NodePath,
    build_cohort_partition,
    future_triple,
    g0_conditional,
    locate,
)
from ptmeta.special_math import DistributionSpec

G0 = DistributionSpec.half_cauchy(3.5)


class TestNodePath:
    def test_roundtrips(self):
        p = NodePath.from_string("0110")
        assert p.level == 4 and p.index == 6
        assert NodePath.from_index(4, 6) == p
        assert p.parent() == NodePath.from_string("011")
        assert p.child(1) == NodePath.from_string("01101")

    def test_validation(self):
        with pytest.raises(ValueError):
            NodePath(())
        with pytest.raises(ValueError):
            NodePath((0, 2))


class TestBuildCohortPartition:
    def test_level3_split_of_lower_interval(self):
        tree = build_cohort_partition((2.0, 3.5, 6.0), G0, depth=3)
        # conditional median of [0, 2) under half-Cauchy(3.5)
        f2 = (2 / math.pi) * math.atan(2 / 3.5)
        expected = 3.5 * math.tan(math.pi * f2 / 4)
        assert tree.split_point(2, 0) == pytest.approx(expected, abs=1e-12)
        assert tree.split_point(2, 0) == pytest.approx(0.929, abs=1e-3)

    def test_dyadic_when_anchored_at_quartiles(self):
        s = (G0.quantile(0.25), G0.quantile(0.5), G0.quantile(0.75))
        tree = build_cohort_partition(s, G0, depth=6)
        for d in range(1, 6):
            for idx in range(2**d):
                assert g0_conditional(tree, NodePath.from_index(d, idx), G0) == pytest.approx(
                    0.5, abs=1e-12
                )

    def test_absent_bounds_use_conditional_medians(self):
        tree = build_cohort_partition((None, 3.5, None), G0, depth=2)
        assert tree.breaks[2][0] == pytest.approx(G0.quantile(0.25), abs=1e-10)
        assert tree.breaks[2][2] == pytest.approx(G0.quantile(0.75), abs=1e-10)
        tree0 = build_cohort_partition((0.0, 3.5, math.inf), G0, depth=2)
        assert np.allclose(tree0.breaks[2], tree.breaks[2])

    def test_future_cohort_rule(self):
        triples = [(1.0, 2.0, 4.0), (2.0, 3.0, 6.0), (None, 5.0, math.inf)]
        l, m, h = future_triple(triples)
        assert l == pytest.approx(1.5)
        assert m == pytest.approx(3.0)
        assert h == pytest.approx(5.0)

    def test_invalid_triple(self):
        with pytest.raises(ValueError, match="C7"):
            build_cohort_partition((4.0, 3.5, 6.0), G0, depth=3, cohort_id="C7")
        with pytest.raises(ValueError):
            build_cohort_partition((1.0, 3.5, 3.0), G0, depth=3)


class TestLocate:
    def setup_method(self):
        self.tree = build_cohort_partition((2.0, 3.5, 6.0), G0, depth=4)

    def test_boundary_belongs_to_right(self):
        assert str(locate(self.tree, 3.5, 1)) == "1"
        assert str(locate(self.tree, 3.5, 2)) == "10"

    def test_zero_is_leftmost(self):
        for d in range(1, 5):
            assert locate(self.tree, 0.0, d).bits == (0,) * d

    def test_just_below_h(self):
        assert str(locate(self.tree, 6.0 - 1e-9, 2)) == "10"
        assert str(locate(self.tree, 6.0, 2)) == "11"

    def test_left_closed_at_all_breakpoints(self):
        for d in range(1, 5):
            for i, b in enumerate(self.tree.breaks[d]):
                assert locate(self.tree, float(b), d).index == i + 1
                assert locate(self.tree, float(b) - 1e-9, d).index == i


class TestG0Conditional:
    def setup_method(self):
        self.tree = build_cohort_partition((2.0, 3.5, 6.0), G0, depth=5)

    def test_deep_nodes_are_half(self):
        for d in range(3, 5):
            for idx in range(2**d):
                assert g0_conditional(self.tree, NodePath.from_index(d, idx), G0) == pytest.approx(
                    0.5, abs=1e-12
                )

    def test_root_of_centered_tree(self):
        tree = build_cohort_partition((2.0, 3.5, 6.0), G0, depth=2)
        assert tree.fvals[1][0] == pytest.approx(0.5)

    def test_lower_level2_interval(self):
        # G0([2, 3.5) | [0, 3.5)) for half-Cauchy(3.5)
        f2 = (2 / math.pi) * math.atan(2 / 3.5)
        val = g0_conditional(self.tree, NodePath.from_string("0"), G0)
        assert 1.0 - val == pytest.approx((0.5 - f2) / 0.5, abs=1e-12)
        assert 1.0 - val == pytest.approx(0.339, abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(
    m=st.floats(min_value=0.5, max_value=20.0),
    dl=st.floats(min_value=0.05, max_value=0.95),
    dh=st.floats(min_value=1.1, max_value=8.0),
)
def test_partition_invariants(m, dl, dh):
    tree = build_cohort_partition((m * dl, m, m * dh), G0, depth=6)
    for d in range(1, 7):
        masses = np.diff(np.concatenate(([0.0], tree.fvals[d], [1.0])))
        assert abs(masses.sum() - 1.0) < 1e-12
        assert np.all(masses > 0)
        if d < 6:
            child = np.diff(np.concatenate(([0.0], tree.fvals[d + 1], [1.0])))
            assert np.allclose(child[0::2] + child[1::2], masses, atol=1e-12)
