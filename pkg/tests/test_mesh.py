import math

import numpy as np
import pytest

from hybridflow import mesh as meshmod
from hybridflow.mesh import (
    Marker,
    Mesh,
    MeshFormatError,
    build_graph,
    element_orientations,
    knn,
    parse_su2,
    signed_distance,
    triangulate,
    write_su2,
)

MINIMAL_TRIANGLE = """\
NDIME= 2
NELEM= 1
5 0 1 2
NPOIN= 3
0.0 0.0
1.0 0.0
0.0 1.0
"""

UNIT_SQUARE_QUAD = """\
NDIME= 2
NELEM= 1
9 0 1 2 3 0
NPOIN= 4
0.0 0.0 0
1.0 0.0 1
1.0 1.0 2
0.0 1.0 3
NMARK= 1
MARKER_TAG= farfield
MARKER_ELEMS= 4
3 0 1
3 1 2
3 2 3
3 3 0
"""


def unit_square_two_triangles(marker_tag="farfield"):
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    elements = [(0, 1, 2), (0, 2, 3)]
    markers = [Marker(marker_tag, [(0, 1), (1, 2), (2, 3), (3, 0)])]
    return Mesh(nodes=nodes, elements=elements, markers=markers)


class TestParse:
    def test_minimal_triangle(self):
        m = parse_su2(MINIMAL_TRIANGLE)
        assert m.num_nodes == 3
        assert m.num_elements == 1
        assert m.elements == [(0, 1, 2)]
        assert m.markers == []
        np.testing.assert_array_equal(m.nodes, [(0, 0), (1, 0), (0, 1)])

    def test_element_count_mismatch_names_element_section(self):
        text = """\
NDIME= 2
NELEM= 2
5 0 1 2
NPOIN= 3
0.0 0.0
1.0 0.0
0.0 1.0
"""
        with pytest.raises(MeshFormatError, match="element"):
            parse_su2(text)

    def test_quad_retained_until_triangulation(self):
        m = parse_su2(UNIT_SQUARE_QUAD)
        assert m.elements == [(0, 1, 2, 3)]
        assert not m.is_triangular()
        assert m.markers[0].tag == "farfield"
        assert len(m.markers[0].segments) == 4

    def test_comments_and_blank_lines(self):
        text = "% header comment\n\n" + MINIMAL_TRIANGLE.replace(
            "NPOIN= 3", "% another\nNPOIN= 3")
        m = parse_su2(text)
        assert m.num_nodes == 3

    def test_unknown_element_type(self):
        bad = MINIMAL_TRIANGLE.replace("5 0 1 2", "7 0 1 2")
        with pytest.raises(MeshFormatError, match="type code 7"):
            parse_su2(bad)

    def test_node_index_out_of_range_reports_line(self):
        bad = MINIMAL_TRIANGLE.replace("5 0 1 2", "5 0 1 9")
        with pytest.raises(MeshFormatError, match="line 3"):
            parse_su2(bad)

    def test_missing_section(self):
        with pytest.raises(MeshFormatError, match="NPOIN"):
            parse_su2("NDIME= 2\nNELEM= 0\n")

    def test_file_like_source(self, tmp_path):
        p = tmp_path / "m.su2"
        p.write_text(MINIMAL_TRIANGLE)
        with open(p) as fh:
            m = parse_su2(fh)
        assert m.num_nodes == 3


class TestWrite:
    def test_round_trip_identity_triangle(self):
        m = parse_su2(MINIMAL_TRIANGLE)
        assert parse_su2(write_su2(m)) == m

    def test_marker_counts_in_output(self):
        m = unit_square_two_triangles(marker_tag="airfoil")
        m.markers[0].segments = m.markers[0].segments[:2]
        text = write_su2(m)
        assert "NMARK= 1" in text
        assert "MARKER_ELEMS= 2" in text

    def test_empty_markers(self):
        m = parse_su2(MINIMAL_TRIANGLE)
        assert "NMARK= 0" in write_su2(m)

    def test_round_trip_full_precision(self):
        rng = np.random.default_rng(7)
        nodes = rng.standard_normal((5, 2)) * math.pi
        m = Mesh(nodes=nodes, elements=[(0, 1, 2), (2, 3, 4)],
                 markers=[Marker("airfoil", [(0, 1)])])
        again = parse_su2(write_su2(m))
        assert np.array_equal(again.nodes, m.nodes)
        assert again == m

    def test_round_trip_quad_mesh(self):
        m = parse_su2(UNIT_SQUARE_QUAD)
        assert parse_su2(write_su2(m)) == m


class TestTriangulate:
    def test_unit_square_quad_split(self):
        m = parse_su2(UNIT_SQUARE_QUAD)
        t = triangulate(m)
        assert t.elements == [(0, 1, 2), (0, 2, 3)]

    def test_triangular_mesh_unchanged(self):
        m = parse_su2(MINIMAL_TRIANGLE)
        assert triangulate(m) == m

    def test_counts_two_quads_one_triangle(self):
        nodes = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1), (3, 0)]
        elements = [(0, 1, 4, 3), (1, 2, 5, 4), (2, 6, 5)]
        m = Mesh(nodes=nodes, elements=elements)
        t = triangulate(m)
        assert t.num_elements == 5
        assert t.is_triangular()

    def test_degenerate_quad_rejected(self):
        m = Mesh(nodes=[(0, 0), (1, 0), (1, 1), (0, 1)], elements=[(0, 1, 1, 3)])
        with pytest.raises(MeshFormatError, match="degenerate"):
            triangulate(m)


class TestGraph:
    def test_single_triangle_three_edges(self):
        g = build_graph(parse_su2(MINIMAL_TRIANGLE))
        assert g.num_nodes == 3
        assert g.edges.shape == (3, 2)

    def test_two_triangles_sharing_edge_five_edges(self):
        # sides: {01, 12, 02} and {02, 23, 03} -> 5 distinct undirected edges
        m = unit_square_two_triangles()
        g = build_graph(m)
        expected = {(0, 1), (1, 2), (0, 2), (2, 3), (0, 3)}
        assert {tuple(e) for e in g.edges} == expected

    def test_symmetric_adjacency_no_self_edges(self):
        m = triangulate(parse_su2(UNIT_SQUARE_QUAD))
        g = build_graph(m)
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        a = np.zeros((g.num_nodes, g.num_nodes))
        a[g.edges[:, 0], g.edges[:, 1]] = 1
        a[g.edges[:, 1], g.edges[:, 0]] = 1
        assert np.array_equal(a, a.T)
        assert np.all(np.diag(a) == 0)

    def test_edges_cooccur_in_elements(self):
        m = unit_square_two_triangles()
        g = build_graph(m)
        sides = set()
        for e in m.elements:
            for a, b in ((e[0], e[1]), (e[1], e[2]), (e[2], e[0])):
                sides.add((min(a, b), max(a, b)))
        assert {tuple(e) for e in g.edges} <= sides


class TestSignedDistance:
    def segment_mesh(self):
        nodes = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
        return Mesh(nodes=nodes, elements=[(0, 1, 2)],
                    markers=[Marker("airfoil", [(0, 1)])])

    def test_on_segment_is_zero(self):
        m = self.segment_mesh()
        d = signed_distance(np.array([[0.5, 0.0]]), m, "airfoil")
        assert d[0] == pytest.approx(0.0, abs=1e-15)

    def test_perpendicular_distance(self):
        # point (0, 2) above segment (0,0)-(1,0): closest point (0,0), distance 2
        m = self.segment_mesh()
        d = signed_distance(np.array([[0.0, 2.0]]), m, "airfoil")
        assert d[0] == pytest.approx(2.0, rel=1e-15)

    def test_endpoint_distance(self):
        # (2, 2) is past the (1, 0) endpoint: distance sqrt(1 + 4)
        m = self.segment_mesh()
        d = signed_distance(np.array([[2.0, 2.0]]), m, "airfoil")
        assert d[0] == pytest.approx(math.sqrt(5.0), rel=1e-15)

    def test_unknown_marker(self):
        with pytest.raises(KeyError, match="wing"):
            signed_distance(np.zeros((1, 2)), self.segment_mesh(), "wing")

    def test_lipschitz_in_query(self):
        m = unit_square_two_triangles(marker_tag="airfoil")
        rng = np.random.default_rng(3)
        p = rng.uniform(-2, 3, size=(200, 2))
        q = p + rng.normal(scale=0.1, size=(200, 2))
        dp = signed_distance(p, m, "airfoil")
        dq = signed_distance(q, m, "airfoil")
        step = np.linalg.norm(p - q, axis=1)
        assert np.all(np.abs(dp - dq) <= step + 1e-12)


class TestKnn:
    def test_exact_hit(self):
        ref = np.array([(0.0, 0.0), (1.0, 1.0)])
        idx, d2 = knn(np.array([(1.0, 1.0)]), ref, 1)
        assert idx[0, 0] == 1
        assert d2[0, 0] == 0.0

    def test_ordering_on_a_line(self):
        ref = np.array([(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
        idx, d2 = knn(np.array([(0.0, 0.0)]), ref, 2)
        assert list(idx[0]) == [0, 1]
        np.testing.assert_allclose(d2[0], [1.0, 4.0])

    def test_tie_breaks_by_index(self):
        ref = np.array([(1.0, 0.0), (-1.0, 0.0)])
        idx, _ = knn(np.array([(0.0, 0.0)]), ref, 1)
        assert idx[0, 0] == 0

    def test_k_larger_than_reference(self):
        with pytest.raises(ValueError, match="exceeds"):
            knn(np.zeros((1, 2)), np.zeros((2, 2)), 3)

    def test_permutation_consistency(self):
        rng = np.random.default_rng(11)
        ref = rng.standard_normal((20, 2))
        q = rng.standard_normal((7, 2))
        idx, d2 = knn(q, ref, 4)
        perm = rng.permutation(20)
        idx_p, d2_p = knn(q, ref[perm], 4)
        np.testing.assert_allclose(d2, d2_p)
        # positions referenced must match
        np.testing.assert_allclose(ref[idx], ref[perm][idx_p])


class TestOrientations:
    def test_ccw_positive(self):
        val = element_orientations([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
        assert val[0] == pytest.approx(1.0)

    def test_cw_negative(self):
        val = element_orientations([(0, 0), (0, 1), (1, 0)], [(0, 1, 2)])
        assert val[0] == pytest.approx(-1.0)

    def test_collinear_zero(self):
        val = element_orientations([(0, 0), (1, 1), (2, 2)], [(0, 1, 2)])
        assert val[0] == 0.0

    def test_translation_invariant_and_swap_flips(self):
        rng = np.random.default_rng(5)
        nodes = rng.standard_normal((3, 2))
        tri = [(0, 1, 2)]
        base = element_orientations(nodes, tri)
        shifted = element_orientations(nodes + [10.0, -3.0], tri)
        assert shifted[0] == pytest.approx(base[0], rel=1e-12)
        swapped = element_orientations(nodes, [(1, 0, 2)])
        assert swapped[0] == pytest.approx(-base[0], rel=1e-12)


class TestInvariants:
    def test_index_validation(self):
        with pytest.raises(MeshFormatError):
            Mesh(nodes=[(0, 0), (1, 0)], elements=[(0, 1, 2)])

    def test_triangle_distinct_vertices(self):
        with pytest.raises(MeshFormatError, match="repeated"):
            Mesh(nodes=[(0, 0), (1, 0), (0, 1)], elements=[(0, 1, 1)])

    def test_hash_stable(self):
        m = unit_square_two_triangles()
        assert meshmod.mesh_hash(m) == meshmod.mesh_hash(unit_square_two_triangles())
