import math

import numpy as np
import pytest

from hybridflow import solver as solvermod
from hybridflow.data import airfoil_omesh, rectangle_mesh
from hybridflow.mesh import Marker, Mesh, triangulate
from hybridflow.solver import (
    FlowState,
    FreestreamSpec,
    SolverError,
    cells_to_nodes,
    euler_residual,
    face_fluxes,
    freestream_state,
    solve,
    solve_backward,
)

GAMMA = 1.4


def two_cell_square(bottom_tag=None):
    """Unit square of two triangles; farfield boundary, optionally an airfoil
    marker on the bottom edge."""
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    elements = [(0, 1, 2), (0, 2, 3)]
    far = [(1, 2), (2, 3), (3, 0)] if bottom_tag else [(0, 1), (1, 2), (2, 3), (3, 0)]
    markers = [Marker("farfield", far)]
    if bottom_tag:
        markers.append(Marker(bottom_tag, [(0, 1)]))
    return Mesh(nodes=nodes, elements=elements, markers=markers)


def small_airfoil(n_surface=8, n_rings=3):
    return triangulate(airfoil_omesh(n_surface=n_surface, n_rings=n_rings,
                                     farfield_radius=5.0, growth=1.6))


def prim_to_cons(rho, u, v, p):
    return np.array([rho, rho * u, rho * v, p / (GAMMA - 1) + 0.5 * rho * (u * u + v * v)])


# ---------------------------------------------------------------------------
# independent scalar oracle for the local Lax-Friedrichs face flux


def oracle_flux(cons_l, cons_r, nvec):
    """Hand-written LLF flux through a face with unnormalized outward normal."""
    length = math.hypot(nvec[0], nvec[1])

    def phys(cons):
        rho, mu, mv, e = cons
        u, v = mu / rho, mv / rho
        p = (GAMMA - 1) * (e - 0.5 * rho * (u * u + v * v))
        un = u * nvec[0] + v * nvec[1]
        f = np.array([rho * un, rho * u * un + p * nvec[0],
                      rho * v * un + p * nvec[1], (e + p) * un])
        lam = abs(un) / length + math.sqrt(GAMMA * p / rho)
        return f, lam

    fl, lam_l = phys(cons_l)
    fr, lam_r = phys(cons_r)
    lam = max(lam_l, lam_r) * length
    return 0.5 * (fl + fr) - 0.5 * lam * (np.asarray(cons_r) - np.asarray(cons_l))


class TestFreestream:
    def test_axis_aligned(self):
        s = freestream_state(FreestreamSpec(aoa=0.0, mach=0.5))
        rho, ru, rv, e = s
        assert rho == 1.0
        assert ru == pytest.approx(0.5)
        assert rv == pytest.approx(0.0, abs=1e-16)
        p = (GAMMA - 1) * (e - 0.5 * (ru ** 2 + rv ** 2))
        assert p == pytest.approx(1.0 / GAMMA)

    def test_aoa_90_rejected(self):
        with pytest.raises(ValueError, match="aoa"):
            FreestreamSpec(aoa=90.0, mach=0.5)

    def test_inclined(self):
        s = freestream_state(FreestreamSpec(aoa=10.0, mach=0.65))
        assert s[1] == pytest.approx(0.65 * math.cos(math.radians(10.0)), rel=1e-15)
        assert s[2] == pytest.approx(0.65 * math.sin(math.radians(10.0)), rel=1e-15)

    def test_mach_positive(self):
        with pytest.raises(ValueError, match="mach"):
            FreestreamSpec(aoa=0.0, mach=0.0)


class TestFlowState:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        prim = np.stack([rng.uniform(0.5, 2.0, 30), rng.uniform(-1, 1, 30),
                         rng.uniform(-1, 1, 30), rng.uniform(0.3, 2.0, 30)], axis=1)
        back = FlowState.from_primitives(prim, GAMMA).primitives(GAMMA)
        np.testing.assert_allclose(back, prim, rtol=1e-12, atol=1e-14)

    def test_validate(self):
        bad = FlowState(np.array([[1.0, 5.0, 0.0, 1.0]]))  # kinetic energy > total
        with pytest.raises(SolverError, match="pressure"):
            bad.validate()


class TestResidual:
    def test_uniform_freestream_zero(self):
        mesh = rectangle_mesh(4, 3)
        spec = FreestreamSpec(aoa=7.0, mach=0.45)
        cons = freestream_state(spec)
        state = FlowState(np.tile(cons, (mesh.num_elements, 1)))
        res = euler_residual(mesh, state, spec)
        assert np.max(np.abs(res)) < 1e-13

    def test_identical_states_no_dissipation(self):
        # single interior face between identical states: flux equals the
        # physical flux (the dissipation term vanishes exactly)
        mesh = two_cell_square()
        spec = FreestreamSpec(aoa=3.0, mach=0.4)
        cons = prim_to_cons(1.1, 0.3, -0.1, 0.8)
        state = FlowState(np.tile(cons, (2, 1)))
        parts = face_fluxes(mesh, state, spec)
        def phys(nvec):
            rho, mu, mv, e = cons
            u, v = mu / rho, mv / rho
            p = (GAMMA - 1) * (e - 0.5 * rho * (u * u + v * v))
            un = u * nvec[0] + v * nvec[1]
            return np.array([rho * un, rho * u * un + p * nvec[0],
                             rho * v * un + p * nvec[1], (e + p) * un])
        # interior face (2, 0): normal out of triangle (0, 1, 2) is (-1, 1)
        np.testing.assert_allclose(parts.int_flux[0], phys((-1.0, 1.0)), rtol=1e-14)

    def test_hand_evaluated_two_cell_balance(self):
        mesh = two_cell_square()
        spec = FreestreamSpec(aoa=2.0, mach=0.35)
        ghost = freestream_state(spec)
        u0 = prim_to_cons(1.0, 0.3, 0.1, 0.9)
        u1 = prim_to_cons(1.1, -0.2, 0.05, 1.0)
        state = FlowState(np.stack([u0, u1]))
        res = euler_residual(mesh, state, spec)

        n_int = (-1.0, 1.0)            # out of cell 0 through edge (2, 0)
        want0 = (oracle_flux(u0, ghost, (0.0, -1.0))    # bottom
                 + oracle_flux(u0, ghost, (1.0, 0.0))   # right
                 + oracle_flux(u0, u1, n_int))
        want1 = (oracle_flux(u1, ghost, (0.0, 1.0))     # top
                 + oracle_flux(u1, ghost, (-1.0, 0.0))  # left
                 + oracle_flux(u1, u0, (1.0, -1.0)))    # reversed interior normal
        np.testing.assert_allclose(res[0], want0, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(res[1], want1, rtol=1e-12, atol=1e-14)

    def test_wall_flux_pressure_only(self):
        mesh = two_cell_square(bottom_tag="airfoil")
        spec = FreestreamSpec(aoa=2.0, mach=0.35)
        u0 = prim_to_cons(1.0, 0.3, 0.1, 0.9)
        u1 = prim_to_cons(1.1, -0.2, 0.05, 1.0)
        state = FlowState(np.stack([u0, u1]))
        parts = face_fluxes(mesh, state, spec)
        # bottom edge normal is (0, -1), owned by cell 0 with p = 0.9
        np.testing.assert_allclose(parts.wall_flux[0], [0.0, 0.0, -0.9, 0.0],
                                   rtol=1e-14, atol=1e-15)

    def test_interior_antisymmetry_shared_computation(self):
        # the residual must be the signed scatter of one shared flux array
        mesh = small_airfoil()
        spec = FreestreamSpec(aoa=5.0, mach=0.5)
        rng = np.random.default_rng(3)
        prim = np.stack([rng.uniform(0.8, 1.2, mesh.num_elements),
                         rng.uniform(-0.3, 0.6, mesh.num_elements),
                         rng.uniform(-0.3, 0.3, mesh.num_elements),
                         rng.uniform(0.5, 1.0, mesh.num_elements)], axis=1)
        state = FlowState.from_primitives(prim, GAMMA)
        parts = face_fluxes(mesh, state, spec)

        def scatter(idx, src):
            out = np.zeros((mesh.num_elements, 4))
            np.add.at(out, idx, src)
            return out

        # one shared interior flux array, scattered with opposite signs
        rebuilt = (scatter(parts.int_left, parts.int_flux)
                   + scatter(parts.int_right, -parts.int_flux)
                   + scatter(parts.far_cell, parts.far_flux)
                   + scatter(parts.wall_cell, parts.wall_flux))
        np.testing.assert_array_equal(rebuilt, parts.residual)
        # per face, what enters the left cell is the exact negation of what
        # enters the right cell
        np.testing.assert_array_equal(parts.int_flux + (-parts.int_flux),
                                      np.zeros_like(parts.int_flux))

    def test_nonphysical_state_rejected(self):
        mesh = two_cell_square()
        spec = FreestreamSpec(aoa=0.0, mach=0.5)
        state = FlowState(np.array([[1.0, 0.0, 0.0, 1.0], [-1.0, 0.0, 0.0, 1.0]]))
        with pytest.raises(SolverError, match="density"):
            euler_residual(mesh, state, spec)

    def test_unmarked_boundary_edge(self):
        mesh = two_cell_square()
        mesh.markers[0].segments = mesh.markers[0].segments[:-1]
        spec = FreestreamSpec(aoa=0.0, mach=0.5)
        state = FlowState(np.tile(freestream_state(spec), (2, 1)))
        with pytest.raises(SolverError, match="not covered"):
            euler_residual(mesh, state, spec)


class TestSolve:
    def test_single_step_contract(self):
        out = solve(small_airfoil(), FreestreamSpec(aoa=2.0, mach=0.4),
                    max_iters=1, residual_tol=0.0)
        assert out.iterations_run == 1

    def test_all_farfield_fixed_point(self):
        mesh = rectangle_mesh(5, 4)
        spec = FreestreamSpec(aoa=-3.0, mach=0.6)
        out = solve(mesh, spec, max_iters=50, residual_tol=1e-8)
        assert out.final_residual_norm < 1e-10
        cons = freestream_state(spec)
        u, v = cons[1], cons[2]
        p = 1.0 / GAMMA
        np.testing.assert_allclose(out.node_fields,
                                   np.tile([u, v, p], (mesh.num_nodes, 1)),
                                   rtol=1e-12, atol=1e-13)

    def test_deterministic(self):
        mesh = small_airfoil()
        spec = FreestreamSpec(aoa=4.0, mach=0.5)
        a = solve(mesh, spec, max_iters=60, residual_tol=0.0)
        b = solve(mesh, spec, max_iters=60, residual_tol=0.0)
        assert np.array_equal(a.node_fields, b.node_fields)
        assert a.final_residual_norm == b.final_residual_norm
        assert np.array_equal(a.cell_state.conservative, b.cell_state.conservative)

    def test_rotation_equivariance_farfield(self):
        theta = 25.0
        c, s = math.cos(math.radians(theta)), math.sin(math.radians(theta))
        rot = np.array([[c, -s], [s, c]])
        base = rectangle_mesh(4, 3)
        rotated = Mesh(nodes=base.nodes @ rot.T, elements=base.elements,
                       markers=[Marker(m.tag, list(m.segments)) for m in base.markers])
        out = solve(base, FreestreamSpec(aoa=5.0, mach=0.5), 40, 1e-9)
        out_rot = solve(rotated, FreestreamSpec(aoa=5.0 + theta, mach=0.5), 40, 1e-9)
        np.testing.assert_allclose(out_rot.node_fields[:, :2],
                                   out.node_fields[:, :2] @ rot.T, atol=1e-12)
        np.testing.assert_allclose(out_rot.node_fields[:, 2], out.node_fields[:, 2],
                                   atol=1e-12)

    def test_symmetric_body_vy_antisymmetry(self):
        n_surface, n_rings = 16, 5
        mesh = triangulate(airfoil_omesh(n_surface=n_surface, n_rings=n_rings,
                                         farfield_radius=8.0, growth=2.2))
        out = solve(mesh, FreestreamSpec(aoa=0.0, mach=0.4), max_iters=800,
                    residual_tol=1e-9)
        vy = out.node_fields[:, 1]

        def mirror(node):
            ring, sec = divmod(node, n_surface)
            return ring * n_surface + (-sec) % n_surface
        pairs = [(n, mirror(n)) for n in range(mesh.num_nodes) if n < mirror(n)]
        scale = np.max(np.abs(vy))
        checked = mismatched = 0
        for a, b in pairs:
            if abs(vy[a]) < 0.1 * scale and abs(vy[b]) < 0.1 * scale:
                continue
            checked += 1
            if np.sign(vy[a]) == np.sign(vy[b]):
                mismatched += 1
        assert checked > 10
        assert mismatched <= 0.1 * checked

    def test_marker_aliases(self):
        mesh = two_cell_square()
        mesh.markers[0].tag = "outer"
        spec = FreestreamSpec(aoa=0.0, mach=0.5)
        with pytest.raises(SolverError, match="role"):
            solve(mesh, spec, 5)
        out = solve(mesh, spec, 5, marker_roles={"outer": "farfield"})
        assert out.iterations_run <= 5

    def test_clockwise_mesh_rejected(self):
        mesh = Mesh(nodes=[(0, 0), (1, 0), (0, 1)], elements=[(0, 2, 1)],
                    markers=[Marker("farfield", [(0, 2), (2, 1), (1, 0)])])
        with pytest.raises(SolverError, match="orientation"):
            solve(mesh, FreestreamSpec(aoa=0.0, mach=0.5), 5)


class TestCellsToNodes:
    def test_uniform_state(self):
        mesh = rectangle_mesh(3, 2)
        spec = FreestreamSpec(aoa=9.0, mach=0.3)
        state = FlowState(np.tile(freestream_state(spec), (mesh.num_elements, 1)))
        fields = cells_to_nodes(mesh, state)
        cons = freestream_state(spec)
        np.testing.assert_allclose(
            fields, np.tile([cons[1], cons[2], 1.0 / GAMMA], (mesh.num_nodes, 1)),
            rtol=1e-14, atol=1e-15)

    def test_equal_area_average(self):
        # two equal triangles sharing the diagonal: shared nodes average p
        mesh = two_cell_square()
        prim = np.array([[1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 3.0]])
        state = FlowState.from_primitives(prim, GAMMA)
        fields = cells_to_nodes(mesh, state)
        assert fields[0, 2] == pytest.approx(2.0)   # node 0 touches both cells
        assert fields[1, 2] == pytest.approx(1.0)   # node 1 only in cell 0
        assert fields[3, 2] == pytest.approx(3.0)   # node 3 only in cell 1


class TestBackward:
    def fd_gradients(self, mesh, spec, iters, cot, eps=1e-6):
        def value(nodes, aoa, mach):
            m = Mesh(nodes, list(mesh.elements),
                     [Marker(mk.tag, list(mk.segments)) for mk in mesh.markers])
            out = solve(m, FreestreamSpec(aoa=aoa, mach=mach, gamma=spec.gamma),
                        iters, residual_tol=0.0)
            return float(np.sum(out.node_fields * cot))

        base = mesh.nodes
        dn = np.zeros_like(base)
        for i in range(base.shape[0]):
            for j in range(2):
                step = eps * max(1.0, abs(base[i, j]))
                plus = base.copy(); plus[i, j] += step
                minus = base.copy(); minus[i, j] -= step
                dn[i, j] = (value(plus, spec.aoa, spec.mach)
                            - value(minus, spec.aoa, spec.mach)) / (2 * step)
        da = (value(base, spec.aoa + eps, spec.mach)
              - value(base, spec.aoa - eps, spec.mach)) / (2 * eps)
        dm = (value(base, spec.aoa, spec.mach + eps)
              - value(base, spec.aoa, spec.mach - eps)) / (2 * eps)
        return dn, da, dm

    @staticmethod
    def rel_err(got, want):
        scale = max(np.max(np.abs(got)), np.max(np.abs(want)), 1e-12)
        return np.max(np.abs(np.asarray(got) - np.asarray(want))) / scale

    def test_zero_cotangent(self):
        mesh = small_airfoil()
        spec = FreestreamSpec(aoa=3.0, mach=0.45)
        out = solve(mesh, spec, 3, residual_tol=0.0, record=True)
        dn, da, dm = solve_backward(mesh, spec, out.record, np.zeros_like(out.node_fields))
        assert np.all(dn == 0.0) and da == 0.0 and dm == 0.0

    def test_single_iteration_matches_fd(self):
        mesh = triangulate(airfoil_omesh(n_surface=6, n_rings=3,
                                         farfield_radius=4.0, growth=1.5))
        assert mesh.num_nodes <= 20
        spec = FreestreamSpec(aoa=3.0, mach=0.5)
        rng = np.random.default_rng(0)
        cot = rng.standard_normal((mesh.num_nodes, 3))
        out = solve(mesh, spec, 1, residual_tol=0.0, record=True)
        dn, da, dm = solve_backward(mesh, spec, out.record, cot)
        fn, fa, fm = self.fd_gradients(mesh, spec, 1, cot)
        assert self.rel_err(dn, fn) < 1e-6
        assert self.rel_err(da, fa) < 1e-6
        assert self.rel_err(dm, fm) < 1e-6

    def test_two_iterations_fifty_cells(self):
        mesh = triangulate(airfoil_omesh(n_surface=8, n_rings=3,
                                         farfield_radius=4.0, growth=1.5))
        assert mesh.num_elements <= 50
        spec = FreestreamSpec(aoa=-4.0, mach=0.55)
        rng = np.random.default_rng(1)
        cot = rng.standard_normal((mesh.num_nodes, 3))
        out = solve(mesh, spec, 2, residual_tol=0.0, record=True)
        dn, da, dm = solve_backward(mesh, spec, out.record, cot)
        fn, fa, fm = self.fd_gradients(mesh, spec, 2, cot)
        assert self.rel_err(dn, fn) < 1e-4
        assert self.rel_err(da, fa) < 1e-4
        assert self.rel_err(dm, fm) < 1e-4

    def test_aoa_gradient_sign_matches_secant(self):
        # deflection functional (sum of vy) grows with aoa at a symmetric state
        mesh = small_airfoil()
        iters = 20
        cot = np.zeros((mesh.num_nodes, 3))
        cot[:, 1] = 1.0

        def functional(aoa):
            out = solve(mesh, FreestreamSpec(aoa=aoa, mach=0.4), iters, residual_tol=0.0)
            return float(np.sum(out.node_fields * cot))

        secant = functional(0.5) - functional(-0.5)
        spec = FreestreamSpec(aoa=0.0, mach=0.4)
        out = solve(mesh, spec, iters, residual_tol=0.0, record=True)
        _, da, _ = solve_backward(mesh, spec, out.record, cot)
        assert secant > 0.0
        assert da > 0.0
        assert np.sign(da) == np.sign(secant)

    def test_backward_repeatable(self):
        mesh = small_airfoil()
        spec = FreestreamSpec(aoa=1.0, mach=0.4)
        out = solve(mesh, spec, 4, residual_tol=0.0, record=True)
        cot = np.ones_like(out.node_fields)
        first = solve_backward(mesh, spec, out.record, cot)
        second = solve_backward(mesh, spec, out.record, cot)
        np.testing.assert_array_equal(first[0], second[0])
        assert first[1:] == second[1:]

    def test_record_mismatch(self):
        mesh = small_airfoil()
        spec = FreestreamSpec(aoa=1.0, mach=0.4)
        out = solve(mesh, spec, 2, residual_tol=0.0, record=True)
        other = small_airfoil(n_surface=6)
        with pytest.raises(SolverError, match="mismatch"):
            solve_backward(other, spec, out.record, np.zeros((other.num_nodes, 3)))
        with pytest.raises(SolverError, match="mismatch"):
            solve_backward(mesh, FreestreamSpec(aoa=2.0, mach=0.4), out.record,
                           np.zeros((mesh.num_nodes, 3)))

    def test_unrecorded_solve_has_no_record(self):
        mesh = small_airfoil()
        spec = FreestreamSpec(aoa=1.0, mach=0.4)
        out = solve(mesh, spec, 2, residual_tol=0.0)
        assert out.record is None
        with pytest.raises(SolverError, match="record"):
            solve_backward(mesh, spec, out.record, np.zeros((mesh.num_nodes, 3)))
