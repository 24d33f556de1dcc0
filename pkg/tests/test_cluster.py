import math

import numpy as np
import pytest

from ahlsim.cluster import (
    ClusterState,
    boundary_trace,
    compose_cluster,
    export_geometry,
    grow_cluster,
    read_geometry_csv,
)
from ahlsim.flow import attachment_angles, run_flow
from ahlsim.measure import make_measure_arc, make_measure_fourier
from ahlsim.particle import SlitParticle, boundary_angle_gamma, gamma_jump, slit_map_eval

COSINE = make_measure_fourier([(1, 0.5, 0.0)])


class TestCompose:
    def test_empty_cluster_is_identity(self):
        state = ClusterState.empty()
        z = 1.3 + 0.8j
        assert compose_cluster(state, z) == z

    def test_single_particle_matches_slit_map(self):
        p = SlitParticle.from_capacity(0.05)
        state = ClusterState(thetas=np.array([0.0]), capacities=np.array([p.capacity]))
        z = 2.0 - 0.5j
        assert compose_cluster(state, z) == pytest.approx(slit_map_eval(p, z), rel=1e-14)

    def test_capacity_additivity_at_infinity(self):
        state = grow_cluster(COSINE, 0.01, 100, seed=3)
        R = 1e6
        ratio = compose_cluster(state, R) / R
        assert abs(ratio - math.exp(state.total_capacity)) < 1e-4

    def test_total_capacity_sum(self):
        state = grow_cluster(COSINE, 0.02, 57, seed=1)
        assert state.total_capacity == pytest.approx(57 * 0.02, rel=1e-12)


class TestFlowConsistency:
    def test_boundary_preimage_equals_flow(self):
        # the jitted flow recursion and a composition of the boundary angle
        # function, applied map by map, are the same boundary inverse
        c = 0.01
        p = SlitParticle.from_capacity(c)
        n = 30
        th = attachment_angles(COSINE, 77, n)
        for x in (0.31, 0.62, 0.135):
            y = x
            for t in th:
                y = boundary_angle_gamma(p, y - t) + t
            traj = run_flow(p, COSINE, x, n, seed=77)
            assert abs(traj.final_x - y) < 1e-9

    def test_forward_composition_recovers_ray(self):
        c = 0.01
        p = SlitParticle.from_capacity(c)
        n = 30
        state = grow_cluster(COSINE, c, n, seed=77)
        eps = 1e-7
        for x in (0.31, 0.62, 0.135):
            traj = run_flow(p, COSINE, x, n, seed=77)
            w = compose_cluster(state, (1 + eps) * np.exp(2j * np.pi * traj.final_x))
            assert abs(w - np.exp(2j * np.pi * x)) < 50 * eps


class TestBoundaryTrace:
    def test_empty_cluster_circle(self):
        poly = boundary_trace(ClusterState.empty(), 2**9, eps=1e-4)
        assert np.max(np.abs(np.abs(poly) - (1 + 1e-4))) < 1e-12

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            boundary_trace(ClusterState.empty(), 16)

    def test_single_slit_distance_to_ideal_boundary(self):
        p = SlitParticle.from_length(2.0)
        state = ClusterState(thetas=np.array([0.0]), capacities=np.array([p.capacity]))
        eps = 1e-4
        poly = boundary_trace(state, 2**16, eps=eps)
        d_circle = np.abs(np.abs(poly) - 1.0)
        d_slit = np.abs(poly - np.clip(poly.real, 1.0, 1.0 + p.length))
        dist = np.minimum(d_circle, d_slit)
        # linear-in-eps accuracy away from the two slit-base corners, where
        # the map has square-root behaviour; sqrt(eps) bound globally
        ang = np.linspace(0.0, 1.0, 2**16, endpoint=False)
        y0 = gamma_jump(p)
        corner = np.minimum(np.abs(((ang - y0) + 0.5) % 1.0 - 0.5), np.abs(((ang + y0) + 0.5) % 1.0 - 0.5)) < 0.005
        assert np.max(dist[~corner]) < 10 * eps * math.exp(p.capacity)
        assert np.max(dist) < 4.0 * math.sqrt(eps * (1 + p.beta))
        assert np.all(np.abs(poly) > 1.0)

    def test_arc_growth_concentrates_on_arc(self):
        m = make_measure_arc(0.0, 0.5, 0.05)
        state = grow_cluster(m, 0.005, 200, seed=4)
        eps = 1e-4
        poly = boundary_trace(state, 2**12, eps=eps)
        ang = (np.angle(poly) / (2 * np.pi)) % 1.0
        far = (ang > 0.70) & (ang < 0.80)
        assert np.max(np.abs(poly[far])) < 1.0 + 10 * eps
        assert np.max(np.abs(poly)) > 2.0  # macroscopic growth on the arc side


class TestExport:
    def test_round_trip(self, tmp_path):
        state = grow_cluster(COSINE, 0.01, 20, seed=9)
        poly = boundary_trace(state, 2**9)
        path = tmp_path / "trace.csv"
        export_geometry(poly, path)
        back = read_geometry_csv(path)
        assert np.array_equal(back, poly)

    def test_empty_polyline_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        export_geometry(np.empty(0, dtype=complex), path)
        assert path.read_text() == "re,im\n"
        assert read_geometry_csv(path).size == 0

    def test_svg_bounding_box_contains_points(self, tmp_path):
        state = grow_cluster(COSINE, 0.01, 20, seed=9)
        poly = boundary_trace(state, 2**9)
        svg = tmp_path / "trace.svg"
        export_geometry(poly, tmp_path / "trace.csv", svg_path=svg)
        text = svg.read_text()
        view = [float(v) for v in text.split('viewBox="')[1].split('"')[0].split()]
        xs, ys = poly.real, -poly.imag
        assert view[0] <= xs.min() and xs.max() <= view[0] + view[2]
        assert view[1] <= ys.min() and ys.max() <= view[1] + view[3]
