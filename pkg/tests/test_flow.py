import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahlsim.field import DriftField
from ahlsim.flow import (
    EnsembleConfig,
    attachment_angles,
    decompose_martingale,
    export_snapshots_csv,
    flow_step,
    run_ensemble,
    run_flow,
    trajectory_seed,
    uniform_stream,
)
from ahlsim.measure import make_measure_fourier, make_measure_uniform
from ahlsim.particle import SlitParticle, gamma_tilde

COSINE = make_measure_fourier([(1, 0.5, 0.0)])
FIELD = DriftField(COSINE)


class TestFlowStep:
    def test_antipodal_angle_is_fixed(self):
        p = SlitParticle.from_capacity(0.01)
        x = 0.37
        assert flow_step(p, x, x - 0.5) == x

    def test_step_at_own_angle_jumps_right(self):
        p = SlitParticle.from_capacity(0.01)
        theta = 0.42
        want = theta + math.atan(math.sqrt(math.expm1(0.01))) / math.pi
        assert flow_step(p, theta, theta) == pytest.approx(want, abs=1e-15)

    def test_translation_equivariance(self):
        p = SlitParticle.from_capacity(0.02)
        s = 0.37
        a = flow_step(p, 0.3 + s, 0.11 + s)
        b = flow_step(p, 0.3, 0.11) + s
        assert a == pytest.approx(b, abs=1e-14)

    @given(
        x=st.floats(-2, 2, allow_nan=False),
        theta=st.floats(0, 1, exclude_max=True),
        c=st.floats(1e-5, 0.3),
    )
    @settings(max_examples=150, deadline=None)
    def test_step_size_bound_property(self, x, theta, c):
        p = SlitParticle.from_capacity(c)
        step = abs(flow_step(p, x, theta) - x)
        assert step <= gamma_tilde(p, 0.0) + 1e-15


class TestRunFlow:
    def test_zero_steps(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(p, COSINE, 0.3, 0, seed=1)
        assert traj.snapshots == [(0, 0.3)]
        assert traj.final_n == 0

    def test_matches_scalar_recursion(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(p, COSINE, 0.3, 500, seed=42, snapshot_schedule=range(501))
        th = attachment_angles(COSINE, 42, 500)
        x = 0.3
        for n, theta in enumerate(th, start=1):
            x = flow_step(p, x, theta)
            assert traj.snaps_x[n] == pytest.approx(x, abs=1e-12)

    def test_chunk_size_does_not_change_results(self):
        p = SlitParticle.from_capacity(1e-3)
        a = run_flow(p, COSINE, 0.3, 5000, seed=7, chunk=64)
        b = run_flow(p, COSINE, 0.3, 5000, seed=7, chunk=1 << 14)
        assert a.final_x == b.final_x

    def test_step_size_bound_along_run(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(p, COSINE, 0.1, 2000, seed=9, snapshot_schedule=range(2001))
        steps = np.abs(np.diff(traj.snaps_x))
        assert np.max(steps) <= 0.7 * math.sqrt(p.capacity)

    def test_uniform_measure_is_mean_zero(self):
        c = 1e-3
        p = SlitParticle.from_capacity(c)
        n = int(1 / c)
        finals = np.array(
            [run_flow(p, make_measure_uniform(), 0.2, n, seed=trajectory_seed(5, i)).final_x for i in range(2000)]
        )
        drift = finals - 0.2
        se = np.std(drift) / math.sqrt(len(drift))
        assert abs(np.mean(drift)) < 4 * se

    def test_rotation_equivariance_of_runs(self):
        p = SlitParticle.from_capacity(1e-3)
        s = 0.37
        shifted = COSINE.shifted(s)
        base = run_flow(p, COSINE, 0.3, 10000, seed=13, snapshot_schedule=range(0, 10001, 500))
        moved = run_flow(p, shifted, 0.3 + s, 10000, seed=13, snapshot_schedule=range(0, 10001, 500))
        assert np.max(np.abs(moved.snaps_x - base.snaps_x - s)) < 1e-11

    def test_exit_detection(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(p, COSINE, 0.0, 50000, seed=21, exit_interval=(-0.02, 0.02), stop_on_exit=True)
        assert traj.exit_n is not None
        assert traj.exit_n == traj.final_n
        assert abs(traj.exit_x) > 0.02
        assert traj.exit_side == (1 if traj.exit_x > 0.02 else -1)
        # stop_on_exit only saves work; the exit step itself is identical
        full = run_flow(p, COSINE, 0.0, 50000, seed=21, exit_interval=(-0.02, 0.02))
        assert (full.exit_n, full.exit_x) == (traj.exit_n, traj.exit_x)


class TestMartingaleDecomposition:
    def test_zero_step_values(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(p, COSINE, 0.1, 0, seed=2, track_martingale=True, drift_field=FIELD)
        assert decompose_martingale(traj) == [(0, 0.0, 0.0)]

    def test_requires_tracking(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(p, COSINE, 0.1, 10, seed=2)
        with pytest.raises(ValueError, match="tracking was off"):
            decompose_martingale(traj)

    def test_identity_residual(self):
        p = SlitParticle.from_capacity(1e-3)
        traj = run_flow(
            p, COSINE, 0.3, 30000, seed=3,
            snapshot_schedule=range(0, 30001, 1000),
            track_martingale=True, drift_field=FIELD,
        )
        resid = np.abs(traj.snaps_x - 0.3 - traj.snaps_s - traj.snaps_drift)
        assert np.max(resid) < 1e-9

    def test_martingale_mean_zero_at_t1(self):
        c = 1e-3
        p = SlitParticle.from_capacity(c)
        n = int(1 / c)
        s_vals = np.array(
            [
                run_flow(p, COSINE, 0.0, n, seed=trajectory_seed(31, i), track_martingale=True, drift_field=FIELD).snaps_s[-1]
                for i in range(2000)
            ]
        )
        se = np.std(s_vals) / math.sqrt(len(s_vals))
        assert abs(np.mean(s_vals)) < 4 * se

    def test_sup_martingale_shrinks_with_capacity(self):
        # the exceedance of a fixed threshold decays as c shrinks and the
        # median sup scales like c^{1/4}
        fractions, medians = [], []
        for c, runs in [(4e-4, 200), (1e-4, 200)]:
            p = SlitParticle.from_capacity(c)
            n = int(5.0 / c)
            sups = np.array(
                [
                    run_flow(p, COSINE, 0.0, n, seed=trajectory_seed(777, i), track_martingale=True, drift_field=FIELD, track_s_sup=True).s_sup
                    for i in range(runs)
                ]
            )
            fractions.append(float(np.mean(sups > 0.05)))
            medians.append(float(np.median(sups)))
        assert fractions[1] < fractions[0]
        assert 0.6 < medians[1] / medians[0] < 0.85


class TestEnsembles:
    def cfg(self, **kw):
        base = dict(
            capacity=1e-3,
            measure=COSINE,
            x0=0.3,
            t_max=1.0,
            n_runs=8,
            base_seed=1234,
            snapshot_times=[0.25, 0.5, 1.0],
        )
        base.update(kw)
        return EnsembleConfig(**base)

    def test_bitwise_reproducible(self):
        a = run_ensemble(self.cfg())
        b = run_ensemble(self.cfg())
        for ta, tb in zip(a.trajectories, b.trajectories):
            assert np.array_equal(ta.snaps_x, tb.snaps_x)

    def test_worker_count_does_not_change_results(self):
        a = run_ensemble(self.cfg(workers=1))
        b = run_ensemble(self.cfg(workers=4))
        for ta, tb in zip(a.trajectories, b.trajectories):
            assert np.array_equal(ta.snaps_x, tb.snaps_x)

    def test_distinct_seeds(self):
        ens = run_ensemble(self.cfg())
        seeds = [t.seed for t in ens.trajectories]
        assert len(set(seeds)) == len(seeds)
        finals = [t.final_x for t in ens.trajectories]
        assert len(set(finals)) == len(finals)

    def test_empty_schedule_records_endpoints(self):
        ens = run_ensemble(self.cfg(snapshot_times=None))
        n = ens.config.n_steps
        for t in ens.trajectories:
            assert t.snaps_n.tolist() == [0, n]

    def test_csv_export_deterministic(self, tmp_path):
        f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
        export_snapshots_csv(run_ensemble(self.cfg()), f1)
        export_snapshots_csv(run_ensemble(self.cfg(workers=3)), f2)
        assert f1.read_bytes() == f2.read_bytes()
        header = f1.read_text().splitlines()[0]
        assert header == "run_id,n,t,X"

    def test_snapshot_matrix_shape(self):
        ens = run_ensemble(self.cfg())
        ns, vals = ens.snapshot_matrix()
        assert vals.shape == (8, len(ns))
        # t-unit schedule converted once: n = floor(t / c)
        assert set(np.floor(np.array([0.25, 0.5, 1.0]) / 1e-3).astype(int)) <= set(ns.tolist())


class TestSeeding:
    def test_splitmix_distinct(self):
        seeds = {trajectory_seed(0, i) for i in range(10000)}
        assert len(seeds) == 10000

    def test_stream_reproducible(self):
        assert np.array_equal(uniform_stream(99).random(16), uniform_stream(99).random(16))

    def test_attachment_angles_match_run(self):
        p = SlitParticle.from_capacity(1e-3)
        th = attachment_angles(COSINE, 42, 3)
        x = 0.3
        for t in th:
            x = flow_step(p, x, t)
        traj = run_flow(p, COSINE, 0.3, 3, seed=42)
        assert traj.final_x == pytest.approx(x, abs=1e-13)
