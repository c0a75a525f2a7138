import json

import numpy as np
import pytest

from invariant_kit import (
    ClosedLoopSystem,
    IntervalVector,
    boundary_check,
    grid_minimal_inclusion,
    monte_carlo_trajectories,
    parse_vector_field,
    replay_witness,
)

from helpers import (
    linear_identity_net,
    planar_relu_loop,
    scalar_decay_system,
    scalar_growth_system,
)


class TestBoundaryCheck:
    def test_decay_margins(self):
        sys, wbox = scalar_decay_system()
        report = boundary_check(sys, IntervalVector([-1.0], [1.0]), wbox,
                                n_samples=1000, seed=0)
        assert report.passed
        assert report.margins_lower[0] >= 1.0 - 1e-9
        assert report.margins_upper[0] >= 1.0 - 1e-9

    def test_growth_witness_found(self):
        sys, wbox = scalar_growth_system()
        report = boundary_check(sys, IntervalVector([-1.0], [1.0]), wbox,
                                n_samples=100, seed=0)
        assert not report.passed
        w = report.witnesses[0]
        assert w.outward_component != 0.0
        assert replay_witness(sys, w)

    def test_witness_is_strict_violation(self):
        # the reported component must be certainly outward at the point
        sys, wbox = scalar_growth_system()
        report = boundary_check(sys, IntervalVector([-1.0], [1.0]), wbox,
                                n_samples=100, seed=0)
        for w in report.witnesses:
            val = sys.f_closed(np.asarray(w.x), np.asarray(w.w))
            if w.side == "lower":
                assert val[w.face_index] < 0.0
            else:
                assert val[w.face_index] > 0.0

    def test_degenerate_region_rejected(self):
        sys, wbox = scalar_decay_system()
        with pytest.raises(ValueError):
            boundary_check(sys, IntervalVector([1.0], [1.0]), wbox)

    def test_report_json_round_trip(self, tmp_path):
        sys, wbox = scalar_growth_system()
        report = boundary_check(sys, IntervalVector([-1.0], [1.0]), wbox,
                                n_samples=100, seed=0)
        path = tmp_path / "report.json"
        report.to_json(path)
        doc = json.loads(path.read_text())
        assert doc["passed"] is False
        assert len(doc["witnesses"]) == len(report.witnesses)
        assert set(doc["witnesses"][0]) == {
            "face_index", "side", "x", "w", "outward_component"}

    def test_seeded_determinism(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.5, -0.5], [0.5, 0.5])
        r1 = boundary_check(sys, box, wbox, n_samples=2000, seed=42)
        r2 = boundary_check(sys, box, wbox, n_samples=2000, seed=42)
        assert json.dumps(r1.to_dict(), sort_keys=True) == \
            json.dumps(r2.to_dict(), sort_keys=True)

    def test_disturbance_corners_catch_worst_case(self):
        # x' = -0.1 x + w: on the box [-1,1] with |w| <= 0.2 the corners of
        # the disturbance box witness non-invariance
        vf = parse_vector_field(["w1 - 0.1*x1 + 0*u1"], (1, 1, 1))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 1))))
        report = boundary_check(sys, IntervalVector([-1.0], [1.0]),
                                IntervalVector([-0.2], [0.2]),
                                n_samples=50, w_samples=0, seed=1)
        assert not report.passed


class TestGridMinimal:
    def test_constant_field_exact(self):
        vf = parse_vector_field(["2.5 + 0*x1 + 0*u1"], (1, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 1))))
        r = grid_minimal_inclusion(sys, IntervalVector([-1.0], [1.0]),
                                   IntervalVector(np.zeros(0), np.zeros(0)),
                                   grid_per_dim=5)
        assert r.lo[0] == 2.5 and r.hi[0] == 2.5

    def test_linear_matches_vertex_oracle(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.5, -0.25], [0.5, 0.75])
        r = grid_minimal_inclusion(sys, box, wbox, grid_per_dim=41)
        acl = np.array([[-2.5, 1.0], [1.0, -2.5]])
        verts = np.array([[x1, x2] for x1 in (box.lo[0], box.hi[0])
                          for x2 in (box.lo[1], box.hi[1])])
        imgs = verts @ acl.T
        lo = imgs.min(axis=0) - 0.01
        hi = imgs.max(axis=0) + 0.01
        spacing = np.max(box.width()) / 40
        lipschitz = 3.5
        assert np.max(np.abs(r.lo - lo)) <= spacing * lipschitz
        assert np.max(np.abs(r.hi - hi)) <= spacing * lipschitz
        # inner approximation: never wider than the true range
        assert np.all(r.lo >= lo - 1e-12) and np.all(r.hi <= hi + 1e-12)

    def test_square_interior_minimum(self):
        vf = parse_vector_field(["x1^2 + 0*u1"], (1, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 1))))
        box = IntervalVector([-1.0], [2.0])
        r = grid_minimal_inclusion(sys, box, wbox=IntervalVector(np.zeros(0),
                                                                 np.zeros(0)),
                                   grid_per_dim=301)
        spacing = 3.0 / 300
        assert 0.0 <= r.lo[0] <= spacing ** 2 + 1e-12
        assert abs(r.hi[0] - 4.0) <= 1e-12

    def test_budget_guard(self):
        sys, wbox = planar_relu_loop()
        with pytest.raises(ValueError):
            grid_minimal_inclusion(sys, IntervalVector([-1, -1], [1, 1]), wbox,
                                   grid_per_dim=100_000)

    def test_refinement_monotonicity(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.5, -0.5], [0.5, 0.5])
        coarse = grid_minimal_inclusion(sys, box, wbox, grid_per_dim=11)
        fine = grid_minimal_inclusion(sys, box, wbox, grid_per_dim=22)
        # doubling the grid never shrinks the reported interval
        assert np.all(fine.lo <= coarse.lo) and np.all(coarse.hi <= fine.hi)


class TestMonteCarlo:
    def test_zero_dynamics_constant(self):
        vf = parse_vector_field(["0*x1 + 0*u1"], (1, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 1))))
        box = IntervalVector([-1.0], [1.0])
        bundle = monte_carlo_trajectories(sys, box,
                                          IntervalVector(np.zeros(0), np.zeros(0)),
                                          count=20, horizon=1.0, h=0.1, seed=0)
        assert np.array_equal(bundle.states[:, 0, :], bundle.states[:, -1, :])

    def test_stable_loop_contracts(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.5, -0.5], [0.5, 0.5])
        bundle = monte_carlo_trajectories(sys, box, wbox, count=50,
                                          horizon=5.0, h=0.1, seed=1)
        assert not bundle.divergent.any()
        start = np.max(np.abs(bundle.states[:, 0, :]), axis=1)
        end = np.max(np.abs(bundle.states[:, -1, :]), axis=1)
        assert np.all(end <= np.maximum(0.2 * start, 0.05))

    def test_divergent_flagging(self):
        vf = parse_vector_field(["x1^3 + 0*u1"], (1, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 1))))
        bundle = monte_carlo_trajectories(sys, IntervalVector([2.0], [3.0]),
                                          IntervalVector(np.zeros(0), np.zeros(0)),
                                          count=5, horizon=10.0, h=0.1, seed=2)
        assert bundle.divergent.all()

    def test_seeded_determinism(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.5, -0.5], [0.5, 0.5])
        b1 = monte_carlo_trajectories(sys, box, wbox, 10, 1.0, 0.1, seed=9)
        b2 = monte_carlo_trajectories(sys, box, wbox, 10, 1.0, 0.1, seed=9)
        assert np.array_equal(b1.states, b2.states)

    def test_explicit_starts(self):
        sys, wbox = planar_relu_loop()
        starts = np.array([[0.1, 0.2], [-0.3, 0.0]])
        bundle = monte_carlo_trajectories(sys, IntervalVector([-1, -1], [1, 1]),
                                          wbox, count=99, horizon=0.5, h=0.1,
                                          seed=0, starts=starts)
        assert bundle.states.shape[0] == 2
        assert np.array_equal(bundle.states[:, 0, :], starts)

    def test_matched_grid_times(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.1, -0.1], [0.1, 0.1])
        bundle = monte_carlo_trajectories(sys, box, wbox, 3, 1.0, 0.25, seed=0)
        assert np.array_equal(bundle.times, [0.0, 0.25, 0.5, 0.75, 1.0])
