import numpy as np
import pytest

from invariant_kit import (
    ClosedLoopSystem,
    EmbeddingState,
    IntervalVector,
    Paralleletope,
    TransformedSystem,
    boundary_check,
    check_invariance,
    check_paralleletope_invariance,
    choose_transform,
    embedding_for_transformed,
    embedding_system,
    find_equilibrium,
    grid_minimal_inclusion,
    integrate_forward,
    parse_vector_field,
    simulate_closed_loop,
    transformed_inclusion,
)
from invariant_kit.inclusions import closed_loop_jacobians
from invariant_kit.paralleletopes import _block_eigvals

from helpers import (
    leader_follower_system,
    linear_identity_net,
    planar_relu_loop,
    skew_linear_system,
)


class TestParalleletopeType:
    def test_membership(self):
        t = np.array([[1.0, 1.0], [0.0, 1.0]])
        pt = Paralleletope(t, IntervalVector([-1.0, -1.0], [1.0, 1.0]))
        assert pt.contains_point([0.0, 0.0])
        assert pt.contains_point([1.5, -0.6])  # Tx = (0.9, -0.6)
        assert not pt.contains_point([1.5, 0.0])  # Tx = (1.5, 0)

    def test_vertices(self):
        t = np.array([[2.0, 0.0], [0.0, 1.0]])
        pt = Paralleletope(t, IntervalVector([-2.0, -1.0], [2.0, 1.0]))
        verts = pt.x_vertices()
        assert verts.shape == (4, 2)
        assert np.max(np.abs(verts[:, 0])) == 1.0

    def test_rejects_singular_transform(self):
        with pytest.raises(ValueError):
            Paralleletope(np.array([[1.0, 2.0], [2.0, 4.0]]),
                          IntervalVector([-1, -1], [1, 1]))


class TestTransformedSystem:
    def test_inverse_enclosure_contains_refined_inverse(self):
        rng = np.random.default_rng(0)
        sys, _ = planar_relu_loop()
        for _ in range(10):
            t = rng.normal(size=(2, 2)) + 3 * np.eye(2)
            ts = TransformedSystem(sys, t)
            # one step of Newton refinement gives a near-exact inverse
            m = ts.tinv
            m_ref = m + m @ (np.eye(2) - t @ m)
            assert np.all(ts.tinv_enclosure.lo <= m_ref + 1e-18)
            assert np.all(m_ref - 1e-18 <= ts.tinv_enclosure.hi)

    def test_transformed_field_correspondence(self):
        sys, _ = planar_relu_loop()
        t = np.array([[1.0, 0.5], [-0.25, 1.0]])
        ts = TransformedSystem(sys, t)
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.uniform(-0.5, 0.5, 2)
            w = rng.uniform(-0.01, 0.01, 2)
            g = ts.g_closed(t @ x, w)
            f = sys.f_closed(x, w)
            assert np.max(np.abs(g - t @ f)) <= 1e-12


class TestTransformedInclusion:
    def test_identity_reduces_bitwise(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.4, -0.3], [0.4, 0.5])
        region = IntervalVector([-0.6, -0.6], [0.6, 0.6])
        ts = TransformedSystem(sys, np.eye(2))
        from invariant_kit.inclusions import closed_loop_jacobian_inclusion
        from invariant_kit.networks import crown_affine_bounds
        jacs = closed_loop_jacobians(sys, region, wbox)
        direct = closed_loop_jacobian_inclusion(
            sys, crown_affine_bounds(sys.net, box), region, wbox, jacobians=jacs)
        via_t = transformed_inclusion(ts, box, region, wbox, jacobians=jacs)
        assert np.array_equal(direct.lo, via_t.lo)
        assert np.array_equal(direct.hi, via_t.hi)

    def test_linear_diagonalizing_oracle(self):
        # x' = Ax + u + Dw, u = Kx exact; T diagonalizes A + K
        a = np.array([[-1.0, 2.0], [0.0, -4.0]])
        k = np.array([[-1.0, 0.0], [0.0, -1.0]])
        d = np.array([[1.0], [0.5]])
        texts = ["0 - x1 + 2*x2 + u1 + w1", "0 - 4*x2 + u2 + 0.5*w1"]
        vf = parse_vector_field(texts, (2, 2, 1))
        sys = ClosedLoopSystem(vf, linear_identity_net(k))
        acl = a + k
        lam, v = np.linalg.eig(acl)
        t = np.linalg.inv(v)
        ts = TransformedSystem(sys, t)
        ybox = IntervalVector([-0.5, -0.25], [0.5, 0.25])
        wbox = IntervalVector([-0.01], [0.01])
        region = ts.hull_x(ybox)
        r = transformed_inclusion(ts, ybox, region, wbox)
        # closed-form: hull of T Acl Tinv ybox + T D wbox
        m = t @ acl @ np.linalg.inv(t)
        verts = np.array([[y1, y2] for y1 in (-0.5, 0.5) for y2 in (-0.25, 0.25)])
        imgs = verts @ m.T
        td = (t @ d)[:, 0]
        lo = imgs.min(axis=0) - np.abs(td) * 0.01
        hi = imgs.max(axis=0) + np.abs(td) * 0.01
        assert np.max(np.abs(r.lo - lo)) <= 1e-9
        assert np.max(np.abs(r.hi - hi)) <= 1e-9

    def test_containment_sampled(self):
        sys, wbox = leader_follower_system()
        zreg = IntervalVector.from_center_halfwidth(
            np.zeros(8), [0.06] * 4 + [0.25] * 2 + [0.325] * 2)
        t, _ = choose_transform(sys, np.zeros(8), zreg)
        ts = TransformedSystem(sys, t)
        ybox = IntervalVector.from_center_halfwidth(
            np.zeros(8), np.array([5, 5, 1, 1, 1, 1, 5, 5]) * 0.006)
        r = transformed_inclusion(ts, ybox, ts.hull_x(ybox), wbox)
        rng = np.random.default_rng(2)
        ys = rng.uniform(ybox.lo, ybox.hi, size=(10_000, 8))
        ws = rng.uniform(wbox.lo, wbox.hi, size=(10_000, 4))
        vals = ts.g_closed(ys, ws)
        assert np.all(vals >= r.lo) and np.all(vals <= r.hi)


class TestParalleletopeCertification:
    def test_identity_matches_box_path(self):
        sys, wbox = planar_relu_loop()
        box = IntervalVector([-0.5, -0.5], [0.5, 0.5])
        es_box = embedding_system(sys, wbox, "jacobian", box)
        cert_box = check_invariance(es_box, box)
        ts = TransformedSystem(sys, np.eye(2))
        cert_pt = check_paralleletope_invariance(
            ts, Paralleletope(np.eye(2), box), wbox, jac_region_x=box)
        assert cert_pt.verdict == cert_box.verdict
        assert np.array_equal(cert_pt.rhs_lower, cert_box.rhs_lower)
        assert np.array_equal(cert_pt.rhs_upper, cert_box.rhs_upper)

    def test_skew_system_paralleletope_vs_box(self):
        sys, wbox = skew_linear_system()
        # eigen-aligned paralleletope certifies
        t, rep = choose_transform(sys, np.zeros(2), IntervalVector([-2, -2], [2, 2]))
        assert rep.stable
        ts = TransformedSystem(sys, t)
        ybox = IntervalVector([-1.0, -1.0], [1.0, 1.0])
        cert = check_paralleletope_invariance(ts, Paralleletope(t, ybox), wbox)
        assert cert.invariant
        # the axis-aligned bounding box of that paralleletope is inconclusive
        hull = ts.hull_x(ybox)
        es = embedding_system(sys, wbox, "jacobian", hull)
        cert_box = check_invariance(es, hull)
        assert cert_box.verdict == "inconclusive"
        # and genuinely not invariant: the field exits through the x1 faces
        report = boundary_check(sys, hull, wbox, n_samples=4000, seed=3)
        assert not report.passed
        face = IntervalVector(
            np.array([hull.hi[0], hull.lo[1]]), hull.hi)
        grid = grid_minimal_inclusion(sys, face, wbox, grid_per_dim=41)
        assert grid.hi[0] > 0.0  # outward on the upper x1 face

    def test_certified_paralleletope_boundary_oracle(self):
        sys, wbox = planar_relu_loop()
        t = np.array([[1.0, 0.2], [-0.2, 1.0]])
        ts = TransformedSystem(sys, t)
        ybox = IntervalVector([-0.4, -0.4], [0.4, 0.4])
        pt = Paralleletope(t, ybox)
        cert = check_paralleletope_invariance(ts, pt, wbox)
        assert cert.invariant
        report = boundary_check(sys, pt, wbox, n_samples=20_000, seed=4)
        assert report.passed

    def test_transform_mismatch_rejected(self):
        sys, wbox = planar_relu_loop()
        ts = TransformedSystem(sys, np.eye(2))
        pt = Paralleletope(np.array([[1.0, 0.1], [0.0, 1.0]]),
                           IntervalVector([-1, -1], [1, 1]))
        with pytest.raises(ValueError):
            check_paralleletope_invariance(ts, pt, wbox)


class TestChooseTransform:
    def test_diagonal_system_gives_permutation_like_transform(self):
        texts = ["0 - 2*x1 + 0*u1", "0 - 5*x2"]
        vf = parse_vector_field(texts, (2, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 2))))
        t, rep = choose_transform(sys, np.zeros(2), IntervalVector([-1, -1], [1, 1]))
        assert sorted(z.real for z in rep.eigenvalues) == [-5.0, -2.0]
        assert np.array_equal(np.abs(t), np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_complex_pair_real_rotation_block(self):
        # x' = [[0, 1], [-2, -1]] x: eigenvalues -0.5 +/- i sqrt(7)/2
        texts = ["x2 + 0*u1", "0 - 2*x1 - x2"]
        vf = parse_vector_field(texts, (2, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 2))))
        t, rep = choose_transform(sys, np.zeros(2), IntervalVector([-1, -1], [1, 1]))
        assert rep.method == "eig"
        assert rep.stable
        assert abs(rep.eigenvalues[0].imag) > 0
        a_cl = np.array([[0.0, 1.0], [-2.0, -1.0]])
        j = t @ a_cl @ np.linalg.inv(t)
        # real 2x2 block: [[re, im], [-im, re]] up to the block convention
        assert abs(j[0, 0] - j[1, 1]) <= 1e-8
        assert abs(j[0, 1] + j[1, 0]) <= 1e-8
        assert rep.off_block_residual <= 1e-8

    def test_leader_follower_spectrum_exact(self):
        sys, _ = leader_follower_system()
        zreg = IntervalVector.from_center_halfwidth(
            np.zeros(8), [0.06] * 4 + [0.25] * 2 + [0.325] * 2)
        t, rep = choose_transform(sys, np.zeros(8), zreg)
        eigs = sorted(z.real for z in rep.eigenvalues)
        assert rep.stable
        # follower PD axes: roots of s^2 + 7s + 6, exactly
        assert sum(1 for z in rep.eigenvalues if z == -6.0) == 2
        assert sum(1 for z in rep.eigenvalues if z == -1.0) == 2
        assert all(z.imag == 0.0 for z in rep.eigenvalues)

    def test_defective_matrix_schur_fallback(self):
        # double integrator with no feedback: nilpotent Jordan block
        texts = ["x2 + 0*u1", "0*x1 + 0*u1"]
        vf = parse_vector_field(texts, (2, 1, 0))
        sys = ClosedLoopSystem(vf, linear_identity_net(np.zeros((1, 2))))
        with pytest.warns(RuntimeWarning):
            t, rep = choose_transform(sys, np.zeros(2),
                                      IntervalVector([-1, -1], [1, 1]))
        assert rep.method == "schur"
        assert not rep.stable

    def test_requires_stationary_point(self):
        sys, _ = planar_relu_loop()
        with pytest.raises(ValueError):
            choose_transform(sys, np.array([5.0, 5.0]),
                             IntervalVector([4, 4], [6, 6]))

    def test_quadratic_formula_block(self):
        assert _block_eigvals(np.array([[0.0, 1.0], [-6.0, -7.0]])) == [-6.0, -1.0]
        assert _block_eigvals(np.array([[0.0, 1.0], [-8.0, -6.0]])) == [-4.0, -2.0]


class TestFindEquilibrium:
    def test_linear_loop_origin(self):
        sys, _ = planar_relu_loop()
        x_star = find_equilibrium(sys, np.array([0.3, -0.4]), horizon=60.0,
                                  tol=1e-9)
        assert np.max(np.abs(x_star)) <= 1e-8
        assert np.max(np.abs(sys.f_closed(x_star))) < 1e-9

    def test_nonconvergence_raises(self):
        from helpers import scalar_growth_system
        sys, _ = scalar_growth_system()
        with pytest.raises(RuntimeError):
            find_equilibrium(sys, np.array([1.0]), horizon=1.0, tol=1e-12)

    def test_leader_follower_equilibrium_near_origin(self):
        sys, _ = leader_follower_system()
        x0 = np.array([0.02, -0.01, 0.0, 0.0, 0.01, 0.01, 0.0, 0.0])
        x_star = find_equilibrium(sys, x0, horizon=40.0, tol=1e-10)
        assert np.max(np.abs(x_star)) < 1e-9


class TestCoordinateCorrespondence:
    def test_trajectories_match_through_transform(self):
        sys, wbox = planar_relu_loop()
        t = np.array([[1.0, 0.4], [-0.3, 1.0]])
        ts = TransformedSystem(sys, t)
        rng = np.random.default_rng(5)
        h, steps = 0.01, 400
        for _ in range(5):
            x0 = rng.uniform(-0.4, 0.4, 2)
            w_seq = rng.uniform(-0.01, 0.01, size=(steps, 2))
            xt = simulate_closed_loop(sys, x0, h, steps,
                                      w_of_step=lambda k: w_seq[k])

            def g(y, w):
                return ts.g_closed(y, w)

            y = t @ x0
            ys = [y]
            for k in range(steps):
                w = w_seq[k]
                k1 = g(y, w)
                k2 = g(y + 0.5 * h * k1, w)
                k3 = g(y + 0.5 * h * k2, w)
                k4 = g(y + h * k3, w)
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                ys.append(y)
            ys = np.array(ys)
            assert np.max(np.abs(ys - xt @ t.T)) <= 1e-6


class TestTransformedFamily:
    def test_forward_family_in_y_coordinates(self):
        sys, wbox = planar_relu_loop()
        t = np.array([[1.0, 0.2], [-0.2, 1.0]])
        ts = TransformedSystem(sys, t)
        ybox = IntervalVector([-0.4, -0.4], [0.4, 0.4])
        es = embedding_for_transformed(ts, wbox, ts.hull_x(ybox))
        fam = integrate_forward(es, EmbeddingState.from_box(ybox), 0.1, 30)
        assert len(fam.members) == 31
        assert fam.is_nested()
        assert all(m.certificate.invariant for m in fam.members)
        assert fam.members[1].certificate.transform is not None
        assert fam.members[1].certificate.x_hull is not None
