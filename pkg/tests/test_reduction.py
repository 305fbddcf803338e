import numpy as np
import pytest
import scipy.linalg as la

from ekstab import oracle
from ekstab.arnoldi import ADJOINT, FORWARD, ekba_basis
from ekstab.errors import ModeMismatch, SingularShift
from ekstab.reduction import (
    GENERALIZED,
    STATE_SPACE,
    ReducedModel,
    build_reduced,
    eval_full_tf,
    eval_reduced_tf,
    frequency_sweep,
    write_sweep_csv,
)
from ekstab.sysmodel import DescriptorSystem


def _exactness_order(sys_):
    return (sys_.n_v - sys_.n_p) // (2 * sys_.n_b)


class TestBuildReduced:
    def test_generalized_mass_symmetric_spd(self, sys60):
        basis = ekba_basis(sys60, 4, FORWARD)
        model = build_reduced(basis, GENERALIZED)
        assert la.norm(model.mass - model.mass.T, 2) <= 1e-12
        assert la.eigvalsh(model.mass).min() > 0.0

    def test_forms_agree_at_exactness(self, sys60):
        # The two projections coincide once the basis spans the whole
        # constraint manifold; below exactness they differ by the
        # moment-mismatch of the generalized form.
        m = _exactness_order(sys60)
        basis = ekba_basis(sys60, m, FORWARD)
        ss = build_reduced(basis, STATE_SPACE)
        gen = build_reduced(basis, GENERALIZED)
        fs = eval_reduced_tf(ss, 1j)
        fg = eval_reduced_tf(gen, 1j)
        assert la.norm(fs - fg, 2) <= 1e-8

    def test_exactness_reproduces_full_tf(self, sys60):
        m = _exactness_order(sys60)
        basis = ekba_basis(sys60, m, FORWARD)
        model = build_reduced(basis, STATE_SPACE)
        for w in (1e-5, 1.0, 1e5):
            f = eval_full_tf(sys60, 1j * w)
            g = eval_reduced_tf(model, 1j * w)
            assert la.norm(f - g, 2) <= 1e-8

    def test_adjoint_basis_rejected(self, sys60):
        basis = ekba_basis(sys60, 2, ADJOINT)
        with pytest.raises(ModeMismatch):
            build_reduced(basis, STATE_SPACE)


class TestEvalFullTF:
    def test_matches_theta_oracle(self, sys60, proj60):
        tsys = oracle.theta_system(sys60, proj60)
        rng = np.random.default_rng(2)
        for _ in range(10):
            s = complex(rng.uniform(0.5, 2.0), rng.uniform(-10.0, 10.0))
            f = eval_full_tf(sys60, s)
            ref = oracle.theta_transfer(tsys, s)
            assert la.norm(f - ref, 2) <= 1e-8 * max(1.0, la.norm(ref, 2))

    def test_strictly_proper_decay(self, sys60):
        f_large = eval_full_tf(sys60, 1e8 + 0j)
        f_unit = eval_full_tf(sys60, 1j)
        assert la.norm(f_large, 2) <= 1e-6 * la.norm(f_unit, 2)

    def test_unconstrained_matches_dense(self, siso):
        f = eval_full_tf(siso, 2.0 + 0j)
        assert abs(f[0, 0] - 1.0 / 3.0) <= 1e-14

    def test_spectrum_hit_raises(self, siso):
        # s = -1 is the single eigenvalue of the unconstrained SISO system.
        with pytest.raises(SingularShift):
            eval_full_tf(siso, -1.0 + 0j)


class TestEvalReducedTF:
    def test_scalar_analytic(self):
        model = ReducedModel(
            form=STATE_SPACE,
            a=np.array([[-1.0]]),
            b=np.array([[1.0]]),
            c=np.array([[1.0]]),
        )
        assert abs(eval_reduced_tf(model, 0.0)[0, 0] - 1.0) <= 1e-15

    def test_matches_dense_resolvent(self, sys60):
        basis = ekba_basis(sys60, 3, FORWARD)
        model = build_reduced(basis, STATE_SPACE)
        s = 0.7 + 1.3j
        ref = model.c @ la.inv(s * np.eye(model.order) - model.a) @ model.b
        assert la.norm(eval_reduced_tf(model, s) - ref, 2) <= 1e-12 * la.norm(ref, 2)


class TestFrequencySweep:
    def test_exact_model_error_floor(self, sys60):
        m = _exactness_order(sys60)
        basis = ekba_basis(sys60, m, FORWARD)
        model = build_reduced(basis, STATE_SPACE)
        sweep = frequency_sweep(sys60, model, n_points=50)
        assert np.nanmax(sweep.errors) <= 1e-8
        assert not sweep.skipped

    def test_siso_analytic_response(self, siso):
        model = ReducedModel(
            form=STATE_SPACE,
            a=np.array([[-1.0]]),
            b=np.array([[1.0]]),
            c=np.array([[1.0]]),
        )
        sweep = frequency_sweep(siso, model, n_points=40)
        expected = 1.0 / np.sqrt(1.0 + sweep.full.omegas**2)
        assert np.allclose(sweep.full.norms, expected, atol=1e-12)
        assert abs(sweep.full.hinf_sample - 1.0) <= 1e-9
        assert np.nanmax(sweep.errors) <= 1e-12

    def test_error_invariant_under_input_permutation(self, sys60):
        basis = ekba_basis(sys60, 3, FORWARD)
        model = build_reduced(basis, STATE_SPACE)
        perm = [1, 0]
        permuted_sys = DescriptorSystem(
            M=sys60.M, A=sys60.A, G=sys60.G, B=sys60.B[:, perm], C=sys60.C
        )
        permuted_model = ReducedModel(
            form=STATE_SPACE, a=model.a, b=model.b[:, perm], c=model.c
        )
        s1 = frequency_sweep(sys60, model, n_points=25)
        s2 = frequency_sweep(permuted_sys, permuted_model, n_points=25)
        assert np.allclose(s1.errors, s2.errors, rtol=1e-12, atol=1e-14)

    def test_output_error_bound_per_sample(self, sys60):
        # ||(F - F_m) u|| <= sigma_max(F - F_m) for unit-norm harmonic input.
        basis = ekba_basis(sys60, 3, FORWARD)
        model = build_reduced(basis, STATE_SPACE)
        rng = np.random.default_rng(8)
        for w in (1e-3, 1.0, 1e3):
            diff = eval_full_tf(sys60, 1j * w) - eval_reduced_tf(model, 1j * w)
            bound = la.norm(diff, 2)
            for _ in range(5):
                u = rng.standard_normal(sys60.n_b) + 1j * rng.standard_normal(
                    sys60.n_b
                )
                u /= la.norm(u)
                assert la.norm(diff @ u) <= bound * (1.0 + 1e-12)

    def test_singular_points_skipped_not_fatal(self):
        # Purely imaginary eigenvalues +-i sit exactly on the sampling axis;
        # the hit grid point is skipped and the sweep completes.
        import scipy.sparse as sp

        osc = DescriptorSystem(
            M=sp.eye(2, format="csc"),
            A=sp.csc_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]])),
            G=sp.csc_matrix((2, 0)),
            B=np.array([[1.0], [0.0]]),
            C=np.array([[0.0, 1.0]]),
        )
        model = ReducedModel(
            form=STATE_SPACE,
            a=np.array([[-1.0]]),
            b=np.array([[1.0]]),
            c=np.array([[1.0]]),
        )
        sweep = frequency_sweep(osc, model, w_lo=1e-2, w_hi=1e2, n_points=9)
        # omega = 1 is the middle grid point of this log-symmetric grid
        assert 4 in sweep.skipped
        assert np.isnan(sweep.errors[4])
        assert np.isfinite(sweep.errors[0])

    def test_csv_output(self, sys60, tmp_path):
        basis = ekba_basis(sys60, 2, FORWARD)
        model = build_reduced(basis, STATE_SPACE)
        sweep = frequency_sweep(sys60, model, n_points=10)
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, sweep)
        lines = path.read_text().splitlines()
        assert lines[0] == "omega,norm_full,norm_reduced,error"
        assert len(lines) == 11
        first = [float(v) for v in lines[1].split(",")]
        assert abs(first[0] - 1e-5) <= 1e-18
