import numpy as np
import pytest
from scipy import sparse

from agsynth.conic_backend import (
    ConicProgram,
    EqualityBlock,
    InequalityBlock,
    SecondOrderConeBlock,
    SemidefiniteBlock,
    available_backends,
    epigraph_reformulation,
    smat,
    solve,
    svec,
    svec_dim,
    verify_solution,
)

BACKENDS = available_backends()


def _program(num_vars, quad=None, lin=None, const=0.0, eqs=(), ineqs=(), socs=(), lmis=()):
    return ConicProgram(
        num_vars=num_vars,
        obj_quad=sparse.csr_matrix(quad if quad is not None else np.zeros((num_vars, num_vars))),
        obj_lin=np.asarray(lin if lin is not None else np.zeros(num_vars), dtype=float),
        obj_const=const,
        equalities=tuple(eqs),
        inequalities=tuple(ineqs),
        socs=tuple(socs),
        lmis=tuple(lmis),
    )


def _lmi_from_coeffs(const_mat, coeff_mats):
    """LMI const + sum_j x_j coeff_j >= 0 in svec form."""
    dim = const_mat.shape[0]
    A = np.column_stack([svec(c) for c in coeff_mats])
    return SemidefiniteBlock(dim=dim, A=sparse.csr_matrix(A), const=svec(const_mat))


def psd_bound_program():
    # minimize t subject to [[t, 1], [1, t]] >= 0; optimum t = 1
    lmi = _lmi_from_coeffs(np.array([[0.0, 1.0], [1.0, 0.0]]), [np.eye(2)])
    return _program(1, lin=[1.0], lmis=[lmi])


def norm_bound_program():
    # minimize t subject to ||(3, 4)|| <= t; optimum t = 5
    soc = SecondOrderConeBlock(
        A=sparse.csr_matrix(np.zeros((2, 1))), b=np.array([3.0, 4.0]),
        c=np.array([1.0]), d=0.0,
    )
    return _program(1, lin=[1.0], socs=[soc])


def least_squares_program():
    # minimize ||x||^2 subject to x1 + x2 = 2; optimum x = (1, 1)
    eq = EqualityBlock(A=sparse.csr_matrix(np.ones((1, 2))), b=np.array([2.0]))
    return _program(2, quad=np.eye(2), eqs=[eq])


@pytest.mark.parametrize("backend", BACKENDS)
def test_psd_bound(backend):
    sol = solve(psd_bound_program(), backend=backend)
    assert sol.status == "optimal"
    assert abs(sol.x[0] - 1.0) < 1e-6
    assert abs(sol.objective - 1.0) < 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_norm_bound(backend):
    sol = solve(norm_bound_program(), backend=backend)
    assert sol.status == "optimal"
    assert abs(sol.x[0] - 5.0) < 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_least_squares(backend):
    sol = solve(least_squares_program(), backend=backend)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-6)
    assert abs(sol.objective - 2.0) < 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_asymmetric_psd_block_pins_vectorization(backend):
    # minimize t with A0 + t I >= 0; distinct off-diagonals in A0 expose
    # any row-ordering mistake in the svec lowering
    A0 = np.array([[2.0, 0.3, -0.5], [0.3, 1.0, 0.7], [-0.5, 0.7, 3.0]])
    lmi = _lmi_from_coeffs(A0, [np.eye(3)])
    sol = solve(_program(1, lin=[1.0], lmis=[lmi]), backend=backend)
    assert sol.status == "optimal"
    assert abs(sol.x[0] + np.linalg.eigvalsh(A0).min()) < 1e-6


def mixed_program():
    eq = EqualityBlock(A=sparse.csr_matrix(np.ones((1, 3))), b=np.array([3.0]))
    ineq = InequalityBlock(
        A=sparse.csr_matrix(np.array([[1.0, 0.0, 0.0]])), b=np.array([1.2])
    )
    soc = SecondOrderConeBlock(
        A=sparse.csr_matrix(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])),
        b=np.array([-1.0, -1.0]),
        c=np.array([1.0, 0.0, 0.0]),
        d=0.0,
    )
    lmi = _lmi_from_coeffs(
        np.array([[0.0, 0.3], [0.3, 0.0]]),
        [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), np.zeros((2, 2))],
    )
    return _program(3, quad=np.eye(3), lin=[0.1, 0.0, 0.0],
                    eqs=[eq], ineqs=[ineq], socs=[soc], lmis=[lmi])


def test_backends_agree_on_mixed_program():
    objs = {}
    for backend in BACKENDS:
        sol = solve(mixed_program(), backend=backend)
        assert sol.status == "optimal", (backend, sol.diagnostics)
        objs[backend] = sol.objective
    values = list(objs.values())
    assert abs(values[0] - values[1]) <= 1e-5 * max(1.0, abs(values[0]))


def test_verify_solution_clean_and_perturbed():
    for make in (psd_bound_program, norm_bound_program, least_squares_program):
        program = make()
        sol = solve(program)
        report = verify_solution(program, sol, tol=1e-6)
        assert report.ok
        assert report.max_violation <= 1e-6
        bumped = sol.x.copy()
        bumped[0] -= 1.0
        bad = verify_solution(
            program, type(sol)(sol.status, bumped, None, {}), tol=1e-6
        )
        assert len(bad.flagged()) >= 1


def test_verify_solution_empty_program():
    program = _program(2)
    fake = solve(least_squares_program())
    report = verify_solution(program, fake, tol=1e-6)
    assert report.records == ()
    assert report.ok


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_detected(backend):
    # x >= 1 and x <= 0 simultaneously
    ineq = InequalityBlock(
        A=sparse.csr_matrix(np.array([[-1.0], [1.0]])), b=np.array([-1.0, 0.0])
    )
    sol = solve(_program(1, lin=[1.0], ineqs=[ineq]), backend=backend)
    assert sol.status == "infeasible"
    assert sol.x is None and sol.objective is None


def test_unknown_backend_rejected():
    with pytest.raises(ValueError, match="unknown backend"):
        solve(least_squares_program(), backend="nope")


def test_epigraph_reformulation_matches_native():
    for make in (least_squares_program, mixed_program):
        native = solve(make())
        lifted = solve(epigraph_reformulation(make()))
        assert lifted.status == "optimal"
        assert abs(lifted.objective - native.objective) <= 1e-6 * max(1.0, abs(native.objective))


def test_svec_hand_case_and_round_trip():
    M = np.array([[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(svec(M), [1.0, 2.0 * np.sqrt(2.0), 3.0])
    np.testing.assert_allclose(smat(svec(M), 2), M)
    rng = np.random.default_rng(0)
    for n in (1, 3, 5):
        A = rng.standard_normal((n, n))
        A = A + A.T
        B = rng.standard_normal((n, n))
        B = B + B.T
        assert svec(A).shape == (svec_dim(n),)
        # vectorization preserves the trace inner product
        assert abs(svec(A) @ svec(B) - np.trace(A @ B)) < 1e-10
        np.testing.assert_allclose(smat(svec(A), n), A)


def test_environment_backend_selection(monkeypatch):
    monkeypatch.setenv("AGSYNTH_BACKEND", "scs")
    sol = solve(least_squares_program())
    assert sol.diagnostics["backend"] == "scs"
    monkeypatch.setenv("AGSYNTH_BACKEND", "bogus")
    with pytest.raises(ValueError):
        solve(least_squares_program())
