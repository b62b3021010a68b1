import dataclasses

import numpy as np
import pytest

from agsynth.contract_sdp import (
    PatternViolationError,
    SdpVariables,
    assemble,
    objective_value,
    recover_policy,
    result_from_dict,
    result_to_dict,
    save_result,
    load_result,
    synthesize,
    worst_case_slacks,
)
from agsynth.infograph import compute_decomposition, pattern_QC, pattern_Y
from agsynth.lifting import build_lifted
from agsynth.model import ConstraintData, CostData, validate_instance
from instance_tools import (
    make_chain2,
    make_mixed3,
    random_in_pattern,
    sample_ellipsoid,
)


def test_assemble_dimensions(chain2_nonclassical):
    inst = chain2_nonclassical
    decomp = compute_decomposition(inst)
    lifted = build_lifted(inst, decomp)
    program, layout = assemble(inst, decomp, lifted)
    # coupled trajectory is 3-dimensional, so the containment block is
    # 3 + 2*6 = 15 on a side
    assert len(program.lmis) == 1
    assert program.lmis[0].dim == 15
    assert not layout.degenerate
    assert len(program.socs) == 2 * inst.num_constraint_rows


def test_assemble_degenerate_has_no_lmi(chain2_nested):
    inst = chain2_nested
    decomp = compute_decomposition(inst)
    lifted = build_lifted(inst, decomp)
    program, layout = assemble(inst, decomp, lifted)
    assert layout.degenerate
    assert program.lmis == ()
    assert layout.qxi is None and layout.y is None and layout.lam_index is None
    # one cone row per constraint row, bound affine in the means
    assert len(program.socs) == inst.num_constraint_rows


def test_assemble_rejects_mismatched_lifting(chain2_nonclassical, chain2_nested):
    decomp = compute_decomposition(chain2_nonclassical)
    wrong = build_lifted(chain2_nested, compute_decomposition(chain2_nested))
    with pytest.raises(ValueError, match="lifted system dimensions"):
        assemble(chain2_nonclassical, decomp, wrong)


def _unconstrained_zero_cost_instance():
    inst = make_chain2()
    N_x, N_u = 6, 4
    raw = dataclasses.replace(
        inst,
        constraints=ConstraintData(
            F_x=np.zeros((0, N_x)), F_u=np.zeros((0, N_u)), F_w=None, g=np.zeros(0)
        ),
        cost=CostData(R_x=np.zeros((N_x, N_x)), R_u=np.zeros((N_u, N_u))),
    )
    return validate_instance(raw)


def test_zero_cost_no_rows_solves_to_zero():
    result = synthesize(_unconstrained_zero_cost_instance())
    assert result.status == "optimal"
    assert abs(result.objective) <= 1e-6
    assert result.variables.lam >= 1.0 - 1e-9


def test_synthesize_chain2(chain2_synthesis, chain2_nonclassical):
    result = chain2_synthesis
    inst = chain2_nonclassical
    assert result.status == "optimal"
    assert result.objective >= 0.0
    v = result.variables
    assert v.lam >= 1.0 - 1e-9
    assert -1e-9 <= v.beta <= v.lam + 1e-9
    # recovered gain is pattern-exact
    mask = pattern_QC(compute_decomposition(inst), inst.dims).scalar_mask()
    assert np.all(result.policy.Qv[~mask] == 0.0)
    # robust feasibility certificate holds row-wise
    assert worst_case_slacks(inst, v).min() >= -1e-6


def test_synthesize_matches_objective_formula(chain2_synthesis, chain2_nonclassical):
    inst = chain2_nonclassical
    v = chain2_synthesis.variables
    direct = objective_value(
        v, inst.disturbance.second_moment, inst.cost.R_x, inst.cost.R_u
    )
    assert abs(direct - chain2_synthesis.objective) <= 1e-9 * max(1.0, abs(direct))


def test_degenerate_recovery(chain2_nested):
    result = synthesize(chain2_nested)
    assert result.status == "optimal"
    assert np.all(result.policy.Qv == 0.0)
    np.testing.assert_allclose(result.policy.u_open, result.variables.ubar)
    assert result.contract.shape.shape == (0, 0)


def test_identically_violated_row_reports_infeasible():
    inst = make_chain2()
    raw = dataclasses.replace(
        inst,
        constraints=ConstraintData(
            F_x=np.zeros((1, 6)), F_u=np.zeros((1, 4)), F_w=None, g=np.array([-1.0])
        ),
    )
    result = synthesize(validate_instance(raw))
    assert result.status == "infeasible"
    assert result.policy is None and result.variables is None
    assert "raw_status" in result.diagnostics


def test_objective_value_isolated_terms():
    N_x, N_u = 6, 4
    zeros = dict(
        Qw=np.zeros((N_u, N_x)), Qxi=np.zeros((N_u, N_x)), Y=np.zeros((N_x, N_x)),
        ubar=np.zeros(N_u), vbar=np.zeros(N_x), xbar=np.zeros(N_x),
        Pw=np.zeros((N_x, N_x)), Pxi=np.zeros((N_x, N_x)),
        lam=1.0, beta=0.0, t1=np.zeros(0), t2=np.zeros(0),
    )
    R_x, R_u, M = np.eye(N_x), np.eye(N_u), np.eye(N_x)

    xbar = np.arange(1.0, 7.0)
    only_mean = SdpVariables(**{**zeros, "xbar": xbar})
    assert objective_value(only_mean, M, 2.0 * R_x, R_u) == pytest.approx(2 * xbar @ xbar)

    only_pw = SdpVariables(**{**zeros, "Pw": np.eye(N_x)})
    assert objective_value(only_pw, M, R_x, R_u) == pytest.approx(N_x)


def test_objective_matches_monte_carlo(chain2_synthesis, chain2_nonclassical):
    # sampling oracle: empirical surrogate cost over independent signal
    # pairs should agree with the quadratic formula within 3 standard errors
    inst = chain2_nonclassical
    v = chain2_synthesis.variables
    rng = np.random.default_rng(314159)
    n = 100_000
    W = sample_ellipsoid(inst.disturbance.sigma, rng, n)
    Xi = sample_ellipsoid(inst.disturbance.sigma, rng, n)
    X = v.xbar + W @ v.Pw.T + Xi @ v.Pxi.T
    U = v.ubar + W @ v.Qw.T + Xi @ v.Qxi.T
    costs = np.einsum("ij,jk,ik->i", X, inst.cost.R_x, X) + np.einsum(
        "ij,jk,ik->i", U, inst.cost.R_u, U
    )
    mean = costs.mean()
    se = costs.std(ddof=1) / np.sqrt(n)
    assert abs(mean - chain2_synthesis.objective) <= 3.0 * se


def _random_feasible_variables(inst, rng):
    decomp = compute_decomposition(inst)
    dims = inst.dims
    N_x, N_u, m = inst.N_x, inst.N_u, inst.num_constraint_rows
    Qxi = random_in_pattern(pattern_QC(decomp, dims), rng)
    Y = random_in_pattern(pattern_Y(decomp, dims), rng)
    lam = 1.0 + float(rng.uniform(0.0, 2.0))
    return SdpVariables(
        Qw=np.zeros((N_u, N_x)), Qxi=Qxi, Y=Y,
        ubar=rng.standard_normal(N_u), vbar=rng.standard_normal(N_x),
        xbar=np.zeros(N_x), Pw=np.zeros((N_x, N_x)), Pxi=np.zeros((N_x, N_x)),
        lam=lam, beta=0.0, t1=np.zeros(m), t2=np.zeros(m),
    )


def test_recovered_policy_round_trip(chain2_nonclassical):
    # surrogate input written in primitive coordinates must agree with the
    # recovered policy written in fictitious-signal coordinates
    inst = chain2_nonclassical
    decomp = compute_decomposition(inst)
    rng = np.random.default_rng(8)
    for _ in range(50):
        v = _random_feasible_variables(inst, rng)
        policy = recover_policy(v, decomp, inst.dims)
        Z = v.lam * np.eye(inst.N_x) - v.Y
        for _ in range(4):
            w = rng.standard_normal(inst.N_x)
            xi = rng.standard_normal(inst.N_x)
            u_primitive = v.ubar + v.Qw @ w + v.Qxi @ xi
            u_recovered = policy.u_open + policy.Qw @ w + policy.Qv @ (v.vbar + Z @ xi)
            assert np.abs(u_primitive - u_recovered).max() <= 1e-9 * max(
                1.0, np.abs(u_primitive).max()
            )


def test_inverse_transform_preserves_pattern(chain2_nonclassical):
    # right-multiplying by the inverse contract transform keeps coupled
    # gains inside their pattern (exactness of the triangular recovery)
    inst = chain2_nonclassical
    decomp = compute_decomposition(inst)
    rng = np.random.default_rng(21)
    mask = pattern_QC(decomp, inst.dims).scalar_mask()
    for _ in range(100):
        v = _random_feasible_variables(inst, rng)
        policy = recover_policy(v, decomp, inst.dims)  # raises on violation
        assert np.all(policy.Qv[~mask] == 0.0)


def test_off_pattern_input_raises(chain2_nonclassical):
    inst = chain2_nonclassical
    decomp = compute_decomposition(inst)
    rng = np.random.default_rng(3)
    v = _random_feasible_variables(inst, rng)
    bad = dataclasses.replace(v, Qxi=np.ones((inst.N_u, inst.N_x)))
    with pytest.raises(PatternViolationError):
        recover_policy(bad, decomp, inst.dims)


def test_contract_transform_always_invertible(chain2_nonclassical):
    inst = chain2_nonclassical
    decomp = compute_decomposition(inst)
    rng = np.random.default_rng(12)
    y_pat = pattern_Y(decomp, inst.dims)
    for _ in range(50):
        Y = random_in_pattern(y_pat, rng) * 10.0
        lam = 1.0 + float(rng.uniform(0.0, 5.0))
        Z = lam * np.eye(inst.N_x) - Y
        # strictly lower triangular orientation: eigenvalues are all lam
        assert np.all(np.tril(Y, -1) == Y)
        np.testing.assert_allclose(np.diag(Z), lam)
        assert np.linalg.matrix_rank(Z) == inst.N_x


def test_worst_case_rows_tight_and_robust(chain2_synthesis, chain2_nonclassical):
    # the analytic maximizers achieve each row's worst case; sampled signal
    # pairs never beat them
    inst = chain2_nonclassical
    v = chain2_synthesis.variables
    sigma = inst.disturbance.sigma
    F_x, F_u, F_w, g = (
        inst.constraints.F_x, inst.constraints.F_u, inst.constraints.F_w,
        inst.constraints.g,
    )
    row_w = F_x @ v.Pw + F_u @ v.Qw + F_w
    row_xi = F_x @ v.Pxi + F_u @ v.Qxi
    mean_term = F_x @ v.xbar + F_u @ v.ubar
    for i in range(len(g)):
        cw, cxi = row_w[i], row_xi[i]
        norm_w = np.sqrt(cw @ sigma @ cw)
        norm_xi = np.sqrt(cxi @ sigma @ cxi)
        achieved = mean_term[i]
        if norm_w > 0:
            achieved += cw @ (sigma @ cw) / norm_w
        if norm_xi > 0:
            achieved += cxi @ (sigma @ cxi) / norm_xi
        assert abs(achieved - (mean_term[i] + norm_w + norm_xi)) <= 1e-6
        assert achieved <= g[i] + 1e-6
    rng = np.random.default_rng(77)
    W = sample_ellipsoid(sigma, rng, 10_000)
    Xi = sample_ellipsoid(sigma, rng, 10_000)
    lhs = (
        mean_term[None, :]
        + W @ row_w.T
        + Xi @ row_xi.T
        + np.zeros((1, len(g)))
    )
    assert (lhs - g[None, :]).max() <= 1e-6


def test_minkowski_sum_stays_inside_contract(chain2_synthesis, chain2_nonclassical):
    inst = chain2_nonclassical
    v = chain2_synthesis.variables
    contract = chain2_synthesis.contract
    rng = np.random.default_rng(99)
    W = sample_ellipsoid(inst.disturbance.sigma, rng, 2000)
    Xi = sample_ellipsoid(inst.disturbance.sigma, rng, 2000)
    decomp = compute_decomposition(inst)
    proj = np.asarray(decomp.projection_indices)
    pts = v.xbar[proj] + W @ v.Pw.T[:, proj] + Xi @ v.Pxi.T[:, proj]
    diff = pts - contract.center
    values = np.einsum("ij,ij->i", diff, np.linalg.solve(contract.shape, diff.T).T)
    assert values.max() <= 1.0 + 1e-6


def test_mixed_dimension_pipeline():
    # three subsystems with state blocks of sizes (2, 1, 1); exercises
    # multi-dimensional blocks through patterns, assembly, and recovery
    from agsynth.simulate import SimulationConfig, run

    inst = make_mixed3()
    decomp = compute_decomposition(inst)
    assert decomp.nested == {1: frozenset(), 2: frozenset({1}), 3: frozenset({3})}
    assert decomp.coupled == {1: frozenset({1}), 2: frozenset({2}), 3: frozenset({2})}
    assert decomp.E_C == {(1, 1), (2, 2), (2, 3)}
    assert decomp.coupled_traj_dim == 9

    result = synthesize(inst)
    assert result.status == "optimal"
    assert result.diagnostics["num_lmi"] == 1
    mask = pattern_QC(decomp, inst.dims).scalar_mask()
    assert np.all(result.policy.Qv[~mask] == 0.0)
    assert worst_case_slacks(inst, result.variables).min() >= -1e-6

    report = run(inst, result, SimulationConfig(samples=3000, seed=5))
    assert report.clean
    assert report.worst_membership <= 1.0 + 1e-6
    assert report.max_reconstruction_error <= 1e-10


def test_backends_agree_on_fixture_sdp(chain2_synthesis, chain2_nonclassical):
    other = synthesize(chain2_nonclassical, backend="scs")
    assert other.status in ("optimal", "inaccurate")
    rel = abs(other.objective - chain2_synthesis.objective) / max(
        1.0, abs(chain2_synthesis.objective)
    )
    assert rel <= 1e-5


def test_orientation_never_hurts(chain2_nonclassical):
    free = synthesize(chain2_nonclassical)
    pinned = synthesize(chain2_nonclassical, optimize_orientation=False)
    assert free.status == "optimal" and pinned.status == "optimal"
    assert free.objective <= pinned.objective + 1e-6
    assert np.all(pinned.variables.Y == 0.0)


def test_result_serialization_round_trip(tmp_path, chain2_synthesis, chain2_nonclassical):
    path = tmp_path / "synthesis.json"
    save_result(chain2_synthesis, path, instance=chain2_nonclassical)
    loaded, doc = load_result(path)
    assert loaded.status == chain2_synthesis.status
    assert loaded.objective == pytest.approx(chain2_synthesis.objective, abs=0, rel=0)
    np.testing.assert_array_equal(loaded.policy.Qv, chain2_synthesis.policy.Qv)
    np.testing.assert_array_equal(loaded.variables.Pw, chain2_synthesis.variables.Pw)
    np.testing.assert_array_equal(loaded.contract.Z, chain2_synthesis.contract.Z)
    assert "instance_sha256" in doc
    assert min(doc["worst_case_slacks"]) >= -1e-6


def test_result_dict_infeasible_round_trip():
    inst = make_chain2()
    raw = dataclasses.replace(
        inst,
        constraints=ConstraintData(
            F_x=np.zeros((1, 6)), F_u=np.zeros((1, 4)), F_w=None, g=np.array([-1.0])
        ),
    )
    result = synthesize(validate_instance(raw))
    doc = result_to_dict(result)
    back = result_from_dict(doc)
    assert back.status == "infeasible" and back.policy is None
