import logging

import numpy as np
import pytest

from xlcompress.errors import ConfigurationError, PreconditionError
from xlcompress.layermodel import LayerGroup, LayerMatrix
from xlcompress.matrixcore import SparseMatrix, soft_threshold, truncated_svd
from xlcompress.solver import (
    Decomposition,
    GroupDecomposition,
    SolverConfig,
    apply_similarity_step,
    compute_lambda,
    decompose,
    decompose_group,
    decompose_single,
    gradient_S,
    gradient_step_V,
    gradient_V,
    greedy_rank_schedule,
    objective_value,
    plan_ranks,
    theta_weight,
    update_S,
    update_U_V_qr,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def smooth_loss(Z, W, X, Y, lam):
    if X is None:
        return 0.5 * np.sum((W - Z) ** 2) + lam * np.sum((W - Z) ** 2)
    s = X.shape[1]
    return 0.5 * np.sum((Y - Z @ X) ** 2) / s + lam * np.sum((W - Z) ** 2)


def group_of(*Ws, calibration=None):
    return LayerGroup([LayerMatrix(f"l{i + 1}", W, W.shape) for i, W in enumerate(Ws)], calibration=calibration)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(mode="bogus")
    with pytest.raises(ConfigurationError):
        SolverConfig(eta=3.0)
    with pytest.raises(ConfigurationError):
        SolverConfig(common_ratio=1.5)
    with pytest.raises(ConfigurationError):
        SolverConfig(epochs=0)
    assert SolverConfig(mode="shared", lambda_theta=0.5).lambda_theta == 0.0
    assert SolverConfig().lambda2 == 0.13 and SolverConfig().lambda_theta == 1e-3


def test_plan_ranks_rounding_and_feasibility():
    g = group_of(np.ones((6, 5)), np.ones((8, 5)))
    assert plan_ranks(g, SolverConfig(mode="shared", rank=[3, 5])) == (2, [1, 3], [0, 0])
    assert plan_ranks(g, SolverConfig(mode="independent", rank=4))[0] == 0
    with pytest.raises(ConfigurationError):
        plan_ranks(g, SolverConfig(rank=6))
    with pytest.raises(ConfigurationError):
        plan_ranks(g, SolverConfig(card=31))
    with pytest.raises(ConfigurationError):
        plan_ranks(g, SolverConfig(rank=[1, 2, 3]))


# ---------------------------------------------------------------- lambda and theta


def test_compute_lambda_examples():
    X = np.sqrt(2) * np.eye(2)
    assert compute_lambda(X, 0.0) == pytest.approx(1.0, rel=1e-15)
    assert compute_lambda(X, 1.0) == pytest.approx(10.0, rel=1e-15)
    assert compute_lambda(None, 0.5) == pytest.approx(10**0.5)
    with pytest.raises(PreconditionError):
        compute_lambda(np.zeros((3, 0)), 0.0)


def test_compute_lambda_power_iteration_oracle():
    X = rng(1).standard_normal((8, 3000))
    C = X @ X.T / 3000
    v = np.ones(8)
    for _ in range(2000):
        v = C @ v
        v /= np.linalg.norm(v)
    assert compute_lambda(X, 0.0) == pytest.approx(float(v @ C @ v), rel=1e-6)


def test_theta_weight():
    assert theta_weight(2, 3) == 1.0
    assert theta_weight(2, 4) == 0.5
    assert theta_weight(3, 3) == 0.0 and theta_weight(4, 2) == 0.0


def test_greedy_schedule():
    assert greedy_rank_schedule(5, 2, 4) == [1, 3, 5, 5]
    assert greedy_rank_schedule(1, 1, 3) == [1, 1, 1]
    assert greedy_rank_schedule(4, 7, 3) == [1, 4, 4]


# ---------------------------------------------------------------- QR update


def test_qr_update_full_rank_exact():
    W = rng(2).standard_normal((6, 4))
    V_prev = truncated_svd(W, 4)[2]
    U, V = update_U_V_qr(W, None, None, None, 1.0, V_prev)
    assert np.linalg.norm(U @ V - W) <= 1e-8 * np.linalg.norm(W)
    assert np.abs(U.T @ U - np.eye(4)).max() <= 1e-8


def test_qr_update_rank_one_matches_svd():
    W = rng(3).standard_normal((7, 5))
    Um, s, Vt = truncated_svd(W, 1)
    U, V = update_U_V_qr(W, None, None, None, 1.0, Vt)
    np.testing.assert_allclose(U @ V, Um * s @ Vt, atol=1e-6)


def test_qr_update_zero_input_reinitialises(caplog):
    with caplog.at_level(logging.INFO, logger="xlcompress.solver"):
        U, V = update_U_V_qr(np.zeros((5, 4)), None, None, None, 1.0, rng(4).standard_normal((2, 4)))
    assert "rank collapse" in caplog.text
    assert np.abs(U.T @ U - np.eye(2)).max() <= 1e-8
    assert np.all(np.isfinite(V))


def test_qr_update_calibrated_minimises_over_row_space():
    r = rng(5)
    W, X = r.standard_normal((6, 5)), r.standard_normal((5, 40))
    Y = W @ X + 0.1 * r.standard_normal((6, 40))
    lam = compute_lambda(X, 0.0)
    U, V = update_U_V_qr(W, None, X, Y, lam, r.standard_normal((3, 5)))
    assert np.abs(U.T @ U - np.eye(3)).max() <= 1e-8
    # V is the exact minimiser for this U: its gradient vanishes
    assert np.abs(gradient_V(U, V, None, W, X, Y, lam)).max() <= 1e-9


# ---------------------------------------------------------------- V step


def test_v_step_stationary():
    W = rng(6).standard_normal((5, 4))
    U = np.linalg.qr(rng(7).standard_normal((5, 2)))[0]
    V = U.T @ W
    np.testing.assert_allclose(gradient_step_V(U, V, None, W, None, None, 0.5), V, atol=1e-14)


def test_v_step_lands_on_minimiser_weight_only():
    r = rng(8)
    W = r.standard_normal((6, 5))
    U = np.linalg.qr(r.standard_normal((6, 3)))[0]
    V = gradient_step_V(U, r.standard_normal((3, 5)), None, W, None, None, 0.5)
    np.testing.assert_allclose(V, U.T @ W, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_v_step_never_increases_loss(seed):
    r = rng(seed)
    W, X = r.standard_normal((7, 6)), r.standard_normal((6, 30))
    Y = r.standard_normal((7, 30))
    lam = 0.3
    U = np.linalg.qr(r.standard_normal((7, 3)))[0]
    V = r.standard_normal((3, 6))
    S = r.standard_normal((7, 6)) * (r.random((7, 6)) < 0.2)
    before = smooth_loss(U @ V + S, W, X, Y, lam)
    after = smooth_loss(U @ gradient_step_V(U, V, S, W, X, Y, lam) + S, W, X, Y, lam)
    assert after <= before * (1 + 1e-12)


def test_v_step_correlated_calibration_safeguard():
    # strongly correlated inputs: the raw Jacobi step overshoots, the guarded step must not
    r = rng(9)
    base = r.standard_normal((1, 200))
    X = np.vstack([base + 1e-3 * r.standard_normal((1, 200)) for _ in range(6)])
    W = r.standard_normal((5, 6))
    Y = r.standard_normal((5, 200))
    lam = 1e-3
    U = np.linalg.qr(r.standard_normal((5, 2)))[0]
    V = r.standard_normal((2, 6))
    G = gradient_V(U, V, None, W, X, Y, lam)
    D = np.diag(X @ X.T) / 200 + 2 * lam
    before = smooth_loss(U @ V, W, X, Y, lam)
    raw = smooth_loss(U @ (V - G / D), W, X, Y, lam)
    guarded = smooth_loss(U @ gradient_step_V(U, V, None, W, X, Y, lam), W, X, Y, lam)
    assert raw > before
    assert guarded < before


def test_v_step_zero_curvature_rejected():
    X = np.vstack([np.ones((1, 4)), np.zeros((1, 4))])
    with pytest.raises(PreconditionError):
        gradient_step_V(np.ones((3, 1)), np.ones((1, 2)), None, np.ones((3, 2)), X, np.ones((3, 4)), 0.0)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("calibrated", [False, True])
def test_gradients_match_finite_differences(calibrated):
    r = rng(10)
    n, p, m, s = 10, 8, 3, 25
    W, U, V = r.standard_normal((n, p)), r.standard_normal((n, m)), r.standard_normal((m, p))
    S = r.standard_normal((n, p)) * (r.random((n, p)) < 0.3)
    X = r.standard_normal((p, s)) if calibrated else None
    Y = r.standard_normal((n, s)) if calibrated else None
    lam, h = 0.7, 1e-6
    GV, GS = gradient_V(U, V, S, W, X, Y, lam), gradient_S(U, V, S, W, X, Y, lam)
    for G, P, build in ((GV, V, lambda P: U @ P + S), (GS, S, lambda P: U @ V + P)):
        fd = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            E = np.zeros_like(P)
            E[idx] = h
            fd[idx] = (smooth_loss(build(P + E), W, X, Y, lam) - smooth_loss(build(P - E), W, X, Y, lam)) / (2 * h)
        assert np.linalg.norm(G - fd) <= 1e-5 * np.linalg.norm(fd)


# ---------------------------------------------------------------- S step


def test_update_s_examples():
    r = rng(11)
    U, V = r.standard_normal((5, 2)), r.standard_normal((2, 4))
    W = U @ V
    assert update_S(U, V, None, W, None, None, 1.0, 0.13, 10).nnz == 0
    W = r.standard_normal((5, 4))
    S = update_S(np.zeros((5, 1)), np.zeros((1, 4)), None, W, None, None, 0.5, 0.13, 20, False)
    np.testing.assert_allclose(S.to_dense(), soft_threshold(W, 0.13), atol=1e-15)
    assert update_S(np.zeros((5, 1)), np.zeros((1, 4)), None, W, None, None, 0.5, 0.13, 0).nnz == 0
    S3 = update_S(np.zeros((5, 1)), np.zeros((1, 4)), None, W, None, None, 0.5, 0.0, 3)
    assert S3.nnz == 3 and isinstance(S3, SparseMatrix)


# ---------------------------------------------------------------- similarity step


def test_similarity_step_examples():
    r = rng(12)
    Vs = [r.standard_normal((2, 3)) for _ in range(3)]
    for out in (apply_similarity_step(Vs, 0.0), apply_similarity_step(Vs[:1], 0.1)):
        for a, b in zip(out, Vs):
            np.testing.assert_array_equal(a, b)
    d0 = np.linalg.norm(Vs[0] - Vs[1])
    a = apply_similarity_step(Vs[:2], 0.1, "attract")
    rp = apply_similarity_step(Vs[:2], 0.1, "repel")
    assert np.linalg.norm(a[0] - a[1]) < d0 < np.linalg.norm(rp[0] - rp[1])
    with pytest.raises(ConfigurationError):
        apply_similarity_step(Vs, 0.1, "sideways")


def test_similarity_step_mismatched_ranks_uses_leading_rows():
    r = rng(13)
    Vs = [r.standard_normal((1, 3)), r.standard_normal((3, 3))]
    out = apply_similarity_step(Vs, 0.1)
    np.testing.assert_array_equal(out[1][1:], Vs[1][1:])
    assert not np.array_equal(out[1][:1], Vs[1][:1])


# ---------------------------------------------------------------- decompositions


def test_single_planted_rank3_exact():
    r = rng(14)
    W = r.standard_normal((20, 3)) @ r.standard_normal((3, 15))
    d = decompose_single(W, config=SolverConfig(mode="single", rank=3, epochs=10))
    assert np.linalg.norm(W - d.low_rank()) / np.linalg.norm(W) <= 1e-6
    assert d.rank == 3 and d.card == 0
    assert len(d.objective_trace) == 10


def test_single_respects_budgets_and_is_deterministic():
    W = rng(15).standard_normal((12, 9))
    cfg = SolverConfig(mode="single", rank=4, card=7, epochs=8, delta_m=2)
    a, b = decompose_single(W, config=cfg), decompose_single(W, config=cfg)
    assert a.rank <= 4 and a.card <= 7
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V) and a.S.equals(b.S)


def test_single_with_calibration_runs():
    r = rng(16)
    W, X = r.standard_normal((8, 6)), r.standard_normal((6, 50))
    cfg = SolverConfig(mode="single", data_term="calibration", rank=3, card=4, epochs=10)
    d = decompose_single(W, X, W @ X, config=cfg)
    v = [x for _, x in d.objective_trace]
    assert v[-1] <= v[0]


def test_missing_calibration_falls_back(caplog):
    g = group_of(rng(17).standard_normal((6, 5)))
    with caplog.at_level(logging.WARNING):
        decompose(g, SolverConfig(mode="single", data_term="calibration", rank=2, epochs=2))
    assert "weight-only" in caplog.text


def test_mode_entry_point_checks():
    g = group_of(np.ones((4, 3)), np.ones((4, 3)))
    with pytest.raises(ConfigurationError):
        decompose(g, SolverConfig(mode="single"))
    with pytest.raises(ConfigurationError):
        decompose_group(g, SolverConfig(mode="single"))


def test_independent_t1_equals_single():
    W = rng(18).standard_normal((10, 7))
    cfg = dict(rank=3, card=5, epochs=6)
    d1 = decompose_single(W, config=SolverConfig(mode="single", **cfg))
    d2 = decompose_group(group_of(W), SolverConfig(mode="independent", **cfg)).members[0]
    assert np.array_equal(d1.U, d2.U) and np.array_equal(d1.V, d2.V) and d1.S.equals(d2.S)


def test_shared_duplicated_layers():
    r = rng(19)
    W = r.standard_normal((12, 3)) @ r.standard_normal((3, 9))
    gd = decompose_group(group_of(W, W.copy()), SolverConfig(mode="shared", rank=3, common_ratio=1.0, epochs=40))
    assert gd.m_hat == 3
    for d in gd.members:
        assert d.V_individual.shape[0] == 0
        assert np.linalg.norm(W - d.dense()) <= 1e-6 * np.linalg.norm(W)
    assert gd.V_common_shared.size * 2 == sum(d.V.size for d in gd.members)


def test_shared_block_is_single_storage():
    r = rng(20)
    g = group_of(r.standard_normal((6, 5)), r.standard_normal((7, 5)), r.standard_normal((8, 5)))
    gd = decompose_group(g, SolverConfig(mode="micik", rank=3, epochs=3))
    assert all(d.V_common is gd.V_common_shared for d in gd.members)
    assert not gd.V_common_shared.flags.writeable


def test_objective_value_examples():
    r = rng(21)
    W1, W2 = r.standard_normal((3, 2)), r.standard_normal((4, 2))
    g = group_of(W1, W2)
    cfg = SolverConfig(mode="micik", lambda_theta=0.25, eta=0.0)

    def dec(name, W, U, Vi, S=None):
        return Decomposition(name, U, np.zeros((0, 2)), Vi, S or SparseMatrix.zeros(W.shape))

    zero = GroupDecomposition(
        [dec("l1", W1, np.zeros((3, 1)), np.zeros((1, 2))), dec("l2", W2, np.zeros((4, 1)), np.zeros((1, 2)))],
        np.zeros((0, 2)), [], cfg,
    )
    # weight-only with lambda = 1: (1/2 + 1) * sum ||W||^2, similarity term zero (equal blocks)
    assert objective_value(g, zero, cfg) == pytest.approx(1.5 * (np.sum(W1**2) + np.sum(W2**2)), rel=1e-14)

    exact = GroupDecomposition(
        [dec("l1", W1, np.eye(3), np.zeros((3, 2)), SparseMatrix.from_dense(W1)),
         dec("l2", W2, np.eye(4), np.zeros((4, 2)), SparseMatrix.from_dense(W2))],
        np.zeros((0, 2)), [], SolverConfig(mode="shared"),
    )
    assert objective_value(g, exact, SolverConfig(mode="shared")) == 0.0

    # hand sum: W = [[1,2]], [[3,4]]; fits [[1,1]], [[3,3]]; Vi = [1,1] and [3,3]
    g2 = group_of(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    hand = GroupDecomposition(
        [dec("l1", np.ones((1, 2)), np.ones((1, 1)), np.array([[1.0, 1.0]])),
         dec("l2", np.ones((1, 2)), np.ones((1, 1)), np.array([[3.0, 3.0]]))],
        np.zeros((0, 2)), [], cfg,
    )
    # residuals 1 and 1 -> 1.5 * 2 = 3; theta_12 = 1, ||Vi_1 - Vi_2||^2 = 8 -> 0.25 * 8 = 2
    assert objective_value(g2, hand, cfg) == pytest.approx(5.0, rel=1e-15)
    repel = SolverConfig(mode="micik", lambda_theta=0.25, similarity_sign="repel")
    assert objective_value(g2, hand, repel) == pytest.approx(1.0, rel=1e-15)


def test_group_objective_trace_matches_objective_value():
    r = rng(22)
    g = group_of(r.standard_normal((9, 6)), r.standard_normal((8, 6)))
    cfg = SolverConfig(mode="micik", rank=3, card=5, epochs=5)
    gd = decompose_group(g, cfg)
    assert gd.objective_trace[-1][1] == pytest.approx(objective_value(g, gd, cfg), rel=1e-12)


def test_consensus_update_runs_and_descends():
    r = rng(23)
    g = group_of(*(r.standard_normal((10, 8)) for _ in range(3)))
    gd = decompose_group(g, SolverConfig(mode="shared", rank=4, epochs=15, delta_m=4, common_update="consensus"))
    v = [x for _, x in gd.objective_trace]
    assert v[-1] <= v[0]
