"""Joint low-rank + sparse decomposition of one layer or a group of layers.

Each member ``t`` of a group is approximated as ``U_t [Vc; Vi_t] + S_t`` where
``Vc`` is a block of rows shared by the whole group, ``Vi_t`` is private to the
layer and ``S_t`` is sparse. The smooth part of the per-layer loss is::

    f_t(Z) = 1/(2 s) ||Y_t - Z X_t||_F^2 + lam_t ||W_t - Z||_F^2,   Z = U_t V_t + S_t

which in weight-only mode (no calibration pairs) degenerates to
``(1/2 + lam) ||W_t - Z||_F^2``. Groups in ``micik`` mode add a depth-weighted
penalty on the distances between the private blocks.

All steps are deterministic; the seed in :class:`SolverConfig` is only echoed.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .layermodel import LayerGroup, LayerMatrix
from .matrixcore import (
    SparseMatrix,
    as_dense,
    pseudoinverse,
    qr_thin,
    soft_threshold,
    to_dense,
    top_q_project,
    truncated_svd,
)

log = logging.getLogger(__name__)

MODES = ("single", "independent", "shared", "micik")
DATA_TERMS = ("calibration", "weight_only")
SIGNS = ("attract", "repel")
COMMON_UPDATES = ("carry", "consensus")

# relative slack accepted when checking the quadratic majorisation of a step
_MAJORIZE_RTOL = 1e-9
_MAX_BACKTRACK = 60


@dataclass
class SolverConfig:
    mode: str = "micik"
    data_term: str = "weight_only"
    eta: float = 0.0
    lambda2: float = 0.13
    lambda_theta: float = 1e-3
    similarity_sign: str = "attract"
    rank: Union[int, Sequence[int]] = 1
    common_ratio: float = 0.5
    card: Union[int, Sequence[int]] = 0
    epochs: int = 20
    delta_m: int = 1
    enforce_cardinality: bool = True
    seed: int = 0
    common_update: str = "carry"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.data_term not in DATA_TERMS:
            raise ConfigurationError(f"unknown data term {self.data_term!r}")
        if self.similarity_sign not in SIGNS:
            raise ConfigurationError(f"unknown similarity sign {self.similarity_sign!r}")
        if self.common_update not in COMMON_UPDATES:
            raise ConfigurationError(f"unknown common update {self.common_update!r}")
        if not -3.0 < self.eta < 3.0:
            raise ConfigurationError("eta must lie in (-3, 3)")
        if self.lambda2 < 0 or self.lambda_theta < 0:
            raise ConfigurationError("lambda2 and lambda_theta must be nonnegative")
        if not 0.0 <= self.common_ratio <= 1.0:
            raise ConfigurationError("common_ratio must lie in [0, 1]")
        if self.epochs < 1 or self.delta_m < 1:
            raise ConfigurationError("epochs and delta_m must be at least 1")
        if self.mode != "micik":
            self.lambda_theta = 0.0
        if not isinstance(self.rank, int):
            self.rank = [int(r) for r in self.rank]
        if not isinstance(self.card, int):
            self.card = [int(q) for q in self.card]

    @property
    def sign(self) -> float:
        return 1.0 if self.similarity_sign == "attract" else -1.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Decomposition:
    layer: str
    U: np.ndarray
    V_common: np.ndarray
    V_individual: np.ndarray
    S: SparseMatrix
    objective_trace: list = field(default_factory=list)

    @property
    def V(self) -> np.ndarray:
        return np.vstack([self.V_common, self.V_individual])

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def card(self) -> int:
        return self.S.nnz

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V_common.shape[1]

    def low_rank(self) -> np.ndarray:
        return self.U @ self.V

    def dense(self) -> np.ndarray:
        return self.low_rank() + self.S.to_dense()


@dataclass
class GroupDecomposition:
    members: list[Decomposition]
    V_common_shared: np.ndarray
    objective_trace: list[tuple[int, float]]
    config: SolverConfig
    lambdas: list[float] = field(default_factory=list)

    @property
    def m_hat(self) -> int:
        return self.V_common_shared.shape[0]


class _Layer:
    """Per-member problem data with the calibration statistics precomputed."""

    def __init__(self, W, X=None, Y=None, lam: float = 1.0):
        self.W = as_dense(W, "W")
        self.lam = float(lam)
        n, p = self.W.shape
        self.calibrated = X is not None
        if self.calibrated:
            self.X = as_dense(X, "X")
            self.Y = as_dense(Y, "Y")
            s = self.X.shape[1]
            if self.X.shape[0] != p or self.Y.shape != (n, s) or s < 1:
                raise PreconditionError(
                    f"calibration X{self.X.shape} Y{self.Y.shape} inconsistent with W{self.W.shape}"
                )
            self.s = s
            self.C = self.X @ self.X.T / s
            self.YX = self.Y @ self.X.T / s
            self.diag = np.diag(self.C) + 2.0 * self.lam
        else:
            self.s = 1
            self.diag = np.full(p, 1.0 + 2.0 * self.lam)
        if np.any(self.diag <= 0.0):
            raise PreconditionError("zero diagonal curvature: empty calibration column with lambda = 0")
        self._target_map = None

    @property
    def shape(self):
        return self.W.shape

    def grad(self, Z):
        """Gradient of the smooth loss with respect to ``Z = UV + S``."""
        if self.calibrated:
            return Z @ self.C - self.YX + 2.0 * self.lam * (Z - self.W)
        return (1.0 + 2.0 * self.lam) * (Z - self.W)

    def quad(self, E) -> float:
        """Second-order term ``f(Z + E) - f(Z) - <grad, E>``."""
        if self.calibrated:
            return 0.5 * float(np.sum((E @ self.C) * E)) + self.lam * float(np.sum(E * E))
        return (0.5 + self.lam) * float(np.sum(E * E))

    def value(self, Z) -> float:
        R = self.W - Z
        if self.calibrated:
            D = self.Y - Z @ self.X
            data = 0.5 * float(np.sum(D * D)) / self.s
        else:
            data = 0.5 * float(np.sum(R * R))
        return data + self.lam * float(np.sum(R * R))

    def rhs(self, S):
        """``B = 2 lam (W - S) + (Y X^T - S X X^T)/s``; weight-only uses ``W - S``."""
        if not self.calibrated:
            return self.W - S
        return 2.0 * self.lam * (self.W - S) + (self.YX - S @ self.C)

    def gram(self, V):
        """``V A V^T`` with the same scaling convention as :meth:`rhs`."""
        if not self.calibrated:
            return V @ V.T
        return 2.0 * self.lam * (V @ V.T) + (V @ self.C) @ V.T

    def solve(self, B):
        """``B A^+`` with ``A = 2 lam I + X X^T / s``: the unconstrained minimiser over ``L``."""
        if not self.calibrated:
            return B
        if self._target_map is None:
            A = 2.0 * self.lam * np.eye(self.W.shape[1]) + self.C
            self._target_map = pseudoinverse(A)
        return B @ self._target_map


def compute_lambda(X, eta: float) -> float:
    """``10**eta`` times the top singular value of ``X X^T / s`` (weight-only: ``10**eta``)."""
    if X is None:
        return 10.0 ** eta
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1 or X.shape[0] < 1:
        raise PreconditionError("compute_lambda needs a non-empty p x s matrix")
    s = X.shape[1]
    e_max = float(np.linalg.norm(X @ X.T / s, 2))
    return 10.0 ** eta * e_max


def theta_weight(i: int, j: int) -> float:
    if i < 1 or j < 1:
        raise PreconditionError("layer indices are 1-based")
    return 1.0 / (j - i) if i < j else 0.0


def greedy_rank_schedule(m_target: int, delta_m: int, epochs: int) -> list[int]:
    if m_target < 1 or delta_m < 1:
        raise PreconditionError("m_target and delta_m must be at least 1")
    return [min(1 + k * delta_m, m_target) for k in range(epochs)]


# ---------------------------------------------------------------- U, V steps


def _complete_basis(Q, bad, target):
    """Replace the columns of ``Q`` flagged in ``bad`` by new orthonormal directions.

    Candidates are the left singular vectors of the part of ``target`` not yet
    explained by the good columns, then the canonical basis.
    """
    n = Q.shape[0]
    good = Q[:, ~bad]
    resid = target - good @ (good.T @ target)
    cands = np.linalg.svd(resid, full_matrices=False)[0]
    cands = np.hstack([cands, np.eye(n)])
    basis = [good[:, i] for i in range(good.shape[1])]
    out = Q.copy()
    c = 0
    for j in np.flatnonzero(bad):
        while True:
            v = cands[:, c].copy()
            c += 1
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                break
        v /= norm
        basis.append(v)
        out[:, j] = v
    return out


def _qr_step(layer: _Layer, S, V_prev):
    B = layer.rhs(S)
    target = layer.solve(B)
    M = B @ V_prev.T
    Q, R = qr_thin(M)
    d = np.abs(np.diag(R))
    bad = d <= 1e-10 * np.linalg.norm(M)
    if np.any(bad):
        log.info("rank collapse in %d of %d columns; reinitialising from residual", bad.sum(), len(bad))
        Q = _complete_basis(Q, bad, target)
    return Q, Q.T @ target


def update_U_V_qr(W, S, X, Y, lam: float, V_prev) -> tuple[np.ndarray, np.ndarray]:
    """One QR update: ``U = orth(B V_prev^T)``, ``V = U^T B A^+``.

    ``A = 2 lam I + X X^T / s`` and ``B = 2 lam (W - S) + (Y X^T - S X X^T) / s``
    so that ``B A^+`` minimises the smooth loss over ``L`` (weight-only:
    ``B A^+ = W - S``). Pass ``X = Y = None`` for weight-only mode.
    """
    layer = _Layer(W, X, Y, lam)
    S = to_dense(S, layer.shape)
    V_prev = as_dense(V_prev, "V_prev")
    return _qr_step(layer, S, V_prev)


def _majorized(layer: _Layer, E_full, E_coef, beta: float) -> bool:
    lhs = layer.quad(E_full)
    rhs = float(np.sum(layer.diag * E_coef * E_coef)) / (2.0 * beta)
    return lhs <= rhs * (1.0 + _MAJORIZE_RTOL) + 1e-300


def _v_step(layer: _Layer, U, V, S):
    G = U.T @ layer.grad(U @ V + S)
    step = G / layer.diag
    beta = 1.0
    for _ in range(_MAX_BACKTRACK):
        E = -beta * step
        if _majorized(layer, U @ E, E, beta):
            break
        beta *= 0.5
    else:
        return V
    return V + E


def gradient_step_V(U, V, S, W, X, Y, lam: float) -> np.ndarray:
    """Diagonally preconditioned gradient step on ``V`` for fixed ``U`` and ``S``.

    The preconditioner is the exact Hessian diagonal ``diag(X X^T)/s + 2 lam``
    (``1 + 2 lam`` weight-only). The full step is taken whenever it satisfies
    the quadratic majorisation test, otherwise it is halved until it does, so
    the loss never increases.
    """
    layer = _Layer(W, X, Y, lam)
    return _v_step(layer, as_dense(U, "U"), as_dense(V, "V"), to_dense(S, layer.shape))


def gradient_V(U, V, S, W, X, Y, lam: float) -> np.ndarray:
    """Analytic gradient of the smooth loss with respect to ``V``."""
    layer = _Layer(W, X, Y, lam)
    U = as_dense(U, "U")
    return U.T @ layer.grad(U @ as_dense(V, "V") + to_dense(S, layer.shape))


def gradient_S(U, V, S, W, X, Y, lam: float) -> np.ndarray:
    """Analytic gradient of the smooth loss with respect to ``S``."""
    layer = _Layer(W, X, Y, lam)
    return layer.grad(as_dense(U, "U") @ as_dense(V, "V") + to_dense(S, layer.shape))


def _shared_u_step(layer: _Layer, S, V):
    """U for a member whose leading rows of ``V`` are pinned to the shared block.

    The column space comes from the QR update; the coordinates are the
    least-squares fit ``B V^T (V A V^T)^+``, because an orthonormal U could not
    express per-layer scaling of the shared rows.
    """
    B = layer.rhs(S)
    Q, R = qr_thin(B @ V.T)
    return Q @ (R @ pseudoinverse(layer.gram(V)))


def _row_scale(U):
    scale = np.einsum("ij,ij->j", U, U)
    return np.where(scale > 0.0, scale, 1.0)


def _block_step(layer: _Layer, Ublk, Vblk, Z):
    """Preconditioned gradient step on the rows ``Vblk`` multiplying ``Ublk``."""
    G = Ublk.T @ layer.grad(Z)
    D = np.outer(_row_scale(Ublk), layer.diag)
    step = G / D
    beta = 1.0
    for _ in range(_MAX_BACKTRACK):
        E = -beta * step
        if layer.quad(Ublk @ E) <= float(np.sum(D * E * E)) / (2.0 * beta) * (1.0 + _MAJORIZE_RTOL) + 1e-300:
            return Vblk + E
        beta *= 0.5
    return Vblk


def _common_step(layers, Us, Vc, V_bars, Ss):
    """Step on the shared rows using the summed gradient of the given members."""
    m_hat = Vc.shape[0]
    G = np.zeros_like(Vc)
    D = np.zeros_like(Vc)
    blocks = []
    for layer, U, Vb, S in zip(layers, Us, V_bars, Ss):
        Uc = U[:, :m_hat]
        Z = U @ np.vstack([Vc, Vb]) + S
        G += Uc.T @ layer.grad(Z)
        D += np.outer(np.einsum("ij,ij->j", Uc, Uc), layer.diag)
        blocks.append(Uc)
    D = np.where(D > 0.0, D, 1.0)
    step = G / D
    beta = 1.0
    for _ in range(_MAX_BACKTRACK):
        E = -beta * step
        lhs = sum(layer.quad(Uc @ E) for layer, Uc in zip(layers, blocks))
        if lhs <= float(np.sum(D * E * E)) / (2.0 * beta) * (1.0 + _MAJORIZE_RTOL) + 1e-300:
            return Vc + E
        beta *= 0.5
    return Vc


# ---------------------------------------------------------------- S step


def _s_step(layer: _Layer, L, S, lambda2, q, enforce):
    G = layer.grad(L + S)
    step = G / layer.diag
    beta = 1.0
    for _ in range(_MAX_BACKTRACK):
        S_new = soft_threshold(S - beta * step, beta * lambda2)
        E = S_new - S
        if _majorized(layer, E, E, beta):
            break
        beta *= 0.5
    else:
        S_new = S
    if enforce:
        return top_q_project(S_new, q)
    return SparseMatrix.from_dense(S_new)


def update_S(U, V, S, W, X, Y, lam: float, lambda2: float, q: int, enforce_cardinality: bool = True) -> SparseMatrix:
    """Proximal step on ``S``: ``S <- shrink_{lambda2}(S - G / D)`` columnwise.

    ``D`` is the same Hessian diagonal as in :func:`gradient_step_V`. When
    ``enforce_cardinality`` is set the result is projected onto its ``q``
    largest entries.
    """
    layer = _Layer(W, X, Y, lam)
    U = as_dense(U, "U")
    return _s_step(layer, U @ as_dense(V, "V"), to_dense(S, layer.shape), lambda2, q, enforce_cardinality)


# ---------------------------------------------------------------- similarity


def apply_similarity_step(V_bars: Sequence[np.ndarray], lambda_theta: float, sign: str = "attract") -> list[np.ndarray]:
    """Gradient step on ``+-lambda_theta * sum_ij theta_ij ||Vi_i - Vi_j||^2``.

    Only the leading ``min_t rows(Vi_t)`` rows take part when ranks differ.
    """
    out = [np.array(V, dtype=np.float64, copy=True) for V in V_bars]
    T = len(out)
    if T < 2 or lambda_theta == 0.0:
        return out
    if sign not in SIGNS:
        raise ConfigurationError(f"unknown similarity sign {sign!r}")
    sigma = 1.0 if sign == "attract" else -1.0
    m = min(V.shape[0] for V in out)
    if m == 0:
        return out
    old = [V[:m].copy() for V in out]
    for t in range(T):
        acc = np.zeros_like(old[t])
        for j in range(T):
            w = theta_weight(t + 1, j + 1) + theta_weight(j + 1, t + 1)
            if w:
                acc += w * (old[t] - old[j])
        out[t][:m] = old[t] - sigma * 2.0 * lambda_theta * acc
    return out


def _similarity_penalty(V_bars, lambda_theta, sigma) -> float:
    if lambda_theta == 0.0 or len(V_bars) < 2:
        return 0.0
    m = min(V.shape[0] for V in V_bars)
    total = 0.0
    for i in range(len(V_bars)):
        for j in range(i + 1, len(V_bars)):
            D = V_bars[i][:m] - V_bars[j][:m]
            total += theta_weight(i + 1, j + 1) * float(np.sum(D * D))
    return sigma * lambda_theta * total


# ---------------------------------------------------------------- group solve


def _problems(group: LayerGroup, config: SolverConfig) -> list[_Layer]:
    use_calib = config.data_term == "calibration" and group.calibration is not None
    if config.data_term == "calibration" and group.calibration is None:
        log.warning("group %s has no calibration pairs; using weight-only data term", group.names)
    layers = []
    for t, m in enumerate(group.members):
        if use_calib:
            X, Y = group.calibration[t]
            layers.append(_Layer(m.W, X, Y, compute_lambda(X, config.eta)))
        else:
            layers.append(_Layer(m.W, lam=compute_lambda(None, config.eta)))
    return layers


def _per_member(value, T, what) -> list[int]:
    if isinstance(value, int):
        return [value] * T
    if len(value) != T:
        raise ConfigurationError(f"{what} list has {len(value)} entries for {T} layers")
    return list(value)


def plan_ranks(group: LayerGroup, config: SolverConfig) -> tuple[int, list[int], list[int]]:
    """Validate budgets and return ``(m_hat, individual ranks, cards)``."""
    T = group.size
    ranks = _per_member(config.rank, T, "rank")
    cards = _per_member(config.card, T, "card")
    p = group.p
    for m, r, q in zip(group.members, ranks, cards):
        n = m.W.shape[0]
        if not 1 <= r <= min(n, p):
            raise ConfigurationError(f"{m.source}: rank {r} infeasible for a {n}x{p} matrix")
        if not 0 <= q <= n * p:
            raise ConfigurationError(f"{m.source}: cardinality {q} infeasible for a {n}x{p} matrix")
    if config.mode in ("single", "independent"):
        m_hat = 0
    else:
        m_hat = int(math.floor(config.common_ratio * min(ranks) + 0.5))
    return m_hat, [r - m_hat for r in ranks], cards


def _residual_rows(R, k):
    if k <= 0:
        return np.zeros((0, R.shape[1]))
    return truncated_svd(R, k)[2]


def _solve(layers: list[_Layer], names, m_hat, m_bars, cards, config: SolverConfig) -> GroupDecomposition:
    T = len(layers)
    p = layers[0].shape[1]
    kappa = config.epochs
    schedules = [
        greedy_rank_schedule(mb, config.delta_m, kappa) if mb > 0 else [0] * kappa for mb in m_bars
    ]
    lam_theta = config.lambda_theta if config.mode == "micik" else 0.0

    V_common = truncated_svd(layers[0].W, m_hat)[2] if m_hat else np.zeros((0, p))
    V_bars = []
    for layer, sched in zip(layers, schedules):
        resid = layer.W - (layer.W @ V_common.T) @ V_common
        V_bars.append(_residual_rows(resid, sched[0]))
    Us: list[Optional[np.ndarray]] = [None] * T
    Ss = [np.zeros(layer.shape) for layer in layers]
    sparse: list[SparseMatrix] = [SparseMatrix.zeros(layer.shape) for layer in layers]
    trace: list[tuple[int, float]] = []

    for k in range(1, kappa + 1):
        if k > 1:
            for t, layer in enumerate(layers):
                grow = schedules[t][k - 1] - V_bars[t].shape[0]
                if grow > 0:
                    V = np.vstack([V_common, V_bars[t]])
                    R = layer.W - Us[t] @ V - Ss[t]
                    V_bars[t] = np.vstack([V_bars[t], _residual_rows(R, grow)])
                    Us[t] = np.hstack([Us[t], np.zeros((Us[t].shape[0], grow))])

        V0 = V_common
        candidates = []
        for t, layer in enumerate(layers):
            if not m_hat:
                U, V = _qr_step(layer, Ss[t], V_bars[t])
                Us[t] = U
                V_bars[t] = _v_step(layer, U, V, Ss[t])
                continue
            V = np.vstack([V0, V_bars[t]])
            U = _shared_u_step(layer, Ss[t], V)
            Us[t] = U
            if V_bars[t].shape[0]:
                V_bars[t] = _block_step(layer, U[:, m_hat:], V_bars[t], U @ V + Ss[t])
            if config.common_update == "carry":
                active = [j for j in range(T) if Us[j] is not None]
                V0 = _common_step(
                    [layers[j] for j in active], [Us[j] for j in active], V0,
                    [V_bars[j] for j in active], [Ss[j] for j in active],
                )
            else:
                candidates.append(_common_step([layer], [U], V0, [V_bars[t]], [Ss[t]]))
        if config.common_update == "carry" or not m_hat:
            V_common = V0
        else:
            V_common = np.mean(candidates, axis=0)

        if lam_theta:
            V_bars = apply_similarity_step(V_bars, lam_theta, config.similarity_sign)

        total = 0.0
        for t, layer in enumerate(layers):
            L = Us[t] @ np.vstack([V_common, V_bars[t]])
            sparse[t] = _s_step(layer, L, Ss[t], config.lambda2, cards[t], config.enforce_cardinality)
            Ss[t] = sparse[t].to_dense()
            total += layer.value(L + Ss[t])
        total += _similarity_penalty(V_bars, lam_theta, config.sign)
        trace.append((k, total))
        log.debug("epoch %d objective %.12g", k, total)

    V_common = V_common.copy()
    V_common.setflags(write=False)
    members = [
        Decomposition(name, Us[t], V_common, V_bars[t], sparse[t]) for t, name in enumerate(names)
    ]
    return GroupDecomposition(members, V_common, trace, dataclasses.replace(config), [l.lam for l in layers])


def decompose_group(group: LayerGroup, config: SolverConfig) -> GroupDecomposition:
    if config.mode not in ("independent", "shared", "micik"):
        raise ConfigurationError(f"decompose_group does not run mode {config.mode!r}")
    m_hat, m_bars, cards = plan_ranks(group, config)
    return _solve(_problems(group, config), group.names, m_hat, m_bars, cards, config)


def _single(group: LayerGroup, config: SolverConfig) -> GroupDecomposition:
    if config.mode != "single":
        raise ConfigurationError("single-layer decomposition needs mode='single'")
    if group.size != 1:
        raise ConfigurationError("mode 'single' compresses one layer at a time")
    m_hat, m_bars, cards = plan_ranks(group, config)
    gd = _solve(_problems(group, config), group.names, m_hat, m_bars, cards, config)
    gd.members[0].objective_trace = list(gd.objective_trace)
    return gd


def decompose_single(W, X=None, Y=None, config: Optional[SolverConfig] = None, name: str = "W") -> Decomposition:
    """Single-layer decomposition; falls back to weight-only without calibration."""
    config = config or SolverConfig(mode="single")
    W = as_dense(W, "W")
    calib = None if X is None else [(as_dense(X, "X"), as_dense(Y, "Y"))]
    group = LayerGroup([LayerMatrix(name, W, W.shape)], calibration=calib)
    return _single(group, config).members[0]


def decompose(group: LayerGroup, config: SolverConfig) -> GroupDecomposition:
    """Dispatch on ``config.mode``; ``single`` needs a one-member group."""
    if config.mode == "single":
        return _single(group, config)
    return decompose_group(group, config)


def objective_value(group: LayerGroup, decomposition: GroupDecomposition, config: SolverConfig) -> float:
    """Full group objective (without the l1 term) for a decomposition."""
    layers = _problems(group, config)
    total = 0.0
    for layer, d in zip(layers, decomposition.members):
        total += layer.value(d.dense())
    lam_theta = config.lambda_theta if config.mode == "micik" else 0.0
    total += _similarity_penalty([d.V_individual for d in decomposition.members], lam_theta, config.sign)
    return total
