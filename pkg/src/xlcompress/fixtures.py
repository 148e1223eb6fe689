"""Synthetic models with a known (planted) low-rank + sparse structure."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layermodel import LayerGroup, LayerMatrix, LayerTensor, unflatten


@dataclass
class Planted:
    W: np.ndarray
    L: np.ndarray
    S: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.S != 0


def planted_low_rank_sparse(
    n: int = 128, p: int = 128, rank: int = 5, density: float = 0.01, spike=(10.0, 20.0), seed: int = 0
) -> Planted:
    """``L + S`` with spikes ``spike`` times the RMS entry of ``L`` and random sign."""
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((n, rank)) @ rng.standard_normal((rank, p)) / np.sqrt(rank)
    typical = np.sqrt(np.mean(L**2))
    mask = rng.random((n, p)) < density
    k = int(mask.sum())
    S = np.zeros((n, p))
    S[mask] = rng.choice([-1.0, 1.0], k) * rng.uniform(*spike, k) * typical
    return Planted(L + S, L, S)


def planted_group(
    rows: Sequence[int] = (48, 64, 80, 96), p: int = 72, m_hat: int = 8, m_bar: int = 4, seed: int = 0
) -> LayerGroup:
    """A group whose members share an ``m_hat``-row subspace plus ``m_bar`` private rows each."""
    rng = np.random.default_rng(seed)
    V_common = rng.standard_normal((m_hat, p))
    members = []
    for t, n in enumerate(rows):
        V = np.vstack([V_common, rng.standard_normal((m_bar, p))])
        U = rng.standard_normal((n, m_hat + m_bar))
        members.append(LayerMatrix(f"layer{t + 1}", U @ V, (n, p)))
    return LayerGroup(members)


def planted_model(
    n_layers: int = 4,
    k: int = 3,
    depth: int = 8,
    filters: int = 32,
    m_hat: int = 3,
    m_bar: int = 2,
    spikes: int = 6,
    seed: int = 0,
) -> list[LayerTensor]:
    """Conv layers of equal shape built from a common subspace, private rows and a few spikes."""
    rng = np.random.default_rng(seed)
    p = k * k * depth
    V_common = rng.standard_normal((m_hat, p))
    layers = []
    for t in range(n_layers):
        V = np.vstack([V_common, rng.standard_normal((m_bar, p))])
        W = rng.standard_normal((filters, m_hat + m_bar)) @ V
        typical = np.sqrt(np.mean(W**2))
        idx = rng.choice(filters * p, spikes, replace=False)
        W.flat[idx] += rng.choice([-1.0, 1.0], spikes) * rng.uniform(10, 20, spikes) * typical
        layers.append(LayerTensor(f"conv{t + 1}", unflatten(W, (k, k, depth, filters)), t + 1))
    return layers


def random_model(shapes: Sequence[tuple[int, ...]], seed: int = 0) -> list[LayerTensor]:
    rng = np.random.default_rng(seed)
    return [LayerTensor(f"layer{i + 1}", rng.standard_normal(s), i + 1) for i, s in enumerate(shapes)]
