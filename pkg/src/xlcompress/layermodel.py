"""Layer tensors, their matrix views, and cross-layer grouping.

Conv filter banks use the (k_h, k_w, depth, filters) layout. A filter bank is
flattened to one row per filter, unrolled depth-major then row then column, so
that a depth chunk of ``g`` channels is a contiguous run of ``k*k*g`` columns.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import GroupingError, ReconstructionError, UnsupportedShapeError
from .matrixcore import as_dense

log = logging.getLogger(__name__)

CONV = "conv"
FC = "fully_connected"


@dataclass
class LayerTensor:
    name: str
    data: np.ndarray
    depth_index: int = 1
    kind: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not self.kind:
            self.kind = CONV if self.data.ndim == 4 else FC
        if self.kind == CONV:
            if self.data.ndim != 4:
                raise UnsupportedShapeError(f"{self.name}: conv layer needs a 4-D array")
            if self.data.shape[0] != self.data.shape[1]:
                raise UnsupportedShapeError(
                    f"{self.name}: non-square kernel {self.data.shape[:2]} is not supported"
                )
        elif self.kind == FC:
            if self.data.ndim != 2:
                raise UnsupportedShapeError(f"{self.name}: fully-connected layer needs a 2-D array")
        else:
            raise UnsupportedShapeError(f"{self.name}: unknown layer kind {self.kind!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def receptive_field(self) -> Optional[int]:
        return self.data.shape[0] if self.kind == CONV else None

    @property
    def depth(self) -> Optional[int]:
        return self.data.shape[2] if self.kind == CONV else None


@dataclass
class LayerMatrix:
    source: str
    W: np.ndarray
    original_shape: tuple[int, ...]
    chunk_factor: int = 1

    @property
    def kind(self) -> str:
        return CONV if len(self.original_shape) == 4 else FC


@dataclass
class LayerGroup:
    members: list[LayerMatrix]
    receptive_field: Optional[int] = None
    chunk_depth: Optional[int] = None
    calibration: Optional[list[tuple[np.ndarray, np.ndarray]]] = None
    depth_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise GroupingError("a layer group needs at least one member")
        cols = {m.W.shape[1] for m in self.members}
        if len(cols) != 1:
            raise GroupingError(f"group members disagree on column count: {sorted(cols)}")
        if self.calibration is not None:
            if len(self.calibration) != len(self.members):
                raise GroupingError("calibration must cover every group member or none")
            p = self.p
            for m, (X, Y) in zip(self.members, self.calibration):
                if X.shape[0] != p or Y.shape[0] != m.W.shape[0] or X.shape[1] != Y.shape[1]:
                    raise GroupingError(
                        f"{m.source}: calibration shapes X{X.shape} Y{Y.shape} "
                        f"do not fit W{m.W.shape}"
                    )
        if not self.depth_indices:
            self.depth_indices = list(range(1, len(self.members) + 1))

    @property
    def p(self) -> int:
        return self.members[0].W.shape[1]

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def names(self) -> list[str]:
        return [m.source for m in self.members]


def flatten_layer(t: LayerTensor) -> LayerMatrix:
    if t.kind == FC:
        return LayerMatrix(t.name, t.data.copy(), t.shape, 1)
    k, _, d, n = t.shape
    W = t.data.transpose(3, 2, 0, 1).reshape(n, d * k * k)
    return LayerMatrix(t.name, np.ascontiguousarray(W), t.shape, 1)


def chunk_layer(m: LayerMatrix, g: int) -> LayerMatrix:
    """Split each filter row into ``d/g`` rows of ``g`` input channels each.

    Output row ``i*(d/g) + c`` holds channels ``[c*g, (c+1)*g)`` of filter ``i``.
    """
    if m.kind != CONV:
        raise GroupingError(f"{m.source}: only conv layers can be chunked")
    k, _, d, n = m.original_shape
    if m.chunk_factor != 1:
        raise GroupingError(f"{m.source}: layer is already chunked")
    if g < 1 or d % g:
        raise GroupingError(f"{m.source}: chunk depth {g} does not divide depth {d}")
    factor = d // g
    W = m.W.reshape(n * factor, k * k * g)
    return LayerMatrix(m.source, np.ascontiguousarray(W), m.original_shape, factor)


def _layer_calibration(name, calibration):
    if calibration is None:
        return None
    return calibration.get(name)


def _make_group(layers: Sequence[LayerTensor], calibration) -> LayerGroup:
    first = layers[0]
    if first.kind == FC:
        mats = [flatten_layer(t) for t in layers]
        k = g = None
    else:
        k = first.receptive_field
        g = reduce(math.gcd, (t.depth for t in layers))
        mats = [chunk_layer(flatten_layer(t), g) for t in layers]

    pairs = [_layer_calibration(t.name, calibration) for t in layers]
    present = [c is not None for c in pairs]
    calib = None
    if any(present):
        if any(m.chunk_factor > 1 for m in mats):
            log.warning(
                "group %s is chunked (depth %s); calibration pairs ignored, "
                "running weight-only",
                [t.name for t in layers],
                g,
            )
        elif not all(present):
            raise GroupingError(
                "calibration must cover every group member or none: "
                f"missing for {[t.name for t, c in zip(layers, present) if not c]}"
            )
        else:
            calib = [(as_dense(X, "X"), as_dense(Y, "Y")) for X, Y in pairs]
    return LayerGroup(mats, k, g, calib, [t.depth_index for t in layers])


def group_layers(
    layers: Sequence[LayerTensor],
    max_group: int = 4,
    calibration: Optional[Mapping[str, tuple[np.ndarray, np.ndarray]]] = None,
) -> list[LayerGroup]:
    """Partition layers into compression groups.

    Fully-connected layers and a depth-3 first conv layer stay alone. Other
    conv layers are split by receptive field and then into consecutive runs of
    at most ``max_group`` layers in network order. Groups come back ordered by
    their first member's depth index.
    """
    if not layers:
        raise GroupingError("no layers to group")
    if max_group < 1:
        raise GroupingError("max_group must be at least 1")
    names = [t.name for t in layers]
    if len(set(names)) != len(names):
        raise GroupingError("layer names must be unique")
    ordered = sorted(layers, key=lambda t: t.depth_index)
    idx = [t.depth_index for t in ordered]
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise GroupingError("depth indices must be strictly increasing")

    runs: list[list[LayerTensor]] = []
    by_k: dict[int, list[LayerTensor]] = {}
    first_conv = next((t for t in ordered if t.kind == CONV), None)
    for t in ordered:
        if t.kind == FC or (t is first_conv and t.depth == 3):
            runs.append([t])
        else:
            by_k.setdefault(t.receptive_field, []).append(t)
    for members in by_k.values():
        for start in range(0, len(members), max_group):
            runs.append(members[start : start + max_group])
    runs.sort(key=lambda r: r[0].depth_index)
    return [_make_group(r, calibration) for r in runs]


def unflatten(W: np.ndarray, original_shape: Sequence[int]) -> np.ndarray:
    """Invert flatten (and chunking, inferred from the row count)."""
    shape = tuple(int(v) for v in original_shape)
    W = np.asarray(W, dtype=np.float64)
    if len(shape) == 2:
        if W.shape != shape:
            raise ReconstructionError(f"matrix {W.shape} does not match layer shape {shape}")
        return W.copy()
    if len(shape) != 4:
        raise ReconstructionError(f"unsupported layer shape {shape}")
    k, _, d, n = shape
    if W.size != k * k * d * n or W.shape[0] % n:
        raise ReconstructionError(f"matrix {W.shape} does not match layer shape {shape}")
    return W.reshape(n, d, k, k).transpose(2, 3, 1, 0).copy()


def reconstruct_layer(d, original_shape, depth_index: int = 1) -> LayerTensor:
    """Materialise ``U [Vc; Vi] + S`` of a decomposition back into layer layout."""
    W_hat = d.dense()
    return LayerTensor(d.layer, unflatten(W_hat, original_shape), depth_index)
