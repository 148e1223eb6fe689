"""Parameter accounting, error metrics, the two-path inference product and
filter correspondence analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import __version__
from .errors import AnalysisError, PreconditionError
from .layermodel import CONV, LayerGroup, LayerTensor, chunk_layer, flatten_layer
from .solver import Decomposition, GroupDecomposition


@dataclass
class LayerCount:
    name: str
    n: int
    p: int
    m_hat: int
    m_bar: int
    q: int
    group_size: int

    @property
    def original(self) -> int:
        return self.n * self.p

    @property
    def own(self) -> int:
        """Parameters owned by this layer alone (U, private V rows, S)."""
        return self.n * (self.m_hat + self.m_bar) + self.m_bar * self.p + self.q

    @property
    def compressed(self) -> float:
        return self.own + self.m_hat * self.p / self.group_size

    @property
    def closed_form(self) -> float:
        """The ``(m_bar + m_hat/T)(n + p) + q`` approximation."""
        return (self.m_bar + self.m_hat / self.group_size) * (self.n + self.p) + self.q


@dataclass
class ParameterCount:
    per_layer: list[LayerCount]
    shared: int

    @property
    def total_original(self) -> int:
        return sum(c.original for c in self.per_layer)

    @property
    def total_compressed(self) -> int:
        return sum(c.own for c in self.per_layer) + self.shared


def parameter_count(gd: GroupDecomposition) -> ParameterCount:
    T = len(gd.members)
    m_hat = gd.m_hat
    rows = []
    for d in gd.members:
        n, p = d.shape
        rows.append(LayerCount(d.layer, n, p, m_hat, d.V_individual.shape[0], d.card, T))
    p = gd.V_common_shared.shape[1]
    return ParameterCount(rows, m_hat * p)


def compression_rate(original, compressed) -> float:
    if compressed <= 0:
        raise PreconditionError("compressed parameter count must be positive")
    return original / compressed


def closed_form_fraction(m: int, n: int, p: int, q: int) -> Fraction:
    """Single-layer compressed/original ratio ``(m(n+p)+q)/(np)``, exactly."""
    return Fraction(m * (n + p) + q, n * p)


def format_rate(rate: float) -> str:
    return f"{rate:.1f}X"


def reconstruction_error(W, d: Decomposition) -> float:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != d.shape:
        raise PreconditionError(f"W{W.shape} does not match decomposition {d.shape}")
    resid = float(np.linalg.norm(W - d.dense()))
    norm = float(np.linalg.norm(W))
    if norm == 0.0:
        return 0.0 if resid == 0.0 else math.inf
    return resid / norm


def output_error(X, Y, d: Decomposition) -> float:
    """Relative error of the compressed layer's response on calibration pairs."""
    Y = np.asarray(Y, dtype=np.float64)
    resid = float(np.linalg.norm(Y - apply_compressed(d, X)))
    norm = float(np.linalg.norm(Y))
    if norm == 0.0:
        return 0.0 if resid == 0.0 else math.inf
    return resid / norm


def apply_compressed(d: Decomposition, x) -> np.ndarray:
    """``U (V x) + S x``: low-rank and sparse paths evaluated separately, then summed."""
    x = np.asarray(x, dtype=np.float64)
    n, p = d.shape
    if x.shape[0] != p:
        raise PreconditionError(f"input of length {x.shape[0]} does not match {p} columns")
    low = d.U @ (d.V @ x)
    return low + d.S @ x


# ---------------------------------------------------------------- reports


@dataclass
class LayerRow:
    name: str
    original_params: float
    compressed_params: float
    recon_error: Optional[float] = None
    output_error: Optional[float] = None

    @property
    def rate(self) -> float:
        return compression_rate(self.original_params, self.compressed_params)


@dataclass
class Totals:
    original_params: float
    compressed_params: float

    @property
    def rate(self) -> float:
        return compression_rate(self.original_params, self.compressed_params)


@dataclass
class CompressionReport:
    per_layer: list[LayerRow]
    totals: Totals
    config: dict = field(default_factory=dict)
    objective_trace: list[dict] = field(default_factory=list)
    tool_version: str = __version__


def report_from_counts(
    rows: Iterable[tuple[str, float, float]], config: Optional[dict] = None
) -> CompressionReport:
    """Build a report from (name, original, compressed) rows; totals are the sums."""
    per_layer = [LayerRow(name, orig, comp) for name, orig, comp in rows]
    totals = Totals(
        sum(r.original_params for r in per_layer), sum(r.compressed_params for r in per_layer)
    )
    return CompressionReport(per_layer, totals, dict(config or {}))


def build_report(
    groups: Sequence[LayerGroup],
    decompositions: Sequence[GroupDecomposition],
    config: Optional[dict] = None,
) -> CompressionReport:
    rows = []
    trace = []
    total_orig = 0
    total_comp = 0
    for gi, (group, gd) in enumerate(zip(groups, decompositions)):
        counts = parameter_count(gd)
        total_orig += counts.total_original
        total_comp += counts.total_compressed
        for t, (m, d, c) in enumerate(zip(group.members, gd.members, counts.per_layer)):
            out_err = None
            if group.calibration is not None:
                X, Y = group.calibration[t]
                out_err = output_error(X, Y, d)
            rows.append(
                LayerRow(d.layer, c.original, c.compressed, reconstruction_error(m.W, d), out_err)
            )
        trace.extend({"group": gi, "epoch": k, "value": v} for k, v in gd.objective_trace)
    return CompressionReport(rows, Totals(total_orig, total_comp), dict(config or {}), trace)


def _human(count: float) -> str:
    if count >= 1e6:
        return f"{count / 1e6:.3g}M"
    if count >= 1e3:
        return f"{count / 1e3:.3g}k"
    return f"{count:.3g}"


def render_table(report: CompressionReport) -> str:
    header = f"{'Layers':<20} {'#W(O)':>10} {'#W(C)':>10} {'R':>8}"
    lines = [header, "-" * len(header)]
    if not report.per_layer:
        return "\n".join(lines)
    for r in report.per_layer:
        lines.append(
            f"{r.name:<20} {_human(r.original_params):>10} {_human(r.compressed_params):>10} "
            f"{format_rate(r.rate):>8}"
        )
    lines.append("-" * len(header))
    t = report.totals
    lines.append(
        f"{'Total':<20} {_human(t.original_params):>10} {_human(t.compressed_params):>10} "
        f"{format_rate(t.rate):>8}"
    )
    return "\n".join(lines)


# ---------------------------------------------------------------- correspondences


def _filter_rows(t: LayerTensor, g: Optional[int]) -> np.ndarray:
    m = flatten_layer(t)
    if t.kind == CONV and g != t.depth:
        m = chunk_layer(m, g)
    return m.W


def find_correspondences(a: LayerTensor, b: LayerTensor) -> list[tuple[int, int, float]]:
    """Mutual nearest filters between two layers, sorted by distance.

    Conv layers of different depth are compared on chunks of ``gcd(d_a, d_b)``
    input channels; indices then refer to chunk rows.
    """
    if a.kind != b.kind:
        raise AnalysisError(f"cannot compare a {a.kind} layer with a {b.kind} layer")
    if a.kind == CONV:
        if a.receptive_field != b.receptive_field:
            raise AnalysisError(
                f"receptive fields differ: {a.receptive_field} vs {b.receptive_field}"
            )
        g = math.gcd(a.depth, b.depth)
    else:
        g = None
    A = _filter_rows(a, g)
    B = _filter_rows(b, g)
    if A.shape[1] != B.shape[1]:
        raise AnalysisError(f"filter lengths differ: {A.shape[1]} vs {B.shape[1]}")
    if not len(A) or not len(B):
        return []
    D = cdist(A, B)
    best_b = np.argmin(D, axis=1)
    best_a = np.argmin(D, axis=0)
    pairs = [(i, int(j), float(D[i, j])) for i, j in enumerate(best_b) if best_a[j] == i]
    pairs.sort(key=lambda x: (x[2], x[0], x[1]))
    return pairs
