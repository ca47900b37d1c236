"""Cross-correlation of two photon streams, intensity traces and partitions.

Delays are defined as ``tau = t_B - t_A``. For every photon of the channel
with fewer events the partners in the other channel are located by binary
search on the sorted stream. Two counting strategies give identical integer
results and are selected by an operation-count estimate:

``edges``
    one binary search per (photon, bin edge); cost ~ K N log N. Best for
    wide delay windows with a moderate number of bins.
``pairs``
    one binary search per photon for the window start, then each partner in
    the window is binned; cost ~ pairs-in-window * log K. Best for many
    narrow bins.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .errors import (
    ClippedAxisWarning,
    DomainError,
    NormalizationError,
    PartitionSpecError,
    PecsWarning,
    QuantizationError,
)
from .timetag import AcquisitionRecord

LINEAR = "linear"
LOGARITHMIC = "logarithmic"
_SCALE_ALIASES = {"lin": LINEAR, "linear": LINEAR, "log": LOGARITHMIC, "logarithmic": LOGARITHMIC}

DEFAULT_LOG_GROWTH = 1.1


# --------------------------------------------------------------------------
# Delay axis
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TauAxis:
    edges: np.ndarray
    scale: str = LINEAR

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float).reshape(-1)
        if edges.size < 2:
            raise DomainError("a delay axis needs at least 2 edges")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise DomainError("axis edges must be finite and strictly increasing")
        scale = _SCALE_ALIASES.get(self.scale)
        if scale is None:
            raise DomainError(f"unknown axis scale {self.scale!r}")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "scale", scale)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def __len__(self):
        return self.edges.size - 1

    def __eq__(self, other):
        if not isinstance(other, TauAxis):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.edges, other.edges)

    __hash__ = None


def _snap(values, unit):
    """Round ``values`` to multiples of ``unit`` when they agree to ~1e-9."""
    x = np.asarray(values, dtype=float) / unit
    r = np.rint(x)
    close = np.abs(x - r) <= 1e-9 * np.maximum(1.0, np.abs(r))
    return np.where(close, r * unit, np.asarray(values, dtype=float))


def _geometric_segment(start, stop, first, growth):
    """Edges from ``start`` to ``stop`` with widths first*growth**k (last clipped)."""
    span = stop - start
    if growth == 1.0:
        n = math.ceil(span / first - 1e-9)
        edges = start + first * np.arange(n + 1)
    else:
        n = math.ceil(math.log1p(span * (growth - 1.0) / first) / math.log(growth) - 1e-9)
        widths = first * growth ** np.arange(n)
        edges = start + np.concatenate([[0.0], np.cumsum(widths)])
    edges = edges[edges < stop - 1e-9 * first]
    return np.append(edges, stop)


def build_tau_axis(limits, resolution, scale=LINEAR, growth=DEFAULT_LOG_GROWTH, tick=None) -> TauAxis:
    """Construct a delay axis over ``limits=(tau_min, tau_max)`` in seconds.

    Linear axes have uniform bins of width ``resolution``. Logarithmic axes have
    bin widths growing by ``growth`` per bin starting at ``resolution``. When
    the range straddles zero a log axis is built per sign, outward from
    ``+-resolution``, and the two halves share one central bin
    ``[-resolution, resolution)``.
    """
    tau_min, tau_max = (float(v) for v in limits)
    resolution = float(resolution)
    if not tau_min < tau_max:
        raise DomainError(f"empty delay range ({tau_min}, {tau_max})")
    if not 0 < resolution < tau_max - tau_min:
        raise DomainError(f"resolution must lie in (0, {tau_max - tau_min}), got {resolution}")
    if tick is not None and resolution < tick * (1 - 1e-9):
        raise QuantizationError(f"resolution {resolution} s is below one tick ({tick} s)")
    scale = _SCALE_ALIASES.get(scale)
    if scale is None:
        raise DomainError("scale must be 'linear' or 'logarithmic'")
    if scale == LINEAR:
        edges = _geometric_segment(tau_min, tau_max, resolution, 1.0)
        return TauAxis(_snap(edges, resolution), LINEAR)
    if growth < 1.0:
        raise DomainError("log growth factor must be >= 1")
    if tau_min >= 0:
        edges = _geometric_segment(tau_min, tau_max, resolution, growth)
    elif tau_max <= 0:
        edges = -_geometric_segment(-tau_max, -tau_min, resolution, growth)[::-1]
    else:
        lo = max(tau_min, -resolution)
        hi = min(tau_max, resolution)
        pos = _geometric_segment(hi, tau_max, resolution, growth) if hi < tau_max else np.array([hi])
        neg = -_geometric_segment(-lo, -tau_min, resolution, growth)[::-1] if lo > tau_min else np.array([lo])
        edges = np.concatenate([neg, pos])
    return TauAxis(_snap(edges, resolution), LOGARITHMIC)


def tick_edges(edges, tick) -> np.ndarray:
    """Integer tick thresholds equivalent to half-open bins on ``edges``.

    An integer delay ``d`` (ticks) lies in ``[e_k, e_k+1)`` iff
    ``E_k <= d < E_k+1`` with ``E = ceil(e / tick)``.
    """
    x = np.asarray(edges, dtype=float) / tick
    r = np.rint(x)
    x = np.where(np.abs(x - r) <= 1e-9 * np.maximum(1.0, np.abs(r)), r, x)
    return np.ceil(x).astype(np.int64)


# --------------------------------------------------------------------------
# Partitions and intensity traces
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PartitionSpec:
    """Accepted time intervals ``[start, end)`` in seconds."""

    intervals: np.ndarray
    label: str = ""
    rate_range: tuple[float, float] | None = None

    def __post_init__(self):
        iv = np.array(self.intervals, dtype=float).reshape(-1, 2)
        if np.any(iv[:, 1] < iv[:, 0]):
            raise PartitionSpecError("interval end precedes its start")
        iv = iv[np.argsort(iv[:, 0], kind="stable")]
        if np.any(iv[1:, 0] < iv[:-1, 1]):
            raise PartitionSpecError("partition intervals overlap")
        if iv.size and iv[0, 0] < 0:
            raise PartitionSpecError("partition intervals must start at t >= 0")
        iv.setflags(write=False)
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def from_flags(cls, flags, label=""):
        return cls(np.asarray(flags, dtype=float), label)

    @property
    def duration(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))

    def accepted_time(self, total_time) -> float:
        iv = np.clip(self.intervals, 0.0, total_time)
        return float(np.sum(iv[:, 1] - iv[:, 0]))

    def mask(self, ticks, tick_resolution, total_time) -> np.ndarray:
        """Membership of integer-tick events; an interval reaching the end of
        the acquisition also accepts events stamped exactly at ``total_time``."""
        ticks = np.asarray(ticks, dtype=np.int64)
        inside = np.zeros(ticks.size, dtype=bool)
        if not self.intervals.size or not ticks.size:
            return inside
        lo = tick_edges(self.intervals[:, 0], tick_resolution)
        hi = tick_edges(self.intervals[:, 1], tick_resolution)
        hi = np.where(self.intervals[:, 1] >= total_time, np.iinfo(np.int64).max, hi)
        i0 = np.searchsorted(ticks, lo, side="left")
        i1 = np.searchsorted(ticks, hi, side="left")
        delta = np.zeros(ticks.size + 1, dtype=np.int64)
        np.add.at(delta, i0, 1)
        np.add.at(delta, i1, -1)
        return np.cumsum(delta[:-1]) > 0


@dataclass(frozen=True, eq=False)
class IntensityTrace:
    time_edges: np.ndarray
    counts_a: np.ndarray
    counts_b: np.ndarray
    t_res: float

    @property
    def widths(self):
        return np.diff(self.time_edges)

    @property
    def rates_a(self):
        return self.counts_a / self.widths

    @property
    def rates_b(self):
        return self.counts_b / self.widths

    @property
    def total_rates(self):
        return (self.counts_a + self.counts_b) / self.widths

    @property
    def centers(self):
        return 0.5 * (self.time_edges[1:] + self.time_edges[:-1])


def intensity_trace(record: AcquisitionRecord, t_res: float) -> IntensityTrace:
    """Per-channel count rates on a uniform grid of width ``t_res``.

    The last bin is clipped at the acquisition end and closed on the right.
    """
    if not t_res > 0:
        raise DomainError("t_res must be > 0")
    T = record.total_time
    if T <= 0:
        edges = np.array([0.0, t_res])
    elif t_res >= T:
        warnings.warn(f"t_res={t_res} s exceeds the acquisition time; trace has one bin", PecsWarning,
                      stacklevel=2)
        edges = np.array([0.0, T])
    else:
        edges = _geometric_segment(0.0, T, t_res, 1.0)
    E = tick_edges(edges, record.tick_resolution)

    def _count(ts):
        idx = np.searchsorted(ts, E, side="left")
        idx[-1] = ts.size
        return np.diff(idx)

    return IntensityTrace(edges, _count(record.channel_a.timestamps),
                          _count(record.channel_b.timestamps), float(t_res))


def partition_by_threshold(trace: IntensityTrace, ranges) -> list[PartitionSpec]:
    """One partition per summed-rate range ``[low, high)`` (counts/s)."""
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    for lo, hi in ranges:
        if not lo < hi:
            raise PartitionSpecError(f"invalid rate range [{lo}, {hi})")
    ordered = sorted(ranges)
    for (lo0, hi0), (lo1, hi1) in zip(ordered, ordered[1:]):
        if lo1 < hi0:
            raise PartitionSpecError(f"rate ranges [{lo0}, {hi0}) and [{lo1}, {hi1}) overlap")
    rates = trace.total_rates
    out = []
    for lo, hi in ranges:
        sel = (rates >= lo) & (rates < hi)
        out.append(PartitionSpec(_runs_to_intervals(sel, trace.time_edges),
                                 label=f"{lo:g}:{hi:g}", rate_range=(lo, hi)))
    return out


def _runs_to_intervals(selected, edges):
    sel = np.concatenate([[False], selected, [False]]).astype(np.int8)
    d = np.diff(sel)
    starts = np.flatnonzero(d == 1)
    stops = np.flatnonzero(d == -1)
    return np.column_stack([edges[starts], edges[stops]]) if starts.size else np.empty((0, 2))


# --------------------------------------------------------------------------
# Correlation result and uncertainties
# --------------------------------------------------------------------------

def poisson_errors(M, I_A, I_B, w, T):
    """Asymmetric Poisson errors (sqrt(M + 1/4) +- 1/2) / (I_A I_B w T)."""
    M = np.asarray(M, dtype=float)
    norm = np.asarray(I_A * I_B * np.asarray(w, dtype=float) * T, dtype=float)
    if np.any(~(norm > 0)):
        raise DomainError("normalisation I_A I_B w T must be positive")
    if np.any(M < 0):
        raise DomainError("counts must be non-negative")
    root = np.sqrt(M + 0.25)
    return (root + 0.5) / norm, (root - 0.5) / norm


def symmetric_poisson_error(M, I_A, I_B, w, T):
    """sqrt(M) / (I_A I_B w T); close to, but not exactly, the mean of the asymmetric pair."""
    norm = np.asarray(I_A * I_B * np.asarray(w, dtype=float) * T, dtype=float)
    if np.any(~(norm > 0)):
        raise DomainError("normalisation I_A I_B w T must be positive")
    return np.sqrt(np.asarray(M, dtype=float)) / norm


@dataclass(frozen=True, eq=False)
class CorrelationResult:
    tau_edges: np.ndarray | None
    tau_centers: np.ndarray
    raw_counts: np.ndarray
    g2: np.ndarray
    err_plus: np.ndarray
    err_minus: np.ndarray
    rate_a: float
    rate_b: float
    acquisition_time: float
    scale: str = LINEAR
    label: str = ""
    rho: float | None = None
    systematic_plus: np.ndarray | None = None
    systematic_minus: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def widths(self):
        if self.tau_edges is None:
            return None
        return np.diff(self.tau_edges)

    @property
    def normalization(self):
        return self.rate_a * self.rate_b * self.widths * self.acquisition_time

    @property
    def sigma(self):
        """Symmetrised uncertainty used as fit weight."""
        return 0.5 * (self.err_plus + self.err_minus)

    def __len__(self):
        return self.tau_centers.size

    def with_values(self, **changes):
        return replace(self, **changes)

    def sidecar(self) -> dict:
        out = {
            "I_A": self.rate_a,
            "I_B": self.rate_b,
            "T": self.acquisition_time,
            "scale": self.scale,
            "label": self.label,
            "rho": self.rho,
            "tau_edges": None if self.tau_edges is None else self.tau_edges.tolist(),
        }
        if self.systematic_plus is not None:
            out["systematic_plus"] = self.systematic_plus.tolist()
            out["systematic_minus"] = self.systematic_minus.tolist()
        out.update(self.meta)
        return out

    def to_csv(self, path, sidecar=True) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("tau_s,g2,err_plus,err_minus,raw_counts\n")
            for row in zip(self.tau_centers.tolist(), self.g2.tolist(), self.err_plus.tolist(),
                           self.err_minus.tolist(), self.raw_counts.tolist()):
                fh.write("{!r},{!r},{!r},{!r},{}\n".format(*row))
        if sidecar:
            path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        edges = meta.pop("tau_edges", None)
        sys_p = meta.pop("systematic_plus", None)
        sys_m = meta.pop("systematic_minus", None)
        return cls(
            tau_edges=None if edges is None else np.asarray(edges, dtype=float),
            tau_centers=data[:, 0],
            raw_counts=data[:, 4].astype(np.int64),
            g2=data[:, 1],
            err_plus=data[:, 2],
            err_minus=data[:, 3],
            rate_a=float(meta.pop("I_A", float("nan"))),
            rate_b=float(meta.pop("I_B", float("nan"))),
            acquisition_time=float(meta.pop("T", float("nan"))),
            scale=meta.pop("scale", LINEAR),
            label=meta.pop("label", ""),
            rho=meta.pop("rho", None),
            systematic_plus=None if sys_p is None else np.asarray(sys_p),
            systematic_minus=None if sys_m is None else np.asarray(sys_m),
            meta=meta,
        )


# --------------------------------------------------------------------------
# Counting kernels
# --------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True, inline="always")
def _bin_of(E, d, width):
    if width > 0:
        return (d - E[0]) // width
    lo, hi = 0, E.size - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if E[mid] <= d:
            lo = mid
        else:
            hi = mid
    return lo


@numba.njit(nogil=True, cache=True)
def _pair_kernel(ref, other, E, forward, width, out):
    K = E.size - 1
    n = other.size
    lo = 0
    for t0 in ref:
        if forward:
            # partners with E[0] <= other - t0 < E[K]
            lo += np.searchsorted(other[lo:], t0 + E[0], side="left")
            stop = t0 + E[K]
            j = lo
            while j < n and other[j] < stop:
                out[_bin_of(E, other[j] - t0, width)] += 1
                j += 1
        else:
            # partners with E[0] <= t0 - other < E[K]
            lo += np.searchsorted(other[lo:], t0 - E[K], side="right")
            stop = t0 - E[0]
            j = lo
            while j < n and other[j] <= stop:
                out[_bin_of(E, t0 - other[j], width)] += 1
                j += 1


def _count_pairs(ref, other, E, forward):
    out = np.zeros(E.size - 1, dtype=np.int64)
    steps = np.diff(E)
    width = int(steps[0]) if np.all(steps == steps[0]) else 0
    if ref.size and other.size:
        _pair_kernel(ref, other, E, forward, width, out)
    return out


def _count_edges(ref, other, E, forward):
    if not ref.size or not other.size:
        return np.zeros(E.size - 1, dtype=np.int64)
    S = np.empty(E.size, dtype=np.int64)
    for k, e in enumerate(E.tolist()):
        if forward:
            S[k] = np.searchsorted(other, ref + e, side="left").sum()
        else:
            S[k] = np.searchsorted(other, ref - e, side="right").sum()
    return np.diff(S) if forward else -np.diff(S)


def _thread_count(threads):
    if threads is None:
        env = os.environ.get("PECS_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def choose_method(n_ref, n_other, E, span_ticks):
    """Pick the cheaper exact counting strategy from an operation-count model."""
    K = E.size - 1
    log_n = math.log2(n_other + 2)
    window = float(E[-1] - E[0])
    expected_pairs = n_ref * n_other * min(1.0, window / max(span_ticks, 1))
    cost_edges = (K + 1) * n_ref * log_n
    cost_pairs = n_ref * log_n + expected_pairs * math.log2(K + 2) + 1e5
    return "pairs" if cost_pairs < cost_edges else "edges"


def count_pairs(ticks_a, ticks_b, E, method="auto", threads=None, span_ticks=None):
    """Raw pair counts with ``E_k <= t_B - t_A < E_k+1`` (integer ticks)."""
    a = np.ascontiguousarray(ticks_a, dtype=np.int64)
    b = np.ascontiguousarray(ticks_b, dtype=np.int64)
    E = np.ascontiguousarray(E, dtype=np.int64)
    forward = a.size <= b.size
    ref, other = (a, b) if forward else (b, a)
    if method == "auto":
        if span_ticks is None:
            span_ticks = max(int(max(a[-1] if a.size else 0, b[-1] if b.size else 0)), 1)
        method = choose_method(ref.size, other.size, E, span_ticks)
    kernel = {"pairs": _count_pairs, "edges": _count_edges}.get(method)
    if kernel is None:
        raise DomainError(f"unknown counting method {method!r}")
    nthreads = min(_thread_count(threads), max(1, ref.size // 10000))
    if nthreads == 1:
        return kernel(ref, other, E, forward)
    shards = np.array_split(ref, nthreads)
    with ThreadPoolExecutor(nthreads) as pool:
        parts = list(pool.map(lambda s: kernel(s, other, E, forward), shards))
    return np.sum(parts, axis=0)


# --------------------------------------------------------------------------
# Public correlation entry points
# --------------------------------------------------------------------------

def _clip_axis(axis: TauAxis, T: float) -> TauAxis:
    edges = axis.edges
    if edges[0] >= -T and edges[-1] <= T:
        return axis
    warnings.warn(f"delay axis exceeds +-T ({T} s) and has been clipped", ClippedAxisWarning, stacklevel=3)
    inner = edges[(edges > -T) & (edges < T)]
    clipped = np.concatenate([[max(edges[0], -T)], inner, [min(edges[-1], T)]])
    clipped = np.unique(clipped)
    if clipped.size < 2:
        raise DomainError("delay axis lies entirely outside +-T")
    return TauAxis(clipped, axis.scale)


def _select(record, axis, partition):
    if record.counts_a == 0 or record.counts_b == 0:
        raise NormalizationError(
            f"cannot normalise: channel counts are ({record.counts_a}, {record.counts_b})"
        )
    a = record.channel_a.timestamps
    b = record.channel_b.timestamps
    T = record.total_time
    if partition is None:
        return a, a.size, b.size, T
    T_acc = partition.accepted_time(T)
    mask_a = partition.mask(a, record.tick_resolution, T)
    n_b = int(partition.mask(b, record.tick_resolution, T).sum())
    a_acc = a[mask_a]
    if T_acc <= 0 or a_acc.size == 0 or n_b == 0:
        raise NormalizationError(
            f"partition {partition.label!r} accepts no photons (T={T_acc} s, "
            f"counts=({a_acc.size}, {n_b}))"
        )
    return a_acc, a_acc.size, n_b, T_acc


def cross_correlate(record: AcquisitionRecord, axis: TauAxis, partition: PartitionSpec | None = None,
                    method="auto", threads=None) -> CorrelationResult:
    """Normalised g2(tau) with asymmetric Poisson errors.

    With a partition only pairs whose channel-A photon lies inside an accepted
    interval are counted, and rates and duration are taken over the accepted
    intervals.
    """
    axis = _clip_axis(axis, record.total_time) if record.total_time > 0 else axis
    E = tick_edges(axis.edges, record.tick_resolution)
    if np.any(np.diff(E) <= 0):
        raise QuantizationError("axis has bins narrower than one tick")
    a, n_a, n_b, T = _select(record, axis, partition)
    span = max(int(record.total_time / record.tick_resolution), 1)
    M = count_pairs(a, record.channel_b.timestamps, E, method=method, threads=threads, span_ticks=span)
    I_A, I_B = n_a / T, n_b / T
    w = axis.widths
    norm = I_A * I_B * w * T
    err_p, err_m = poisson_errors(M, I_A, I_B, w, T)
    return CorrelationResult(
        tau_edges=axis.edges.copy(),
        tau_centers=axis.centers,
        raw_counts=M,
        g2=M / norm,
        err_plus=err_p,
        err_minus=err_m,
        rate_a=float(I_A),
        rate_b=float(I_B),
        acquisition_time=float(T),
        scale=axis.scale,
        label="" if partition is None else partition.label,
    )


def brute_force_correlate(record: AcquisitionRecord, axis: TauAxis, partition: PartitionSpec | None = None,
                          chunk_pairs=4_000_000) -> np.ndarray:
    """Reference pair counts by enumerating every cross-channel pair.

    Makes no use of stream ordering; intended for small records only.
    """
    a = record.channel_a.timestamps
    b = record.channel_b.timestamps
    if partition is not None:
        a = a[partition.mask(a, record.tick_resolution, record.total_time)]
    if a.size * b.size > 10**10:
        warnings.warn(f"brute force over {a.size * b.size} pairs will be slow", PecsWarning, stacklevel=2)
    E = tick_edges(axis.edges, record.tick_resolution)
    K = E.size - 1
    M = np.zeros(K, dtype=np.int64)
    if not a.size or not b.size:
        return M
    rows = max(1, chunk_pairs // b.size)
    for i in range(0, a.size, rows):
        d = (b[None, :] - a[i:i + rows, None]).ravel()
        d = d[(d >= E[0]) & (d < E[-1])]
        M += np.bincount(np.searchsorted(E, d, side="right") - 1, minlength=K)
    return M
