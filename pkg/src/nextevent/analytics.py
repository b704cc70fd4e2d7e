"""Corpus statistics over token streams.

Mutual information by separation distance, rank-frequency (Zipf) analysis,
and a two-sample Kolmogorov-Smirnov comparison of event frequencies.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.stats import kstwobign

log = logging.getLogger(__name__)


def _as_codes(stream: Sequence[Hashable]) -> np.ndarray:
    arr = np.asarray(stream)
    if arr.dtype.kind in "iu":
        return arr.astype(np.int64)
    _, codes = np.unique(np.asarray([str(s) for s in stream]), return_inverse=True)
    return codes.astype(np.int64)


def mutual_information(stream: Sequence[Hashable], d: int, trace_index: Sequence[int] | None = None) -> float:
    """Plug-in mutual information (bits) between tokens ``d`` positions apart.

    Marginals are those of the pair sample, which keeps the estimate
    non-negative. With ``trace_index`` (trace number per position) only pairs
    inside the same trace are counted.
    """
    codes = _as_codes(stream)
    n = len(codes)
    if d < 1:
        raise ValueError("separation d must be >= 1")
    if n <= d:
        raise ValueError(f"stream of length {n} too short for separation {d}")
    a, b = codes[:-d], codes[d:]
    if trace_index is not None:
        tix = np.asarray(trace_index)
        keep = tix[:-d] == tix[d:]
        a, b = a[keep], b[keep]
        if len(a) == 0:
            return 0.0
    k = int(codes.max()) + 1
    joint = np.bincount(a * k + b, minlength=k * k).reshape(k, k).astype(np.float64)
    joint /= joint.sum()
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    ratio = joint[nz] / np.outer(pa, pb)[nz]
    return float(max(0.0, np.sum(joint[nz] * np.log2(ratio))))


@dataclass
class DecayFit:
    model: str  # "exponential" or "power"
    slope: float
    intercept: float
    residual_ss: float

    @property
    def rate(self) -> float:
        """Decay rate: 1/k in I ~ exp(-d/k), or the exponent k in I ~ d^-k."""
        return -self.slope


@dataclass
class MiCurve:
    distances: list[int]
    mi_bits: list[float]
    exponential: DecayFit | None = None
    power: DecayFit | None = None

    def rows(self) -> list[tuple[int, float]]:
        return list(zip(self.distances, self.mi_bits))


def _linfit(x: np.ndarray, y: np.ndarray, model: str) -> DecayFit:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return DecayFit(model, float(slope), float(intercept), float(np.sum(resid**2)))


def fit_decay(distances: Sequence[int], mi: Sequence[float]) -> tuple[DecayFit | None, DecayFit | None]:
    """Least-squares fits of log I against d (exponential) and log d (power law).

    Only strictly positive points are used; fewer than 3 gives ``(None, None)``.
    """
    d = np.asarray(distances, dtype=np.float64)
    i = np.asarray(mi, dtype=np.float64)
    pos = i > 0
    if pos.sum() < 3:
        log.info("fewer than 3 positive MI points, decay fit skipped")
        return None, None
    ly = np.log(i[pos])
    return _linfit(d[pos], ly, "exponential"), _linfit(np.log(d[pos]), ly, "power")


def mi_curve(stream: Sequence[Hashable], d_max: int, trace_index: Sequence[int] | None = None) -> MiCurve:
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    if d_max >= len(stream):
        raise ValueError(f"d_max={d_max} must be smaller than the stream length {len(stream)}")
    ds = list(range(1, d_max + 1))
    mi = [mutual_information(stream, d, trace_index) for d in ds]
    exp_fit, pow_fit = fit_decay(ds, mi)
    return MiCurve(ds, mi, exp_fit, pow_fit)


@dataclass
class RankFrequency:
    tokens: list
    ranks: list[int]
    rel_freqs: list[float]
    slope: float  # of log(freq) against log(rank); nan with a single type

    def rows(self) -> list[tuple[int, object, float]]:
        return list(zip(self.ranks, self.tokens, self.rel_freqs))


def zipf(stream: Sequence[Hashable]) -> RankFrequency:
    """Relative frequencies by descending frequency rank (ties: sorted by token)."""
    if len(stream) == 0:
        raise ValueError("empty stream")
    counts = Counter(stream)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
    total = sum(counts.values())
    freqs = np.array([c for _, c in ordered], dtype=np.float64) / total
    ranks = np.arange(1, len(ordered) + 1)
    slope = float(np.polyfit(np.log(ranks), np.log(freqs), 1)[0]) if len(ordered) > 1 else float("nan")
    return RankFrequency([t for t, _ in ordered], ranks.tolist(), freqs.tolist(), slope)


@dataclass
class KsResult:
    D: float
    p_value: float
    n_a: int
    n_b: int
    table: list[dict]  # per-type token, freq_a, freq_b in comparison order


def ks_two_sample(freqs_a: Sequence[float], freqs_b: Sequence[float], n_a: int, n_b: int) -> tuple[float, float]:
    """KS statistic over cumulative sums of two ordered frequency vectors.

    The p-value uses the asymptotic Kolmogorov distribution with effective
    size ``n_a * n_b / (n_a + n_b)``.
    """
    a = np.asarray(freqs_a, dtype=np.float64)
    b = np.asarray(freqs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("frequency vectors must have the same length")
    if np.any(a < 0) or np.any(b < 0) or a.sum() <= 0 or b.sum() <= 0:
        raise ValueError("frequencies must be non-negative with positive mass")
    if n_a < 1 or n_b < 1:
        raise ValueError("sample sizes must be positive")
    D = float(np.max(np.abs(np.cumsum(a / a.sum()) - np.cumsum(b / b.sum()))))
    en = n_a * n_b / (n_a + n_b)
    p = float(kstwobign.sf(D * np.sqrt(en)))
    return D, p


def ks_event_frequencies(reference: Sequence[Hashable], other: Sequence[Hashable]) -> KsResult:
    """Compare the event frequency distribution of ``other`` against ``reference``.

    Types are ordered by their frequency rank in the reference; types seen
    only in ``other`` follow in sorted order.
    """
    ref = zipf(reference)
    oc = Counter(other)
    if not oc:
        raise ValueError("empty comparison stream")
    known = set(ref.tokens)
    if not known.intersection(oc):
        raise ValueError("streams share no event types")
    extra = sorted((t for t in oc if t not in known), key=str)
    universe = ref.tokens + extra
    fa = np.array(ref.rel_freqs + [0.0] * len(extra))
    fb = np.array([oc.get(t, 0) for t in universe], dtype=np.float64) / len(other)
    D, p = ks_two_sample(fa, fb, len(reference), len(other))
    table = [{"token": t, "freq_a": float(x), "freq_b": float(y)} for t, x, y in zip(universe, fa, fb)]
    return KsResult(D, p, len(reference), len(other), table)
