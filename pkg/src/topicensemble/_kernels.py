"""Numeric kernels behind the agreement statistics.

Two interchangeable backends:

* loop kernels compiled with numba @njit (default when numba imports), and
* vectorized pure-numpy fallbacks.

Selection happens at import time via the env flag ``TOPICENSEMBLE_NUMBA``
(set to ``0``/``false`` to force the numpy path). Both backends agree to
float64 rounding; ``benchmarks/bench_agreement.py`` times them against each
other.

counts is an (N items, k categories) float64 array whose rows sum to the
rater count n. kind is AC1 (adjusted chance) or FLEISS (marginal chance);
a coefficient is NaN when the chance term degenerates (p_e >= 1).
"""
from __future__ import annotations

import os

import numpy as np

AC1 = 0
FLEISS = 1

_flag = os.environ.get("TOPICENSEMBLE_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------- numpy path

def observed_agreement_np(counts: np.ndarray, n: int) -> float:
    pairs = (counts * (counts - 1.0)).sum(axis=1)
    return float(pairs.mean() / (n * (n - 1.0)))


def category_props_np(counts: np.ndarray, n: int) -> np.ndarray:
    return counts.mean(axis=0) / n


def coefficient_np(counts: np.ndarray, n: int, kind: int):
    po = observed_agreement_np(counts, n)
    p = category_props_np(counts, n)
    if kind == AC1:
        pe = float((p * (1.0 - p)).sum() / (counts.shape[1] - 1.0))
    else:
        pe = float((p * p).sum())
    if pe >= 1.0:
        return np.nan, po, pe
    return (po - pe) / (1.0 - pe), po, pe


def bootstrap_np(counts: np.ndarray, n: int, idx: np.ndarray, kind: int) -> np.ndarray:
    """Coefficient per resample; idx is (resamples, N) item indices.

    Chunked over resamples so the (chunk, N, k) gather stays within a few
    hundred MB regardless of corpus size.
    """
    resamples, items = idx.shape
    k = counts.shape[1]
    chunk = max(1, min(resamples, int(4e7 / max(items * k, 1))))
    out = np.full(resamples, np.nan)
    for start in range(0, resamples, chunk):
        sub = counts[idx[start : start + chunk]]  # (chunk, N, k)
        po = (sub * (sub - 1.0)).sum(axis=2).mean(axis=1) / (n * (n - 1.0))
        p = sub.mean(axis=1) / n
        if kind == AC1:
            pe = (p * (1.0 - p)).sum(axis=1) / (k - 1.0)
        else:
            pe = (p * p).sum(axis=1)
        ok = pe < 1.0
        block = np.full(sub.shape[0], np.nan)
        block[ok] = (po[ok] - pe[ok]) / (1.0 - pe[ok])
        out[start : start + chunk] = block
    return out


# ----------------------------------------------------------- loop path (jit)

def _coefficient_loop(counts, n, kind):
    N, k = counts.shape
    po = 0.0
    for i in range(N):
        s = 0.0
        for j in range(k):
            c = counts[i, j]
            s += c * (c - 1.0)
        po += s
    po /= N * n * (n - 1.0)
    pe = 0.0
    for j in range(k):
        pj = 0.0
        for i in range(N):
            pj += counts[i, j]
        pj /= N * n
        if kind == AC1:
            pe += pj * (1.0 - pj)
        else:
            pe += pj * pj
    if kind == AC1:
        pe /= k - 1.0
    if pe >= 1.0:
        return np.nan, po, pe
    return (po - pe) / (1.0 - pe), po, pe


def _bootstrap_loop(counts, n, idx, kind):
    R, N = idx.shape
    k = counts.shape[1]
    out = np.empty(R)
    pj = np.empty(k)
    for r in range(R):
        po = 0.0
        for j in range(k):
            pj[j] = 0.0
        for t in range(N):
            i = idx[r, t]
            s = 0.0
            for j in range(k):
                c = counts[i, j]
                s += c * (c - 1.0)
                pj[j] += c
            po += s
        po /= N * n * (n - 1.0)
        pe = 0.0
        for j in range(k):
            q = pj[j] / (N * n)
            if kind == AC1:
                pe += q * (1.0 - q)
            else:
                pe += q * q
        if kind == AC1:
            pe /= k - 1.0
        if pe >= 1.0:
            out[r] = np.nan
        else:
            out[r] = (po - pe) / (1.0 - pe)
    return out


NUMBA_ACTIVE = False
coefficient_nb = None
bootstrap_nb = None

if _want_numba:
    try:
        from numba import njit

        coefficient_nb = njit(cache=True)(_coefficient_loop)
        bootstrap_nb = njit(cache=True)(_bootstrap_loop)
        NUMBA_ACTIVE = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ACTIVE = False

if NUMBA_ACTIVE:
    coefficient = coefficient_nb
    bootstrap = bootstrap_nb
else:
    coefficient = coefficient_np
    bootstrap = bootstrap_np


def backend_name() -> str:
    return "numba" if NUMBA_ACTIVE else "numpy"
