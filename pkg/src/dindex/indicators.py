"""Disruption-index family (DI_l, normalized DI_ln) and the dependency indicator DEP.

Counting conventions for a focal paper f and reference set R:

* ``n_i`` -- citers of f with no citation link into R
* ``n_j`` -- citers of f with at least ``l`` links into R
* ``n_k`` -- papers other than f that cite at least one member of R but not f

``DI_l = (n_i - n_j) / (n_i + n_j + n_k)``. R is either f's own cited
references or the union of cited references of f's journal-year cohort
(minus f itself). Citers with between 1 and l-1 links fall in neither bucket.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import _kernels
from .errors import DindexError
from .graph import NO_BOUND, Corpus, _bound, citing_positions

log = logging.getLogger(__name__)

OWN = "own-references"
COHORT = "cohort-union"
MODES = (OWN, COHORT)
DEP_MODES = ("mean", "total")


@dataclass(frozen=True)
class DisruptionCounts:
    n_i: int
    n_j: int
    n_k: int
    l: int
    mode: str = OWN


@dataclass(frozen=True)
class IndicatorRecord:
    id: str
    year: int
    citations: int
    log_citations: float
    di: dict[int, float | None]
    di_n: dict[int, float | None]
    dep: float | None
    dep_inverse: float | None = None

    @property
    def di1(self):
        return self.di.get(1)

    @property
    def di5(self):
        return self.di.get(5)

    @property
    def di1n(self):
        return self.di_n.get(1)

    @property
    def di5n(self):
        return self.di_n.get(5)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"reference-set mode must be one of {MODES}, got {mode!r}")


def reference_positions(corpus: Corpus, i: int, mode: str) -> np.ndarray | None:
    """Positions of the reference set of paper ``i``; ``None`` if undefined."""
    if mode == OWN:
        return corpus.out_neighbors(i)
    if corpus.is_stub[i]:
        return None
    union = corpus.cohort_union_positions(int(corpus.cohort_of[i]))
    return union[union != i]


def disruption_counts(corpus: Corpus, focal: str, l: int = 1, mode: str = OWN,
                      window: int | None = None) -> DisruptionCounts | None:
    """Count n_i, n_j^l and n_k for one focal paper.

    Returns ``None`` in cohort-union mode when the focal paper has no
    journal/year (a stub paper).
    """
    _check_mode(mode)
    if l < 1:
        raise ValueError(f"link threshold must be >= 1, got {l}")
    i = corpus.position(focal)
    refs = reference_positions(corpus, i, mode)
    if refs is None:
        return None
    bound = _bound(corpus, i, window)
    citers = citing_positions(corpus, i, window)
    n_i = n_j = 0
    for c in citers:
        k = len(np.intersect1d(corpus.out_neighbors(c), refs, assume_unique=True))
        if k == 0:
            n_i += 1
        elif k >= l:
            n_j += 1
    if len(refs):
        reach = np.unique(np.concatenate([corpus.in_neighbors(r) for r in refs]))
    else:
        reach = np.empty(0, dtype=np.int32)
    reach = reach[(reach != i) & (corpus.year[reach] <= bound)]
    n_k = len(np.setdiff1d(reach, citers, assume_unique=True))
    return DisruptionCounts(n_i, n_j, int(n_k), l, mode)


def disruption_index(counts: DisruptionCounts | None) -> float | None:
    """``(n_i - n_j) / (n_i + n_j + n_k)``, or ``None`` for a zero denominator."""
    if counts is None:
        return None
    den = counts.n_i + counts.n_j + counts.n_k
    if den == 0:
        return None
    return (counts.n_i - counts.n_j) / den


def dep(corpus: Corpus, focal: str, dep_mode: str = "mean",
        window: int | None = None) -> float | None:
    """Citation links from the focal paper's citers to its cited references.

    ``total`` returns the number of links; ``mean`` divides by the number of
    citers and is ``None`` for an uncited paper.
    """
    if dep_mode not in DEP_MODES:
        raise ValueError(f"dep_mode must be one of {DEP_MODES}, got {dep_mode!r}")
    i = corpus.position(focal)
    refs = corpus.out_neighbors(i)
    citers = citing_positions(corpus, i, window)
    total = sum(len(np.intersect1d(corpus.out_neighbors(c), refs, assume_unique=True))
                for c in citers)
    if dep_mode == "total":
        return float(total)
    if len(citers) == 0:
        return None
    return total / len(citers)


def invert_dep(values: Sequence[float | None] | np.ndarray) -> np.ndarray:
    """``max + 1 - v`` over the defined values; NaN/None stay NaN."""
    arr = np.array([np.nan if v is None else v for v in values], dtype=float)
    defined = ~np.isnan(arr)
    if not defined.any():
        raise DindexError("cannot invert DEP: no defined values")
    top = arr[defined].max()
    out = np.full(arr.shape, np.nan)
    out[defined] = top + 1.0 - arr[defined]
    return out


def log_citations(count) -> float | np.ndarray:
    """Natural log of ``count + 1``."""
    if np.any(np.asarray(count) < 0):
        raise ValueError("citation counts must be non-negative")
    return np.log1p(count) if isinstance(count, np.ndarray) else math.log1p(count)


# batch computation ----------------------------------------------------

@dataclass(frozen=True)
class FocalFilter:
    doc_types: tuple[str, ...] | None = None
    journals: tuple[str, ...] | None = None
    years: tuple[int, int] | None = None

    def select(self, corpus: Corpus) -> np.ndarray:
        keep = ~corpus.is_stub
        meta = corpus.meta
        if self.doc_types is not None:
            keep &= meta["doc_type"].isin(self.doc_types).to_numpy()
        if self.journals is not None:
            keep &= meta["journal"].isin(self.journals).to_numpy()
        if self.years is not None:
            lo, hi = self.years
            keep &= (corpus.year >= lo) & (corpus.year <= hi)
        return np.flatnonzero(keep)


@dataclass(frozen=True)
class IndicatorConfig:
    thresholds: tuple[int, ...] = (1, 5)
    dep_mode: str = "mean"
    window: int | None = None
    focal: FocalFilter = FocalFilter()
    normalized: bool = True
    workers: int = 1
    chunk_size: int = 2048

    def __post_init__(self):
        if not self.thresholds or any(int(t) < 1 for t in self.thresholds):
            raise ValueError(f"thresholds must be >= 1, got {self.thresholds}")
        if len(set(self.thresholds)) != len(self.thresholds):
            raise ValueError(f"duplicate thresholds in {self.thresholds}")
        if self.dep_mode not in DEP_MODES:
            raise ValueError(f"dep_mode must be one of {DEP_MODES}, got {self.dep_mode!r}")
        if self.window is not None and self.window < 0:
            raise ValueError(f"window must be non-negative, got {self.window}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def di_columns(thresholds: Iterable[int], normalized: bool = True) -> list[str]:
    cols = [f"di{t}" for t in thresholds]
    if normalized:
        cols += [f"di{t}n" for t in thresholds]
    return cols


@dataclass
class IndicatorTable:
    """Output of :func:`compute_all`.

    ``frame`` holds one row per focal paper (ascending id) with NaN marking
    undefined values; ``counts`` holds the underlying integer counts.
    """

    frame: pd.DataFrame
    counts: pd.DataFrame
    config: IndicatorConfig
    report: dict = field(default_factory=dict)

    def records(self) -> list[IndicatorRecord]:
        out = []
        th = self.config.thresholds
        for row in self.frame.itertuples(index=False):
            d = row._asdict()
            und = lambda v: None if v != v else float(v)  # noqa: E731
            out.append(IndicatorRecord(
                id=d["id"], year=int(d["year"]), citations=int(d["citations"]),
                log_citations=float(d["log_citations"]),
                di={t: und(d[f"di{t}"]) for t in th},
                di_n={t: und(d[f"di{t}n"]) for t in th} if self.config.normalized else {},
                dep=und(d["dep"]), dep_inverse=und(d["dep_inverse"])))
        return out


def _run_chunks(fn, jobs, workers):
    if workers == 1 or len(jobs) <= 1:
        for job in jobs:
            fn(*job)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(fn, *job) for job in jobs]:
            fut.result()


def _di(counts: np.ndarray, t: int) -> np.ndarray:
    n_i, n_j, n_k = counts[:, 0], counts[:, 1 + t], counts[:, -1]
    den = n_i + n_j + n_k
    out = np.full(len(counts), np.nan)
    ok = den > 0
    out[ok] = (n_i[ok] - n_j[ok]) / den[ok]
    return out


def compute_all(corpus: Corpus, config: IndicatorConfig = IndicatorConfig()) -> IndicatorTable:
    """Compute every indicator for every focal paper selected by ``config``."""
    started = time.perf_counter()
    th = np.array(config.thresholds, dtype=np.int64)
    nt = len(th)
    focals = config.focal.select(corpus).astype(np.int64)
    m = len(focals)
    year = corpus.year
    if config.window is None:
        bounds = np.full(m, NO_BOUND, dtype=np.int64)
    else:
        bounds = year[focals] + config.window
    workers = config.workers
    step = max(1, config.chunk_size)

    own = np.zeros((m, nt + 2), dtype=np.int64)
    links = np.zeros(m, dtype=np.int64)
    n_citers = np.zeros(m, dtype=np.int64)
    jobs = [(focals[a:a + step], bounds[a:a + step], corpus.out_ptr, corpus.out_idx,
             corpus.in_ptr, corpus.in_idx, year, th, own[a:a + step],
             links[a:a + step], n_citers[a:a + step]) for a in range(0, m, step)]
    _run_chunks(_kernels.own_reference_counts, jobs, workers)

    cohort = None
    if config.normalized and m:
        cohorts = np.unique(corpus.cohort_of[focals])
        sizes = corpus.cohort_ptr[cohorts + 1] - corpus.cohort_ptr[cohorts]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        all_counts = np.zeros((int(offsets[-1]), nt + 2), dtype=np.int64)
        cbounds = np.array([NO_BOUND if config.window is None
                            else corpus.cohort_keys[g][1] + config.window
                            for g in cohorts], dtype=np.int64)
        # chunks of cohorts holding roughly `step` member papers each
        jobs, start = [], 0
        while start < len(cohorts):
            stop = int(np.searchsorted(offsets, offsets[start] + step, side="right"))
            stop = max(stop - 1, start + 1)
            jobs.append((cohorts[start:stop], cbounds[start:stop], corpus.cohort_ptr,
                         corpus.cohort_members, corpus.out_ptr, corpus.out_idx,
                         corpus.in_ptr, corpus.in_idx, year, th,
                         int(offsets[start]), all_counts))
            start = stop
        _run_chunks(_kernels.cohort_union_counts, jobs, workers)
        member_rows = np.concatenate([
            corpus.cohort_members[corpus.cohort_ptr[g]:corpus.cohort_ptr[g + 1]]
            for g in cohorts])
        row_of = np.empty(len(corpus), dtype=np.int64)
        row_of[member_rows] = np.arange(len(member_rows))
        cohort = all_counts[row_of[focals]]

    frame = pd.DataFrame({
        "id": corpus.ids[focals],
        "year": year[focals],
        "citations": n_citers,
        "log_citations": np.log1p(n_citers.astype(float)),
    })
    counts = pd.DataFrame({"id": corpus.ids[focals]})
    counts["n_i"] = own[:, 0]
    for t, l in enumerate(config.thresholds):
        frame[f"di{l}"] = _di(own, t)
        counts[f"n_j{l}"] = own[:, 1 + t]
    counts["n_k"] = own[:, -1]
    if cohort is not None:
        for t, l in enumerate(config.thresholds):
            frame[f"di{l}n"] = _di(cohort, t)
        counts["n_i_n"] = cohort[:, 0]
        for t, l in enumerate(config.thresholds):
            counts[f"n_j{l}_n"] = cohort[:, 1 + t]
        counts["n_k_n"] = cohort[:, -1]
    elif config.normalized:
        for l in config.thresholds:
            frame[f"di{l}n"] = np.full(m, np.nan)

    if config.dep_mode == "total":
        dep_values = links.astype(float)
    else:
        dep_values = np.full(m, np.nan)
        cited = n_citers > 0
        dep_values[cited] = links[cited] / n_citers[cited]
    frame["dep"] = dep_values
    frame["dep_inverse"] = (invert_dep(dep_values) if np.isfinite(dep_values).any()
                            else np.full(m, np.nan))
    counts["dep_links"] = links
    counts["n_citers"] = n_citers

    report = {"focal_papers": m, "corpus_papers": len(corpus),
              "corpus_edges": corpus.n_edges, "workers": workers,
              "seconds": round(time.perf_counter() - started, 3)}
    for col in frame.columns[4:]:
        report[f"undefined_{col}"] = int(frame[col].isna().sum())
    return IndicatorTable(frame, counts, config, report)


# table IO -------------------------------------------------------------

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.10g}"


def format_indicator_rows(frame: pd.DataFrame) -> list[str]:
    cols = list(frame.columns)
    lines = [",".join(cols)]
    real_cols = [c for c in cols if c not in ("id", "year", "citations")]
    arrays = {c: frame[c].to_numpy() for c in cols}
    for r in range(len(frame)):
        parts = []
        for c in cols:
            v = arrays[c][r]
            parts.append(_fmt(float(v)) if c in real_cols else str(v))
        lines.append(",".join(parts))
    return lines


def write_indicator_table(frame: pd.DataFrame, path) -> None:
    Path(path).write_text("\n".join(format_indicator_rows(frame)) + "\n", encoding="utf-8")


def read_indicator_table(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"id": str}, keep_default_na=True)
    missing = {"id", "year", "citations", "log_citations"} - set(frame.columns)
    if missing:
        raise DindexError(f"{path}: not an indicator table (missing {sorted(missing)})")
    return frame
