"""Citation corpus: loading, validation and adjacency queries.

Papers are stored in ascending id order and referred to internally by their
position in that order. Both adjacency directions are kept as CSR arrays, so
every neighbour list is sorted ascending by id.
"""

from __future__ import annotations

import bisect
import csv
import gzip
import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import CorpusError, UnknownPaperError

log = logging.getLogger(__name__)

PAPER_COLUMNS = (
    "id", "year", "journal", "doc_type", "milestone", "n_authors",
    "n_pages", "n_countries", "usa", "china", "eu28",
)
CITATION_COLUMNS = ("citing", "cited")
BOOL_COLUMNS = ("milestone", "usa", "china", "eu28")
COUNT_COLUMNS = ("n_authors", "n_pages", "n_countries")

# year assigned to metadata-less stub papers; larger than any real bound
STUB_YEAR = 2**62
NO_BOUND = 2**63 - 1


@dataclass(frozen=True)
class LoadOptions:
    delimiter: str = ","
    strict: bool = True
    doc_types: tuple[str, ...] | None = None
    year_range: tuple[int, int] = (1800, 2100)


@dataclass
class LoadReport:
    papers_read: int = 0
    papers_kept: int = 0
    papers_filtered: int = 0
    edges_read: int = 0
    edges_kept: int = 0
    duplicate_edges: int = 0
    self_loops: int = 0
    unknown_edges: int = 0
    filtered_edges: int = 0
    stubs: int = 0
    warnings: list[str] = field(default_factory=list)

    def warn(self, msg: str) -> None:
        log.warning(msg)
        self.warnings.append(msg)

    def lines(self) -> list[str]:
        keys = ("papers_read", "papers_kept", "papers_filtered", "edges_read",
                "edges_kept", "duplicate_edges", "self_loops", "unknown_edges",
                "filtered_edges", "stubs")
        return [f"{k} = {getattr(self, k)}" for k in keys]


def _csr(src: np.ndarray, dst: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # src/dst must already be ordered by (src, dst)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
    return ptr, dst.astype(np.int32)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Corpus:
    """Immutable paper table plus bidirectional citation adjacency.

    Build with :func:`load_corpus` or :meth:`Corpus.from_frames`.
    """

    def __init__(self, ids, meta, src, dst, report):
        n = len(ids)
        self.ids: np.ndarray = _frozen(np.asarray(ids, dtype=object))
        self.index: dict[str, int] = {pid: i for i, pid in enumerate(ids)}
        self.meta: pd.DataFrame = meta
        self.report: LoadReport = report
        self.is_stub = _frozen(meta["journal"].isna().to_numpy())
        year = np.full(n, STUB_YEAR, dtype=np.int64)
        year[~self.is_stub] = meta.loc[~self.is_stub, "year"].to_numpy(dtype=np.int64)
        self.year = _frozen(year)

        order = np.lexsort((dst, src))
        ptr, idx = _csr(src[order], dst[order], n)
        self.out_ptr, self.out_idx = _frozen(ptr), _frozen(idx)
        order = np.lexsort((src, dst))
        ptr, idx = _csr(dst[order], src[order], n)
        self.in_ptr, self.in_idx = _frozen(ptr), _frozen(idx)

        # cohort ids follow sorted (journal, year) order; stubs get -1
        cohort_of = np.full(n, -1, dtype=np.int64)
        real = np.flatnonzero(~self.is_stub)
        keys = list(zip(meta["journal"].to_numpy()[real], year[real].tolist()))
        self.cohort_keys: list[tuple[str, int]] = sorted(set(keys))
        lookup = {k: g for g, k in enumerate(self.cohort_keys)}
        cohort_of[real] = [lookup[k] for k in keys]
        self.cohort_of = _frozen(cohort_of)
        members = np.argsort(cohort_of, kind="stable")
        members = members[cohort_of[members] >= 0]
        cptr = np.zeros(len(self.cohort_keys) + 1, dtype=np.int64)
        np.cumsum(np.bincount(cohort_of[real], minlength=len(self.cohort_keys)),
                  out=cptr[1:])
        self.cohort_ptr = _frozen(cptr)
        self.cohort_members = _frozen(members.astype(np.int32))
        self._cohort_union: dict[int, np.ndarray] = {}

    # construction -----------------------------------------------------

    @classmethod
    def from_frames(cls, papers: pd.DataFrame, citations: pd.DataFrame,
                    options: LoadOptions = LoadOptions(),
                    report: LoadReport | None = None) -> "Corpus":
        """Validate raw string tables (as read from disk) and index them."""
        report = report or LoadReport()
        meta, filtered = _validate_papers(papers, options, report)
        citing = citations["citing"].astype(str).str.strip().to_numpy(dtype=object)
        cited = citations["cited"].astype(str).str.strip().to_numpy(dtype=object)
        report.edges_read = len(citing)
        return _assemble(meta, filtered, citing, cited, options, report)

    @classmethod
    def from_records(cls, papers: Iterable[dict], edges: Iterable[tuple[str, str]],
                     options: LoadOptions = LoadOptions()) -> "Corpus":
        """Convenience constructor from python objects (tests, generators)."""
        frame = pd.DataFrame(list(papers))
        for col in PAPER_COLUMNS:
            if col not in frame:
                frame[col] = "0" if col in BOOL_COLUMNS + COUNT_COLUMNS else ""
        frame = frame[list(PAPER_COLUMNS)].astype(str)
        frame.loc[frame["doc_type"] == "", "doc_type"] = "article"
        edges = list(edges)
        cit = pd.DataFrame(edges if edges else np.empty((0, 2), dtype=object),
                           columns=list(CITATION_COLUMNS), dtype=object)
        return cls.from_frames(frame, cit, options)

    # basic accessors --------------------------------------------------

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return int(self.out_ptr[-1])

    def __contains__(self, paper_id) -> bool:
        return paper_id in self.index

    def position(self, paper_id: str) -> int:
        try:
            return self.index[paper_id]
        except KeyError:
            raise UnknownPaperError(paper_id) from None

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[i]:self.out_ptr[i + 1]]

    def in_neighbors(self, i: int) -> np.ndarray:
        return self.in_idx[self.in_ptr[i]:self.in_ptr[i + 1]]

    def edges(self) -> list[tuple[str, str]]:
        """All edges as (citing id, cited id), sorted."""
        src = np.repeat(np.arange(len(self)), np.diff(self.out_ptr))
        ids = self.ids
        return [(ids[a], ids[b]) for a, b in zip(src.tolist(), self.out_idx.tolist())]

    def paper(self, paper_id: str) -> dict | None:
        """Metadata row as a dict, ``None`` for stub papers."""
        i = self.position(paper_id)
        if self.is_stub[i]:
            return None
        return self.meta.iloc[i].to_dict()

    def cohort_members_of(self, journal: str, year: int) -> np.ndarray:
        g = self._cohort_id(journal, year)
        return self.cohort_members[self.cohort_ptr[g]:self.cohort_ptr[g + 1]]

    def _cohort_id(self, journal: str, year: int) -> int:
        key = (journal.strip(), int(year))
        lo = bisect.bisect_left(self.cohort_keys, key)
        if lo == len(self.cohort_keys) or self.cohort_keys[lo] != key:
            raise CorpusError(f"empty cohort: journal {journal!r}, year {year}")
        return lo

    def cohort_union_positions(self, cohort: int) -> np.ndarray:
        cached = self._cohort_union.get(cohort)
        if cached is None:
            members = self.cohort_members[self.cohort_ptr[cohort]:self.cohort_ptr[cohort + 1]]
            parts = [self.out_neighbors(m) for m in members]
            cached = _frozen(np.unique(np.concatenate(parts)) if parts
                             else np.empty(0, dtype=np.int32))
            self._cohort_union[cohort] = cached
        return cached

    def to_bytes(self) -> bytes:
        """Canonical serialization; equal corpora give equal bytes."""
        buf = io.BytesIO()
        buf.write("\n".join(self.ids.tolist()).encode())
        buf.write(self.meta.to_csv(index=False, lineterminator="\n").encode())
        for a in (self.year, self.out_ptr, self.out_idx, self.in_ptr, self.in_idx,
                  self.cohort_of):
            buf.write(np.ascontiguousarray(a).tobytes())
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _validate_papers(frame: pd.DataFrame, options: LoadOptions,
                     report: LoadReport) -> tuple[pd.DataFrame, set[str]]:
    frame = frame.copy()
    for col in frame.columns:
        frame[col] = frame[col].astype(str).str.strip()
    report.papers_read = len(frame)
    if (frame["id"] == "").any():
        row = int(np.flatnonzero(frame["id"].to_numpy() == "")[0]) + 2
        raise CorpusError(f"papers file: empty id on line {row}")
    dup = frame["id"].duplicated()
    if dup.any():
        raise CorpusError(f"papers file: duplicate paper id {frame['id'][dup].iloc[0]!r}")

    years = pd.to_numeric(frame["year"], errors="coerce")
    bad = years.isna() | (years != years.round())
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise CorpusError(f"papers file: unparseable year {frame['year'].iloc[i]!r} "
                          f"for paper {frame['id'].iloc[i]!r}")
    lo, hi = options.year_range
    out = (years < lo) | (years > hi)
    if out.any():
        i = int(np.flatnonzero(out.to_numpy())[0])
        raise CorpusError(f"papers file: year {int(years.iloc[i])} of paper "
                          f"{frame['id'].iloc[i]!r} outside [{lo}, {hi}]")
    frame["year"] = years.astype(np.int64)

    for col in BOOL_COLUMNS:
        ok = frame[col].isin(["0", "1"])
        if not ok.all():
            i = int(np.flatnonzero(~ok.to_numpy())[0])
            raise CorpusError(f"papers file: column {col!r} must be 0 or 1, got "
                              f"{frame[col].iloc[i]!r} for paper {frame['id'].iloc[i]!r}")
        frame[col] = (frame[col] == "1")
    for col in COUNT_COLUMNS:
        ok = frame[col].str.fullmatch(r"\d+")
        if not ok.all():
            i = int(np.flatnonzero(~ok.to_numpy())[0])
            raise CorpusError(f"papers file: column {col!r} must be a non-negative "
                              f"integer, got {frame[col].iloc[i]!r} for paper "
                              f"{frame['id'].iloc[i]!r}")
        frame[col] = frame[col].astype(np.int64)

    filtered: set[str] = set()
    if options.doc_types is not None:
        keep = frame["doc_type"].isin(options.doc_types)
        report.papers_filtered = int((~keep).sum())
        filtered = set(frame.loc[~keep, "id"])
        frame = frame[keep]
    report.papers_kept = len(frame)
    return frame.reset_index(drop=True), filtered


def _assemble(meta: pd.DataFrame, filtered: set[str], citing: np.ndarray,
              cited: np.ndarray, options: LoadOptions, report: LoadReport) -> Corpus:
    if filtered:
        # edges touching papers removed by the doc_type filter go with them
        drop = pd.Series(citing).isin(filtered).to_numpy() | \
            pd.Series(cited).isin(filtered).to_numpy()
        report.filtered_edges = int(drop.sum())
        citing, cited = citing[~drop], cited[~drop]
    known = pd.Index(meta["id"].to_numpy(dtype=object))
    a = known.get_indexer(citing)
    b = known.get_indexer(cited)
    missing = (a < 0) | (b < 0)

    stubs: list[str] = []
    if missing.any():
        report.unknown_edges = int(missing.sum())
        unknown = np.concatenate([citing[a < 0], cited[b < 0]])
        if options.strict:
            raise CorpusError(f"citations file: edge endpoint {unknown[0]!r} has no "
                              f"row in the papers file ({report.unknown_edges} such edges)")
        stubs = sorted(set(unknown.tolist()))
        report.stubs = len(stubs)
        report.warn(f"{report.unknown_edges} edges reference {len(stubs)} unknown "
                    "papers; created metadata-less stubs")

    stub_frame = pd.DataFrame({"id": stubs})
    full = pd.concat([meta, stub_frame], ignore_index=True) if stubs else meta
    order = np.argsort(full["id"].to_numpy(dtype=str), kind="stable")
    full = full.iloc[order].reset_index(drop=True)
    if stubs:
        full["year"] = full["year"].astype("Int64")
    ids = full["id"].to_numpy(dtype=object)
    index = pd.Index(ids)
    src = index.get_indexer(citing).astype(np.int64)
    dst = index.get_indexer(cited).astype(np.int64)

    loops = src == dst
    if loops.any():
        report.self_loops = int(loops.sum())
        report.warn(f"dropped {report.self_loops} self-citation edges")
        src, dst = src[~loops], dst[~loops]
    n = len(ids)
    key = np.unique(src * n + dst)
    dups = len(src) - len(key)
    if dups:
        report.duplicate_edges = dups
        report.warn(f"dropped {dups} duplicate edges")
    src, dst = key // n, key % n
    report.edges_kept = len(key)
    return Corpus(ids, full, src, dst, report)


# file IO --------------------------------------------------------------

def _open_text(path: Path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def read_table(path, expected: Sequence[str], delimiter: str = ",") -> pd.DataFrame:
    """Read a delimited file of strings after checking its header exactly."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    with _open_text(path) as fh:
        header = next(csv.reader(fh, delimiter=delimiter), None)
    if header is None:
        raise CorpusError(f"{path}: empty file, expected header {','.join(expected)}")
    header = [h.strip() for h in header]
    seen = set()
    for h in header:
        if h in seen:
            raise CorpusError(f"{path}: duplicate header column {h!r}")
        seen.add(h)
    missing = [c for c in expected if c not in seen]
    if missing:
        raise CorpusError(f"{path}: missing header column(s) {', '.join(missing)}")
    extra = [h for h in header if h not in expected]
    if extra:
        raise CorpusError(f"{path}: unexpected header column(s) {', '.join(extra)}")
    frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                        na_filter=False, compression="infer", encoding="utf-8")
    return frame[list(expected)]


def read_papers(path, delimiter: str = ",",
                options: LoadOptions = LoadOptions()) -> pd.DataFrame:
    """Validated paper metadata alone, flags as 0/1 integers."""
    frame = read_table(path, PAPER_COLUMNS, delimiter)
    meta, _ = _validate_papers(frame, options, LoadReport())
    for col in BOOL_COLUMNS:
        meta[col] = meta[col].astype(int)
    return meta


def load_corpus(papers_path, citations_path, options: LoadOptions = LoadOptions()) -> Corpus:
    """Load and validate a corpus from a papers file and a citations file."""
    report = LoadReport()
    papers = read_table(papers_path, PAPER_COLUMNS, options.delimiter)
    citations = read_table(citations_path, CITATION_COLUMNS, options.delimiter)
    return Corpus.from_frames(papers, citations, options, report)


# queries --------------------------------------------------------------

def _bound(corpus: Corpus, i: int, window: int | None) -> int:
    if window is None:
        return NO_BOUND
    if window < 0:
        raise ValueError(f"citation window must be non-negative, got {window}")
    if corpus.is_stub[i]:
        raise CorpusError(f"paper {corpus.ids[i]!r} has no year; a citation window "
                          "cannot be applied")
    return int(corpus.year[i]) + int(window)


def cited_references(corpus: Corpus, focal: str) -> tuple[str, ...]:
    i = corpus.position(focal)
    return tuple(corpus.ids[corpus.out_neighbors(i)])


def citing_positions(corpus: Corpus, i: int, window: int | None = None) -> np.ndarray:
    citers = corpus.in_neighbors(i)
    if window is None:
        return citers
    return citers[corpus.year[citers] <= _bound(corpus, i, window)]


def citing_papers(corpus: Corpus, focal: str, window: int | None = None) -> tuple[str, ...]:
    """Papers citing ``focal``; with a window, only those published at most
    ``window`` years after it (papers without a year are then excluded)."""
    i = corpus.position(focal)
    return tuple(corpus.ids[citing_positions(corpus, i, window)])


def cohort_reference_union(corpus: Corpus, journal: str, year: int) -> tuple[str, ...]:
    g = corpus._cohort_id(journal, year)
    return tuple(corpus.ids[corpus.cohort_union_positions(g)])


def citation_count(corpus: Corpus, focal: str, window: int | None = None) -> int:
    i = corpus.position(focal)
    return int(len(citing_positions(corpus, i, window)))
