"""Seeded synthetic citation corpora and a brute-force indicator oracle.

The oracle deliberately shares nothing with :mod:`dindex.indicators` except
the corpus' edge list and metadata: every count is a literal scan over all
papers, written to be checked line by line against the definitions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DindexError
from .graph import CITATION_COLUMNS, PAPER_COLUMNS, Corpus

RNG_NAME = "numpy.random.PCG64"
ORACLE_LIMIT = 10_000


@dataclass(frozen=True)
class GeneratorParams:
    n_papers: int = 1000
    years: tuple[int, int] = (1980, 2002)
    journals: int = 3
    mean_out_degree: float = 10.0
    attachment: str = "preferential"
    planted_disruptive: int = 0
    # shift of the log attachment weight of planted papers; exp(effect)
    # times as likely to be cited as an otherwise equal paper
    planted_effect: float = 2.0
    planted_refs: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.n_papers < 1:
            raise DindexError("n_papers must be >= 1")
        if self.years[0] > self.years[1]:
            raise DindexError(f"empty year range {self.years}")
        if self.journals < 1:
            raise DindexError("journals must be >= 1")
        if self.mean_out_degree < 0:
            raise DindexError("mean_out_degree must be >= 0")
        if self.attachment not in ("uniform", "preferential"):
            raise DindexError(f"attachment must be uniform or preferential, "
                              f"got {self.attachment!r}")
        if not 0 <= self.planted_disruptive <= self.n_papers:
            raise DindexError("planted_disruptive must be between 0 and n_papers")


# named parameter sets
PRESETS = {
    # the desk-scale corpus used by the end-to-end checks
    "bundled": GeneratorParams(n_papers=1000, journals=3, mean_out_degree=10.0,
                               planted_disruptive=20, planted_effect=2.0, seed=2020),
    "large": GeneratorParams(n_papers=100_000, journals=10, mean_out_degree=21.0,
                             attachment="preferential", seed=7),
}


@dataclass
class SyntheticCorpus:
    papers: pd.DataFrame
    citations: pd.DataFrame
    planted: list[str]
    params: GeneratorParams
    manifest: dict = field(default_factory=dict)

    def corpus(self) -> Corpus:
        return Corpus.from_frames(self.papers.astype(str), self.citations)


def _metadata(rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    n_authors = rng.geometric(0.3, size=n) + rng.integers(0, 3, size=n)
    n_pages = rng.choice([3, 4, 5, 6], size=n, p=[0.15, 0.6, 0.2, 0.05])
    n_countries = np.minimum(rng.choice([1, 2, 3, 4], size=n, p=[0.7, 0.2, 0.08, 0.02]),
                             n_authors)
    return {
        "doc_type": np.where(rng.random(n) < 0.02, "review", "article"),
        "n_authors": n_authors,
        "n_pages": n_pages,
        "n_countries": n_countries,
        "usa": (rng.random(n) < 0.45).astype(int),
        "china": (rng.random(n) < 0.05).astype(int),
        "eu28": (rng.random(n) < 0.4).astype(int),
    }


def generate(params: GeneratorParams) -> SyntheticCorpus:
    """Build a synthetic corpus in memory.

    Papers get ids ``P000..`` in publication order; every citation points to a
    strictly earlier year. Planted papers cite only a few private papers that
    nobody else cites, so their citers share none of their references and no
    other paper reaches their reference set: DI_l = 1 whenever they are cited.
    """
    params.validate()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    n = params.n_papers
    y0, y1 = params.years
    year = np.sort(rng.integers(y0, y1 + 1, size=n))
    width = len(str(max(n - 1, 1)))
    ids = np.array([f"P{i:0{width}d}" for i in range(n)], dtype=object)
    journal = np.array([f"J{j + 1:02d}" for j in rng.integers(0, params.journals, size=n)],
                       dtype=object)
    meta = _metadata(rng, n)
    first_of_year = np.searchsorted(year, year, side="left")

    # even the newest papers could not cite that many distinct earlier papers
    if params.mean_out_degree > 0 and n > 1 and params.mean_out_degree > first_of_year[-1]:
        raise DindexError(
            f"infeasible degree demand: mean_out_degree {params.mean_out_degree} "
            f"exceeds the {first_of_year[-1]} papers published before {year[-1]}")

    # planted papers sit strictly inside the year range so they can both
    # cite and be cited
    planted = np.empty(0, dtype=np.int64)
    private = np.zeros(n, dtype=bool)
    planted_refs: dict[int, np.ndarray] = {}
    if params.planted_disruptive:
        inner = np.flatnonzero((year > y0) & (year < y1)) if y1 - y0 >= 2 else np.arange(n)
        if len(inner) < params.planted_disruptive:
            raise DindexError("not enough papers inside the year range to plant "
                              f"{params.planted_disruptive} disruptive papers")
        planted = np.sort(rng.choice(inner, size=params.planted_disruptive, replace=False))
        is_planted = np.zeros(n, dtype=bool)
        is_planted[planted] = True
        for p in planted:
            pool = np.flatnonzero(~is_planted[:first_of_year[p]] & ~private[:first_of_year[p]])
            k = min(params.planted_refs, len(pool))
            chosen = np.sort(rng.choice(pool, size=k, replace=False)) if k else pool[:0]
            private[chosen] = True
            planted_refs[int(p)] = chosen

    weight = np.ones(n)
    weight[private] = 0.0
    boost = np.ones(n)
    boost[planted] = math.exp(params.planted_effect)
    indeg = np.zeros(n, dtype=np.int64)
    src_parts, dst_parts = [], []
    for y in np.unique(year):
        lo = int(np.searchsorted(year, y, side="left"))
        hi = int(np.searchsorted(year, y, side="right"))
        if lo == 0 or params.mean_out_degree == 0:
            continue
        citing = np.arange(lo, hi)
        citing = citing[~np.isin(citing, planted)]
        deg = np.minimum(rng.poisson(params.mean_out_degree, size=len(citing)), lo)
        total = int(deg.sum())
        if total == 0:
            continue
        w = weight[:lo] * boost[:lo]
        if params.attachment == "preferential":
            w = w * (indeg[:lo] + 1)
        if w.sum() == 0:
            continue
        targets = rng.choice(lo, size=total, p=w / w.sum())
        src = np.repeat(citing, deg)
        key = np.unique(src * n + targets)
        src, dst = key // n, key % n
        src_parts.append(src)
        dst_parts.append(dst)
        indeg += np.bincount(dst, minlength=n)
    for p, refs in planted_refs.items():
        src_parts.append(np.full(len(refs), p, dtype=np.int64))
        dst_parts.append(refs.astype(np.int64))

    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
    else:
        src = dst = np.empty(0, dtype=np.int64)

    milestone = np.zeros(n, dtype=int)
    milestone[planted] = 1
    papers = pd.DataFrame({
        "id": ids, "year": year, "journal": journal, "doc_type": meta["doc_type"],
        "milestone": milestone, "n_authors": meta["n_authors"],
        "n_pages": meta["n_pages"], "n_countries": meta["n_countries"],
        "usa": meta["usa"], "china": meta["china"], "eu28": meta["eu28"],
    })[list(PAPER_COLUMNS)]
    citations = pd.DataFrame({"citing": ids[src], "cited": ids[dst]},
                             columns=list(CITATION_COLUMNS))
    planted_ids = [str(ids[p]) for p in planted]
    manifest = {
        "generator": "dindex.synth",
        "rng": RNG_NAME,
        "numpy_version": np.__version__,
        **{k: v for k, v in asdict(params).items()},
        "n_edges": len(citations),
        "planted_ids": ",".join(planted_ids),
    }
    manifest["years"] = f"{y0}-{y1}"
    return SyntheticCorpus(papers, citations, planted_ids, params, manifest)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_corpus(params: GeneratorParams, outdir, papers_name: str = "papers.csv",
                    citations_name: str = "citations.csv") -> dict:
    """Write papers/citations files plus ``manifest.txt`` into ``outdir``."""
    synth = generate(params)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pp, cp = outdir / papers_name, outdir / citations_name
    synth.papers.to_csv(pp, index=False, lineterminator="\n")
    synth.citations.to_csv(cp, index=False, lineterminator="\n")
    manifest = dict(synth.manifest)
    manifest["n_papers"] = len(synth.papers)
    manifest["papers_file"] = papers_name
    manifest["citations_file"] = citations_name
    manifest["papers_sha256"] = _sha256(pp)
    manifest["citations_sha256"] = _sha256(cp)
    write_manifest(manifest, outdir / "manifest.txt")
    return manifest


def write_manifest(manifest: dict, path) -> None:
    lines = [f"{k} = {v}" for k, v in manifest.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# brute-force oracle ---------------------------------------------------

def _oracle_tables(corpus: Corpus):
    if len(corpus) > ORACLE_LIMIT:
        raise DindexError(f"brute-force oracle is limited to {ORACLE_LIMIT} papers, "
                          f"corpus has {len(corpus)}")
    papers = list(corpus.ids)
    edges = corpus.edges()
    refs = {p: set() for p in papers}
    for a, b in edges:
        refs[a].add(b)
    info = {}
    for p in papers:
        row = corpus.paper(p)
        info[p] = None if row is None else (row["journal"], int(row["year"]))
    return papers, edges, refs, info


def _in_window(info, p, focal, window):
    if window is None:
        return True
    if info[p] is None:
        return False
    return info[p][1] - info[focal][1] <= window


def _brute_counts(papers, edges, refs, info, focal, l, mode, window):
    if mode == "own-references":
        R = set(refs[focal])
    else:
        if info[focal] is None:
            return None
        R = set()
        for p in papers:
            if info[p] is not None and info[p] == info[focal]:
                R |= refs[p]
        R.discard(focal)
    citers = [a for a, b in edges if b == focal and _in_window(info, a, focal, window)]
    n_i = sum(1 for c in citers if len(refs[c] & R) == 0)
    n_j = sum(1 for c in citers if len(refs[c] & R) >= l)
    n_k = 0
    for p in papers:
        if p == focal or p in citers or not _in_window(info, p, focal, window):
            continue
        if len(refs[p] & R) >= 1:
            n_k += 1
    return n_i, n_j, n_k


def _ratio(counts):
    if counts is None:
        return None
    n_i, n_j, n_k = counts
    den = n_i + n_j + n_k
    return None if den == 0 else (n_i - n_j) / den


def brute_force_counts(corpus: Corpus, focal: str, l: int = 1,
                       mode: str = "own-references", window: int | None = None):
    """(n_i, n_j, n_k) by literal enumeration, ``None`` if undefined."""
    papers, edges, refs, info = _oracle_tables(corpus)
    if focal not in refs:
        raise DindexError(f"unknown paper id {focal!r}")
    return _brute_counts(papers, edges, refs, info, focal, l, mode, window)


def brute_force_indicators(corpus: Corpus, focal: str, thresholds=(1, 5),
                           dep_mode: str = "mean", window: int | None = None,
                           _tables=None) -> dict:
    """Every indicator of one paper by enumeration.

    Returns a plain dict with the same fields as an indicator table row plus
    the raw counts (``counts[(l, mode)] = (n_i, n_j, n_k)``) and ``dep_links``.
    ``dep_inverse`` needs the corpus-wide maximum; see :func:`brute_force_table`.
    """
    papers, edges, refs, info = _tables or _oracle_tables(corpus)
    if focal not in refs:
        raise DindexError(f"unknown paper id {focal!r}")
    citers = [a for a, b in edges if b == focal and _in_window(info, a, focal, window)]
    links = 0
    for c in citers:
        for r in refs[focal]:
            if r in refs[c]:
                links += 1
    if dep_mode == "total":
        dep_value = float(links)
    else:
        dep_value = links / len(citers) if citers else None
    rec = {"id": focal, "year": None if info[focal] is None else info[focal][1],
           "citations": len(citers), "log_citations": math.log(len(citers) + 1),
           "counts": {}, "dep": dep_value, "dep_links": links}
    for l in thresholds:
        for mode, suffix in (("own-references", ""), ("cohort-union", "n")):
            c = _brute_counts(papers, edges, refs, info, focal, l, mode, window)
            rec["counts"][(l, mode)] = c
            rec[f"di{l}{suffix}"] = _ratio(c)
    return rec


def brute_force_table(corpus: Corpus, focal_ids=None, thresholds=(1, 5),
                      dep_mode: str = "mean", window: int | None = None) -> list[dict]:
    """Oracle records for ``focal_ids`` (default: all non-stub papers)."""
    tables = _oracle_tables(corpus)
    papers, _, _, info = tables
    if focal_ids is None:
        focal_ids = [p for p in papers if info[p] is not None]
    recs = [brute_force_indicators(corpus, f, thresholds, dep_mode, window, tables)
            for f in focal_ids]
    defined = [r["dep"] for r in recs if r["dep"] is not None]
    top = max(defined) if defined else None
    for r in recs:
        r["dep_inverse"] = None if r["dep"] is None else top + 1 - r["dep"]
    return recs
