import random

import pytest

from dindex.graph import Corpus, LoadOptions

G1_EDGES = [("F", "R1"), ("F", "R2"), ("A", "F"), ("B", "F"), ("B", "R1"),
            ("C", "R1"), ("D", "F"), ("D", "R1"), ("D", "R2")]


def g1_corpus():
    years = {"R1": 2000, "R2": 2000, "F": 2001, "A": 2002, "B": 2002, "C": 2002, "D": 2003}
    papers = [dict(id=p, year=y, journal="J") for p, y in years.items()]
    return Corpus.from_records(papers, G1_EDGES)


@pytest.fixture
def g1():
    return g1_corpus()


def random_graph(rng: random.Random, max_papers=50, stubs=True, journals="AB"):
    """Random labelled graph; edges may point to stubs, repeat or self-loop."""
    n = rng.randint(1, max_papers)
    ids = [f"p{i:02d}" for i in range(n)]
    papers = [dict(id=p, year=rng.randint(2000, 2004), journal=rng.choice(journals))
              for p in ids]
    extra = [f"s{i}" for i in range(rng.randint(0, 3))] if stubs else []
    pool = ids + extra
    edges = [(rng.choice(pool), rng.choice(pool)) for _ in range(rng.randint(0, 4 * n))]
    return Corpus.from_records(papers, edges, LoadOptions(strict=False))


def write_corpus(tmp_path, papers_rows, citation_rows, header=None):
    from dindex.graph import PAPER_COLUMNS
    header = header or ",".join(PAPER_COLUMNS)
    p = tmp_path / "papers.csv"
    c = tmp_path / "citations.csv"
    p.write_text(header + "\n" + "".join(r + "\n" for r in papers_rows))
    c.write_text("citing,cited\n" + "".join(r + "\n" for r in citation_rows))
    return p, c
