"""Coarsened exact matching (CEM) with 1:1 pairing and ATE estimation.

Covariates are coarsened (quintiles by default), rows are grouped into strata
by their full coarsened signature, and inside each stratum every treated unit
is paired with a distinct control drawn at random under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import MatchingError
from .summaries import nearest_rank

QUINTILE = "quintile"
IDENTITY = "identity"

# covariates matched on in the milestone analysis; citations are added for
# indicator outcomes (they are the outcome in the citation model)
PAPER_COVARIATES: dict[str, str] = {
    "n_authors": QUINTILE,
    "n_pages": QUINTILE,
    "year": QUINTILE,
    "n_countries": QUINTILE,
    "usa": IDENTITY,
    "china": IDENTITY,
    "eu28": IDENTITY,
}


def paper_preset(with_citations: bool = True) -> dict[str, str]:
    spec = dict(PAPER_COVARIATES)
    if with_citations:
        spec["citations"] = QUINTILE
    return spec


def _check_spec(spec: Mapping[str, str | Sequence[float]]) -> None:
    if not spec:
        raise MatchingError("coarsening spec has no covariates")
    for col, rule in spec.items():
        if isinstance(rule, str):
            if rule not in (QUINTILE, IDENTITY):
                raise MatchingError(f"covariate {col!r}: unknown coarsening {rule!r}")
            continue
        cuts = np.asarray(rule, dtype=float)
        if len(cuts) and np.any(np.diff(cuts) <= 0):
            raise MatchingError(f"covariate {col!r}: cutpoints must be strictly increasing")


def quintile_cutpoints(values) -> np.ndarray:
    """Distinct nearest-rank 20/40/60/80th percentiles."""
    v = np.sort(np.asarray(values, dtype=float))
    return np.unique([nearest_rank(v, p) for p in (20, 40, 60, 80)])


def bin_values(values, cutpoints) -> np.ndarray:
    """Bin index = number of cutpoints strictly below the value, so a value
    equal to a cutpoint falls in the lower bin."""
    return np.searchsorted(np.asarray(cutpoints, dtype=float),
                           np.asarray(values, dtype=float), side="left")


@dataclass
class Coarsened:
    signatures: pd.Series          # indexed like the complete rows of the input
    cutpoints: dict[str, np.ndarray]
    excluded: int                  # rows dropped for missing covariates


def coarsen(data: pd.DataFrame, spec: Mapping[str, str | Sequence[float]]) -> Coarsened:
    """Coarsened signature (a tuple, one entry per covariate) for each row.

    Rows with a missing covariate are left out and counted. Quintile
    cutpoints are computed over all remaining rows.
    """
    _check_spec(spec)
    if len(data) == 0:
        raise MatchingError("cannot coarsen an empty table")
    cols = list(spec)
    absent = [c for c in cols if c not in data.columns]
    if absent:
        raise MatchingError(f"covariate column(s) not found: {', '.join(absent)}")
    complete = data[cols].notna().all(axis=1)
    rows = data[complete]
    if len(rows) == 0:
        raise MatchingError("no rows with complete covariates")
    parts, cuts = [], {}
    for col, rule in spec.items():
        if rule == IDENTITY:
            parts.append(rows[col].tolist())
            continue
        values = pd.to_numeric(rows[col], errors="coerce").to_numpy(float)
        cp = quintile_cutpoints(values) if rule == QUINTILE else np.asarray(rule, float)
        cuts[col] = cp
        parts.append(bin_values(values, cp).tolist())
    sigs = pd.Series(list(zip(*parts)), index=rows.index, dtype=object)
    return Coarsened(sigs, cuts, int((~complete).sum()))


def signature_label(sig: tuple) -> str:
    return "|".join(str(int(v)) if isinstance(v, (bool, np.bool_)) else str(v) for v in sig)


@dataclass
class MatchedSample:
    pairs: list[tuple[str, str]]
    unmatched_treated: list[str]
    strata: pd.DataFrame
    signature: dict[str, str]
    data: pd.DataFrame = field(repr=False)
    id_column: str = "id"
    excluded: int = 0

    @property
    def matched(self) -> int:
        return len(self.pairs)

    def pairs_frame(self) -> pd.DataFrame:
        return pd.DataFrame([(t, c, self.signature[t]) for t, c in self.pairs],
                            columns=["treated_id", "control_id", "stratum_signature"])


def cem_match(data: pd.DataFrame, treatment: str, spec: Mapping[str, str | Sequence[float]],
              seed: int = 0, id_column: str = "id") -> MatchedSample:
    """Pair each treated row with one control from its stratum, without replacement.

    Strata are visited in sorted signature order and treated units in id
    order; controls are drawn by a seeded permutation of the stratum's
    controls (sorted by id first), so the result depends only on the data,
    the coarsening rules and the seed.
    """
    for col in (treatment, id_column):
        if col not in data.columns:
            raise MatchingError(f"column {col!r} not found")
    co = coarsen(data, spec)
    rows = data.loc[co.signatures.index]
    treat = pd.to_numeric(rows[treatment], errors="coerce")
    if treat.isna().any() or not treat.isin([0, 1]).all():
        raise MatchingError(f"treatment column {treatment!r} must be 0/1")
    ids = rows[id_column].astype(str).to_numpy()
    labels = np.array([signature_label(s) for s in co.signatures], dtype=object)
    is_t = treat.to_numpy().astype(bool)
    if not is_t.any():
        raise MatchingError("no treated units")
    if is_t.all():
        raise MatchingError("no control units")

    frame = pd.DataFrame({"id": ids, "sig": labels, "t": is_t})
    key = {lab: sig for lab, sig in zip(labels, co.signatures)}
    rng = np.random.default_rng(seed)
    pairs, unmatched, strata = [], [], []
    for lab in sorted(frame.loc[frame.t, "sig"].unique(), key=lambda s: key[s]):
        grp = frame[frame.sig == lab]
        treated = sorted(grp.loc[grp.t, "id"])
        controls = sorted(grp.loc[~grp.t, "id"])
        order = rng.permutation(len(controls)) if controls else []
        k = min(len(treated), len(controls))
        pairs += [(treated[i], controls[order[i]]) for i in range(k)]
        unmatched += treated[k:]
        strata.append({"stratum_signature": lab, "treated": len(treated),
                       "controls": len(controls), "pairs": k})
    if not pairs:
        raise MatchingError("no stratum contains both treated and control units")
    return MatchedSample(pairs, unmatched, pd.DataFrame(strata),
                         dict(zip(ids, labels)), data, id_column, co.excluded)


@dataclass
class AteResult:
    outcome: str
    ate: float
    se: float
    ci95: tuple[float, float]
    n: int
    pairs: int
    dropped_pairs: int
    matched: int        # treated units in surviving pairs
    unmatched: int      # treated units without a usable pair

    @property
    def p_value(self) -> float:
        if np.isnan(self.se):
            return float("nan")
        if self.se == 0:
            return 0.0 if self.ate != 0 else 1.0
        return float(2 * stats.norm.sf(abs(self.ate / self.se)))


def ate(matched: MatchedSample, outcome: str) -> AteResult:
    """Difference in mean outcome, treated minus control, over matched pairs.

    Pairs with an undefined outcome on either side are dropped. The standard
    error is the two-sample unequal-variance formula over the matched groups.
    """
    data = matched.data
    if outcome not in data.columns:
        raise MatchingError(f"outcome column {outcome!r} not found")
    values = pd.Series(pd.to_numeric(data[outcome], errors="coerce").to_numpy(float),
                       index=data[matched.id_column].astype(str))
    t = np.array([values[a] for a, _ in matched.pairs])
    c = np.array([values[b] for _, b in matched.pairs])
    ok = ~(np.isnan(t) | np.isnan(c))
    t, c = t[ok], c[ok]
    k = len(t)
    if k == 0:
        raise MatchingError(f"no matched pairs with a defined {outcome!r}")
    est = float(np.mean(t - c))
    if k > 1:
        se = float(np.sqrt(t.var(ddof=1) / k + c.var(ddof=1) / k))
    else:
        se = float("nan")
    dropped = int((~ok).sum())
    return AteResult(outcome, est, se, (est - 1.96 * se, est + 1.96 * se), 2 * k, k,
                     dropped, k, len(matched.unmatched_treated) + dropped)
