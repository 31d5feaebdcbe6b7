"""Pipeline stages behind the command line.

Each stage reads the files written by earlier stages (or the raw corpus),
writes its own outputs into the run directory and returns a one-line
summary. Outputs are staged in a temporary directory and moved into place
only when the stage succeeds.
"""

from __future__ import annotations

import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import indicators as ind
from . import matching, regress, summaries, synth
from .errors import DindexError, ModelError
from .graph import LoadOptions, load_corpus, read_papers

log = logging.getLogger(__name__)

OUTCOMES = ("di1", "di5", "di1n", "di5n", "dep_inverse", "log_citations")
CONTROLS = ("n_years", "log_citations", "n_authors", "n_pages", "n_countries",
            "usa", "china", "eu28")
SUMMARY_COLUMNS = ("di1", "di5", "di1n", "di5n", "dep", "dep_inverse", "log_citations")


@dataclass
class RunConfig:
    out: Path = Path("out")
    papers: Path | None = None
    citations: Path | None = None
    delimiter: str = ","
    strict: bool = True
    doc_types: tuple[str, ...] | None = None
    focal_doc_types: tuple[str, ...] | None = None
    focal_journals: tuple[str, ...] | None = None
    focal_years: tuple[int, int] | None = None
    thresholds: tuple[int, ...] = (1, 5)
    dep_mode: str = "mean"
    window: int | None = None
    workers: int = 1
    outcomes: tuple[str, ...] = OUTCOMES
    predictors: tuple[str, ...] = CONTROLS
    robust: bool = True
    exclude_ids: Path | None = None
    ref_year: int | None = None
    bins: int = 20
    seed: int = 0
    covariates: str = "paper"
    preset: str | None = None
    generator: synth.GeneratorParams = field(default_factory=synth.GeneratorParams)

    @property
    def papers_path(self) -> Path:
        return Path(self.papers) if self.papers else Path(self.out) / "papers.csv"

    @property
    def citations_path(self) -> Path:
        return Path(self.citations) if self.citations else Path(self.out) / "citations.csv"

    def load_options(self) -> LoadOptions:
        return LoadOptions(delimiter=self.delimiter, strict=self.strict,
                           doc_types=self.doc_types)

    def indicator_config(self) -> ind.IndicatorConfig:
        return ind.IndicatorConfig(
            thresholds=self.thresholds, dep_mode=self.dep_mode, window=self.window,
            focal=ind.FocalFilter(self.focal_doc_types, self.focal_journals,
                                  self.focal_years),
            workers=self.workers)


class StagedOutput:
    """Collect a stage's files in a temp dir; move them into ``out`` on success."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.tmp / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text, encoding="utf-8")

    def write_csv(self, name: str, frame: pd.DataFrame) -> None:
        frame.to_csv(self.path(name), index=False, lineterminator="\n",
                     float_format="%.10g")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self.names:
                    os.replace(self.tmp / name, self.out / name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _require(path: Path, stage: str) -> Path:
    if not Path(path).exists():
        raise DindexError(f"{path}: not found (run the {stage!r} stage first?)")
    return Path(path)


# stages ---------------------------------------------------------------

def stage_generate(cfg: RunConfig) -> str:
    params = cfg.generator
    with StagedOutput(cfg.out) as out:
        manifest = synth.generate_corpus(params, out.tmp)
        out.names += ["papers.csv", "citations.csv", "manifest.txt"]
    return (f"generate: {manifest['n_papers']} papers, {manifest['n_edges']} edges, "
            f"{params.planted_disruptive} planted -> {cfg.out}")


def stage_ingest(cfg: RunConfig) -> str:
    corpus = load_corpus(cfg.papers_path, cfg.citations_path, cfg.load_options())
    rep = corpus.report
    lines = [f"papers_file = {cfg.papers_path}", f"citations_file = {cfg.citations_path}",
             *rep.lines(), f"cohorts = {len(corpus.cohort_keys)}",
             f"corpus_sha256 = {corpus.digest()}"]
    lines += [f"warning = {w}" for w in rep.warnings]
    with StagedOutput(cfg.out) as out:
        out.write_text("ingest_report.txt", "\n".join(lines) + "\n")
    return (f"ingest: {rep.papers_kept} papers, {rep.edges_kept} edges "
            f"({rep.duplicate_edges} duplicate, {rep.self_loops} self-loop, "
            f"{rep.stubs} stub papers)")


def stage_indicators(cfg: RunConfig) -> str:
    corpus = load_corpus(cfg.papers_path, cfg.citations_path, cfg.load_options())
    table = ind.compute_all(corpus, cfg.indicator_config())
    report = {k: v for k, v in table.report.items() if k != "seconds"}
    settings = {"thresholds": ",".join(map(str, cfg.thresholds)), "dep_mode": cfg.dep_mode,
                "window": "" if cfg.window is None else cfg.window}
    lines = [f"{k} = {v}" for k, v in {**settings, **report}.items() if k != "workers"]
    with StagedOutput(cfg.out) as out:
        ind.write_indicator_table(table.frame, out.path("indicators.csv"))
        out.write_csv("indicator_counts.csv", table.counts)
        out.write_text("indicators_report.txt", "\n".join(lines) + "\n")
    return (f"indicators: {len(table.frame)} focal papers in "
            f"{table.report['seconds']:.2f}s with {cfg.workers} worker(s)")


def analysis_table(cfg: RunConfig) -> pd.DataFrame:
    """Indicator table joined to paper metadata, plus years since publication."""
    frame = ind.read_indicator_table(_require(Path(cfg.out) / "indicators.csv", "indicators"))
    meta = read_papers(cfg.papers_path, cfg.delimiter, cfg.load_options())
    meta = meta.drop(columns=["year"])
    data = frame.merge(meta, on="id", how="left", validate="one_to_one")
    ref = cfg.ref_year if cfg.ref_year is not None else int(data["year"].max())
    data["n_years"] = ref - data["year"]
    return data


def stage_summarize(cfg: RunConfig) -> str:
    data = analysis_table(cfg)
    cols = [c for c in SUMMARY_COLUMNS if c in data.columns and data[c].notna().any()]
    pcts, hists, medians = [], [], []
    svgs = {}
    for c in cols:
        p = summaries.yearly_percentiles(data, c)
        m = summaries.milestone_annual_medians(data, c)
        pcts.append(p)
        medians.append(m)
        hists.append(summaries.histogram(data, c, cfg.bins))
        svgs[f"timeline_{c}.svg"] = summaries.svg_timeline(p, m)
    with StagedOutput(cfg.out) as out:
        out.write_csv("percentiles.csv", summaries.percentile_table(pcts))
        out.write_csv("milestone_medians.csv", pd.concat(medians, ignore_index=True))
        out.write_csv("histograms.csv", summaries.histogram_table(hists))
        for name, text in svgs.items():
            out.write_text(name, text)
    return f"summarize: {len(cols)} indicators over {data['year'].nunique()} years"


def _exclusions(cfg: RunConfig) -> tuple[str, ...] | None:
    if cfg.exclude_ids is None:
        return None
    path = Path(cfg.exclude_ids)
    if not path.exists():
        raise DindexError(f"{path}: exclude-ids file not found")
    ids = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    return tuple(i for i in ids if i and not i.startswith("#"))


def stage_regress(cfg: RunConfig) -> str:
    data = analysis_table(cfg)
    outcomes = [o for o in cfg.outcomes if o in data.columns]
    for col in [*cfg.outcomes, *cfg.predictors, "milestone"]:
        if col not in data.columns:
            raise DindexError(f"regress: column {col!r} not found in the analysis table "
                              f"(indicators.csv joined with {cfg.papers_path})")
    exclude = _exclusions(cfg)
    rows, logit_rows, diag, cooks_rows, means, notes = [], [], [], [], [], []

    for outcome in outcomes:
        controls = tuple(p for p in cfg.predictors if p not in ("milestone", outcome))
        for label, preds in ((outcome, ("milestone",)),
                             (f"{outcome}+controls", ("milestone", *controls))):
            spec = regress.ModelSpec(outcome, preds, cfg.robust, exclude, label)
            try:
                fit = regress.ols_fit(data, spec)
            except ModelError as e:
                notes.append(f"{label}: {e}")
                continue
            rows += regress.model_rows(fit)
            _ols_diagnostics(fit, data, diag, cooks_rows, notes)
            if len(preds) > 1:
                pm = regress.predict_group_means(fit, data, "milestone", by="year")
                means.append(pm.assign(model=label))
        try:
            k2 = regress.skew_kurt_normality(data[outcome].dropna())
            diag.append(_drow(outcome, "normality_k2", "", k2.statistic, k2.p_value))
            diag.append(_drow(outcome, "skewness", "", k2.skewness))
            diag.append(_drow(outcome, "kurtosis", "", k2.kurtosis))
        except ModelError as e:
            notes.append(f"{outcome} normality: {e}")

        label = f"milestone~{outcome}"
        spec = regress.ModelSpec("milestone", (outcome,), cfg.robust, exclude, label)
        try:
            lfit = regress.logit_fit(data, spec)
        except ModelError as e:
            notes.append(f"{label}: {e}")
            continue
        logit_rows += regress.model_rows(lfit)
        pm = regress.predict_group_means(lfit, data.assign(_all=1), "_all")
        means.append(pm.rename(columns={"_all": "milestone"}).assign(model=label))

    columns = ["model", "term", "estimate", "se", "p", "stars", "n", "r2"]
    ols_table = pd.DataFrame(rows, columns=columns)
    logit_table = pd.DataFrame(logit_rows, columns=columns)
    text = ["OLS models (robust HC1 standard errors in parentheses)" if cfg.robust
            else "OLS models (classical standard errors in parentheses)"]
    if len(ols_table):
        text.append(regress.render_model_table(ols_table))
    text.append("Logistic models for milestone (odds ratios, robust standard errors)")
    if len(logit_table):
        text.append(regress.render_model_table(logit_table))
    if exclude:
        text.append(f"excluded ids: {', '.join(exclude)}")
    text += [f"note: {n}" for n in notes]

    mean_cols = ["model", "milestone", "year", "n", "mean", "se", "ci_lo", "ci_hi"]
    means_frame = (pd.concat(means, ignore_index=True).reindex(columns=mean_cols)
                   if means else pd.DataFrame(columns=mean_cols))
    with StagedOutput(cfg.out) as out:
        out.write_csv("models.csv", pd.concat([ols_table, logit_table], ignore_index=True))
        out.write_text("models.txt", "\n".join(text) + "\n")
        out.write_csv("diagnostics.csv", pd.DataFrame(
            diag, columns=["model", "diagnostic", "term", "value", "p"]))
        out.write_csv("cooks.csv", pd.DataFrame(cooks_rows, columns=["model", "id", "distance"]))
        out.write_csv("predicted_means.csv", means_frame)
    n_models = ols_table["model"].nunique() + logit_table["model"].nunique()
    return f"regress: {n_models} models fitted, {len(notes)} note(s)"


def _drow(model, diagnostic, term, value, p=float("nan")):
    return {"model": model, "diagnostic": diagnostic, "term": term, "value": value, "p": p}


def _ols_diagnostics(fit, data, diag, cooks_rows, notes):
    label = fit.spec.label
    preds = list(fit.spec.predictors)
    if len(preds) > 1:
        for term, v in regress.vif(data.loc[data["id"].isin(fit.ids)], preds).items():
            diag.append(_drow(label, "vif", term, v))
    try:
        bp = regress.breusch_pagan(fit)
        diag.append(_drow(label, "breusch_pagan", f"df={bp.df}", bp.statistic, bp.p_value))
    except ModelError as e:
        notes.append(f"{label} Breusch-Pagan: {e}")
    cd = regress.cooks_distance(fit)
    flagged = cd.distance > cd.cutoff
    diag.append(_drow(label, "cooks_flagged", f"cutoff={cd.cutoff:.6g}", int(flagged.sum())))
    top = np.argsort(-np.nan_to_num(cd.distance, posinf=np.finfo(float).max), kind="stable")
    for i in top[:10]:
        diag.append(_drow(label, "cooks_top", cd.ids[i], cd.distance[i]))
    cooks_rows += [{"model": label, "id": i, "distance": d}
                   for i, d in zip(cd.ids, cd.distance)]


def cem_spec(name: str, with_citations: bool) -> dict:
    if name == "paper":
        return matching.paper_preset(with_citations)
    spec = {}
    for item in name.split(","):
        col, _, rule = item.strip().partition(":")
        rule = rule or matching.QUINTILE
        if rule not in (matching.QUINTILE, matching.IDENTITY):
            try:
                rule = [float(x) for x in rule.split(";")]
            except ValueError:
                raise DindexError(f"covariate {col!r}: bad coarsening {rule!r}") from None
        spec[col] = rule
    return spec


def stage_cem(cfg: RunConfig) -> str:
    data = analysis_table(cfg)
    outcomes = [o for o in cfg.outcomes if o in data.columns]
    results, files, cache = [], {}, {}
    for outcome in outcomes:
        # citations cannot be a covariate for the citation outcome itself
        with_cit = outcome not in ("log_citations", "citations")
        spec = cem_spec(cfg.covariates, with_cit)
        key = repr(sorted(spec.items()))
        if key not in cache:
            cache[key] = matching.cem_match(data, "milestone", spec, cfg.seed)
        matched = cache[key]
        res = matching.ate(matched, outcome)
        results.append({"outcome": outcome, "ate": res.ate, "se": res.se,
                        "ci_lo": res.ci95[0], "ci_hi": res.ci95[1], "n": res.n,
                        "matched": res.matched, "unmatched": res.unmatched})
        files[f"matched_pairs_{outcome}.csv"] = matched.pairs_frame()
    with StagedOutput(cfg.out) as out:
        out.write_csv("ate.csv", pd.DataFrame(
            results, columns=["outcome", "ate", "se", "ci_lo", "ci_hi", "n", "matched",
                              "unmatched"]))
        for name, frame in files.items():
            out.write_csv(name, frame)
    return f"cem: {len(results)} outcomes matched with seed {cfg.seed}"


def stage_oracle_check(cfg: RunConfig) -> tuple[str, int]:
    """Recompute the indicator table by brute force and compare.

    Counts must agree exactly; rendered reals to 1e-9 relative (the table
    carries 10 significant digits).
    """
    out = Path(cfg.out)
    table = ind.read_indicator_table(_require(out / "indicators.csv", "indicators"))
    counts = pd.read_csv(_require(out / "indicator_counts.csv", "indicators"),
                         dtype={"id": str}).set_index("id")
    settings = synth.read_manifest(_require(out / "indicators_report.txt", "indicators"))
    thresholds = tuple(int(t) for t in settings["thresholds"].split(","))
    window = int(settings["window"]) if settings.get("window") else None
    dep_mode = settings["dep_mode"]
    corpus = load_corpus(cfg.papers_path, cfg.citations_path, cfg.load_options())
    recs = synth.brute_force_table(corpus, list(table["id"]), thresholds, dep_mode, window)
    mismatches = []
    for rec, row in zip(recs, table.to_dict("records")):
        pid = rec["id"]
        for (l, mode), trip in rec["counts"].items():
            suffix = "" if mode == ind.OWN else "_n"
            if f"n_i{suffix}" not in counts.columns:
                continue
            got = tuple(int(counts.loc[pid, c]) for c in
                        (f"n_i{suffix}", f"n_j{l}{suffix}", f"n_k{suffix}"))
            if trip is not None and got != tuple(trip):
                mismatches.append(f"{pid} counts l={l} {mode}: table {got}, oracle {trip}")
        fields = ["citations", "log_citations", "dep", "dep_inverse"] + \
            [c for c in table.columns if c.startswith("di")]
        for col in fields:
            want, got = rec.get(col), row[col]
            if want is None or got is None or (isinstance(got, float) and math.isnan(got)):
                if (want is None) != (got is None or (isinstance(got, float) and math.isnan(got))):
                    mismatches.append(f"{pid} {col}: table {got}, oracle {want}")
                continue
            if not math.isclose(float(got), float(want), rel_tol=1e-9, abs_tol=1e-12):
                mismatches.append(f"{pid} {col}: table {got}, oracle {want}")
    for m in mismatches[:20]:
        log.error(m)
    msg = f"oracle-check: {len(recs)} papers, {len(mismatches)} mismatches"
    return msg, 0 if not mismatches else 1


def stage_report(cfg: RunConfig) -> str:
    out = Path(cfg.out)
    parts = ["CITATION DISRUPTION ANALYSIS REPORT", "=" * 35, ""]

    def section(title, body):
        parts.extend([title, "-" * len(title), body.rstrip(), ""])

    for name, title in (("ingest_report.txt", "Corpus"),
                        ("indicators_report.txt", "Indicators")):
        if (out / name).exists():
            section(title, (out / name).read_text(encoding="utf-8"))
    if (out / "percentiles.csv").exists():
        pct = pd.read_csv(out / "percentiles.csv")
        body = []
        for indicator, grp in pct.groupby("indicator", sort=False):
            body.append(f"[{indicator}]")
            body.append(grp.drop(columns="indicator").to_string(index=False,
                                                                 float_format="%.5f"))
        section("Yearly percentiles (median, 90th, 99th)", "\n".join(body))
    if (out / "milestone_medians.csv").exists():
        mm = pd.read_csv(out / "milestone_medians.csv")
        if len(mm):
            wide = mm.pivot(index="year", columns="indicator", values="median")
            section("Annual medians of milestone papers", wide.to_string(float_format="%.5f"))
    if (out / "models.txt").exists():
        section("Regression models", (out / "models.txt").read_text(encoding="utf-8"))
    if (out / "diagnostics.csv").exists():
        dg = pd.read_csv(out / "diagnostics.csv", dtype={"term": str})
        keep = dg[dg["diagnostic"].isin(["vif", "breusch_pagan", "cooks_flagged",
                                         "normality_k2"])]
        section("Diagnostics", keep.to_string(index=False, float_format="%.5f"))
    if (out / "ate.csv").exists():
        at = pd.read_csv(out / "ate.csv")
        lines = [f"{'Variable':<16}{'Matched (yes / no)':>20}{'ATE':>14}{'SE':>10}"
                 f"{'95% CI':>24}{'N':>6}"]
        for r in at.itertuples(index=False):
            p = matching.AteResult(r.outcome, r.ate, r.se, (r.ci_lo, r.ci_hi), r.n, 0, 0,
                                   r.matched, r.unmatched).p_value
            ci = f"[{r.ci_lo:.5f}, {r.ci_hi:.5f}]"
            lines.append(f"{r.outcome:<16}{f'{r.matched} / {r.unmatched}':>20}"
                         f"{f'{r.ate:.5f}{regress.stars(p)}':>14}{r.se:>10.5f}{ci:>24}"
                         f"{r.n:>6}")
        lines.append("* p<0.05, ** p<0.01, *** p<0.001")
        section("Coarsened exact matching: average treatment effect of milestone status",
                "\n".join(lines))
    with StagedOutput(out) as staged:
        staged.write_text("report.txt", "\n".join(parts))
    return f"report: {out / 'report.txt'}"


STAGES = {
    "generate": stage_generate,
    "ingest": stage_ingest,
    "indicators": stage_indicators,
    "summarize": stage_summarize,
    "regress": stage_regress,
    "cem": stage_cem,
    "oracle-check": stage_oracle_check,
    "report": stage_report,
}

