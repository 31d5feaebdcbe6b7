"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` to see the verdict lines.
"""

import json
import math
import random
import subprocess
import sys
import textwrap
import time

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from conftest import g1_corpus, random_graph
from dindex import pipeline, synth
from dindex.errors import SeparationError
from dindex.graph import Corpus
from dindex.indicators import (COHORT, OWN, IndicatorConfig, compute_all, dep,
                               disruption_counts, disruption_index)
from dindex.matching import IDENTITY, ate, cem_match, coarsen, paper_preset
from dindex.regress import (ModelSpec, breusch_pagan, cooks_distance, logit_fit, ols_fit,
                            skew_kurt_normality, vif)
from dindex.summaries import histogram, milestone_annual_medians, yearly_percentiles


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title}"
                  + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"
    return emit


# 1 --------------------------------------------------------------------

def test_criterion_01_oracle_equivalence(verdict):
    rng = random.Random(2024)
    start = time.perf_counter()
    problems = []
    for g in range(500):
        corpus = random_graph(rng, max_papers=50)
        window = rng.choice([None, 0, 1, 3])
        for dep_mode in ("mean", "total"):
            table = compute_all(corpus, IndicatorConfig(window=window, dep_mode=dep_mode,
                                                        workers=rng.choice([1, 2])))
            oracle = synth.brute_force_table(corpus, dep_mode=dep_mode, window=window)
            counts = table.counts.to_dict("records")
            for rec, row, cnt in zip(oracle, table.frame.itertuples(index=False), counts):
                if rec["id"] != row.id or rec["citations"] != row.citations:
                    problems.append((g, row.id, "citations"))
                for l in (1, 5):
                    for mode, sfx in ((OWN, ""), (COHORT, "_n")):
                        got = tuple(int(cnt[c]) for c in
                                    (f"n_i{sfx}", f"n_j{l}{sfx}", f"n_k{sfx}"))
                        if rec["counts"][(l, mode)] != got:
                            problems.append((g, row.id, l, mode))
                for col in ("di1", "di5", "di1n", "di5n", "dep", "dep_inverse",
                            "log_citations"):
                    want, got = rec[col], getattr(row, col)
                    if want is None:
                        if not math.isnan(got):
                            problems.append((g, row.id, col))
                    elif not abs(want - got) <= 1e-12:
                        problems.append((g, row.id, col))
    elapsed = time.perf_counter() - start
    verdict(1, "indicator oracle equivalence on 500 random graphs",
            not problems and elapsed < 60,
            f"{len(problems)} mismatches, {elapsed:.1f}s")


# 2 --------------------------------------------------------------------

def test_criterion_02_forced_values(verdict):
    checks = []
    zero_ref = Corpus.from_records([dict(id=p, year=2000) for p in "FAB"],
                                   [("A", "F"), ("B", "F")])
    for l in (1, 5):
        for mode in (OWN, COHORT):
            checks.append(disruption_index(disruption_counts(zero_ref, "F", l, mode)) == 1.0)
    uncited = Corpus.from_records([dict(id=p, year=2000) for p in "FRX"],
                                  [("F", "R"), ("X", "R")])
    for l in (1, 5):
        checks.append(disruption_index(disruption_counts(uncited, "F", l)) == 0.0)
    isolated = Corpus.from_records([dict(id="F", year=2000)], [])
    checks.append(disruption_index(disruption_counts(isolated, "F", 1)) is None)
    checks.append(disruption_index(disruption_counts(isolated, "F", 5)) is None)
    checks.append(dep(isolated, "F", "mean") is None)
    disjoint = Corpus.from_records([dict(id=p, year=2000) for p in "FRAB"],
                                   [("F", "R"), ("A", "F"), ("B", "F")])
    checks.append(dep(disjoint, "F", "mean") == 0.0)
    checks.append(dep(disjoint, "F", "total") == 0.0)
    verdict(2, "forced-value cases", all(checks), f"{sum(checks)}/{len(checks)} exact")


# 3 --------------------------------------------------------------------

def test_criterion_03_worked_example(verdict):
    g1 = g1_corpus()
    got = (disruption_index(disruption_counts(g1, "F", 1)),
           disruption_index(disruption_counts(g1, "F", 5)),
           dep(g1, "F", "mean"), dep(g1, "F", "total"),
           len(g1.in_neighbors(g1.position("F"))))
    verdict(3, "worked example G1", got == (-0.25, 0.5, 1.0, 3.0, 3),
            f"DI1={got[0]}, DI5={got[1]}, DEP mean={got[2]}, total={got[3]}, "
            f"citations={got[4]}")


# 4 --------------------------------------------------------------------

def test_criterion_04_ols(verdict):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 5))
        y = 0.5 + X @ rng.normal(size=5) + rng.normal(size=200) * np.exp(X[:, 0] / 2)
        df = pd.DataFrame(X, columns=list("abcde")).assign(y=y, id=range(200))
        fit = ols_fit(df, ModelSpec("y", tuple("abcde")))
        Z = np.column_stack([X, np.ones(200)])
        inv = np.linalg.inv(Z.T @ Z)
        b = inv @ (Z.T @ y)
        e = y - Z @ b
        se = np.sqrt(np.diag(inv) * (e @ e) / 194)
        meat = (Z * e[:, None] ** 2).T @ Z
        hc1 = np.sqrt(np.diag(inv @ meat @ inv) * 200 / 194)
        r2 = 1 - (e @ e) / np.sum((y - y.mean()) ** 2)
        worst = max(worst, np.max(np.abs(fit.coef - b)), np.max(np.abs(fit.se_classical - se)),
                    np.max(np.abs(fit.se - hc1)), abs(fit.r2 - r2))
    rng = np.random.default_rng(99)
    g = rng.integers(0, 2, 200).astype(float)
    yb = rng.normal(size=200) + g
    fit = ols_fit(pd.DataFrame({"g": g, "y": yb, "id": range(200)}), ModelSpec("y", ("g",)))
    diff = abs(fit.coef[0] - (yb[g == 1].mean() - yb[g == 0].mean()))
    verdict(4, "OLS coefficients, SEs, HC1, R2 against closed form",
            worst <= 1e-8 and diff <= 1e-12,
            f"max abs deviation {worst:.2e}, group-difference deviation {diff:.1e}")


# 5 --------------------------------------------------------------------

def test_criterion_05_logit(verdict):
    rng = np.random.default_rng(5)
    worst_or, worst_grad = 0.0, 0.0
    for _ in range(50):
        a, b, c, d = rng.integers(3, 40, 4)
        x = [1] * (a + b) + [0] * (c + d)
        y = [1] * a + [0] * b + [1] * c + [0] * d
        fit = logit_fit(pd.DataFrame({"id": range(len(x)), "x": x, "y": y}),
                        ModelSpec("y", ("x",)))
        cpr = (a * d) / (b * c)
        worst_or = max(worst_or, abs(fit.odds_ratios[0] - cpr) / cpr)
        worst_grad = max(worst_grad, float(np.abs(fit.gradient).max()))
    detected = 0
    for k in range(10):
        n = 20 + 5 * k
        x1 = rng.normal(size=n)
        x2 = rng.normal(size=n)
        y = (x1 + (k % 3) * x2 > 0.1 * k).astype(int)
        if y.min() == y.max():
            y[0] = 1 - y[0]
            x1[0] = 10 * (1 if y[0] else -1)
        try:
            logit_fit(pd.DataFrame({"id": range(n), "x1": x1, "x2": x2, "y": y}),
                      ModelSpec("y", ("x1", "x2")))
        except SeparationError:
            detected += 1
    verdict(5, "logit odds ratios, gradient, separation",
            worst_or <= 1e-6 and worst_grad <= 1e-6 and detected == 10,
            f"max OR rel error {worst_or:.1e}, max gradient {worst_grad:.1e}, "
            f"separation detected {detected}/10")


# 6 --------------------------------------------------------------------

def test_criterion_06_diagnostics(verdict):
    rng = np.random.default_rng(6)
    cook_err = 0.0
    for n in (10, 20, 30):
        X = rng.normal(size=(n, 3))
        y = X @ [1.0, -1.0, 0.5] + rng.normal(size=n)
        df = pd.DataFrame(X, columns=list("abc")).assign(y=y, id=range(n))
        fit = ols_fit(df, ModelSpec("y", tuple("abc")))
        Z = fit.X
        full = Z @ np.linalg.lstsq(Z, y, rcond=None)[0]
        loo = []
        for i in range(n):
            keep = np.arange(n) != i
            bi = np.linalg.lstsq(Z[keep], y[keep], rcond=None)[0]
            loo.append(np.sum((full - Z @ bi) ** 2) / (4 * fit.s2))
        d = cooks_distance(fit).distance
        cook_err = max(cook_err, float(np.max(np.abs(d - loo) / np.maximum(loo, 1e-300))))

    u, w, z = rng.normal(size=(3, 300))
    a, b = u, 0.6 * u + 0.8 * w
    frame = pd.DataFrame({"a": a, "b": b, "z": z})
    v = vif(frame, ["a", "b", "z"])
    Za = np.column_stack([b, z, np.ones(300)])
    ea = a - Za @ np.linalg.lstsq(Za, a, rcond=None)[0]
    r2a = 1 - ea @ ea / np.sum((a - a.mean()) ** 2)
    vif_err = abs(v["a"] - 1 / (1 - r2a))

    rejects, lm_err = 0, 0.0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        x = r.uniform(1, 10, 200)
        y = 1 + 2 * x + r.normal(size=200) * x
        fit = ols_fit(pd.DataFrame({"x": x, "y": y, "id": range(200)}), ModelSpec("y", ("x",)))
        bp = breusch_pagan(fit)
        rejects += bp.p_value < 0.05
        e2 = fit.residuals ** 2
        g = np.linalg.solve(fit.X.T @ fit.X, fit.X.T @ e2)
        lm = 200 * (1 - np.sum((e2 - fit.X @ g) ** 2) / np.sum((e2 - e2.mean()) ** 2))
        lm_err = max(lm_err, abs(bp.statistic - lm) / lm)

    normal_rejects = sum(
        skew_kurt_normality(np.random.default_rng(5000 + s).normal(size=5000)).p_value < 0.05
        for s in range(200))
    rate = normal_rejects / 200
    ok = (cook_err <= 1e-10 and vif_err <= 1e-10 and rejects >= 95 and lm_err <= 1e-8
          and 0.02 <= rate <= 0.08)
    verdict(6, "Cook's D, VIF, Breusch-Pagan, normality", ok,
            f"Cook rel err {cook_err:.1e}, VIF err {vif_err:.1e}, BP rejects {rejects}/100, "
            f"BP rel err {lm_err:.1e}, normal rejection rate {rate:.3f}")


# 7 --------------------------------------------------------------------

def _cem_sample(rng, n=600):
    return pd.DataFrame({
        "id": [f"u{i:04d}" for i in range(n)],
        "a": rng.integers(0, 4, n), "b": rng.integers(0, 3, n),
        "k": rng.choice(["x", "y"], n), "t": (rng.random(n) < 0.15).astype(int)})


def test_criterion_07_cem(verdict):
    spec = {"a": IDENTITY, "b": IDENTITY, "k": IDENTITY}
    tau = 3
    # exact balance and noise-free recovery
    balance_ok, exact_ok = True, True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        df = _cem_sample(rng)
        df["y"] = 2 * df.a + 7 * df.b + 5 * (df.k == "x") + tau * df.t
        m = cem_match(df, "t", spec, seed=seed)
        sig = dict(zip(df.id, coarsen(df, spec).signatures))
        balance_ok &= all(sig[t] == sig[c] for t, c in m.pairs)
        exact_ok &= ate(m, "y").ate == tau
    # coverage under noise
    covered = 0
    for seed in range(100):
        rng = np.random.default_rng(100 + seed)
        df = _cem_sample(rng)
        df["y"] = 2 * df.a + 7 * df.b + tau * df.t + rng.normal(size=len(df))
        res = ate(cem_match(df, "t", spec, seed=seed), "y")
        covered += res.ci95[0] <= tau <= res.ci95[1]
    # 38 matched / 1 unmatched under the "paper" covariate preset
    rng = np.random.default_rng(38)
    n = 800
    controls = pd.DataFrame({
        "id": [f"c{i:04d}" for i in range(n)],
        "n_authors": rng.integers(1, 12, n), "n_pages": rng.integers(3, 7, n),
        "year": rng.integers(1980, 2003, n), "n_countries": rng.integers(1, 4, n),
        "usa": rng.integers(0, 2, n), "china": 0, "eu28": rng.integers(0, 2, n),
        "citations": rng.integers(0, 200, n), "t": 0})
    twins = controls.sample(38, random_state=1).assign(t=1)
    twins["id"] = [f"t{i:02d}" for i in range(38)]
    lonely = controls.iloc[[0]].assign(t=1, id="t38", china=1, usa=1, eu28=1)
    data = pd.concat([controls, twins, lonely], ignore_index=True)
    m = cem_match(data, "t", paper_preset(with_citations=True), seed=0)
    shape = (m.matched, len(m.unmatched_treated))
    ok = balance_ok and exact_ok and covered >= 85 and shape == (38, 1)
    verdict(7, "CEM balance, recovery, coverage, 38/1 shape", ok,
            f"balance {balance_ok}, exact tau {exact_ok}, coverage {covered}/100, "
            f"matched/unmatched {shape[0]}/{shape[1]}")


# 8 --------------------------------------------------------------------

def test_criterion_08_end_to_end(verdict, tmp_path):
    start = time.perf_counter()
    cfg = pipeline.RunConfig(out=tmp_path, generator=synth.PRESETS["bundled"])
    for stage in ("generate", "ingest", "indicators", "summarize", "regress", "cem", "report"):
        pipeline.STAGES[stage](cfg)
    elapsed = time.perf_counter() - start
    ate_rows = pd.read_csv(tmp_path / "ate.csv").set_index("outcome")
    di5 = ate_rows.loc["di5"]
    p = 2 * stats.norm.sf(abs(di5.ate / di5.se))
    models = pd.read_csv(tmp_path / "models.csv")
    coef = models[models.term == "milestone"].set_index("model")["estimate"]
    ok = (di5.ate > 0 and p < 0.05 and coef["di5"] > 0 and coef["log_citations"] > 0
          and elapsed < 30)
    verdict(8, "bundled corpus end to end", ok,
            f"DI5 ATE {di5.ate:.4f} (p={p:.4f}), milestone coef DI5 {coef['di5']:.4f}, "
            f"log citations {coef['log_citations']:.4f}, {elapsed:.1f}s")


# 9 --------------------------------------------------------------------

PERF_SCRIPT = textwrap.dedent("""
    import json, resource, time
    from dindex import synth
    from dindex.indicators import FocalFilter, IndicatorConfig, compute_all
    s = synth.generate(synth.PRESETS["large"])
    corpus = s.corpus()
    # compile the kernels outside the timed region
    compute_all(corpus, IndicatorConfig(focal=FocalFilter(years=(0, 0))))
    t = time.perf_counter()
    four = compute_all(corpus, IndicatorConfig(workers=4))
    t4 = time.perf_counter() - t
    one = compute_all(corpus, IndicatorConfig(workers=1))
    same = (four.frame.to_csv(index=False) == one.frame.to_csv(index=False)
            and four.counts.equals(one.counts))
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    print(json.dumps({"papers": len(corpus), "edges": corpus.n_edges, "seconds": t4,
                      "rss_mb": rss, "identical": bool(same), "rows": len(four.frame)}))
""")


def test_criterion_09_performance(verdict):
    res = subprocess.run([sys.executable, "-c", PERF_SCRIPT], capture_output=True, text=True,
                         timeout=900)
    assert res.returncode == 0, res.stderr
    r = json.loads(res.stdout.strip().splitlines()[-1])
    ok = (r["papers"] == 100_000 and r["edges"] >= 2_000_000 and r["seconds"] < 60
          and r["rss_mb"] < 2048 and r["identical"] and r["rows"] == r["papers"])
    verdict(9, "100k papers / 2M edges performance", ok,
            f"{r['papers']} papers, {r['edges']} edges, {r['seconds']:.1f}s on 4 workers, "
            f"peak {r['rss_mb']:.0f} MB, identical at 1 vs 4 workers: {r['identical']}")


# 10 -------------------------------------------------------------------

def test_criterion_10_summaries(verdict):
    bad = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 500))
        df = pd.DataFrame({"year": rng.integers(1990, 2000, n),
                           "milestone": rng.integers(0, 2, n),
                           "x": rng.normal(size=n).round(3)})
        df.loc[rng.random(n) < 0.05, "x"] = np.nan
        if df.x.notna().sum() == 0:
            continue
        pct = yearly_percentiles(df, "x")
        for y, grp in df.dropna().groupby("year"):
            s = np.sort(grp.x.to_numpy())
            for p in (50, 90, 99):
                bad += pct.rows[y][f"p{p}"] != s[max(1, math.ceil(p * len(s) / 100)) - 1]
            bad += pct.rows[y]["n"] != len(s)
        med = milestone_annual_medians(df, "x").set_index("year")["median"]
        for y, grp in df[df.milestone == 1].dropna().groupby("year"):
            bad += med[y] != float(np.median(grp.x))
        h = histogram(df, "x", bins=int(rng.integers(1, 30)))
        bad += h.counts.sum() != df.x.notna().sum()
    verdict(10, "summaries against sort-based oracle", bad == 0, f"{bad} mismatches")
