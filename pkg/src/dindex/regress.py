"""Regression models and diagnostics for indicator tables.

OLS with HC1 sandwich standard errors, logistic regression by Newton-Raphson
with odds ratios, and the usual diagnostics: VIF, Breusch-Pagan LM test,
Cook's distance, and a skewness/kurtosis (K^2) normality test.

p-values use the normal reference by default (large-sample practice); pass
``t_reference=True`` on the ModelSpec for Student-t p-values on OLS fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from .errors import ConvergenceError, DegenerateError, ModelError, SeparationError

CONST = "const"


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    predictors: tuple[str, ...] = ()
    robust: bool = True
    exclude_rows: tuple[str, ...] | None = None
    name: str | None = None
    id_column: str = "id"
    t_reference: bool = False

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if len(set(self.predictors)) != len(self.predictors):
            raise ModelError(f"duplicate predictors in {self.predictors}")
        if self.outcome in self.predictors:
            raise ModelError(f"outcome {self.outcome!r} is also a predictor")

    @property
    def label(self) -> str:
        return self.name or self.outcome


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    terms: list[str]
    excluded: int
    missing: dict[str, int]
    dropped: int


def _design(data: pd.DataFrame, spec: ModelSpec) -> Design:
    cols = [spec.outcome, *spec.predictors]
    absent = [c for c in cols if c not in data.columns]
    if absent:
        raise ModelError(f"model {spec.label!r}: column(s) not found: {', '.join(absent)}")
    frame = data
    excluded = 0
    if spec.exclude_rows:
        if spec.id_column not in data.columns:
            raise ModelError(f"exclude_rows needs an id column {spec.id_column!r}")
        drop = data[spec.id_column].astype(str).isin(set(map(str, spec.exclude_rows)))
        excluded = int(drop.sum())
        frame = data[~drop]
    values = frame[cols].apply(pd.to_numeric, errors="coerce").astype(float)
    missing = {c: int(values[c].isna().sum()) for c in cols}
    keep = values.notna().all(axis=1).to_numpy()
    values = values[keep]
    ids = (frame[spec.id_column].astype(str).to_numpy()[keep] if spec.id_column in frame
           else np.arange(len(frame))[keep].astype(str))
    X = np.column_stack([values[list(spec.predictors)].to_numpy(), np.ones(len(values))])
    return Design(X, values[spec.outcome].to_numpy(), ids, [*spec.predictors, CONST],
                  excluded, missing, int((~keep).sum()))


def _check_rank(X: np.ndarray, terms: list[str], label: str) -> None:
    n, k = X.shape
    if n <= k:
        raise ModelError(f"model {label!r}: {n} complete observations is too few "
                         f"for {k} parameters")
    if np.linalg.matrix_rank(X) == k:
        return
    bad, rank = [], 0
    for j in range(k):
        r = np.linalg.matrix_rank(X[:, : j + 1])
        if r == rank:
            bad.append(terms[j])
        rank = r
    raise ModelError(f"model {label!r}: design matrix is rank deficient; collinear "
                     f"column(s): {', '.join(bad)}")


def _p_values(coef, se, df=None):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(coef / se)
    if df is None:
        return 2.0 * stats.norm.sf(z)
    return 2.0 * stats.t.sf(z, df)


@dataclass
class OlsFit:
    spec: ModelSpec
    terms: list[str]
    coef: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    se_classical: np.ndarray
    cov_classical: np.ndarray
    p_values: np.ndarray
    r2: float
    n: int
    k: int
    s2: float
    residuals: np.ndarray
    fitted: np.ndarray
    leverage: np.ndarray
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    xtx_inv: np.ndarray
    dropped: int = 0
    excluded: int = 0
    missing: dict = field(default_factory=dict)

    @property
    def se_kind(self) -> str:
        return "HC1" if self.spec.robust else "classical"

    def params(self) -> pd.Series:
        return pd.Series(self.coef, index=self.terms)


def ols_fit(data: pd.DataFrame, spec: ModelSpec) -> OlsFit:
    """Least squares with an intercept; listwise deletion of incomplete rows.

    With ``spec.robust`` the reported standard errors are HC1:
    ``(X'X)^-1 X' diag(e^2) X (X'X)^-1 * n/(n-k)``.
    """
    d = _design(data, spec)
    X, y = d.X, d.y
    _check_rank(X, d.terms, spec.label)
    n, k = X.shape
    Q, R = np.linalg.qr(X)
    coef = np.linalg.solve(R, Q.T @ y)
    R_inv = np.linalg.solve(R, np.eye(k))
    xtx_inv = R_inv @ R_inv.T
    fitted = X @ coef
    e = y - fitted
    ssr = float(e @ e)
    s2 = ssr / (n - k)
    cov_classical = s2 * xtx_inv
    meat = (X * (e ** 2)[:, None]).T @ X
    cov_hc1 = xtx_inv @ meat @ xtx_inv * (n / (n - k))
    cov = cov_hc1 if spec.robust else cov_classical
    se = np.sqrt(np.diag(cov))
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ssr / sst if sst > 0 else float("nan")
    if sst > 0:
        r2 = min(max(r2, 0.0), 1.0)
    leverage = (Q ** 2).sum(axis=1)
    return OlsFit(spec, d.terms, coef, se, cov, np.sqrt(np.diag(cov_classical)),
                  cov_classical, _p_values(coef, se, n - k if spec.t_reference else None),
                  r2, n, k, s2, e, fitted, leverage, X, y, d.ids, xtx_inv,
                  d.dropped, d.excluded, d.missing)


# logistic regression ------------------------------------------------

@dataclass
class LogitFit:
    spec: ModelSpec
    terms: list[str]
    coef: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    p_values: np.ndarray
    odds_ratios: np.ndarray
    or_se: np.ndarray
    pseudo_r2: float
    loglik: float
    loglik_null: float
    n: int
    converged: bool
    iterations: int
    gradient: np.ndarray
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    dropped: int = 0
    excluded: int = 0


def detect_separation(X: np.ndarray, y: np.ndarray) -> bool:
    """True if some nonzero direction weakly separates the two classes.

    Solves max sum(s_i x_i b) s.t. s_i x_i b >= 0, |b| <= 1 with s = 2y-1;
    a positive optimum means the likelihood has no finite maximum.
    """
    A = X * (2.0 * y - 1.0)[:, None]
    res = optimize.linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(len(y)),
                           bounds=[(-1.0, 1.0)] * X.shape[1], method="highs")
    if res.status != 0:
        return False
    scale = 1.0 + np.abs(A).max()
    return -res.fun > 1e-7 * scale


def logit_fit(data: pd.DataFrame, spec: ModelSpec, tol: float = 1e-8,
              max_iter: int = 100) -> LogitFit:
    """Maximum-likelihood logistic regression by Newton-Raphson.

    Robust (sandwich) covariance uses the n/(n-1) small-sample factor; odds
    ratio standard errors follow by the delta method, ``OR * se``.
    """
    d = _design(data, spec)
    X, y = d.X, d.y
    if not np.isin(y, (0.0, 1.0)).all():
        raise ModelError(f"model {spec.label!r}: outcome {spec.outcome!r} must be 0/1")
    if y.min() == y.max():
        raise ModelError(f"model {spec.label!r}: outcome {spec.outcome!r} has a single class")
    _check_rank(X, d.terms, spec.label)
    if detect_separation(X, y):
        raise SeparationError(f"model {spec.label!r}: outcome {spec.outcome!r} is "
                              "completely or quasi-completely separated by the predictors")
    n, k = X.shape
    beta = np.zeros(k)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = special.expit(X @ beta)
        grad = X.T @ (y - p)
        hess = (X * (p * (1 - p))[:, None]).T @ X
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"model {spec.label!r}: Newton-Raphson did not converge "
                               f"in {max_iter} iterations")
    eta = X @ beta
    p = special.expit(eta)
    grad = X.T @ (y - p)
    hess = (X * (p * (1 - p))[:, None]).T @ X
    h_inv = np.linalg.inv(hess)
    if spec.robust:
        scores = X * (y - p)[:, None]
        cov = h_inv @ (scores.T @ scores) @ h_inv * (n / (n - 1))
    else:
        cov = h_inv
    se = np.sqrt(np.diag(cov))
    loglik = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    ybar = y.mean()
    loglik_null = float(n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar)))
    odds = np.exp(beta)
    return LogitFit(spec, d.terms, beta, se, cov, _p_values(beta, se), odds, odds * se,
                    1.0 - loglik / loglik_null, loglik, loglik_null, n, converged, it,
                    grad, X, y, d.ids, d.dropped, d.excluded)


# diagnostics ----------------------------------------------------------

def _r2(y: np.ndarray, X: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    e = y - X @ coef
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0:
        return 1.0
    return 1.0 - float(e @ e) / sst


def vif(data: pd.DataFrame, predictors) -> dict[str, float]:
    """Variance inflation factor 1/(1 - R^2_j) for each predictor.

    R^2_j comes from regressing predictor j on the others plus an intercept.
    Exactly collinear (or constant) columns get ``inf``.
    """
    predictors = list(predictors)
    if len(predictors) < 2:
        raise ModelError("VIF needs at least two predictors")
    values = data[predictors].apply(pd.to_numeric, errors="coerce").dropna().to_numpy(float)
    out = {}
    for j, name in enumerate(predictors):
        others = np.delete(values, j, axis=1)
        Z = np.column_stack([others, np.ones(len(values))])
        r2 = _r2(values[:, j], Z)
        out[name] = float("inf") if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    return out


@dataclass
class TestResult:
    statistic: float
    df: int
    p_value: float


def breusch_pagan(fit: OlsFit, data: pd.DataFrame | None = None, columns=None) -> TestResult:
    """LM test n*R^2 from regressing squared residuals on the predictors.

    ``columns`` (looked up in ``data`` by id) replaces the fitted model's
    predictors as explanatory variables.
    """
    e2 = fit.residuals ** 2
    scale = max(1.0, float(np.abs(fit.y).max()))
    if np.abs(fit.residuals).max() <= 1e-10 * scale:
        raise DegenerateError(f"model {fit.spec.label!r}: residuals are all zero "
                              "(exact fit); Breusch-Pagan is undefined")
    if columns is None:
        Z = fit.X
    else:
        if data is None:
            raise ValueError("columns given without data")
        frame = data.set_index(data[fit.spec.id_column].astype(str))
        Z = np.column_stack([frame.loc[fit.ids, list(columns)].to_numpy(float),
                             np.ones(fit.n)])
    sst = float(((e2 - e2.mean()) ** 2).sum())
    if sst == 0:
        raise DegenerateError(f"model {fit.spec.label!r}: squared residuals are constant")
    stat = fit.n * _r2(e2, Z)
    df = Z.shape[1] - 1
    return TestResult(float(stat), df, float(stats.chi2.sf(stat, df)))


@dataclass
class CooksResult:
    distance: np.ndarray
    ids: np.ndarray
    cutoff: float

    @property
    def flagged(self) -> list[str]:
        return [str(i) for i in self.ids[self.distance > self.cutoff]]


def cooks_distance(fit: OlsFit, cutoff: float | None = None) -> CooksResult:
    """``D_i = e_i^2 / (k s^2) * h_i / (1 - h_i)^2``; points with h_i = 1 get inf.

    ``flagged`` lists ids above ``cutoff`` (default 4/n).
    """
    h = fit.leverage
    e = fit.residuals
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (e ** 2 / (fit.k * fit.s2)) * (h / (1.0 - h) ** 2)
    d = np.where(np.isclose(h, 1.0, rtol=0, atol=1e-12), np.inf, d)
    return CooksResult(d, fit.ids, 4.0 / fit.n if cutoff is None else cutoff)


@dataclass
class NormalityResult:
    skewness: float
    kurtosis: float
    z_skewness: float
    z_kurtosis: float
    statistic: float
    p_value: float
    n: int


def skew_kurt_normality(values) -> NormalityResult:
    """D'Agostino-Pearson omnibus test.

    Skewness z from D'Agostino's transform, kurtosis z from Anscombe & Glynn;
    K^2 = z_s^2 + z_k^2 is referred to chi-square with 2 df.
    """
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    n = len(x)
    if n < 20:
        raise DegenerateError(f"normality test needs n >= 20, got {n}")
    dev = x - x.mean()
    m2 = np.mean(dev ** 2)
    if m2 == 0:
        raise DegenerateError("normality test on a constant sample")
    g1 = np.mean(dev ** 3) / m2 ** 1.5
    b2 = np.mean(dev ** 4) / m2 ** 2

    y = g1 * np.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = (3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3)
             / ((n - 2) * (n + 5) * (n + 7) * (n + 9)))
    w2 = -1.0 + np.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / np.sqrt(0.5 * np.log(w2))
    alpha = np.sqrt(2.0 / (w2 - 1.0))
    z_s = delta * np.arcsinh(y / alpha)

    mean_b2 = 3.0 * (n - 1) / (n + 1)
    var_b2 = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) ** 2 * (n + 3) * (n + 5))
    xk = (b2 - mean_b2) / np.sqrt(var_b2)
    sqrt_beta1 = (6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9))
                  * np.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3))))
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + np.sqrt(1.0 + 4.0 / sqrt_beta1 ** 2))
    denom = 1.0 + xk * np.sqrt(2.0 / (a - 4.0))
    term2 = np.sign(denom) * np.cbrt((1.0 - 2.0 / a) / np.abs(denom))
    z_k = (1.0 - 2.0 / (9.0 * a) - term2) / np.sqrt(2.0 / (9.0 * a))

    k2 = float(z_s ** 2 + z_k ** 2)
    return NormalityResult(float(g1), float(b2), float(z_s), float(z_k), k2,
                           float(stats.chi2.sf(k2, 2)), n)


# predictions ----------------------------------------------------------

def predict_group_means(fit: OlsFit | LogitFit, data: pd.DataFrame, group: str,
                        by: str | None = None) -> pd.DataFrame:
    """Average model predictions per ``group`` level (and ``by`` level).

    Standard errors use the delta method on the averaged prediction with the
    fit's covariance (robust if the fit was); 95% normal intervals. Logit
    predictions are on the probability scale.
    """
    cols = [group] + ([by] if by else [])
    missing = [c for c in cols if c not in data.columns]
    if missing:
        raise ModelError(f"column(s) not found: {', '.join(missing)}")
    idcol = fit.spec.id_column
    frame = data.set_index(data[idcol].astype(str)).loc[fit.ids, cols]
    logistic = isinstance(fit, LogitFit)
    if logistic:
        p = special.expit(fit.X @ fit.coef)
        pred, jac = p, fit.X * (p * (1 - p))[:, None]
    else:
        pred, jac = fit.X @ fit.coef, fit.X
    rows = []
    for key, idx in frame.reset_index(drop=True).groupby(cols, sort=True).groups.items():
        idx = np.asarray(idx)
        g = jac[idx].mean(axis=0)
        mean = float(pred[idx].mean())
        se = float(np.sqrt(g @ fit.cov @ g))
        key = key if isinstance(key, tuple) else (key,)
        row = {group: key[0]}
        if by:
            row[by] = key[1]
        row.update(n=len(idx), mean=mean, se=se, ci_lo=mean - 1.96 * se,
                   ci_hi=mean + 1.96 * se)
        rows.append(row)
    return pd.DataFrame(rows)


# tables ---------------------------------------------------------------

def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def model_rows(fit: OlsFit | LogitFit) -> list[dict]:
    """Rows for the ``model,term,estimate,se,p,stars,n,r2`` output table.

    Logit rows report odds ratios with delta-method standard errors and
    McFadden's pseudo R^2.
    """
    logistic = isinstance(fit, LogitFit)
    est = fit.odds_ratios if logistic else fit.coef
    se = fit.or_se if logistic else fit.se
    r2 = fit.pseudo_r2 if logistic else fit.r2
    return [{"model": fit.spec.label, "term": t, "estimate": float(est[j]),
             "se": float(se[j]), "p": float(fit.p_values[j]),
             "stars": stars(fit.p_values[j]), "n": fit.n, "r2": float(r2)}
            for j, t in enumerate(fit.terms)]


def render_model_table(rows: pd.DataFrame, digits: int = 5) -> str:
    """Aligned text table: one column per model, terms down the side,
    coefficients with stars above standard errors in parentheses."""
    models = list(dict.fromkeys(rows["model"]))
    terms = list(dict.fromkeys(t for t in rows["term"] if t != CONST)) + [CONST]
    cell = {(r.model, r.term): r for r in rows.itertuples(index=False)}
    first = {m: rows[rows["model"] == m].iloc[0] for m in models}
    table = [[""] + models]
    for t in terms:
        if not any((m, t) in cell for m in models):
            continue
        est, se = [t], [""]
        for m in models:
            r = cell.get((m, t))
            est.append("" if r is None else f"{r.estimate:.{digits}f}{r.stars}")
            se.append("" if r is None else f"({r.se:.{digits}f})")
        table += [est, se]
    table.append(["R2"] + [f"{first[m]['r2']:.{digits}f}" for m in models])
    table.append(["N"] + [f"{int(first[m]['n']):,}" for m in models])
    widths = [max(len(row[c]) for row in table) for c in range(len(table[0]))]
    lines = ["  ".join(v.ljust(w) if c == 0 else v.rjust(w)
                       for c, (v, w) in enumerate(zip(row, widths))) for row in table]
    lines.append("* p<0.05, ** p<0.01, *** p<0.001")
    return "\n".join(lines) + "\n"
