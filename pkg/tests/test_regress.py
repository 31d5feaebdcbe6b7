import numpy as np
import pandas as pd
import pytest

from dindex.errors import DegenerateError, ModelError, SeparationError
from dindex.regress import (ModelSpec, breusch_pagan, cooks_distance, detect_separation,
                            logit_fit, model_rows, ols_fit, predict_group_means,
                            render_model_table, skew_kurt_normality, stars, vif)


# independent closed-form oracles ----------------------------------------

def ols_oracle(X, y):
    """Normal equations plus explicit HC1 sandwich; X includes the intercept."""
    n, k = X.shape
    xtx_inv = np.linalg.inv(X.T @ X)
    b = xtx_inv @ X.T @ y
    e = y - X @ b
    s2 = e @ e / (n - k)
    meat = sum(np.outer(X[i], X[i]) * e[i] ** 2 for i in range(n))
    hc1 = xtx_inv @ meat @ xtx_inv * n / (n - k)
    r2 = 1 - e @ e / ((y - y.mean()) @ (y - y.mean()))
    return b, np.sqrt(np.diag(s2 * xtx_inv)), np.sqrt(np.diag(hc1)), r2


def cooks_oracle(X, y):
    """Cook's D by definition: shift of all fitted values when row i is left out."""
    n, k = X.shape
    b = np.linalg.lstsq(X, y, rcond=None)[0]
    e = y - X @ b
    s2 = e @ e / (n - k)
    out = []
    for i in range(n):
        keep = np.arange(n) != i
        bi = np.linalg.lstsq(X[keep], y[keep], rcond=None)[0]
        d = X @ b - X @ bi
        out.append(d @ d / (k * s2))
    return np.array(out)


def frame(X, y):
    df = pd.DataFrame(X, columns=[f"x{j}" for j in range(X.shape[1])])
    df["y"] = y
    df["id"] = [f"r{i}" for i in range(len(y))]
    return df


def spec_for(X, **kw):
    return ModelSpec("y", tuple(f"x{j}" for j in range(X.shape[1])), **kw)


# OLS ------------------------------------------------------------------

def test_exact_line():
    x = np.arange(10.0)
    fit = ols_fit(frame(x[:, None], 1 + 2 * x), ModelSpec("y", ("x0",)))
    np.testing.assert_allclose(fit.coef, [2.0, 1.0], atol=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.terms == ["x0", "const"]


def test_binary_predictor_is_group_difference():
    rng = np.random.default_rng(0)
    g = rng.integers(0, 2, 300).astype(float)
    y = rng.normal(size=300) + 0.7 * g
    fit = ols_fit(frame(g[:, None], y), ModelSpec("y", ("x0",)))
    assert abs(fit.coef[0] - (y[g == 1].mean() - y[g == 0].mean())) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_matches_closed_form(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 5))
    y = X @ rng.normal(size=5) + rng.normal(size=200) * (1 + np.abs(X[:, 0]))
    fit = ols_fit(frame(X, y), spec_for(X))
    b, se, hc1, r2 = ols_oracle(np.column_stack([X, np.ones(200)]), y)
    np.testing.assert_allclose(fit.coef, b, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(fit.se_classical, se, rtol=1e-8)
    np.testing.assert_allclose(fit.se, hc1, rtol=1e-8)
    assert fit.r2 == pytest.approx(r2, rel=1e-8)


def test_residuals_orthogonal_and_scale_invariance():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 3))
    y = X.sum(axis=1) + rng.normal(size=100)
    fit = ols_fit(frame(X, y), spec_for(X))
    scale = np.abs(fit.X).max() * np.abs(fit.residuals).max() * len(y)
    assert np.all(np.abs(fit.X.T @ fit.residuals) <= 1e-8 * scale)
    X2 = X.copy()
    X2[:, 1] = 10 * X2[:, 1] + 3
    fit2 = ols_fit(frame(X2, y), spec_for(X2))
    assert fit2.r2 == pytest.approx(fit.r2, rel=1e-12)
    assert fit2.coef[1] == pytest.approx(fit.coef[1] / 10, rel=1e-10)


def test_hc1_equals_classical_under_equal_squared_residuals():
    # residuals +-1 orthogonal to a balanced +-1 design
    x = np.array([1, 1, -1, -1] * 5, dtype=float)
    e = np.array([1, -1, 1, -1] * 5, dtype=float)
    fit = ols_fit(frame(x[:, None], 2 + 3 * x + e), ModelSpec("y", ("x0",)))
    np.testing.assert_allclose(np.abs(fit.residuals), 1.0, atol=1e-12)
    n, k = 20, 2
    # HC1 with e_i^2 = s2 (n-k)/n per row reduces to the classical form
    np.testing.assert_allclose(fit.se, fit.se_classical, rtol=1e-10)
    assert fit.s2 == pytest.approx(20 / (n - k))


def test_listwise_deletion_and_exclusion():
    df = pd.DataFrame({"id": list("abcdef"), "y": [1, 2, np.nan, 4, 5, 7],
                       "x": [1, 2, 3, 4, np.nan, 6]})
    fit = ols_fit(df, ModelSpec("y", ("x",), exclude_rows=("a",)))
    assert fit.n == 3 and fit.excluded == 1 and fit.dropped == 2
    assert list(fit.ids) == ["b", "d", "f"]


def test_missing_column_named():
    with pytest.raises(ModelError, match="ghost"):
        ols_fit(pd.DataFrame({"y": [1.0, 2.0, 3.0]}), ModelSpec("y", ("ghost",)))


def test_collinear_columns_named():
    x = np.arange(10.0)
    df = pd.DataFrame({"y": x ** 2, "a": x, "b": 2 * x})
    with pytest.raises(ModelError, match="b"):
        ols_fit(df, ModelSpec("y", ("a", "b")))


def test_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec("y", ("x", "x"))
    with pytest.raises(ModelError):
        ModelSpec("y", ("y",))


def test_deterministic():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 2))
    df = frame(X, rng.normal(size=50))
    a, b = ols_fit(df, spec_for(X)), ols_fit(df, spec_for(X))
    assert a.coef.tobytes() == b.coef.tobytes() and a.se.tobytes() == b.se.tobytes()


# logit ----------------------------------------------------------------

def table_frame(a, b, c, d):
    """2x2 counts: a = (x=1,y=1), b = (x=1,y=0), c = (x=0,y=1), d = (x=0,y=0)."""
    x = [1] * (a + b) + [0] * (c + d)
    y = [1] * a + [0] * b + [1] * c + [0] * d
    return pd.DataFrame({"id": range(len(x)), "x": x, "y": y})


def test_cross_product_ratio():
    fit = logit_fit(table_frame(8, 2, 4, 6), ModelSpec("y", ("x",)))
    assert fit.odds_ratios[0] == pytest.approx(6.0, rel=1e-6)
    assert np.abs(fit.gradient).max() <= 1e-6
    assert 0 <= fit.pseudo_r2 < 1
    assert fit.converged


def test_independent_predictor_gives_unit_odds():
    fit = logit_fit(table_frame(5, 5, 5, 5), ModelSpec("y", ("x",)))
    assert fit.odds_ratios[0] == pytest.approx(1.0, abs=1e-12)


def test_separation_raises():
    df = pd.DataFrame({"id": range(8), "x": [1, 2, 3, 4, 5, 6, 7, 8], "y": [0] * 4 + [1] * 4})
    with pytest.raises(SeparationError):
        logit_fit(df, ModelSpec("y", ("x",)))
    X = np.column_stack([df.x, np.ones(8)])
    assert detect_separation(X, df.y.to_numpy(float))
    df.loc[0, "y"] = 1
    assert not detect_separation(X, df.y.to_numpy(float))


def test_logit_outcome_must_be_binary():
    with pytest.raises(ModelError):
        logit_fit(pd.DataFrame({"id": [1, 2, 3], "x": [1, 2, 3], "y": [0, 1, 2]}),
                  ModelSpec("y", ("x",)))


# diagnostics ----------------------------------------------------------

def test_vif_cases():
    a = np.array([1, -1, 1, -1, 1, -1, 1, -1], float)
    b = np.array([1, 1, -1, -1, 1, 1, -1, -1], float)
    v = vif(pd.DataFrame({"a": a, "b": b}), ["a", "b"])
    assert v == {"a": pytest.approx(1.0), "b": pytest.approx(1.0)}
    assert vif(pd.DataFrame({"a": a, "b": a}), ["a", "b"])["a"] == float("inf")


def test_vif_from_correlation():
    rng = np.random.default_rng(3)
    u, w = rng.normal(size=(2, 500))
    a = u
    b = 0.8 * u + 0.6 * w
    r = np.corrcoef(a, b)[0, 1]
    v = vif(pd.DataFrame({"a": a, "b": b}), ["a", "b"])
    assert v["a"] == pytest.approx(1 / (1 - r ** 2), rel=1e-10)
    assert v["b"] == pytest.approx(v["a"], rel=1e-10)


def test_breusch_pagan_matches_lm_formula():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(150, 2))
    y = X @ [1.0, -1.0] + rng.normal(size=150)
    fit = ols_fit(frame(X, y), spec_for(X))
    Z = np.column_stack([X, np.ones(150)])
    e2 = fit.residuals ** 2
    g = np.linalg.solve(Z.T @ Z, Z.T @ e2)
    lm = 150 * (1 - ((e2 - Z @ g) ** 2).sum() / ((e2 - e2.mean()) ** 2).sum())
    bp = breusch_pagan(fit)
    assert bp.statistic == pytest.approx(lm, rel=1e-8)
    assert bp.df == 2


def test_breusch_pagan_degenerate_on_exact_fit():
    x = np.arange(12.0)
    fit = ols_fit(frame(x[:, None], 3 * x - 1), ModelSpec("y", ("x0",)))
    with pytest.raises(DegenerateError):
        breusch_pagan(fit)


def test_cooks_matches_leave_one_out():
    rng = np.random.default_rng(5)
    for n in (8, 15, 30):
        X = rng.normal(size=(n, 2))
        y = X @ [0.5, 2.0] + rng.normal(size=n)
        cd = cooks_distance(ols_fit(frame(X, y), spec_for(X)))
        np.testing.assert_allclose(cd.distance, cooks_oracle(np.column_stack([X, np.ones(n)]),
                                                             y), rtol=1e-10)
        assert cd.cutoff == 4 / n


def test_cooks_outlier_and_duplicates():
    x = np.arange(20.0)
    y = 1 + 0.5 * x + np.sin(x) * 0.1
    y[7] += 25
    cd = cooks_distance(ols_fit(frame(x[:, None], y), ModelSpec("y", ("x0",))))
    assert int(np.argmax(cd.distance)) == 7
    assert "r7" in cd.flagged
    xd = np.array([0, 1, 2, 3, 3, 4, 5.0])
    yd = np.array([0.1, 0.9, 2.2, 2.5, 2.5, 4.3, 4.8])
    d = cooks_distance(ols_fit(frame(xd[:, None], yd), ModelSpec("y", ("x0",)))).distance
    assert d[3] == pytest.approx(d[4], rel=1e-12)


def test_normality_symmetric_and_power():
    v = np.concatenate([np.linspace(-3, 3, 401), -np.linspace(-3, 3, 401)])
    assert skew_kurt_normality(v).skewness == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(6)
    assert skew_kurt_normality(rng.exponential(size=5000)).p_value < 1e-10
    with pytest.raises(ModelError):
        skew_kurt_normality([1.0, 2.0, 3.0])


# predictions and tables -------------------------------------------------

def test_group_means_noise_free_and_intercept_only():
    g = np.array([0, 0, 1, 1, 1], float)
    df = pd.DataFrame({"id": list("abcde"), "g": g, "y": 2 + 3 * g})
    pm = predict_group_means(ols_fit(df, ModelSpec("y", ("g",))), df, "g")
    np.testing.assert_allclose(pm["mean"], [2.0, 5.0])
    df["y"] = [1.0, 2.0, 3.0, 4.0, 6.0]
    pm = predict_group_means(ols_fit(df, ModelSpec("y")), df, "g")
    assert pm["mean"].nunique() == 1


def test_stars_and_rows():
    assert [stars(p) for p in (0.0005, 0.005, 0.03, 0.2)] == ["***", "**", "*", ""]
    rng = np.random.default_rng(7)
    df = pd.DataFrame({"id": range(60), "m": rng.integers(0, 2, 60), "y": rng.normal(size=60)})
    rows = pd.DataFrame(model_rows(ols_fit(df, ModelSpec("y", ("m",), name="Y"))))
    assert list(rows.columns) == ["model", "term", "estimate", "se", "p", "stars", "n", "r2"]
    text = render_model_table(rows)
    assert "Y" in text and "(" in text and "60" in text
    est = rows.set_index("term").loc["m", "estimate"]
    assert f"{est:.5f}" in text
