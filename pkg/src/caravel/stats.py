"""Cohort statistics: rank correlation, group tests, effect sizes, FDR."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as sps

from .features import FEATURE_COLUMNS
from .pipeline import format_cell, read_csv, write_csv

_FEATURE_SET = frozenset(FEATURE_COLUMNS)

RESULT_COLUMNS = [
    "test",
    "variable",
    "feature",
    "scope",
    "n",
    "statistic",
    "p",
    "effect_type",
    "effect",
    "q",
    "flags",
]


# ---------------------------------------------------------------------------
# elementary tests


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p_value: float
    n: int
    flags: tuple[str, ...] = ()


def spearman(x, y) -> SpearmanResult:
    """Rank correlation with tie-averaged ranks and a t-approximation p."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two equal-length 1-D vectors")
    n = x.size
    if n < 3:
        raise ValueError("spearman needs at least 3 pairs")
    rx = sps.rankdata(x, method="average")
    ry = sps.rankdata(y, method="average")
    sx = rx - rx.mean()
    sy = ry - ry.mean()
    denom = math.sqrt(float(sx @ sx) * float(sy @ sy))
    if denom == 0.0:
        return SpearmanResult(math.nan, math.nan, n, ("constant_input",))
    rho = float(sx @ sy) / denom
    rho = min(1.0, max(-1.0, rho))
    if 1.0 - rho * rho <= 0.0:
        return SpearmanResult(rho, 0.0, n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = min(1.0, 2.0 * float(sps.t.sf(abs(t), n - 2)))
    return SpearmanResult(rho, p, n)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_value: float
    cohens_d: float
    df: float
    n_a: int
    n_b: int
    flags: tuple[str, ...] = ()


def ttest_ind(a, b) -> TTestResult:
    """Welch t-test; Cohen's d keeps the conventional pooled SD."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least 2 observations")
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    diff = float(a.mean() - b.mean())
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if diff == 0.0:
            return TTestResult(0.0, 1.0, 0.0, math.nan, na, nb, ("zero_variance",))
        sign = math.copysign(1.0, diff)
        return TTestResult(
            sign * math.inf, 0.0, sign * math.inf, math.nan, na, nb, ("zero_variance",)
        )
    t = diff / math.sqrt(se2)
    df = se2 * se2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = min(1.0, 2.0 * float(sps.t.sf(abs(t), df)))
    pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    d = diff / math.sqrt(pooled) if pooled > 0.0 else math.copysign(math.inf, diff)
    return TTestResult(t, p, d, df, na, nb)


@dataclass(frozen=True)
class AnovaResult:
    f: float
    p_value: float
    eta2: float
    omega2: float
    n: int
    k: int
    flags: tuple[str, ...] = ()


def anova_oneway(groups) -> AnovaResult:
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(arrays) < 2:
        raise ValueError("anova needs at least 2 groups")
    if any(g.size < 2 for g in arrays):
        raise ValueError("each group needs at least 2 observations")
    n = sum(g.size for g in arrays)
    k = len(arrays)
    grand = sum(float(g.sum()) for g in arrays) / n
    ssb = sum(g.size * (float(g.mean()) - grand) ** 2 for g in arrays)
    ssw = sum(float(((g - g.mean()) ** 2).sum()) for g in arrays)
    sst = ssb + ssw
    df_b, df_w = k - 1, n - k
    if sst == 0.0:
        return AnovaResult(0.0, 1.0, 0.0, 0.0, n, k, ("zero_variance",))
    if ssw == 0.0:
        return AnovaResult(math.inf, 0.0, 1.0, 1.0, n, k, ("zero_within_variance",))
    ms_w = ssw / df_w
    f = (ssb / df_b) / ms_w
    p = float(sps.f.sf(f, df_b, df_w))
    eta2 = ssb / sst
    omega2 = (ssb - df_b * ms_w) / (sst + ms_w)
    flags: tuple[str, ...] = ()
    if omega2 < 0.0:
        omega2 = 0.0
        flags = ("omega2_clamped",)
    return AnovaResult(f, p, eta2, omega2, n, k, flags)


def quartile_groups(values) -> np.ndarray:
    """Assign each value to 0..3 by the 25/50/75 percentiles; ties go low."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 4:
        raise ValueError("quartile grouping needs at least 4 values")
    if np.unique(arr).size < 4:
        raise ValueError("quartile grouping needs at least 4 distinct values")
    cuts = np.quantile(arr, [0.25, 0.5, 0.75])
    # side="left" sends values sitting exactly on a cut to the lower group
    return np.searchsorted(cuts, arr, side="left").astype(np.int64)


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values, input order preserved."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("expected a 1-D vector of p-values")
    if p.size == 0:
        return p.copy()
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m, dtype=np.float64)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


# ---------------------------------------------------------------------------
# protocol over a cohort table


@dataclass(frozen=True)
class CohortTable:
    """Feature CSV joined to demographics, one row per subject."""

    columns: tuple[str, ...]
    rows: tuple[dict, ...]

    @classmethod
    def from_csv(cls, path) -> "CohortTable":
        columns, rows = read_csv(path)
        if "subject_id" not in columns:
            raise ValueError("cohort table needs a subject_id column")
        return cls(tuple(columns), tuple(rows))

    def feature_columns(self) -> list[str]:
        return [c for c in self.columns if c.split("@", 1)[0] in _FEATURE_SET]

    def variable_columns(self) -> list[str]:
        skip = set(self.feature_columns()) | {"subject_id", "region_id"}
        return [c for c in self.columns if c not in skip]

    def column(self, name: str) -> list:
        return [row.get(name) for row in self.rows]


@dataclass(frozen=True)
class StatResult:
    test_name: str
    variable: str
    feature: str
    scope: str
    n_used: int
    statistic: float | None
    p_value: float | None
    effect_type: str
    effect_size: float | None
    q_value: float | None = None
    flags: tuple[str, ...] = ()


def _feature_scope(column: str) -> str:
    if "@" in column:
        return "region:" + column.split("@", 1)[1]
    return "global"


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def classify_variable(values) -> str:
    """numeric / binary / categorical / constant / empty from observed cells."""
    seen = set()
    for v in values:
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        seen.add(v)
    if not seen:
        return "empty"
    if len(seen) == 1:
        return "constant"
    if len(seen) == 2:
        return "binary"
    if all(_is_number(v) for v in seen):
        return "numeric"
    return "categorical"


def _pairwise(rows, variable: str, feature: str):
    """Rows where both cells are present; NaNs count as missing."""
    var_vals, feat_vals = [], []
    for row in rows:
        v, f = row.get(variable), row.get(feature)
        if v is None or f is None or not _is_number(f):
            continue
        f = float(f)
        if math.isnan(f) or (isinstance(v, float) and math.isnan(v)):
            continue
        var_vals.append(v)
        feat_vals.append(f)
    return var_vals, feat_vals


def _skipped(test, variable, feature, scope, n, effect_type, reason) -> StatResult:
    return StatResult(
        test_name=test,
        variable=variable,
        feature=feature,
        scope=scope,
        n_used=n,
        statistic=None,
        p_value=None,
        effect_type=effect_type,
        effect_size=None,
        flags=("skipped", reason),
    )


def _numeric_tests(variable, feature, scope, var_vals, feat_vals) -> list[StatResult]:
    out = []
    n = len(var_vals)
    x = np.asarray(var_vals, dtype=np.float64)
    y = np.asarray(feat_vals, dtype=np.float64)

    if n < 3:
        out.append(_skipped("spearman", variable, feature, scope, n, "r", "too_few_pairs"))
    else:
        res = spearman(x, y)
        if math.isnan(res.rho):
            out.append(
                _skipped("spearman", variable, feature, scope, n, "r", "constant_input")
            )
        else:
            out.append(
                StatResult(
                    "spearman", variable, feature, scope, n,
                    statistic=res.rho, p_value=res.p_value,
                    effect_type="r", effect_size=res.rho, flags=res.flags,
                )
            )

    try:
        assignment = quartile_groups(x)
    except ValueError:
        out.append(
            _skipped("quartile_anova", variable, feature, scope, n, "eta2", "too_few_distinct")
        )
        return out
    groups = [y[assignment == g] for g in range(4)]
    kept = [g for g in groups if g.size >= 2]
    flags: tuple[str, ...] = ("small_groups_dropped",) if len(kept) < len(groups) else ()
    if len(kept) < 2:
        out.append(
            _skipped("quartile_anova", variable, feature, scope, n, "eta2", "too_few_groups")
        )
        return out
    res = anova_oneway(kept)
    out.append(
        StatResult(
            "quartile_anova", variable, feature, scope, res.n,
            statistic=res.f, p_value=res.p_value,
            effect_type="eta2", effect_size=res.eta2, flags=flags + res.flags,
        )
    )
    return out


def _binary_test(variable, feature, scope, var_vals, feat_vals) -> StatResult:
    y = np.asarray(feat_vals, dtype=np.float64)
    levels = sorted({v for v in var_vals}, key=str)
    n = len(var_vals)
    if len(levels) < 2:
        return _skipped("welch_t", variable, feature, scope, n, "d", "single_level")
    mask_a = np.asarray([v == levels[0] for v in var_vals])
    a, b = y[mask_a], y[~mask_a]
    if a.size < 2 or b.size < 2:
        return _skipped("welch_t", variable, feature, scope, n, "d", "too_few_per_group")
    res = ttest_ind(a, b)
    return StatResult(
        "welch_t", variable, feature, scope, n,
        statistic=res.t, p_value=res.p_value,
        effect_type="d", effect_size=res.cohens_d, flags=res.flags,
    )


def _categorical_test(variable, feature, scope, var_vals, feat_vals) -> StatResult:
    y = np.asarray(feat_vals, dtype=np.float64)
    levels = sorted({v for v in var_vals}, key=str)
    n = len(var_vals)
    if len(levels) < 2:
        return _skipped("anova", variable, feature, scope, n, "omega2", "single_level")
    groups = [y[np.asarray([v == lvl for v in var_vals])] for lvl in levels]
    kept = [g for g in groups if g.size >= 2]
    flags: tuple[str, ...] = ("small_groups_dropped",) if len(kept) < len(groups) else ()
    if len(kept) < 2:
        return _skipped("anova", variable, feature, scope, n, "omega2", "too_few_groups")
    res = anova_oneway(kept)
    return StatResult(
        "anova", variable, feature, scope, res.n,
        statistic=res.f, p_value=res.p_value,
        effect_type="omega2", effect_size=res.omega2, flags=flags + res.flags,
    )


def _tests_for(kind, variable, feature, scope, rows) -> list[StatResult]:
    var_vals, feat_vals = _pairwise(rows, variable, feature)
    n = len(var_vals)
    if kind == "numeric":
        return _numeric_tests(variable, feature, scope, var_vals, feat_vals)
    if kind == "binary":
        return [_binary_test(variable, feature, scope, var_vals, feat_vals)]
    if kind == "categorical":
        return [_categorical_test(variable, feature, scope, var_vals, feat_vals)]
    # constant/empty columns still get a placeholder so counts stay stable
    return [_skipped("anova", variable, feature, scope, n, "omega2", kind + "_variable")]


def run_protocol(
    table: CohortTable,
    variables: list[str] | None = None,
    features: list[str] | None = None,
    stratify_by_site: bool = False,
    exclude_sites: tuple[str, ...] = (),
    site_column: str = "site",
) -> list[StatResult]:
    """Test every (variable, feature) pair and attach BH q-values.

    Variable types decide the tests: numeric columns get a Spearman
    correlation plus a one-way ANOVA across quartile groups of the
    variable, two-level columns get a Welch t-test with Cohen's d, and
    multi-level columns get a one-way ANOVA with omega-squared.  The BH
    correction runs separately inside each (test, variable, site) family.
    Underpowered pairs come back flagged "skipped" instead of failing so
    stratified runs keep one result slot per pair.
    """
    if not table.rows:
        raise ValueError("cohort table has no rows")
    rows = list(table.rows)
    if exclude_sites:
        banned = {str(s) for s in exclude_sites}
        rows = [r for r in rows if _site_of(r, site_column) not in banned]
        if not rows:
            raise ValueError("every row was excluded by site")
    if variables is None:
        variables = table.variable_columns()
    if features is None:
        features = table.feature_columns()
    unknown = [c for c in list(variables) + list(features) if c not in table.columns]
    if unknown:
        raise ValueError(f"unknown columns: {unknown}")

    # classify on the full table so stratified runs pick identical tests
    kinds = {v: classify_variable([r.get(v) for r in rows]) for v in variables}

    if stratify_by_site:
        sites = sorted({s for s in (_site_of(r, site_column) for r in rows) if s is not None})
        if not sites:
            raise ValueError(f"no usable values in the {site_column!r} column")
        batches = [(s, [r for r in rows if _site_of(r, site_column) == s]) for s in sites]
    else:
        batches = [(None, rows)]

    results: list[StatResult] = []
    for site, batch in batches:
        for variable in variables:
            for feature in features:
                scope = _feature_scope(feature)
                if site is not None:
                    scope = f"{scope}|site:{site}"
                results.extend(_tests_for(kinds[variable], variable, feature, scope, batch))
    return _attach_q_values(results, site_marker="|site:")


def _site_of(row, site_column: str):
    value = row.get(site_column)
    return None if value is None else format_cell(value)


def _attach_q_values(results: list[StatResult], site_marker: str) -> list[StatResult]:
    families: dict[tuple, list[int]] = {}
    for i, res in enumerate(results):
        if res.p_value is None:
            continue
        site = res.scope.split(site_marker, 1)[1] if site_marker in res.scope else None
        families.setdefault((res.test_name, res.variable, site), []).append(i)
    out = list(results)
    for indices in families.values():
        qs = bh_fdr([out[i].p_value for i in indices])
        for i, q in zip(indices, qs):
            out[i] = replace(out[i], q_value=float(q))
    return out


def results_to_rows(results: list[StatResult]) -> list[dict]:
    rows = []
    for res in results:
        rows.append(
            {
                "test": res.test_name,
                "variable": res.variable,
                "feature": res.feature,
                "scope": res.scope,
                "n": res.n_used,
                "statistic": res.statistic,
                "p": res.p_value,
                "effect_type": res.effect_type,
                "effect": res.effect_size,
                "q": res.q_value,
                "flags": ";".join(res.flags) if res.flags else None,
            }
        )
    return rows


def write_results(path, results: list[StatResult]) -> None:
    write_csv(path, RESULT_COLUMNS, results_to_rows(results))
