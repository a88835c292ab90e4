import itertools
import json
import math

import numpy as np
import pytest
import scipy.stats as ss
from hypothesis import given, settings
from hypothesis import strategies as st

from hypseg import taxonomy as tx
from hypseg.errors import DataError, DegenerateError, EmptySetError, GeometryError
from hypseg.evalstats import metrics as mt
from hypseg.evalstats import stats as st_
from hypseg.evalstats import tables as tb
from hypseg.volume import LabelMap, Volume

from oracles import brute_auroc, brute_avd, brute_dice, brute_ranksum_p, brute_signedrank_p

masks = st.integers(0, 2 ** 32 - 1).map(
    lambda s: np.random.default_rng(s).uniform(size=(2, 6, 6, 6)) < np.random.default_rng(s + 1).uniform(0.05, 0.6))


# ----------------------------------------------------------------- metrics

@given(masks)
def test_dice_matches_counting(ab):
    a, b = ab
    assert mt.dice(a, b) == brute_dice(a, b)


@given(masks, st.tuples(*[st.sampled_from([0.5, 1.0, 1.5, 3.0])] * 3))
def test_avd_matches_pairwise(ab, sp):
    a, b = ab
    if not a.any() or not b.any():
        return
    aff = np.diag(list(sp) + [1.0])
    got = mt.avd(Volume(a, aff), Volume(b, aff))
    assert abs(got - brute_avd(a, b, sp)) < 1e-9


def test_avd_oblique_affine_uses_world_distance(rng):
    a = rng.uniform(size=(5, 5, 5)) < 0.3
    b = rng.uniform(size=(5, 5, 5)) < 0.3
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    aff = np.eye(4)
    aff[:3, :3] = q * 1.5
    # rigid rotation of an isotropic grid preserves distances
    assert abs(mt.avd(Volume(a, aff), Volume(b, aff)) - brute_avd(a, b, (1.5, 1.5, 1.5))) < 1e-9


def test_avd_variants_and_errors():
    a = np.zeros((5, 5, 5), bool)
    b = np.zeros((5, 5, 5), bool)
    a[0, 0, 0] = True
    b[0, 0, 0] = b[0, 0, 3] = True
    assert mt.avd(a, b) == 1.5
    assert mt.avd(a, b, symmetric_mean=True) == 0.75
    assert mt.avd(a, a) == 0.0
    with pytest.raises(EmptySetError):
        mt.avd(a, np.zeros_like(a))


def test_dice_conventions():
    z = np.zeros((2, 2, 2))
    assert mt.dice(z, z) == 1.0
    with pytest.raises(GeometryError):
        mt.dice(z, np.zeros((2, 2, 3)))
    with pytest.raises(GeometryError):
        mt.dice(Volume(z), Volume(z, np.diag([2.0, 1, 1, 1])))


def test_surface_of_cube():
    m = np.zeros((5, 5, 5), bool)
    m[1:4, 1:4, 1:4] = True
    s = mt.surface(m)
    assert s.sum() == 26 and not s[2, 2, 2]
    assert mt.surface(np.ones((3, 3, 3), bool)).sum() == 26  # grid edge counts as background


def test_region_volumes_and_metrics():
    ids = np.zeros((6, 6, 6), dtype=int)
    ids[:2] = 101
    ids[4:] = 110
    lm = LabelMap.from_array(ids, affine=np.diag([0.5, 0.5, 2.0, 1.0]))
    vols = mt.region_volumes(lm, [101, 110, 105])
    assert vols == {101: 72 * 0.5, 110: 72 * 0.5, 105: 0.0}
    rows = {r["region"]: r for r in mt.region_metrics(lm, lm)}
    assert set(rows) == {tx.SUBREGION_NAMES[i] for i in tx.SUBREGION_IDS} | set(tx.REGION_GROUPS)
    assert rows["whole"]["dice"] == 1.0 and rows["whole"]["avd_mm"] == 0.0
    assert math.isnan(rows[tx.SUBREGION_NAMES[105]]["avd_mm"])
    assert rows["whole"]["volume_mm3"] == 72.0


# -------------------------------------------------------------- rank tests

def test_auroc_oracle_small():
    assert st_.auroc([1, 2, 3], [2, 3, 4]) == brute_auroc([1, 2, 3], [2, 3, 4]) == 7 / 9


def test_auroc_identical_and_complement(rng):
    x = rng.normal(size=9)
    assert st_.auroc(x, x) == 0.5
    y = rng.normal(size=7)
    assert abs(st_.auroc(x, y) + st_.auroc(y, x) - 1.0) < 1e-12


@given(st.lists(st.integers(0, 6), min_size=1, max_size=8), st.lists(st.integers(0, 6), min_size=1, max_size=8))
def test_auroc_matches_pair_count(neg, pos):
    assert abs(st_.auroc(neg, pos) - brute_auroc(neg, pos)) < 1e-12


def test_ranksum_exact_examples():
    assert st_.ranksum_test([1, 2], [3, 4], "exact") == (3.0, pytest.approx(1 / 3, abs=1e-15))


def test_signedrank_exact_examples():
    w, p = st_.signedrank_test([(2, 1), (4, 2), (7, 4)], "exact")
    assert w == 6.0 and p == 0.25


@settings(max_examples=30)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=6), st.lists(st.integers(0, 5), min_size=1, max_size=6))
def test_ranksum_exact_matches_enumeration(x, y):
    p = st_.ranksum_test(x, y, "exact")[1]
    assert abs(p - brute_ranksum_p(np.array(x, float), np.array(y, float))) < 1e-12


@settings(max_examples=30)
@given(st.lists(st.integers(-4, 4), min_size=1, max_size=9))
def test_signedrank_exact_matches_enumeration(d):
    if not any(d):
        with pytest.raises(DegenerateError):
            st_.signedrank_test([(v, 0) for v in d], "exact")
        return
    p = st_.signedrank_test([(v, 0) for v in d], "exact")[1]
    assert abs(p - brute_signedrank_p(d)) < 1e-12


def test_ranksum_matches_scipy(rng):
    x, y = rng.normal(size=8), rng.normal(0.5, size=7)
    assert abs(st_.ranksum_test(x, y, "exact")[1] - ss.mannwhitneyu(x, y, method="exact").pvalue) < 1e-12
    x, y = rng.normal(size=40), rng.normal(0.3, size=35)
    ref = ss.mannwhitneyu(x, y, method="asymptotic", use_continuity=True).pvalue
    assert abs(st_.ranksum_test(x, y, "approx")[1] - ref) < 1e-12


def test_signedrank_matches_scipy(rng):
    d = rng.normal(0.3, size=10)
    pairs = np.column_stack([d, np.zeros_like(d)])
    assert abs(st_.signedrank_test(pairs, "exact")[1] - ss.wilcoxon(d, method="exact").pvalue) < 1e-12


def test_auto_mode_threshold(rng):
    x = rng.normal(size=6)
    y = rng.normal(size=6)
    assert st_.ranksum_test(x, y)[1] == st_.ranksum_test(x, y, "exact")[1]
    x = rng.normal(size=20)
    assert st_.ranksum_test(x, y)[1] == st_.ranksum_test(x, y, "approx")[1]


def test_approx_close_to_exact_without_ties():
    worst = 0.0
    vals = np.arange(10.0)
    for idx in itertools.combinations(range(10), 5):
        mask = np.zeros(10, bool)
        mask[list(idx)] = True
        a = st_.ranksum_test(vals[mask], vals[~mask], "exact")[1]
        b = st_.ranksum_test(vals[mask], vals[~mask], "approx")[1]
        worst = max(worst, abs(a - b))
    assert worst < 0.02


def test_subset_counts_small():
    # subsets of {1,2,3}: sums 0,1,2,3,3,4,5,6
    assert st_.subset_sum_counts(np.array([1, 2, 3])).tolist() == [1, 1, 1, 2, 1, 1, 1]
    assert st_.subset_sum_counts(np.array([1, 2, 3]), 2).tolist() == [0, 0, 0, 1, 1, 1, 0]


def test_rank_errors():
    with pytest.raises(DataError):
        st_.ranksum_test([], [1])
    with pytest.raises(DataError):
        st_.ranksum_test([np.nan], [1])
    with pytest.raises(DataError):
        st_.signedrank_test([1, 2, 3])


# ------------------------------------------------------------------ DeLong

def test_delong_self_comparison():
    s = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2]
    y = [0, 0, 1, 1, 1, 0]
    a, b, z, p = st_.delong_test(s, s, y)
    assert a == b and z == 0.0 and p == 1.0


def test_delong_auc_and_variance_against_reference(rng):
    # reference: DeLong variance of a single AUC via placement values, written out by hand
    y = np.r_[np.zeros(12), np.ones(9)].astype(int)
    sa = rng.normal(size=21) + y
    sb = sa + rng.normal(scale=0.8, size=21)
    aucs, S = st_.delong_covariance(sa, sb, y.astype(bool))
    pos, neg = sa[y == 1], sa[y == 0]
    v10 = np.array([np.mean([1.0 if p > n else 0.5 if p == n else 0 for n in neg]) for p in pos])
    v01 = np.array([np.mean([1.0 if p > n else 0.5 if p == n else 0 for p in pos]) for n in neg])
    assert abs(aucs[0] - brute_auroc(neg, pos)) < 1e-12
    assert abs(S[0, 0] - (v10.var(ddof=1) / 9 + v01.var(ddof=1) / 12)) < 1e-12
    _, _, z, p = st_.delong_test(sa, sb, y)
    assert abs(p - 2 * ss.norm.sf(abs(z))) < 1e-12


def test_delong_errors():
    with pytest.raises(DataError):
        st_.delong_test([1, 2], [1, 2], [1, 1])
    with pytest.raises(DataError):
        st_.delong_test([1, 2], [1, 2], [0, 2])


# -------------------------------------------------------------------- misc

def test_pearson_and_bonferroni(rng):
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert abs(st_.pearson(x, y) - ss.pearsonr(x, y)[0]) < 1e-12
    with pytest.raises(DegenerateError):
        st_.pearson([1, 1, 1], [1, 2, 3])
    assert st_.bonferroni([0.01, 0.2, 0.5]) == [0.03, pytest.approx(0.6), 1.0]
    with pytest.raises(DataError):
        st_.bonferroni([1.5])


# ------------------------------------------------------------------ tables

def _table(n=6, shift=0.0, seed=0):
    rng = np.random.default_rng(seed)
    cohorts = tuple(["control"] * n + ["patient"] * n)
    vols = rng.normal(100, 5, (2 * n, 2))
    vols[n:] *= 0.8
    vols += shift
    return tb.GroupTable(tuple(f"s{i}" for i in range(2 * n)), cohorts, ("a", "b"), vols,
                         rng.uniform(1.4e6, 1.6e6, 2 * n))


def test_csv_roundtrip(tmp_path):
    t = _table()
    tb.write_group_csv(tmp_path / "t.csv", t)
    u = tb.read_group_csv(tmp_path / "t.csv")
    assert u.subjects == t.subjects and u.regions == t.regions
    assert np.array_equal(u.volumes, t.volumes) and np.array_equal(u.tiv, t.tiv)


@pytest.mark.parametrize("body,row", [
    ("subject,cohort,tiv\n", 1),
    ("subject,cohort,tiv_mm3,a_mm3\ns0,control,1e6\n", 2),
    ("subject,cohort,tiv_mm3,a_mm3\ns0,control,1e6,1\ns1,alien,1e6,1\n", 3),
    ("subject,cohort,tiv_mm3,a_mm3\ns0,control,1e6,x\n", 2),
    ("subject,cohort,tiv_mm3,a_mm3\ns0,control,0,1\n", 2),
    ("subject,cohort,tiv_mm3,a_mm3\n", 2),
])
def test_csv_errors_report_row(tmp_path, body, row):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(tb.CsvFormatError) as e:
        tb.read_group_csv(p)
    assert e.value.row == row and str(e.value).startswith(f"row {row}:")


def test_tiv_normalize():
    t = _table()
    n = tb.tiv_normalize(t)
    assert np.allclose(n.volumes * t.tiv[:, None], t.volumes) and n.normalized


def test_stats_report_detects_shrinkage(tmp_path):
    rows = tb.stats_report(_table(n=10))
    for r in rows:
        assert r["auroc"] > 0.9 and r["ranksum_p_bonferroni"] < 0.05
        assert r["ranksum_p_bonferroni"] == min(1.0, 2 * r["ranksum_p"])
    tb.write_report(rows, tmp_path / "r.csv", tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [r["region"] for r in doc["regions"]] == ["a", "b"]


def test_stats_report_paired():
    t = _table(n=8)
    rows = tb.stats_report(t, paired=t)
    for r in rows:
        assert r["delong_p"] == 1.0 and r["signedrank_p"] is None
    rows = tb.stats_report(t, paired=_table(n=8, shift=3.0, seed=1))
    assert all(0 <= r["signedrank_p"] <= 1 for r in rows)


def test_stats_report_needs_both_cohorts():
    t = _table(n=3)
    one = tb.GroupTable(t.subjects, ("control",) * 6, t.regions, t.volumes, t.tiv)
    with pytest.raises(DataError):
        tb.stats_report(one)
