import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segcurate.agreement import (
    ConfusionMatrix,
    agreement_csv,
    agreement_table,
    avg_pairwise_kappa,
    cohen_kappa,
    confusion,
    derive_training_sets,
    kappa,
    kappa_distribution,
    kappa_percentiles,
    read_agreement_csv,
    select_samples,
)
from segcurate.conditioning import ConditioningKind, apply_conditioning
from segcurate.mask_io import DatasetManifest, MaskError, SampleRecord

from .conftest import blobby_mask, masks
from .oracles import kappa_bruteforce


def pair_from_counts(tp, fp, fn, tn):
    """1-row masks (reference, comparison) with the given confusion cells."""
    a = [1] * tp + [0] * fp + [1] * fn + [0] * tn
    b = [1] * tp + [1] * fp + [0] * fn + [0] * tn
    return np.array([a], bool), np.array([b], bool)


A = np.array([[1, 1], [0, 0]], bool)
B = np.array([[1, 0], [0, 0]], bool)
C = np.array([[1, 1], [1, 0]], bool)


class TestConfusion:
    def test_identical_full(self):
        full = np.ones((2, 2), bool)
        assert confusion(full, full) == (4, 0, 0, 0)

    def test_full_vs_empty(self):
        assert confusion(np.ones((2, 2), bool), np.zeros((2, 2), bool)) == (0, 0, 4, 0)

    def test_hand_example(self):
        assert confusion(A, B) == ConfusionMatrix(1, 0, 1, 2)

    def test_shape_mismatch(self):
        with pytest.raises(MaskError):
            confusion(np.ones((2, 2), bool), np.ones((2, 3), bool))

    @settings(max_examples=50, deadline=None)
    @given(masks(max_side=10))
    def test_sums_to_pixel_count(self, m):
        cm = confusion(m, ~m)
        assert cm.total == m.size


class TestCohenKappa:
    def test_hand_example(self):
        # p_o = 0.75, p_e = 0.5
        assert cohen_kappa(ConfusionMatrix(1, 0, 1, 2)) == 0.5

    def test_identical(self, rng):
        m = rng.random((6, 6)) < 0.4
        assert kappa(m, m) == 1.0

    def test_balanced_complement(self):
        m = np.array([[1, 0], [0, 1]], bool)
        assert kappa(m, ~m) == -1.0

    @pytest.mark.parametrize("fill", [0, 1])
    def test_degenerate_identical(self, fill):
        m = np.full((3, 3), bool(fill))
        assert kappa(m, m) == 1.0

    def test_degenerate_rule_is_zero_when_disagreeing(self):
        # chance agreement 1 cannot coexist with disagreement on real masks;
        # the rule is exercised directly on the table
        assert cohen_kappa(ConfusionMatrix(0, 0, 0, 5)) == 1.0

    def test_empty_table(self):
        with pytest.raises(ValueError):
            cohen_kappa(ConfusionMatrix(0, 0, 0, 0))

    @pytest.mark.parametrize(
        "counts, expected",
        [((1, 1, 1, 4), 0.3), ((4, 1, 1, 9), 0.7), ((1, 0, 1, 2), 0.5)],
    )
    def test_exact_rational_values(self, counts, expected):
        a, b = pair_from_counts(*counts)
        assert confusion(a, b) == counts
        assert kappa(a, b) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(masks(max_side=10), st.data())
    def test_symmetric_bounded_and_matches_oracle(self, a, data):
        b = data.draw(st.builds(lambda bits: np.array(bits, bool).reshape(a.shape),
                                st.lists(st.booleans(), min_size=a.size, max_size=a.size)))
        k = kappa(a, b)
        assert -1.0 <= k <= 1.0
        assert k == pytest.approx(kappa(b, a), abs=1e-15)
        assert k == pytest.approx(kappa_bruteforce(a, b), abs=1e-12)


class TestAvgPairwise:
    def test_identical_masks(self, rng):
        m = blobby_mask(rng, (20, 20))
        rec = SampleRecord.from_masks("s", [m, m.copy(), m.copy()])
        for kind in ConditioningKind:
            assert avg_pairwise_kappa(rec, kind).kappa == 1.0

    def test_two_masks_is_the_pair(self):
        rec = SampleRecord.from_masks("s", [A, B])
        assert avg_pairwise_kappa(rec).kappa == kappa(A, B)

    def test_three_masks_hand_oracle(self):
        # kappa(A,B) = 0.5, kappa(A,C) = 0.5, kappa(B,C) = 0.2
        assert kappa(A, C) == pytest.approx(0.5)
        assert kappa(B, C) == pytest.approx(0.2)
        res = avg_pairwise_kappa(SampleRecord.from_masks("s", [A, B, C]))
        assert res.kappa == pytest.approx(0.4, abs=1e-15)
        assert res.n_masks == 3

    def test_order_invariant(self, rng):
        ms = [blobby_mask(rng, (24, 24)) for _ in range(4)]
        ref = avg_pairwise_kappa(SampleRecord.from_masks("s", ms), "opening").kappa
        for perm in itertools.permutations(ms):
            got = avg_pairwise_kappa(SampleRecord.from_masks("s", perm), "opening").kappa
            assert got == pytest.approx(ref, abs=1e-15)

    def test_conditioned_copies(self, rng):
        ms = [blobby_mask(rng, (30, 30)) for _ in range(3)]
        rec = SampleRecord.from_masks("s", ms)
        before = [m.copy() for m in ms]
        got = avg_pairwise_kappa(rec, "convexhull").kappa
        cond = [apply_conditioning(m, "convexhull") for m in ms]
        expected = np.mean([kappa_bruteforce(a, b) for a, b in itertools.combinations(cond, 2)])
        assert got == pytest.approx(expected, abs=1e-12)
        for m, b in zip(rec.masks, before):
            np.testing.assert_array_equal(m, b)

    def test_needs_two_masks(self):
        with pytest.raises(ValueError):
            avg_pairwise_kappa(SampleRecord.from_masks("s", [A]))


def _kappa_manifest():
    recs = []
    for sid, counts in (("k03", (1, 1, 1, 4)), ("k05", (1, 0, 1, 2)), ("k07", (4, 1, 1, 9))):
        recs.append(SampleRecord.from_masks(sid, pair_from_counts(*counts)))
    recs.append(SampleRecord.from_masks("single", [A]))
    return DatasetManifest("k", recs)


class TestSelect:
    def test_strict_threshold(self):
        best = select_samples(_kappa_manifest(), 0.5)
        assert best.sample_ids == ["k07"]

    def test_identical_masks_always_kept(self, rng):
        recs = [SampleRecord.from_masks(f"s{i}", [m, m]) for i, m in
                enumerate(blobby_mask(rng, (10, 10)) for _ in range(5))]
        man = DatasetManifest("x", recs)
        for t in (-1.0, 0.0, 0.5, 0.999):
            assert len(select_samples(man, t)) == 5

    def test_single_mask_records_excluded(self):
        assert "single" not in select_samples(_kappa_manifest(), -1.0).sample_ids

    def test_monotone_in_threshold(self):
        man = _kappa_manifest()
        prev = None
        for t in (-1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8):
            ids = set(select_samples(man, t).sample_ids)
            if prev is not None:
                assert ids <= prev
            prev = ids

    def test_uses_precomputed_scores(self):
        man = _kappa_manifest()
        best = select_samples(man, 0.5, {"k03": 0.9, "k05": 0.1, "k07": 0.2})
        assert best.sample_ids == ["k03"]


class TestDeriveTrainingSets:
    def test_best_split_is_filtered_all_split(self, rng):
        recs, scores = [], {}
        for i in range(200):
            m = blobby_mask(rng, (4, 4))
            recs.append(SampleRecord.from_masks(f"s{i:03d}", [m, m]))
            scores[f"s{i:03d}"] = float(rng.random())
        recs.append(SampleRecord.from_masks("lonely", [A]))
        sets = derive_training_sets(DatasetManifest("d", recs), 0.8, 2019, 0.5, scores)
        assert len(sets["all_train"]) == 160 and len(sets["all_val"]) == 40
        for part in ("train", "val"):
            expected = [s for s in sets[f"all_{part}"].sample_ids if scores[s] > 0.5]
            assert sets[f"best_{part}"].sample_ids == expected


class TestPercentiles:
    def test_single_score(self):
        assert kappa_percentiles([0.2], [0, 5, 50, 100]) == [0.2] * 4

    def test_midpoint(self):
        assert kappa_percentiles([0, 1], [50]) == [0.5]

    def test_against_numpy_linear(self, rng):
        for n in (2, 3, 10, 101):
            s = rng.random(n)
            pct = [0, 5, 25, 33.3, 50, 75, 99, 100]
            np.testing.assert_allclose(kappa_percentiles(s, pct), np.percentile(s, pct), atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=40))
    def test_monotone(self, scores):
        vals = kappa_percentiles(scores, range(0, 101, 5))
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            kappa_percentiles([], [50])
        with pytest.raises(ValueError):
            kappa_percentiles([0.1], [101])


class TestDistribution:
    def test_single_score(self):
        d = kappa_distribution([0.42], n_bins=10)
        assert d.counts.tolist() == [1]
        assert d.x.size == 256
        assert d.x[np.argmax(d.density)] == pytest.approx(0.42, abs=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=60), st.integers(1, 30))
    def test_counts_conserved(self, scores, bins):
        assert kappa_distribution(scores, bins).counts.sum() == len(scores)

    def test_bins_equal_width_over_range(self, rng):
        s = rng.random(100)
        d = kappa_distribution(s, 7)
        assert d.bin_edges[0] == s.min() and d.bin_edges[-1] == s.max()
        np.testing.assert_allclose(np.diff(d.bin_edges), (s.max() - s.min()) / 7)

    def test_density_integrates_to_one(self, rng):
        s = rng.uniform(0, 1, 500)
        d = kappa_distribution(s, 20)
        assert np.trapezoid(d.density, d.x) == pytest.approx(1.0, abs=0.01)

    def test_scott_bandwidth(self, rng):
        s = rng.normal(size=300)
        d = kappa_distribution(s)
        assert d.bandwidth == pytest.approx(300 ** -0.2 * np.std(s, ddof=1))

    def test_matches_scipy_kde(self, rng):
        from scipy.stats import gaussian_kde

        s = rng.beta(5, 2, 200)
        d = kappa_distribution(s)
        ref = gaussian_kde(s, bw_method="scott")(d.x)
        np.testing.assert_allclose(d.density, ref, rtol=1e-10, atol=1e-12)


class TestAgreementTable:
    def test_csv_round_trip(self, rng, tmp_path):
        recs = [SampleRecord.from_masks(f"s{i}", [blobby_mask(rng, (20, 20)) for _ in range(2 + i % 2)])
                for i in range(4)]
        recs.append(SampleRecord.from_masks("one", [A]))
        rows = agreement_table(DatasetManifest("m", recs))
        assert [r.sample_id for r in rows] == ["s0", "s1", "s2", "s3"]
        p = tmp_path / "a.csv"
        p.write_text(agreement_csv(rows))
        assert p.read_text().splitlines()[0] == "sample_id,n_masks,kappa_none,kappa_opening,kappa_convexhull"
        assert read_agreement_csv(p) == rows
