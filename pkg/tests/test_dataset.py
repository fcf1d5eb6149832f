import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathloss_ml.dataset import (
    NO_HOLDOUT,
    FeatureTable,
    LabelLaw,
    LinkSample,
    Normalizer,
    Scenario,
    build_scenarios,
    dumps_samples,
    filter_noise,
    fit_normalizer,
    gen_synthetic,
    parse_samples,
    read_feature_csv,
    split,
    split_indices,
    subsample,
    write_feature_csv,
)
from pathloss_ml.errors import ParseError, ValidationError
from pathloss_ml.features import extract_features

from conftest import flat_profile, random_profile


def _sample(path_loss=100.0, floor=None, group="A", f=915.0):
    return LinkSample(flat_profile(f=f), path_loss, group, floor)


class TestSampleIO:
    @pytest.mark.parametrize("fmt", ["jsonl", "csv-long"])
    def test_roundtrip(self, rng, fmt):
        samples = [
            LinkSample(random_profile(rng), float(rng.uniform(80, 160)), g,
                       None if i % 2 else float(rng.uniform(150, 200)))
            for i, g in enumerate("ABCAB")
        ]
        back = parse_samples(io.StringIO(dumps_samples(samples, fmt)), fmt)
        assert len(back) == len(samples)
        for a, b in zip(samples, back):
            assert a.group == b.group
            assert a.measured_path_loss_db == b.measured_path_loss_db
            assert a.noise_floor_db == b.noise_floor_db
            np.testing.assert_array_equal(a.profile.dsm_m, b.profile.dsm_m)
            np.testing.assert_array_equal(a.profile.dtm_m, b.profile.dtm_m)
            assert a.profile.spacing_m == b.profile.spacing_m

    def test_malformed_json_names_line(self):
        good = dumps_samples([_sample()])
        text = good + "{not json\n"
        with pytest.raises(ParseError, match="line 2"):
            parse_samples(io.StringIO(text))

    def test_missing_field_names_line(self):
        rec = json.loads(dumps_samples([_sample()]))
        del rec["frequency_mhz"]
        text = dumps_samples([_sample()]) * 2 + json.dumps(rec) + "\n"
        with pytest.raises(ParseError, match="line 3.*frequency_mhz"):
            parse_samples(io.StringIO(text))

    def test_invalid_profile_names_line(self):
        rec = json.loads(dumps_samples([_sample()]))
        rec["dsm_m"][3] = -5.0
        with pytest.raises(ValidationError, match="line 1"):
            parse_samples(io.StringIO(json.dumps(rec) + "\n"))

    def test_csv_long_inconsistent_scalars(self):
        text = dumps_samples([_sample()], "csv-long").splitlines()
        fields = text[3].split(",")
        fields[2] = "1800.0"  # frequency changes mid-link
        text[3] = ",".join(fields)
        with pytest.raises(ValidationError, match="line 4"):
            parse_samples(io.StringIO("\n".join(text) + "\n"), "csv-long")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            parse_samples(io.StringIO(""), "xml")

    def test_blank_lines_skipped(self):
        text = "\n" + dumps_samples([_sample()]) + "\n\n"
        assert len(parse_samples(io.StringIO(text))) == 1


class TestFeatureTable:
    def test_csv_roundtrip_exact(self, rng):
        samples = [LinkSample(random_profile(rng), float(rng.uniform(80, 160)), g) for g in "XYZX"]
        table = FeatureTable.from_samples(samples)
        buf = io.StringIO()
        write_feature_csv(table, buf)
        back = read_feature_csv(io.StringIO(buf.getvalue()))
        np.testing.assert_array_equal(back.features, table.features)
        np.testing.assert_array_equal(back.path_loss_db, table.path_loss_db)
        assert back.group_labels() == ["X", "Y", "Z"]

    def test_bad_header(self):
        with pytest.raises(ParseError):
            read_feature_csv(io.StringIO("a,b,c\n"))

    def test_bad_value_names_line(self):
        text = "group,f1,f2,f3,f4,f5,f6,f7,f8,path_loss_db\nA,1,2,3,4,5,6,7,8,9\nA,1,2,x,4,5,6,7,8,9\n"
        with pytest.raises(ParseError, match="line 3"):
            read_feature_csv(io.StringIO(text))


class TestFilterNoise:
    def test_margin(self):
        # the floor is the largest measurable path loss; 6 dB margin below it
        near = _sample(path_loss=100.0, floor=103.0)
        far = _sample(path_loss=100.0, floor=107.0)
        unknown = _sample(path_loss=100.0)
        assert filter_noise([near, far, unknown], 6.0) == [far, unknown]

    def test_boundary_excluded(self):
        assert filter_noise([_sample(100.0, 106.0)], 6.0) == []

    def test_negative_margin_rejected(self):
        with pytest.raises(ValueError):
            filter_noise([], -1.0)


class TestSubsample:
    def _pool(self):
        return [_sample(float(i), group=g, f=f) for i, (g, f) in
                enumerate([(g, f) for g in "AB" for f in (449.0, 915.0) for _ in range(10)])]

    def test_caps_each_stratum(self):
        out = subsample(self._pool(), 3, seed=1)
        assert len(out) == 12
        keys = [(s.group, s.profile.frequency_mhz) for s in out]
        assert all(keys.count(k) == 3 for k in set(keys))

    def test_preserves_order_and_is_seeded(self):
        pool = self._pool()
        out = subsample(pool, 4, seed=7)
        pos = [pool.index(s) for s in out]
        assert pos == sorted(pos)
        assert out == subsample(pool, 4, seed=7)
        assert out != subsample(pool, 4, seed=8)

    def test_small_strata_kept_whole(self):
        pool = self._pool()
        assert subsample(pool, 100, seed=0) == pool


class TestSplit:
    @pytest.mark.parametrize("n,expected", [(100, (80, 20)), (5, (4, 1)), (2, (1, 1)), (3, (2, 1))])
    def test_sizes(self, n, expected):
        tr, va = split_indices(n, 0.8, seed=0)
        assert (len(tr), len(va)) == expected

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 500), st.integers(0, 2**31))
    def test_partition(self, n, seed):
        tr, va = split_indices(n, 0.8, seed)
        assert np.intersect1d(tr, va).size == 0
        np.testing.assert_array_equal(np.sort(np.concatenate([tr, va])), np.arange(n))

    def test_deterministic_and_seed_dependent(self):
        a = split_indices(1000, 0.8, 3)
        b = split_indices(1000, 0.8, 3)
        c = split_indices(1000, 0.8, 4)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], c[0])

    def test_on_lists_and_tables(self):
        items = list(range(10))
        tr, va = split(items, 0.8, 1)
        assert sorted(tr + va) == items
        table = FeatureTable(["a"] * 10, np.arange(80.0).reshape(10, 8), np.arange(10.0))
        ttr, tva = split(table, 0.8, 1)
        assert ttr.path_loss_db.tolist() == tr and tva.path_loss_db.tolist() == va

    @pytest.mark.parametrize("n,frac", [(1, 0.8), (10, 0.0), (10, 1.0)])
    def test_rejects(self, n, frac):
        with pytest.raises(ValueError):
            split_indices(n, frac, 0)


class TestNormalizer:
    def test_zero_mean_unit_sd(self, rng):
        x = rng.normal(50.0, 7.0, (300, 8)) * rng.uniform(1, 1000, 8)
        z = fit_normalizer(x).apply(x)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-9)

    def test_constant_column_named(self):
        x = np.ones((5, 8))
        x[:, 0] = np.arange(5)
        with pytest.raises(ValidationError, match="f2"):
            fit_normalizer(x)

    def test_dict_roundtrip(self):
        n = Normalizer(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        m = Normalizer.from_dict(json.loads(json.dumps(n.to_dict())))
        np.testing.assert_array_equal(m.mean, n.mean)
        np.testing.assert_array_equal(m.sd, n.sd)

    def test_column_mismatch(self):
        with pytest.raises(ValidationError):
            Normalizer(np.zeros(2), np.ones(2)).apply(np.zeros((3, 4)))


class TestScenarios:
    def test_six_groups(self):
        groups = ["A", "B", "C", "D", "E", "F"]
        sc = build_scenarios(groups)
        assert len(sc) == 7
        for s, g in zip(sc, groups):
            assert s.test_groups == {g}
            assert s.train_groups == set(groups) - {g}
            assert not s.external_test
        assert sc[-1].name == NO_HOLDOUT and sc[-1].external_test
        assert sc[-1].train_groups == set(groups)

    def test_two_groups(self):
        assert len(build_scenarios(["A", "B"])) == 3

    @pytest.mark.parametrize("groups", [["A"], [], ["A", "B", "A"]])
    def test_rejects(self, groups):
        with pytest.raises(ValidationError):
            build_scenarios(groups)

    def test_overlap_rejected(self):
        with pytest.raises(ValidationError):
            Scenario("x", frozenset({"A", "B"}), frozenset({"B"}))


class TestSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(30, seed=5, noise_sd_db=2.0)
        b = gen_synthetic(30, seed=5, noise_sd_db=2.0)
        assert [s.measured_path_loss_db for s in a] == [s.measured_path_loss_db for s in b]
        assert all(np.array_equal(x.profile.dsm_m, y.profile.dsm_m) for x, y in zip(a, b))

    def test_noise_does_not_change_profiles(self):
        a = gen_synthetic(20, seed=5, noise_sd_db=0.0)
        b = gen_synthetic(20, seed=5, noise_sd_db=3.0)
        assert all(np.array_equal(x.profile.dsm_m, y.profile.dsm_m) for x, y in zip(a, b))

    def test_noiseless_follows_law(self):
        law = LabelLaw(f3_db_per_m=0.1, f5_db=4.0, f7_db=5.0, f7_scale_m=300.0)
        for s in gen_synthetic(40, seed=2, label_law=law):
            f = extract_features(s.profile)
            expected = (
                32.45 + 20 * np.log10(f.f2_distance_m / 1000) + 20 * np.log10(f.f1_frequency_mhz)
                + 0.1 * f.f3_total_depth_m + 4.0 * np.log10(1 + f.f5_block_count)
                + 5.0 * np.exp(-f.f7_min_edge_dist_m / 300.0)
            )
            assert s.measured_path_loss_db == pytest.approx(expected, abs=1e-9)

    def test_ranges_and_groups(self):
        samples = gen_synthetic(120, seed=1)
        d = np.array([s.profile.distance_m for s in samples])
        assert d.min() >= 250 * (1 - 1e-9) and d.max() <= 50_000 * (1 + 1e-9)
        assert len({s.group for s in samples}) == 6
        obstructed = sum(extract_features(s.profile).f5_block_count > 0 for s in samples)
        assert 0 < obstructed < len(samples)

    def test_custom_groups(self):
        samples = gen_synthetic(6, seed=0, groups=["u", "v"])
        assert [s.group for s in samples] == ["u", "v"] * 3
