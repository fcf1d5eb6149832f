import io
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathloss_ml.metrics import (
    abs_error_by_frequency,
    bin_abs_error_by_distance,
    fspl,
    hex_assign,
    hex_center,
    hexbin,
    mae,
    pearson,
    r_squared,
    rmse,
)


def brute_rmse(p, t):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(p, t)) / len(p))


def brute_mae(p, t):
    return math.fsum(abs(a - b) for a, b in zip(p, t)) / len(p)


def brute_r2(p, t):
    m = math.fsum(t) / len(t)
    return 1 - math.fsum((b - a) ** 2 for a, b in zip(p, t)) / math.fsum((b - m) ** 2 for b in t)


def brute_pearson(x, y):
    mx, my = math.fsum(x) / len(x), math.fsum(y) / len(y)
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


class TestScalarMetrics:
    def test_small_examples(self):
        assert rmse([3.0, -4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5))
        assert mae([3.0, -4.0], [0.0, 0.0]) == 3.5
        assert r_squared([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]) == pytest.approx(0.5)
        assert pearson([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == pytest.approx(0.5)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 200), st.integers(0, 2**31))
    def test_brute_force(self, n, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(100, 20, n)
        t = rng.normal(100, 20, n)
        pl, tl = p.tolist(), t.tolist()
        assert rmse(p, t) == pytest.approx(brute_rmse(pl, tl), rel=1e-12, abs=1e-12)
        assert mae(p, t) == pytest.approx(brute_mae(pl, tl), rel=1e-12, abs=1e-12)
        assert r_squared(p, t) == pytest.approx(brute_r2(pl, tl), rel=1e-12, abs=1e-12)
        assert pearson(p, t) == pytest.approx(brute_pearson(pl, tl), rel=1e-12, abs=1e-12)

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            r_squared([1.0, 2.0], [3.0, 3.0])
        with pytest.raises(ValueError):
            pearson([1.0, 1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            rmse([], [])
        with pytest.raises(ValueError):
            mae([1.0], [1.0, 2.0])


class TestFspl:
    def test_reference_values(self):
        assert fspl(1.0, 1000.0) == pytest.approx(32.45)
        assert fspl(1000.0, 1000.0) == pytest.approx(92.45)

    def test_doubling_distance(self):
        assert fspl(915.0, 2000.0) - fspl(915.0, 1000.0) == pytest.approx(20 * math.log10(2))

    def test_vectorised(self):
        out = fspl(np.array([449.0, 915.0]), np.array([1000.0, 1000.0]))
        assert out.shape == (2,)

    @pytest.mark.parametrize("f,d", [(0.0, 1000.0), (900.0, 0.0), (-1.0, 5.0)])
    def test_rejects_non_positive(self, f, d):
        with pytest.raises(ValueError):
            fspl(f, d)


class TestBinnedError:
    def test_distance_bins_match_groupby(self, rng):
        n = 5000
        d = rng.uniform(0, 50_000, n)
        p = rng.normal(0, 5, n)
        t = rng.normal(0, 5, n)
        groups = defaultdict(list)
        for di, pi, ti in zip(d, p, t):
            groups[int(di // 3000)].append(abs(pi - ti))
        res = bin_abs_error_by_distance(d, p, t, 3000.0)
        keys = sorted(groups)
        assert (res.low / 3000).astype(int).tolist() == keys
        np.testing.assert_array_equal(res.high - res.low, 3000.0)
        for i, k in enumerate(keys):
            e = groups[k]
            m = math.fsum(e) / len(e)
            assert res.count[i] == len(e)
            assert res.mae[i] == pytest.approx(m, rel=1e-12)
            assert res.sd[i] == pytest.approx(math.sqrt(math.fsum((x - m) ** 2 for x in e) / len(e)), rel=1e-9)

    def test_edge_goes_to_upper_bin(self):
        res = bin_abs_error_by_distance([2999.0, 3000.0], [1.0, 2.0], [0.0, 0.0])
        assert res.low.tolist() == [0.0, 3000.0]

    def test_frequency(self):
        res = abs_error_by_frequency([915, 449, 915], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        assert res.keys.tolist() == [449.0, 915.0]
        assert res.count.tolist() == [1, 2]
        assert res.mae.tolist() == [2.0, 2.0]
        assert res.sd.tolist() == [0.0, 1.0]

    def test_csv(self):
        buf = io.StringIO()
        bin_abs_error_by_distance([100.0], [1.0], [0.0]).write_csv(buf)
        assert buf.getvalue().splitlines()[0] == "bin_low,bin_high,count,mae_db,sd_db"


class TestHexbin:
    def test_conserves_count(self, rng):
        n = 100_000
        x = rng.normal(120, 25, n)
        y = x + rng.normal(0, 8, n)
        grid = hexbin(x, y, 2.0)
        assert int(grid.count.sum()) == n
        assert np.all(grid.count > 0)
        assert len({(int(a), int(b)) for a, b in zip(grid.q, grid.r)}) == len(grid)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 50.0))
    def test_assignment_is_nearest_centre(self, seed, size):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-500, 500, 200)
        y = rng.uniform(-500, 500, 200)
        q, r = hex_assign(x, y, size)
        cx, cy = hex_center(q, r, size)
        dist = np.hypot(x - cx, y - cy)
        # brute force over a neighbourhood of candidate cells
        qq = np.round(x / (1.5 * size)).astype(int)
        best = np.full(x.shape, np.inf)
        for dq in range(-2, 3):
            for dr in range(-3, 4):
                cq = qq + dq
                cr = np.round(y / (np.sqrt(3) * size) - cq / 2).astype(int) + dr
                bx, by = hex_center(cq, cr, size)
                best = np.minimum(best, np.hypot(x - bx, y - by))
        np.testing.assert_allclose(dist, best, rtol=1e-12, atol=1e-9)

    def test_centre_maps_to_itself(self):
        q = np.array([0, 1, -3, 7])
        r = np.array([0, -2, 5, 1])
        x, y = hex_center(q, r, 3.0)
        aq, ar = hex_assign(x, y, 3.0)
        assert aq.tolist() == q.tolist() and ar.tolist() == r.tolist()

    def test_empty_and_bad_size(self):
        assert len(hexbin([], [], 1.0)) == 0
        with pytest.raises(ValueError):
            hexbin([1.0], [1.0], 0.0)

    def test_csv_header(self):
        buf = io.StringIO()
        hexbin([0.0, 0.1], [0.0, 0.0], 1.0).write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "q,r,center_x,center_y,count"
        assert lines[1].endswith(",2")
