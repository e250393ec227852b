import numpy as np
import pytest

from battbid.econometrics import (
    SeriesFrame,
    decompose_da,
    downsample_to_blocks,
    durbin_watson,
    fit_fcr,
    fit_ols,
    id_spreads,
    load_series_csv,
    residual_load_quantile_flags,
)
from battbid.errors import DataError


def hourly_frame(n_hours, da=None, id_=None, fcr=None, rl=None, ttf=None, co2=None):
    ts = np.datetime64("2022-01-01T00", "h") + np.arange(n_hours)
    z = np.zeros(n_hours)
    return SeriesFrame(
        timestamps=ts,
        da_price=z if da is None else np.asarray(da, float),
        id_price=z if id_ is None else np.asarray(id_, float),
        fcr_price=np.ones(n_hours) if fcr is None else np.asarray(fcr, float),
        residual_load=z if rl is None else np.asarray(rl, float),
        ttf_gas=z if ttf is None else np.asarray(ttf, float),
        co2=z if co2 is None else np.asarray(co2, float),
        resolution="h",
    )


def block_frame(n_blocks, **cols):
    ts = np.datetime64("2022-01-01T00", "h") + 4 * np.arange(n_blocks)
    z = np.zeros(n_blocks)
    defaults = dict(da_price=z, id_price=z, fcr_price=np.ones(n_blocks),
                    residual_load=z, ttf_gas=z, co2=z)
    defaults.update({k: np.asarray(v, float) for k, v in cols.items()})
    return SeriesFrame(timestamps=ts, resolution="4h", **defaults)


# -- downsampling -----------------------------------------------------------

def test_downsample_simple_mean():
    f = hourly_frame(4, da=[10, 20, 30, 40])
    g = downsample_to_blocks(f)
    assert g.resolution == "4h"
    assert g.da_price == pytest.approx([25.0])


def test_downsample_constant_is_identity():
    f = hourly_frame(24, da=np.full(24, 7.5), id_=np.full(24, -3.0))
    g = downsample_to_blocks(f)
    assert np.all(g.da_price == 7.5)
    assert np.all(g.id_price == -3.0)
    assert len(g) == 6


def test_downsample_sine_matches_hand_average():
    hours = np.arange(24)
    da = np.sin(2 * np.pi * hours / 24)
    f = hourly_frame(24, da=da)
    g = downsample_to_blocks(f)
    expected = [np.mean(da[4 * b:4 * b + 4]) for b in range(6)]
    assert g.da_price == pytest.approx(expected, abs=1e-12)


def test_downsample_fcr_passes_through_block_value():
    fcr = np.repeat([11.0, 13.0, 17.0, 19.0, 23.0, 29.0], 4)
    g = downsample_to_blocks(hourly_frame(24, fcr=fcr))
    assert g.fcr_price == pytest.approx([11, 13, 17, 19, 23, 29])


def test_downsample_rejects_ragged_length():
    with pytest.raises(DataError):
        downsample_to_blocks(hourly_frame(26))


def test_frame_rejects_gaps():
    ts = np.datetime64("2022-01-01T00", "h") + np.array([0, 1, 3])
    with pytest.raises(DataError):
        SeriesFrame(timestamps=ts, da_price=np.zeros(3), id_price=np.zeros(3),
                    fcr_price=np.ones(3), residual_load=np.zeros(3),
                    ttf_gas=np.zeros(3), co2=np.zeros(3), resolution="h")


# -- OLS ---------------------------------------------------------------------

def test_ols_perfect_fit():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    y = 1.5 * X[:, 0] - 2.0 * X[:, 1] + 4.0
    fit = fit_ols(X, y)
    assert fit.residuals == pytest.approx(np.zeros(30), abs=1e-10)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.coefficients == pytest.approx([1.5, -2.0])
    assert fit.intercept == pytest.approx(4.0)


def test_ols_exact_line():
    x = np.array([1.0, 2.0, 3.0])
    y = 2.0 * x + 3.0
    fit = fit_ols(x[:, None], y)
    assert fit.coefficients[0] == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(3.0)


def test_ols_matches_normal_equations_oracle():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 3))
    y = rng.normal(size=50)
    fit = fit_ols(X, y)
    Z = np.column_stack([np.ones(50), X])
    beta = np.linalg.solve(Z.T @ Z, Z.T @ y)
    assert fit.intercept == pytest.approx(beta[0], abs=1e-8)
    assert fit.coefficients == pytest.approx(beta[1:], abs=1e-8)


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 4))
    y = X @ np.array([1.0, -1.0, 0.5, 2.0]) + rng.normal(size=200) * 3
    fit = fit_ols(X, y)
    r = fit.residuals
    assert abs(r.mean()) <= 1e-9 * max(1.0, np.abs(y).max())
    for j in range(4):
        col = X[:, j]
        assert abs(r @ col) <= 1e-6 * np.linalg.norm(col) * max(np.linalg.norm(r), 1.0)
    assert fit.adjusted_r2 <= fit.r2


def test_ols_rank_deficient_names_columns():
    rng = np.random.default_rng(9)
    x = rng.normal(size=50)
    X = np.column_stack([x, 2 * x, rng.normal(size=50)])
    with pytest.raises(DataError, match="rank deficient"):
        fit_ols(X, rng.normal(size=50), names=["a", "a_doubled", "b"])


def test_durbin_watson_iid_near_two():
    rng = np.random.default_rng(123)
    X = rng.normal(size=(600, 2))
    y = X @ np.array([1.0, 2.0]) + rng.normal(size=600)
    fit = fit_ols(X, y)
    assert 1.5 <= fit.durbin_watson <= 2.5


def test_durbin_watson_autocorrelated_is_low():
    rng = np.random.default_rng(5)
    e = np.zeros(800)
    for t in range(1, 800):
        e[t] = 0.9 * e[t - 1] + rng.normal() * 0.3
    assert durbin_watson(e) < 0.5


# -- DA decomposition ---------------------------------------------------------

def test_decompose_da_exact_linear_response():
    rng = np.random.default_rng(11)
    n = 60
    ttf = rng.uniform(50, 150, n)
    rl = rng.uniform(2e4, 6e4, n)
    co2 = rng.uniform(60, 90, n)
    da = 0.5 * ttf + 0.01 * rl
    f = block_frame(n, da_price=da, ttf_gas=ttf, residual_load=rl, co2=co2)
    det, sto, fit = decompose_da(f)
    assert sto == pytest.approx(np.zeros(n), abs=1e-8)
    assert det + sto == pytest.approx(da, abs=1e-9)


def test_decompose_reconstruction_identity_with_noise():
    rng = np.random.default_rng(12)
    n = 90
    f = block_frame(
        n,
        da_price=rng.normal(200, 40, n),
        ttf_gas=rng.uniform(50, 150, n),
        residual_load=rng.uniform(2e4, 6e4, n),
        co2=rng.uniform(60, 90, n),
    )
    det, sto, _ = decompose_da(f)
    np.testing.assert_allclose(det + sto, f.da_price, rtol=0, atol=1e-9)


def test_decompose_recovers_coefficients_within_three_se():
    rng = np.random.default_rng(13)
    n = 400
    sigma = 5.0
    ttf = rng.uniform(50, 150, n)
    rl = rng.uniform(2e4, 6e4, n)
    co2 = rng.uniform(60, 90, n)
    true = np.array([0.8, 0.3, 0.004])
    da = 10 + true[0] * ttf + true[1] * co2 + true[2] * rl + rng.normal(0, sigma, n)
    f = block_frame(n, da_price=da, ttf_gas=ttf, residual_load=rl, co2=co2)
    _, _, fit = decompose_da(f)
    Z = np.column_stack([np.ones(n), ttf, co2, rl])
    se = sigma * np.sqrt(np.diag(np.linalg.inv(Z.T @ Z)))
    assert abs(fit.coefficients[0] - true[0]) <= 3 * se[1]
    assert abs(fit.coefficients[1] - true[1]) <= 3 * se[2]
    assert abs(fit.coefficients[2] - true[2]) <= 3 * se[3]


# -- quantile flags -----------------------------------------------------------

def test_quantile_flags_order_statistics():
    low, high = residual_load_quantile_flags(np.arange(1.0, 11.0), q=0.10)
    assert low.tolist() == [1] + [0] * 9
    assert high.tolist() == [0] * 9 + [1]


def test_quantile_flags_constant_vector():
    low, high = residual_load_quantile_flags(np.full(7, 3.0), q=0.10)
    assert np.all(low == 1) and np.all(high == 1)


def test_quantile_flags_interpolation_rule():
    low, high = residual_load_quantile_flags(np.arange(1.0, 9.0), q=0.25)
    assert low.tolist() == [1, 1, 0, 0, 0, 0, 0, 0]
    assert high.tolist() == [0, 0, 0, 0, 0, 0, 1, 1]


# -- FCR log model -------------------------------------------------------------

def test_fit_fcr_exact_log_linear():
    n = 48
    rl = np.tile(np.linspace(0, 100, 12), 4)
    f = block_frame(n, residual_load=rl)
    low, high = residual_load_quantile_flags(f.residual_load, q=0.10)
    price = np.exp(1.0 + 0.5 * high)
    f = block_frame(n, residual_load=rl, fcr_price=price)
    fit = fit_fcr(f, low, high)
    assert fit.residuals == pytest.approx(np.zeros(n), abs=1e-10)
    assert np.exp(fit.fitted) == pytest.approx(price)
    assert fit.coefficients[fit.names.index("high_rl")] == pytest.approx(0.5)


def test_fit_fcr_rejects_nonpositive_prices():
    f = block_frame(12, fcr_price=np.array([1.0] * 11 + [0.0]))
    low = np.zeros(12, int)
    with pytest.raises(DataError, match="positive"):
        fit_fcr(f, low, low)


def test_fit_fcr_block_dummies_recovered():
    rng = np.random.default_rng(21)
    n_days = 80
    n = n_days * 6
    pattern = np.array([0.0, 0.2, 0.4, 0.1, -0.2, 0.3])
    rl = rng.uniform(0, 1, n)
    logp = 2.0 + np.tile(pattern, n_days) + rng.normal(0, 0.05, n)
    f = block_frame(n, fcr_price=np.exp(logp), residual_load=rl)
    low, high = residual_load_quantile_flags(rl)
    fit = fit_fcr(f, low, high)
    for i, fblock in enumerate(range(2, 7)):
        assert fit.coefficients[i] == pytest.approx(pattern[fblock - 1], abs=0.1)


# -- intraday spreads ----------------------------------------------------------

def days_frame(n_days, id_price, da_ref=None):
    n = n_days * 6
    f = block_frame(n, id_price=id_price)
    ref = np.zeros(n) if da_ref is None else da_ref
    return f, ref


def test_id_spreads_zero_spread():
    f, ref = days_frame(10, id_price=np.zeros(60))
    dist = id_spreads(f, np.zeros(10, int), ref, n_clusters=1)
    assert dist.levels == pytest.approx(np.zeros((1, 3)))


def test_id_spreads_three_point_sample():
    vals = np.concatenate([np.full(100, -10.0), np.zeros(100), np.full(100, 10.0)])
    f, ref = days_frame(50, id_price=vals)
    dist = id_spreads(f, np.zeros(50, int), ref, n_clusters=1)
    assert dist.levels[0] == pytest.approx([-10.0, 0.0, 10.0])
    assert dist.probabilities == pytest.approx([0.15, 0.70, 0.15])


def test_id_spreads_cluster_shift_preserved():
    rng = np.random.default_rng(3)
    n_days = 40
    labels = np.array([0, 1] * (n_days // 2))
    base = rng.normal(0, 1, n_days * 6)
    shift = np.repeat(np.where(labels == 0, 0.0, 25.0), 6)
    f, ref = days_frame(n_days, id_price=base + shift)
    dist = id_spreads(f, labels, ref, n_clusters=2)
    assert dist.levels[1][1] - dist.levels[0][1] == pytest.approx(25.0, abs=1.0)
    assert np.all(np.diff(dist.levels, axis=1) >= 0)


def test_id_spreads_small_cluster_pools():
    f, ref = days_frame(12, id_price=np.arange(72.0))
    labels = np.array([0] * 11 + [1])
    with pytest.warns(UserWarning, match="pooled"):
        dist = id_spreads(f, labels, ref, n_clusters=2)
    assert 1 in dist.pooled_clusters
    pooled = [np.percentile(np.arange(72.0), 15), np.mean(np.arange(72.0)),
              np.percentile(np.arange(72.0), 85)]
    assert dist.levels[1] == pytest.approx(pooled)


def test_id_spreads_jarque_bera_rejects_heavy_tails():
    rng = np.random.default_rng(99)
    heavy = rng.standard_t(df=3, size=2000) * 10
    f, ref = days_frame(2000 // 6 + 1, id_price=np.resize(heavy, (2000 // 6 + 1) * 6))
    n_days = 2000 // 6 + 1
    dist = id_spreads(f, np.zeros(n_days, int), ref, n_clusters=1)
    stat, pvalue = dist.jarque_bera()[0]
    assert pvalue < 0.01


# -- CSV ingestion --------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    prices = tmp_path / "prices.csv"
    fund = tmp_path / "fundamentals.csv"
    prices.write_text(
        "timestamp,da_eur_mwh,id_eur_mwh,fcr_eur_mw\n"
        "2022-01-01T00:00:00,100.5,98.0,12.0\n"
        "2022-01-01T01:00:00,101.5,99.0,12.0\n")
    fund.write_text(
        "timestamp,residual_load_mw,ttf_eur_mwh,co2_eur_t\n"
        "2022-01-01T00:00:00,40000,80,75\n"
        "2022-01-01T01:00:00,41000,81,76\n")
    frame = load_series_csv(prices, fund)
    assert frame.resolution == "h"
    assert frame.da_price == pytest.approx([100.5, 101.5])
    assert frame.residual_load == pytest.approx([40000, 41000])


def test_csv_missing_column(tmp_path):
    p = tmp_path / "prices.csv"
    p.write_text("timestamp,da_eur_mwh\n2022-01-01T00:00:00,1\n")
    f = tmp_path / "fund.csv"
    f.write_text("timestamp,residual_load_mw,ttf_eur_mwh,co2_eur_t\n"
                 "2022-01-01T00:00:00,1,1,1\n")
    with pytest.raises(DataError, match="missing columns"):
        load_series_csv(p, f)


def test_csv_mismatched_timestamps(tmp_path):
    p = tmp_path / "prices.csv"
    p.write_text("timestamp,da_eur_mwh,id_eur_mwh,fcr_eur_mw\n2022-01-01T00:00:00,1,1,1\n")
    f = tmp_path / "fund.csv"
    f.write_text("timestamp,residual_load_mw,ttf_eur_mwh,co2_eur_t\n"
                 "2022-01-02T00:00:00,1,1,1\n")
    with pytest.raises(DataError, match="same timestamps"):
        load_series_csv(p, f)
