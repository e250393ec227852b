"""Price decomposition and diagnostics.

Historical day-ahead and reserve-capacity prices are separated into a
fundamentals-driven deterministic part and a stochastic residual by OLS:
the day-ahead model regresses price on gas, carbon and residual load,
the capacity-price model regresses the log price on block-of-day dummies
and scarcity flags derived from residual-load quantiles.  Intraday
prices are treated as spreads against the reconstructed day-ahead price
and summarized per cluster as three discrete levels (15th percentile,
mean, 85th percentile).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DataError
from .markets import BLOCKS_PER_DAY

HOURS_PER_BLOCK = 4

PRICE_COLUMNS = ("da_eur_mwh", "id_eur_mwh", "fcr_eur_mw")
FUNDAMENTAL_COLUMNS = ("residual_load_mw", "ttf_eur_mwh", "co2_eur_t")


@dataclass
class SeriesFrame:
    """Aligned market price and fundamentals series.

    ``resolution`` is ``"h"`` (hourly) or ``"4h"`` (one row per block).
    The capacity price is constant within a block; in hourly frames it is
    simply repeated.
    """

    timestamps: np.ndarray
    da_price: np.ndarray
    id_price: np.ndarray
    fcr_price: np.ndarray
    residual_load: np.ndarray
    ttf_gas: np.ndarray
    co2: np.ndarray
    resolution: str = "h"

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        for name in ("da_price", "id_price", "fcr_price", "residual_load",
                     "ttf_gas", "co2"):
            col = getattr(self, name)
            if len(col) != n:
                raise DataError(f"column {name} has length {len(col)}, expected {n}")
        if n == 0:
            raise DataError("empty series")
        step = np.timedelta64(1 if self.resolution == "h" else HOURS_PER_BLOCK, "h")
        diffs = np.diff(self.timestamps)
        if len(diffs) and not np.all(diffs == step):
            raise DataError("timestamps must be strictly increasing and gap-free "
                            f"at {self.resolution} resolution")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def hours(self) -> np.ndarray:
        return (self.timestamps.astype("datetime64[h]")
                - self.timestamps[0].astype("datetime64[D]").astype("datetime64[h]")
                ).astype(int)

    def block_index(self) -> np.ndarray:
        """Block 1..6 of each row, from the hour of day."""
        hour_of_day = (self.timestamps.astype("datetime64[h]").astype(int)) % 24
        return hour_of_day // HOURS_PER_BLOCK + 1

    def day_index(self) -> np.ndarray:
        """Day number 1.. relative to the first row's calendar day."""
        days = self.timestamps.astype("datetime64[D]").astype(int)
        return days - days[0] + 1


def downsample_to_blocks(frame: SeriesFrame) -> SeriesFrame:
    """Reduce an hourly frame to four-hour blocks.

    Energy prices and fundamentals become block means; the capacity price
    is already a block quantity and passes through unchanged.
    """
    if frame.resolution != "h":
        raise DataError("frame is not hourly")
    n = len(frame)
    if n % HOURS_PER_BLOCK != 0:
        raise DataError(f"hourly series length {n} is not divisible by {HOURS_PER_BLOCK}")
    hour_of_day = frame.timestamps.astype("datetime64[h]").astype(int) % 24
    if hour_of_day[0] % HOURS_PER_BLOCK != 0:
        raise DataError("hourly series must start on a block boundary")

    def block_mean(col: np.ndarray) -> np.ndarray:
        return col.reshape(-1, HOURS_PER_BLOCK).mean(axis=1)

    return SeriesFrame(
        timestamps=frame.timestamps[::HOURS_PER_BLOCK],
        da_price=block_mean(frame.da_price),
        id_price=block_mean(frame.id_price),
        fcr_price=frame.fcr_price[::HOURS_PER_BLOCK].copy(),
        residual_load=block_mean(frame.residual_load),
        ttf_gas=block_mean(frame.ttf_gas),
        co2=block_mean(frame.co2),
        resolution="4h",
    )


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------

@dataclass
class OlsFit:
    names: list[str]
    coefficients: np.ndarray
    intercept: float
    fitted: np.ndarray
    residuals: np.ndarray
    r2: float
    adjusted_r2: float
    durbin_watson: float

    def predict(self, design: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(design, dtype=float) @ self.coefficients


def fit_ols(design: np.ndarray, response: np.ndarray,
            names: list[str] | None = None) -> OlsFit:
    """Least squares with an automatic intercept and standard diagnostics.

    Raises :class:`DataError` on rank-deficient designs, naming the
    offending columns.
    """
    X = np.atleast_2d(np.asarray(design, dtype=float))
    if X.shape[0] == 1 and X.shape[1] > 1 and len(response) == X.shape[1]:
        X = X.T
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    if names is None:
        names = [f"x{j}" for j in range(p)]
    if len(names) != p:
        raise DataError("one name per design column required")
    if n < p + 2:
        raise DataError(f"need at least {p + 2} rows to fit {p} regressors, got {n}")

    Z = np.column_stack([np.ones(n), X])
    _, R, piv = _qr_with_pivoting(Z)
    diag = np.abs(np.diag(R))
    tol = max(Z.shape) * np.finfo(float).eps * (diag.max() if diag.size else 1.0)
    rank = int((diag > tol).sum())
    if rank < p + 1:
        dropped = sorted(piv[rank:])
        bad = [("intercept" if j == 0 else names[j - 1]) for j in dropped]
        raise DataError(f"design is rank deficient; collinear columns: {', '.join(bad)}")

    beta, *_ = np.linalg.lstsq(Z, y, rcond=None)
    fitted = Z @ beta
    resid = y - fitted
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)
    dw = durbin_watson(resid)
    return OlsFit(names=list(names), coefficients=beta[1:], intercept=float(beta[0]),
                  fitted=fitted, residuals=resid, r2=r2, adjusted_r2=adj,
                  durbin_watson=dw)


def _qr_with_pivoting(Z: np.ndarray):
    from scipy.linalg import qr

    Q, R, piv = qr(Z, mode="economic", pivoting=True)
    return Q, R, piv


def durbin_watson(residuals: np.ndarray) -> float:
    e = np.asarray(residuals, dtype=float)
    denom = float(e @ e)
    if denom == 0:
        return 2.0
    return float(np.sum(np.diff(e) ** 2) / denom)


# ---------------------------------------------------------------------------
# market-specific decompositions
# ---------------------------------------------------------------------------

DA_REGRESSORS = ("ttf_gas", "co2", "residual_load")


def decompose_da(frame: SeriesFrame) -> tuple[np.ndarray, np.ndarray, OlsFit]:
    """Split the day-ahead price into deterministic + stochastic parts.

    The two components add back to the original series exactly; the
    Durbin-Watson statistic is reported as a diagnostic (strong positive
    autocorrelation is expected on real data, not a failure).
    """
    if frame.resolution != "4h":
        raise DataError("decompose_da expects a 4h frame")
    for col in DA_REGRESSORS:
        if np.any(~np.isfinite(getattr(frame, col))):
            raise DataError(f"regressor column {col} contains non-finite values")
    X = np.column_stack([frame.ttf_gas, frame.co2, frame.residual_load])
    fit = fit_ols(X, frame.da_price, names=list(DA_REGRESSORS))
    deterministic = fit.fitted
    stochastic = frame.da_price - deterministic
    return deterministic, stochastic, fit


def residual_load_quantile_flags(residual_load: np.ndarray, q: float = 0.10
                                 ) -> tuple[np.ndarray, np.ndarray]:
    """Scarcity flags: 1 where residual load is in the lower/upper q-tail.

    Quantiles use linear interpolation between order statistics; ties at
    the threshold are flagged, so a constant series flags everything in
    both directions.
    """
    v = np.asarray(residual_load, dtype=float)
    if v.size == 0:
        raise DataError("empty residual load vector")
    if not 0 < q < 0.5:
        raise DataError("q must lie in (0, 0.5)")
    lo = np.quantile(v, q)
    hi = np.quantile(v, 1.0 - q)
    return (v <= lo).astype(int), (v >= hi).astype(int)


def fit_fcr(frame: SeriesFrame, low_flag: np.ndarray, high_flag: np.ndarray) -> OlsFit:
    """Log-price regression with block dummies and scarcity flags.

    The deterministic reconstruction is ``exp(fitted)``; residuals live in
    log space so that any reconstruction stays positive.
    """
    if frame.resolution != "4h":
        raise DataError("fit_fcr expects a 4h frame")
    price = frame.fcr_price
    bad = ~(price > 0)
    if np.any(bad):
        ts = ", ".join(str(t) for t in frame.timestamps[bad][:5])
        raise DataError(f"fcr price must be positive for the log model; offending "
                        f"timestamps: {ts}")
    blocks = frame.block_index()
    dummies = np.column_stack([(blocks == f).astype(float)
                               for f in range(2, BLOCKS_PER_DAY + 1)])
    X = np.column_stack([dummies, low_flag, high_flag])
    names = [f"block_{f}" for f in range(2, BLOCKS_PER_DAY + 1)] + ["low_rl", "high_rl"]
    return fit_ols(X, np.log(price), names=names)


# ---------------------------------------------------------------------------
# intraday spreads
# ---------------------------------------------------------------------------

@dataclass
class SpreadDistribution:
    """Three-level discretization of intraday spreads per day-ahead cluster."""

    levels: np.ndarray        # (n_clusters, 3) sorted ascending per row
    probabilities: np.ndarray  # (3,)
    samples: list[np.ndarray] = field(default_factory=list)
    pooled_clusters: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.levels = np.asarray(self.levels, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if abs(self.probabilities.sum() - 1.0) > 1e-9:
            raise DataError("level probabilities must sum to 1")
        if np.any(np.diff(self.levels, axis=1) < -1e-12):
            raise DataError("spread levels must be sorted ascending")

    @property
    def n_clusters(self) -> int:
        return self.levels.shape[0]

    def jarque_bera(self) -> list[tuple[float, float]]:
        """(statistic, p-value) per cluster; a normality diagnostic only."""
        out = []
        for s in self.samples:
            if len(s) < 8:
                out.append((np.nan, np.nan))
            else:
                res = stats.jarque_bera(s)
                out.append((float(res.statistic), float(res.pvalue)))
        return out


def id_spreads(frame: SeriesFrame, day_labels: np.ndarray,
               da_reference: np.ndarray, n_clusters: int,
               percentiles: tuple[float, float] = (15.0, 85.0),
               probabilities: tuple[float, float, float] = (0.15, 0.70, 0.15),
               min_cluster_samples: int = 10) -> SpreadDistribution:
    """Cluster-conditional intraday spread levels.

    ``da_reference`` is the cluster-reconstructed day-ahead price per row
    (deterministic forecast plus the assigned cluster's residual profile);
    the spread sample of a row is ``id_price - da_reference``.  Clusters
    with fewer than ``min_cluster_samples`` observations fall back to the
    pooled distribution with a warning.
    """
    if frame.resolution != "4h":
        raise DataError("id_spreads expects a 4h frame")
    if len(da_reference) != len(frame):
        raise DataError("da_reference must align with the frame rows")
    days = frame.day_index()
    if len(day_labels) != days.max():
        raise DataError(f"expected one label per day ({days.max()}), "
                        f"got {len(day_labels)}")
    spreads = frame.id_price - np.asarray(da_reference, dtype=float)
    row_labels = np.asarray(day_labels)[days - 1]

    lo_p, hi_p = percentiles
    pooled = np.array([np.percentile(spreads, lo_p), spreads.mean(),
                       np.percentile(spreads, hi_p)])
    levels = np.empty((n_clusters, 3))
    samples: list[np.ndarray] = []
    pooled_clusters: list[int] = []
    for c in range(n_clusters):
        s = spreads[row_labels == c]
        samples.append(s)
        if len(s) < min_cluster_samples:
            warnings.warn(f"spread cluster {c} has only {len(s)} samples; "
                          "falling back to the pooled distribution")
            levels[c] = pooled
            pooled_clusters.append(c)
        else:
            levels[c] = [np.percentile(s, lo_p), s.mean(), np.percentile(s, hi_p)]
        levels[c] = np.sort(levels[c])
    return SpreadDistribution(levels=levels, probabilities=np.asarray(probabilities),
                              samples=samples, pooled_clusters=tuple(pooled_clusters))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_series_csv(prices_path, fundamentals_path) -> SeriesFrame:
    """Read the two input CSVs and align them on timestamps.

    ``prices.csv`` columns: ``timestamp,da_eur_mwh,id_eur_mwh,fcr_eur_mw``;
    ``fundamentals.csv`` columns:
    ``timestamp,residual_load_mw,ttf_eur_mwh,co2_eur_t``.  ISO-8601
    timestamps, header row mandatory.
    """
    prices = _read_csv(prices_path, PRICE_COLUMNS)
    fund = _read_csv(fundamentals_path, FUNDAMENTAL_COLUMNS)
    if len(prices) != len(fund) or np.any(prices.index.values != fund.index.values):
        raise DataError("prices and fundamentals files do not cover the same timestamps")
    ts = prices.index.values.astype("datetime64[h]")
    step = np.diff(ts).astype(int) if len(ts) > 1 else np.array([1])
    resolution = "h" if (len(step) == 0 or step[0] == 1) else "4h"
    return SeriesFrame(
        timestamps=ts,
        da_price=prices["da_eur_mwh"].to_numpy(float),
        id_price=prices["id_eur_mwh"].to_numpy(float),
        fcr_price=prices["fcr_eur_mw"].to_numpy(float),
        residual_load=fund["residual_load_mw"].to_numpy(float),
        ttf_gas=fund["ttf_eur_mwh"].to_numpy(float),
        co2=fund["co2_eur_t"].to_numpy(float),
        resolution=resolution,
    )


def load_fundamentals_csv(path) -> pd.DataFrame:
    """Fundamentals-only reader used for the forecast file."""
    return _read_csv(path, FUNDAMENTAL_COLUMNS)


def _read_csv(path, required: tuple[str, ...]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {path}") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"cannot parse csv {path}: {exc}") from exc
    if "timestamp" not in df.columns:
        raise DataError(f"{path}: missing 'timestamp' column (header row is mandatory)")
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {', '.join(missing)}")
    try:
        stamps = pd.to_datetime(df["timestamp"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: timestamps must be ISO-8601: {exc}") from exc
    df = df.set_index(pd.DatetimeIndex(stamps))
    return df[list(required)]
