"""Per-mode vector-autoregressive dynamics and their conjugate prior.

Within mode ``z`` an observation follows

    y_t = sum_l A_l^{(z)} y_{t-l} + e_t,    e_t ~ N(0, Sigma^{(z)})

Lag matrices are stacked as ``[A_1, ..., A_r]`` (shape ``d x d*r``) and act on
the lag vector ``[y_{t-1}; ...; y_{t-r}]``. Windows are stored oldest first,
so ``window[-1]`` is ``y_{t-1}``.

The prior over ``(A, Sigma)`` is matrix-normal inverse-Wishart:
``Sigma ~ IW(S, nu)`` and ``A | Sigma ~ MN(M, Sigma, K^{-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg, stats

LOG_2PI = float(np.log(2.0 * np.pi))
_JITTER = 1e-9
_JITTER_ESCALATIONS = 3


def safe_cholesky(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter if the plain factorisation fails."""
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.abs(np.diag(mat)))), 1.0)
    jitter = _JITTER * scale
    for _ in range(_JITTER_ESCALATIONS):
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(len(mat)))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"matrix is not positive definite even with jitter {jitter / 10.0:.1e}")


def _is_symmetric(mat: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.all(np.abs(mat - mat.T) <= tol * max(1.0, float(np.max(np.abs(mat))))))


def _check_spd(name: str, mat: np.ndarray) -> None:
    if not _is_symmetric(mat):
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"{name} is not positive definite") from err


@dataclass(frozen=True, eq=False)
class ArModeParams:
    """Lag matrices (``r x d x d``) and process-noise covariance (``d x d``).

    The covariance only has to be positive semi-definite so that noiseless
    dynamics can be simulated; likelihood evaluation needs it to be definite.
    """

    lag_matrices: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        lags = np.array(self.lag_matrices, dtype=float)
        if lags.ndim == 2:
            lags = lags[None]
        cov = np.atleast_2d(np.array(self.noise_cov, dtype=float))
        if lags.ndim != 3 or lags.shape[1] != lags.shape[2] or len(lags) < 1:
            raise ValueError(f"lag_matrices must have shape (r, d, d), got {lags.shape}")
        d = lags.shape[1]
        if cov.shape != (d, d):
            raise ValueError(f"noise_cov must be {d}x{d}, got {cov.shape}")
        if not np.all(np.isfinite(lags)) or not np.all(np.isfinite(cov)):
            raise ValueError("parameters must be finite")
        if not _is_symmetric(cov):
            raise ValueError("noise_cov is not symmetric")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-12 * max(1.0, float(np.max(np.abs(cov)))):
            raise ValueError("noise_cov is not positive semi-definite")
        object.__setattr__(self, "lag_matrices", lags)
        object.__setattr__(self, "noise_cov", cov)

    @property
    def order(self) -> int:
        return self.lag_matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.lag_matrices.shape[1]

    @cached_property
    def stacked(self) -> np.ndarray:
        return np.hstack(list(self.lag_matrices))

    @cached_property
    def noise_chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.noise_cov)
        except np.linalg.LinAlgError as err:
            raise ValueError("noise_cov is not positive definite") from err

    def predict(self, window: np.ndarray) -> np.ndarray:
        """Noise-free one-step prediction from a window of the last ``r`` observations."""
        return self.stacked @ stack_window(window, self.order, self.dim)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """``y = C x + w``; the default is an exact identity observation."""

    matrix: np.ndarray
    noise_cov: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "MeasurementModel":
        return cls(np.eye(dim), np.zeros((dim, dim)))


@dataclass(frozen=True, eq=False)
class MniwPrior:
    """Matrix-normal inverse-Wishart parameters (also used for posteriors)."""

    mean_matrix: np.ndarray
    col_precision: np.ndarray
    iw_scale: np.ndarray
    iw_dof: float

    def __post_init__(self):
        M = np.atleast_2d(np.array(self.mean_matrix, dtype=float))
        K = np.atleast_2d(np.array(self.col_precision, dtype=float))
        S = np.atleast_2d(np.array(self.iw_scale, dtype=float))
        d, p = M.shape
        if p % d:
            raise ValueError(f"mean_matrix must be d x d*r, got {M.shape}")
        if K.shape != (p, p):
            raise ValueError(f"col_precision must be {p}x{p}, got {K.shape}")
        if S.shape != (d, d):
            raise ValueError(f"iw_scale must be {d}x{d}, got {S.shape}")
        _check_spd("col_precision", K)
        _check_spd("iw_scale", S)
        if not self.iw_dof > d - 1:
            raise ValueError(f"iw_dof must exceed {d - 1}, got {self.iw_dof}")
        object.__setattr__(self, "mean_matrix", M)
        object.__setattr__(self, "col_precision", K)
        object.__setattr__(self, "iw_scale", S)
        object.__setattr__(self, "iw_dof", float(self.iw_dof))

    @property
    def dim(self) -> int:
        return self.mean_matrix.shape[0]

    @property
    def order(self) -> int:
        return self.mean_matrix.shape[1] // self.dim


def default_prior(dim: int, order: int) -> MniwPrior:
    """Weak prior centred on first-lag persistence (zero-hold-like dynamics)."""
    M = np.zeros((dim, dim * order))
    M[:, :dim] = np.eye(dim)
    return MniwPrior(M, 0.01 * np.eye(dim * order), 0.1 * np.eye(dim), dim + 2)


def stack_window(window, order: int, dim: int) -> np.ndarray:
    w = np.asarray(window, dtype=float).reshape(-1, dim)
    if len(w) != order:
        raise ValueError(f"window has {len(w)} observations, AR order is {order}")
    return w[::-1].reshape(-1)


def lagged_design(values: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressors ``X`` (rows ``[y_{t-1}; ...; y_{t-r}]``) and targets ``Y`` for ``t = r..T-1``."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    T = len(values)
    if T <= order:
        raise ValueError(f"need more than {order} observations, got {T}")
    X = np.hstack([values[order - lag:T - lag] for lag in range(1, order + 1)])
    return X, values[order:]


def ar_log_likelihood(params: ArModeParams, window, y) -> float:
    """log N(y; sum_l A_l window[-l], Sigma)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != params.dim:
        raise ValueError(f"observation has dimension {len(y)}, model has {params.dim}")
    x = stack_window(window, params.order, params.dim)
    return float(ar_log_likelihoods(params, x[None], y[None])[0])


def ar_log_likelihoods(params: ArModeParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row-wise log densities for a design matrix from :func:`lagged_design`."""
    L = params.noise_chol
    resid = Y - X @ params.stacked.T
    z = linalg.solve_triangular(L, resid.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    with np.errstate(over="ignore"):  # huge residuals give -inf, which callers handle
        return -0.5 * (np.sum(z * z, axis=0) + logdet + params.dim * LOG_2PI)


@dataclass(frozen=True, eq=False)
class ArSuffStats:
    """Sums ``X'X``, ``Y'X``, ``Y'Y`` and the pair count."""

    xx: np.ndarray
    yx: np.ndarray
    yy: np.ndarray
    n: int = 0

    def __add__(self, other: "ArSuffStats") -> "ArSuffStats":
        return ArSuffStats(self.xx + other.xx, self.yx + other.yx,
                           self.yy + other.yy, self.n + other.n)


def ar_suff_stats(X: np.ndarray, Y: np.ndarray) -> ArSuffStats:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) != len(Y):
        raise ValueError("X and Y have different numbers of rows")
    return ArSuffStats(X.T @ X, Y.T @ X, Y.T @ Y, len(X))


def mniw_update(prior: MniwPrior, suff: ArSuffStats) -> MniwPrior:
    if suff.n == 0:
        return prior
    M, K, S = prior.mean_matrix, prior.col_precision, prior.iw_scale
    if suff.xx.shape != K.shape or suff.yy.shape != S.shape:
        raise ValueError("sufficient statistics do not match the prior dimensions")
    K_n = K + suff.xx
    rhs = M @ K + suff.yx
    M_n = linalg.solve(K_n, rhs.T, assume_a="pos").T
    S_n = S + suff.yy + M @ K @ M.T - M_n @ K_n @ M_n.T
    S_n = 0.5 * (S_n + S_n.T)
    return MniwPrior(M_n, 0.5 * (K_n + K_n.T), S_n, prior.iw_dof + suff.n)


def mniw_posterior(prior: MniwPrior, data: Iterable[tuple[Sequence, Sequence]]) -> MniwPrior:
    """Conjugate posterior given ``(window, y)`` pairs."""
    d, r = prior.dim, prior.order
    xs, ys = [], []
    for window, y in data:
        xs.append(stack_window(window, r, d))
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(y) != d:
            raise ValueError(f"observation has dimension {len(y)}, prior has {d}")
        ys.append(y)
    if not xs:
        return prior
    return mniw_update(prior, ar_suff_stats(np.array(xs), np.array(ys)))


def sample_mode_params(posterior: MniwPrior, rng: np.random.Generator) -> ArModeParams:
    d = posterior.dim
    sigma = np.atleast_2d(stats.invwishart.rvs(df=posterior.iw_dof, scale=posterior.iw_scale,
                                               random_state=rng))
    sigma = 0.5 * (sigma + sigma.T)
    chol_sigma = safe_cholesky(sigma)
    sigma = chol_sigma @ chol_sigma.T
    chol_k = safe_cholesky(posterior.col_precision)
    Z = rng.standard_normal(posterior.mean_matrix.shape)
    # Z @ inv(L_K) has column covariance K^{-1}.
    noise = linalg.solve_triangular(chol_k, Z.T, lower=True, trans="T").T
    A = posterior.mean_matrix + chol_sigma @ noise
    return ArModeParams(A.reshape(d, -1, d).transpose(1, 0, 2), sigma)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled multichannel signal (``values`` is ``T x d``)."""

    timestamps: np.ndarray
    values: np.ndarray
    channels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or len(v) != len(t):
            raise ValueError("values must be T x d with one row per timestamp")
        if len(t) == 0:
            raise ValueError("a time series needs at least one sample")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(t)):
            raise ValueError("time series contains NaN or infinite values")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if len(steps) and np.max(np.abs(steps - steps[0])) > 1e-6:
            raise ValueError("timestamps are not uniformly spaced")
        channels = tuple(self.channels) or tuple(f"y{i}" for i in range(v.shape[1]))
        if len(channels) != v.shape[1]:
            raise ValueError(f"{len(channels)} channel names for {v.shape[1]} columns")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channels", channels)

    @classmethod
    def regular(cls, values, dt: float = 0.1, t0: float = 0.0, channels=()) -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        return cls(t0 + dt * np.arange(len(values)), values, tuple(channels))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        if len(self.timestamps) < 2:
            return float("nan")
        return float((self.timestamps[-1] - self.timestamps[0]) / (len(self.timestamps) - 1))

    def select(self, channels: Sequence[str]) -> "TimeSeries":
        idx = [self.channels.index(c) for c in channels]
        return TimeSeries(self.timestamps, self.values[:, idx], tuple(channels))


def simulate_switching_ar(modes: Sequence[int], params: Sequence[ArModeParams] | Mapping[int, ArModeParams],
                          init_window, rng: np.random.Generator, *, dt: float = 0.1,
                          channels: Sequence[str] = (),
                          measurement: MeasurementModel | None = None) -> TimeSeries:
    """Generate ``len(modes)`` samples following the given mode labels.

    The first ``r`` samples are the initial window; the dynamics of
    ``modes[t]`` produce sample ``t`` for ``t >= r``.
    """
    lookup = dict(params) if isinstance(params, Mapping) else dict(enumerate(params))
    if not lookup:
        raise ValueError("no mode parameters given")
    first = next(iter(lookup.values()))
    r, d = first.order, first.dim
    for k, p in lookup.items():
        if (p.order, p.dim) != (r, d):
            raise ValueError(f"mode {k} has order/dim {(p.order, p.dim)}, expected {(r, d)}")
    labels = [int(z) for z in modes]
    for t, z in enumerate(labels):
        if z not in lookup:
            raise KeyError(f"unknown mode label {z} at step {t}")
    init = np.asarray(init_window, dtype=float).reshape(-1, d)
    if len(init) != r:
        raise ValueError(f"initial window has {len(init)} samples, AR order is {r}")
    T = len(labels)
    if T < r:
        raise ValueError(f"need at least {r} labels for an order-{r} model")

    roots = {k: _psd_sqrt(p.noise_cov) for k, p in lookup.items()}
    x = np.empty((T, d))
    x[:r] = init
    for t in range(r, T):
        p = lookup[labels[t]]
        x[t] = p.stacked @ x[t - r:t][::-1].reshape(-1) + roots[labels[t]] @ rng.standard_normal(d)

    y = x
    if measurement is not None:
        w = rng.standard_normal((T, d)) @ _psd_sqrt(measurement.noise_cov).T
        y = x @ np.asarray(measurement.matrix, dtype=float).T + w
    return TimeSeries.regular(y, dt=dt, channels=channels)
