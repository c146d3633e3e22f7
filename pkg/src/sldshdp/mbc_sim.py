"""Model-based communication over a lossy broadcast channel.

A transmitter fits the switching AR model on its own recent history and
broadcasts (model snapshot, lag window, mode belief). Packets are dropped
i.i.d. with probability ``per``. Between deliveries the receiver forecasts
from the last delivered packet; the baseline receiver holds the last
delivered raw value. Both see the same delivery mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emission_ar import TimeSeries
from .forecast import ForecastState, filter_belief, iter_forecast, update_belief
from .hdp_hmm import HdpHyperParams, SwitchingArModel, fit

UNTIL_NEXT_DELIVERY = None


@dataclass(frozen=True)
class ChannelConfig:
    per: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.per <= 1.0:
            raise ValueError(f"packet error rate must lie in [0, 1], got {self.per}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Broadcast schedule and model settings for one scenario.

    ``horizon=None`` lets the receiver forecast until the next delivery; an
    integer caps the forecast length, after which the last forecast is held.
    """

    tx_rate_hz: float = 10.0
    refit_window: int = 600
    horizon: int | None = UNTIL_NEXT_DELIVERY
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    hypers: HdpHyperParams = field(default_factory=HdpHyperParams)
    sweeps: int = 100
    burn_in: int = 50
    fit_seed: int = 0
    method: str = "mean"

    def __post_init__(self):
        if not self.tx_rate_hz > 0:
            raise ValueError(f"tx rate must be positive, got {self.tx_rate_hz}")
        if self.refit_window <= self.hypers.ar_order + 2:
            raise ValueError(f"refit_window must exceed ar_order + 2 = {self.hypers.ar_order + 2}")
        if self.horizon is not None and (int(self.horizon) != self.horizon or self.horizon < 1):
            raise ValueError(f"horizon must be a positive integer or None, got {self.horizon}")


@dataclass(eq=False)
class SimTrace:
    time: np.ndarray
    delivered: np.ndarray
    mbc_error: np.ndarray
    baseline_error: np.ndarray
    mode_labels: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.time)
        if not (len(self.delivered) == len(self.mbc_error) == len(self.baseline_error)
                == len(self.mode_labels) == n):
            raise ValueError("SimTrace columns are not aligned")


def simulate_channel(n_packets: int, config: ChannelConfig) -> np.ndarray:
    """Delivery mask: each packet independently survives with probability ``1 - per``."""
    if n_packets < 0:
        raise ValueError("packet count must be non-negative")
    rng = np.random.default_rng(config.seed)
    return rng.random(n_packets) < 1.0 - config.per


def _packet_floats(model: SwitchingArModel, state: ForecastState) -> int:
    L, d, r = model.num_modes, model.dim, model.ar_order
    return L + L * L + L * (d * d * r + d * d) + state.window.size + L


def run_scenario(series: TimeSeries, config: ScenarioConfig) -> SimTrace:
    """Replay one trip through the transmitter, channel and both receivers.

    The trace starts at the first step with a full refit window. The
    receiver is bootstrapped with the transmitter's first packet out of
    band; every later packet goes through the channel.
    """
    values = series.values
    T, W = len(values), config.refit_window
    if T < W + 1:
        raise ValueError(f"series has {T} samples; a refit window of {W} needs at least {W + 1}")
    dt = series.dt
    stride = max(1, int(round(1.0 / (config.tx_rate_hz * dt))))
    start = W - 1
    steps = np.arange(start, T)
    is_tx = (steps - start) % stride == 0
    mask = simulate_channel(int(is_tx.sum()), config.channel)

    delivered = np.zeros(len(steps), dtype=bool)
    delivered[is_tx] = mask
    mbc_err = np.empty(len(steps))
    base_err = np.empty(len(steps))
    labels = np.empty(len(steps), dtype=np.int64)

    model = None
    fit_time = -1
    tx_state = None
    rx_rollout = None
    rx_estimate = None
    rx_gap = 0
    base_value = None
    refits = fallbacks = packets_floats = 0

    for i, t in enumerate(steps):
        if is_tx[i] and (model is None or t - fit_time > W / 2):
            window = values[t - W + 1:t + 1]
            result = fit(window, config.hypers, config.sweeps, config.burn_in,
                         (config.fit_seed, int(t)))
            model, fit_time = result.model, t
            tx_state = filter_belief(model, window)
            refits += 1
        else:
            tx_state = update_belief(model, tx_state, values[t])
            fallbacks += tx_state.fallback
        labels[i] = int(np.argmax(tx_state.mode_belief))

        if is_tx[i]:
            packets_floats += _packet_floats(model, tx_state)
        if delivered[i] or i == 0:
            rx_rollout = iter_forecast(model, tx_state, config.method)
            rx_estimate = tx_state.window[-1]
            rx_gap = 0
            base_value = values[t]
        else:
            rx_gap += 1
            if config.horizon is None or rx_gap <= config.horizon:
                rx_estimate = next(rx_rollout)

        mbc_err[i] = np.linalg.norm(rx_estimate - values[t])
        base_err[i] = np.linalg.norm(base_value - values[t])

    diagnostics = {
        "refits": refits,
        "filter_fallbacks": int(fallbacks),
        "packets": int(is_tx.sum()),
        "delivered_packets": int(mask.sum()),
        "tx_stride_steps": stride,
        "packet_bytes_total": 8 * packets_floats,
    }
    return SimTrace(series.timestamps[steps], delivered, mbc_err, base_err, labels, diagnostics)


def error_ecdf(errors) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted error values and the fraction of errors at or below each."""
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    if len(e) == 0:
        raise ValueError("cannot build an ECDF from no errors")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    thresholds = np.unique(e)
    return thresholds, np.searchsorted(e, thresholds, side="right") / len(e)


def ecdf_at(errors, threshold) -> np.ndarray | float:
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    if len(e) == 0:
        raise ValueError("cannot build an ECDF from no errors")
    return np.searchsorted(e, threshold, side="right") / len(e)
