"""Point forecasts from a model snapshot and the zero-hold baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import logsumexp

from .emission_ar import stack_window
from .hdp_hmm import SwitchingArModel

METHODS = ("mean", "map-mode")


@dataclass(frozen=True, eq=False)
class ForecastState:
    """Lag window (``r x d``, oldest first) and the current mode belief.

    ``fallback`` is set when the last belief update could not use the
    observation because every mode assigned it zero likelihood.
    """

    window: np.ndarray
    mode_belief: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.window, dtype=float))
        b = np.asarray(self.mode_belief, dtype=float).reshape(-1)
        if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-10:
            raise ValueError("mode_belief must lie on the probability simplex")
        object.__setattr__(self, "window", w)
        object.__setattr__(self, "mode_belief", b)


def _check_state(model: SwitchingArModel, state: ForecastState) -> None:
    if state.window.shape != (model.ar_order, model.dim):
        raise ValueError(f"window shape {state.window.shape} does not match "
                         f"AR order {model.ar_order} and dimension {model.dim}")
    if len(state.mode_belief) != model.num_modes:
        raise ValueError(f"belief has {len(state.mode_belief)} entries, model has {model.num_modes} modes")


def _normalize(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def iter_forecast(model: SwitchingArModel, state: ForecastState,
                  method: str = "mean") -> Iterator[np.ndarray]:
    """Endless stream of one-step-further predictions.

    ``mean`` propagates the belief through the transition matrix and
    averages the per-mode predictions; ``map-mode`` follows the most probable
    mode at each step instead.
    """
    if method not in METHODS:
        raise ValueError(f"unknown forecast method {method!r}; expected one of {METHODS}")
    _check_state(model, state)
    r, d = model.ar_order, model.dim
    window = state.window.copy()
    belief = state.mode_belief
    A = model.dynamics
    pi = model.transition
    while True:
        belief = _normalize(belief @ pi)
        preds = A @ stack_window(window, r, d)
        y = belief @ preds if method == "mean" else preds[int(np.argmax(belief))]
        window = np.vstack([window[1:], y])
        yield y


def forecast_k_step(model: SwitchingArModel, state: ForecastState, horizon: int,
                    method: str = "mean") -> np.ndarray:
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon}")
    it = iter_forecast(model, state, method)
    return np.array([next(it) for _ in range(int(horizon))])


def mode_log_likelihoods(model: SwitchingArModel, window: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = stack_window(window, model.ar_order, model.dim)
    return model.log_likelihoods(x[None], np.asarray(y, dtype=float).reshape(1, -1))[0]


def update_belief(model: SwitchingArModel, state: ForecastState, observed) -> ForecastState:
    """One forward-filter step: propagate, weight by likelihood, renormalise."""
    _check_state(model, state)
    y = np.asarray(observed, dtype=float).reshape(-1)
    if len(y) != model.dim:
        raise ValueError(f"observation has dimension {len(y)}, model has {model.dim}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observation must be finite")
    prior = _normalize(state.mode_belief @ model.transition)
    with np.errstate(divide="ignore"):
        logp = np.log(prior) + mode_log_likelihoods(model, state.window, y)
    norm = logsumexp(logp)
    window = np.vstack([state.window[1:], y])
    if not np.isfinite(norm):
        return ForecastState(window, prior, fallback=True)
    return ForecastState(window, _normalize(np.exp(logp - norm)))


def filter_belief(model: SwitchingArModel, values: np.ndarray) -> ForecastState:
    """Filtered state after the last sample of ``values``.

    The belief over the mode of the first window starts at the global
    weights.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    r = model.ar_order
    if len(values) < r:
        raise ValueError(f"need at least {r} samples to form a window")
    state = ForecastState(values[:r], model.global_weights)
    for y in values[r:]:
        state = update_belief(model, state, y)
    return state


def zero_hold_forecast(last_received, horizon: int) -> np.ndarray:
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon}")
    v = np.asarray(last_received, dtype=float).reshape(-1)
    return np.tile(v, (int(horizon), 1))
