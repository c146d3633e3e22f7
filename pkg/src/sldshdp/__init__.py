"""Sticky HDP switching-AR driver models and a lossy-channel forecasting simulator."""
from .dp_core import (CrpState, StickWeights, crp_assign, crp_log_partition_prob,
                      sample_stick_weights, stick_weights_from_fractions)
from .emission_ar import (ArModeParams, MeasurementModel, MniwPrior, TimeSeries,
                          ar_log_likelihood, default_prior, mniw_posterior,
                          sample_mode_params, simulate_switching_ar)
from .forecast import (ForecastState, filter_belief, forecast_k_step, update_belief,
                       zero_hold_forecast)
from .hdp_hmm import (GibbsState, HdpHyperParams, ModeSequence, SwitchingArModel, fit,
                      forward_backward_sample, gibbs_sweep, sample_aux_counts,
                      sample_global_weights, sample_transition_rows, viterbi)
from .mbc_sim import (ChannelConfig, ScenarioConfig, SimTrace, error_ecdf, run_scenario,
                      simulate_channel)

__version__ = "0.1.0"
