"""Joint cascaded-channel and signal estimation for RIS-assisted multi-user MISO.

The core estimator is a two-layer bidirectional approximate message passing
scheme (:func:`run_bamp`); :func:`run_baseline` is the two-stage bilinear AMP
plus least-squares benchmark, and :mod:`bamp_ris.harness` drives Monte Carlo
NMSE sweeps.
"""
from .baseline import BaselineReport, ls_recover, run_baseline, run_bigamp_pilot
from .errors import (ConfigError, FormatError, IllConditionedPilotError, InvalidDimensionError,
                     InvalidParameterError, NumericalError, RankDeficiencyError)
from .harness import ExperimentSpec, ResultTable, align_estimates, preset, run_experiment
from .inference import (BampConfig, GaussianField, LayerState, RunReport, damp, gaussian_product,
                        input_update, interlayer_message, nmse_db, output_score_awgn, output_score_pseudo,
                        plant_estimates, run_bamp)
from .priors import MixturePrior, bernoulli_gaussian, ep_project, gaussian, qpsk_mixture
from .scene import (Priors, RisConfig, Scene, SceneDims, build_ris_phases, default_priors, design_signal,
                    dft_matrix, make_scene, sample_sparse_channel, to_antenna_domain, to_beam_domain)

__version__ = "0.1.0"
