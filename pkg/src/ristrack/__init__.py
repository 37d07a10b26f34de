"""Phase tracking for RIS-assisted wideband MIMO links with reservoir ensembles."""

from .channel import ArrayGeometry, ChannelSet, ClusterConfig, MobilityModel, evolve_trajectory, generate_channel_set
from .config import ConfigError, ExperimentConfig, load_config
from .dataio import (
    SyntheticSpec,
    load_ensemble,
    load_model,
    load_trajectory,
    oracle_trajectory,
    save_ensemble,
    save_model,
    save_trajectory,
    synthetic_trajectory,
)
from .ensemble import BootstrapSpec, EnsembleModel, ensemble_forecast, ensemble_predict_next, train_ensemble
from .reservoir import ReservoirArch, ReservoirModel, forecast, init_lsm, predict_next, train_readout
from .ris_link import PhaseConfig, oracle_optimize_theta, zf_precoder, zf_spectral_efficiency
from .trajectory import PhaseTrajectory

__version__ = "0.1.0"
