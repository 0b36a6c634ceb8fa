"""Bayesian profile regression with Dirichlet process mixtures."""
from __future__ import annotations

from .errors import (ConfigError, DataError, ImpossibleStateError, InsufficientSticksError,
                     NotPositiveDefiniteError, ParameterDomainError, SamplerError, StickExtensionError)
from .model import ChainState, Dataset, HyperParams
from .postprocess import (build_similarity, ls_optimal_partition, pam_optimal_partition, predict,
                          risk_profiles)
from .sampler import Archive, Sampler, SamplerConfig, run_chain
from .simulate import PRESETS, SyntheticSpec, generate_sample_data

__version__ = "0.1.0"
