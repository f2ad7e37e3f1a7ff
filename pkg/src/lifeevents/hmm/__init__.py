"""Beta-process autoregressive HMM with a state library shared across sequences."""

from .model import (
    HmmConfig,
    HmmModel,
    StateSequence,
    decode,
    emission_loglik,
    lagged,
    log_likelihood,
    sample_sequence,
)
from .sampler import fit, ibp_log_prob

__all__ = [
    "HmmConfig",
    "HmmModel",
    "StateSequence",
    "decode",
    "emission_loglik",
    "fit",
    "ibp_log_prob",
    "lagged",
    "log_likelihood",
    "sample_sequence",
]
