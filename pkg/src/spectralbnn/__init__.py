"""Bayesian spectral (circulant / BCCB) layers with GP priors, SVI and certificates."""
from . import certify, fft_core, gp_prior, layers, metrics, model, svi, tape
from .certify import network_lipschitz, spectral_norm_1d, spectral_norm_2d
from .fft_core import layout_1d, layout_2d, pack_effective, unpack_effective
from .gp_prior import SpectrumProfile
from .layers import SpectralBCCB2D, SpectralCirculant1D, param_count
from .model import ModelSpec
from .svi import LowRankGaussian, TrainConfig, elbo, train
from .tape import Tape

__version__ = "0.1.0"
