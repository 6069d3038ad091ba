from .base import Domain, FieldModel, Normalizer
from .baselines import FourierConfig, FourierMLP, Siren, SirenConfig, fourier_features
from .fieldformer import ActivationError, EncoderConfig, FieldFormer, encode_neighborhood
from .io import build_model, load_model, model_arrays, model_meta, save_model

__all__ = [
    "ActivationError",
    "Domain",
    "EncoderConfig",
    "FieldFormer",
    "FieldModel",
    "FourierConfig",
    "FourierMLP",
    "Normalizer",
    "Siren",
    "SirenConfig",
    "build_model",
    "encode_neighborhood",
    "fourier_features",
    "load_model",
    "model_arrays",
    "model_meta",
    "save_model",
]
