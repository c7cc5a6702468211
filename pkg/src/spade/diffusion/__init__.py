from .ddim import (
    ConstantDenoiser,
    LinearToyDenoiser,
    ZeroDenoiser,
    ddim_invert,
    ddim_inverse_step,
    ddim_sample,
    ddim_step,
    forward_noise,
    round_trip_rmse,
)
from .schedule import NoiseSchedule, default_schedule
from .unet import FeaturePyramid, UNetConfig, UNetLite

__all__ = [
    "ConstantDenoiser",
    "FeaturePyramid",
    "LinearToyDenoiser",
    "NoiseSchedule",
    "UNetConfig",
    "UNetLite",
    "ZeroDenoiser",
    "ddim_invert",
    "ddim_inverse_step",
    "ddim_sample",
    "ddim_step",
    "default_schedule",
    "forward_noise",
    "round_trip_rmse",
]
