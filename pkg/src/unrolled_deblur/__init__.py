"""Unrolled accelerated deblurring with learned parameters for binary text images."""
from .adjoint import backprop_params
from .dataset import (PreprocessConfig, SynthSpec, build_svr_dataset, gen_ground_truth,
                      gen_observation, preprocess, read_corpus, surrogate_score, write_corpus)
from .energy import (EnergyContext, EnergyParams, energy_grad_u, energy_hvp, energy_mixed_grad,
                     energy_value)
from .errors import InvalidInputError, InvalidParameterError, NumericFailureError
from .imgcore import (convolve, convolve_adjoint, disc_psf, disc_psf_dr, estimate_background,
                      radial_warp, resize)
from .learn import LearnConfig, LearnResult, learn_params, load_params, loss_and_grad, save_params
from .ssim import SsimConfig, ssim, ssim_loss_grad
from .svr import SvrModel, SvrTrainSet, svr_loss_grad, svr_predict, svr_train
from .unroll import UnrollConfig, UnrollTrace, proj, proj_deriv, restore, unroll_forward

__version__ = "0.1.0"

__all__ = [
    "backprop_params", "PreprocessConfig", "SynthSpec", "build_svr_dataset", "gen_ground_truth",
    "gen_observation", "preprocess", "read_corpus", "surrogate_score", "write_corpus",
    "EnergyContext", "EnergyParams", "energy_grad_u", "energy_hvp", "energy_mixed_grad",
    "energy_value", "InvalidInputError", "InvalidParameterError", "NumericFailureError",
    "convolve", "convolve_adjoint", "disc_psf", "disc_psf_dr", "estimate_background",
    "radial_warp", "resize", "LearnConfig", "LearnResult", "learn_params", "load_params",
    "loss_and_grad", "save_params", "SsimConfig", "ssim", "ssim_loss_grad", "SvrModel",
    "SvrTrainSet", "svr_loss_grad", "svr_predict", "svr_train", "UnrollConfig", "UnrollTrace",
    "proj", "proj_deriv", "restore", "unroll_forward",
]
