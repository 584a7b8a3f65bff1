"""Convolution-free compressed-sensing MRI reconstruction with Kaleidoscope, patch and axial tokens."""
from .denoiser import BlockSpec, TnnBlock, encoder_layer, mha, param_count, tnn_denoise
from .kaleidoscope import KtParams, KtStack, kt_forward, kt_index_map, kt_inverse
from .masks import ConfigError, SamplingMask, gaussian1d_mask, undersample
from .metrics import mae, psnr, ssim
from .numeric import DimensionError, GradientContractError, ParamStore, Tensor, backward
from .phantom import Phantom, phantom_dataset, phantom_generate
from .pipeline import (DcConfig, DcTnnModel, build_model, dc_apply, dctnn_forward, load_checkpoint, preset,
                       save_checkpoint, zero_filled)
from .tokenizer import (TokenKind, TokenSequence, axial_detokenize, axial_tokenize, embed, kd_detokenize,
                        kd_tokenize, patchify, unembed, unpatchify)
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
