"""Compressed-sensing MRI reconstruction workbench: k-space simulation,
classical baselines, and an unrolled attentive-recurrent adversarial model."""

from .baselines import AdmmConfig, reconstruct_admm_tv, reconstruct_zero_fill, tv_norm
from .evaluation import (MetricsReport, NoiseSweep, estimate_noise_level, nmse, psnr,
                         run_comparison, run_noise_sweep, ssim)
from .kspace import (SamplingMask, add_kspace_noise, apply_undersampling, data_consistency,
                     forward_fft2c, inverse_fft2c, load_kspace, load_mask, make_mask,
                     normalize_intensity, save_kspace, save_mask, zero_fill_recon)
from .losses import (FeatureExtractor, LossBreakdown, LossWeights, critic_loss_with_gp,
                     loss_fmse, loss_gen_adv, loss_imse, loss_vgg, total_loss)
from .model import (BidirectionalConvRecurrent, Critic, CriticConfig, Generator,
                    GeneratorConfig, SpatialAttention)
from .phantom import (DatasetSplit, SliceSequence, adjacent_slice_correlation,
                      extract_sequences, generate_phantom_volume, load_volume,
                      save_volume, split_dataset)
from .training import (Checkpoint, TrainConfig, ablation_configs, config_from_flat,
                       config_to_flat, enable_determinism, load_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"
