"""Lightweight long-range GAN: autodiff engine, long-range modules, trainer, and tools."""

from .blocks import ResidualBlock, SelfAttention, UpsampleBlock, glu, instance_norm
from .datasets import FolderDataSpec, SyntheticDatasetSpec, load_image_folder, make_synthetic_dataset
from .estimator import LongRangeGAN, check_image_array
from .frechet import DistributionStats, embed_and_stats, frechet_distance, symmetry_score
from .gradcheck import grad_check
from .imageio import read_image, write_image
from .longrange import (
    ChannelLongRange,
    CorrelationMatrix,
    LongRangePair,
    SpatialLongRange,
    apply_gate,
    compute_correlation,
    relation_weight,
)
from .model import (
    Discriminator,
    FrozenConvEmbedder,
    Generator,
    ModelConfig,
    PrecomputedMetadata,
    StageOutputs,
    encode_metadata,
    param_breakdown,
)
from .objectives import (
    ColorStats,
    LossWeights,
    color_consistency_loss,
    color_stats,
    discriminator_loss,
    generator_loss,
)
from .optim import AdamState, adam_step
from .tensor import NumericsError, ShapeError, Tensor, backward, get_precision, precision, set_precision
from .trainer import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"
