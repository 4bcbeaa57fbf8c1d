"""Correlation-filter visual tracking on context-compressed feature maps.

The pipeline: a base convolutional auto-encoder compresses multi-channel
feature maps; training samples are clustered by compressed appearance and
one expert auto-encoder is fine-tuned per cluster; at track time a selector
network picks the expert, which is adapted once on the first frame and then
feeds frequency-domain correlation filters with channel pruning, cosine
masking, validation-weighted fusion, scale search, and occlusion
re-detection.
"""

from .autoencoder import (
    AutoEncoderModel,
    ConvLayer,
    TrainConfig,
    backward,
    compress,
    corrupt_channels,
    exchange_vectors,
    forward_full,
    forward_partial,
    load_model,
    multistage_loss,
    pretrain_base,
    save_model,
    train_expert,
)
from .adapt import (
    AdaptationConfig,
    ChannelRanking,
    adaptation_grad,
    adaptation_loss,
    background_channel_removal,
    fine_tune_initial,
    orthogonality,
)
from .bench import Sequence, evaluate, load_sequence, precision_curve, success_curve
from .cf import (
    FilterBank,
    FilterChannel,
    ResponseMap,
    estimate_filter,
    integrate,
    response,
    subpixel_peak,
    update_bank,
    validation_score,
)
from .config import PipelineConfig, load_config, parse_config, render_config, save_config
from .context import (
    ClusterModel,
    SelectorNetwork,
    SelectorTrainConfig,
    farthest_init,
    load_context,
    make_descriptor,
    save_context,
    select,
    train_selector,
    two_step_cluster,
)
from .features import (
    BoundingBox,
    BuiltinFeatureConfig,
    BuiltinFeatureSource,
    FeatureSource,
    FmapDirectorySource,
    RoiPatch,
    augment_initial,
    builtin_features,
    extract_roi,
    load_fmap,
    save_fmap,
)
from .numerics import cosine_window, fft2, gaussian_label, ifft2
from .tracker import Tracker, TrackerModels, TrackerState

__version__ = "0.1.0"
