"""Mix-attention U-Net style segmentation decoder on a small numpy autodiff stack."""

from .analysis import CostReport, count_flops, count_params
from .autodiff import Tape, Variable, grad_check
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ABLATION_ARMS, ModelConfig, large_scale_config, tiny_config
from .data import SyntheticDataset, generate_dataset
from .decoder import (Decoder, SegmentationHead, assemble_kv, baseline_cross_decoder, decoder_forward,
                      decoder_forward_plus, decoder_stage_forward, kv_plan, segmentation_head)
from .encoder import StubEncoder, encode
from .errors import (CheckpointError, ConfigError, DimensionError, NumericalError, SequencingError,
                     UMixError, UsageError)
from .features import FeatureMap, FeatureSet, select_feature_set
from .metrics import confusion_matrix, downsample_labels, iou_per_class, mean_iou
from .model import UMixFormer
from .train import TrainState, evaluate, load_state, save_state, train

__version__ = "0.1.0"
