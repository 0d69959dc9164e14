from .features import ArchConfig, MultiScaleFeatures, RawPredictions
from .backbone import Backbone
from .connection import CompositeConnection
from .head import Head
from .loss import LossBreakdown, assign_targets, detection_loss, detection_loss_and_grad
from .decode import Detection, decode_predictions
from .router import RandomScorer, Router, RouterCacheError, pool_concat
from .cascade import CascadeModel, build_model, count_flops, image_losses, joint_loss_and_grads
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
