"""VideoQA training-set augmentation (resampling, mirroring, horizontal flip)
and a from-scratch ST-VQA-with-temporal-attention model to measure it."""

__version__ = "0.1.0"

from .augmentation import (AugmentationPlan, augment_split, hflip_row, hflip_text, mirror_row,
                           resample_row)
from .dataset import (AnswerPool, DatasetRow, QuestionType, SplitSpec, build_pools,
                      label_position_histogram, load_manifest, save_manifest)
from .features import ClipFeatures, FeatureStore, concat_features, flipped_features, load_clip, synth_features
from .model import ModelConfig, attend, decode, predict, score_candidates, text_encode, video_encode
from .text import EmbeddingTable, embed_qa, load_embeddings, tokenize
from .training import TrainConfig, adam_step, hinge_loss, train
from .harness import EvalReport, bias_report, evaluate, run_matrix
