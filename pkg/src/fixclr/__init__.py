"""Repel-only contrastive regularization for semi-supervised domain
generalization: pseudo-labeling training loop, loss, and instrumentation."""

from .augment import AugmentationPolicy, strong_augment, weak_augment
from .data import (DomainTransform, MultiDomainDataset, Sample, SplitSpec,
                   SyntheticConfig, leave_one_domain_out_splits, load_dataset,
                   mixed_domain_batch, save_dataset, synth_generate)
from .errors import ConfigurationError, DataError, FixCLRError, NumericError
from .losses import (FixCLRConfig, GroupCentroids, LossResult,
                     RepresentationBatch, cosine_similarity, fixclr_loss,
                     fixclr_loss_with_positives, fixclr_oracle, group_centroids,
                     loss_for_variant)
from .metrics import (EmbeddingDump, EpochRow, Report, RunMetrics, RunSummary,
                      compute_embeddings, domain_probe_accuracy,
                      export_embeddings, load_embeddings, report,
                      save_embeddings, summarize_run, target_accuracy)
from .model import (EncoderModel, ForwardResult, ModelConfig, load_checkpoint,
                    save_checkpoint)
from .pseudo_label import (PseudoLabelBatch, ThresholdPolicy, keep_ratio,
                           predict_pseudo_labels, pseudo_label_quality)
from .trainer import (LabeledBatch, StepRecord, TrainConfig, Trainer,
                      UnlabeledBatch, cosine_lr, fit)

__version__ = "0.1.0"
