"""Backdoor-poisoning testbed with a stamp-and-relabel defense.

Poison a dataset with representative backdoor attacks, detect a suspected
subset, rewrite it as stamped pseudo-labeled samples, train with the
standard pipeline, and evaluate attack and defense effectiveness including
stamped-inference test filtering.
"""

from .attacks import (
    TargetMap,
    TargetMode,
    TriggerKind,
    TriggerSpec,
    apply_trigger,
    blend_trigger,
    clean_label_trigger,
    craft_clean_label,
    patch_trigger,
    poison_dataset,
    warp_trigger,
)
from .container import load_split, save_split
from .dataset import (
    DatasetPair,
    DatasetSplit,
    LabeledExample,
    PoisonManifest,
    Provenance,
    load_dataset,
    make_synthetic,
    split_verified,
    subsample,
)
from .defense import NABDataset, nab_transform, stamp_rate
from .detection import (
    DetectionReport,
    LossTrace,
    detect_lga,
    detect_ln,
    detect_oracle,
    detect_spectre,
    detection_accuracy,
)
from .errors import NabkitError
from .metrics import (
    REJECT,
    MetricsReport,
    compute_core_metrics,
    compute_filter_metrics,
    filter_inference,
)
from .relabeling import (
    ClassCenters,
    FeatureExtractor,
    PseudoLabelMap,
    nc_pseudo_labels,
    pseudo_label_accuracy,
    synthetic_pseudo_labels,
    train_feature_extractor,
    vd_pseudo_labels,
)
from .stamping import StampSpec, apply_stamp, stamp_batch
from .training import Classifier, EvalProbe, TrainConfig, TrainResult, train

__version__ = "0.1.0"
