"""Attribution-guided augmentation and contrastive open-set recognition lab.

Thin wrapper over the C++ core: models train on NCHW float32 arrays in
[0, 1]; embeddings come back as numpy arrays; detection metrics operate on
plain score lists.
"""

from gradmix._core import (
    GradmixError,
    Model,
    auroc,
    corrupt,
    detection_metrics,
    knn_scores,
    openness,
    synth_blobs,
    twonn_id,
)

__all__ = [
    "GradmixError",
    "Model",
    "auroc",
    "corrupt",
    "detection_metrics",
    "knn_scores",
    "openness",
    "synth_blobs",
    "twonn_id",
]
