"""Published best-row reference values, used only to annotate reports.

Keyed by (dataset, task, model). Accuracies are percentages. These are
annotation references for comparison displays; nothing in the pipeline
asserts against them.
"""

from __future__ import annotations

import re

# (best layer, accuracy %) per model; layer None marks the 26-dim baseline row
LAYER_BEST = {
    ("pfstar", "age", "mfcc"): (None, 80.92),
    ("pfstar", "age", "base-100h"): (6, 84.25),
    ("pfstar", "age", "base-960h"): (5, 81.89),
    ("pfstar", "age", "large-960h-lv60"): (7, 83.59),
    ("pfstar", "age", "large-960h-lv60-self"): (7, 83.46),
    ("pfstar", "gender", "mfcc"): (None, 87.63),
    ("pfstar", "gender", "base-100h"): (4, 93.02),
    ("pfstar", "gender", "base-960h"): (2, 94.57),
    ("pfstar", "gender", "large-960h-lv60"): (1, 91.45),
    ("pfstar", "gender", "large-960h-lv60-self"): (2, 94.57),
    ("cmukids", "age", "mfcc"): (None, 89.97),
    ("cmukids", "age", "base-100h"): (1, 92.13),
    ("cmukids", "age", "base-960h"): (0, 91.63),
    ("cmukids", "age", "large-960h-lv60"): (1, 96.84),
    ("cmukids", "age", "large-960h-lv60-self"): (1, 92.37),
    ("cmukids", "gender", "mfcc"): (None, 88.41),
    ("cmukids", "gender", "base-100h"): (2, 93.78),
    ("cmukids", "gender", "base-960h"): (1, 94.96),
    ("cmukids", "gender", "large-960h-lv60"): (2, 96.68),
    ("cmukids", "gender", "large-960h-lv60-self"): (2, 96.53),
}

# (best reduced dimension k, accuracy %) per model
PCA_BEST = {
    ("pfstar", "age", "base-100h"): (320, 86.05),
    ("pfstar", "age", "base-960h"): (384, 83.72),
    ("pfstar", "age", "large-960h-lv60"): (256, 84.8),
    ("pfstar", "age", "large-960h-lv60-self"): (384, 85.27),
    ("pfstar", "gender", "base-100h"): (64, 93.80),
    ("pfstar", "gender", "base-960h"): (384, 93.80),
    ("pfstar", "gender", "large-960h-lv60"): (320, 92.75),
    ("pfstar", "gender", "large-960h-lv60-self"): (384, 95.00),
    ("cmukids", "age", "base-100h"): (192, 93.18),
    ("cmukids", "age", "base-960h"): (192, 93.43),
    ("cmukids", "age", "large-960h-lv60"): (256, 97.14),
    ("cmukids", "age", "large-960h-lv60-self"): (128, 96.84),
    ("cmukids", "gender", "base-100h"): (64, 96.22),
    ("cmukids", "gender", "base-960h"): (256, 96.71),
    ("cmukids", "gender", "large-960h-lv60"): (64, 98.20),
    ("cmukids", "gender", "large-960h-lv60-self"): (384, 97.95),
}


def dataset_key(name: str) -> str:
    """Normalize a dataset name for reference lookup: 'CMU Kids' -> 'cmukids'."""
    return re.sub(r"[^a-z0-9]", "", name.lower())


def layer_reference(dataset: str, task: str, model_id: str):
    return LAYER_BEST.get((dataset_key(dataset), task, model_id))


def pca_reference(dataset: str, task: str, model_id: str):
    return PCA_BEST.get((dataset_key(dataset), task, model_id))
