"""Sketch-conditioned sampling from a frozen style-based generator.

A normalizing flow over the generator's input latent space is trained so
that its samples minimise a CLIP-space energy against one reference sketch
while staying close to the generator's own prior.
"""

from .energy import (AnchorSet, augment_translate, build_anchors, energy_dir, energy_global,
                     energy_nce)
from .flow import CouplingFlow, load_checkpoint, log_prob_base, save_checkpoint
from .stylemix import StyleMixSpec, mixed_synthesize, paired_sample, truncate
from .trainer import LossBreakdown, SketchEnergy, TrainConfig, train, training_step

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "CouplingFlow", "LossBreakdown", "SketchEnergy", "StyleMixSpec", "TrainConfig",
    "augment_translate", "build_anchors", "energy_dir", "energy_global", "energy_nce",
    "load_checkpoint", "log_prob_base", "mixed_synthesize", "paired_sample", "save_checkpoint",
    "train", "training_step", "truncate",
]
