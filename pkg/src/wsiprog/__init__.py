"""Whole-slide prognosis pipeline: synthetic pyramids, lesion masking,
multi-magnification patch datasets, feature embedding, an MLP classifier,
and patient-level cross-validated evaluation."""

__version__ = "0.1.0"
