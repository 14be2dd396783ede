"""Hierarchical image classification grounded on nested fine-to-coarse segmentation."""

__version__ = "0.1.0"
