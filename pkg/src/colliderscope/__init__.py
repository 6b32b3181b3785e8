"""Collider-event image pipeline.

Event ingestion, physics preselection, dimuon mass-window labeling,
circumference rendering to 224x224 RGB images, balanced dataset emission,
a from-scratch feedforward baseline classifier, and evaluation metrics.
"""

__version__ = "0.1.0"
