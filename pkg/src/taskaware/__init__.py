"""Desk-scale multi-task learning lab with task-awareness mechanisms.

Provides a float64 autodiff tensor core, a miniature transformer text
encoder, four model variants (STL, MTL, MTL-TAI, MTL-TE), an AdamW
training loop with per-task best-epoch selection, evaluation protocols
(5-fold CV and train/test with 95% confidence intervals), and a
synthetic two-task benchmark that induces negative transfer.
"""

__version__ = "0.1.0"
