"""Mini-batch reweighting SGD.

Per training step, k mini-batches with identical label histograms are
compared: one plays validation, the rest training. Training-batch weights
come from gradient inner products against the validation gradient, are
L1-normalized, and scale each batch's contribution to a momentum update.
"""

from . import bilevel, data, errors, nn

__all__ = ["bilevel", "data", "errors", "nn"]
__version__ = "0.1.0"
