"""Attentional scale-sequence fusion neck kernels (SSFF, TFE, CPAM), EIoU loss and Soft-NMS."""

__version__ = "0.1.0"
