"""Convolution-based unlearnable examples: attacks, the COIN defense, the EPD
detector, a Gaussian-mixture laboratory and a linear-probe evaluation kit."""

__version__ = "0.1.0"
