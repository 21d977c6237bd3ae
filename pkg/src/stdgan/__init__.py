"""Multi-domain radiometric standardization with an AdaIN-conditioned GAN."""

__version__ = "0.1.0"
