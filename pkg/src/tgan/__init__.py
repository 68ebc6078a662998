"""Age-conditioned GAN for longitudinal brain-image and indicator prediction, with a synthetic phantom corpus."""

__version__ = "0.1.0"
