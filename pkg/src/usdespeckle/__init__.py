"""Self-supervised ultrasound despeckling with multi-scale perturbation."""

__version__ = "0.1.0"
