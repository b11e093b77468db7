"""Diverse lifespan face-age transformation with landmark-driven geometry and
the identity-deviation-under-age-gaps metric."""

__version__ = "0.1.0"
