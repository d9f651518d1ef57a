"""Multi-frame spatio-temporal 3D single-object tracking on BEV pillars."""

__version__ = "0.1.0"
