"""molwg: single-molecule-on-waveguide simulation and metrology toolkit."""

__version__ = "0.1.0"
