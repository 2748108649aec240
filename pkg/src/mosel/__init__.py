"""Model order selection for MIMO-OFDM channels from higher-order singular values."""

__version__ = "0.1.0"
