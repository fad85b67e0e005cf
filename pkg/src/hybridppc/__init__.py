"""Hybrid and all-digital MIMO-OFDM precoding under per-antenna power limits."""

__version__ = "0.1.0"
