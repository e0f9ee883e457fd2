"""Desk-scale simulation of NIC-offloaded storage data-plane policies."""

__version__ = "0.1.0"
