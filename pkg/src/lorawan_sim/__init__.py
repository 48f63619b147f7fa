"""Desk-scale LoRaWAN 1.0.x simulator for sniffing and replay attacks."""

__version__ = "0.1.0"
