"""Packet-level simulator of an LVAP-based multi-AP Wi-Fi WLAN carrying FPS game traffic."""

__version__ = "0.1.0"
