"""Streaming identification of medical-device software and AI-enabled devices
in UDI registry dumps, with annotation and report generation."""

from __future__ import annotations

__version__ = "0.1.0"
