"""Event-camera sensor-setting toolkit: simulate, represent, detect, evaluate."""

__version__ = "0.1.0"
