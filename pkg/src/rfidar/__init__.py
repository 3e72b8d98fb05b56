"""Real-time activity recognition from wearable RFID tag-reading streams."""

__version__ = "0.1.0"
