"""Edge CPU capacity planning and packet-level simulation for vehicular services."""

__version__ = "0.1.0"
