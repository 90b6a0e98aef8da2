"""Chirp-based integrated sensing and communication simulator."""

from .cfg import (ArrayConfig, ChirpConfig, ConfigError, DerivedParams, System,
                  data_rate, derive, frame_bits, load_system, make_system,
                  preset_by_id, preset_systems)

__all__ = [
    "ArrayConfig", "ChirpConfig", "ConfigError", "DerivedParams", "System",
    "data_rate", "derive", "frame_bits", "load_system", "make_system",
    "preset_by_id", "preset_systems",
]
