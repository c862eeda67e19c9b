"""Near-field spot beamfocusing laboratory.

Simulates a room-mounted programmable phase panel focusing power onto a
point in its radiating near field, trains quantized phase patterns with
per-subarray TD3 agents, and transfers trained policies between subarrays
(rotation-aware phase-image similarity) and between focal points
(power-weighted parameter blending).
"""

__version__ = "0.1.0"

from .geometry import ApertureConfig, RoomConfig, ConfigError
from .channel import ChannelConfig, ChannelMatrix, channel_matrix
from .beams import BeamMatrix, csi_oracle, oracle_power, received_power

__all__ = [
    "__version__",
    "ApertureConfig",
    "RoomConfig",
    "ConfigError",
    "ChannelConfig",
    "ChannelMatrix",
    "channel_matrix",
    "BeamMatrix",
    "csi_oracle",
    "oracle_power",
    "received_power",
]
