"""Event sources that drive the engine: a simulated link and real UDP.

Both feed the same engine API, so a transfer behaves identically whichever
transport carries it; only delivery timing and loss differ.
"""

from .sim import (
    LinkModel,
    MtuError,
    SimClock,
    SimulatedLink,
    TransferOutcome,
    run_simulated_transfer,
)
from .udp import TransportError, UdpEndpoint, run_loopback_transfer

__all__ = [
    "LinkModel",
    "MtuError",
    "SimClock",
    "SimulatedLink",
    "TransferOutcome",
    "TransportError",
    "UdpEndpoint",
    "run_loopback_transfer",
    "run_simulated_transfer",
]
