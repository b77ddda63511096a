"""LTE-U to WiFi cross-technology side channel toolkit."""

__version__ = "0.1.0"

from .codec import (  # noqa: F401
    CodingScheme,
    CtcFrame,
    PunctureSchedule,
    SymbolStream,
    build_frame,
    crc16,
    decode_symbol,
    default_schemes,
    encode_symbol,
    modulation_capacity,
    parse_frame,
)
from .demod import Demodulator, ReceiverConfig, demodulate  # noqa: F401
from .multicell import (  # noqa: F401
    Codebook,
    Deployment,
    build_cluster_configurations,
    build_hex_deployment,
    estimate_proximity,
    example_codebook,
)
from .x2 import X2Client, X2Service, fetch_codebook  # noqa: F401
