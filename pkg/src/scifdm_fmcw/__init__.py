"""SC-IFDM-FMCW joint sensing and communication waveform simulator."""

from .channel import CommTap, RadarTarget, apply_comm_channel, apply_radar_channel, awgn
from .comm import ChannelEstimate, channel_nmse, demap_and_score, equalize, estimate_channel, receive
from .radar import RangeDopplerMap, detect_peaks, process_frame, range_doppler_map, updown_resolve
from .waveform import (
    DOWN,
    UP,
    Frame,
    SparseChirpMap,
    TimeDomainStream,
    WaveformParams,
    build_frame,
    chirp_dft_sparse,
    chirp_time,
    generate_frame,
    scifdm_demodulate,
    scifdm_modulate,
)

__version__ = "0.1.0"
