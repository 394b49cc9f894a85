"""Visual position encodings for vision-language decoders: grids, masks, RoPE and a toy decoder."""
from .analysis import AnchorMetrics, anchor_count, attention_entropy, layer_report, render_heatmap, topk_mass
from .decoder import AttentionRecord, DecoderConfig, forward, init_decoder, visual_to_instruction_attention
from .grid import (
    AllOne,
    Concentric,
    DescentSchedule,
    PositionGrid,
    PyramidDescent,
    RasterScan,
    build_grid,
    build_schedule,
    grid_for_layer,
    ring_depth,
)
from .layout import SequenceLayout, assign_positions, build_mask, validate_mask
from .rope import RotaryConfig, attention_row, attention_score, rotary_frequencies, rotate

__version__ = "0.1.0"
