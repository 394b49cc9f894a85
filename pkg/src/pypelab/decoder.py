"""A small seeded causal decoder that re-derives positions and masks per layer.

Weights are drawn from SplitMix64 so any port can rebuild them bit for bit:

* ``state`` starts at ``seed`` (taken mod 2**64); each draw adds
  ``0x9E3779B97F4A7C15`` and mixes with the usual two xor-shift-multiply
  rounds (``0xBF58476D1CE4E5B9``, ``0x94D049BB133111EB``).
* a draw ``z`` becomes ``u = (z >> 11) * 2**-53`` in [0, 1) and the weight is
  ``init_scale * (2 u - 1)``.
* tensors are filled row-major, in this order: ``embed (V, d)``; per layer
  ``wq, wk, wv, wo (d, d)``, ``w_up (d, 4d)``, ``w_down (4d, d)``; then
  ``lm_head (d, V)``.  RMS-norm gains are ones and consume no draws.

Blocks are pre-norm: ``x += attn(rms(x))`` then ``x += down(silu(up(rms(x))))``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import Concentric, DescentSchedule, EncodingScheme, PyramidDescent, RasterScan, build_grid, grid_for_layer
from .layout import SequenceLayout, assign_positions, build_mask
from .rope import RotaryConfig, attention_row

__all__ = [
    "DecoderConfig",
    "DecoderState",
    "AttentionRecord",
    "splitmix64",
    "init_decoder",
    "forward",
    "forward_embeddings",
    "reference_forward",
    "layer_inputs",
    "visual_to_instruction_attention",
    "save_state",
    "load_state",
]

RMS_EPS = 1e-5
FFN_MULT = 4
MAGIC = b"PYPE"
FORMAT_VERSION = 1

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int
    num_heads: int
    model_dim: int
    vocab_size: int
    seed: int = 0
    scheme: EncodingScheme = field(default_factory=RasterScan)
    rotary_base: float = 10000.0
    # pin instruction positions to the layer-1 grid instead of following P_max down
    fixed_text_positions: bool = False
    init_scale: float = 0.02

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("num_layers and num_heads must be >= 1")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.model_dim < 1 or self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if (self.model_dim // self.num_heads) % 2:
            raise ValueError(f"head dim {self.model_dim // self.num_heads} must be even")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def ffn_dim(self) -> int:
        return FFN_MULT * self.model_dim

    @property
    def rotary(self) -> RotaryConfig:
        return RotaryConfig(self.head_dim, self.rotary_base)


@dataclass(frozen=True)
class LayerWeights:
    attn_norm: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ffn_norm: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray


@dataclass(frozen=True)
class DecoderState:
    config: DecoderConfig
    embed: np.ndarray
    layers: tuple
    final_norm: np.ndarray
    lm_head: np.ndarray

    def tensors(self):
        """All tensors in file order."""
        yield self.embed
        for lw in self.layers:
            yield from (lw.attn_norm, lw.wq, lw.wk, lw.wv, lw.wo, lw.ffn_norm, lw.w_up, lw.w_down)
        yield self.final_norm
        yield self.lm_head


@dataclass(frozen=True)
class AttentionRecord:
    layer: int  # 1-indexed
    head: int  # 0-indexed
    probs: np.ndarray


def splitmix64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """``count`` consecutive SplitMix64 outputs after skipping ``offset`` draws."""
    start = np.uint64(seed & _MASK64)
    steps = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    z = start + steps * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _shapes(config: DecoderConfig):
    d, f, v = config.model_dim, config.ffn_dim, config.vocab_size
    shapes = [("embed", (v, d))]
    for _ in range(config.num_layers):
        shapes += [("wq", (d, d)), ("wk", (d, d)), ("wv", (d, d)), ("wo", (d, d)), ("w_up", (d, f)), ("w_down", (f, d))]
    shapes.append(("lm_head", (d, v)))
    return shapes


def init_decoder(config: DecoderConfig) -> DecoderState:
    shapes = _shapes(config)
    total = sum(math.prod(s) for _, s in shapes)
    draws = splitmix64(config.seed, total)
    flat = config.init_scale * (2.0 * ((draws >> np.uint64(11)).astype(np.float64) * 2.0**-53) - 1.0)
    tensors, at = [], 0
    for _, shape in shapes:
        size = math.prod(shape)
        tensors.append(flat[at : at + size].reshape(shape))
        at += size
    return _assemble(config, tensors, with_norms=False)


def _assemble(config: DecoderConfig, tensors: list, with_norms: bool) -> DecoderState:
    d = config.model_dim
    it = iter(tensors)
    embed = next(it)
    layers = []
    for _ in range(config.num_layers):
        if with_norms:
            attn_norm, wq, wk, wv, wo, ffn_norm, w_up, w_down = (next(it) for _ in range(8))
        else:
            wq, wk, wv, wo, w_up, w_down = (next(it) for _ in range(6))
            attn_norm, ffn_norm = np.ones(d), np.ones(d)
        layers.append(LayerWeights(attn_norm, wq, wk, wv, wo, ffn_norm, w_up, w_down))
    final_norm = next(it) if with_norms else np.ones(d)
    lm_head = next(it)
    for arr in [embed, final_norm, lm_head]:
        arr.flags.writeable = False
    for lw in layers:
        for arr in vars(lw).values():
            arr.flags.writeable = False
    return DecoderState(config, embed, tuple(layers), final_norm, lm_head)


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS) * gain


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _check_inputs(state: DecoderState, n_tokens: int, layout: SequenceLayout, schedule: DescentSchedule):
    if n_tokens != layout.total_len:
        raise ValueError(f"got {n_tokens} tokens for a layout of length {layout.total_len}")
    if schedule.num_layers != state.config.num_layers:
        raise ValueError(f"schedule covers {schedule.num_layers} layers, decoder has {state.config.num_layers}")


def layer_inputs(config: DecoderConfig, layout: SequenceLayout, schedule: DescentSchedule, layer: int):
    """Grid-adjusted layout, positions and mask used at ``layer`` (1-indexed)."""
    H, W = layout.grid.height, layout.grid.width
    grid = grid_for_layer(config.scheme, H, W, schedule, layer)
    lay = layout.with_grid(grid)
    base = None
    if config.fixed_text_positions:
        p0 = schedule.initial_p_max if isinstance(config.scheme, (Concentric, PyramidDescent)) else 1
        base = build_grid(config.scheme, H, W, p0).max_index
    positions = assign_positions(lay, instruction_base=base)
    return lay, positions, build_mask(lay, positions)


def forward(state: DecoderState, token_ids: Sequence[int], layout: SequenceLayout, schedule: DescentSchedule):
    """Run the decoder; returns ``(logits, records)``.

    ``logits`` has shape ``(total_len, vocab_size)``; ``records`` are ordered
    layer-major then head-major.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("token_ids must be one-dimensional")
    if ids.size and (ids.min() < 0 or ids.max() >= state.config.vocab_size):
        raise ValueError(f"token ids must lie in [0, {state.config.vocab_size})")
    return forward_embeddings(state, state.embed[ids], layout, schedule)


def forward_embeddings(state: DecoderState, x, layout: SequenceLayout, schedule: DescentSchedule):
    """``forward`` on explicit input embeddings of shape ``(total_len, model_dim)``."""
    cfg = state.config
    x = np.array(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.model_dim:
        raise ValueError(f"embeddings must have shape (n, {cfg.model_dim}), got {x.shape}")
    _check_inputs(state, x.shape[0], layout, schedule)
    n, hd, rot = x.shape[0], cfg.head_dim, cfg.rotary
    scale = 1.0 / math.sqrt(hd)
    records = []
    for layer, lw in enumerate(state.layers, start=1):
        _, pos, mask = layer_inputs(cfg, layout, schedule, layer)
        h = rms_norm(x, lw.attn_norm)
        q, k, v = h @ lw.wq, h @ lw.wk, h @ lw.wv
        heads = []
        for head in range(cfg.num_heads):
            cols = slice(head * hd, (head + 1) * hd)
            kh = k[:, cols]
            probs = np.vstack(
                [attention_row(q[a, cols], kh, pos[a], pos, mask[a], rot, scale) for a in range(n)]
            )
            records.append(AttentionRecord(layer, head, probs))
            heads.append(probs @ v[:, cols])
        x = x + np.hstack(heads) @ lw.wo
        x = x + silu(rms_norm(x, lw.ffn_norm) @ lw.w_up) @ lw.w_down
    logits = rms_norm(x, state.final_norm) @ state.lm_head
    return logits, records


def reference_forward(state: DecoderState, token_ids: Sequence[int]):
    """Vanilla causal RoPE decoder: positions 0..n-1, lower-triangular mask.

    Rotations go through complex multiplication rather than the kernel in
    ``rope`` so this path can serve as an independent reference.
    """
    cfg = state.config
    x = state.embed[np.asarray(token_ids, dtype=np.int64)].astype(np.float64)
    n, hd = x.shape[0], cfg.head_dim
    freqs = np.exp(-np.log(cfg.rotary_base) * np.arange(0, hd, 2) / hd)
    phase = np.exp(1j * np.outer(np.arange(n), freqs))
    causal = np.tril(np.ones((n, n), dtype=bool))
    probs_all = []
    for lw in state.layers:
        h = rms_norm(x, lw.attn_norm)
        q, k, v = h @ lw.wq, h @ lw.wk, h @ lw.wv
        outs = []
        for head in range(cfg.num_heads):
            cols = slice(head * hd, (head + 1) * hd)
            qc = (q[:, cols][:, 0::2] + 1j * q[:, cols][:, 1::2]) * phase
            kc = (k[:, cols][:, 0::2] + 1j * k[:, cols][:, 1::2]) * phase
            s = (qc @ kc.conj().T).real / math.sqrt(hd)
            s = np.where(causal, s, -np.inf)
            e = np.exp(s - s.max(axis=1, keepdims=True))
            p = e / e.sum(axis=1, keepdims=True)
            probs_all.append(p)
            outs.append(p @ v[:, cols])
        x = x + np.hstack(outs) @ lw.wo
        x = x + silu(rms_norm(x, lw.ffn_norm) @ lw.w_up) @ lw.w_down
    return rms_norm(x, state.final_norm) @ state.lm_head, probs_all


def visual_to_instruction_attention(records: Sequence[AttentionRecord], layout: SequenceLayout) -> list[np.ndarray]:
    """Per-layer H x W map of what the last instruction token reads from the image, averaged over heads."""
    if layout.instruction_len == 0:
        raise ValueError("layout has no instruction tokens")
    if not records:
        raise ValueError("no attention records")
    by_layer: dict[int, list[np.ndarray]] = {}
    for rec in records:
        by_layer.setdefault(rec.layer, []).append(rec.probs[-1, layout.visual_slice])
    H, W = layout.grid.height, layout.grid.width
    return [np.mean(by_layer[layer], axis=0).reshape(H, W) for layer in sorted(by_layer)]


def save_state(state: DecoderState, path) -> None:
    """Little-endian dump: magic, u32 version, u32 dims, then f64 tensors in file order."""
    cfg = state.config
    header = MAGIC + struct.pack(
        "<6I", FORMAT_VERSION, cfg.num_layers, cfg.num_heads, cfg.model_dim, cfg.vocab_size, cfg.ffn_dim
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in state.tensors():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path, scheme: Optional[EncodingScheme] = None, **config_kwargs) -> DecoderState:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a PYPE weight file")
    version, L, nh, d, vocab, ffn = struct.unpack_from("<6I", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    config = DecoderConfig(L, nh, d, vocab, scheme=scheme or RasterScan(), **config_kwargs)
    if ffn != config.ffn_dim:
        raise ValueError(f"{path}: ffn dim {ffn} does not match expected {config.ffn_dim}")
    shapes = [(vocab, d)]
    for _ in range(L):
        shapes += [(d,), (d, d), (d, d), (d, d), (d, d), (d,), (d, ffn), (ffn, d)]
    shapes += [(d,), (d, vocab)]
    body = np.frombuffer(data, dtype="<f8", offset=28)
    expected = sum(math.prod(s) for s in shapes)
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {body.size}")
    tensors, at = [], 0
    for shape in shapes:
        size = math.prod(shape)
        tensors.append(body[at : at + size].astype(np.float64).reshape(shape))
        at += size
    return _assemble(config, tensors, with_norms=True)
