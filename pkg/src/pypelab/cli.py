"""Command-line front end: ``pypelab {grid,mask,simulate,analyze,check}``.

Exit codes: 0 success, 1 check or runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import grid as grid_mod
from . import oracle
from .analysis import DEFAULT_K, DEFAULT_THRESHOLD, layer_report, metrics_to_csv, render_heatmap
from .decoder import (
    AttentionRecord,
    DecoderConfig,
    forward,
    init_decoder,
    layer_inputs,
    load_state,
    save_state,
    visual_to_instruction_attention,
)
from .grid import PositionGrid, build_schedule, parse_scheme
from .layout import SequenceLayout, assign_positions, build_mask, mask_to_csv, positions_to_csv, validate_mask
from .rope import RotaryConfig, attention_score

SCHEMES = ("raster", "concentric", "allone", "pyramid")


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheme", choices=SCHEMES, default="raster")
    p.add_argument("--height", type=int, default=4)
    p.add_argument("--width", type=int, default=None, help="defaults to --height")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--interval", type=int, default=1, help="descent interval t (pyramid only)")
    p.add_argument("--layer", type=int, default=1, help="1-indexed layer to emit")
    p.add_argument("--config", default=None, help="key=value file; explicit flags take precedence")


def _add_layout_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prefix-len", type=int, default=0)
    p.add_argument("--instruction-len", type=int, default=0)
    p.add_argument("--fixed-text-positions", action="store_true", help="keep instruction positions at layer-1 values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pypelab", description="Visual position encoding laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="emit a position grid as CSV")
    _add_grid_flags(p)
    p.add_argument("--out", default=None)
    p.add_argument("--trace", action="store_true", help="print the P_max schedule (pyramid)")
    p.add_argument("--png", default=None, help="also render the grid to this PNG")

    p = sub.add_parser("mask", help="emit positions and the attention mask")
    _add_grid_flags(p)
    _add_layout_flags(p)
    p.add_argument("--out", default=None)
    p.add_argument("--validate", action="store_true")

    p = sub.add_parser("simulate", help="run the toy decoder and dump attention")
    _add_grid_flags(p)
    _add_layout_flags(p)
    p.add_argument("--seed", type=int, default=int(os.environ.get("PYPE_SEED", "0")))
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--vocab", type=int, default=32)
    tok = p.add_mutually_exclusive_group()
    tok.add_argument("--tokens", default=None, help="comma-separated token ids")
    tok.add_argument("--random-tokens", type=int, default=None, metavar="N")
    p.add_argument("--weights", default=None, help="load weights from a PYPE file instead of seeding")
    p.add_argument("--save-weights", default=None)
    p.add_argument("--outdir", required=True)
    p.add_argument("--png", action="store_true", help="also write matplotlib figures")

    p = sub.add_parser("analyze", help="anchor metrics from a simulate output directory")
    p.add_argument("--attn-dir", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", default=None)
    p.add_argument("--png", default=None, help="also plot metrics to this PNG")
    p.add_argument("--config", default=None)

    p = sub.add_parser("check", help="cross-check fast paths against the oracles")
    p.add_argument("--grid-max", type=int, default=12)
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int, default=int(os.environ.get("PYPE_SEED", "0")))
    return parser


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = read_config(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, value in cfg.items():
            if key not in actions or key in ("config", "help"):
                subparser.error(f"unknown config key {key!r}")
            if isinstance(actions[key], argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = value
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return parser, args


def _grid_setup(args, parser):
    width = args.width if args.width is not None else args.height
    if args.height < 1 or width < 1:
        parser.error("--height and --width must be positive")
    if args.layers < 1 or args.interval < 1:
        parser.error("--layers and --interval must be >= 1")
    if not 1 <= args.layer <= args.layers:
        parser.error(f"--layer must be in [1, {args.layers}]")
    scheme = parse_scheme(args.scheme, args.interval)
    # schedule needs H >= 2; a 1-row image has nothing to descend
    schedule = build_schedule(args.layers, args.interval, max(args.height, 2), width)
    return scheme, args.height, width, schedule


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_grid(args, parser) -> int:
    scheme, H, W, schedule = _grid_setup(args, parser)
    g = grid_mod.grid_for_layer(scheme, H, W, schedule, args.layer)
    _write(g.to_csv(), args.out)
    if args.trace and isinstance(scheme, grid_mod.PyramidDescent):
        print(f"trace: {schedule.trace()}")
    if args.png:
        from .plotting import plot_grid

        plot_grid(g, args.png)
    return 0


def _layout_for(args, parser, H, W):
    if args.prefix_len < 0 or args.instruction_len < 0:
        parser.error("segment lengths must be >= 0")
    return SequenceLayout(args.prefix_len, PositionGrid(np.ones((H, W), dtype=np.int64)), args.instruction_len)


def cmd_mask(args, parser) -> int:
    scheme, H, W, schedule = _grid_setup(args, parser)
    layout = _layout_for(args, parser, H, W)
    cfg = _Cfg(scheme, args.fixed_text_positions)
    _, positions, mask = layer_inputs(cfg, layout, schedule, args.layer)
    _write(positions_to_csv(positions) + mask_to_csv(mask), args.out)
    if args.validate:
        ok = validate_mask(mask, positions)
        print(f"validate: {'PASS' if ok else 'FAIL'}", file=sys.stderr)
        return 0 if ok else 1
    return 0


class _Cfg:
    """Just enough of a DecoderConfig for ``layer_inputs``."""

    def __init__(self, scheme, fixed_text_positions):
        self.scheme = scheme
        self.fixed_text_positions = fixed_text_positions


def _fmt(v: float) -> str:
    return repr(float(v))


def _matrix_csv(m) -> str:
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in m)


def cmd_simulate(args, parser) -> int:
    scheme, H, W, schedule = _grid_setup(args, parser)
    layout = _layout_for(args, parser, H, W)
    n = layout.total_len
    try:
        if args.weights:
            state = load_state(args.weights, scheme=scheme, seed=args.seed,
                               fixed_text_positions=args.fixed_text_positions)
            if state.config.num_layers != args.layers:
                parser.error(f"--layers {args.layers} does not match weight file ({state.config.num_layers})")
        else:
            state = init_decoder(
                DecoderConfig(args.layers, args.heads, args.dim, args.vocab, seed=args.seed, scheme=scheme,
                              fixed_text_positions=args.fixed_text_positions)
            )
    except ValueError as exc:
        parser.error(str(exc))
    vocab = state.config.vocab_size
    if args.tokens is not None:
        try:
            ids = [int(t) for t in args.tokens.split(",") if t.strip()]
        except ValueError:
            parser.error("--tokens must be comma-separated integers")
    else:
        count = args.random_tokens if args.random_tokens is not None else n
        ids = np.random.default_rng(args.seed).integers(0, vocab, size=count).tolist()
    if len(ids) != n:
        parser.error(f"layout needs {n} tokens (prefix {args.prefix_len} + {H}x{W} image + "
                     f"instruction {args.instruction_len}), got {len(ids)}")
    if min(ids) < 0 or max(ids) >= vocab:
        parser.error(f"token ids must lie in [0, {vocab})")

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    logits, records = forward(state, ids, layout, schedule)
    (outdir / "logits.csv").write_text(_matrix_csv(logits))
    (outdir / "tokens.csv").write_text(",".join(str(i) for i in ids) + "\n")
    (outdir / "schedule.csv").write_text(schedule.trace() + "\n")
    meta = {
        "scheme": args.scheme, "interval": args.interval, "layers": args.layers, "heads": state.config.num_heads,
        "dim": state.config.model_dim, "vocab": vocab, "seed": args.seed, "prefix_len": args.prefix_len,
        "height": H, "width": W, "instruction_len": args.instruction_len,
        "fixed_text_positions": args.fixed_text_positions,
    }
    (outdir / "layout.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    for layer in range(1, args.layers + 1):
        _, positions, _ = layer_inputs(state.config, layout, schedule, layer)
        (outdir / f"positions_layer{layer}.csv").write_text(positions_to_csv(positions))
    for rec in records:
        (outdir / f"attn_layer{rec.layer}_head{rec.head}.csv").write_text(_matrix_csv(rec.probs))
    maps = visual_to_instruction_attention(records, layout) if layout.instruction_len else []
    for layer, m in enumerate(maps, start=1):
        render_heatmap(m, outdir / f"heatmap_layer{layer}.pgm")
    if args.save_weights:
        save_state(state, args.save_weights)
    if args.png:
        from .plotting import plot_heatmaps, plot_schedule

        if maps:
            plot_heatmaps(maps, outdir / "heatmaps.png")
        plot_schedule(schedule, outdir / "schedule.png")
    print(f"wrote {len(records)} attention maps, {len(maps)} heatmaps to {outdir}")
    return 0


_ATTN_RE = re.compile(r"attn_layer(\d+)_head(\d+)\.csv$")


def _read_matrix(path: Path, n: int) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise CliError(f"{path}:{lineno}: non-numeric entry") from None
        if len(row) != n:
            raise CliError(f"{path}:{lineno}: expected {n} columns, got {len(row)}")
        rows.append(row)
    if len(rows) != n:
        raise CliError(f"{path}:{len(rows) + 1}: expected {n} rows, got {len(rows)}")
    return np.array(rows)


def load_attention_dir(attn_dir):
    """Read ``layout.txt`` and every ``attn_layer*_head*.csv`` written by ``simulate``."""
    attn_dir = Path(attn_dir)
    meta_path = attn_dir / "layout.txt"
    if not meta_path.is_file():
        raise CliError(f"{meta_path}: missing")
    try:
        meta = read_config(meta_path)
        H, W = int(meta["height"]), int(meta["width"])
        layout = SequenceLayout(int(meta["prefix_len"]), PositionGrid(np.ones((H, W), dtype=np.int64)),
                                int(meta["instruction_len"]))
    except (KeyError, ValueError) as exc:
        raise CliError(f"{meta_path}: malformed layout ({exc})") from None
    records = []
    for path in sorted(attn_dir.iterdir()):
        m = _ATTN_RE.match(path.name)
        if m:
            records.append(AttentionRecord(int(m.group(1)), int(m.group(2)), _read_matrix(path, layout.total_len)))
    if not records:
        raise CliError(f"{attn_dir}: no attn_layer*_head*.csv files")
    records.sort(key=lambda r: (r.layer, r.head))
    return layout, records


def cmd_analyze(args, parser) -> int:
    if args.k < 1:
        parser.error("--k must be >= 1")
    if args.threshold <= 1:
        parser.error("--threshold must exceed 1")
    layout, records = load_attention_dir(args.attn_dir)
    metrics = layer_report(records, layout, args.k, args.threshold)
    _write(metrics_to_csv(metrics), args.out)
    if args.png:
        from .plotting import plot_metrics

        plot_metrics(metrics, args.png)
    return 0


def run_checks(grid_max: int = 12, cases: int = 1000, seed: int = 0, out=None) -> bool:
    """Oracle cross-checks; prints one row per check and stops at the first failure."""
    out = out or sys.stdout
    results = []

    def report(name, ok, detail):
        results.append((name, ok))
        print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}", file=out)
        return ok

    schemes = [grid_mod.RasterScan(), grid_mod.Concentric(), grid_mod.AllOne(), grid_mod.PyramidDescent(1)]
    n_grids, failure = 0, None
    for H in range(1, grid_max + 1):
        for W in range(1, grid_max + 1):
            for scheme in schemes:
                for p_max in range(1, grid_mod.max_p_max(H, W) + 2):
                    n_grids += 1
                    if grid_mod.build_grid(scheme, H, W, p_max) != oracle.grid_oracle(scheme, H, W, p_max):
                        failure = f"first mismatch: {scheme.name} H={H} W={W} p_max={p_max}"
                        break
                if failure:
                    break
            if failure:
                break
        if failure:
            break
    if not report("grids", failure is None, failure or f"{n_grids} grids match"):
        return False

    rng = np.random.default_rng(seed)
    worst, failure = 0.0, None
    for c in range(cases):
        D = int(rng.choice([2, 8, 64]))
        q, k = rng.standard_normal(D), rng.standard_normal(D)
        m, n = (int(v) for v in rng.integers(-512, 512, size=2))
        fast = attention_score(q, k, m, n, RotaryConfig(D))
        ref = oracle.attention_oracle(q, k, m, n)
        err = abs(fast - ref) / max(abs(ref), np.linalg.norm(q) * np.linalg.norm(k) * 1e-3)
        worst = max(worst, err)
        if err > 1e-9:
            failure = f"case {c}: D={D} m={m} n={n} fast={fast!r} oracle={ref!r}"
            break
    if not report("attention", failure is None, failure or f"{cases} cases, max rel err {worst:.1e}"):
        return False

    failure, n_sched = None, 0
    for num_layers in range(1, 41):
        for t in range(1, 11):
            for H in range(2, 25):
                n_sched += 1
                s = build_schedule(num_layers, t, H)
                p = (s.initial_p_max,) + s.per_layer_p_max
                bad = any(b > a or a - b > 1 or b < 1 for a, b in zip(p, p[1:]))
                bad |= any(p[i] != p[i - 1] and i % t for i in range(1, len(p)))
                if bad:
                    failure = f"layers={num_layers} t={t} H={H} trace={s.trace()}"
                    break
            if failure:
                break
        if failure:
            break
    if not report("schedules", failure is None, failure or f"{n_sched} schedules monotone"):
        return False

    failure = None
    for c in range(200):
        H, W = (int(v) for v in rng.integers(1, 9, size=2))
        scheme = schemes[c % 4]
        g = grid_mod.build_grid(scheme, H, W, grid_mod.max_p_max(H, W))
        lay = SequenceLayout(int(rng.integers(0, 5)), g, int(rng.integers(0, 5)))
        pos = assign_positions(lay)
        if not validate_mask(build_mask(lay, pos), pos):
            failure = f"case {c}: {scheme.name} {H}x{W}"
            break
    return report("masks", failure is None, failure or "200 layouts valid")


def cmd_check(args, parser) -> int:
    if args.grid_max < 1 or args.cases < 1:
        parser.error("--grid-max and --cases must be >= 1")
    ok = run_checks(args.grid_max, args.cases, args.seed)
    print("overall: PASS" if ok else "overall: FAIL")
    return 0 if ok else 1


COMMANDS = {
    "grid": cmd_grid,
    "mask": cmd_mask,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser, args = _parse(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
