"""Command-line front end.

Two commands:

  transfer  -- synthesize one stylized image, optionally logging per-iteration
               losses to CSV and exporting Laplacian visualizations.
  compare   -- run each content/style pair twice (with the configured
               Laplacian terms, and with their weights zeroed) and tabulate
               normalized losses, fractions and ratios to CSV.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import imgio, net, synth, weights
from .loss import LossConfig
from .synth import SynthesisConfig

PROGRESS_EVERY = 50


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_lap(value: str) -> tuple[int, float]:
    try:
        p_str, gamma_str = value.split(":", 1)
        p, gamma = int(p_str), float(gamma_str)
    except ValueError:
        raise UsageError(f"--lap expects P:GAMMA, got {value!r}")
    if p < 1 or gamma < 0:
        raise UsageError(f"--lap expects P >= 1 and GAMMA >= 0, got {value!r}")
    return p, gamma


def _add_shared_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--size", type=int, default=512,
                   help="working size of the larger image dimension (default 512)")
    p.add_argument("--content-weight", type=float, default=5.0, metavar="ALPHA")
    p.add_argument("--style-weight", type=float, default=100.0, metavar="BETA")
    p.add_argument("--lap", action="append", metavar="P:GAMMA",
                   help="Laplacian term: pooling size and weight; repeatable "
                        "(default 4:100)")
    p.add_argument("--lap-filter", choices=["pool", "log5"], default="pool",
                   help="pooled 3x3 Laplacian (default) or 5x5 LoG ablation")
    p.add_argument("--content-layer", default="conv4_2")
    p.add_argument("--style-layers",
                   default="conv1_1,conv2_1,conv3_1,conv4_1,conv5_1",
                   help="comma-separated layer names, weighted uniformly")
    p.add_argument("--optimizer", choices=["lbfgs", "adam"], default="lbfgs")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", metavar="PATH", help="LSW1 weight file")
    p.add_argument("--tiny-net", action="store_true",
                   help="seeded random reduced-width network (test mode)")
    p.add_argument("--style-scale", type=float, default=1.0)
    p.add_argument("--vgg-pool", choices=["max", "avg"], default="max")
    p.add_argument("--adam-lr", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neuralstyle", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("transfer", help="synthesize one stylized image")
    t.add_argument("--content", required=True)
    t.add_argument("--style", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--init", choices=["content", "random"], default="content")
    t.add_argument("--loss-csv", metavar="PATH",
                   help="write per-iteration losses as CSV")
    t.add_argument("--save-laplacians", metavar="DIR",
                   help="export Laplacian images of content and output")
    _add_shared_options(t)
    t.set_defaults(func=run_transfer)

    c = sub.add_parser("compare",
                       help="paired runs with/without Laplacian terms, loss table")
    c.add_argument("--pairs", required=True,
                   help="file of 'content_path style_path' lines")
    c.add_argument("--out-csv", required=True)
    c.add_argument("--init", choices=["content", "random"], default="random",
                   help="default random: normalization needs nonzero initial "
                        "Laplacian loss")
    _add_shared_options(c)
    c.set_defaults(func=run_compare)
    return parser


def config_from_args(args) -> SynthesisConfig:
    lap_flags = args.lap if args.lap else ["4:100"]
    lap_terms = tuple(_parse_lap(v) for v in lap_flags)
    style_names = [s.strip() for s in args.style_layers.split(",") if s.strip()]
    if not style_names:
        raise UsageError("--style-layers must name at least one layer")
    style_layers = tuple(
        (net.as_tap_name(name), 1.0 / len(style_names)) for name in style_names)
    if args.content_weight <= 0 and args.style_weight <= 0 and \
            not any(g > 0 for _, g in lap_terms):
        raise UsageError("at least one loss weight must be > 0")
    try:
        loss_cfg = LossConfig(
            alpha=args.content_weight, beta=args.style_weight,
            content_layer=net.as_tap_name(args.content_layer),
            style_layers=style_layers, lap_terms=lap_terms,
            lap_filter=args.lap_filter)
        return SynthesisConfig(
            loss=loss_cfg, optimizer=args.optimizer, iterations=args.iters,
            init=args.init, seed=args.seed, size=args.size,
            adam_lr=args.adam_lr)
    except ValueError as e:
        raise UsageError(str(e))


def _load_network(args, config: SynthesisConfig) -> net.NetworkGraph:
    if args.tiny_net:
        store = net.tiny_weight_store(args.seed)
    elif args.weights:
        store = weights.load(args.weights)
    else:
        raise UsageError("either --weights PATH or --tiny-net is required")
    return net.build_vgg19(store, pooling_mode=args.vgg_pool,
                           taps=config.loss.tap_names(), prune=True)


def _load_images(args):
    content = imgio.preprocess(imgio.decode(args.content), size=args.size)
    style_size = max(1, round(args.size * args.style_scale))
    style = imgio.preprocess(imgio.decode(args.style), size=style_size)
    return content, style


def _csv_fmt(v) -> str:
    return f"{float(v):.6g}"


class _LossCsvWriter:
    """Streams one row per iteration so a failed run keeps a partial CSV."""

    def __init__(self, path, lap_terms):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(["iter", "total", "content", "style"]
                             + [f"lap_p{p}" for p, _ in lap_terms])
        self.fh.flush()

    def write(self, i, report):
        self.writer.writerow([i, _csv_fmt(report.total), _csv_fmt(report.content),
                              _csv_fmt(report.style)]
                             + [_csv_fmt(v) for v in report.lap])
        self.fh.flush()

    def close(self):
        self.fh.close()


def run_transfer(args) -> int:
    config = config_from_args(args)
    graph = _load_network(args, config)
    content, style = _load_images(args)
    csv_writer = (_LossCsvWriter(args.loss_csv, config.loss.lap_terms)
                  if args.loss_csv else None)

    def on_iteration(i, report):
        if csv_writer is not None:
            csv_writer.write(i, report)
        if (i + 1) % PROGRESS_EVERY == 0 or i + 1 == config.iterations:
            print(f"iter {i + 1}/{config.iterations} total={report.total:.6g} "
                  f"content={report.content:.6g} style={report.style:.6g} "
                  f"lap={[f'{v:.6g}' for v in report.lap]}", file=sys.stderr)

    try:
        result = synth.synthesize(graph, content, style, config,
                                  on_iteration=on_iteration)
    finally:
        if csv_writer is not None:
            csv_writer.close()
    imgio.encode(imgio.deprocess(result.image), args.out)
    if args.save_laplacians:
        _export_laplacians(args.save_laplacians, content, result.image, config)
    print(f"wrote {args.out} ({len(result.history)} iterations, "
          f"{result.wall_time:.1f}s, init={result.init_mode}"
          f"{', stalled' if result.stalled else ''})", file=sys.stderr)
    return 0


def _export_laplacians(out_dir, content, output, config: SynthesisConfig) -> None:
    from . import loss as loss_mod
    os.makedirs(out_dir, exist_ok=True)
    for p, _ in config.loss.lap_terms:
        tag = "log5" if config.loss.lap_filter == "log5" else f"p{p}"
        for label, img in (("content", content), ("output", output)):
            lap = loss_mod.lap_response(img, p, config.loss.lap_filter)
            imgio.export_laplacian_image(
                lap, os.path.join(out_dir, f"{label}_lap_{tag}.png"))


COMPARE_COLUMNS = [
    "pair", "arm", "status",
    "init_total", "init_lap", "init_content", "init_style",
    "final_total", "final_lap", "final_content", "final_style",
    "frac_lap", "frac_content", "frac_style",
    "ratio_total", "ratio_lap", "ratio_content", "ratio_style",
    "ratio_lap_vs_nolap", "error",
]


def _compare_row(pair, arm, table) -> dict:
    return {
        "pair": pair, "arm": arm, "status": "ok",
        "init_total": _csv_fmt(table["init"]["total"]),
        "init_lap": _csv_fmt(table["init"]["lap_total"]),
        "init_content": _csv_fmt(table["init"]["content"]),
        "init_style": _csv_fmt(table["init"]["style"]),
        "final_total": _csv_fmt(table["final"]["total"]),
        "final_lap": _csv_fmt(table["final"]["lap_total"]),
        "final_content": _csv_fmt(table["final"]["content"]),
        "final_style": _csv_fmt(table["final"]["style"]),
        "frac_lap": _csv_fmt(table["frac_of_total"]["lap_total"]),
        "frac_content": _csv_fmt(table["frac_of_total"]["content"]),
        "frac_style": _csv_fmt(table["frac_of_total"]["style"]),
        "ratio_total": _csv_fmt(table["ratio_to_init"]["total"]),
        "ratio_lap": _csv_fmt(table["ratio_to_init"]["lap_total"]),
        "ratio_content": _csv_fmt(table["ratio_to_init"]["content"]),
        "ratio_style": _csv_fmt(table["ratio_to_init"]["style"]),
    }


def run_compare(args) -> int:
    config = config_from_args(args)
    if not any(g > 0 for _, g in config.loss.lap_terms):
        raise UsageError("compare needs at least one Laplacian term with weight > 0")
    pairs = []
    with open(args.pairs) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise UsageError(f"pairs file line needs two paths, got {line!r}")
            pairs.append(tuple(parts))
    if not pairs:
        raise UsageError(f"no pairs found in {args.pairs}")

    zeroed = LossConfig(
        alpha=config.loss.alpha, beta=config.loss.beta,
        content_layer=config.loss.content_layer,
        style_layers=config.loss.style_layers,
        lap_terms=tuple((p, 0.0) for p, _ in config.loss.lap_terms),
        lap_filter=config.loss.lap_filter)

    ok_count = 0
    with open(args.out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, restval="")
        writer.writeheader()
        fh.flush()
        for content_path, style_path in pairs:
            pair = f"{os.path.basename(content_path)}|{os.path.basename(style_path)}"
            try:
                rows = _run_compare_pair(args, config, zeroed,
                                         content_path, style_path, pair)
                ok_count += 1
            except (OSError, ValueError, synth.SynthesisError) as e:
                print(f"pair {pair} failed: {e}", file=sys.stderr)
                rows = [{"pair": pair, "arm": "with_lap", "status": "error",
                         "error": str(e)}]
            for row in rows:
                writer.writerow(row)
            fh.flush()
    return 0 if ok_count > 0 else 2


def _run_compare_pair(args, config, zeroed_loss, content_path, style_path,
                      pair) -> list[dict]:
    content = imgio.preprocess(imgio.decode(content_path), size=args.size)
    style_size = max(1, round(args.size * args.style_scale))
    style = imgio.preprocess(imgio.decode(style_path), size=style_size)

    tables = {}
    for arm, loss_cfg in (("with_lap", config.loss), ("no_lap", zeroed_loss)):
        run_cfg = SynthesisConfig(
            loss=loss_cfg, optimizer=config.optimizer,
            iterations=config.iterations, init=config.init, seed=config.seed,
            size=config.size, adam_lr=config.adam_lr)
        graph = _load_network(args, run_cfg)
        print(f"pair {pair} arm {arm}: {run_cfg.iterations} iterations",
              file=sys.stderr)
        result = synth.synthesize(graph, content, style, run_cfg)
        tables[arm] = synth.normalized_report(result.history)

    with_row = _compare_row(pair, "with_lap", tables["with_lap"])
    no_row = _compare_row(pair, "no_lap", tables["no_lap"])
    cross = {}
    for key in ("total", "lap_total", "content", "style"):
        w, n = tables["with_lap"]["final"][key], tables["no_lap"]["final"][key]
        cross[key] = w / n if n > 0 else float("nan")
    with_row["ratio_lap_vs_nolap"] = _csv_fmt(cross["lap_total"])
    vs_row = {
        "pair": pair, "arm": "with_vs_without", "status": "ok",
        "final_total": _csv_fmt(cross["total"]),
        "final_lap": _csv_fmt(cross["lap_total"]),
        "final_content": _csv_fmt(cross["content"]),
        "final_style": _csv_fmt(cross["style"]),
        "ratio_lap_vs_nolap": _csv_fmt(cross["lap_total"]),
    }
    return [with_row, no_row, vs_row]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except synth.SynthesisError as e:
        print(f"synthesis failed after {len(e.history)} iterations: {e}",
              file=sys.stderr)
        return 2
    except (OSError, ValueError, weights.WeightsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
