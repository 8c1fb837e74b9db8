"""Command-line interface.

    irgrid solve      exact drop map for a netlist
    irgrid featurize  netlist to model input stack
    irgrid synth      randomized corpus with oracle ground truth
    irgrid train      pretrain or finetune the predictor
    irgrid predict    drop map from a trained checkpoint
    irgrid eval       score predictions against ground truth
    irgrid explain    saliency report with figures
    irgrid optimize   saliency-guided upsizing round

Exit codes: 0 on success, 1 when input fails validation, 2 on runtime
failures (argparse usage errors also exit 2).  IRGRID_THREADS caps the
torch thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .container import read_tensor, write_tensor
from .errors import FormatError, InputError, IrgridError
from .features import (
    CHANNELS,
    RESISTANCE_CHANNELS,
    AugmentedView,
    FeatureStack,
    featurize,
    resample,
)
from .netlist import parse_netlist, validate
from .solver import build_system, ir_drop_map, solve, supply_voltage
from . import explain as explain_mod
from . import plots
from .model import AttUNet, AttUNetConfig, load_checkpoint
from .synth import CorpusSpec, generate_corpus, load_corpus, write_corpus
from .training import (
    TrainConfig,
    f1_score,
    finetune,
    mae,
    pretrain,
    write_history,
)


def _read_netlist(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read netlist {path}: {exc}") from None
    netlist = parse_netlist(text)
    diags = validate(netlist)
    if diags:
        lines = "\n  ".join(str(d) for d in diags)
        raise InputError(f"netlist {path} failed validation:\n  {lines}")
    return netlist


def _load_features(path: str) -> tuple[FeatureStack, dict]:
    data, meta = read_tensor(path)
    if data.ndim != 3 or data.shape[0] != len(CHANNELS):
        raise FormatError(
            f"{path}: expected a ({len(CHANNELS)}, s, s) feature stack, "
            f"got shape {tuple(data.shape)}")
    dims = meta.get("originalDims") or [data.shape[1], data.shape[2]]
    stack = FeatureStack(
        data.astype(float),
        np.array(meta.get("scales", [1.0] * data.shape[0]), dtype=float),
        (int(dims[0]), int(dims[1])))
    return stack, meta


def _range_pair(text: str, cast):
    parts = text.split(":")
    if len(parts) == 1:
        v = cast(parts[0])
        return (v, v)
    if len(parts) == 2:
        return (cast(parts[0]), cast(parts[1]))
    raise argparse.ArgumentTypeError(f"expected 'value' or 'lo:hi', got {text!r}")


def _int_range(text: str):
    return _range_pair(text, int)


def _float_range(text: str):
    return _range_pair(text, float)


def cmd_solve(args) -> int:
    netlist = _read_netlist(args.netlist)
    voltages = solve(build_system(netlist), args.tolerance)
    drop = ir_drop_map(netlist, voltages)
    write_tensor(args.out, drop.data, {
        "kind": "truth",
        "units": "V",
        "supplyVoltage": supply_voltage(netlist),
    })
    if args.fig:
        plots.save_heatmap(drop.data * 1000.0, args.fig,
                           title="IR drop (oracle)", units="mV")
    print(f"solved {len(voltages)} nodes: "
          f"max drop {drop.data.max() * 1000.0:.3f} mV, "
          f"mean {drop.data.mean() * 1000.0:.3f} mV -> {args.out}")
    return 0


def cmd_featurize(args) -> int:
    netlist = _read_netlist(args.netlist)
    stack = featurize(netlist, args.size)
    write_tensor(args.out, stack.data, {
        "kind": "features",
        "channels": list(CHANNELS),
        "scales": [float(s) for s in stack.scales],
        "originalDims": list(stack.original_dims),
        "supplyVoltage": supply_voltage(netlist),
    })
    print(f"featurized {args.netlist}: {stack.data.shape[0]} channels at "
          f"{args.size}x{args.size} -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = CorpusSpec(
        count=args.count, seed=args.seed, size=args.size,
        die_size=args.die_size, pad_count=args.pad_count,
        blob_count=args.blob_count, blob_spread=args.blob_spread,
        total_current=args.total_current, res_scale=args.res_scale)
    cases = generate_corpus(spec)
    write_corpus(args.out, cases, spec)
    drops = [float(c.ground_truth.data.max()) * 1000.0 for c in cases]
    print(f"wrote {len(cases)} cases to {args.out} "
          f"(max drop {min(drops):.1f}..{max(drops):.1f} mV)")
    return 0


def _train_config(args) -> TrainConfig:
    settings = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError(f"config {args.config} must be a JSON object")
        settings.update(loaded)
    settings.pop("model", None)
    for key in ("phase", "epochs", "seed"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if "phase" not in settings:
        raise InputError("no phase given (flag --phase or config key)")
    if "dropout" in settings and settings["dropout"] is not None:
        settings["dropout"] = tuple(settings["dropout"])
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(settings) - known
    if unknown:
        raise InputError(f"unknown config keys {sorted(unknown)}")
    return TrainConfig(**settings)


def _model_config(args, size_hint: int) -> AttUNetConfig:
    settings = {"input_size": size_hint}
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        model = loaded.get("model", {})
        if not isinstance(model, dict):
            raise InputError("config key 'model' must be an object")
        settings.update(model)
    if "encoder_filters" in settings:
        settings["encoder_filters"] = tuple(settings["encoder_filters"])
    known = {f for f in AttUNetConfig.__dataclass_fields__}
    unknown = set(settings) - known
    if unknown:
        raise InputError(f"unknown model config keys {sorted(unknown)}")
    return AttUNetConfig(**settings)


def cmd_train(args) -> int:
    config = _train_config(args)
    cases = load_corpus(args.data)
    size = cases[0].features.data.shape[-1]
    for case in cases:
        if case.features.data.shape[-1] != size:
            raise InputError("corpus mixes feature sizes")

    if args.init:
        model, header = load_checkpoint(args.init)
        if model.config.input_size != size:
            raise InputError(
                f"checkpoint input size {model.config.input_size} does not "
                f"match corpus feature size {size}")
    elif config.phase == "finetune":
        raise InputError("finetune needs --init with a pretrained checkpoint")
    else:
        import torch

        # seed before construction so reruns start from identical weights
        torch.manual_seed(config.seed)
        model = AttUNet(_model_config(args, size))

    corpus = cases if args.no_augment else AugmentedView(cases)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def log(row):
        print(f"epoch {row.epoch:4d}  lr {row.lr:.6f}  loss {row.loss:.6f}  "
              f"mae {row.mae:.3f} mV  f1 {row.f1:.3f}", flush=True)

    runner = pretrain if config.phase == "pretrain" else finetune
    history = runner(model, corpus, config, checkpoint_dir=str(out), log=log)
    write_history(out / "history.csv", history)
    plots.save_history_curves(history, out / "history.png")
    print(f"{config.phase} done: {len(history)} epochs over {len(corpus)} "
          f"samples -> {out / 'last.ckpt'}")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    stack, meta = _load_features(args.features)
    if stack.data.shape[-1] != model.config.input_size:
        raise InputError(
            f"feature size {stack.data.shape[-1]} does not match model "
            f"input size {model.config.input_size}")
    import torch

    x = torch.as_tensor(stack.data, dtype=torch.float32)[None]
    out = model.predict(x)[0, 0].numpy().astype(float)
    supply = float(meta.get("supplyVoltage", 1.0))
    h, w = stack.original_dims
    pred = resample(out, h, w) * supply
    write_tensor(args.out, pred, {
        "kind": "prediction",
        "units": "V",
        "supplyVoltage": supply,
    })
    if args.fig:
        plots.save_heatmap(pred * 1000.0, args.fig,
                           title="IR drop (predicted)", units="mV")
    print(f"predicted max drop {pred.max() * 1000.0:.3f} mV, "
          f"mean {pred.mean() * 1000.0:.3f} mV -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    names = sorted(p.name for p in pred_dir.glob("*.irgt"))
    if not names:
        raise InputError(f"no .irgt predictions under {pred_dir}")
    rows = []
    for name in names:
        truth_path = truth_dir / name
        if not truth_path.exists():
            raise InputError(f"no ground truth for {name} under {truth_dir}")
        pred, _ = read_tensor(pred_dir / name)
        truth, _ = read_tensor(truth_path)
        if pred.shape != truth.shape:
            raise InputError(
                f"{name}: prediction {tuple(pred.shape)} vs truth "
                f"{tuple(truth.shape)}")
        err = mae(pred, truth) * 1000.0
        f1, precision, recall = f1_score(pred, truth)
        rows.append((name.removesuffix(".irgt"), err, f1, precision, recall))
        if args.report_dir:
            report = Path(args.report_dir)
            report.mkdir(parents=True, exist_ok=True)
            plots.save_heatmap(
                np.abs(pred.astype(float) - truth.astype(float)) * 1000.0,
                report / f"{name.removesuffix('.irgt')}_error.png",
                title=f"absolute error: {name.removesuffix('.irgt')}",
                units="mV")

    header = f"{'case':<20} {'mae_mv':>10} {'f1':>8} {'precision':>10} {'recall':>8}"
    print(header)
    print("-" * len(header))
    for name, err, f1, precision, recall in rows:
        print(f"{name:<20} {err:>10.4f} {f1:>8.4f} {precision:>10.4f} {recall:>8.4f}")
    avg = [float(np.mean([r[i] for r in rows])) for i in range(1, 5)]
    print("-" * len(header))
    print(f"{'average':<20} {avg[0]:>10.4f} {avg[1]:>8.4f} "
          f"{avg[2]:>10.4f} {avg[3]:>8.4f}")

    if args.csv:
        with open(args.csv, "w") as f:
            f.write("case,mae_mv,f1,precision,recall\n")
            for name, err, f1, precision, recall in rows:
                f.write(f"{name},{err!r},{f1!r},{precision!r},{recall!r}\n")
            f.write(f"average,{avg[0]!r},{avg[1]!r},{avg[2]!r},{avg[3]!r}\n")
    return 0


def _channel_set(args) -> tuple[int, ...]:
    return tuple(range(len(CHANNELS))) if args.all_channels else RESISTANCE_CHANNELS


def cmd_explain(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    stack, _ = _load_features(args.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pred = explain_mod._predict_map(model, stack)
    hotspots = explain_mod.select_hotspots(pred, args.factor)
    if not hotspots.pixels:
        raise InputError("predicted map has no positive drops to explain")
    sal = explain_mod.saliency(model, stack, hotspots)
    channels = _channel_set(args)
    scored = explain_mod.channel_scores(sal, args.k, channels)
    winner, pixels = explain_mod.rank_contributors(sal, args.k, channels)

    write_tensor(out / "saliency.irgt", sal.signed, {
        "kind": "saliency",
        "channels": list(CHANNELS),
        "hotspotCount": len(hotspots.pixels),
    })
    report = {
        "drMax": hotspots.dr_max,
        "drTh": hotspots.dr_th,
        "hotspotCount": len(hotspots.pixels),
        "k": args.k,
        "factor": args.factor,
        "winnerChannel": CHANNELS[winner],
        "channelScores": {CHANNELS[c]: s for c, s in scored},
        "topPixels": [list(p) for p in pixels],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")

    plots.save_heatmap(pred, out / "prediction.png",
                       title="predicted drop", units="supply fraction")
    plots.save_pixel_overlay(pred, hotspots.pixels, out / "hotspots.png",
                             title=f"hotspots (>= {args.factor:.2f} of max)",
                             units="supply fraction", marker_label="hotspot")
    plots.save_pixel_overlay(sal.magnitude[winner], pixels,
                             out / "top_pixels.png",
                             title=f"saliency: {CHANNELS[winner]}",
                             marker_label=f"top {args.k}")
    print(f"winner {CHANNELS[winner]} over {len(hotspots.pixels)} hotspots "
          f"-> {out}")
    return 0


def cmd_optimize(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    stack, _ = _load_features(args.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    report = explain_mod.optimize(model, stack, args.k, args.factor,
                                  args.fraction, _channel_set(args))
    if args.baseline:
        report.baseline = explain_mod.baseline_uniform(
            model, stack, args.factor, args.fraction, _channel_set(args))

    payload = asdict(report)
    payload["chosen_pixels"] = [list(p) for p in report.chosen_pixels]
    if report.baseline is not None:
        payload["baseline"]["chosen_pixels"] = [
            list(p) for p in report.baseline.chosen_pixels]
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")

    before_map = explain_mod._predict_map(model, stack)
    hotspots = explain_mod.select_hotspots(before_map, args.factor)
    plots.save_pixel_overlay(before_map, hotspots.pixels, out / "before.png",
                             title="before upsizing", units="supply fraction",
                             marker_label="hotspot")
    if report.contributor_channel is not None:
        channel = CHANNELS.index(report.contributor_channel)
        edited = explain_mod.apply_upsize(stack, channel,
                                          report.chosen_pixels, args.fraction)
        after_map = explain_mod._predict_map(model, edited)
        still = [(int(r), int(c)) for r, c in
                 np.argwhere(after_map >= hotspots.dr_th)]
        plots.save_pixel_overlay(after_map, still, out / "after.png",
                                 title="after upsizing",
                                 units="supply fraction",
                                 marker_label="still high")
    print(f"high-drop pixels {report.high_drop_before} -> "
          f"{report.high_drop_after} "
          f"({report.reduction_percent:+.2f}% reduction) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irgrid", description="static IR-drop analysis toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact drop map for a netlist")
    p.add_argument("netlist")
    p.add_argument("--out", required=True, help="output drop-map container")
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--fig", help="also render the map to this PNG")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("featurize", help="netlist to model input stack")
    p.add_argument("netlist")
    p.add_argument("--out", required=True, help="output feature container")
    p.add_argument("--size", type=int, default=512)
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("synth", help="randomized corpus with oracle truth")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512, help="feature resolution")
    p.add_argument("--die-size", type=_int_range, default=(64, 64),
                   metavar="LO:HI")
    p.add_argument("--pad-count", type=_int_range, default=(3, 6),
                   metavar="LO:HI")
    p.add_argument("--blob-count", type=_int_range, default=(2, 5),
                   metavar="LO:HI")
    p.add_argument("--blob-spread", type=_float_range, default=(3.0, 9.0),
                   metavar="LO:HI")
    p.add_argument("--total-current", type=_float_range, default=(0.05, 0.3),
                   metavar="LO:HI")
    p.add_argument("--res-scale", type=_float_range, default=(0.5, 1.5),
                   metavar="LO:HI")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="pretrain or finetune the predictor")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--phase", choices=("pretrain", "finetune"))
    p.add_argument("--config", help="JSON with TrainConfig and model keys")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-augment", action="store_true",
                   help="train on the corpus without sixfold expansion")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="drop map from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output drop-map container")
    p.add_argument("--fig", help="also render the map to this PNG")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of *.irgt maps")
    p.add_argument("--truth", required=True, help="directory of *.irgt maps")
    p.add_argument("--csv", help="write the table to this CSV")
    p.add_argument("--report-dir", help="render per-case error heatmaps here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explain", help="saliency report with figures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--factor", type=float, default=0.9)
    p.add_argument("--all-channels", action="store_true",
                   help="rank every channel, not just resistances "
                        "(diagnosis only)")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("optimize", help="saliency-guided upsizing round")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--factor", type=float, default=0.9)
    p.add_argument("--fraction", type=float, default=0.10)
    p.add_argument("--baseline", action="store_true",
                   help="also run the uniform no-saliency reference edit")
    p.add_argument("--all-channels", action="store_true",
                   help="let every channel compete for the edit")
    p.set_defaults(fn=cmd_optimize)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("IRGRID_THREADS")
    if threads:
        try:
            count = int(threads)
        except ValueError:
            print(f"error: IRGRID_THREADS must be an integer, "
                  f"got {threads!r}", file=sys.stderr)
            return 1
        import torch

        torch.set_num_threads(count)

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except IrgridError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
