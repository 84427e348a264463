"""presspose command line: the paper-style workflows end to end.

Subcommands: data (clean | colorize), annotate (propagate | export),
train, sweep-lambda, eval, benchmark-colormaps, polish, serve.

All tunables (loss weights, learning-rate schedule, sigma, thresholds,
sizes) live in a TOML config with the published defaults; flags
override file values, and the effective configuration is echoed into
every output directory so a run can be reproduced from its artifacts.
``PRESSPOSE_DATA_DIR`` supplies the default data root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import cv2
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import evaluation
from .adapters import load_adapter
from .annotation import AnnotationStore, load_annotations, save_annotations, store_to_json
from .colormaps import colorize, get_colormap, list_colormaps
from .datasets import build_eval_samples, build_training_samples
from .errors import ConfigError, PressPoseError
from .polishnet import PolishNetConfig, init_polishnet, load_checkpoint, polish_image, save_checkpoint
from .pressure import load_sequence, median_filter_3d, save_sequence, trim_transitions
from .training import (
    LossWeights,
    SweepConfig,
    TrainConfig,
    lambda_sweep,
    make_split_plan,
    train,
    write_loss_trace,
    write_sweep_csv,
)

DEFAULT_CONFIG = {
    "working_size": [256, 128],  # (height, width), portrait
    "colormap": "viridis",
    "trim": 3,
    "peak_threshold": 0.10,
    "sigma_frac": 0.02,
    "limb_width_frac": 0.02,
    "adapter": "mock:0",
    "holdout": 2,
    "split_seed": 0,
    "polishnet": {
        "channel_widths": [64, 128, 256],
        "seed": 0,
    },
    "loss": {
        "lambda_heatmap": 1.0,
        "lambda_paf": 1.0,
        "lambda_pixel": 1.0 / 30000.0,
    },
    "train": {
        "learning_rate": 1e-4,
        "decay_rate": 0.95,
        "decay_every": 100,
        "batch_size": 8,
        "max_iterations": 200,
        "seed": 0,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        elif value is not None:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path:
        with open(path, "rb") as fh:
            cfg = _deep_merge(cfg, tomllib.load(fh))
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)} to TOML")


def dump_toml(cfg: dict) -> str:
    lines = []
    tables = []
    for key in sorted(cfg):
        if isinstance(cfg[key], dict):
            tables.append(key)
        else:
            lines.append(f"{key} = {_toml_value(cfg[key])}")
    for key in tables:
        lines.append("")
        lines.append(f"[{key}]")
        for sub in sorted(cfg[key]):
            lines.append(f"{sub} = {_toml_value(cfg[key][sub])}")
    return "\n".join(lines) + "\n"


def echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.toml").write_text(dump_toml(cfg))


def _data_dir(args) -> Path:
    data = getattr(args, "data", None) or os.environ.get("PRESSPOSE_DATA_DIR")
    if not data:
        raise ConfigError("no data directory: pass --data or set PRESSPOSE_DATA_DIR")
    return Path(data)


def _load_sequences(data_dir: Path) -> dict[str, object]:
    seqs = {}
    for path in sorted(data_dir.iterdir()):
        if path.suffix in (".txt", ".pmat"):
            seq = load_sequence(path)
            seqs[seq.sequence_id] = seq
    if not seqs:
        raise ConfigError(f"no .txt/.pmat recordings under {data_dir}")
    return seqs


def _polish_config(cfg: dict) -> PolishNetConfig:
    return PolishNetConfig(
        channel_widths=tuple(cfg["polishnet"]["channel_widths"]),
        working_size=tuple(cfg["working_size"]),
    )


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"],
        decay_rate=t["decay_rate"],
        decay_every=t["decay_every"],
        batch_size=t["batch_size"],
        max_iterations=t["max_iterations"],
        seed=t["seed"],
    )


def _loss_weights(cfg: dict) -> LossWeights:
    l = cfg["loss"]
    return LossWeights(l["lambda_heatmap"], l["lambda_paf"], l["lambda_pixel"])


def _gather_samples(args, cfg, adapter):
    data_dir = _data_dir(args)
    sequences = _load_sequences(data_dir)
    store = load_annotations(args.labels, tuple(cfg["working_size"]))
    size = tuple(cfg["working_size"])
    train_samples, eval_samples = [], []
    h = size[0] * adapter.output_scale
    sigma = cfg["sigma_frac"] * h
    limb_width = cfg["limb_width_frac"] * h
    for seq in sequences.values():
        train_samples.extend(
            build_training_samples(
                seq, store, size, adapter.output_scale, cfg["colormap"], sigma, limb_width
            )
        )
        eval_samples.extend(build_eval_samples(seq, store, size, cfg["colormap"]))
    if not train_samples:
        raise ConfigError("no annotated frames found; run `presspose annotate` first")
    return train_samples, eval_samples


# --- subcommands -----------------------------------------------------------


def cmd_data_clean(args) -> int:
    seq = load_sequence(args.infile)
    if not args.no_filter:
        seq = median_filter_3d(seq)
    if args.trim:
        seq = trim_transitions(seq, args.trim)
    save_sequence(seq, args.out)
    print(f"wrote {len(seq)} frames to {args.out}")
    return 0


def cmd_data_colorize(args) -> int:
    cfg = load_config(args.config, {"colormap": args.colormap})
    seq = load_sequence(args.infile)
    cmap = get_colormap(cfg["colormap"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in seq.frames:
        image = colorize(frame, cmap, tuple(cfg["working_size"]))
        bgr = (image[:, :, ::-1] * 255.0).round().astype(np.uint8)
        cv2.imwrite(str(out_dir / f"frame_{frame.timestamp_index:04d}.png"), bgr)
    echo_config(cfg, out_dir)
    print(f"wrote {len(seq)} images to {out_dir}")
    return 0


def cmd_annotate_propagate(args) -> int:
    cfg = load_config(args.config)
    data_dir = _data_dir(args)
    sequences = _load_sequences(data_dir)
    labels = Path(args.labels)
    store = (
        load_annotations(labels, tuple(cfg["working_size"]))
        if labels.exists()
        else AnnotationStore(tuple(cfg["working_size"]))
    )
    targets = [args.sequence] if args.sequence else sorted(sequences)
    added = 0
    for sid in targets:
        if sid not in sequences:
            raise ConfigError(f"unknown sequence {sid!r}; have {sorted(sequences)}")
        added += store.propagate(sequences[sid])
    save_annotations(store, labels)
    print(f"propagated {added} annotations across {len(targets)} sequence(s)")
    return 0


def cmd_annotate_export(args) -> int:
    cfg = load_config(args.config)
    store = load_annotations(args.labels, tuple(cfg["working_size"]))
    Path(args.out).write_text(json.dumps(store_to_json(store), indent=1, sort_keys=True))
    print(f"exported {len(store)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"adapter": args.adapter})
    adapter = load_adapter(cfg["adapter"])
    train_samples, _ = _gather_samples(args, cfg, adapter)
    net = init_polishnet(_polish_config(cfg), seed=cfg["polishnet"]["seed"])
    result = train(net, adapter, train_samples, _train_config(cfg), _loss_weights(cfg))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out_dir / "polishnet.ppnc")
    write_loss_trace(result.trace, out_dir / "loss_trace.csv")
    echo_config(cfg, out_dir)
    print(
        f"trained {len(result.trace)} iterations on {len(train_samples)} frames;"
        f" final E_total {result.trace[-1].e_total:.6g}; checkpoint in {out_dir}"
    )
    return 0


def cmd_sweep_lambda(args) -> int:
    cfg = load_config(args.config, {"adapter": args.adapter})
    adapter = load_adapter(cfg["adapter"])
    train_samples, eval_samples = _gather_samples(args, cfg, adapter)
    test_subjects = set(int(s) for s in args.test_subjects.split(",")) if args.test_subjects else set()
    eval_train = [s for s in eval_samples if s.subject_id not in test_subjects]
    eval_test = [s for s in eval_samples if s.subject_id in test_subjects] or eval_train
    if test_subjects:
        train_samples = [s for s in train_samples if s.frame_ref[0] not in test_subjects]
    values = [float(v) for v in args.values.split(",")]
    rows = lambda_sweep(
        values,
        SweepConfig(
            polish_config=_polish_config(cfg),
            polish_seed=cfg["polishnet"]["seed"],
            adapter=adapter,
            train_samples=train_samples,
            eval_train=eval_train,
            eval_test=eval_test,
            train_config=_train_config(cfg),
            weights=_loss_weights(cfg),
        ),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out_dir / "lambda_sweep.csv")
    echo_config(cfg, out_dir)
    for row in rows:
        print(
            f"lambda_pixel={row.lambda_pixel:.6g} train_auc={row.train_auc:.3f}"
            f" test_auc={row.test_auc:.3f} final_E_pixel={row.final_e_pixel:.6g}"
        )
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, {"adapter": args.adapter, "holdout": args.holdout})
    adapter = load_adapter(cfg["adapter"])
    net = load_checkpoint(args.checkpoint) if args.checkpoint else None
    _, eval_samples = _gather_samples(args, cfg, adapter)
    subjects = sorted({s.subject_id for s in eval_samples})
    split = make_split_plan(subjects, holdout=cfg["holdout"], seed=cfg["split_seed"])
    second = load_adapter(args.second_adapter) if args.second_adapter else None
    report = evaluation.evaluate_pipeline(net, adapter, eval_samples, split, second)
    out_dir = Path(args.report)
    written = []
    for fmt in ("csv", "markdown-table", "plot-data"):
        written.extend(evaluation.emit_report(report, fmt, out_dir))
    echo_config(cfg, out_dir)
    for variant in report.variants:
        print(f"{variant.name}: average detection rate {variant.overall_mean():.3f}"
              f" ± {variant.overall_std():.3f}")
    print(f"report files: {', '.join(str(p) for p in written)}")
    return 0


def cmd_benchmark_colormaps(args) -> int:
    cfg = load_config(args.config, {"adapter": args.adapter})
    adapter = load_adapter(cfg["adapter"])
    data_dir = _data_dir(args)
    sequences = _load_sequences(data_dir)
    store = load_annotations(args.labels, tuple(cfg["working_size"]))
    dataset = []
    for seq in sequences.values():
        for frame in seq.frames:
            ref = (seq.subject_id, seq.posture_id, frame.timestamp_index)
            ks = store.get(ref)
            if ks is not None:
                dataset.append((frame, ks))
    if not dataset:
        raise ConfigError("no annotated frames to benchmark on")
    if args.maps == "all":
        maps = list_colormaps()
    else:
        maps = [get_colormap(name) for name in args.maps.split(",")]
    rows = evaluation.colormap_benchmark(adapter, dataset, maps, tuple(cfg["working_size"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_benchmark_csv(rows, out)
    for row in rows:
        print(f"{row.colormap}: {row.average_detection_rate:.3f}")
    return 0


def cmd_polish(args) -> int:
    cfg = load_config(args.config)
    net = load_checkpoint(args.checkpoint)
    infile = Path(args.infile)
    if infile.suffix in (".png", ".jpg", ".jpeg"):
        bgr = cv2.imread(str(infile))
        if bgr is None:
            raise ConfigError(f"could not read image {infile}")
        image = bgr[:, :, ::-1].astype(np.float64) / 255.0
    else:
        seq = load_sequence(infile)
        frame = next(
            (f for f in seq.frames if f.timestamp_index == args.frame), seq.frames[0]
        )
        image = colorize(frame, cfg["colormap"], tuple(net.config.working_size))
    polished = polish_image(net, image, mode="eval")
    out_bgr = (polished[:, :, ::-1] * 255.0).round().astype(np.uint8)
    cv2.imwrite(str(args.out), out_bgr)
    print(f"wrote polished image to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .service import SessionState, serve

    cfg = load_config(args.config)
    net = load_checkpoint(args.checkpoint) if args.checkpoint else None
    adapter = load_adapter(args.adapter) if args.adapter else None
    state = SessionState(
        _data_dir(args),
        working_size=tuple(cfg["working_size"]),
        default_colormap=cfg["colormap"],
        net=net,
        adapter=adapter,
    )
    serve(state, host=args.host, port=args.port)
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="presspose",
        description="Pressure-mat pose estimation: data prep, annotation,"
        " polish-network training, and PCK evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add_config(p):
        p.add_argument("--config", help="TOML config file (flags override it)")

    data = sub.add_parser("data", help="clean or colorize recordings")
    data_sub = data.add_subparsers(dest="subcommand", required=True)
    clean = data_sub.add_parser("clean", help="median filter + transition trim")
    clean.add_argument("--in", dest="infile", required=True)
    clean.add_argument("--out", required=True)
    clean.add_argument("--trim", type=int, default=3)
    clean.add_argument("--no-filter", action="store_true")
    clean.set_defaults(func=cmd_data_clean)
    colorize_p = data_sub.add_parser("colorize", help="write colorized frame PNGs")
    colorize_p.add_argument("--in", dest="infile", required=True)
    colorize_p.add_argument("--out", required=True)
    colorize_p.add_argument("--colormap", default=None)
    add_config(colorize_p)
    colorize_p.set_defaults(func=cmd_data_colorize)

    annotate = sub.add_parser("annotate", help="propagate or export labels")
    annotate_sub = annotate.add_subparsers(dest="subcommand", required=True)
    prop = annotate_sub.add_parser("propagate", help="fill unlabeled frames from seeds")
    prop.add_argument("--data")
    prop.add_argument("--labels", required=True)
    prop.add_argument("--sequence", help="sequence id, e.g. 1-3; default all")
    add_config(prop)
    prop.set_defaults(func=cmd_annotate_propagate)
    export = annotate_sub.add_parser("export", help="write canonical labels JSON")
    export.add_argument("--labels", required=True)
    export.add_argument("--out", required=True)
    add_config(export)
    export.set_defaults(func=cmd_annotate_export)

    train_p = sub.add_parser("train", help="optimize PolishNet against a frozen adapter")
    train_p.add_argument("--data")
    train_p.add_argument("--labels", required=True)
    train_p.add_argument("--adapter", default=None, help="mock[:seed] or weights:<path>")
    train_p.add_argument("--out", required=True)
    add_config(train_p)
    train_p.set_defaults(func=cmd_train)

    sweep = sub.add_parser("sweep-lambda", help="train/eval per pixel-loss weight")
    sweep.add_argument("--values", required=True, help="comma list, e.g. 1e-6,3.3e-5,1e-3")
    sweep.add_argument("--data")
    sweep.add_argument("--labels", required=True)
    sweep.add_argument("--adapter", default=None)
    sweep.add_argument("--test-subjects", default=None, help="comma list of held-out subjects")
    sweep.add_argument("--out", required=True)
    add_config(sweep)
    sweep.set_defaults(func=cmd_sweep_lambda)

    eval_p = sub.add_parser("eval", help="PCK/AUC report over a subject split")
    eval_p.add_argument("--checkpoint", default=None)
    eval_p.add_argument("--adapter", default=None)
    eval_p.add_argument("--second-adapter", default=None)
    eval_p.add_argument("--data")
    eval_p.add_argument("--labels", required=True)
    eval_p.add_argument("--report", required=True)
    eval_p.add_argument("--holdout", type=int, default=None)
    add_config(eval_p)
    eval_p.set_defaults(func=cmd_eval)

    bench = sub.add_parser("benchmark-colormaps", help="rank colormaps, adapter only")
    bench.add_argument("--data")
    bench.add_argument("--labels", required=True)
    bench.add_argument("--adapter", default=None)
    bench.add_argument("--maps", default="all", help="'all' or comma list of names")
    bench.add_argument("--out", required=True)
    add_config(bench)
    bench.set_defaults(func=cmd_benchmark_colormaps)

    polish = sub.add_parser("polish", help="run a checkpoint on one frame or image")
    polish.add_argument("--checkpoint", required=True)
    polish.add_argument("--in", dest="infile", required=True)
    polish.add_argument("--out", required=True)
    polish.add_argument("--frame", type=int, default=0)
    add_config(polish)
    polish.set_defaults(func=cmd_polish)

    serve_p = sub.add_parser("serve", help="HTTP service for the annotator UI")
    serve_p.add_argument("--data")
    serve_p.add_argument("--checkpoint", default=None)
    serve_p.add_argument("--adapter", default=None)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8008)
    add_config(serve_p)
    serve_p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PressPoseError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFoundError", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
