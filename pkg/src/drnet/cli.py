"""Command-line entry point: data generation, training, prediction, probes,
and metrics, with reproducible run directories.

Config precedence is flags > config file > built-in defaults; the merged
result is persisted into the run directory. The runs root comes from
--runs-dir, then the DRNET_RUNS_DIR environment variable, then ``runs/``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, evaluation, prediction, training
from .errors import ConfigurationError, DrnetError
from .imgio import save_png
from .losses import LossWeights
from .networks import NetworkSpec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_TRAIN_DEFAULTS = {
    "alpha": 1.0,
    "beta": 0.1,
    "lr": 0.002,
    "hp": 5,
    "hc": 128,
    "arch": "dcgan",
    "k": 8,
    "batch": 16,
    "steps": 1000,
    "seed": 0,
    "width_mult": 1.0,
    "skip_connections": False,
    "log_every": 25,
    "mode": "drnet",
}

_LSTM_DEFAULTS = {
    "observe": 5,
    "predict": 10,
    "steps": 400,
    "lr": 0.002,
    "hidden": 256,
    "layers": 2,
    "seed": 0,
    "batch": 16,
}

_CLASSIFIER_DEFAULTS = {
    "kind": "latent",
    "space": "hc",
    "hidden": 256,
    "seed": 0,
    "width_mult": 0.25,
}


def _merge_config(defaults: dict, args: argparse.Namespace, command: str) -> dict:
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(
                f"unknown config keys for {command}: {sorted(unknown)}"
            )
        merged.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, argparse.SUPPRESS)
        if value is not argparse.SUPPRESS:
            merged[key] = value
    return merged


def _runs_root(args) -> Path:
    if getattr(args, "runs_dir", None):
        return Path(args.runs_dir)
    return Path(os.environ.get("DRNET_RUNS_DIR", "runs"))


def _make_run_dir(args, name: str) -> Path:
    run_dir = _runs_root(args) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_dataset(path) -> datasets.ClipDataset:
    if not Path(path).exists():
        raise ConfigurationError(f"dataset file {path} does not exist")
    return datasets.read_clipset(path)


def _spec_for(dataset: datasets.ClipDataset, cfg: dict) -> NetworkSpec:
    C, H, W = dataset.frame_shape
    if H != W:
        raise ConfigurationError("frames must be square")
    return NetworkSpec(
        arch=cfg["arch"],
        in_channels=C,
        image_size=H,
        dim_hc=cfg["hc"],
        dim_hp=cfg["hp"],
        width_mult=cfg["width_mult"],
        skip_connections=cfg["skip_connections"],
    )


def _write_json(payload: dict, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    defaults = {"kind": "moving-digits", "clips": 64, "frames": 24, "seed": 0,
                "classes": 4, "size": 64, "digits": "", "palette": ""}
    cfg = _merge_config(defaults, args, "gen-data")
    kind = cfg["kind"]
    if kind == "moving-digits":
        kwargs = {}
        if cfg["digits"]:
            kwargs["digits"] = tuple(int(d) for d in str(cfg["digits"]).split(","))
        if cfg["palette"]:
            kwargs["palette"] = [tuple(int(v) for v in color.split(","))
                                 for color in str(cfg["palette"]).split(";")]
        dataset = datasets.gen_moving_digits(cfg["clips"], cfg["frames"], cfg["seed"],
                                             **kwargs)
    elif kind == "rotating-shapes":
        dataset = datasets.gen_rotating_shapes(cfg["clips"], cfg["frames"],
                                               cfg["classes"], cfg["seed"],
                                               image_size=cfg["size"])
    elif kind == "motion-regimes":
        dataset = datasets.gen_motion_regimes(cfg["clips"], cfg["frames"], cfg["seed"])
    else:
        raise UsageError(f"unknown --kind {kind!r} (choose from moving-digits, "
                         f"rotating-shapes, motion-regimes)")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_clipset(dataset, out)
    T = dataset.frames_per_clip
    C, H, W = dataset.frame_shape
    print(f"wrote {out}: {len(dataset)} clips of {T}x{C}x{H}x{W}, "
          f"{dataset.num_classes} classes")
    return 0


def cmd_train(args) -> int:
    cfg = _merge_config(_TRAIN_DEFAULTS, args, "train")
    dataset = _load_dataset(args.data)
    run_dir = _make_run_dir(args, args.name)
    spec = _spec_for(dataset, cfg)
    config = training.TrainConfig(
        weights=LossWeights(alpha=cfg["alpha"], beta=cfg["beta"]),
        learning_rate=cfg["lr"],
        batch_size=cfg["batch"],
        max_offset_K=cfg["k"],
        steps=cfg["steps"],
        arch=spec,
        seed=cfg["seed"],
        log_every=cfg["log_every"],
    )
    extra = {"command": "train", "mode": cfg["mode"], "dataset": str(args.data),
             "run_name": args.name, "run_dir": str(run_dir)}
    if cfg["mode"] == "drnet":
        ckpt, metrics = training.train_drnet(dataset, config, run_dir=run_dir,
                                             config_extra=extra)
    elif cfg["mode"] == "ae-lstm":
        ckpt, metrics = training.train_ae_lstm_baseline(dataset, config,
                                                        run_dir=run_dir,
                                                        config_extra=extra)
    else:
        raise UsageError(f"unknown --mode {cfg['mode']!r} (choose from drnet, ae-lstm)")
    ckpt_path = run_dir / f"ckpt_{ckpt.iteration:06d}.bin"
    training.save_checkpoint(ckpt, ckpt_path)
    last = metrics[-1]
    print(f"run {args.name}: {ckpt.iteration} steps, final loss_rec {last.loss_rec:.6f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_train_lstm(args) -> int:
    cfg = _merge_config(_LSTM_DEFAULTS, args, "train-lstm")
    if not Path(args.checkpoint).exists():
        raise ConfigurationError(f"checkpoint {args.checkpoint} does not exist")
    model = training.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    run_dir = _make_run_dir(args, args.name)
    fc_config = training.ForecastConfig(
        learning_rate=cfg["lr"], batch_size=cfg["batch"], steps=cfg["steps"],
        hidden_size=cfg["hidden"], num_layers=cfg["layers"], seed=cfg["seed"],
    )
    forecaster = training.train_forecast(dataset, model, cfg["observe"],
                                         cfg["predict"], fc_config)
    out = run_dir / "lstm.bin"
    training.save_forecaster(forecaster, out)
    _write_json({**cfg, "command": "train-lstm", "dataset": str(args.data),
                 "checkpoint": str(args.checkpoint)}, run_dir / "config.json")
    print(f"forecaster trained (observe {cfg['observe']}, predict {cfg['predict']}): {out}")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _merge_config(_CLASSIFIER_DEFAULTS, args, "train-classifier")
    dataset = _load_dataset(args.data)
    run_dir = _make_run_dir(args, args.name)
    if cfg["kind"] == "action":
        clf, acc = evaluation.train_action_classifier(
            dataset, evaluation.ActionClassifierConfig(seed=cfg["seed"],
                                                       width_mult=cfg["width_mult"]))
        out = run_dir / "action_clf.bin"
        evaluation.save_action_classifier(clf, out)
    elif cfg["kind"] == "latent":
        if not getattr(args, "checkpoint", None):
            raise UsageError("--kind latent requires --checkpoint")
        model = training.load_checkpoint(args.checkpoint)
        latents = evaluation.extract_latents(model, dataset)
        feats = latents["hc"] if cfg["space"] == "hc" else latents["hp"]
        if feats is None:
            raise ConfigurationError("this checkpoint has no separate content code")
        labels_raw = latents["labels"]
        uniq = np.unique(labels_raw)
        dense = {int(v): i for i, v in enumerate(uniq)}
        labels = np.array([dense[int(v)] for v in labels_raw])
        clf, acc = training.train_classifier_head(
            feats, labels, cfg["hidden"],
            training.ClassifierConfig(seed=cfg["seed"]))
        out = run_dir / f"classifier_{cfg['space']}.bin"
        training.save_classifier_head(clf, out)
    else:
        raise UsageError(f"unknown --kind {cfg['kind']!r} (choose from latent, action)")
    _write_json({**cfg, "command": "train-classifier", "dataset": str(args.data),
                 "validation_accuracy": acc}, run_dir / "config.json")
    print(f"classifier saved to {out} (validation accuracy {acc:.4f})")
    return 0


def cmd_predict(args) -> int:
    defaults = {"observe": 5, "horizon": 100, "clip": 0}
    cfg = _merge_config(defaults, args, "predict")
    model = training.load_checkpoint(args.checkpoint)
    forecaster = training.load_forecaster(args.lstm)
    dataset = _load_dataset(args.data)
    clip = dataset.clips[cfg["clip"]]
    if cfg["observe"] > clip.num_frames:
        raise ConfigurationError("observe length exceeds clip length")
    result = prediction.rollout(model, forecaster, clip.frames[:cfg["observe"]],
                                cfg["horizon"])
    out_dir = Path(args.out)
    prediction.save_rollout(result, out_dir)
    if result.metadata.get("untrained_forecast"):
        print("warning: forecaster was never trained", file=sys.stderr)
    print(f"wrote {cfg['horizon']} frames to {out_dir}")
    return 0


def cmd_grid(args) -> int:
    defaults = {"rows": 4, "cols": 4, "seed": 0}
    cfg = _merge_config(defaults, args, "grid")
    model = training.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    rng = np.random.default_rng(cfg["seed"])
    if cfg["rows"] < 1 or cfg["cols"] < 1:
        raise UsageError("--rows and --cols must be >= 1")
    row_clips = rng.choice(len(dataset), size=min(cfg["rows"], len(dataset)),
                           replace=False)
    col_clips = rng.choice(len(dataset), size=min(cfg["cols"], len(dataset)),
                           replace=False)
    T = dataset.frames_per_clip
    rows = [dataset.clips[i].frames[int(rng.integers(T))] for i in row_clips]
    cols = [dataset.clips[i].frames[int(rng.integers(T))] for i in col_clips]
    grid = evaluation.swap_grid(model, rows, cols)
    save_png(grid.render(), args.out)
    print(f"wrote {len(rows)}x{len(cols)} swap grid (with headers) to {args.out}")
    return 0


def cmd_interpolate(args) -> int:
    defaults = {"steps": 8, "clip_a": 0, "frame_a": 0, "clip_b": 1, "frame_b": 0}
    cfg = _merge_config(defaults, args, "interpolate")
    model = training.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    x1 = dataset.clips[cfg["clip_a"]].frames[cfg["frame_a"]]
    x2 = dataset.clips[cfg["clip_b"]].frames[cfg["frame_b"]]
    frames = evaluation.interpolate_pose(model, x1, x2, cfg["steps"])
    strip = np.concatenate(frames, axis=2)
    save_png(strip, args.out)
    print(f"wrote {cfg['steps']}-step pose interpolation to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    defaults = {"observe": 5, "horizon": 10, "offset": 0, "hidden": 256,
                "num_sequences": 16, "seed": 0}
    cfg = _merge_config(defaults, args, "evaluate")
    metric = args.metric
    model = training.load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data)
    payload = {"metric": metric, "config": cfg}

    if metric in ("psnr", "ssim"):
        forecaster = training.load_forecaster(args.lstm)
        fn = evaluation.psnr if metric == "psnr" else evaluation.ssim
        per_step = np.zeros(cfg["horizon"])
        n = min(cfg["num_sequences"], len(dataset))
        needed = cfg["observe"] + cfg["horizon"]
        if needed > dataset.frames_per_clip:
            raise ConfigurationError("observe + horizon exceeds clip length")
        for clip in dataset.clips[:n]:
            result = prediction.rollout(model, forecaster,
                                        clip.frames[:cfg["observe"]], cfg["horizon"])
            for t in range(cfg["horizon"]):
                per_step[t] += fn(result.predicted_frames[t],
                                  clip.frames[cfg["observe"] + t])
        per_step /= n
        payload["value"] = float(per_step.mean())
        payload["per_step"] = [float(v) for v in per_step]
    elif metric == "inception":
        forecaster = training.load_forecaster(args.lstm)
        clf = evaluation.load_action_classifier(args.classifier)
        n = min(cfg["num_sequences"], len(dataset))
        sequences = []
        horizon = cfg["offset"] + clf.frames_per_input
        for clip in dataset.clips[:n]:
            result = prediction.rollout(model, forecaster,
                                        clip.frames[:cfg["observe"]], horizon)
            sequences.append(result.predicted_frames[cfg["offset"]:])
        payload["value"] = evaluation.inception_score(clf, sequences)
    elif metric == "disentangle":
        report = evaluation.disentanglement_report(
            model, dataset,
            training.ClassifierConfig(seed=cfg["seed"]), hidden=cfg["hidden"])
        payload.update(report.to_dict())
        payload["value"] = report.acc_content_from_hc
    else:
        raise UsageError("unknown metric (choose from inception, psnr, ssim, "
                         "disentangle)")

    out = Path(args.out) if getattr(args, "out", None) else None
    if out is not None:
        _write_json(payload, out)
    width = max(len(k) for k in payload)
    for key, value in payload.items():
        if key != "config":
            print(f"{key.ljust(width)}  {value}")
    return 0


def cmd_nn_probe(args) -> int:
    defaults = {"space": "pose", "num": 4}
    cfg = _merge_config(defaults, args, "nn-probe")
    model = training.load_checkpoint(args.checkpoint)
    reference = _load_dataset(args.data)
    query_ds = _load_dataset(args.query_data)
    n = min(cfg["num"], len(query_ds))
    queries = [query_ds.clips[i].frames[0] for i in range(n)]
    matches = evaluation.nn_probe(model, queries, reference, space=cfg["space"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (query, match) in enumerate(zip(queries, matches)):
        save_png(np.concatenate([query, match.frame], axis=2),
                 out_dir / f"match_{i:03d}.png")
        rows.append({"query": i, "clip_id": match.clip_id,
                     "frame_index": match.frame_index, "distance": match.distance})
    _write_json({"space": cfg["space"], "matches": rows}, out_dir / "matches.json")
    print(f"wrote {len(rows)} nearest-neighbor matches to {out_dir}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="drnet", description=__doc__)
    parser.add_argument("--json-errors", action="store_true",
                        help="emit errors as single-line JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--runs-dir", default=None, help="runs root directory")
        p.add_argument("--json-errors", action="store_true")

    p = sub.add_parser("gen-data", help="generate a procedural clip dataset")
    common(p)
    p.add_argument("--kind", default=S)
    p.add_argument("--clips", type=int, default=S)
    p.add_argument("--frames", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--classes", type=int, default=S)
    p.add_argument("--size", type=int, default=S)
    p.add_argument("--digits", default=S, help="comma-separated digit subset")
    p.add_argument("--palette", default=S, help="semicolon-separated r,g,b colors")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the factorized model or the baseline")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--mode", default=S, help="drnet or ae-lstm")
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--hp", type=int, default=S)
    p.add_argument("--hc", type=int, default=S)
    p.add_argument("--arch", default=S, choices=["dcgan", "vgg_unet"])
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--batch", type=int, default=S)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--width-mult", type=float, default=S, dest="width_mult")
    p.add_argument("--skip-connections", action="store_true", default=S,
                   dest="skip_connections")
    p.add_argument("--log-every", type=int, default=S, dest="log_every")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-lstm", help="train the pose forecaster")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--observe", type=int, default=S)
    p.add_argument("--predict", type=int, default=S)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--layers", type=int, default=S)
    p.add_argument("--batch", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.set_defaults(func=cmd_train_lstm)

    p = sub.add_parser("train-classifier", help="train a latent or action classifier")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--kind", default=S, choices=["latent", "action"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--space", default=S, choices=["hc", "hp"])
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--width-mult", type=float, default=S, dest="width_mult")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("predict", help="roll the forecaster forward and dump frames")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lstm", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", type=int, default=S)
    p.add_argument("--observe", type=int, default=S)
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grid", help="render a content x pose swap grid")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rows", type=int, default=S)
    p.add_argument("--cols", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("interpolate", help="decode a pose-space interpolation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=S)
    p.add_argument("--clip-a", type=int, default=S, dest="clip_a")
    p.add_argument("--frame-a", type=int, default=S, dest="frame_a")
    p.add_argument("--clip-b", type=int, default=S, dest="clip_b")
    p.add_argument("--frame-b", type=int, default=S, dest="frame_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="compute a metric or report")
    common(p)
    p.add_argument("--metric", required=True,
                   choices=["inception", "psnr", "ssim", "disentangle"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lstm", default=None)
    p.add_argument("--classifier", default=None)
    p.add_argument("--observe", type=int, default=S)
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--offset", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--num-sequences", type=int, default=S, dest="num_sequences")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("nn-probe", help="nearest reference frames in latent space")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="reference dataset")
    p.add_argument("--query-data", required=True, dest="query_data")
    p.add_argument("--space", default=S, choices=["pose", "pose+content"])
    p.add_argument("--num", type=int, default=S)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nn_probe)

    return parser


def _emit_error(message: str, kind: str, json_errors: bool):
    if json_errors:
        print(json.dumps({"error": message, "type": kind}), file=sys.stderr)
    else:
        print(f"drnet: error: {message}", file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit_error(str(exc), "usage", json_errors)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        _emit_error(str(exc), "usage", json_errors)
        return 2
    except ConfigurationError as exc:
        _emit_error(str(exc), "configuration", json_errors)
        return 2
    except DrnetError as exc:
        _emit_error(str(exc), type(exc).__name__, json_errors)
        return 1
    except OSError as exc:
        _emit_error(str(exc), "io", json_errors)
        return 1


if __name__ == "__main__":
    sys.exit(main())
