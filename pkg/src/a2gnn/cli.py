"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``eval``, ``inspect-au``, ``ksweep`` and
``gradcheck``. Failures print one ``error: <message>`` line to stderr and
exit with status 2; a failed gradient check exits with status 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .config import ConfigError, TrainConfig, load_config
from .dataio import (SYNTH_CLASSES, Dataset, DatasetError, augment, load_jsonl, prepare, save_jsonl,
                     synth_generate)
from .graphcore import GraphError
from .model import A2GNN
from .trainer import (CHECKPOINT_NAME, TrainingDiverged, build_model, evaluate, resume, train)

# 256-step colormap: linear interpolation between these anchors (dark blue -> teal -> yellow),
# index = round(255 * saliency / max saliency)
COLORMAP_ANCHORS = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
                            dtype=float)


class CliError(Exception):
    pass


def colormap(steps: int = 256) -> np.ndarray:
    """``steps`` x 3 integer RGB table interpolated between :data:`COLORMAP_ANCHORS`."""
    pos = np.linspace(0.0, len(COLORMAP_ANCHORS) - 1, steps)
    lo = np.minimum(pos.astype(int), len(COLORMAP_ANCHORS) - 2)
    frac = (pos - lo)[:, None]
    rgb = (1 - frac) * COLORMAP_ANCHORS[lo] + frac * COLORMAP_ANCHORS[lo + 1]
    return np.rint(rgb).astype(int)


def saliency_colors(saliency) -> list[str]:
    s = np.asarray(saliency, dtype=float)
    top = s.max()
    idx = np.zeros(s.shape, dtype=int) if top <= 0 else np.rint(255 * s / top).astype(int)
    table = colormap()
    return ["#%02x%02x%02x" % tuple(table[i]) for i in idx]


def skeleton_svg(frame: np.ndarray, edges, saliency, names=None, size: int = 400) -> str:
    """Orthographic x-y projection with joints coloured by saliency."""
    xy = np.asarray(frame, dtype=float)[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    margin = 30
    scale = (size - 2 * margin) / span
    px = margin + (xy[:, 0] - lo[0]) * scale
    py = size - margin - (xy[:, 1] - lo[1]) * scale
    colors = saliency_colors(saliency)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for i, j in edges:
        out.append(f'<line x1="{px[i]:.2f}" y1="{py[i]:.2f}" x2="{px[j]:.2f}" y2="{py[j]:.2f}" '
                   'stroke="#888888" stroke-width="2"/>')
    for k in range(len(xy)):
        label = names[k] if names else str(k)
        out.append(f'<circle cx="{px[k]:.2f}" cy="{py[k]:.2f}" r="8" fill="{colors[k]}" '
                   f'stroke="black"><title>{label}: {float(saliency[k]):.4f}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ helpers

def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _config(args) -> TrainConfig:
    overrides = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "temporal_agg", None):
        overrides["temporal_agg"] = args.temporal_agg
    return load_config(getattr(args, "config", None), overrides)


def _dataset(path) -> Dataset:
    if path is None:
        raise CliError("--dataset is required")
    if not Path(path).is_file():
        raise CliError(f"dataset not found: {path}")
    return load_jsonl(path)


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliError(f"--K expects a comma list of integers, got {text!r}") from None
    if not ks:
        raise CliError("--K list is empty")
    return ks


def _checkpoint(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / CHECKPOINT_NAME
    if not p.is_file():
        raise CliError(f"checkpoint not found: {path}")
    return p


def _header(config: TrainConfig) -> str:
    return "run " + " ".join(f"{k}={v}" for k, v in config.to_dict().items())


# ------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    if args.per_class < 0:
        raise CliError("--per-class must be >= 0")
    ds = synth_generate(classes, args.per_class, rng=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_jsonl(out, ds)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror}") from None
    print(f"wrote {len(ds)} sequences to {out}")
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    if args.K:
        ks = _k_list(args.K)
        if len(ks) != 1:
            raise CliError("train takes a single --K value; use ksweep for several")
        config = config.replace(K=ks[0])
    ds = _dataset(args.dataset)
    out = Path(args.out)
    start, velocity = 0, None
    if args.resume:
        model, start, velocity = resume(_checkpoint(args.resume))
        config = model.config.replace(epochs=config.epochs)
        model.config = config
    else:
        model = build_model(config, ds)
    print(_header(config), flush=True)
    if start:
        print(f"resuming after epoch {start}", flush=True)

    def report(row):
        acc = "n/a" if row["test_acc"] is None else f"{row['test_acc']:.4f}"
        print(f"epoch {row['epoch']} loss {row['train_loss']:.5f} train_acc {row['train_acc']:.4f} "
              f"test_acc {acc}", flush=True)

    train(model, ds, config, out_dir=out, start_epoch=start, velocity=velocity, on_epoch=report)
    split = "test" if "test" in ds.manifest.splits and ds.split("test") else "train"
    metrics = evaluate(model, ds.split(split), ds.manifest)
    summary = {"split": split, **metrics.to_dict(ds.manifest.classes)}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"final {split} accuracy {metrics.accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    model, _, _ = A2GNN.load(_checkpoint(args.checkpoint))
    ds = _dataset(args.dataset)
    metrics = evaluate(model, ds.split(args.split), ds.manifest)
    report = {"split": args.split, **metrics.to_dict(ds.manifest.classes)}
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        with open(out / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *ds.manifest.classes])
            for name, row in zip(ds.manifest.classes, metrics.confusion.tolist()):
                w.writerow([name, *row])
    return 0


def cmd_inspect_au(args) -> int:
    model, _, _ = A2GNN.load(_checkpoint(args.checkpoint))
    ds = _dataset(args.dataset)
    try:
        seq = ds.by_id(args.sequence)
    except KeyError:
        raise CliError(f"no sequence with id {args.sequence!r}") from None
    view = augment(prepare(seq, ds.manifest), model.config.segments).frames
    sal = model.extract_au_weights(view)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = ds.manifest.joints or [str(i) for i in range(model.num_nodes)]
    with open(out / "saliency.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", *names])
        for t, row in enumerate(sal):
            w.writerow([t, *(f"{v:.8f}" for v in row)])
    svg = skeleton_svg(view[0], model.edges, sal.mean(axis=0), names)
    (out / "skeleton.svg").write_text(svg, encoding="utf-8")
    top = np.argsort(-sal.mean(axis=0))[:3]
    print("top joints: " + ", ".join(f"{names[i]}={sal.mean(axis=0)[i]:.4f}" for i in top))
    return 0


def cmd_ksweep(args) -> int:
    config = _config(args)
    ks = _k_list(args.K or "2,4,6,8,10,12,14")
    ds = _dataset(args.dataset)
    split = "test" if "test" in ds.manifest.splits else "train"
    rows = []
    print(_header(config), flush=True)
    for k in ks:
        cfg = config.replace(K=k)
        result = train(build_model(cfg, ds), ds, cfg, evaluate_test=False)
        acc = evaluate(result.model, ds.split(split), ds.manifest).accuracy
        rows.append((k, acc, result.final_loss))
        print(f"K={k} {split}_acc={acc:.4f} final_loss={result.final_loss:.5f}", flush=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ksweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["K", f"{split}_accuracy", "final_train_loss"])
            w.writerows(rows)
    return 0


def gradcheck_model(config: TrainConfig, num_nodes: int = 6, num_classes: int = 3, frames: int = 3):
    """Toy model of the configured architecture with its loss builder."""
    rng = np.random.default_rng(config.seed)
    edges = [(int(rng.integers(0, i)), i) for i in range(1, num_nodes)]
    model = A2GNN(config, num_nodes, edges, num_classes)
    x = rng.normal(size=(frames, num_nodes, 3))
    label = int(rng.integers(0, num_classes))
    return model, (lambda store: model.loss_node(x, label))


def cmd_gradcheck(args) -> int:
    overrides = {"d_h": "16", **_overrides(args.set)}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    config = load_config(args.config, overrides).replace(precision="float64")
    model, builder = gradcheck_model(config, num_nodes=args.nodes)
    report = dc.gradcheck(builder, model.store, step=args.step, tol=args.tol,
                          max_coords=args.max_coords or None, seed=config.seed)
    for line in report.lines():
        print(line)
    print(f"gradcheck {'PASSED' if report.passed else 'FAILED'} tol={args.tol} step={args.step}")
    return 0 if report.passed else 1


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="a2gnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True, config=True):
        if dataset:
            sp.add_argument("--dataset", help="JSON-lines dataset file")
        if config:
            sp.add_argument("--config", help="key=value config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="write a synthetic stick-figure dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", default=",".join(SYNTH_CLASSES))
    sp.add_argument("--per-class", type=int, default=15)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model and write checkpoint plus log")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--K", help="Chebyshev order")
    sp.add_argument("--temporal-agg", choices=["mean", "last"])
    sp.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint file or directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="metrics and confusion matrix for one split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--split", choices=["train", "test"], default="test")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("inspect-au", help="per-frame joint saliency CSV and SVG heatmap")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--sequence", required=True, help="sequence id")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_inspect_au)

    sp = sub.add_parser("ksweep", help="test accuracy for several Chebyshev orders")
    common(sp)
    sp.add_argument("--K", help="comma list, default 2,4,6,8,10,12,14")
    sp.add_argument("--temporal-agg", choices=["mean", "last"])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ksweep)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    common(sp, dataset=False)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--nodes", type=int, default=6)
    sp.add_argument("--max-coords", type=int, default=30, help="coordinates probed per parameter, 0 for all")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, GraphError, TrainingDiverged, ValueError, KeyError,
            OSError) as exc:
        msg = str(exc).replace("\n", " ") or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
