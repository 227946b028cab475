"""``dualmesh`` command line.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
input files, failed self test).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, DualMeshError

log = logging.getLogger("dualmesh")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# training options that may also come from a key=value config file
TRAIN_KEYS = {
    "op": ("operator", str), "features": ("features", str), "epochs": ("epochs", int),
    "lr": ("lr", float), "beta1": ("beta1", float), "beta2": ("beta2", float),
    "eps": ("eps", float), "dropout": ("dropout", float), "layers": ("layers", str),
    "seed": ("seed", int), "bias": ("bias", None), "normalize": ("normalize_features", None),
    "accumulate": ("accumulate", None),
}


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed)."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in TRAIN_KEYS:
            raise ConfigError(f"{path}:{lineno}: expected one of {sorted(TRAIN_KEYS)} as key=value")
        out[key] = value.strip()
    return out


def _effective_training_config(args, n_targets):
    from .train import NetworkConfig

    merged = {}
    if args.config:
        merged.update(read_config_file(args.config))
    for key in TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    kwargs = {}
    for key, value in merged.items():
        field_name, conv = TRAIN_KEYS[key]
        if conv is None:
            value = value if isinstance(value, bool) else _bool(value)
        elif key == "layers":
            value = tuple(s.strip().replace("N_T", str(n_targets))
                          for s in str(value).split(",") if s.strip())
        else:
            try:
                value = conv(value)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        kwargs[field_name] = value
    return NetworkConfig(n_targets=n_targets, **kwargs)


def write_effective_config(out_dir, values: dict):
    lines = [f"{k} = {','.join(map(str, v)) if isinstance(v, (list, tuple)) else v}"
             for k, v in values.items()]
    (Path(out_dir) / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {path}")
    return p


# ------------------------------------------------------------------ commands

def cmd_dualize(args):
    from .dual import build_dual
    from .mesh import load_mesh

    mesh = load_mesh(_require_file(args.mesh, "mesh"))
    d = build_dual(mesh)
    print(f"{d.n_nodes} nodes, 3-regular: {str(d.is_three_regular()).lower()}")
    if d.has_padding:
        print(f"{int(d.pad_mask.any(axis=1).sum())} boundary nodes padded")
    if args.dump:
        Path(args.dump).write_text(d.dump(), encoding="utf-8")
    return EXIT_OK


def cmd_features(args):
    from .dual import build_dual
    from .features import assemble_features
    from .mesh import load_mesh

    mesh = load_mesh(_require_file(args.mesh, "mesh"))
    fi = assemble_features(mesh, build_dual(mesh), args.features)
    header = list(fi.channels)
    table = fi.node
    if fi.slot is not None:
        header += [f"dihedral_{k}" for k in range(3)]
        table = np.hstack([table, fi.slot[:, :, 0]])
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table.tolist():
            w.writerow([repr(x) for x in row])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_decimate(args):
    from .decimate import decimate_traced
    from .mesh import load_labels, load_mesh, save_labels, save_mesh

    if not 0.0 < args.fraction <= 1.0:
        raise UsageError(f"decimate: --fraction must be in (0, 1], got {args.fraction}")
    labels = None
    if args.labels:
        labels = load_labels(_require_file(args.labels[0], "label file"))
    mesh = load_mesh(_require_file(args.input, "mesh"), labels=labels)
    result = decimate_traced(mesh, args.fraction)
    save_mesh(result.mesh, args.output)
    if args.labels:
        save_labels(result.mesh.labels, args.labels[1])
    if args.trace:
        with open(args.trace, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "a", "b", "length", "survivor"])
            for c in result.trace:
                w.writerow([c.step, c.edge[0], c.edge[1], repr(c.length), c.survivor])
    print(f"{mesh.n_faces} -> {result.mesh.n_faces} faces ({len(result.trace)} collapses)")
    return EXIT_OK


def cmd_train(args):
    from .train import BUILTIN_TASKS, load_task, train

    if bool(args.task) == bool(args.manifest):
        raise UsageError("train: give exactly one of --task or --manifest")
    if args.task:
        if args.task not in BUILTIN_TASKS:
            raise UsageError(f"train: unknown task {args.task!r}; choose from {sorted(BUILTIN_TASKS)}")
        task = BUILTIN_TASKS[args.task]()
    else:
        task = load_task(_require_file(args.manifest, "manifest"))
    config = _effective_training_config(args, task.n_targets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(out, config.to_dict())

    def progress(row):
        log.info("epoch %d  loss %.5f  acc %.4f", row["epoch"], row["loss"], row["train_accuracy"])

    result = train(task, config, out_dir=out, progress=progress)
    last = result.history[-1]
    print(f"trained {config.epochs} epochs: loss {last['eval_loss']:.6f}, "
          f"train accuracy {last['train_accuracy']:.4f}; wrote {out / 'model.ckpt'}, {out / 'log.csv'}")
    return EXIT_OK


def cmd_predict(args):
    from .mesh import load_mesh, save_labels
    from .persist import load_network
    from .train import predict

    network = load_network(_require_file(args.model, "checkpoint"))
    mesh = load_mesh(_require_file(args.mesh, "mesh"))
    labels, probs = predict(network, mesh, features=args.features)
    save_labels(labels, args.out)
    if args.probs:
        np.save(args.probs, probs)
    print(f"wrote {len(labels)} labels to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    from .geodesic import error_colors, evaluate
    from .mesh import load_labels, load_mesh, save_mesh
    from .persist import write_metrics

    pred = load_labels(_require_file(args.pred, "prediction file"))
    gt = load_labels(_require_file(args.gt, "ground-truth file"))
    ref = load_mesh(_require_file(args.ref, "reference mesh"))
    if len(pred) != len(gt):
        raise DataError(f"{len(pred)} predictions but {len(gt)} ground-truth labels")
    radii = None
    if args.radii:
        try:
            radii = [float(r) for r in args.radii.split(",")]
        except ValueError:
            raise UsageError("eval: --radii must be comma-separated numbers") from None
    report = evaluate(pred, gt, ref, radii=radii, jobs=args.jobs)
    out = Path(args.out)
    write_metrics(report, out)
    write_effective_config(out, {"pred": args.pred, "gt": args.gt, "ref": args.ref,
                                 "radii": args.radii or "default", "seed": args.seed})
    if args.color_out:
        query = load_mesh(_require_file(args.query, "query mesh")) if args.query else ref
        if query.n_vertices != len(pred):
            raise DataError("--color-out needs --query: the mesh the predictions belong to")
        save_mesh(query, args.color_out, format="OFF",
                  vertex_colors=error_colors(report.errors, 0.1 * report.diameter))
    print(json.dumps({"accuracy": report.accuracy, "mean_geo_error": report.mean_geodesic_error,
                      "diameter": report.diameter}))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_all

    return EXIT_OK if run_all() else EXIT_DATA


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for parallel stages")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="dualmesh", description="Dual-mesh convolutional networks for shape correspondence.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("dualize", parents=[common], help="build the face-dual graph")
    s.add_argument("mesh")
    s.add_argument("--dump", help="write 'node: n0 n1 n2' lines (-1 = PAD)")
    s.set_defaults(func=cmd_dualize)

    s = sub.add_parser("features", parents=[common], help="write per-face features as CSV")
    s.add_argument("mesh")
    s.add_argument("--features", default="xyz", help="comma list of xyz,normal,area,distcm,dihedral")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("decimate", parents=[common], help="edge-length ordered quadric decimation")
    s.add_argument("--fraction", type=float, required=True, help="target face fraction in (0, 1]")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--labels", nargs=2, metavar=("IN_LBL", "OUT_LBL"))
    s.add_argument("--trace", help="CSV log of executed collapses")
    s.set_defaults(func=cmd_decimate)

    s = sub.add_parser("train", parents=[common], help="train a correspondence network")
    s.add_argument("--task", help="built-in task, e.g. icosphere-selfcorr")
    s.add_argument("--manifest", help="dataset manifest (reference/train/test lines)")
    s.add_argument("--out", default=".", help="output directory for model.ckpt and log.csv")
    s.add_argument("--config", help="key=value file; flags override it")
    s.add_argument("--op", choices=["dualconvmax", "dualconvinv", "meanconv"])
    s.add_argument("--features")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--beta1", type=float)
    s.add_argument("--beta2", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--dropout", type=float)
    s.add_argument("--layers", help="comma list, e.g. linear:16,conv:32,dual2primal,linear:N_T")
    bias = s.add_mutually_exclusive_group()
    bias.add_argument("--bias", dest="bias", action="store_const", const=True, default=None)
    bias.add_argument("--no-bias", dest="bias", action="store_const", const=False)
    s.add_argument("--normalize", action="store_const", const=True, default=None,
                   help="standardize input feature columns per mesh")
    s.add_argument("--accumulate", action="store_const", const=True, default=None,
                   help="one optimizer step per epoch, averaging gradients over meshes")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="label the vertices of a mesh")
    s.add_argument("mesh")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True, help="label file to write")
    s.add_argument("--features", help="must match the checkpoint's feature selection")
    s.add_argument("--probs", help="also save the (N_V, N_T) distributions as .npy")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", parents=[common], help="correspondence metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--ref", required=True, help="reference mesh the labels index into")
    s.add_argument("--out", default=".", help="directory for metrics.json and curve.csv")
    s.add_argument("--radii", help="comma list of radii (default: 64 steps up to 0.3 diameter)")
    s.add_argument("--query", help="mesh the predictions belong to (for --color-out)")
    s.add_argument("--color-out", help="write a COFF mesh colored by geodesic error")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", parents=[common], help="run the built-in verification suites")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DualMeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
