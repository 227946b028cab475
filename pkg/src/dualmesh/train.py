"""Network assembly, vertex-labeling training and prediction.

A network is a flat list of layers. The default stack is::

    linear:16, conv:32, conv:64, conv:128, dual2primal, linear:256, dropout, linear:N_T

with ELU after every linear/conv layer except the last. ``conv`` expands to
DualConvMax or DualConvInv depending on ``NetworkConfig.operator``. The
``meanconv`` operator is a primal-vertex control network: the same stack
with neighbor-averaging convolutions on vertices and no dual2primal step.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dual import build_dual
from .errors import (ConfigError, FeatureMismatchError, LabelOutOfRangeError,
                     NonFiniteError, NonFiniteLossError, ParseError)
from .features import (assemble_features, parse_selection, selection_widths, standardize)
from .mesh import UNLABELED, Mesh, load_mesh

log = logging.getLogger(__name__)

OPERATORS = ("dualconvmax", "dualconvinv", "meanconv")


def default_layers(n_targets: int, operator: str = "dualconvmax") -> tuple[str, ...]:
    layers = ("linear:16", "conv:32", "conv:64", "conv:128", "dual2primal",
              "linear:256", "dropout", f"linear:{n_targets}")
    if operator == "meanconv":
        layers = tuple(x for x in layers if x != "dual2primal")
    return layers


@dataclass
class NetworkConfig:
    n_targets: int
    operator: str = "dualconvmax"
    layers: tuple[str, ...] | None = None
    features: tuple[str, ...] = ("xyz",)
    dropout: float = 0.5
    bias: bool = True
    seed: int = 0
    epochs: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    normalize_features: bool = False
    accumulate: bool = False
    n_inputs: int | None = None

    def __post_init__(self):
        self.operator = self.operator.lower()
        self.features = parse_selection(self.features)
        if self.layers is None:
            self.layers = default_layers(self.n_targets, self.operator)
        self.layers = tuple(self.layers)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layers"] = list(self.layers)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _parse_layer(spec: str):
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind in ("linear", "conv"):
        try:
            width = int(arg)
        except ValueError:
            raise ConfigError(f"layer {spec!r} needs an integer width") from None
        if width <= 0:
            raise ConfigError(f"layer {spec!r} needs a positive width")
        return kind, width
    if kind in ("dual2primal", "dropout"):
        if arg:
            raise ConfigError(f"layer {spec!r} takes no argument")
        return kind, None
    raise ConfigError(f"unknown layer kind in {spec!r}")


class Network:
    def __init__(self, config: NetworkConfig, layers: list, rng: np.random.Generator):
        self.config = config
        self.layers = layers
        self.rng = rng

    def forward(self, sample: Sample, train: bool = False) -> np.ndarray:
        x = sample.inputs
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, sample, train)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(f"layer {i} ({layer.describe()}) produced non-finite values")
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{layer.kind}.{k}": p
                for i, layer in enumerate(self.layers) for k, p in layer.params.items()}

    def named_gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{layer.kind}.{k}": layer.grads[k]
                for i, layer in enumerate(self.layers) for k in layer.params}

    def n_params(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def describe(self) -> list[str]:
        return [layer.describe() for layer in self.layers]


def build_network(config: NetworkConfig, rng: np.random.Generator | None = None) -> Network:
    """Instantiate the layer stack described by ``config``.

    Raises ``ConfigError`` for inconsistent widths or an invalid stack.
    """
    if config.operator not in OPERATORS:
        raise ConfigError(f"operator must be one of {OPERATORS}, got {config.operator!r}")
    if not 0.0 <= config.dropout < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {config.dropout}")
    if config.n_targets <= 0:
        raise ConfigError("n_targets must be positive")
    primal = config.operator == "meanconv"
    if primal and "dihedral" in config.features:
        raise ConfigError("the primal meanconv control cannot consume per-slot dihedral features")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    specs = [_parse_layer(s) for s in config.layers]
    if not specs or specs[-1][0] != "linear":
        raise ConfigError("the last layer must be linear")
    if specs[-1][1] != config.n_targets:
        raise ConfigError(f"last layer width {specs[-1][1]} != n_targets {config.n_targets}")
    n_d2p = sum(k == "dual2primal" for k, _ in specs)
    if primal and n_d2p:
        raise ConfigError("meanconv networks live on vertices; drop dual2primal")
    if not primal:
        if n_d2p != 1:
            raise ConfigError("dual networks need exactly one dual2primal layer")
        cut = [k for k, _ in specs].index("dual2primal")
        if any(k == "conv" for k, _ in specs[cut:]):
            raise ConfigError("conv layers must precede dual2primal")

    node_width, slot_width = selection_widths(config.features)
    if primal:
        node_width = sum(3 if f in ("xyz", "normal") else 1 for f in config.features)
    if config.n_inputs is not None and config.n_inputs != node_width + slot_width:
        raise ConfigError(
            f"declared {config.n_inputs} inputs but features {config.features} "
            f"give {node_width + slot_width}")
    if slot_width and not any(k == "conv" for k, _ in specs):
        raise ConfigError("dihedral features need at least one conv layer")

    op = {"dualconvmax": "max", "dualconvinv": "inv"}.get(config.operator)
    layers = []
    width = node_width
    slot_pending = slot_width
    last_weighted = max(i for i, (k, _) in enumerate(specs) if k in ("linear", "conv"))
    for i, (kind, w) in enumerate(specs):
        if kind == "linear":
            layers.append(nn.Linear(width, w, rng, bias=config.bias))
            width = w
        elif kind == "conv":
            if primal:
                layers.append(nn.NeighborMeanConv(width, w, rng, bias=config.bias))
            else:
                layers.append(nn.DualConv(width, w, rng, op=op, bias=config.bias,
                                          slot_channels=slot_pending))
                slot_pending = 0
            width = w
        elif kind == "dual2primal":
            layers.append(nn.Dual2Primal())
            continue
        elif kind == "dropout":
            layers.append(nn.Dropout(config.dropout, rng))
            continue
        if i != last_weighted:
            layers.append(nn.ELU())
    return Network(config, layers, rng)


# -------------------------------------------------------------------- samples

@dataclass(eq=False)
class Sample:
    """Everything a forward pass needs for one mesh."""

    mesh: Mesh
    inputs: np.ndarray
    slot: np.ndarray | None
    neighbors: np.ndarray | None
    dual2primal: nn.Dual2PrimalOp | None
    vertex_mean: object | None
    labels: np.ndarray | None
    selection: tuple[str, ...] = ()


def vertex_features(mesh: Mesh, selection) -> np.ndarray:
    """Per-vertex analogues of the face features, for the primal control."""
    from .features import face_areas, face_normals, surface_center_of_mass

    cols = []
    for name in parse_selection(selection):
        if name == "xyz":
            cols.append(mesh.vertices)
        elif name == "normal":
            v = mesh.vertices[mesh.faces]
            weighted = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
            acc = np.zeros((mesh.n_vertices, 3))
            for k in range(3):
                np.add.at(acc, mesh.faces[:, k], weighted)
            cols.append(acc / np.linalg.norm(acc, axis=1, keepdims=True))
            face_normals(mesh)  # rejects degenerate input consistently
        elif name == "area":
            acc = np.zeros(mesh.n_vertices)
            for k in range(3):
                np.add.at(acc, mesh.faces[:, k], face_areas(mesh) / 3.0)
            cols.append(acc[:, None])
        elif name == "distcm":
            cols.append(np.linalg.norm(mesh.vertices - surface_center_of_mass(mesh),
                                       axis=1)[:, None])
        else:
            raise ConfigError(f"feature {name!r} has no per-vertex form")
    return np.hstack(cols)


def prepare_sample(mesh: Mesh, config: NetworkConfig, labels=None) -> Sample:
    if labels is None:
        labels = mesh.labels
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if np.any(labels >= config.n_targets):
            raise LabelOutOfRangeError(
                f"label {int(labels.max())} out of range for {config.n_targets} targets")
    if config.operator == "meanconv":
        x = vertex_features(mesh, config.features)
        if config.normalize_features:
            x = standardize(x)
        return Sample(mesh, x, None, None, None, nn.neighbor_mean_matrix(mesh), labels,
                      config.features)
    dual = build_dual(mesh)
    fi = assemble_features(mesh, dual, config.features)
    x = standardize(fi.node) if config.normalize_features and fi.node_width else fi.node
    return Sample(mesh, x, fi.slot, dual.neighbors, nn.Dual2PrimalOp.from_mesh(mesh),
                  None, labels, config.features)


# ----------------------------------------------------------------- task/data

@dataclass
class CorrespondenceTask:
    """Meshes labeled with vertex indices of ``reference`` (-1 = unlabeled)."""

    reference: Mesh
    train_meshes: list = field(default_factory=list)
    test_meshes: list = field(default_factory=list)

    @property
    def n_targets(self) -> int:
        return self.reference.n_vertices

    def validate(self):
        for m in self.train_meshes + self.test_meshes:
            if m.labels is None:
                raise ConfigError("every task mesh needs a label array")
            if np.any(m.labels >= self.n_targets):
                raise LabelOutOfRangeError(
                    f"label {int(m.labels.max())} >= reference vertex count {self.n_targets}")


def icosphere_selfcorr_task(level: int = 2) -> CorrespondenceTask:
    from .shapes import icosphere

    ref = icosphere(level)
    labeled = ref.with_labels(np.arange(ref.n_vertices))
    return CorrespondenceTask(ref, [labeled], [labeled])


BUILTIN_TASKS = {
    "icosphere-selfcorr": lambda: icosphere_selfcorr_task(2),
    "icosphere3-selfcorr": lambda: icosphere_selfcorr_task(3),
}


def load_task(manifest) -> CorrespondenceTask:
    """Read a manifest of ``reference``, ``train`` and ``test`` lines.

    Each line is ``<role> <mesh-path> [<label-path>]`` with paths relative
    to the manifest; ``#`` starts a comment.
    """
    manifest = Path(manifest)
    root = manifest.parent
    reference, train, test = None, [], []
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        role = parts[0].lower()
        if role not in ("reference", "train", "test") or len(parts) not in (2, 3):
            raise ParseError(f"expected '<reference|train|test> mesh [labels]', got {line!r}",
                             os.fspath(manifest), lineno)
        labels = root / parts[2] if len(parts) == 3 else None
        mesh = load_mesh(root / parts[1], labels=labels)
        if role == "reference":
            reference = mesh
        elif labels is None:
            raise ParseError(f"{role} mesh needs a label file", os.fspath(manifest), lineno)
        else:
            (train if role == "train" else test).append(mesh)
    if reference is None:
        raise ParseError("manifest names no reference mesh", os.fspath(manifest))
    task = CorrespondenceTask(reference, train, test)
    task.validate()
    return task


# ------------------------------------------------------------------- training

def _accuracy(logits, labels) -> float:
    mask = labels >= 0
    if not np.any(mask):
        return float("nan")
    return float(np.mean(np.argmax(logits[mask], axis=1) == labels[mask]))


def evaluate_samples(network: Network, samples) -> tuple[float, float]:
    """Mean eval-mode loss and pooled accuracy over labeled vertices."""
    losses, hits, total = [], 0, 0
    for s in samples:
        logits = network.forward(s, train=False)
        loss, _ = nn.softmax_cross_entropy(logits, s.labels)
        losses.append(loss)
        mask = s.labels >= 0
        hits += int(np.sum(np.argmax(logits[mask], axis=1) == s.labels[mask]))
        total += int(mask.sum())
    return float(np.mean(losses)), (hits / total if total else float("nan"))


@dataclass
class TrainResult:
    network: Network
    history: list
    adam: nn.AdamState


def train(task: CorrespondenceTask, config: NetworkConfig, out_dir=None, samples=None,
          progress=None) -> TrainResult:
    """Train on ``task.train_meshes``, one optimizer step per mesh.

    Epoch 0 of the history is the untrained network. With ``out_dir`` the
    run writes ``log.csv`` and ``model.ckpt`` there.
    """
    if config.n_targets != task.n_targets:
        raise ConfigError(f"config n_targets {config.n_targets} != task {task.n_targets}")
    task.validate()
    if samples is None:
        samples = [prepare_sample(m, config) for m in task.train_meshes]
    network = build_network(config)
    state = nn.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    params = network.named_parameters()

    eval_loss, acc = evaluate_samples(network, samples)
    history = [{"epoch": 0, "loss": eval_loss, "eval_loss": eval_loss, "train_accuracy": acc}]
    for epoch in range(1, config.epochs + 1):
        step_losses = []
        if config.accumulate:
            network.zero_grad()
        for s in samples:
            if not config.accumulate:
                network.zero_grad()
            logits = network.forward(s, train=True)
            loss, dlogits = nn.softmax_cross_entropy(logits, s.labels)
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            if config.accumulate:
                dlogits = dlogits / len(samples)
            network.backward(dlogits)
            step_losses.append(loss)
            if not config.accumulate:
                nn.adam_step(params, network.named_gradients(), state)
        if config.accumulate:
            nn.adam_step(params, network.named_gradients(), state)
        eval_loss, acc = evaluate_samples(network, samples)
        if not np.isfinite(eval_loss):
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        history.append({"epoch": epoch, "loss": float(np.mean(step_losses)),
                        "eval_loss": eval_loss, "train_accuracy": acc})
        if progress is not None:
            progress(history[-1])
        log.debug("epoch %d loss %.6f acc %.4f", epoch, history[-1]["loss"], acc)

    result = TrainResult(network, history, state)
    if out_dir is not None:
        from .persist import save_checkpoint

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_log(history, out / "log.csv")
        save_checkpoint(network, out / "model.ckpt", epochs=config.epochs)
    return result


def write_log(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "eval_loss", "train_accuracy"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["loss"]), repr(row["eval_loss"]),
                             repr(row["train_accuracy"])])


def predict(network: Network, mesh: Mesh, features=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex argmax labels and softmax distributions (eval mode).

    ``features``, when given, must equal the selection the network was
    trained with.
    """
    if features is not None and parse_selection(features) != network.config.features:
        raise FeatureMismatchError(
            f"network was trained on {'+'.join(network.config.features)}, "
            f"got {'+'.join(parse_selection(features))}")
    sample = prepare_sample(mesh, network.config, labels=np.full(mesh.n_vertices, UNLABELED))
    logits = network.forward(sample, train=False)
    return np.argmax(logits, axis=1), nn.softmax(logits)
