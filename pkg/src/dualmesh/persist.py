"""Checkpoint files and metric artifacts.

``model.ckpt`` layout (all integers little-endian)::

    magic    8 bytes  b"DUALCKPT"
    version  u32
    hlen     u32      byte length of the header
    header   hlen     UTF-8 JSON: config, architecture, seed, epochs, block table
    nblocks  u32
    block*            u16 name length, UTF-8 name, u8 ndim, u64 dims[ndim],
                      float64 data (prod(dims) values, little-endian)

Nothing may follow the last block.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptionError, VersionError

MAGIC = b"DUALCKPT"
VERSION = 1
_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    config: dict
    blocks: dict = field(default_factory=dict)
    architecture: list = field(default_factory=list)
    seed: int = 0
    epochs: int = 0
    version: int = VERSION

    def equals(self, other: Checkpoint) -> bool:
        """Exact equality, bit-for-bit on parameters (signed zeros included)."""
        if (self.config != other.config or self.architecture != other.architecture
                or self.seed != other.seed or self.epochs != other.epochs
                or list(self.blocks) != list(other.blocks)):
            return False
        return all(a.shape == other.blocks[k].shape
                   and a.astype(_F64).tobytes() == other.blocks[k].astype(_F64).tobytes()
                   for k, a in self.blocks.items())


def checkpoint_of(network, epochs: int = 0) -> Checkpoint:
    cfg = network.config.to_dict()
    return Checkpoint(cfg, {k: v.copy() for k, v in network.named_parameters().items()},
                      network.describe(), cfg["seed"], epochs)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = {
        "config": ckpt.config,
        "architecture": ckpt.architecture,
        "seed": ckpt.seed,
        "epochs": ckpt.epochs,
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in ckpt.blocks.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", ckpt.version, len(hbytes)), hbytes,
           struct.pack("<I", len(ckpt.blocks))]
    for name, arr in ckpt.blocks.items():
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptionError(
                f"truncated checkpoint: {what} needs {n} bytes at offset {self.pos}, "
                f"{len(self.data) - self.pos} remain")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CorruptionError("not a checkpoint file (bad magic)")
    version, hlen = r.unpack("<II", "version/header length")
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
        table = [(b["name"], tuple(int(d) for d in b["shape"])) for b in header["blocks"]]
        config = header["config"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CorruptionError(f"unreadable checkpoint header: {exc}") from None
    (count,) = r.unpack("<I", "block count")
    if count != len(table):
        raise CorruptionError(f"header declares {len(table)} blocks, body has {count}")
    blocks = {}
    for name, shape in table:
        (nlen,) = r.unpack("<H", "block name length")
        try:
            got = r.take(nlen, "block name").decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError("block name is not UTF-8") from None
        if got != name:
            raise CorruptionError(f"expected block {name!r}, found {got!r}")
        (ndim,) = r.unpack("<B", "ndim")
        dims = r.unpack(f"<{ndim}Q", f"shape of {name}")
        if tuple(dims) != shape:
            raise CorruptionError(f"block {name}: shape {dims} disagrees with header {shape}")
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = r.take(8 * n, f"data of {name}")
        blocks[name] = np.frombuffer(raw, dtype=_F64).reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise CorruptionError(f"{len(data) - r.pos} unexpected bytes after the last block")
    return Checkpoint(config, blocks, header.get("architecture", []),
                      int(header.get("seed", 0)), int(header.get("epochs", 0)), version)


def save_checkpoint(obj, path, epochs: int = 0) -> None:
    ckpt = obj if isinstance(obj, Checkpoint) else checkpoint_of(obj, epochs)
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def network_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the network from the stored config and copy the parameters in."""
    from .train import NetworkConfig, build_network

    try:
        config = NetworkConfig.from_dict(ckpt.config)
        network = build_network(config)
    except (ConfigError, TypeError, ValueError) as exc:
        raise CorruptionError(f"checkpoint config is invalid: {exc}") from None
    params = network.named_parameters()
    if list(params) != list(ckpt.blocks):
        raise CorruptionError(
            f"parameter blocks {list(ckpt.blocks)} do not match architecture {list(params)}")
    for name, p in params.items():
        if p.shape != ckpt.blocks[name].shape:
            raise CorruptionError(
                f"block {name}: shape {ckpt.blocks[name].shape}, architecture expects {p.shape}")
        p[...] = ckpt.blocks[name]
    return network


def load_network(path):
    return network_from_checkpoint(load_checkpoint(path))


# ------------------------------------------------------------ metric files

def write_metrics(report, out_dir) -> None:
    """``metrics.json`` plus ``curve.csv`` (radius_cm, radius_norm200, fraction)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"accuracy": report.accuracy, "mean_geo_error": report.mean_geodesic_error,
               "diameter": report.diameter, "n_evaluated": report.n_evaluated}
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    with open(out / "curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["radius_cm", "radius_norm200", "fraction"])
        for r, rn, frac in zip(report.radii, report.radii_norm200, report.curve):
            w.writerow([repr(float(r)), repr(float(rn)), repr(float(frac))])


def read_metrics(out_dir) -> dict:
    return json.loads((Path(out_dir) / "metrics.json").read_text(encoding="utf-8"))
