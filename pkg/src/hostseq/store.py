"""On-disk artifact formats: the feature table CSV, the token table
CSV, and the binary model checkpoint.

The checkpoint is a magic-tagged container: a JSON header describing
the model and its arrays, followed by the raw little-endian array
blocks in header order. One format serves both the neural nets and the
tree ensembles.
"""

from __future__ import annotations

import csv
import io
import json
import struct

import numpy as np

from .ensemble import (DecisionTree, Forest, ForestConfig, RusBoostConfig,
                       RusBoostModel)
from .models import ModelSpec, NeuralClassifier, TrainConfig
from .seqio import DataError
from .util import atomic_write_bytes, atomic_write_text


class CheckpointError(DataError):
    """Raised for unreadable or mismatched checkpoint files."""


MAGIC = b"HSEQCKPT"
VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def write_features_csv(path, ids, labels, scheme: str, matrix) -> None:
    """Rows of id,label,scheme,v0..v{d-1}; floats use repr round-trip."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or len(ids) != matrix.shape[0] \
            or len(labels) != matrix.shape[0]:
        raise ValueError("ids, labels and matrix rows must align")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label", "scheme"]
                    + [f"v{i}" for i in range(matrix.shape[1])])
    for rid, label, row in zip(ids, labels, matrix):
        writer.writerow([rid, label, scheme] + [repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_features_csv(path):
    """Returns (ids, labels, scheme, matrix)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows) < 2:
        raise DataError(f"{path}: no feature rows")
    header = rows[0]
    if header[:3] != ["id", "label", "scheme"]:
        raise DataError(f"{path}: unexpected header {header[:3]}")
    width = len(header) - 3
    ids, labels, values = [], [], []
    scheme = None
    for row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"{path}: row width mismatch for {row[0]!r}")
        ids.append(row[0])
        labels.append(row[1])
        if scheme is None:
            scheme = row[2]
        elif row[2] != scheme:
            raise DataError(f"{path}: mixed schemes {scheme!r} and {row[2]!r}")
        values.append([float(v) for v in row[3:]])
    return ids, labels, scheme, np.asarray(values, dtype=np.float64).reshape(
        len(ids), width)


def write_tokens_csv(path, ids, labels, matrix, true_lens) -> None:
    """Rows of id,label,true_len,t0..t{max_len-1} (left-padded ids)."""
    matrix = np.asarray(matrix)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label", "true_len"]
                    + [f"t{i}" for i in range(matrix.shape[1])])
    for rid, label, n, row in zip(ids, labels, true_lens, matrix):
        writer.writerow([rid, label, int(n)] + [int(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_tokens_csv(path):
    """Returns (ids, labels, matrix, true_lens)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows) < 2:
        raise DataError(f"{path}: no token rows")
    header = rows[0]
    if header[:3] != ["id", "label", "true_len"]:
        raise DataError(f"{path}: unexpected header {header[:3]}")
    ids, labels, lens, values = [], [], [], []
    for row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"{path}: row width mismatch for {row[0]!r}")
        ids.append(row[0])
        labels.append(row[1])
        lens.append(int(row[2]))
        values.append([int(v) for v in row[3:]])
    return (ids, labels, np.asarray(values, dtype=np.int64),
            np.asarray(lens, dtype=np.int64))


def save_checkpoint(path, kind: str, meta: dict, arrays: dict) -> None:
    entries = []
    blocks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype("<i8")
            dtype = "<i8"
        else:
            arr = arr.astype("<f8")
            dtype = "<f8"
        entries.append({"name": name, "dtype": dtype,
                        "shape": list(arr.shape)})
        blocks.append(np.ascontiguousarray(arr).tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True).encode("utf-8")
    out = b"".join([MAGIC, struct.pack("<IQ", VERSION, len(header)), header]
                   + blocks)
    atomic_write_bytes(path, out)


def load_checkpoint(path):
    """Returns (kind, meta, arrays)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = len(MAGIC) + 12
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    offset = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated array block")
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
            offset=offset).reshape(shape).copy()
        offset += nbytes
    return header["kind"], header["meta"], arrays


def _spec_to_meta(spec: ModelSpec) -> dict:
    return {"kind": spec.kind, "n_classes": spec.n_classes,
            "input_kind": spec.input_kind, "in_dim": spec.in_dim,
            "hidden": list(spec.hidden), "vocab_size": spec.vocab_size,
            "max_len": spec.max_len, "embed_dim": spec.embed_dim,
            "filters": spec.filters, "kernel_size": spec.kernel_size,
            "num_heads": spec.num_heads}


def _spec_from_meta(meta: dict) -> ModelSpec:
    meta = dict(meta)
    meta["hidden"] = tuple(meta["hidden"])
    return ModelSpec(**meta)


def _config_to_meta(config: TrainConfig) -> dict:
    return {"learning_rate": config.learning_rate,
            "batch_size": config.batch_size, "epochs": config.epochs,
            "optimizer": config.optimizer, "alpha": config.alpha,
            "seed": config.seed}


def save_model(path, model, class_names) -> None:
    class_names = list(class_names)
    if isinstance(model, NeuralClassifier):
        meta = {"model": "neural", "spec": _spec_to_meta(model.spec),
                "config": _config_to_meta(model.config),
                "class_names": class_names}
        save_checkpoint(path, model.spec.kind, meta, model.state_arrays())
        return
    if isinstance(model, Forest):
        arrays = {}
        for i, tree in enumerate(model.trees):
            for key, arr in tree.to_arrays().items():
                arrays[f"t{i}.{key}"] = arr
        meta = {"model": "forest",
                "config": {"n_estimators": model.config.n_estimators,
                           "max_depth": model.config.max_depth,
                           "features_per_split": model.config.features_per_split,
                           "seed": model.config.seed},
                "n_classes": model.n_classes, "class_names": class_names}
        save_checkpoint(path, "forest", meta, arrays)
        return
    if isinstance(model, RusBoostModel):
        arrays = {"alphas": np.asarray(model.alphas, dtype=np.float64)}
        for i, tree in enumerate(model.trees):
            for key, arr in tree.to_arrays().items():
                arrays[f"t{i}.{key}"] = arr
        meta = {"model": "rusboost",
                "config": {"n_estimators": model.config.n_estimators,
                           "learning_rate": model.config.learning_rate,
                           "max_depth": model.config.max_depth,
                           "seed": model.config.seed},
                "n_classes": model.n_classes, "class_names": class_names}
        save_checkpoint(path, "rusboost", meta, arrays)
        return
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def _trees_from_arrays(arrays: dict, count: int, max_depth: int) -> list:
    trees = []
    for i in range(count):
        group = {key.split(".", 1)[1]: arr for key, arr in arrays.items()
                 if key.startswith(f"t{i}.")}
        if not group:
            raise CheckpointError(f"missing arrays for tree {i}")
        trees.append(DecisionTree.from_arrays(group, max_depth))
    return trees


def load_model(path):
    """Returns (model, class_names)."""
    kind, meta, arrays = load_checkpoint(path)
    class_names = tuple(meta["class_names"])
    if meta["model"] == "neural":
        spec = _spec_from_meta(meta["spec"])
        clf = NeuralClassifier(spec, TrainConfig(**meta["config"]))
        clf.load_state_arrays(arrays)
        return clf, class_names
    if meta["model"] == "forest":
        cfg = ForestConfig(**meta["config"])
        trees = _trees_from_arrays(arrays, cfg.n_estimators, cfg.max_depth)
        return Forest(trees=trees, config=cfg,
                      n_classes=int(meta["n_classes"])), class_names
    if meta["model"] == "rusboost":
        cfg = RusBoostConfig(**meta["config"])
        trees = _trees_from_arrays(arrays, len(arrays["alphas"]),
                                   cfg.max_depth)
        return RusBoostModel(trees=trees,
                             alphas=[float(a) for a in arrays["alphas"]],
                             config=cfg,
                             n_classes=int(meta["n_classes"])), class_names
    raise CheckpointError(f"{path}: unknown model family {meta['model']!r}")
