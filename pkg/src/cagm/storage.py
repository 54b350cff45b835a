"""Persistence: checkpoint documents, dataset files, CSV tables.

Checkpoints are a single JSON document; floats survive the round trip
exactly because json serializes them via repr. Datasets are a JSON
header describing provenance plus a sibling .npz payload. CSVs open
with a provenance comment line and format floats with %.17g so repeated
runs are byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import CheckpointError
from .model import CagmModel, TrainConfig
from .nn import MLP

SCHEMA_VERSION = 1

_NETWORK_NAMES = ("generator", "encoder", "discriminator")


def _net_to_doc(net: MLP) -> dict:
    return {
        "widths": [int(w) for w in net.widths],
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_doc(doc: dict, name: str) -> MLP:
    try:
        widths = [int(w) for w in doc["widths"]]
        raw_w = doc["weights"]
        raw_b = doc["biases"]
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"{name}: malformed network document ({err})") from None
    if len(raw_w) != len(widths) - 1 or len(raw_b) != len(widths) - 1:
        raise CheckpointError(
            f"{name}: expected {len(widths) - 1} layers, got "
            f"{len(raw_w)} weight and {len(raw_b)} bias arrays"
        )
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = np.asarray(raw_w[i], dtype=np.float64)
        b = np.asarray(raw_b[i], dtype=np.float64)
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise CheckpointError(
                f"{name} layer {i}: stored sizes ({w.size}, {b.size}) do not match "
                f"widths {fan_in} -> {fan_out}"
            )
        weights.append(w.reshape(fan_in, fan_out))
        biases.append(b)
    return MLP(widths=widths, weights=weights, biases=biases)


def save_checkpoint(
    model: CagmModel,
    path,
    train_config: TrainConfig | None = None,
    final_losses: dict | None = None,
) -> None:
    """Write the full model (and optionally its training context) as JSON."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "latent_dim": int(model.latent_dim),
        "networks": {
            "generator": _net_to_doc(model.generator),
            "encoder": _net_to_doc(model.encoder),
            "discriminator": _net_to_doc(model.discriminator),
        },
        "train_config": None if train_config is None else vars(train_config),
        "final_losses": final_losses,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_checkpoint(path) -> dict:
    """Parse and schema-check a checkpoint document without building a model."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"checkpoint {path} is not a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(
            f"checkpoint schema version {version!r} is not supported (want {SCHEMA_VERSION})"
        )
    missing = {"latent_dim", "networks"} - doc.keys()
    if missing:
        raise CheckpointError(f"checkpoint is missing keys: {sorted(missing)}")
    nets = doc["networks"]
    if not isinstance(nets, dict) or set(nets) != set(_NETWORK_NAMES):
        raise CheckpointError(
            f"checkpoint must store exactly the networks {_NETWORK_NAMES}"
        )
    return doc


def load_checkpoint(path) -> CagmModel:
    """Rebuild the model from a checkpoint; no partially constructed result."""
    doc = read_checkpoint(path)
    nets = {name: _net_from_doc(doc["networks"][name], name) for name in _NETWORK_NAMES}
    try:
        return CagmModel(
            generator=nets["generator"],
            encoder=nets["encoder"],
            discriminator=nets["discriminator"],
            latent_dim=int(doc["latent_dim"]),
        )
    except Exception as err:
        raise CheckpointError(f"checkpoint is internally inconsistent: {err}") from None


def load_train_config(path) -> TrainConfig | None:
    """The training configuration stored alongside the weights, if any."""
    doc = read_checkpoint(path)
    raw = doc.get("train_config")
    return None if raw is None else TrainConfig(**raw)


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(path, generator_id: str, spec: dict, seed, arrays: dict) -> None:
    """JSON header with provenance plus a sibling .npz holding the arrays."""
    path = str(path)
    payload = os.path.splitext(path)[0] + ".npz"
    header = {
        "schema_version": SCHEMA_VERSION,
        "generator_id": generator_id,
        "spec": spec,
        "seed": seed,
        "shapes": {name: list(np.asarray(a).shape) for name, a in arrays.items()},
        "payload": os.path.basename(payload),
    }
    with open(path, "w") as fh:
        json.dump(header, fh, indent=2)
    np.savez(payload, **{k: np.asarray(v) for k, v in arrays.items()})


def load_dataset(path):
    """Return (header, arrays); shapes are checked against the header."""
    path = str(path)
    try:
        with open(path) as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read dataset header {path}: {err}") from None
    for key in ("generator_id", "spec", "seed", "shapes", "payload"):
        if key not in header:
            raise CheckpointError(f"dataset header is missing key {key!r}")
    payload = os.path.join(os.path.dirname(path) or ".", header["payload"])
    try:
        with np.load(payload) as npz:
            arrays = {name: npz[name] for name in npz.files}
    except OSError as err:
        raise CheckpointError(f"cannot read dataset payload {payload}: {err}") from None
    for name, shape in header["shapes"].items():
        if name not in arrays:
            raise CheckpointError(f"dataset payload is missing array {name!r}")
        if list(arrays[name].shape) != list(shape):
            raise CheckpointError(
                f"array {name!r} has shape {list(arrays[name].shape)}, header says {shape}"
            )
    return header, arrays


# ---------------------------------------------------------------------------
# CSV tables


def format_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, columns, rows, comment: str | None = None) -> None:
    """Plain CSV with an optional leading provenance comment line."""
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
