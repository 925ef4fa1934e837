"""Binary checkpoint format.

Layout: magic ``HGRC``, one version byte, an 8-byte little-endian unsigned
manifest length, the JSON manifest (config, schema, code vocabulary,
normalization stats, parameter name/shape/offset table, training log), then
every parameter array as raw little-endian float64 in C order, concatenated
in manifest order.  Round trips are bit-exact: loading a saved checkpoint
and evaluating reproduces the pre-save evaluation to the last bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from . import model as model_mod
from .data import NormStats
from .errors import CheckpointError, CheckpointVersionError
from .numeric import Rng
from .train import Checkpoint, TrainConfig

MAGIC = b"HGRC"
VERSION = 1
_HEADER = struct.Struct("<4sBQ")


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    named = ckpt.params.named_arrays()
    entries = []
    blobs = []
    offset = 0
    for name, arr in named.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)

    stats = ckpt.norm_stats
    manifest = {
        "config": asdict(ckpt.config),
        "schema": list(ckpt.schema),
        "code_vocab": list(ckpt.code_vocab),
        "norm_stats": {
            "mean": [float(x) for x in stats.mean],
            "std": None if stats.std is None else [float(x) for x in stats.std],
            "warnings": list(stats.warnings),
        },
        "params": entries,
        "training_log": ckpt.training_log,
        "best_epoch": ckpt.best_epoch,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for raw in blobs:
            fh.write(raw)
    return str(path)


def _config_from_dict(raw: dict) -> TrainConfig:
    raw = dict(raw)
    for key in ("split_ratios", "ffn_hidden"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return TrainConfig(**raw)
    except TypeError as exc:
        raise CheckpointError(f"checkpoint config does not match TrainConfig: {exc}")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, manifest_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    body_start = _HEADER.size + manifest_len
    if len(data) < body_start:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[_HEADER.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}")

    try:
        config = _config_from_dict(manifest["config"])
        schema = tuple(manifest["schema"])
        code_vocab = tuple(manifest["code_vocab"])
        stats_raw = manifest["norm_stats"]
        entries = manifest["params"]
        training_log = manifest["training_log"]
        best_epoch = int(manifest["best_epoch"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: manifest missing field {exc}")

    norm_stats = NormStats(
        schema=schema,
        mean=np.asarray(stats_raw["mean"], dtype=np.float64),
        std=None if stats_raw["std"] is None else np.asarray(stats_raw["std"], dtype=np.float64),
        warnings=tuple(stats_raw.get("warnings", ())),
    )

    cfg = config.model_config(len(schema), len(code_vocab))
    params = model_mod.init_params(cfg, Rng(0))
    template = params.named_arrays()
    names_seen = set()
    blob = data[body_start:]
    expected_bytes = 0
    for entry in entries:
        name = entry["name"]
        if name not in template:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        if name in names_seen:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        names_seen.add(name)
        arr = template[name]
        shape = tuple(entry["shape"])
        if shape != arr.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {shape}, expected {arr.shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = int(entry["offset"])
        end = start + count * 8
        if start < 0 or end > len(blob):
            raise CheckpointError(f"{path}: parameter {name!r} extends past end of file")
        arr[...] = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape)
        expected_bytes += count * 8
    if names_seen != set(template):
        missing = sorted(set(template) - names_seen)
        raise CheckpointError(f"{path}: missing parameters {missing}")
    if expected_bytes != len(blob):
        raise CheckpointError(
            f"{path}: parameter blob is {len(blob)} bytes, manifest expects {expected_bytes}")

    return Checkpoint(
        config=config,
        schema=schema,
        code_vocab=code_vocab,
        norm_stats=norm_stats,
        params=params,
        training_log=training_log,
        best_epoch=best_epoch,
    )
