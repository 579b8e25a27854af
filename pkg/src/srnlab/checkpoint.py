"""Portable checkpoint container: a text manifest (config key=values plus
one line per tensor) followed by a raw little-endian float32 payload.

The writer is canonical, so save -> load -> save reproduces the file byte
for byte. Training math is float64; values round to float32 on save and
widen back on load.
"""

from __future__ import annotations

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams, init_params
from .tensor import Matrix

MAGIC = b"SRNLAB1\n"

_CONFIG_FIELDS = (
    "vocab_size_with_pad",
    "embed_dim",
    "gru_units",
    "head",
    "hidden_dense_units",
    "window",
    "embed_dropout_rate",
)
_INT_FIELDS = {"vocab_size_with_pad", "embed_dim", "gru_units", "hidden_dense_units", "window"}
_TARGET_NAME = "target_embedding"


def _tensor_entries(params: ModelParams) -> list[tuple[str, Matrix]]:
    entries = [(p.name, p.value) for p in params.trainable()]
    if params.target_embedding is not None:
        entries.append((_TARGET_NAME, params.target_embedding))
    return entries


def _manifest_lines(params: ModelParams, config: ModelConfig, extras: dict[str, str]) -> tuple[list[str], int]:
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if value is None:
            continue
        lines.append(f"config {name}={value}")
    for key in sorted(extras):
        if key in _CONFIG_FIELDS:
            raise CheckpointError(f"extra config key {key!r} collides with a model field")
        lines.append(f"config {key}={extras[key]}")
    offset = 0
    for name, value in _tensor_entries(params):
        rows, cols = value.shape
        length = rows * cols * 4
        lines.append(f"tensor {name} {rows}x{cols} f32 {offset} {length}")
        offset += length
    lines.append(f"end {offset}")
    return lines, offset


def save_checkpoint(params: ModelParams, config: ModelConfig, path, extras: dict[str, str] | None = None) -> None:
    """Write the manifest and the float32 payload; round-trips byte-exactly."""
    lines, total = _manifest_lines(params, config, extras or {})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write("\n".join(lines).encode("utf-8") + b"\n")
        written = 0
        for _, value in _tensor_entries(params):
            payload = np.ascontiguousarray(value, dtype="<f4").tobytes()
            fh.write(payload)
            written += len(payload)
    if written != total:
        raise CheckpointError(f"payload accounting mismatch: wrote {written}, manifest says {total}")


def _parse_config(config_pairs: dict[str, str]) -> tuple[ModelConfig, dict[str, str]]:
    kwargs = {}
    extras = {}
    for key, raw in config_pairs.items():
        if key not in _CONFIG_FIELDS:
            extras[key] = raw
            continue
        if key in _INT_FIELDS:
            kwargs[key] = int(raw)
        elif key == "embed_dropout_rate":
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    try:
        config = ModelConfig(**kwargs)
    except TypeError as exc:
        raise CheckpointError(f"incomplete model config in manifest: {exc}") from None
    return config, extras


def manifest_text(path) -> str:
    """The manifest portion of a checkpoint file, for inspection."""
    _, _, _, lines = _read_raw(path)
    return "\n".join(lines) + "\n"


def _read_raw(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    cursor = len(MAGIC)
    config_pairs: dict[str, str] = {}
    tensors: list[tuple[str, int, int, int, int]] = []
    lines: list[str] = []
    expected_offset = 0
    total = None
    while True:
        newline = blob.find(b"\n", cursor)
        if newline < 0:
            raise CheckpointError(f"{path}: manifest has no end marker")
        line = blob[cursor:newline].decode("utf-8")
        lines.append(line)
        cursor = newline + 1
        if line.startswith("config "):
            body = line[len("config ") :]
            key, sep, value = body.partition("=")
            if not sep:
                raise CheckpointError(f"{path}: malformed config line {line!r}")
            config_pairs[key] = value
        elif line.startswith("tensor "):
            parts = line.split(" ")
            if len(parts) != 6 or parts[3] != "f32":
                raise CheckpointError(f"{path}: malformed tensor line {line!r}")
            name = parts[1]
            try:
                rows, cols = (int(x) for x in parts[2].split("x"))
                offset, length = int(parts[4]), int(parts[5])
            except ValueError:
                raise CheckpointError(f"{path}: malformed tensor line {line!r}") from None
            if offset != expected_offset:
                raise CheckpointError(f"{path}: tensor {name} not contiguous (offset {offset}, expected {expected_offset})")
            if length != rows * cols * 4:
                raise CheckpointError(f"{path}: tensor {name} length {length} != {rows}x{cols} float32")
            tensors.append((name, rows, cols, offset, length))
            expected_offset = offset + length
        elif line.startswith("end "):
            total = int(line[len("end ") :])
            break
        else:
            raise CheckpointError(f"{path}: unexpected manifest line {line!r}")
    if total != expected_offset:
        raise CheckpointError(f"{path}: end marker says {total} bytes, tensors cover {expected_offset}")
    payload = blob[cursor:]
    if len(payload) != total:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest says {total}")
    return config_pairs, tensors, payload, lines


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict[str, str]]:
    """Rebuild parameters (fresh optimizer state) from a checkpoint file."""
    config_pairs, tensors, payload, _ = _read_raw(path)
    config, extras = _parse_config(config_pairs)
    params = init_params(config, seed=0)  # shapes only; every value is overwritten

    by_name = {p.name: p for p in params.trainable()}
    expected = set(by_name)
    seen = set()
    target = None
    for name, rows, cols, offset, length in tensors:
        values = np.frombuffer(payload[offset : offset + length], dtype="<f4").astype(np.float64)
        values = values.reshape(rows, cols)
        if name == _TARGET_NAME:
            target = values
            continue
        if name not in by_name:
            raise CheckpointError(f"{path}: unexpected tensor {name!r} for head {config.head!r}")
        if by_name[name].value.shape != (rows, cols):
            raise CheckpointError(
                f"{path}: tensor {name} has shape {rows}x{cols}, config implies {by_name[name].value.shape}"
            )
        by_name[name].value[...] = values
        by_name[name].reset_optimizer_state()
        seen.add(name)
    missing = expected - seen
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    params.target_embedding = target
    return params, config, extras
