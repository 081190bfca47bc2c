"""Tensor file format.

A file is two ASCII lines::

    {"ensemble":...,"format_version":1,"kind":"components","m":...,"n":...,"noise_norm":...,"seed":...}
    <base64 of little-endian float64 values>

The header is compact JSON with sorted keys.  The blob holds the row-major
m x n component matrix, followed, for noisy component files
(``noise_norm > 0``), by the n^3 noise entries in lexicographic (i, j, k)
order.  Dense files hold the n^3 entries of the tensor itself and carry
``m``, ``ensemble`` and ``seed`` as null unless known.
"""

from __future__ import annotations

import base64
import binascii
import json
from pathlib import Path

import numpy as np

from .tensor import ENSEMBLES, ComponentSet, SymmetricTensor3, from_components, from_dense, with_noise

FORMAT_VERSION = 1
HEADER_FIELDS = ("ensemble", "format_version", "kind", "m", "n", "noise_norm", "seed")
_LE = np.dtype("<f8")


class TensorFileError(ValueError):
    """Malformed tensor file; ``field`` names the offending header field when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"header field {field!r}: {message}")
        self.field = field


def _encode(values: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(values, dtype=_LE).tobytes()).decode("ascii")


def _header_text(header: dict) -> str:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps(tensor: SymmetricTensor3) -> str:
    if tensor.components is not None:
        comp = tensor.components
        noise_norm = tensor.noise_norm if tensor.noise is not None else 0.0
        if tensor.noise is not None and not noise_norm > 0:
            raise ValueError("a noisy component tensor needs a positive noise_norm")
        parts = [comp.vectors.ravel()]
        if tensor.noise is not None:
            parts.append(tensor.noise.ravel())
        header = {
            "format_version": FORMAT_VERSION, "kind": "components", "n": comp.n, "m": comp.m,
            "ensemble": comp.ensemble, "seed": comp.seed, "noise_norm": float(noise_norm),
        }
        blob = np.concatenate(parts)
    else:
        header = {
            "format_version": FORMAT_VERSION, "kind": "dense", "n": tensor.n, "m": None,
            "ensemble": None, "seed": None, "noise_norm": 0.0,
        }
        blob = tensor.dense.ravel()
    return _header_text(header) + "\n" + _encode(blob) + "\n"


def _field(header: dict, name: str, kinds, allow_none: bool = False):
    if name not in header:
        raise TensorFileError("missing", name)
    value = header[name]
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise TensorFileError(f"unexpected value {value!r}", name)
    return value


def loads(text: str) -> SymmetricTensor3:
    lines = text.split("\n")
    if len(lines) != 3 or lines[2] != "":
        raise TensorFileError("expected a header line and a data line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"header is not valid JSON ({exc.msg})") from None
    if not isinstance(header, dict):
        raise TensorFileError("header must be a JSON object")
    unknown = sorted(set(header) - set(HEADER_FIELDS))
    if unknown:
        raise TensorFileError("unknown field", unknown[0])
    version = _field(header, "format_version", int)
    if version != FORMAT_VERSION:
        raise TensorFileError(f"unsupported version {version}", "format_version")
    kind = _field(header, "kind", str)
    if kind not in ("components", "dense"):
        raise TensorFileError(f"unknown kind {kind!r}", "kind")
    n = _field(header, "n", int)
    if n < 1:
        raise TensorFileError("must be positive", "n")
    noise_norm = _field(header, "noise_norm", (int, float))
    if noise_norm < 0:
        raise TensorFileError("must be non-negative", "noise_norm")
    try:
        raw = base64.b64decode(lines[1].encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError):
        raise TensorFileError("data line is not valid base64") from None
    if len(raw) % 8:
        raise TensorFileError("data length is not a multiple of 8 bytes")
    values = np.frombuffer(raw, dtype=_LE).astype(np.float64)

    if kind == "dense":
        for name in ("m", "ensemble", "seed"):
            _field(header, name, (int, str), allow_none=True)
        if values.size != n**3:
            raise TensorFileError(f"dense data has {values.size} values, expected n^3 = {n**3}", "n")
        return from_dense(values.reshape(n, n, n))

    m = _field(header, "m", int)
    if m < 1:
        raise TensorFileError("must be positive", "m")
    ensemble = _field(header, "ensemble", str, allow_none=True)
    if ensemble is not None and ensemble not in ENSEMBLES:
        raise TensorFileError(f"unknown ensemble {ensemble!r}", "ensemble")
    seed = _field(header, "seed", int, allow_none=True)
    expected = m * n + (n**3 if noise_norm > 0 else 0)
    if values.size != expected:
        raise TensorFileError(f"data has {values.size} values, expected {expected}", "m")
    comp = ComponentSet(values[: m * n].reshape(m, n), ensemble=ensemble, seed=seed)
    tensor = from_components(comp)
    if noise_norm > 0:
        tensor = with_noise(tensor, values[m * n:].reshape(n, n, n), noise_norm=float(noise_norm))
    return tensor


def header_of(text: str) -> dict:
    return json.loads(text.split("\n", 1)[0])


def save(path, tensor: SymmetricTensor3) -> None:
    Path(path).write_text(dumps(tensor), encoding="ascii")


def load(path) -> SymmetricTensor3:
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError:
        raise TensorFileError("file is not ASCII") from None
    return loads(text)


def load_with_header(path) -> tuple[SymmetricTensor3, dict]:
    text = Path(path).read_text(encoding="ascii")
    return loads(text), header_of(text)
