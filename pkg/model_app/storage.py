"""Model files: a JSON manifest plus a little-endian float32 blob.

The blob holds every parameter block and then every buffer (batch-norm
running statistics, output scaling), each flattened row-major, in the
order the manifest lists them.
"""

import json
import logging
from pathlib import Path

import numpy as np

from app.errors import FormatError
from model_app.builders import build_2dcnn, build_3dcnn, build_miniature_3dcnn
from model_app.layers import Network
from model_app.spec import Network2DSpec, NetworkSpec

logger = logging.getLogger(__name__)

MANIFEST_NAME = "model.json"
BLOB_NAME = "model.bin"
MODEL_FORMAT = "adloc-model"
MODEL_VERSION = 1
_BLOB_DTYPE = np.dtype("<f4")

_BUILDERS = {
    "cnn3d": (NetworkSpec, build_3dcnn),
    "cnn3d-mini": (NetworkSpec, build_miniature_3dcnn),
    "cnn2d": (Network2DSpec, build_2dcnn),
}


def _blocks(net: Network) -> list[tuple[str, str, np.ndarray]]:
    return [("param", k, v) for k, v in net.parameters().items()] + [
        ("buffer", k, v) for k, v in net.buffers().items()
    ]


def encode_model(net: Network, training: dict | None = None) -> tuple[bytes, bytes]:
    """Manifest and blob bytes for *net*, in the layout ``save_model`` writes."""
    entries, chunks, offset = [], [], 0
    for role, name, value in _blocks(net):
        flat = np.ascontiguousarray(value, dtype=_BLOB_DTYPE).reshape(-1)
        entries.append({"role": role, "name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(flat.tobytes())
        offset += flat.size
    manifest = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": net.kind,
        "spec": net.spec.model_dump(mode="json"),
        "input_shape": list(net.input_shape),
        "seed": net.spec.seed,
        "parameter_count": net.parameter_count,
        "layers": [{"name": name, "output_shape": list(shape)} for name, shape in net.layer_shapes],
        "blocks": entries,
        "blob": BLOB_NAME,
        "training": training or {},
    }
    return json.dumps(manifest, indent=2).encode(), b"".join(chunks)


def save_model(net: Network, directory: Path, training: dict | None = None) -> int:
    """Write manifest and blob into *directory*; return the total size in bytes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_bytes, blob = encode_model(net, training)
    (directory / MANIFEST_NAME).write_bytes(manifest_bytes)
    (directory / BLOB_NAME).write_bytes(blob)
    logger.info("Saved %s model (%d parameters) to %s", net.kind, net.parameter_count, directory)
    return len(manifest_bytes) + len(blob)


def load_model(directory: Path) -> Network:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_NAME).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model manifest in {directory}: {exc}") from exc
    if manifest.get("format") != MODEL_FORMAT or manifest.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model format {manifest.get('format')!r} v{manifest.get('version')}")
    if manifest.get("kind") not in _BUILDERS:
        raise FormatError(f"unknown model kind {manifest.get('kind')!r}")

    spec_cls, builder = _BUILDERS[manifest["kind"]]
    try:
        net = builder(spec_cls.model_validate(manifest["spec"]), dtype=np.float32)
    except ValueError as exc:
        raise FormatError(f"invalid model spec: {exc}") from exc

    try:
        raw = (directory / manifest.get("blob", BLOB_NAME)).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read model blob in {directory}: {exc}") from exc
    if len(raw) % _BLOB_DTYPE.itemsize:
        raise FormatError(f"model blob of {len(raw)} bytes is not a float32 array")
    blob = np.frombuffer(raw, dtype=_BLOB_DTYPE)
    params = net.parameters()
    buffers = net.buffers()
    if len(manifest["blocks"]) != len(params) + len(buffers):
        raise FormatError("model manifest does not list the blocks this network expects")

    loaded_buffers = {}
    for entry in manifest["blocks"]:
        shape = tuple(entry["shape"])
        start = entry["offset"]
        stop = start + int(np.prod(shape))
        if stop > blob.size:
            raise FormatError(f"blob too short for block {entry['name']}")
        value = blob[start:stop].reshape(shape).astype(np.float32)
        target = params if entry["role"] == "param" else buffers
        if entry["name"] not in target or target[entry["name"]].shape != shape:
            raise FormatError(f"unexpected block {entry['name']} with shape {shape}")
        if entry["role"] == "param":
            # in place: batch-norm states share these arrays
            params[entry["name"]][...] = value
        else:
            loaded_buffers[entry["name"]] = value
    net.set_buffers(loaded_buffers)
    return net
