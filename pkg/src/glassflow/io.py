"""Container files: a JSON manifest followed by raw little-endian array payloads.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"GLSFLOW\\0"
    offset 8   8 bytes   uint64 manifest length L
    offset 16  L bytes   manifest, UTF-8 JSON, keys sorted, no whitespace
    offset 16+L          payload: the arrays listed in manifest["arrays"],
                         in order, C-contiguous, each with the declared dtype
                         ("<f8" float64 or "|i1" int8) and shape

The same container holds disorder instances (``kind = "disorder"``), sample
sets (``"sampleset"``) and flow checkpoints (``"flow"``). Writing is
deterministic, so write -> read -> write reproduces the file byte for byte.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import DisorderRealization
from .flow import FORMAT_VERSION, CouplingLayer, FlowModel, Mlp
from .sampler import SampleSet

MAGIC = b"GLSFLOW\x00"
VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "|i1": np.dtype("i1")}


class FormatError(ValueError):
    pass


def _encode(manifest, arrays):
    specs = []
    chunks = []
    for name, arr in arrays:
        dt = "|i1" if arr.dtype == np.int8 else "<f8"
        a = np.ascontiguousarray(arr, dtype=_DTYPES[dt])
        specs.append({"name": name, "dtype": dt, "shape": list(a.shape)})
        chunks.append(a.tobytes())
    manifest = dict(manifest, arrays=specs, version=VERSION)
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def _decode(blob):
    if blob[:8] != MAGIC:
        raise FormatError("not a glassflow container (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    manifest = json.loads(blob[16:16 + n].decode())
    if manifest.get("version") != VERSION:
        raise FormatError(f"unsupported container version {manifest.get('version')}")
    offset = 16 + n
    arrays = {}
    for entry in manifest["arrays"]:
        dt = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        size = count * dt.itemsize
        if offset + size > len(blob):
            raise FormatError("payload is truncated")
        arrays[entry["name"]] = np.frombuffer(blob, dt, count, offset).reshape(entry["shape"]).copy()
        offset += size
    if offset != len(blob):
        raise FormatError("trailing bytes after payload")
    return manifest, arrays


def write_container(path, manifest, arrays):
    Path(path).write_bytes(_encode(manifest, arrays))


def read_container(path, kind=None):
    manifest, arrays = _decode(Path(path).read_bytes())
    if kind is not None and manifest.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} file, found {manifest.get('kind')!r}")
    return manifest, arrays


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def disorder_bytes(d, epsilon):
    manifest = {"kind": "disorder", "N": d.n_spins, "scale": d.scale, "seed": d.seed,
                "epsilon": float(epsilon), "format": "f64le", "disorder_id": d.disorder_id}
    return _encode(manifest, [("J", d.couplings), ("h", d.fields)])


def save_disorder(path, d, epsilon=0.01):
    Path(path).write_bytes(disorder_bytes(d, epsilon))


def load_disorder(path):
    """Returns ``(DisorderRealization, epsilon)``."""
    m, a = read_container(path, "disorder")
    d = DisorderRealization(m["N"], a["J"], a["h"], m["scale"], m["seed"])
    return d, m["epsilon"]


def sampleset_bytes(ss):
    meta = dict(ss.metadata)
    manifest = {
        "kind": "sampleset",
        "disorder_id": ss.disorder_id,
        "beta": ss.beta,
        "M": ss.n_samples,
        "N": ss.n_spins,
        "has_xs": ss.xs is not None,
        "seed": meta.pop("seed", None),
        "sweeps": meta.pop("sweeps_per_sample", 1),
        "burn_in": meta.pop("burn_in", 0),
        "extra": meta,
    }
    arrays = [("spins", ss.spins)]
    if ss.xs is not None:
        arrays.append(("xs", ss.xs))
    return _encode(manifest, arrays)


def save_sampleset(path, ss):
    Path(path).write_bytes(sampleset_bytes(ss))


def load_sampleset(path):
    m, a = read_container(path, "sampleset")
    meta = dict(m.get("extra", {}), seed=m["seed"], sweeps_per_sample=m["sweeps"],
                burn_in=m["burn_in"])
    return SampleSet(m["disorder_id"], m["beta"], a["spins"], a.get("xs"), meta)


def flow_bytes(model):
    first = model.layers[0]
    manifest = {
        "kind": "flow",
        "format_version": FORMAT_VERSION,
        "N": model.n_spins,
        "L": model.n_layers,
        "masks": ["".join("1" if b else "0" for b in layer.active_mask) for layer in model.layers],
        "layer_dims": first.s_net.layer_dims,
        "activations": {"hidden": "leaky_relu", "slope": first.s_net.slope,
                        "s_final": "tanh", "t_final": "identity"},
        "seed": model.seed,
        "training": model.metadata,
    }
    arrays = []
    for k, layer in enumerate(model.layers):
        for tag, net in (("s", layer.s_net), ("t", layer.t_net)):
            for j, (W, b) in enumerate(zip(net.weights, net.biases)):
                arrays.append((f"l{k}.{tag}.W{j}", W))
                arrays.append((f"l{k}.{tag}.b{j}", b))
    return _encode(manifest, arrays)


def save_flow(path, model):
    Path(path).write_bytes(flow_bytes(model))


def load_flow(path):
    m, a = read_container(path, "flow")
    slope = m["activations"]["slope"]
    n_weights = len(m["layer_dims"]) - 1
    layers = []
    for k, bits in enumerate(m["masks"]):
        mask = np.array([c == "1" for c in bits])
        nets = []
        for tag, final in (("s", "tanh"), ("t", "identity")):
            Ws = [a[f"l{k}.{tag}.W{j}"] for j in range(n_weights)]
            bs = [a[f"l{k}.{tag}.b{j}"] for j in range(n_weights)]
            nets.append(Mlp(Ws, bs, final, slope))
        layers.append(CouplingLayer(mask, *nets))
    return FlowModel(m["N"], layers, seed=m["seed"], metadata=m["training"])
