"""
On-disk formats: BCTN tensors, dataset directories and model checkpoints.

BCTN is little-endian: the magic ``b"BCTN"``, a u32 rank, u64 dimensions and
then float64 values in row-major order. Complex arrays are written as real
arrays with a trailing dimension of 2 (real, imaginary).
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from ai_engine.optimizer import AdamState
from models.channel import PathComponent, PathKind
from models.dataset import Dataset, Sample, SplitTag
from models.errors import DataIntegrityError
from models.scene import VehiclePose

logger = logging.getLogger(__name__)

MAGIC = b"BCTN"
MANIFEST = "manifest.json"
SAMPLES = "samples.bin"
PATHS = "paths.csv"
PATH_COLUMNS = ["sample", "kind", "bounces", "attenuation", "delay", "phase", "azimuth", "elevation"]


# ---------------------------------------------------------------------------
# BCTN tensors
# ---------------------------------------------------------------------------

def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if np.iscomplexobj(array):
        array = np.stack([array.real, array.imag], axis=-1)
    array = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + array.tobytes()


def decode_tensor(blob: bytes, complex_values: bool = False) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise DataIntegrityError(f"not a BCTN tensor (magic {blob[:4]!r})")
    if len(blob) < 8:
        raise DataIntegrityError(f"BCTN header is truncated ({len(blob)} bytes)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8 + 8 * rank
    if len(blob) < offset:
        raise DataIntegrityError("BCTN header is truncated")
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    expected = offset + 8 * int(np.prod(shape, dtype=np.int64))
    if len(blob) != expected:
        raise DataIntegrityError(f"BCTN payload has {len(blob)} bytes, header implies {expected}")
    array = np.frombuffer(blob, dtype="<f8", offset=offset).reshape(shape).astype(np.float64)
    if complex_values:
        if rank == 0 or shape[-1] != 2:
            raise DataIntegrityError(f"complex tensor needs a trailing dimension of 2, got {shape}")
        return array[..., 0] + 1j * array[..., 1]
    return array


def write_tensor(path: Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Path, complex_values: bool = False) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), complex_values)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def sample_dtype(view_shape) -> np.dtype:
    """Packed record: pose (x, y, z, heading), depth views, label, split tag."""
    return np.dtype([
        ("pose", "<f8", (4,)),
        ("views", "<f4", tuple(view_shape)),
        ("label", "<u2"),
        ("split", "u1"),
    ])


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _paths_frame(ds: Dataset) -> pd.DataFrame:
    rows = [
        {
            "sample": i, "kind": p.kind.value, "bounces": p.bounces,
            "attenuation": p.attenuation, "delay": p.delay, "phase": p.phase,
            "azimuth": p.azimuth, "elevation": p.elevation,
        }
        for i, sample in enumerate(ds.samples) for p in sample.paths
    ]
    return pd.DataFrame(rows, columns=PATH_COLUMNS)


def save_dataset(ds: Dataset, directory: Path) -> Path:
    """
    Write ``manifest.json``, ``samples.bin`` and ``paths.csv`` into ``directory``.

    The manifest records the record size and a sha256 of ``samples.bin`` so
    that loading can detect truncation or corruption.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    view_shape = ds.samples[0].views.shape if ds.samples else tuple(ds.manifest.get("view_shape", (6, 32, 32)))
    dtype = sample_dtype(view_shape)
    records = np.zeros(len(ds), dtype=dtype)
    if ds.samples:
        records["pose"] = np.stack([s.pose.as_array() for s in ds.samples])
        records["views"] = np.stack([s.views for s in ds.samples])
        records["label"] = ds.labels()
        records["split"] = [int(s.split) for s in ds.samples]
    samples_path = directory / SAMPLES
    samples_path.write_bytes(records.tobytes())
    _paths_frame(ds).to_csv(directory / PATHS, index=False)

    manifest = dict(ds.manifest)
    manifest.update({
        "format": "beamsight-dataset",
        "n_samples": len(ds),
        "view_shape": list(view_shape),
        "record_size": dtype.itemsize,
        "samples_sha256": _sha256(samples_path),
        "split_counts": ds.split_counts(),
    })
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("Wrote %d samples to %s", len(ds), directory)
    return directory


def _read_manifest(directory: Path) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as e:
        raise DataIntegrityError(f"{directory} has no {MANIFEST}") from e
    except json.JSONDecodeError as e:
        raise DataIntegrityError(f"{path} is not valid JSON: {e}") from e


def _read_paths(directory: Path, n_samples: int):
    grouped = [[] for _ in range(n_samples)]
    path = Path(directory) / PATHS
    if not path.exists():
        return grouped
    frame = pd.read_csv(path, float_precision="round_trip")
    for row in frame.itertuples(index=False):
        grouped[int(row.sample)].append(PathComponent(
            attenuation=float(row.attenuation), delay=float(row.delay), phase=float(row.phase),
            azimuth=float(row.azimuth), elevation=float(row.elevation),
            bounces=int(row.bounces), kind=PathKind(row.kind),
        ))
    return grouped


def load_dataset(directory: Path, verify: bool = True) -> Dataset:
    """
    Read a dataset directory written by ``save_dataset``.

    Raises:
        DataIntegrityError: missing files, size mismatch or checksum mismatch
    """
    directory = Path(directory)
    manifest = _read_manifest(directory)
    if manifest.get("format") != "beamsight-dataset":
        raise DataIntegrityError(f"{directory} does not hold a dataset manifest")
    dtype = sample_dtype(manifest["view_shape"])
    samples_path = directory / SAMPLES
    if not samples_path.exists():
        raise DataIntegrityError(f"{directory} has no {SAMPLES}")
    blob = samples_path.read_bytes()
    expected = manifest["n_samples"] * dtype.itemsize
    if len(blob) != expected:
        raise DataIntegrityError(
            f"{SAMPLES} has {len(blob)} bytes, manifest expects {expected} ({manifest['n_samples']} records)"
        )
    if verify and hashlib.sha256(blob).hexdigest() != manifest.get("samples_sha256"):
        raise DataIntegrityError(f"{SAMPLES} checksum does not match the manifest")

    records = np.frombuffer(blob, dtype=dtype)
    codebook_size = manifest.get("codebook_size", 64)
    paths = _read_paths(directory, len(records))
    samples = []
    for i, record in enumerate(records):
        label = int(record["label"])
        if label >= codebook_size:
            raise DataIntegrityError(f"sample {i} has label {label} outside a codebook of {codebook_size}")
        pose = record["pose"].astype(np.float64)
        samples.append(Sample(
            pose=VehiclePose(position=pose[:3].copy(), heading=float(pose[3])),
            views=np.array(record["views"], dtype=np.float32),
            label=label,
            paths=paths[i],
            split=SplitTag(int(record["split"])),
        ))
    return Dataset(samples=samples, manifest=manifest)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Model tensors plus everything needed to rebuild and resume."""
    manifest: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    adam: Optional[AdamState] = None


def _safe(name: str) -> str:
    return name.replace("/", "_") + ".bctn"


def save_checkpoint(
    directory: Path,
    tensors: Dict[str, np.ndarray],
    manifest: Dict[str, Any],
    buffers: Optional[Dict[str, np.ndarray]] = None,
    adam: Optional[AdamState] = None,
) -> Path:
    """
    Write one BCTN file per tensor under ``params/`` (and ``buffers/``,
    ``adam/m``, ``adam/v``) with a JSON manifest listing names and shapes.
    """
    directory = Path(directory)
    for sub in ("params", "buffers", "adam/m", "adam/v"):
        (directory / sub).mkdir(parents=True, exist_ok=True)
    for name, value in tensors.items():
        write_tensor(directory / "params" / _safe(name), value)
    for name, value in (buffers or {}).items():
        write_tensor(directory / "buffers" / _safe(name), value)

    manifest = dict(manifest)
    manifest["format"] = "beamsight-checkpoint"
    manifest["params"] = {name: list(np.shape(v)) for name, v in tensors.items()}
    manifest["buffers"] = {name: list(np.shape(v)) for name, v in (buffers or {}).items()}
    if adam is not None:
        for name, value in adam.m.items():
            write_tensor(directory / "adam" / "m" / _safe(name), value)
        for name, value in adam.v.items():
            write_tensor(directory / "adam" / "v" / _safe(name), value)
        manifest["adam"] = {
            "learning_rate": adam.learning_rate, "beta1": adam.beta1, "beta2": adam.beta2,
            "epsilon": adam.epsilon, "step": adam.step, "names": sorted(adam.m),
        }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def _read_named(directory: Path, names) -> Dict[str, np.ndarray]:
    out = {}
    for name in names:
        path = directory / _safe(name)
        if not path.exists():
            raise DataIntegrityError(f"checkpoint is missing tensor {name}")
        out[name] = read_tensor(path)
    return out


def load_checkpoint(directory: Path) -> Checkpoint:
    """Read a checkpoint directory and validate tensor shapes against its manifest."""
    directory = Path(directory)
    manifest = _read_manifest(directory)
    if manifest.get("format") != "beamsight-checkpoint":
        raise DataIntegrityError(f"{directory} does not hold a checkpoint manifest")
    tensors = _read_named(directory / "params", manifest["params"])
    for name, shape in manifest["params"].items():
        if list(tensors[name].shape) != list(shape):
            raise DataIntegrityError(f"tensor {name} has shape {tensors[name].shape}, manifest says {shape}")
    buffers = _read_named(directory / "buffers", manifest.get("buffers", {}))

    adam = None
    if "adam" in manifest:
        info = manifest["adam"]
        adam = AdamState(
            learning_rate=info["learning_rate"], beta1=info["beta1"], beta2=info["beta2"],
            epsilon=info["epsilon"], step=info["step"],
            m=_read_named(directory / "adam" / "m", info["names"]),
            v=_read_named(directory / "adam" / "v", info["names"]),
        )
    return Checkpoint(manifest=manifest, tensors=tensors, buffers=buffers, adam=adam)


def parameter_inventory(checkpoint: Checkpoint) -> pd.DataFrame:
    """One row per tensor: name, shape, size, trainable flag and L2 norm."""
    trainable = set(checkpoint.manifest.get("trainable", []))
    rows = [
        {
            "name": name, "shape": "x".join(str(d) for d in value.shape) or "scalar",
            "size": int(value.size), "trainable": name in trainable,
            "norm": float(np.linalg.norm(value)),
        }
        for name, value in checkpoint.tensors.items()
    ]
    return pd.DataFrame(rows, columns=["name", "shape", "size", "trainable", "norm"])


def artifact_kind(path: Path) -> str:
    """'dataset', 'checkpoint' or 'tensor'; anything else is an integrity error."""
    path = Path(path)
    if path.is_dir():
        kind = _read_manifest(path).get("format")
        if kind == "beamsight-dataset":
            return "dataset"
        if kind == "beamsight-checkpoint":
            return "checkpoint"
        raise DataIntegrityError(f"{path} has an unrecognized manifest format {kind!r}")
    try:
        with open(path, "rb") as handle:
            magic = handle.read(4)
    except OSError as e:
        raise DataIntegrityError(f"cannot read {path}: {e}") from e
    if magic == MAGIC:
        return "tensor"
    raise DataIntegrityError(f"{path} has unknown file magic {magic!r}")
