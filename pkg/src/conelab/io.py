"""CLF1 raster files, JSON sidecars and dataset directories.

A CLF1 file is the 8-byte magic ``CLF1RAST``, two little-endian ``u32``
(rows, cols) and ``rows * cols`` little-endian float64 values in row-major
order. Metadata lives next to it in ``<basename>.json``.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .phantoms import Dataset, Scene
from .radon import AngleSet, Sinogram

MAGIC = b"CLF1RAST"
_HEADER = struct.Struct("<8sII")
SUFFIX = ".clf"
MANIFEST = "manifest.json"
FOV = [-1.0, 1.0]


class RasterFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_raster(path, values, meta: dict | None = None) -> None:
    arr = np.ascontiguousarray(values, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError("raster must be two-dimensional")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols))
        fh.write(arr.tobytes(order="C"))
    if meta is not None:
        dump_json(meta, sidecar_path(path))


def read_raster(path):
    """Return ``(values, meta)``; ``meta`` is ``{}`` when no sidecar exists."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"{path}: file shorter than the CLF1 header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise RasterFormatError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise RasterFormatError(f"{side}: invalid JSON ({exc})") from exc
        if not isinstance(meta, dict):
            raise RasterFormatError(f"{side}: sidecar must be a JSON object")
    return values.astype(np.float64), meta


def write_image(path, img, seed=None, **extra) -> None:
    meta = {"kind": "image", "n": int(img.shape[0]), "fov": FOV}
    if seed is not None:
        meta["seed"] = int(seed)
    meta.update(extra)
    write_raster(path, img, meta)


def read_image(path) -> np.ndarray:
    values, meta = read_raster(path)
    if meta.get("kind", "image") != "image":
        raise RasterFormatError(f"{path}: sidecar kind is {meta.get('kind')!r}, not image")
    if values.shape[0] != values.shape[1]:
        raise RasterFormatError(f"{path}: image must be square, got {values.shape}")
    return values


def write_sinogram(path, sino: Sinogram, seed=None, **extra) -> None:
    meta = {"kind": "sinogram", "np": sino.n_p, "ntheta": sino.angles.n_theta,
            "delta_deg": math.degrees(sino.angles.delta), "fov": FOV}
    if seed is not None:
        meta["seed"] = int(seed)
    meta.update(extra)
    write_raster(path, sino.values, meta)


def read_sinogram(path) -> Sinogram:
    values, meta = read_raster(path)
    if meta.get("kind") != "sinogram":
        raise RasterFormatError(f"{path}: sidecar does not describe a sinogram")
    try:
        delta_deg = float(meta["delta_deg"])
        ntheta = int(meta["ntheta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RasterFormatError(f"{path}: sidecar lacks delta_deg/ntheta") from exc
    if values.shape != (int(meta.get("np", values.shape[0])), ntheta):
        raise RasterFormatError(f"{path}: shape {values.shape} disagrees with sidecar")
    return Sinogram(values, AngleSet(math.radians(delta_deg), ntheta))


def image_name(index: int) -> str:
    return f"img_{index:05d}{SUFFIX}"


def save_dataset(ds: Dataset, directory) -> list:
    """Write every image as CLF1 plus ``manifest.json``; return the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(ds.images):
        p = d / image_name(i)
        write_image(p, img, seed=ds.seed, index=i)
        paths.append(p)
    manifest = {"seed": ds.seed, "count": len(ds), "n": ds.n, "params": ds.params,
                "files": [p.name for p in paths],
                "scenes": [s.to_dict() for s in ds.scenes] if ds.scenes else []}
    dump_json(manifest, d / MANIFEST)
    return paths


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    mpath = d / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath} not found")
    try:
        manifest = json.loads(mpath.read_text())
        files = manifest["files"]
        seed = manifest.get("seed")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise RasterFormatError(f"{mpath}: malformed manifest") from exc
    images = [read_image(d / f) for f in files]
    if not images:
        raise RasterFormatError(f"{mpath}: dataset is empty")
    if len({img.shape for img in images}) != 1:
        raise RasterFormatError(f"{mpath}: images differ in size")
    scenes = [Scene.from_dict(s) for s in manifest.get("scenes") or []]
    if scenes and len(scenes) != len(images):
        raise RasterFormatError(f"{mpath}: scene count does not match image count")
    return Dataset(images, scenes, seed, manifest.get("params", {}))
