"""Versioned JSON dataset files.

Layout::

    {
      "format": "dimenet-dataset",
      "version": 1,
      "header": {"image_size": [W, H], "kc": {"fx":..,"fy":..,"cx":..,"cy":..},
                 "rig": {...}, "rig_hash": "...", "simulator": {...}},
      "frames": [
        {"correspondences": [[x, y, X, Y, Z], ...],      # 3D points in {C0}, mm
         "k_true": {"fx":..,...} | null,
         "noise": {"sigma_2d":..,"sigma_3d":..,"drop_ratio":..,"eta":..} | null},
        ...
      ]
    }

Floats are written with ``repr`` precision (17 significant digits), so
``read_dataset(write_dataset(d))`` reproduces every value bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParseError, VersionMismatch
from .geometry import Correspondences, Intrinsics

DATASET_FORMAT = "dimenet-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True, eq=False)
class FrameRecord:
    corrs: Correspondences
    kc: Intrinsics
    k_true: Intrinsics | None = None
    noise: dict | None = None

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            np.array_equal(self.corrs.pixels, other.corrs.pixels)
            and np.array_equal(self.corrs.points, other.corrs.points)
            and self.kc == other.kc
            and self.k_true == other.k_true
            and self.noise == other.noise
        )


@dataclass(eq=False)
class DatasetFile:
    kc: Intrinsics
    image_size: tuple = (4032, 3024)
    frames: list = field(default_factory=list)
    header_extra: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, DatasetFile):
            return NotImplemented
        return (
            self.kc == other.kc
            and tuple(self.image_size) == tuple(other.image_size)
            and self.header_extra == other.header_extra
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )

    def __len__(self):
        return len(self.frames)


def _k_dict(k: Intrinsics | None):
    return None if k is None else {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}


def _k_from(d):
    return None if d is None else Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


def dataset_from_frames(kc: Intrinsics, frames, image_size=(4032, 3024), header_extra=None) -> DatasetFile:
    """Build a :class:`DatasetFile` from simulator frames (anything with ``corrs``, ``k_true``, ``noise``)."""
    records = []
    for f in frames:
        noise = getattr(f, "noise", None)
        if noise is not None and not isinstance(noise, dict):
            noise = asdict(noise)
        records.append(FrameRecord(f.corrs, kc, getattr(f, "k_true", None), noise))
    return DatasetFile(kc, tuple(image_size), records, dict(header_extra or {}))


def dataset_to_dict(ds: DatasetFile) -> dict:
    header = dict(ds.header_extra)
    header["image_size"] = list(ds.image_size)
    header["kc"] = _k_dict(ds.kc)
    frames = []
    for f in ds.frames:
        rows = np.column_stack([f.corrs.pixels, f.corrs.points]).tolist()
        frames.append({"correspondences": rows, "k_true": _k_dict(f.k_true), "noise": f.noise})
    return {"format": DATASET_FORMAT, "version": DATASET_VERSION, "header": header, "frames": frames}


def dataset_from_dict(d: dict) -> DatasetFile:
    if not isinstance(d, dict) or d.get("format") != DATASET_FORMAT:
        raise ParseError("not a dataset file")
    if d.get("version") != DATASET_VERSION:
        raise VersionMismatch(f"dataset version {d.get('version')!r}, expected {DATASET_VERSION}")
    header = dict(d.get("header") or {})
    if header.get("kc") is None:
        raise ParseError("header is missing K_c")
    kc = _k_from(header.pop("kc"))
    image_size = tuple(header.pop("image_size", (4032, 3024)))
    frames = []
    for i, fr in enumerate(d.get("frames") or []):
        rows = np.asarray(fr.get("correspondences", []), dtype=float)
        if rows.ndim != 2 or rows.shape[1] != 5 or len(rows) < 1:
            raise ParseError(f"frame {i}: correspondences must be a non-empty list of [x, y, X, Y, Z]")
        frames.append(FrameRecord(Correspondences(rows[:, :2], rows[:, 2:]), kc, _k_from(fr.get("k_true")), fr.get("noise")))
    return DatasetFile(kc, image_size, frames, header)


def write_dataset(ds: DatasetFile, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(ds), fh, indent=None)
        fh.write("\n")


def read_dataset(path) -> DatasetFile:
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    return dataset_from_dict(d)
