"""Patch archive files: a PatchSet stored in the framed tensor container."""

from __future__ import annotations

import numpy as np

from . import tensorio
from .dsp import PatchSet


def write_patch_archive(path, patches):
    tensors = {
        "lo": patches.lo,
        "hi": patches.hi,
        "file_index": patches.file_index.astype(np.float32),
        "offset": patches.offset.astype(np.float32),
        "meta.patch_length": np.float32(patches.patch_length),
        "meta.sample_rate_hz": np.float32(patches.sample_rate_hz),
        "meta.scale": np.float32(patches.scale),
    }
    tensorio.write_tensors(path, tensors, magic=tensorio.PATCH_MAGIC)


def read_patch_archive(path):
    _, tensors = tensorio.read_tensors(path, magic=tensorio.PATCH_MAGIC)
    for key in ("lo", "hi", "file_index", "offset",
                "meta.patch_length", "meta.sample_rate_hz", "meta.scale"):
        if key not in tensors:
            raise tensorio.ContainerFormatError(f"archive lacks tensor '{key}'")
    return PatchSet(
        lo=tensors["lo"],
        hi=tensors["hi"],
        file_index=tensors["file_index"].astype(np.int64),
        offset=tensors["offset"].astype(np.int64),
        patch_length=int(tensors["meta.patch_length"]),
        sample_rate_hz=int(tensors["meta.sample_rate_hz"]),
        scale=int(tensors["meta.scale"]),
    )


def empty_patch_set(length, rate, scale):
    return PatchSet(lo=np.zeros((0, length), dtype=np.float32),
                    hi=np.zeros((0, length), dtype=np.float32),
                    file_index=np.zeros(0, dtype=np.int64),
                    offset=np.zeros(0, dtype=np.int64),
                    patch_length=length, sample_rate_hz=rate, scale=scale)
