"""Vector file I/O and synthetic dataset generation.

File formats are the standard ANN-benchmark containers: every record is a
4-byte little-endian count d followed by d components (float32 for .fvecs,
uint8 for .bvecs, int32 for .ivecs). All records in a file share one d.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class DatasetFormatError(ValueError):
    pass


_COMPONENT = {".fvecs": ("<f4", 4), ".bvecs": ("u1", 1), ".ivecs": ("<i4", 4)}


def _suffix(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix not in _COMPONENT:
        raise DatasetFormatError(
            f"{path}: unknown extension {suffix!r}, expected one of {sorted(_COMPONENT)}")
    return suffix


def read_vectors(path: str | Path) -> np.ndarray:
    """Parse an .fvecs/.bvecs/.ivecs file; bvecs widen to float32."""
    path = Path(path)
    dtype, comp_size = _COMPONENT[_suffix(path)]
    blob = path.read_bytes()
    if len(blob) < 4:
        raise DatasetFormatError(f"{path}: too short for a dimension field")
    d = struct.unpack_from("<i", blob, 0)[0]
    if d <= 0:
        raise DatasetFormatError(f"{path}: nonpositive dimension {d} at offset 0")
    record = 4 + d * comp_size
    if len(blob) % record:
        raise DatasetFormatError(
            f"{path}: size {len(blob)} not a multiple of record size {record} "
            f"(truncated at record {len(blob) // record}, byte offset "
            f"{(len(blob) // record) * record})")
    n = len(blob) // record
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, record)
    dims = raw[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != d)
    if len(bad):
        raise DatasetFormatError(
            f"{path}: record {int(bad[0])} (byte offset {int(bad[0]) * record}) "
            f"declares dimension {int(dims[bad[0]])}, expected {d}")
    data = raw[:, 4:].copy().view(dtype).reshape(n, d)
    if _suffix(path) == ".bvecs":
        return data.astype(np.float32)
    return data


def write_vectors(path: str | Path, data: np.ndarray) -> None:
    path = Path(path)
    dtype, _ = _COMPONENT[_suffix(path)]
    arr = np.ascontiguousarray(data)
    if _suffix(path) == ".fvecs":
        arr = arr.astype("<f4")
    elif _suffix(path) == ".ivecs":
        arr = arr.astype("<i4")
    else:
        arr = arr.astype("u1")
    n, d = arr.shape
    dims = np.full((n, 1), d, dtype="<i4")
    body = np.hstack([dims.view("u1"), arr.view("u1").reshape(n, -1)])
    path.write_bytes(body.tobytes())


def gen_synthetic(n: int, d: int, dist: str = "gauss-mix", seed: int = 0,
                  components: int = 64, spread: float = 0.25,
                  means_seed: int | None = None) -> np.ndarray:
    """Seeded synthetic vectors.

    ``uniform``: i.i.d. uniform over the unit cube. ``gauss-mix``: a mixture
    of Gaussians with component means uniform in the cube and per-axis
    standard deviation ``spread`` times the mean component gap, which gives
    clusterable structure for the partition model to find.

    ``means_seed`` pins the mixture's component means to another seed while
    ``seed`` still drives memberships and noise: held-out query sets drawn
    this way are fresh samples from the *same* distribution as a dataset,
    the way benchmark query files relate to their base vectors.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    if dist == "uniform":
        return rng.random((n, d), dtype=np.float32)
    if dist == "gauss-mix":
        if means_seed is None:
            means = rng.random((components, d))
        else:
            means_rng = np.random.default_rng(
                np.random.SeedSequence([means_seed, 0xDA7A]))
            means = means_rng.random((components, d))
        sigma = spread * components ** (-1.0 / d)  # mean nearest-center gap scale
        which = rng.integers(components, size=n)
        data = means[which] + sigma * rng.standard_normal((n, d))
        return data.astype(np.float32)
    raise ValueError(f"unknown distribution {dist!r}")
