"""PSS1 binary snapshots.

Layout (little endian)::

    b"PSS1"  u32 dim  u8 kind
    kind 0 (ensemble): u64 n, n*d f64 positions, n*d f64 velocities, n f64 weights
    kind 1 (field):    d * u32 cells, u32 components, row-major f64 values

Complex fields are stored as fields with interleaved real/imaginary
components: ``(re_0, im_0, re_1, im_1, ...)``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import GriddedField, ParticleEnsemble, SpectralField, TorusGrid, inverse_transform

MAGIC = b"PSS1"
KIND_ENSEMBLE = 0
KIND_FIELD = 1


class SnapshotError(ValueError):
    pass


def encode_ensemble(ens: ParticleEnsemble) -> bytes:
    head = MAGIC + struct.pack("<IBQ", ens.dim, KIND_ENSEMBLE, ens.n)
    body = (
        np.ascontiguousarray(ens.positions, dtype="<f8").tobytes()
        + np.ascontiguousarray(ens.velocities, dtype="<f8").tobytes()
        + np.ascontiguousarray(ens.weights, dtype="<f8").tobytes()
    )
    return head + body


def encode_field(values: np.ndarray, grid: TorusGrid) -> bytes:
    values = np.asarray(values)
    if values.ndim == grid.dim:
        values = values[None]
    if np.iscomplexobj(values):
        inter = np.empty((2 * values.shape[0],) + values.shape[1:])
        inter[0::2] = values.real
        inter[1::2] = values.imag
        values = inter
    head = MAGIC + struct.pack("<IB", grid.dim, KIND_FIELD)
    head += struct.pack("<" + "I" * grid.dim, *grid.cells)
    head += struct.pack("<I", values.shape[0])
    return head + np.ascontiguousarray(values, dtype="<f8").tobytes()


def decode(data: bytes):
    """Decode a PSS1 payload into a ParticleEnsemble or a GriddedField."""
    if len(data) < 9 or data[:4] != MAGIC:
        raise SnapshotError("not a PSS1 snapshot")
    dim, kind = struct.unpack_from("<IB", data, 4)
    off = 9
    if dim not in (1, 2, 3):
        raise SnapshotError(f"bad dimension {dim}")
    if kind == KIND_ENSEMBLE:
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        need = off + 8 * (2 * n * dim + n)
        if len(data) != need:
            raise SnapshotError(f"truncated ensemble payload ({len(data)} != {need} bytes)")
        arr = np.frombuffer(data, dtype="<f8", offset=off)
        x = arr[: n * dim].reshape(n, dim)
        v = arr[n * dim : 2 * n * dim].reshape(n, dim)
        w = arr[2 * n * dim :]
        return ParticleEnsemble(x, v, w)
    if kind == KIND_FIELD:
        cells = struct.unpack_from("<" + "I" * dim, data, off)
        off += 4 * dim
        (ncomp,) = struct.unpack_from("<I", data, off)
        off += 4
        grid = TorusGrid(dim, tuple(int(c) for c in cells))
        need = off + 8 * ncomp * grid.n_cells
        if len(data) != need:
            raise SnapshotError(f"truncated field payload ({len(data)} != {need} bytes)")
        vals = np.frombuffer(data, dtype="<f8", offset=off).reshape((ncomp,) + grid.shape)
        return GriddedField(grid, vals.copy())
    raise SnapshotError(f"unknown kind {kind}")


def write(path, obj) -> Path:
    """Write an ensemble, gridded field or spectral field (stored in real space)."""
    path = Path(path)
    if isinstance(obj, ParticleEnsemble):
        data = encode_ensemble(obj)
    elif isinstance(obj, GriddedField):
        data = encode_field(obj.values, obj.grid)
    elif isinstance(obj, SpectralField):
        data = encode_field(inverse_transform(obj, real=False).values, obj.grid)
    else:
        raise TypeError(f"cannot snapshot {type(obj).__name__}")
    path.write_bytes(data)
    return path


def read(path):
    return decode(Path(path).read_bytes())


def as_complex(field: GriddedField) -> np.ndarray:
    """Undo the real/imaginary interleaving of a complex snapshot."""
    v = field.values
    if v.shape[0] % 2:
        raise SnapshotError("complex snapshots need an even component count")
    return v[0::2] + 1j * v[1::2]
