"""Paired residual-stream snapshot container.

A dataset holds, for each layer transition, two d-by-N matrices (X, Y)
whose columns are paired: column i of Y is the next-layer state of the
same input sample as column i of X. Columns index independent samples,
not time steps. Stream-mode datasets store the full state sequence
h_0..h_L as L+1 matrices and expose (X_l, Y_l) = (h_l, h_{l+1}) as
views, which makes the cross-layer pairing structural and halves the
file size.

Binary container layout (little-endian, 32-byte header, no padding):

    offset  size  field
    0       4     magic "RKSP"
    4       4     format version (u32, currently 1)
    8       4     flags (u32; bit 0 set = stream mode, L+1 matrices)
    12      4     L (u32, number of layer pairs)
    16      4     d (u32, hidden dimension)
    20      4     N (u32, sample count)
    24      1     dtype (u8; 0 = f32, 1 = f64)
    25      7     reserved (zero)
    32      ...   matrices in layer order, column-major, no padding
                  (stream mode: h_0..h_L; pair mode: X_0, Y_0, X_1, Y_1, ...)

f32 payloads are accepted on disk but promoted to f64 in memory, and
f32 datasets are quantized at construction time so that write/load is
bit-exact at the declared precision.

Column subsampling uses numpy's PCG64 generator: indices are drawn with
``default_rng(seed).choice(N, size=n, replace=False)`` and then sorted,
so n = N reproduces the dataset unchanged and the same index set is
applied to every layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    IoFailure,
    MalformedHeader,
    NonFiniteData,
    NTooLarge,
    ProfileRequiresLayers,
    ShapeMismatch,
)

MAGIC = b"RKSP"
FORMAT_VERSION = 1
FLAG_STREAM = 0x1

_HEADER = struct.Struct("<4sIIIIIB7x")
_DTYPE_CODE = {"f32": 0, "f64": 1}
_CODE_DTYPE = {0: np.float32, 1: np.float64}

FORMAT_DESCRIPTION = __doc__


@dataclass
class SnapshotDataset:
    """Validated collection of paired per-layer snapshot matrices.

    ``matrices`` holds L+1 stream matrices when ``stream`` is true,
    otherwise 2L matrices interleaved as X_0, Y_0, X_1, Y_1, ...
    All matrices are float64 in memory regardless of the declared
    on-disk precision.
    """

    layer_count: int
    hidden_dim: int
    sample_count: int
    matrices: list[np.ndarray]
    stream: bool = True
    precision: str = "f64"
    source_tag: str = ""

    def __post_init__(self):
        self.validate()

    # -- construction --------------------------------------------------

    @classmethod
    def from_stream(cls, states, precision: str = "f64", source_tag: str = "") -> "SnapshotDataset":
        """Build a stream-mode dataset from the state sequence h_0..h_L."""
        mats = [np.asarray(m, dtype=np.float64) for m in states]
        if len(mats) < 2:
            raise ProfileRequiresLayers("stream dataset needs at least two state matrices")
        d, n = mats[0].shape
        return cls(len(mats) - 1, d, n, mats, stream=True,
                   precision=precision, source_tag=source_tag)

    @classmethod
    def from_pairs(cls, pairs, precision: str = "f64", source_tag: str = "") -> "SnapshotDataset":
        """Build a pair-mode dataset from an iterable of (X, Y) matrices."""
        mats: list[np.ndarray] = []
        for x, y in pairs:
            mats.append(np.asarray(x, dtype=np.float64))
            mats.append(np.asarray(y, dtype=np.float64))
        if not mats:
            raise ProfileRequiresLayers("dataset needs at least one layer pair")
        d, n = mats[0].shape
        return cls(len(mats) // 2, d, n, mats, stream=False,
                   precision=precision, source_tag=source_tag)

    # -- validation ------------------------------------------------------

    def validate(self):
        if self.layer_count < 1:
            raise ProfileRequiresLayers("dataset declares zero layer pairs")
        if self.hidden_dim < 1 or self.sample_count < 1:
            raise ShapeMismatch(
                f"dims must be positive, got d={self.hidden_dim}, N={self.sample_count}")
        if self.precision not in _DTYPE_CODE:
            raise ShapeMismatch(f"unknown precision {self.precision!r}")
        expected = self.layer_count + 1 if self.stream else 2 * self.layer_count
        if len(self.matrices) != expected:
            raise ShapeMismatch(
                f"expected {expected} matrices, got {len(self.matrices)}")
        shape = (self.hidden_dim, self.sample_count)
        for i, mat in enumerate(self.matrices):
            mat = np.asarray(mat, dtype=np.float64)
            if mat.shape != shape:
                raise ShapeMismatch(
                    f"matrix {i} has shape {mat.shape}, expected {shape}")
            if self.precision == "f32":
                # quantize so that disk round-trips are bit-exact
                mat = mat.astype(np.float32).astype(np.float64)
            self.matrices[i] = mat
        for i, mat in enumerate(self.matrices):
            finite_cols = np.isfinite(mat).all(axis=0)
            if not finite_cols.all():
                col = int(np.argmin(finite_cols))
                raise NonFiniteData(layer=self._matrix_layer(i), column=col)

    def _matrix_layer(self, index: int) -> int:
        if self.stream:
            return min(index, self.layer_count - 1)
        return index // 2

    # -- access ----------------------------------------------------------

    def layer_pair(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Return the (X, Y) matrices of one layer transition (views)."""
        if not 0 <= layer < self.layer_count:
            raise IndexError(f"layer {layer} out of range 0..{self.layer_count - 1}")
        if self.stream:
            return self.matrices[layer], self.matrices[layer + 1]
        return self.matrices[2 * layer], self.matrices[2 * layer + 1]


def subsample_columns(dataset: SnapshotDataset, n: int, seed: int) -> SnapshotDataset:
    """Select the same n column indices in every layer, preserving pairing.

    Deterministic for a fixed seed; n = N returns the columns in their
    original order (the sorted index set is then 0..N-1).
    """
    total = dataset.sample_count
    if n > total:
        raise NTooLarge(f"requested {n} columns but dataset has {total}")
    if n < 1:
        raise NTooLarge("subsample size must be positive")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(total, size=n, replace=False))
    mats = [np.ascontiguousarray(m[:, idx]) for m in dataset.matrices]
    return replace(dataset, sample_count=n, matrices=mats)


# -- binary container ------------------------------------------------------

def write_dataset(dataset: SnapshotDataset, path) -> None:
    """Write the byte-exact binary container; validates before writing."""
    dataset.validate()
    dtype = _CODE_DTYPE[_DTYPE_CODE[dataset.precision]]
    flags = FLAG_STREAM if dataset.stream else 0
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, flags, dataset.layer_count,
                          dataset.hidden_dim, dataset.sample_count,
                          _DTYPE_CODE[dataset.precision])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            for mat in dataset.matrices:
                fh.write(np.asfortranarray(mat.astype(dtype)).tobytes(order="F"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_dataset(path) -> SnapshotDataset:
    """Load and validate a binary snapshot container."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than header")
    magic, version, flags, layers, dim, count, dtype_code = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedHeader(f"{path}: unsupported format version {version}")
    if dtype_code not in _CODE_DTYPE:
        raise MalformedHeader(f"{path}: unknown dtype code {dtype_code}")
    if layers < 1:
        raise ProfileRequiresLayers(f"{path}: container declares zero layers")
    stream = bool(flags & FLAG_STREAM)
    n_matrices = layers + 1 if stream else 2 * layers
    dtype = _CODE_DTYPE[dtype_code]
    itemsize = np.dtype(dtype).itemsize
    expected = _HEADER.size + n_matrices * dim * count * itemsize
    if len(raw) != expected:
        raise ShapeMismatch(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"header implies {expected - _HEADER.size}")
    mats = []
    offset = _HEADER.size
    per_matrix = dim * count * itemsize
    for _ in range(n_matrices):
        buf = np.frombuffer(raw, dtype=dtype, count=dim * count, offset=offset)
        mats.append(np.asarray(buf.reshape((dim, count), order="F"), dtype=np.float64))
        offset += per_matrix
    precision = "f32" if dtype_code == 0 else "f64"
    return SnapshotDataset(layers, dim, count, mats, stream=stream,
                           precision=precision, source_tag=str(path))


# -- CSV fallback ------------------------------------------------------------

def load_csv_dir(path) -> SnapshotDataset:
    """Load a pair-mode dataset from a directory of per-layer CSV files.

    Files are named layer{i:03d}_X.csv / layer{i:03d}_Y.csv with one row
    per sample (N rows, d columns).
    """
    root = Path(path)
    xs = sorted(root.glob("layer*_X.csv"))
    if not xs:
        raise ProfileRequiresLayers(f"{path}: no layer*_X.csv files found")
    pairs = []
    for xfile in xs:
        yfile = xfile.with_name(xfile.name.replace("_X.csv", "_Y.csv"))
        if not yfile.exists():
            raise ShapeMismatch(f"{path}: missing {yfile.name} for {xfile.name}")
        x = np.atleast_2d(np.loadtxt(xfile, delimiter=",", dtype=np.float64))
        y = np.atleast_2d(np.loadtxt(yfile, delimiter=",", dtype=np.float64))
        pairs.append((x.T, y.T))
    return SnapshotDataset.from_pairs(pairs, source_tag=str(path))


def write_csv_dir(dataset: SnapshotDataset, path) -> None:
    """Write the CSV fallback layout (one row per sample)."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for layer in range(dataset.layer_count):
            x, y = dataset.layer_pair(layer)
            np.savetxt(root / f"layer{layer:03d}_X.csv", x.T, delimiter=",")
            np.savetxt(root / f"layer{layer:03d}_Y.csv", y.T, delimiter=",")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
