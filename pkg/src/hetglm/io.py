"""File formats: dataset header + matrix payload, masks, covariates, manifests.

The dataset container is a small key=value header (n_time, n_voxel, layout,
encoding, data) next to a matrix payload: whitespace text with T rows of V
values ("%.17g", so float64 round trips), or little-endian float64 row-major
binary. Masks are one 0/1 per line.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .design import Dataset

__all__ = [
    "RunManifest",
    "load_dataset",
    "write_dataset",
    "load_matrix",
    "write_matrix",
    "load_mask",
    "load_binary_flags",
    "write_truth",
    "parse_keyvalue_file",
]

FORMAT_FLOAT = "%.17g"


def parse_keyvalue_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_matrix(path, values: np.ndarray, *, encoding: str = "text") -> None:
    values = np.asarray(values, dtype=float)
    if encoding == "text":
        np.savetxt(path, values, fmt=FORMAT_FLOAT)
    elif encoding == "binary":
        Path(path).write_bytes(np.ascontiguousarray(values, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown encoding {encoding!r}")


def _load_matrix_text(path, n_rows: int, n_cols: int) -> np.ndarray:
    try:
        values = np.loadtxt(path, dtype=float, ndmin=2)
    except ValueError as err:
        raise ValueError(f"{path}: {err}") from err
    if values.shape[0] != n_rows:
        raise ValueError(
            f"{path}: expected {n_rows} rows, found {values.shape[0]}"
        )
    if values.shape[1] != n_cols:
        raise ValueError(
            f"{path}: expected {n_cols} columns, found {values.shape[1]}"
        )
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise ValueError(f"{path}: non-finite value on line {int(bad[0]) + 1}")
    return values


def _load_matrix_binary(path, n_rows: int, n_cols: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    expected = n_rows * n_cols * 8
    if len(raw) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes ({n_rows} rows), found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f8").reshape(n_rows, n_cols).copy()
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise ValueError(f"{path}: non-finite value in row {int(bad[0]) + 1}")
    return values


def write_dataset(
    header_path, dataset: Dataset, *, encoding: str = "text", data_filename: str | None = None
) -> None:
    header_path = Path(header_path)
    if data_filename is None:
        suffix = ".txt" if encoding == "text" else ".bin"
        data_filename = header_path.stem + "_data" + suffix
    write_matrix(header_path.parent / data_filename, dataset.values, encoding=encoding)
    lines = [
        f"n_time={dataset.n_time}",
        f"n_voxel={dataset.n_voxel}",
        f"encoding={encoding}",
        f"data={data_filename}",
    ]
    if dataset.layout is not None:
        lines.insert(2, "layout=" + " ".join(str(d) for d in dataset.layout))
    header_path.write_text("\n".join(lines) + "\n")


def load_dataset(header_path) -> Dataset:
    header_path = Path(header_path)
    header = parse_keyvalue_file(header_path)
    for key in ("n_time", "n_voxel", "data"):
        if key not in header:
            raise ValueError(f"{header_path}: missing header key {key!r}")
    n_time = int(header["n_time"])
    n_voxel = int(header["n_voxel"])
    encoding = header.get("encoding", "text")
    layout = None
    if "layout" in header:
        layout = tuple(int(d) for d in header["layout"].split())
    data_path = header_path.parent / header["data"]
    if not data_path.exists():
        raise ValueError(f"{header_path}: data file {data_path} does not exist")
    if encoding == "text":
        values = _load_matrix_text(data_path, n_time, n_voxel)
    elif encoding == "binary":
        values = _load_matrix_binary(data_path, n_time, n_voxel)
    else:
        raise ValueError(f"{header_path}: unknown encoding {encoding!r}")
    return Dataset(
        values=values,
        voxel_ids=[str(i) for i in range(n_voxel)],
        layout=layout,
    )


def load_matrix(path, *, what: str = "covariates") -> np.ndarray:
    """Whitespace-delimited text matrix, one row per time point."""
    try:
        values = np.loadtxt(path, dtype=float, ndmin=2)
    except (ValueError, OSError) as err:
        raise ValueError(f"{what} file {path}: {err}") from err
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise ValueError(f"{what} file {path}: non-finite value on line {int(bad[0]) + 1}")
    return values


def load_binary_flags(path, expected: int, *, what: str) -> np.ndarray:
    """A file of 0/1 entries, one per line (or whitespace separated)."""
    try:
        values = np.loadtxt(path, dtype=float).ravel()
    except (ValueError, OSError) as err:
        raise ValueError(f"{what} file {path}: {err}") from err
    if values.size != expected:
        raise ValueError(
            f"{what} file {path}: expected {expected} entries, found {values.size}"
        )
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise ValueError(f"{what} file {path}: entries must be 0 or 1")
    return values.astype(bool)


def load_mask(path, n_voxel: int) -> np.ndarray:
    return load_binary_flags(path, n_voxel, what="mask")


def write_truth(path, truth, design) -> None:
    """Ground-truth table: voxel_id, region, true beta..., true gamma...."""
    beta_names = ["beta_" + n for n in design.column_names]
    gamma_names = ["gamma_" + n for n in design.z_column_names]
    header = "voxel_id\tregion\t" + "\t".join(beta_names + gamma_names)
    lines = [
        "# rho_true=" + " ".join(FORMAT_FLOAT % v for v in truth.rho_true),
        "# " + header,
    ]
    for i in range(truth.beta.shape[0]):
        vals = [FORMAT_FLOAT % v for v in truth.beta[i]] + [
            FORMAT_FLOAT % v for v in truth.gamma[i]
        ]
        lines.append(f"{i}\t{truth.region[i]}\t" + "\t".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RunManifest:
    """Everything needed to reproduce one batch run bit-identically."""

    version: str
    argv: list[str]
    flags: dict
    input_paths: dict
    seed: int
    n_time: int
    n_voxel: int
    output_dir: str
    wall_time_s: float = 0.0
    created: str = ""
    error_log: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.created:
            self.created = time.strftime("%Y-%m-%dT%H:%M:%S")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))
