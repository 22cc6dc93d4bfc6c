"""File formats: MatrixMarket matrices, decimal vectors, partition JSON and
reduced-model directories.

Indices in files are 1-based; in memory they are 0-based.
"""
from __future__ import annotations

import io
import json
import sys
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .aggregation import Partition, ReducedModel
from .core import ChainError, as_csr, to_dense

MM_HEADER = "%%MatrixMarket matrix coordinate real general"
MODEL_FORMAT = "lumpkit-reduced-model"


def fmt(x: float) -> str:
    """Shortest-safe decimal: 17 significant digits round-trip any double."""
    return format(float(x), ".17g")


def _open_text(source):
    if source in ("-", None):
        return io.StringIO(sys.stdin.read())
    return open(source, encoding="utf-8")


def read_matrix(source) -> sp.csr_matrix:
    """Read a MatrixMarket file (``'-'`` for stdin) into CSR."""
    with _open_text(source) as fh:
        text = fh.read()
    if not text.lstrip().startswith("%%MatrixMarket"):
        raise ChainError(f"{source}: not a MatrixMarket file")
    try:
        M = scipy.io.mmread(io.BytesIO(text.encode("utf-8")))
    except Exception as exc:  # scipy raises a variety of parser errors
        raise ChainError(f"{source}: malformed MatrixMarket data ({exc})") from None
    return as_csr(M)


def write_matrix(M, target, comment: str | None = None) -> None:
    """Write coordinate/real/general MatrixMarket in row-major order."""
    C = as_csr(M)
    lines = [MM_HEADER]
    if comment:
        lines += [f"% {line}" for line in comment.splitlines()]
    lines.append(f"{C.shape[0]} {C.shape[1]} {C.nnz}")
    coo = C.tocoo()
    lines += [f"{i + 1} {j + 1} {fmt(v)}" for i, j, v in zip(coo.row, coo.col, coo.data)]
    _write_text(target, "\n".join(lines) + "\n")


def _write_text(target, text: str) -> None:
    if target in ("-", None):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(target).write_text(text, encoding="utf-8", newline="\n")


def read_vector(source) -> np.ndarray:
    """Single-column MatrixMarket or one decimal per line (``#`` comments allowed)."""
    with _open_text(source) as fh:
        text = fh.read()
    if text.lstrip().startswith("%%MatrixMarket"):
        try:
            V = scipy.io.mmread(io.BytesIO(text.encode("utf-8")))
        except Exception as exc:
            raise ChainError(f"{source}: malformed MatrixMarket data ({exc})") from None
        V = to_dense(V)
        if V.ndim == 2 and 1 not in V.shape:
            raise ChainError(f"{source}: expected a single column, got shape {V.shape}")
        return np.asarray(V, dtype=float).ravel()
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ChainError(f"{source}: line {lineno} is not a number: {line!r}") from None
    return np.array(values)


def write_vector(v, target) -> None:
    _write_text(target, "".join(fmt(x) + "\n" for x in np.asarray(v, dtype=float).ravel()))


def partition_to_json(partition: Partition) -> dict:
    return {"m": partition.m, "omega": [int(x) + 1 for x in partition.omega]}


def partition_from_json(data: dict, source="partition") -> Partition:
    try:
        m = int(data["m"])
        omega = np.asarray(data["omega"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ChainError(f"{source}: expected {{\"m\": int, \"omega\": [...]}} ({exc})") from None
    if omega.size and omega.min() < 1:
        raise ChainError(f"{source}: aggregate indices are 1-based")
    return Partition(omega - 1, m)


def read_partition(source) -> Partition:
    with _open_text(source) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ChainError(f"{source}: malformed JSON ({exc})") from None
    return partition_from_json(data, source)


def write_partition(partition: Partition, target) -> None:
    _write_text(target, json.dumps(partition_to_json(partition)) + "\n")


def write_json(data: dict, target) -> None:
    _write_text(target, json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_model(model: ReducedModel, directory, extra: dict | None = None) -> Path:
    """Store a reduced model as MatrixMarket files plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(model.A, d / "A.mtx")
    write_matrix(model.dynamics, d / "dynamics.mtx")
    files = {"A": "A.mtx", "dynamics": "dynamics.mtx"}
    if model.pi0 is not None:
        write_vector(model.pi0, d / "pi0.txt")
        files["pi0"] = "pi0.txt"
    if model.partition is not None:
        write_partition(model.partition, d / "partition.json")
        files["partition"] = "partition.json"
    if model.alpha is not None:
        write_vector(model.alpha, d / "alpha.txt")
        files["alpha"] = "alpha.txt"
    manifest = {"format": MODEL_FORMAT, "kind": model.kind, "mode": model.mode,
                "m": model.m, "n": model.n, "stochastic_flag": model.stochastic_flag(),
                "files": files}
    if extra:
        manifest.update(extra)
    write_json(manifest, d / "manifest.json")
    return d


def read_model(directory) -> ReducedModel:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ChainError(f"{d}: no manifest.json, not a reduced-model directory") from None
    except json.JSONDecodeError as exc:
        raise ChainError(f"{d}/manifest.json: malformed JSON ({exc})") from None
    if manifest.get("format") != MODEL_FORMAT:
        raise ChainError(f"{d}/manifest.json: unexpected format {manifest.get('format')!r}")
    files = manifest.get("files", {})
    m, n = int(manifest["m"]), int(manifest["n"])
    A = _checked(read_matrix(d / files.get("A", "A.mtx")), (m, n), "A")
    if manifest.get("mode") == "abstract":
        A = A.toarray()
    dyn = _checked(read_matrix(d / files.get("dynamics", "dynamics.mtx")), (m, m), "dynamics").toarray()
    pi0 = read_vector(d / files["pi0"]) if "pi0" in files else None
    partition = read_partition(d / files["partition"]) if "partition" in files else None
    alpha = read_vector(d / files["alpha"]) if "alpha" in files else None
    return ReducedModel(A, dyn, pi0, manifest.get("kind", "dtmc"), partition, alpha)


def _checked(M, shape, name):
    if M.shape != shape:
        raise ChainError(f"{name} has shape {M.shape}, manifest declares {shape}")
    return M
