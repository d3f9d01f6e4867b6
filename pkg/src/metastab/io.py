"""File formats: chain and partition JSON, tabular CSV outputs, atomic writes.

Chain files are ``{"states": [labels], "rates": [[i, j, value], ...]}`` with
0-based indices; partition files are ``{"wells": [[labels], ...], "delta":
"implicit"}`` with the separating set inferred as the complement.
"""
import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .chain import build_chain
from .errors import ParseError
from .transforms import Partition

__all__ = [
    "atomic_write",
    "chain_to_json",
    "chain_from_json",
    "load_chain",
    "save_chain",
    "partition_to_json",
    "partition_from_json",
    "load_partition",
    "save_partition",
    "write_csv",
    "read_csv",
    "to_jsonable",
]


def atomic_write(path, text, *, overwrite=False):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def to_jsonable(obj):
    """Recursively convert numpy scalars, arrays and tuples for ``json.dumps``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _label(v):
    # JSON has no tuples; dog-graph vertices round-trip as lists
    return tuple(v) if isinstance(v, list) else v


def chain_to_json(chain):
    R = chain.rates.tocoo()
    order = np.lexsort((R.col, R.row))
    rates = [[int(R.row[k]), int(R.col[k]), float(R.data[k])] for k in order]
    return {"states": to_jsonable(list(chain.labels)), "rates": rates}


def _parse(text, what):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def chain_from_json(data):
    """Build a chain from a parsed chain document."""
    if isinstance(data, str):
        data = _parse(data, "chain")
    if not isinstance(data, dict):
        raise ParseError("chain: top level must be an object")
    for key in ("states", "rates"):
        if key not in data:
            raise ParseError(f"chain: missing key {key!r}")
    states = data["states"]
    if not isinstance(states, list) or not states:
        raise ParseError("chain: key 'states' must be a nonempty list")
    n = len(states)
    rows, cols, vals = [], [], []
    if not isinstance(data["rates"], list):
        raise ParseError("chain: key 'rates' must be a list")
    for k, entry in enumerate(data["rates"]):
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ParseError(f"chain: key 'rates' entry {k} must be [i, j, value]")
        i, j, v = entry
        if not (isinstance(i, int) and isinstance(j, int) and 0 <= i < n and 0 <= j < n):
            raise ParseError(f"chain: key 'rates' entry {k} has invalid indices {i!r}, {j!r}")
        if not isinstance(v, (int, float)):
            raise ParseError(f"chain: key 'rates' entry {k} has non-numeric value {v!r}")
        rows.append(i)
        cols.append(j)
        vals.append(float(v))
    R = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return build_chain(R, [_label(s) for s in states])


def load_chain(path):
    return chain_from_json(_parse(Path(path).read_text(), f"chain file {path}"))


def save_chain(chain, path, *, overwrite=False):
    atomic_write(path, json.dumps(chain_to_json(chain), indent=1) + "\n", overwrite=overwrite)


def partition_to_json(partition, labels):
    wells = [[labels[i] for i in w] for w in partition.wells]
    return {"wells": to_jsonable(wells), "delta": "implicit"}


def partition_from_json(data, chain):
    """Resolve well labels against ``chain``; the separating set is the rest."""
    if isinstance(data, str):
        data = _parse(data, "partition")
    if not isinstance(data, dict) or "wells" not in data:
        raise ParseError("partition: missing key 'wells'")
    if data.get("delta", "implicit") != "implicit":
        raise ParseError("partition: key 'delta' must be \"implicit\"")
    wells = []
    for k, w in enumerate(data["wells"]):
        if not isinstance(w, list):
            raise ParseError(f"partition: key 'wells' entry {k} must be a list of labels")
        idx = []
        for lab in w:
            try:
                idx.append(chain.index[_label(lab)])
            except (KeyError, TypeError) as exc:
                raise ParseError(f"partition: key 'wells' entry {k} names unknown state {lab!r}") from exc
        wells.append(idx)
    return Partition(chain.n, wells)


def load_partition(path, chain):
    return partition_from_json(_parse(Path(path).read_text(), f"partition file {path}"), chain)


def save_partition(partition, labels, path, *, overwrite=False):
    atomic_write(path, json.dumps(partition_to_json(partition, labels), indent=1) + "\n",
                 overwrite=overwrite)


def _cell(v):
    if isinstance(v, (tuple, list)):
        return json.dumps(to_jsonable(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, *, overwrite=False):
    """Write rows under a header such as ``("state", "weight")`` or ``("t", "d")``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    atomic_write(path, buf.getvalue(), overwrite=overwrite)


def read_csv(path, header):
    """Read a CSV written by :func:`write_csv`; numeric cells become floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != list(header):
            raise ParseError(f"{path}: line 1: expected header {','.join(header)}, got {got}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields")
            out.append([_cell_value(c) for c in row])
    return out


def _cell_value(c):
    try:
        return float(c)
    except ValueError:
        return c
