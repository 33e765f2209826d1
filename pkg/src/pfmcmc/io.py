"""Reading and writing datasets, chains, tables and JSON summaries.

Floats are written with 17 significant digits so every value survives a
write/read round trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import IngestError
from .mh import ChainState
from .models import Dataset
from .proposals import ProposalMixture

__all__ = [
    "fmt",
    "dataset_csv",
    "write_dataset",
    "load_dataset",
    "table_csv",
    "write_table",
    "read_table",
    "to_jsonable",
    "write_json",
    "read_json",
    "write_chain",
    "load_chain",
]


def fmt(x) -> str:
    """Text for one cell: 17 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def dataset_csv(data: Dataset) -> str:
    out = io.StringIO()
    out.write("t,y\n")
    for t, v in enumerate(data.y, start=1):
        out.write(f"{t},{fmt(v)}\n")
    return out.getvalue()


def write_dataset(data: Dataset, path):
    """Write ``data`` as a ``t,y`` CSV."""
    _write_text(path, dataset_csv(data))


def load_dataset(path, name: str | None = None) -> Dataset:
    """Strictly parse a ``t,y`` CSV.

    ``t`` must run 1, 2, ... in order and every ``y`` must be a finite
    number. Errors name the offending line.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc.strerror}") from None
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines or [c.strip() for c in lines[0].split(",")] != ["t", "y"]:
        raise IngestError("header must be exactly 't,y'", line=1)
    ys = []
    for lineno, raw in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in raw.split(",")]
        if len(cells) != 2:
            raise IngestError(f"expected 2 fields, found {len(cells)}", line=lineno)
        try:
            t = int(cells[0])
        except ValueError:
            raise IngestError(f"t is not an integer: {cells[0]!r}", line=lineno) from None
        if t != len(ys) + 1:
            raise IngestError(f"t should be {len(ys) + 1}, found {t}", line=lineno)
        try:
            y = float(cells[1])
        except ValueError:
            raise IngestError(f"y is not a number: {cells[1]!r}", line=lineno) from None
        if not math.isfinite(y):
            raise IngestError(f"y must be finite, found {cells[1]!r}", line=lineno)
        ys.append(y)
    if not ys:
        raise IngestError("no observations", line=2)
    return Dataset(np.array(ys), name=name or Path(path).stem)


def table_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    return out.getvalue()


def write_table(rows: Sequence[Mapping], path, columns: Sequence[str] | None = None):
    """Write dict rows as CSV (columns default to the first row's keys)."""
    _write_text(path, table_csv(rows, columns))


def _parse_cell(s: str):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def to_jsonable(obj):
    """Convert numpy values and non-finite floats into plain JSON values."""
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


def write_json(obj, path):
    _write_text(path, json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_chain(record, path, extra: Mapping | None = None, timings: bool = True):
    """Write a chain as CSV plus a JSON sidecar next to it.

    CSV columns: ``j, accepted, log_target, loglik, pf_seed``, the natural
    parameters, then the unconstrained coordinates as ``z_<name>``. The
    sidecar holds the resolved configuration, seeds, the initial state, the
    final proposal and (unless ``timings`` is false) wall-clock timings.
    """
    names = list(record.names)
    cols = ["j", "accepted", "log_target", "loglik", "pf_seed"] + names + [f"z_{n}" for n in names]
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    for i in range(record.n):
        cells = [str(i + 1), fmt(bool(record.accepted[i])), fmt(record.log_target[i]), fmt(record.loglik[i]),
                 str(int(record.pf_seed[i]))]
        cells += [fmt(v) for v in record.natural[i]] + [fmt(v) for v in record.z[i]]
        out.write(",".join(cells) + "\n")
    _write_text(path, out.getvalue())
    side = {
        "config": record.config,
        "seed": record.seed,
        "chain": record.chain,
        "names": names,
        "n_iter": record.n,
        "initial": {
            "z": record.initial.z.tolist(),
            "log_target": record.initial.log_target,
            "loglik": record.initial.loglik,
            "pf_seed": record.initial.pf_seed,
        },
        "proposal": record.proposal.to_dict() if record.proposal is not None else None,
        "warnings": list(record.warnings),
    }
    if timings:
        side["timings"] = {
            "elapsed": record.elapsed,
            "time_per_iteration": record.time_per_iteration,
            "warmup_elapsed": record.warmup_elapsed,
        }
    if extra:
        side.update(extra)
    write_json(side, _sidecar(path))


def load_chain(path):
    """Read a chain written by :func:`write_chain` back into a ChainRecord."""
    from .samplers import ChainRecord

    side_path = _sidecar(path)
    try:
        side = read_json(side_path)
    except OSError:
        raise IngestError(f"missing sidecar {side_path}") from None
    names = side["names"]
    d = len(names)
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",") if lines else []
    expected = ["j", "accepted", "log_target", "loglik", "pf_seed"] + names + [f"z_{n}" for n in names]
    if header != expected:
        raise IngestError("chain header does not match its sidecar", line=1)
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        cells = raw.split(",")
        if len(cells) != len(expected):
            raise IngestError(f"expected {len(expected)} fields, found {len(cells)}", line=lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise IngestError("non-numeric field", line=lineno) from None
    arr = np.array(rows).reshape(len(rows), len(expected))
    init = side["initial"]
    timings = side.get("timings", {})
    proposal = ProposalMixture.from_dict(side["proposal"]) if side.get("proposal") else None
    n = arr.shape[0]
    return ChainRecord(
        names=tuple(names),
        z=arr[:, 5 + d :],
        natural=arr[:, 5 : 5 + d],
        log_target=arr[:, 2],
        loglik=arr[:, 3],
        pf_seed=arr[:, 4].astype(np.int64),
        accepted=arr[:, 1].astype(bool),
        proposed=np.full((n, d), np.nan),
        proposed_log_target=np.full(n, np.nan),
        initial=ChainState(np.array(init["z"], float), float(init["log_target"]), float(init["loglik"]),
                           int(init["pf_seed"])),
        seed=int(side["seed"]),
        chain=int(side["chain"]),
        config=side["config"],
        elapsed=float(timings.get("elapsed", float("nan"))),
        proposal=proposal,
        warmup_elapsed=float(timings.get("warmup_elapsed", 0.0)),
        warnings=list(side.get("warnings", [])),
    )

