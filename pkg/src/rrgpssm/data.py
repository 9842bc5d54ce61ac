"""CSV ingestion for observation / input time series.

Columns are recognised by name: ``t`` (optional timestamps), ``u*`` (inputs)
and ``y*`` (observations), e.g. ``t,u1,u2,y1``. Simulated data may also carry
the true states as ``x*`` columns. Other columns are rejected unless listed
in ``ignore``.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "DataFormatError", "load_csv", "save_csv"]

_INPUT = re.compile(r"^u\d*$")
_OUTPUT = re.compile(r"^y\d*$")
_STATE = re.compile(r"^x\d*$")


class DataFormatError(ValueError):
    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}" if line is None else f"{path}, line {line}"
        super().__init__(f"{where}: {msg}")
        self.line = line


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    u: np.ndarray | None = None
    t: np.ndarray | None = None
    columns: dict = field(default_factory=dict)
    x: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        object.__setattr__(self, "y", y)
        if self.u is not None:
            u = np.asarray(self.u, dtype=float)
            if u.ndim == 1:
                u = u[:, None]
            if u.shape[0] != y.shape[0]:
                raise ValueError("inputs and observations differ in length")
            object.__setattr__(self, "u", u)
        if self.t is not None:
            object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(-1))
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != y.shape[0]:
                raise ValueError("states and observations differ in length")
            object.__setattr__(self, "x", x)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n_u(self) -> int:
        return 0 if self.u is None else self.u.shape[1]

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        def part(sl):
            return Dataset(
                self.y[sl],
                None if self.u is None else self.u[sl],
                None if self.t is None else self.t[sl],
                self.columns,
                None if self.x is None else self.x[sl],
            )

        return part(slice(0, n_train)), part(slice(n_train, None))


def load_csv(path, ignore=()) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(path, 1, "missing header row") from None
        roles = {}
        for i, name in enumerate(header):
            if name == "t":
                roles[i] = "t"
            elif _INPUT.match(name):
                roles[i] = "u"
            elif _OUTPUT.match(name):
                roles[i] = "y"
            elif _STATE.match(name):
                roles[i] = "x"
            elif name in ignore:
                continue
            else:
                raise DataFormatError(path, 1, f"unrecognised column {name!r}")
        if "y" not in roles.values():
            raise DataFormatError(path, 1, "no observation (y*) column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    path, lineno, f"expected {len(header)} fields, found {len(row)}"
                )
            vals = []
            for i in roles:
                cell = row[i].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        path, lineno, f"non-numeric value {cell!r} in column {header[i]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataFormatError(
                        path, lineno, f"non-finite value {cell!r} in column {header[i]!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataFormatError(path, None, "no data rows")
    arr = np.array(rows, dtype=float)
    order = list(roles)
    pick = lambda role: [k for k, i in enumerate(order) if roles[i] == role]  # noqa: E731
    cols = {role: [header[order[k]] for k in pick(role)] for role in ("t", "u", "y", "x")}
    if len(cols["t"]) > 1:
        raise DataFormatError(path, 1, "more than one t column")
    t = arr[:, pick("t")[0]] if cols["t"] else None
    u = arr[:, pick("u")] if cols["u"] else None
    x = arr[:, pick("x")] if cols["x"] else None
    return Dataset(arr[:, pick("y")], u, t, cols, x)


def save_csv(path, ds: Dataset) -> None:
    names, blocks = [], []
    if ds.t is not None:
        names.append("t")
        blocks.append(ds.t[:, None])
    if ds.u is not None:
        names += ds.columns.get("u") or [f"u{i + 1}" for i in range(ds.n_u)]
        blocks.append(ds.u)
    names += ds.columns.get("y") or [f"y{i + 1}" for i in range(ds.n_y)]
    blocks.append(ds.y)
    if ds.x is not None:
        names += ds.columns.get("x") or [f"x{i + 1}" for i in range(ds.x.shape[1])]
        blocks.append(ds.x)
    arr = np.hstack(blocks)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in arr:
            w.writerow([repr(float(v)) for v in row])
