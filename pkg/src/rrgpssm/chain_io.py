"""Newline-delimited JSON persistence for Gibbs chains.

Line 1 is a header object: format tag, the ordered list of record fields and
the fixed model structure (bases, measurement model, initial state). Every
following line is one iteration::

    {"iteration": k, "A": [...], "Q_lower": [...], "log_theta": [...],
     "accepted": true, "log_likelihood": -712.3}

``A`` is the full weight matrix ``[A, A_u]`` flattened row-major with columns
in canonical basis order; ``Q_lower`` is the row-major lower triangle of Q.
Learned measurement models add ``C`` and ``R_lower``. Floats are written
with Python's shortest round-trip representation.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .gibbs import ChainRecord, GibbsChain
from .kernel_basis import BasisConfig, Domain, KernelSpec
from .model import RRGPSSM

__all__ = [
    "FORMAT",
    "RECORD_FIELDS",
    "basis_to_dict",
    "basis_from_dict",
    "model_to_dict",
    "model_from_dict",
    "ChainWriter",
    "write_chain",
    "read_chain",
]

FORMAT = "rrgpssm-chain/1"
RECORD_FIELDS = ["iteration", "A", "Q_lower", "log_theta", "accepted", "log_likelihood"]
_OBS_FIELDS = ["C", "R_lower"]


def _lower(M: np.ndarray) -> list[float]:
    return [float(v) for v in M[np.tril_indices(M.shape[0])]]


def _from_lower(vals, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    M[np.tril_indices(n)] = vals
    return M + np.tril(M, -1).T


def basis_to_dict(b: BasisConfig) -> dict:
    k = b.kernel
    return {
        "half_widths": list(b.domain.half_widths),
        "indices": [list(j) for j in b.indices],
        "kernel": {
            "family": k.family.value,
            "variance": k.variance,
            "lengthscales": list(k.lengthscales),
            "nu": k.nu,
        },
    }


def basis_from_dict(d: dict) -> BasisConfig:
    k = d["kernel"]
    kernel = KernelSpec(k["family"], k["variance"], tuple(k["lengthscales"]), k.get("nu"))
    return BasisConfig(Domain(tuple(d["half_widths"])), tuple(map(tuple, d["indices"])), kernel)


def model_to_dict(model: RRGPSSM) -> dict:
    if not isinstance(model.basis, BasisConfig):
        raise TypeError("only models on a Laplace eigenbasis can be serialised")
    return {
        "n_x": model.n_x,
        "n_y": model.n_y,
        "basis": basis_to_dict(model.basis),
        "input_basis": None if model.input_basis is None else basis_to_dict(model.input_basis),
        "C": model.C.tolist(),
        "R": model.R.tolist(),
        "obs_on_features": model.obs_on_features,
        "x1_mean": model.x1_mean.tolist(),
        "x1_cov": model.x1_cov.tolist(),
        "A": model.A.tolist(),
        "A_u": None if model.A_u is None else model.A_u.tolist(),
        "Q": model.Q.tolist(),
    }


def model_from_dict(d: dict) -> RRGPSSM:
    basis = basis_from_dict(d["basis"])
    ib = d.get("input_basis")
    return RRGPSSM(
        A=np.array(d["A"], dtype=float).reshape(d["n_x"], basis.size),
        Q=np.array(d["Q"], dtype=float),
        basis=basis,
        C=np.array(d["C"], dtype=float),
        R=np.array(d["R"], dtype=float),
        x1_mean=np.array(d["x1_mean"], dtype=float),
        x1_cov=np.array(d["x1_cov"], dtype=float),
        input_basis=None if ib is None else basis_from_dict(ib),
        A_u=None if d.get("A_u") is None else np.array(d["A_u"], dtype=float),
        obs_on_features=bool(d.get("obs_on_features", False)),
    )


def _record_to_dict(rec: ChainRecord) -> dict:
    out = {
        "iteration": rec.iteration,
        "A": [float(v) for v in rec.A.ravel()],
        "Q_lower": _lower(rec.Q),
        "log_theta": [float(v) for v in rec.log_theta],
        "accepted": bool(rec.accepted),
        "log_likelihood": float(rec.log_likelihood),
    }
    if rec.C is not None:
        out["C"] = [float(v) for v in rec.C.ravel()]
        out["R_lower"] = _lower(rec.R)
    return out


class ChainWriter:
    """Append chain records to an NDJSON file as they are produced."""

    def __init__(self, path, template: RRGPSSM, extra: dict | None = None):
        self.path = Path(path)
        self._fh = self.path.open("w")
        header = {
            "format": FORMAT,
            "fields": RECORD_FIELDS + _OBS_FIELDS,
            "model": model_to_dict(template),
        }
        if extra:
            header.update(extra)
        self._fh.write(json.dumps(header) + "\n")

    def __call__(self, rec: ChainRecord) -> None:
        self._fh.write(json.dumps(_record_to_dict(rec)) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_chain(path, chain: GibbsChain, extra: dict | None = None) -> None:
    with ChainWriter(path, chain.template, extra) as w:
        for rec in chain.records:
            w(rec)


def read_chain(path) -> tuple[GibbsChain, dict]:
    """Load a chain file; returns the chain (without state trajectories) and the header."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first:
            raise ValueError(f"{path}: empty chain file")
        header = json.loads(first)
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a chain file (format {header.get('format')!r})")
        template = model_from_dict(header["model"])
        n_x, n_y = template.n_x, template.n_y
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                A = np.array(d["A"], dtype=float).reshape(n_x, -1)
                rec = ChainRecord(
                    iteration=int(d["iteration"]),
                    states=None,
                    A=A,
                    Q=_from_lower(d["Q_lower"], n_x),
                    log_theta=np.array(d["log_theta"], dtype=float),
                    accepted=bool(d["accepted"]),
                    log_likelihood=float(d["log_likelihood"]),
                    C=None if "C" not in d else np.array(d["C"], dtype=float).reshape(n_y, -1),
                    R=None if "R_lower" not in d else _from_lower(d["R_lower"], n_y),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise ValueError(f"{path}, line {lineno}: bad chain record ({e})") from e
            records.append(rec)
    return GibbsChain(template, records, {}), header
