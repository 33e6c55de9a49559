"""Data ingestion and CSV persistence.

Traces serialize to CSV with the exact header
``iter,residual,dist_theta_star,gamma,rho`` (missing gamma/rho cells are
empty). Floats are written with ``repr`` so a parsed file reproduces the
in-memory records bit for bit, and no timestamps are emitted anywhere:
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import EmptyFileError, ParseError
from .iterate import IterateTrace, Termination
from .linalg import ProblemInstance

TRACE_HEADER = ["iter", "residual", "dist_theta_star", "gamma", "rho"]


def load_svmlight(path, scale: Optional[float] = None) -> ProblemInstance:
    """Load a sparse ``label index:value ...`` file into a dense problem.

    Feature indices are 1-based; ``#`` starts a comment. All-zero columns
    are dropped after assembly, and ``scale`` (when given) divides both
    the feature matrix and the targets. Labels become the target vector.
    """
    path = Path(path)
    data, indices, indptr, labels = [], [], [0], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            try:
                labels.append(float(fields[0]))
            except ValueError:
                raise ParseError(f"bad label {fields[0]!r}", line=lineno) from None
            for token in fields[1:]:
                try:
                    idx_s, val_s = token.split(":")
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise ParseError(f"bad feature token {token!r}", line=lineno) from None
                if idx < 1:
                    raise ParseError(f"feature index {idx} is not 1-based", line=lineno)
                indices.append(idx - 1)
                data.append(val)
            indptr.append(len(data))
    if not labels:
        raise EmptyFileError(f"{path} contains no data rows")
    n_cols = max(indices) + 1 if indices else 0
    M = sp.csr_matrix((data, indices, indptr), shape=(len(labels), n_cols))
    nonzero_cols = np.flatnonzero(np.diff(M.tocsc().indptr))
    M = M[:, nonzero_cols]
    A = M.toarray()
    b = np.asarray(labels)
    if scale is not None:
        if scale == 0:
            raise ValueError("scale must be nonzero")
        A = A / scale
        b = b / scale
    return ProblemInstance(A, b)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_trace_csv(path, trace: IterateTrace, comments: Sequence[str] = ()):
    """Write a trace with ``#``-prefixed provenance comments above the header."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(f"# method: {trace.method}\n")
        if trace.terminated_by is not None:
            fh.write(f"# terminated_by: {trace.terminated_by.value}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in trace.records:
            writer.writerow([r.k, _fmt(r.residual), _fmt(r.dist_theta_star),
                             _fmt(r.gamma), _fmt(r.rho)])


def read_trace_csv(path) -> IterateTrace:
    """Parse a trace file back into an IterateTrace (records and metadata)."""
    path = Path(path)
    trace = IterateTrace()
    header_seen = False
    with open(path, newline="") as fh:
        plain = []
        for raw in fh:
            if raw.startswith("# method: "):
                trace.method = raw[len("# method: "):].strip()
            elif raw.startswith("# terminated_by: "):
                trace.terminated_by = Termination(raw.split(": ", 1)[1].strip())
            elif raw.startswith("#"):
                continue
            else:
                plain.append(raw)
        for row in csv.reader(plain):
            if not row:
                continue
            if not header_seen:
                if row != TRACE_HEADER:
                    raise ParseError(f"unexpected trace header {row!r}")
                header_seen = True
                continue
            trace.append(int(row[0]), float(row[1]), float(row[2]),
                         gamma=float(row[3]) if row[3] else None,
                         rho=float(row[4]) if row[4] else None)
    if not header_seen:
        raise ParseError(f"{path} has no trace header")
    return trace


def write_summary_csv(path, rows: Sequence[dict], comments: Sequence[str] = ()):
    """One row per completed run: method, problem shape, outcome."""
    header = ["method", "n", "d", "h", "alpha", "iterations", "terminated_by",
              "residual", "dist_theta_star"]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                row["method"], row["n"], row["d"], row.get("h", ""),
                _fmt(row["alpha"]), row["iterations"], row["terminated_by"],
                _fmt(row["residual"]), _fmt(row["dist_theta_star"]),
            ])


def write_histogram_csv(path, edges: np.ndarray, counts: np.ndarray,
                        comments: Sequence[str] = ()):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            writer.writerow([_fmt(edges[i]), _fmt(edges[i + 1]), int(c)])


def write_percentiles_csv(path, rows: Sequence[dict], comments: Sequence[str] = ()):
    """Per-depth percentile table with variance and convergence fraction."""
    header = ["h", "p25", "p50", "p75", "variance", "frac_within_1e-3", "n_diverged"]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row["h"], _fmt(row["p25"]), _fmt(row["p50"]),
                             _fmt(row["p75"]), _fmt(row["variance"]),
                             _fmt(row["frac_within_1e-3"]), row["n_diverged"]])


def write_path_csv(path, iterations: Sequence[int], points: np.ndarray,
                   comments: Sequence[str] = ()):
    """Projected 2-d iteration path, one row per recorded snapshot."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["iter", "px", "py"])
        for k, pt in zip(iterations, points):
            writer.writerow([int(k), _fmt(pt[0]), _fmt(pt[1])])


def write_lrgrid_csv(path, entries: Sequence[dict], chosen_alpha,
                     comments: Sequence[str] = ()):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(f"# chosen_alpha: {_fmt(chosen_alpha) if chosen_alpha else ''}\n")
        writer = csv.writer(fh)
        writer.writerow(["alpha", "diverged", "iters_to_target", "final_residual"])
        for e in entries:
            writer.writerow([
                _fmt(e["alpha"]), int(e["diverged"]),
                "" if e["iters_to_target"] is None else int(e["iters_to_target"]),
                _fmt(e["final_residual"]),
            ])


def write_stability_csv(path, rows: Sequence[dict], comments: Sequence[str] = ()):
    header = ["h", "kernel_drift_max", "norm_product_bound", "dist_theta_star",
              "residual"]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row["h"], _fmt(row["kernel_drift_max"]),
                             _fmt(row["norm_product_bound"]),
                             _fmt(row["dist_theta_star"]), _fmt(row["residual"])])
