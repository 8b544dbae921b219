"""Problem files, CSV artifacts and run manifests.

Problem files are JSON objects with a "dims" block and one entry per matrix,
each written as a list of rows (scalars as ``[[x]]``); "mu" is a flat list.
CSV files use 17 significant digits so that equal results produce equal
bytes and therefore equal checksums.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
import warnings
from pathlib import Path

import numpy as np

from .controller import FINITE, STEADY, GainSchedule
from .linalg import flat_names
from .model import MATRIX_KEYS, VECTOR_KEYS, Dimensions, ProblemDef, shape_violations, symmetrized, validate

DIM_KEYS = ("m", "l", "r", "p", "q")
FMT = "%.17g"


class ConfigError(ValueError):
    """Invalid problem or gains file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = self.path or "<config>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


def _key_line(text: str, key: str) -> int | None:
    match = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return None if match is None else text.count("\n", 0, match.start()) + 1


def _matrix(value, key):
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        raise ValueError(f"{key} must be a non-empty list of rows")
    if len({len(row) for row in value}) != 1:
        raise ValueError(f"{key} has ragged rows")
    return _numbers(value, key)


def _numbers(value, key):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{key} contains non-numeric entries") from None
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{key} contains non-finite entries")
    return arr


def parse_problem(text: str, path=None) -> ProblemDef:
    """Parse and validate a problem file's text. Raises :class:`ConfigError`."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", path, exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", path, 1)
    allowed = {"dims", *MATRIX_KEYS, *VECTOR_KEYS}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", path, _key_line(text, key))
    for key in ("dims", *MATRIX_KEYS, *VECTOR_KEYS):
        if key not in raw:
            raise ConfigError(f"missing key {key!r}", path)
    dims_raw = raw["dims"]
    if not isinstance(dims_raw, dict) or set(dims_raw) != set(DIM_KEYS):
        raise ConfigError(f"dims must have exactly the keys {', '.join(DIM_KEYS)}", path, _key_line(text, "dims"))
    try:
        dims = Dimensions(**{k: dims_raw[k] for k in DIM_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path, _key_line(text, "dims")) from None
    values = {}
    for key in MATRIX_KEYS + VECTOR_KEYS:
        try:
            if key in VECTOR_KEYS:
                if not isinstance(raw[key], list) or any(isinstance(v, list) for v in raw[key]):
                    raise ValueError(f"{key} must be a flat list")
                values[key] = _numbers(raw[key], key)
            else:
                values[key] = _matrix(raw[key], key)
        except ValueError as exc:
            raise ConfigError(str(exc), path, _key_line(text, key)) from None
    problem = ProblemDef(dims=dims, **values)
    bad = shape_violations(problem)
    if bad:
        key = bad[0].split()[0]
        raise ConfigError("; ".join(bad), path, _key_line(text, key))
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        problem = symmetrized(problem)
    issues = validate(problem)
    if issues:
        key = issues[0].split()[0]
        raise ConfigError("; ".join(issues), path, _key_line(text, key))
    return problem


def load_problem(path) -> ProblemDef:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", path) from None
    return parse_problem(text, path)


def problem_to_dict(problem: ProblemDef) -> dict:
    d = problem.dims
    out = {"dims": {k: int(getattr(d, k)) for k in DIM_KEYS}}
    for key in MATRIX_KEYS:
        out[key] = getattr(problem, key).tolist()
    out["mu"] = problem.mu.tolist()
    return out


def dump_problem(problem: ProblemDef) -> str:
    """JSON text that :func:`parse_problem` reads back to an equal problem."""
    return json.dumps(problem_to_dict(problem), indent=2) + "\n"


def _fmt(v) -> str:
    return FMT % v


def write_csv(path, header, rows, comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if comment is not None:
            fh.write("# " + comment + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([r if isinstance(r, (int, np.integer, str)) else _fmt(r) for r in row])
    return path


def write_trace(path, trace) -> Path:
    """Per-iterate P, S and the relative change of each (NaN at k = 0)."""
    n, m = trace.P.shape[0], trace.P.shape[1]
    header = ["k", *flat_names("P", (m, m)), *flat_names("S", (m, m)), "residual"]
    rows = ([k, *trace.P[k].ravel(), *trace.S[k].ravel(), trace.residual[k]] for k in range(n))
    return write_csv(path, header, rows)


STEADY_FIELDS = ("P", "S", "Phi", "M", "Ups", "L", "Lam", "Sig1", "Sig1_filt", "Sig2", "Sig2_filt", "K", "Gamma")


def write_steady(path, ss) -> Path:
    """Steady-state matrices as ``name, i, j, value`` rows, then the status."""
    rows = []
    for name in STEADY_FIELDS:
        X = np.atleast_2d(getattr(ss, name))
        for (i, j), v in np.ndenumerate(X):
            rows.append([name, i, j, v])
    comment = f"status={ss.status} iterations={ss.iterations}"
    return write_csv(path, ["name", "i", "j", "value"], rows, comment)


def write_gains(path, gains: GainSchedule) -> Path:
    K, G = gains.K, gains.Gamma
    header = ["k", *flat_names("K", K.shape[1:]), *flat_names("Gamma", G.shape[1:])]
    rows = ([k, *K[k].ravel(), *G[k].ravel()] for k in range(K.shape[0]))
    return write_csv(path, header, rows, f"mode={gains.mode}")


def read_gains(path, problem: ProblemDef) -> GainSchedule:
    """Read a gains CSV written by :func:`write_gains`.

    A file with a single row is treated as steady gains.
    """
    path = Path(path)
    d = problem.dims
    kshape, gshape = (d.l + d.r, d.m), (d.l, d.m)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read gains file: {exc.strerror}", path) from None
    mode = None
    if lines and lines[0].startswith("#"):
        match = re.search(r"mode=(\S+)", lines[0])
        mode = match.group(1) if match else None
        lines = lines[1:]
        offset = 2
    else:
        offset = 1
    if not lines:
        raise ConfigError("empty gains file", path)
    header = next(csv.reader([lines[0]]))
    expected = ["k", *flat_names("K", kshape), *flat_names("Gamma", gshape)]
    if header != expected:
        raise ConfigError(f"gains header {header} does not match the problem; expected {expected}",
                          path, offset)
    rows = []
    for i, line in enumerate(lines[1:]):
        try:
            rows.append([float(v) for v in next(csv.reader([line]))[1:]])
        except ValueError:
            raise ConfigError("non-numeric gain entry", path, offset + 1 + i) from None
        if len(rows[-1]) != len(expected) - 1:
            raise ConfigError("wrong number of columns", path, offset + 1 + i)
    if not rows:
        raise ConfigError("gains file has no rows", path)
    arr = np.array(rows)
    nk = int(np.prod(kshape))
    K = arr[:, :nk].reshape(-1, *kshape)
    G = arr[:, nk:].reshape(-1, *gshape)
    if mode not in (FINITE, STEADY):
        mode = STEADY if len(rows) == 1 else FINITE
    return GainSchedule(K, G, mode)


def write_trajectory(path, traj) -> Path:
    n = traj.stage_cost.shape[0]
    blocks = [("x", traj.x[:n]), ("y", traj.y), ("y2", traj.y2), ("u1", traj.u1), ("u2", traj.u2),
              ("xhat1", traj.x1hat), ("xhat2", traj.x2hat)]
    header = ["k"]
    for name, arr in blocks:
        header += [f"{name}_{i}" for i in range(arr.shape[1])]
    header.append("stage_cost")
    rows = [[k, *np.concatenate([a[k] for _, a in blocks]), traj.stage_cost[k]] for k in range(n)]
    # terminal row: state only, terminal cost in the cost column
    width = sum(a.shape[1] for _, a in blocks)
    m = traj.x.shape[1]
    rows.append([n, *traj.x[n], *([float("nan")] * (width - m)), traj.terminal_cost])
    return write_csv(path, header, rows)


def write_summary(path, summary) -> Path:
    m = summary.Exx.shape[1]
    names = (flat_names("Exx", (m, m)) + flat_names("Sig1_emp", (m, m)) + flat_names("Sig2_emp", (m, m)))
    nan = np.full(m * m, np.nan)
    rows = []
    for k in range(summary.Exx.shape[0]):
        s1 = summary.Sig1_emp[k].ravel() if k < summary.Sig1_emp.shape[0] else nan
        s2 = summary.Sig2_emp[k].ravel() if k < summary.Sig2_emp.shape[0] else nan
        rows.append([k, *summary.Exx[k].ravel(), *s1, *s2])
    comment = (f"cost_mean={_fmt(summary.cost_mean)} cost_se={_fmt(summary.cost_se)} "
               f"rho={_fmt(summary.rho)} replications={summary.replications} mode={summary.mode}")
    return write_csv(path, ["k", *names], rows, comment)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config, outputs, **info) -> Path:
    """manifest.json listing every output with its checksum.

    Paths are stored relative to ``out_dir`` so manifests of identical runs
    into different directories are byte-identical.
    """
    out_dir = Path(out_dir)
    files = {}
    for p in outputs:
        p = Path(p)
        files[p.relative_to(out_dir).as_posix() if p.is_relative_to(out_dir) else str(p)] = sha256(p)
    manifest = {"command": command, "config": None if config is None else str(config),
                **info, "outputs": dict(sorted(files.items()))}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")
