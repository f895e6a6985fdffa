"""CSV formats.

* bandit log: ``x1..xd, action, reward, p1..pK`` with 1-based actions
* score matrix: ``g1..gK``
* stratified estimates: ``stratum, estimate, variance, weight``
* payoff / numeric matrices: plain rows, header optional

Result tables written by the CLI start with a ``# config:`` comment line
holding the resolved configuration, then a header row.
"""
from __future__ import annotations

import csv
import io
import json
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .core import EstimatorTag, LoggedBanditData, ScoreMatrix


def format_number(v) -> str:
    """Shortest round-trip text for floats; integers stay integral."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _rows(source) -> list[list[str]]:
    if isinstance(source, str):
        with open(source, newline="") as fh:
            return _rows(fh)
    return [row for row in csv.reader(line for line in source if not line.lstrip().startswith("#"))
            if row and any(cell.strip() for cell in row)]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_matrix_csv(source) -> tuple[Optional[list[str]], np.ndarray]:
    """Numeric matrix with an optional header row (detected when any cell is non-numeric)."""
    rows = _rows(source)
    if not rows:
        raise ValueError("empty CSV input")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise ValueError("CSV has a header but no data rows")
    width = len(rows[0])
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} fields, expected {width}")
    try:
        data = np.array([[float(c) for c in row] for row in rows])
    except ValueError as exc:
        raise ValueError(f"non-numeric CSV entry: {exc}") from None
    return header, data


def write_log_csv(log: LoggedBanditData, stream: TextIO) -> None:
    d, k = log.covariates.shape[1], log.num_actions
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(d)] + ["action", "reward"] + [f"p{a + 1}" for a in range(k)])
    for x, a, y, p in zip(log.covariates, log.actions, log.rewards, log.behavior_props):
        w.writerow([format_number(v) for v in x] + [int(a) + 1, format_number(y)]
                   + [format_number(v) for v in p])


def read_log_csv(source, reward_bound: Optional[float] = None) -> LoggedBanditData:
    header, data = read_matrix_csv(source)
    if header is None or "action" not in header or "reward" not in header:
        raise ValueError("log CSV needs a header with 'action' and 'reward' columns")
    ia, iy = header.index("action"), header.index("reward")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    pcols = [i for i, h in enumerate(header) if h.startswith("p")]
    if not pcols:
        raise ValueError("log CSV needs behavior probability columns p1..pK")
    actions = data[:, ia]
    if np.any(actions != np.round(actions)) or actions.min() < 1:
        raise ValueError("actions must be integers starting at 1")
    return LoggedBanditData(data[:, xcols], actions.astype(np.int64) - 1, data[:, iy],
                            data[:, pcols], reward_bound)


def write_scores_csv(scores: ScoreMatrix, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([f"g{a + 1}" for a in range(scores.shape[1])])
    for row in scores.scores:
        w.writerow([format_number(v) for v in row])


def read_scores_csv(source, tag: EstimatorTag = EstimatorTag.AIPW) -> ScoreMatrix:
    _, data = read_matrix_csv(source)
    return ScoreMatrix(data, tag)


STRATIFIED_HEADER = ("stratum", "estimate", "variance", "weight")


def stratified_rows(est, weights) -> list[list]:
    return [[m + 1, est.d_values[m], est.sigma2[m], weights[m]] for m in range(est.n_strata)]


def format_config(config: dict) -> str:
    return "# config: " + " ".join(f"{k}={_config_value(config[k])}" for k in sorted(config))


def _config_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(format_number(x) for x in v)
    return format_number(v)


def render_table(header: Sequence[str], rows: Iterable[Sequence], config: dict,
                 as_json: bool = False) -> str:
    rows = [list(r) for r in rows]
    if as_json:
        records = [{h: _json_value(v) for h, v in zip(header, r)} for r in rows]
        return json.dumps({"config": {k: _json_value(v) for k, v in sorted(config.items())},
                           "records": records}, indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write(format_config(config) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_number(v) for v in r])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v
