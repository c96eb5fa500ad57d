"""Problem documents, CSV/JSON exports and atomic file writes."""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .errors import ConfigError
from .mdp import EvaluationProblem, PolicyTable, TabularMdp

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["num_states", "num_actions", "horizon", "gamma", "transition", "reward",
                 "initial_dist", "behavior", "target"],
    "properties": {
        "num_states": {"type": "integer", "minimum": 1},
        "num_actions": {"type": "integer", "minimum": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "gamma": {"type": "number", "minimum": 0, "maximum": 1},
        "transition": {"type": "array", "items": _MATRIX},
        "reward": {"type": "array", "items": {"type": "array"}},
        "initial_dist": {"type": "array", "items": {"type": "number"}},
        "behavior": _MATRIX,
        "target": _MATRIX,
        "absorbing_state": {"type": ["integer", "null"], "minimum": 0},
    },
}


def _schema_check(doc, schema, what: str) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {exc.message} at {where}") from None


def _array(doc, key, shape) -> np.ndarray:
    try:
        arr = np.array(doc[key], dtype=float)
    except ValueError:
        raise ConfigError(f"problem: '{key}' is ragged") from None
    if arr.shape != shape:
        raise ConfigError(f"problem: '{key}' has shape {arr.shape}, expected {shape}")
    return arr


def problem_from_dict(doc: dict) -> EvaluationProblem:
    """Build a problem from its JSON document; shapes are checked, semantics are not."""
    _schema_check(doc, PROBLEM_SCHEMA, "problem")
    S, A, T = doc["num_states"], doc["num_actions"], doc["horizon"]
    P = _array(doc, "transition", (S, A, S))
    try:
        R = np.array(doc["reward"], dtype=float)
    except ValueError:
        raise ConfigError("problem: 'reward' is ragged") from None
    if R.shape == (S, A):
        R = np.broadcast_to(R, (T, S, A))
    elif R.shape != (T, S, A):
        raise ConfigError(f"problem: 'reward' has shape {R.shape}, expected ({S}, {A}) or ({T}, {S}, {A})")
    p1 = _array(doc, "initial_dist", (S,))
    mu = _array(doc, "behavior", (S, A))
    pi = _array(doc, "target", (S, A))
    absorbing = doc.get("absorbing_state")
    if absorbing is not None and absorbing >= S:
        raise ConfigError(f"problem: absorbing_state {absorbing} out of range")
    mdp = TabularMdp(P, R, p1, doc["gamma"], absorbing)
    return EvaluationProblem(mdp, PolicyTable(mu), PolicyTable(pi))


def problem_to_dict(problem: EvaluationProblem) -> dict:
    """JSON document for a problem; time-constant rewards are written as one [s][a] table."""
    mdp = problem.mdp
    R = mdp.reward
    stationary = bool(np.all(R == R[0]))
    doc = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "gamma": mdp.gamma,
        "transition": mdp.transition.tolist(),
        "reward": (R[0] if stationary else R).tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "behavior": problem.behavior.probs.tolist(),
        "target": problem.target.probs.tolist(),
    }
    if mdp.absorbing is not None:
        doc["absorbing_state"] = int(mdp.absorbing)
    return doc


def load_problem(path: str | os.PathLike) -> EvaluationProblem:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read problem file {path}: {exc}") from None
    return problem_from_dict(doc)


def fmt(x) -> str:
    """Cell text: ints as-is, floats by repr (round-trips exactly), None empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no infinities; keep them readable
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def json_text(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


OCCUPANCY_HEADER = ("t", "s", "a", "d_mu", "d_pi", "ratio")
DISTRIBUTION_HEADER = ("value", "probability")
BATCH_HEADER = ("traj_id", "t", "s", "a", "r")
SWEEP_HEADER = ("estimator", "horizon", "gamma", "mean", "variance", "method", "seed")
FIXTURE_HEADER = ("example", "estimator", "path", "value", "probability")


def occupancy_csv(tables) -> str:
    return csv_text(OCCUPANCY_HEADER, tables.rows())


def distribution_csv(dist) -> str:
    return csv_text(DISTRIBUTION_HEADER, zip(dist.values, dist.probs))


def batch_csv(batch) -> str:
    N, T = batch.states.shape

    def rows():
        for i in range(N):
            for t in range(T):
                yield i, t + 1, batch.states[i, t], batch.actions[i, t], batch.rewards[i, t]

    return csv_text(BATCH_HEADER, rows())


def sweep_csv(rows) -> str:
    return csv_text(SWEEP_HEADER, ((r.estimator, r.horizon, r.gamma, r.mean, r.variance, r.method, r.seed)
                                   for r in rows))


def fixture_csv(fixtures) -> str:
    from .scenarios import PATHS

    def rows():
        for fx in fixtures:
            for est, values in fx.returns.items():
                for path, v, p in zip(PATHS, values, fx.path_probs):
                    yield fx.which, est, path, v, p

    return csv_text(FIXTURE_HEADER, rows())
