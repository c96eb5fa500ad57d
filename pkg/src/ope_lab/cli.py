"""``ope-lab`` command-line front end.

Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 runtime or
support error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import io, scenarios
from .conditions import lemma2_gap, theorem1_condition, theorem2_condition, verify_implication
from .errors import ConfigError, ConvergenceError, EnumerationCapError, InvalidProblemError, OpeLabError, SupportError
from .estimators import returns, summarize
from .exact import distribution_dp, enumerate_returns, exact_moments
from .mdp import EvaluationProblem, target_value, validate_problem
from .montecarlo import SamplerConfig, default_workers, sample_trajectories
from .occupancy import diagnostics, occupancies
from .sweeps import asis_experiment, horizon_sweep, likelihood_rate_check, pdis_regime

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

_SCENARIOS = ("example1", "example2", "example3", "two_lane", "random_ergodic")
_INT = {"type": "integer", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "problem": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["scenario"],
                 "properties": {"scenario": {"enum": list(_SCENARIOS)}, "params": {"type": "object"}}},
                {"type": "object", "additionalProperties": False, "required": ["inline"],
                 "properties": {"inline": {"type": "object"}}},
                {"type": "object", "additionalProperties": False, "required": ["file"],
                 "properties": {"file": {"type": "string"}}},
            ]
        },
        "kinds": {"type": "array", "minItems": 1, "items": {"enum": ["IS", "PDIS", "SIS"]}},
        "method": {"enum": ["exact_dp", "enumeration", "monte_carlo"]},
        "monte_carlo": {
            "type": "object", "additionalProperties": False,
            "properties": {"seed": _INT, "num_trajectories": {"type": "integer", "minimum": 2}},
        },
        "horizons": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "gammas": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "pdis_regime": {"type": "boolean"},
        "asis": {
            "type": "object", "additionalProperties": False, "required": ["epsilons"],
            "properties": {"epsilons": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
                           "perturbation_seed": _INT},
        },
        "conditions": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "which": {"enum": ["thm1", "thm2", "both"]},
                "n": {"type": "integer", "minimum": 1},
                "seed": _INT,
                "scope": {"enum": ["literal", "restart"]},
                "max_states": {"type": "integer", "minimum": 2},
                "max_actions": {"type": "integer", "minimum": 2},
                "max_T": {"type": "integer", "minimum": 1},
                "tilted": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "rate": {"type": "object", "additionalProperties": False,
                 "properties": {"horizon": {"type": "integer", "minimum": 1}}},
        "outputs": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in
                           ("occupancy_csv", "distribution_csv", "batch_csv", "fit_json", "atoms_csv")},
        },
    },
}

_PARAMS = {
    "example1": {}, "example2": {}, "example3": {},
    "two_lane": {"horizon": int},
    "random_ergodic": {"seed": int, "num_states": int, "num_actions": int, "horizon": int,
                       "gamma": (int, float), "policy_gap": (int, float), "initial": str},
}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    io._schema_check(cfg, CONFIG_SCHEMA, "config")
    return cfg


def _scenario_params(name: str, params: dict) -> dict:
    allowed = _PARAMS[name]
    for key, value in params.items():
        if key not in allowed:
            raise ConfigError(f"config: unknown parameter '{key}' for scenario {name}")
        if isinstance(value, bool) or not isinstance(value, allowed[key]):
            raise ConfigError(f"config: parameter '{key}' of scenario {name} has the wrong type")
    if name == "two_lane" and "horizon" not in params:
        raise ConfigError("config: two_lane needs a 'horizon' parameter")
    if name == "random_ergodic":
        missing = {"seed", "num_states", "num_actions", "horizon"} - params.keys()
        if missing:
            raise ConfigError(f"config: random_ergodic is missing {sorted(missing)}")
    return params


def _build_scenario(name: str, params: dict, horizon: int | None = None) -> EvaluationProblem:
    if name.startswith("example"):
        p = scenarios.counterexample_mdp(int(name[-1]))
        return p if horizon is None else p.with_horizon(horizon)
    T = params["horizon"] if horizon is None else horizon
    if name == "two_lane":
        return scenarios.two_lane(T)
    kw = {k: v for k, v in params.items() if k not in ("seed", "num_states", "num_actions", "horizon")}
    return scenarios.random_ergodic(params["seed"], params["num_states"], params["num_actions"], T, **kw)


def build_family(cfg: dict):
    """Return ``(problem, family)`` where ``family(T)`` rebuilds the problem at horizon T."""
    src = cfg.get("problem")
    if src is None:
        raise ConfigError("config: this command needs a 'problem' section")
    try:
        if "scenario" in src:
            name = src["scenario"]
            params = _scenario_params(name, src.get("params", {}))
            problem = _build_scenario(name, params)
            return problem, lambda T: _build_scenario(name, params, T)
        problem = io.problem_from_dict(src["inline"]) if "inline" in src else io.load_problem(src["file"])
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config: cannot build problem: {exc}") from None
    return problem, problem.with_horizon


def check_problem(problem: EvaluationProblem) -> None:
    """Config error for malformed tables, support error for absolute-continuity failures."""
    violations = validate_problem(problem)
    hard = [v for v in violations if v.code != "absolute_continuity"]
    if hard:
        raise ConfigError(str(InvalidProblemError(hard)))
    if violations:
        s, a = violations[0].where
        raise SupportError("target acts where behavior never does", None, s, a)


def _sampler(cfg: dict, args, default_n: int = 1000) -> SamplerConfig:
    mc = cfg.get("monte_carlo", {})
    seed = args.seed if args.seed is not None else mc.get("seed", 0)
    return SamplerConfig(seed, mc.get("num_trajectories", default_n), args.workers)


def _show(x) -> str:
    # tables are for reading; csv/json keep full precision
    return format(float(x), ".10g") if isinstance(x, float) else io.fmt(x)


def render_table(header, rows) -> str:
    cells = [[str(h) for h in header]] + [[_show(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines) + "\n"


def emit(args, data, header=None, rows=None, table: str | None = None) -> None:
    fmt = args.format or "json"
    if fmt == "json" or header is None:
        text = io.json_text(data)
    elif fmt == "csv":
        text = io.csv_text(header, rows)
    else:
        text = table if table is not None else render_table(header, rows)
    if args.out:
        io.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def note(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_validate(args, cfg) -> int:
    problem, _ = build_family(cfg)
    violations = validate_problem(problem)
    data = {"valid": not violations,
            "violations": [{"code": v.code, "where": list(v.where), "detail": v.detail} for v in violations]}
    rows = [(v.code, " ".join(map(str, v.where)), v.detail) for v in violations]
    emit(args, data, ("code", "where", "detail"), rows)
    return EXIT_OK if not violations else EXIT_CHECK


def cmd_evaluate(args, cfg) -> int:
    problem, _ = build_family(cfg)
    check_problem(problem)
    kinds = cfg.get("kinds", ["IS", "PDIS", "SIS"])
    method = cfg.get("method", "exact_dp")
    outputs = cfg.get("outputs", {})

    try:
        diag = diagnostics(problem).as_dict()
    except ConvergenceError as exc:
        diag = {"error": str(exc)}
    report = {"horizon": problem.horizon, "gamma": problem.gamma, "v_pi": target_value(problem),
              "diagnostics": diag, "estimators": []}

    if method == "monte_carlo":
        sampler = _sampler(cfg, args)
        batch = sample_trajectories(problem, sampler)
        for k in kinds:
            est = summarize(returns(problem, k, batch))
            report["estimators"].append({"estimator": k, "method": "monte_carlo", "mean": est.estimate,
                                         "variance": est.sample_variance, "stderr": est.stderr,
                                         "n": est.n, "seed": sampler.seed})
        if "batch_csv" in outputs:
            io.write_atomic(outputs["batch_csv"], io.batch_csv(batch))
    else:
        for k in kinds:
            rep = exact_moments(problem, k, method="moment_dp" if method == "exact_dp" else "enumeration")
            report["estimators"].append(rep.as_dict())

    if "distribution_csv" in outputs:
        template = outputs["distribution_csv"]
        if len(kinds) > 1 and "{estimator}" not in template:
            raise ConfigError("config: distribution_csv needs an '{estimator}' placeholder for several kinds")
        for k in kinds:
            io.write_atomic(template.format(estimator=k), io.distribution_csv(enumerate_returns(problem, k)))
    if "occupancy_csv" in outputs:
        io.write_atomic(outputs["occupancy_csv"], io.occupancy_csv(occupancies(problem)))
    if "asis" in cfg:
        a = cfg["asis"]
        rows = asis_experiment(problem, a["epsilons"], a.get("perturbation_seed", 0))
        report["asis"] = [r.as_dict() for r in rows]

    header = ("estimator", "method", "mean", "variance")
    rows = [(e["estimator"], e["method"], e["mean"], e["variance"]) for e in report["estimators"]]
    emit(args, report, header, rows)
    if "asis" in report and not all(r["holds"] for r in report["asis"]):
        return EXIT_CHECK
    return EXIT_OK


def cmd_counterexamples(args, cfg) -> int:
    ok = True
    examples, rows, lines = [], [], []
    for which in (1, 2, 3):
        fx = scenarios.counterexample_fixture(which)
        problem = scenarios.counterexample_mdp(which)
        var = {}
        for est in scenarios.ESTIMATORS:
            enum = exact_moments(problem, est)
            dp = exact_moments(problem, est, method="moment_dp")
            expected = fx.expected_variance[est]
            dev = max(abs(fx.variance(est) - expected), abs(enum.variance - expected), abs(dp.variance - expected),
                      abs(enum.mean - fx.expected_mean), abs(fx.mean(est) - fx.expected_mean))
            ok &= dev <= 1e-9
            var[est] = enum.variance
            rows.append((which, est, enum.mean, expected, enum.variance, dp.variance))
        order = tuple(sorted(var, key=var.get))
        ok &= order == scenarios.ORDERINGS[which] and len(set(round(v, 9) for v in var.values())) == 3
        ordering = " < ".join(order)
        status = "ok" if order == scenarios.ORDERINGS[which] else "mismatch"
        examples.append({"example": which, "mean": fx.expected_mean, "variances": var, "ordering": ordering,
                         "cross_check": status})
        lines.append(f"example {which}: " + " < ".join(f"Var({e})={_show(var[e])}" for e in order)
                     + f"  [{status}]")
    if "atoms_csv" in cfg.get("outputs", {}):
        fixtures = [scenarios.counterexample_fixture(w) for w in (1, 2, 3)]
        io.write_atomic(cfg["outputs"]["atoms_csv"], io.fixture_csv(fixtures))
    header = ("example", "estimator", "mean", "variance", "variance_enumeration", "variance_moment_dp")
    emit(args, {"examples": examples, "cross_check": "ok" if ok else "deviation"}, header, rows,
         table="\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_sweep(args, cfg) -> int:
    _, family = build_family(cfg)
    if "horizons" not in cfg:
        raise ConfigError("config: sweep needs 'horizons'")
    kinds = cfg.get("kinds", ["IS", "PDIS", "SIS"])
    method = cfg.get("method", "exact_dp")
    sampler = _sampler(cfg, args) if method == "monte_carlo" or "monte_carlo" in cfg else None
    gammas = cfg.get("gammas")
    for T in cfg["horizons"]:
        try:
            problem = family(T)
        except ValueError as exc:
            raise ConfigError(f"config: horizon {T}: {exc}") from None
        check_problem(problem)

    rows, fits = [], []
    for g in gammas if gammas is not None else [None]:
        fam = family if g is None else (lambda T, g=g: family(T).with_gamma(g))
        res = horizon_sweep(fam, cfg["horizons"], kinds, method, sampler, args.workers)
        rows += res.rows
        gamma = fam(cfg["horizons"][0]).gamma
        for k in kinds:
            fit = res.fits[k].as_dict()
            fit["gamma"] = gamma
            fits.append(fit)
            if fit["alpha"] is None:
                note(f"fit {k} gamma={gamma!r}: {fit['diagnostic']}")
            else:
                note(f"fit {k} gamma={gamma!r}: alpha={fit['alpha']!r} beta={fit['beta']!r} "
                     f"T in [{fit['t_min']}, {fit['t_max']}]")
    fit_doc = {"fits": fits}
    if cfg.get("pdis_regime"):
        regime = pdis_regime(family, cfg["horizons"], gammas or [family(cfg["horizons"][0]).gamma], args.workers)
        fit_doc["pdis_regime"] = [r.__dict__ for r in regime]
    if "fit_json" in cfg.get("outputs", {}):
        io.write_atomic(cfg["outputs"]["fit_json"], io.json_text(fit_doc))

    args.format = args.format or "csv"
    emit(args, {"rows": [r.__dict__ for r in rows], **fit_doc}, io.SWEEP_HEADER,
         [(r.estimator, r.horizon, r.gamma, r.mean, r.variance, r.method, r.seed) for r in rows])
    return EXIT_OK


def cmd_conditions(args, cfg) -> int:
    if "problem" in cfg:
        problem, _ = build_family(cfg)
        check_problem(problem)
        data = {
            "theorem1": theorem1_condition(problem).as_dict(),
            "theorem1_literal": theorem1_condition(problem, scope="literal").as_dict(),
            "theorem2": theorem2_condition(problem).as_dict(),
            "lemma2": {c: dict(zip(("lhs", "rhs"), lemma2_gap(problem, c))) for c in ("prefix", "state_action")},
        }
        emit(args, data)
        ok = all(v["lhs"] >= v["rhs"] - 1e-10 for v in data["lemma2"].values())
        return EXIT_OK if ok else EXIT_CHECK

    c = cfg.get("conditions", {})
    seed = args.seed if args.seed is not None else c.get("seed", 0)
    which = c.get("which", "both")
    pop_kw = {"max_states": c.get("max_states", 4), "max_actions": c.get("max_actions", 3),
              "max_T": c.get("max_T", 5), "tilted": c.get("tilted", 0.5)}

    def population(i):
        return scenarios.random_problem(seed, i, **pop_kw)

    summaries = []
    for w in (("thm1", "thm2") if which == "both" else (which,)):
        s = verify_implication(population, c.get("n", 100), w, c.get("scope", "restart"), args.workers)
        summaries.append(s.as_dict())
        note(f"{w}: condition held on {s.n_condition_holds}/{s.n}, ordering held given condition on "
             f"{s.n_ordering_holds_given_condition}, violations {len(s.violations)}")
    emit(args, {"seed": seed, "population": pop_kw, "summaries": summaries})
    return EXIT_OK if all(not s["violations"] for s in summaries) else EXIT_CHECK


def cmd_two_lane(args, cfg) -> int:
    horizons = cfg.get("horizons", [4, 8, 16, 32, 64])
    ok = True
    rows, out = [], []
    for T in horizons:
        if T <= 3:
            raise ConfigError(f"config: two-lane horizons must exceed 3, got {T}")
        problem = scenarios.two_lane(T)
        v = {k: exact_moments(problem, k, method="moment_dp").variance for k in ("IS", "PDIS", "SIS")}
        atoms = dict(distribution_dp(problem, "SIS").atoms)
        good = abs(v["SIS"] - T * T) <= 1e-9 * T * T
        good &= atoms.keys() == {0.0, float(2 * T)} and all(abs(p - 0.5) <= 1e-12 for p in atoms.values())
        ok &= good
        out.append({"horizon": T, "variance": v, "t_squared": T * T, "v_pi": target_value(problem),
                    "sis_atoms": [[x, p] for x, p in sorted(atoms.items())],
                    "ok": good})
        rows.append((T, v["IS"], v["PDIS"], v["SIS"], T * T, "ok" if good else "fail"))
    header = ("horizon", "var_is", "var_pdis", "var_sis", "t_squared", "status")
    emit(args, {"two_lane": out}, header, rows)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_rate_check(args, cfg) -> int:
    problem, _ = build_family(cfg)
    check_problem(problem)
    T = cfg.get("rate", {}).get("horizon", 10_000)
    res = likelihood_rate_check(problem, T, _sampler(cfg, args, default_n=100))
    data = res.as_dict()
    data["within_3_stderr"] = bool(res.deviation <= 3 * res.stderr) if math.isfinite(res.stderr) else False
    emit(args, data, tuple(data), [tuple(data.values())])
    return EXIT_OK if data["within_3_stderr"] else EXIT_CHECK


COMMANDS = {
    "validate": cmd_validate,
    "evaluate": cmd_evaluate,
    "counterexamples": cmd_counterexamples,
    "sweep": cmd_sweep,
    "conditions": cmd_conditions,
    "two-lane": cmd_two_lane,
    "rate-check": cmd_rate_check,
}


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _u64(text: str) -> int:
    n = int(text)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="write the main output here instead of stdout")
    common.add_argument("--workers", type=_positive, default=default_workers(), help="worker threads")
    common.add_argument("--seed", type=_u64, help="override the configured sampling seed")
    common.add_argument("--format", choices=("csv", "json", "table"), help="output format")
    parser = argparse.ArgumentParser(prog="ope-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InvalidProblemError) as exc:
        note(f"error: {exc}")
        return EXIT_CONFIG
    except (SupportError, EnumerationCapError, ConvergenceError, OpeLabError) as exc:
        note(f"error: {exc}")
        return EXIT_RUNTIME
    except (ValueError, ArithmeticError) as exc:
        note(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
