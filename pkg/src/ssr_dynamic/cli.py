"""Command-line front end: YAML scenario configs in, CSV/JSON data out.

    ssr-dynamic rule      --config cfg.yaml --out DIR
    ssr-dynamic calibrate --config cfg.yaml
    ssr-dynamic audit     --config cfg.yaml [--curve rule.csv]
    ssr-dynamic simulate  --config cfg.yaml --reps 100000 --seed 7
    ssr-dynamic scenario  {cpz_audit,jt_vs_lr,roi,timing}

Exit status is 0 on success, 1 for invalid input and 2 when a numerical
method fails.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import audit as audit_mod
from . import conditional_power as cpw
from . import rule_engine as rules
from .calibration import BudgetPower, MatchReference, calibrate_lambdas, operating_chars_quadrature
from .cost_model import Tabulated
from .errors import InfeasibleTargetError, NumericalError, ValidationError
from .scenarios import PRESETS, load_preset
from .stat_core import DesignParams, norm_cdf
from .trial_sim import SimConfig, increase_threshold, simulate_batch

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _schema():
    text = resources.files(__package__).joinpath("schema", "config.schema.json").read_text()
    return json.loads(text)


def validate_config(cfg) -> dict:
    """Check a parsed config against the bundled JSON schema."""
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a mapping")
    validator = jsonschema.Draft202012Validator(_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValidationError(f"config field {where}: {err.message}")
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: not valid YAML ({exc})") from None
    cfg = validate_config(cfg)
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def design_from(cfg) -> DesignParams:
    block = dict(cfg["design"])
    if "z_alpha" in block:
        block["alpha"] = 1.0 - norm_cdf(block.pop("z_alpha"))
    return DesignParams(**block)


def _path(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def build_rule(block, design, cfg):
    fam = block["family"]
    if fam == "jt":
        return rules.jt(block["gamma"])
    if fam == "lr":
        return rules.lr(block["lambda1"], block["lambda2"])
    if fam == "roi":
        return rules.roi(block["c"], block["v"], block.get("pi0", 0.5), block.get("pi1", 0.5))
    if fam == "tabulated":
        cost = Tabulated.from_csv(_path(cfg, block["csv"])) if "csv" in block else Tabulated(block["z"], block["gamma"])
        return rules.CostRule(cost)
    if fam == "cpz":
        r = rules.cpz(block["n_lo"], block["n_hi"], block.get("cp_floor", 0.8), block.get("cp_ceiling", 0.9))
        r.params.validate(design)
        return r
    if fam == "curve":
        return rules.RuleCurve.from_csv(_path(cfg, block["csv"]), design, block.get("n_lo"), block.get("n_hi"))
    raise ValidationError(f"unknown rule family {fam!r}")


def rules_from(cfg, design) -> dict:
    blocks = cfg.get("rules") or []
    if not blocks:
        raise ValidationError("config field rules: at least one rule is required")
    out = {}
    for i, block in enumerate(blocks):
        name = block.get("name", f"{block['family']}_{i}")
        if name in out:
            raise ValidationError(f"config field rules/{i}/name: duplicate rule name {name!r}")
        out[name] = build_rule(block, design, cfg)
    return out


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    text = json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")
    print(path)


def _grid(cfg):
    g = cfg.get("grid", {})
    return g.get("z_lo"), g.get("z_hi"), g.get("n_points", 501)


def _curve(rule, design, cfg):
    if isinstance(rule, rules.RuleCurve):
        return rule
    z_lo, z_hi, n = _grid(cfg)
    return rules.tabulate_rule(rule, design, z_lo, z_hi, n)


def _quad_tol(cfg):
    return cfg.get("quadrature", {}).get("tol", 1e-7)


# -- actions ---------------------------------------------------------------


def cmd_rule(cfg, out: Path):
    design = design_from(cfg)
    for name, rule in rules_from(cfg, design).items():
        path = out / f"rule_{name}.csv"
        _curve(rule, design, cfg).to_csv(path)
        print(path)


def cmd_oc(cfg, out: Path):
    design = design_from(cfg)
    report = {"design": design.as_dict(), "rules": {}}
    for name, rule in rules_from(cfg, design).items():
        oc = operating_chars_quadrature(rule, design, tol=_quad_tol(cfg))
        report["rules"][name] = {"rule": rules.as_rule(rule).describe(), **oc.as_dict()}
    write_json(out / "operating_chars.json", report)


def cmd_calibrate(cfg, out: Path):
    design = design_from(cfg)
    block = cfg.get("calibrate")
    if block is None:
        raise ValidationError("config field calibrate: required for the calibrate action")
    if block["target"] == "budget_power":
        target = BudgetPower(block["b0"], block["pi_target"])
    else:
        named = rules_from(cfg, design)
        ref = block["reference"]
        if ref not in named:
            raise ValidationError(f"config field calibrate/reference: no rule named {ref!r}")
        target = MatchReference(named[ref], block.get("quantity", "e_n_alt"), block.get("ratio", 0.62 / 0.65))
    try:
        result = calibrate_lambdas(target, design, gamma_ref=block.get("gamma_ref"))
    except InfeasibleTargetError as exc:
        write_json(out / "calibration.json", {"design": design.as_dict(), "feasible": False, "report": exc.report})
        raise
    body = result.as_dict()
    body.pop("trace")
    write_json(out / "calibration.json", {"design": design.as_dict(), "feasible": True, **body})


def cmd_audit(cfg, out: Path, curve_csv=None):
    design = design_from(cfg)
    tol = cfg.get("audit", {}).get("tol_participants", 1.0)
    if curve_csv is not None:
        named = {Path(curve_csv).stem: rules.RuleCurve.from_csv(curve_csv, design)}
    else:
        named = rules_from(cfg, design)
    for name, rule in named.items():
        curve = _curve(rule, design, cfg)
        report = audit_mod.implied_cost(curve, design)
        rt = audit_mod.roundtrip_check(curve, design, tol)
        report.to_csv(out / f"audit_{name}.csv")
        print(out / f"audit_{name}.csv")
        body = report.as_dict()
        body["roundtrip"] = {"tol_participants": tol, "passed": rt.passed, **rt.counts()}
        write_json(out / f"audit_{name}.json", body)


def cmd_simulate(cfg, out: Path, reps=None, seed=None):
    design = design_from(cfg)
    sim = cfg.get("simulate", {})
    reps = sim.get("reps", 100_000) if reps is None else reps
    seed = sim.get("seed", 1) if seed is None else seed
    thetas = sim.get("theta_true", [0.0, design.theta_alt])
    workers = sim.get("workers", 1)
    report = {"design": design.as_dict(), "reps": reps, "seed": seed, "rules": {}}
    for name, rule in rules_from(cfg, design).items():
        per = {}
        for theta in thetas:
            res = simulate_batch(SimConfig(rules.as_rule(rule), reps, seed, float(theta)), design, workers)
            per[f"{float(theta):g}"] = res.as_dict()
        report["rules"][name] = per
    write_json(out / "simulate.json", report)


def cmd_timing(cfg, out: Path):
    design = design_from(cfg)
    named = rules_from(cfg, design)
    _, _, n_points = _grid(cfg)
    summary = {"base_design": design.as_dict(), "n1": {}}
    for n1 in cfg["timing"]["n1_values"]:
        if not 0 < n1 < design.n_min:
            raise ValidationError(f"config field timing/n1_values: {n1} must lie in (0, n_min)")
        d = design.replace(n1=n1)
        entry = {"design": d.as_dict(), "increase_threshold": {}, "operating_chars": {}}
        for name, rule in named.items():
            path = out / f"rule_{name}_n1_{n1:g}.csv"
            rules.tabulate_rule(rule, d, n_points=n_points).to_csv(path)
            print(path)
            entry["increase_threshold"][name] = increase_threshold(rule, d)
            entry["operating_chars"][name] = operating_chars_quadrature(rule, d, tol=_quad_tol(cfg)).as_dict()
        summary["n1"][f"{n1:g}"] = entry
    write_json(out / "timing.json", summary)


def cpz_geometry(rule: rules.CpzRule, design: DesignParams) -> dict:
    p = rule.params
    return {
        "lower_edge": cpw.solve_z1_for_cp(p.n_hi, p.cp_floor, design),
        "turning_point": cpw.solve_z1_for_cp(p.n_hi, p.cp_ceiling, design),
        "upper_edge": cpw.solve_z1_for_cp(p.n_lo, p.cp_ceiling, design),
        "concavity_z_threshold": cpw.concavity_z_threshold(design, p.n_lo, p.n_hi),
        "concavity_cp_bound": cpw.concavity_cp_bound(design, p.n_hi),
    }


def cmd_geometry(cfg, out: Path):
    design = design_from(cfg)
    found = False
    for name, rule in rules_from(cfg, design).items():
        if isinstance(rule, rules.CpzRule):
            found = True
            write_json(out / f"geometry_{name}.json", {"design": design.as_dict(), **cpz_geometry(rule, design)})
    if not found:
        raise ValidationError("config field rules: the geometry action needs a cpz rule")


ACTIONS = {
    "rule": cmd_rule,
    "oc": cmd_oc,
    "calibrate": cmd_calibrate,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
    "timing": cmd_timing,
    "geometry": cmd_geometry,
}


def run_config(cfg, out: Path, actions, reps=None, seed=None):
    out.mkdir(parents=True, exist_ok=True)
    for act in actions:
        if act == "simulate":
            cmd_simulate(cfg, out, reps, seed)
        else:
            ACTIONS[act](cfg, out)


# -- argument handling -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must lie in [0, 2**64)")
    return v


def build_parser():
    parser = _Parser(prog="ssr-dynamic", description="Sample size re-estimation with dynamic cost functions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML scenario file")
        p.add_argument("--out", help="output directory (default: config 'output' or ./out)")
        p.add_argument("--seed", type=_seed, help="simulation seed, overrides the config")
        p.add_argument("--reps", type=_positive_int, help="simulation replicates, overrides the config")
        return p

    common(sub.add_parser("rule", help="tabulate every rule to CSV"))
    common(sub.add_parser("calibrate", help="solve for LR multipliers"))
    a = common(sub.add_parser("audit", help="implied-cost audit of rules or an external curve"))
    a.add_argument("--curve", help="audit this rule CSV instead of the config's rules")
    common(sub.add_parser("simulate", help="Monte Carlo operating characteristics"))
    s = common(sub.add_parser("scenario", help="run a bundled preset end to end"), config_required=False)
    s.add_argument("preset", help=f"one of: {', '.join(PRESETS)}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scenario":
            cfg = validate_config(load_preset(args.preset))
            out = Path(args.out or f"out/{args.preset}")
            run_config(cfg, out, cfg.get("actions", ["rule"]), args.reps, args.seed)
            return EXIT_OK
        cfg = load_config(args.config)
        out = Path(args.out or cfg.get("output", "out"))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "audit":
            cmd_audit(cfg, out, args.curve)
        elif args.command == "simulate":
            cmd_simulate(cfg, out, args.reps, args.seed)
        else:
            ACTIONS[args.command](cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
