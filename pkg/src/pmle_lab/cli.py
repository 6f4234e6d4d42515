"""``pmle-lab`` command line.

Exit codes: 0 success, 1 invalid input (one JSON line on stderr), 2 a bound
was violated empirically in a validation run.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bounds, mcharness, models, pmle, quadform
from .errors import ConfigError, PmleLabError
from .mcharness import ExperimentConfig

EXIT_OK, EXIT_INVALID, EXIT_VIOLATION = 0, 1, 2
CONFIG_KEYS = ("kind", "params", "x_grid", "replicates", "master_seed", "parallel_width")


def _g(v: Optional[float]) -> float:
    return math.inf if v is None else v


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def load_config(path, kind: Optional[str] = None) -> ExperimentConfig:
    """Read a JSON experiment config, rejecting unknown keys and filling defaults."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw, kind)


def config_from_dict(raw: dict, kind: Optional[str] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {unknown}")
    k = raw.get("kind", kind)
    if k is None:
        raise ConfigError("config needs a 'kind'")
    if kind is not None and k != kind:
        raise ConfigError(f"config kind {k!r} conflicts with --kind {kind!r}")
    if k not in mcharness.KINDS:
        raise ConfigError(f"unknown kind {k!r}")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("'params' must be an object")
    defaults = mcharness.PARAM_DEFAULTS[k]
    bad = sorted(set(params) - set(defaults))
    if bad:
        raise ConfigError(f"unknown param key(s) for {k}: {bad}")
    merged = dict(defaults)
    merged.update(params)
    return ExperimentConfig(
        kind=k,
        params=merged,
        x_grid=list(raw.get("x_grid", mcharness.DEFAULT_X_GRID)),
        replicates=raw.get("replicates", mcharness.DEFAULT_REPLICATES[k]),
        master_seed=raw.get("master_seed", 0),
        parallel_width=raw.get("parallel_width", 1),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {"kind": cfg.kind, "params": cfg.params, "x_grid": cfg.x_grid, "replicates": cfg.replicates,
            "master_seed": cfg.master_seed, "parallel_width": cfg.parallel_width}


def _cmd_bounds(a) -> int:
    t = bounds.TailParams(a.nu0, _g(a.g))
    if a.entropy == "ball":
        e = bounds.ball_entropy(a.p)
    elif a.entropy == "vector":
        e = bounds.vector_norm_entropy(a.p, a.q)
    elif a.entropy == "penalized":
        if not a.diag:
            raise ConfigError("--entropy penalized needs --diag")
        e = bounds.penalized_entropy(np.diag(a.diag))
    else:
        if not a.log2m:
            raise ConfigError("--entropy series needs --log2m")
        e = bounds.entropy_series(a.log2m)
    out = {"q1": e.q1, "q2": e.q2, "z_h": bounds.zz_quantile(a.x, e, t, a.rule)}
    if a.r is not None:
        out["sup_bound"] = bounds.sup_bound(a.r, t, e, a.x, a.factor)
    _emit(out)
    return EXIT_OK


def _cmd_effdim(a) -> int:
    if a.example == "block":
        v = quadform.effdim_block(a.p0, a.p1, a.g, a.sigma)
    elif a.example == "sobolev":
        v = quadform.effdim_sobolev(a.p, a.L, a.beta, a.sigma)
    else:
        v = quadform.effdim_inverse(a.v, a.d, a.gj if a.gj else [0.0] * len(a.v))
    print(f"{v:.{a.digits}f}")
    return EXIT_OK


def _cmd_quadform(a) -> int:
    if a.config:
        raw = json.loads(Path(a.config).read_text())
        unknown = sorted(set(raw) - {"d_g_sq", "v0_sq", "b"})
        if unknown:
            raise ConfigError(f"unknown quadform key(s): {unknown}")
        if "b" in raw:
            spec = quadform.quadform_from_b(np.asarray(raw["b"], dtype=float), _g(a.g))
        else:
            spec = quadform.build_quadform(np.asarray(raw["d_g_sq"]), np.asarray(raw["v0_sq"]), _g(a.g))
    elif a.b:
        spec = quadform.quadform_from_b(np.diag(a.b), _g(a.g))
    else:
        raise ConfigError("quadform needs --b or --config")
    out = {k: getattr(spec, k) for k in ("p_g", "v_g", "lambda_g", "mu_c", "gamma_c", "x_c", "y_c")}
    out["quantiles"] = [{"x": x, "z": quadform.quad_quantile(spec, x, a.mode), "tail_bound": quadform.quad_tail_bound(spec, x)}
                        for x in a.x]
    _emit({k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in out.items()})
    return EXIT_OK


def _cmd_pmle_fit(a) -> int:
    raw = json.loads(Path(a.model).read_text())
    g_sq = raw.pop("g_sq", None)
    spec = models.ModelSpec.from_dict(raw)
    pen = pmle.PenaltySpec(np.asarray(g_sq, dtype=float)) if g_sq is not None else pmle.PenaltySpec.ridge(spec.p, a.ridge)
    if a.data:
        data = models.Dataset.from_csv(Path(a.data).read_text(), spec)
    else:
        data = models.simulate(spec, a.seed)
    fit = pmle.fit_pmle(spec, data, pen, tol_grad=a.tol, max_iter=a.max_iter)
    out = {"fit": fit._asdict()}
    if fit.converged:
        geom = pmle.geometry(spec, pen)
        out["theta_star_g"] = geom.theta_star_g
        out["diagnostics"] = pmle.expansion_diagnostics(spec, data, pen, geom, fit)._asdict()
    _emit(out)
    return EXIT_OK if fit.converged else EXIT_INVALID


def _violated(report) -> bool:
    if isinstance(report, mcharness.McReport):
        return bool(report.violations())
    if isinstance(report, mcharness.RiskReport):
        return not report.below_bound()
    return False


def _cmd_mc(a) -> int:
    if a.config:
        cfg = load_config(a.config, a.kind)
    elif a.kind:
        cfg = config_from_dict({"kind": a.kind})
    else:
        raise ConfigError("mc needs --kind or --config")
    if a.seed is not None:
        cfg.master_seed = int(a.seed)
    if a.replicates is not None:
        cfg = config_from_dict(dict(config_to_dict(cfg), replicates=a.replicates))
    if a.parallel_width is not None:
        cfg.parallel_width = int(a.parallel_width)
    report = mcharness.run(cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    (out / "report.json").write_text(report.to_json() + "\n")
    csv_text = report.to_csv()
    (out / "report.csv").write_text(csv_text)
    sys.stdout.write(csv_text)
    return EXIT_VIOLATION if _violated(report) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmle-lab", description="Deviation bounds for penalized MLE and their Monte Carlo checks.")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="entropy constants and the tail quantile z_H(x)")
    b.add_argument("--entropy", choices=["ball", "vector", "penalized", "series"], default="ball")
    b.add_argument("--p", type=int, default=1)
    b.add_argument("--q", type=int, default=1)
    b.add_argument("--diag", type=float, nargs="*", help="eigenvalues of B for --entropy penalized")
    b.add_argument("--log2m", type=float, nargs="*", help="log(2M_k) terms for --entropy series")
    b.add_argument("--x", type=float, default=1.0)
    b.add_argument("--g", type=float, default=None, help="omit for g = infinity")
    b.add_argument("--nu0", type=float, default=1.0)
    b.add_argument("--rule", choices=list(bounds.RULES), default="auto")
    b.add_argument("--r", type=float, default=None, help="also print the sup bound at this radius")
    b.add_argument("--factor", choices=list(bounds.FACTORS), default="scalar")
    b.set_defaults(func=_cmd_bounds)

    e = sub.add_parser("effdim", help="closed-form effective dimension examples")
    e.add_argument("--example", choices=["block", "sobolev", "inverse"], required=True)
    e.add_argument("--p", type=int, default=10)
    e.add_argument("--p0", type=int, default=0)
    e.add_argument("--p1", type=int, default=0)
    e.add_argument("--g", type=float, default=0.0)
    e.add_argument("--L", type=float, default=1.0)
    e.add_argument("--beta", type=float, default=1.0)
    e.add_argument("--sigma", type=float, default=1.0)
    e.add_argument("--v", type=float, nargs="*", default=[])
    e.add_argument("--d", type=float, default=1.0)
    e.add_argument("--gj", type=float, nargs="*", default=[])
    e.add_argument("--digits", type=int, default=6)
    e.set_defaults(func=_cmd_effdim)

    q = sub.add_parser("quadform", help="quantiles and tail bounds for ||xi_G||")
    q.add_argument("--b", type=float, nargs="*", help="diagonal of B_G")
    q.add_argument("--config", help="JSON with 'b' or with 'd_g_sq' and 'v0_sq'")
    q.add_argument("--g", type=float, default=None)
    q.add_argument("--x", type=float, nargs="+", default=list(mcharness.DEFAULT_X_GRID))
    q.add_argument("--mode", choices=["full", "simple"], default="full")
    q.set_defaults(func=_cmd_quadform)

    f = sub.add_parser("pmle-fit", help="fit a penalized MLE and report the expansion residuals")
    f.add_argument("--model", required=True, help="JSON with family, design, theta_star, noise_sigma, optional g_sq")
    f.add_argument("--data", help="CSV with columns row,response; simulated when omitted")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--ridge", type=float, default=1.0)
    f.add_argument("--tol", type=float, default=1e-9)
    f.add_argument("--max-iter", type=int, default=200)
    f.set_defaults(func=_cmd_pmle_fit)

    m = sub.add_parser("mc", help="run a Monte Carlo validation experiment")
    m.add_argument("--kind", choices=list(mcharness.KINDS))
    m.add_argument("--config")
    m.add_argument("--seed", type=int)
    m.add_argument("--replicates", type=int)
    m.add_argument("--parallel-width", type=int)
    m.add_argument("--out", default="pmle_lab_out")
    m.set_defaults(func=_cmd_mc)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return EXIT_OK
        sys.stderr.write(json.dumps({"error": "UsageError", "message": "invalid command line"}) + "\n")
        return EXIT_INVALID
    try:
        return a.func(a)
    except (PmleLabError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_INVALID


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
