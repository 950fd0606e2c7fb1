"""Config-driven command line: simulate | verify | invert | omega | sweep.

Configs are TOML files (grammar documented in the README).  Exit codes:
0 success, 2 config error, 3 blow-up, 4 hypothesis hard-fail, 5 inversion
residual above tolerance, 6 no return pairs found.  The LOG_LEVEL environment
variable controls logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import Optional, Union

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .baseflow import BasePoint, MatrixCoefficient, TorusBase, TrigCoefficient, VectorCoefficient
from .fde import BlowUpError, FdeModel, ReturnPairError, integrate, omega_limit_probe
from .history import HistoryFunction, OrderParams, constant_history
from .models import CompartmentalSpec, audit_hypotheses, build_compartmental_nfde, build_scalar_fde
from .neutral import NfdeModel, integrate_nfde, invert_along_flow, nfde_omega_probe

SCHEMA_VERSION = "1"

log = logging.getLogger("fadeflow")


class ConfigError(ValueError):
    """Invalid run configuration; the message carries located diagnostics."""


def _fail(msg: str) -> "ConfigError":
    return ConfigError(msg)


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise _fail(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise _fail(f"config parse error in {path}: {exc}") from None


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise _fail(f"missing key {key!r} in [{where}]")
    return cfg[key]


def build_base(cfg: dict) -> TorusBase:
    bc = cfg.get("base")
    if bc is None:
        raise _fail("missing [base] section")
    freq = _require(bc, "freq", "base")
    coeffs = {}
    for cid, spec in cfg.get("coeffs", {}).items():
        terms = [
            (t.get("k", [0]), float(t.get("amp", 0.0)), float(t.get("phase", 0.0)))
            for t in spec.get("terms", [])
        ]
        coeffs[cid] = TrigCoefficient(terms, offset=float(spec.get("offset", 0.0)))
    return TorusBase(freq, coeffs)


def _entry_list(raw) -> list:
    out = []
    for e in raw:
        if isinstance(e, dict):  # {id = "f", scale = -1.0}
            out.append((e["id"], float(e.get("scale", 1.0))))
        else:
            out.append(e)
    return out


def _matrix(raw) -> MatrixCoefficient:
    return MatrixCoefficient([_entry_list(row) for row in raw])


def build_model(cfg: dict) -> Union[FdeModel, NfdeModel]:
    base = build_base(cfg)
    mc = cfg.get("model")
    if mc is None:
        raise _fail("missing [model] section")
    grid = cfg.get("grid", {})
    step = float(grid.get("dt", 0.01))
    depth = grid.get("depth")
    depth = float(depth) if depth is not None else None
    family = _require(mc, "family", "model")
    tol = float(mc.get("order_tol", 1e-9))
    if family == "scalar_fde":
        return build_scalar_fde(
            base,
            alpha=float(_require(mc, "alpha", "model")),
            beta=float(mc.get("beta", 0.0)),
            gamma=float(mc.get("gamma", 1.0)),
            forcing=_entry_list(mc["forcing"]) if "forcing" in mc else None,
            step=step,
            depth=depth,
            tol=tol,
        )
    if family == "linear_fde":
        dim = int(_require(mc, "dim", "model"))
        if depth is None:
            raise _fail("[grid] depth is required for family 'linear_fde'")
        order = OrderParams(np.asarray(_require(mc, "order_diag", "model"), dtype=float), tol=tol)
        delay_terms = tuple(
            (float(t["r"]), _matrix(t["coeff"])) for t in mc.get("delay_terms", [])
        )
        dist_terms = tuple(
            (float(t["decay"]), _matrix(t["coeff"])) for t in mc.get("dist_terms", [])
        )
        return FdeModel(
            base=base,
            dim=dim,
            step=step,
            depth=depth,
            order=order,
            linear_inst=_matrix(mc["linear_inst"]) if "linear_inst" in mc else None,
            delay_terms=delay_terms,
            dist_terms=dist_terms,
            forcing=VectorCoefficient(_entry_list(mc["forcing"])) if "forcing" in mc else None,
        )
    if family == "compartmental_nfde":
        spec = CompartmentalSpec(
            m=int(_require(mc, "m", "model")),
            transports=_require(mc, "transports", "model"),
            transport_delays=_require(mc, "transport_delays", "model"),
            neutral=_require(mc, "neutral", "model"),
            neutral_delays=_require(mc, "neutral_delays", "model"),
            inflows=_require(mc, "inflows", "model"),
        )
        return build_compartmental_nfde(
            base,
            spec,
            order_diag=_require(mc, "order_diag", "model"),
            step=step,
            depth=depth,
            tol=tol,
        )
    raise _fail(f"unknown model family {family!r}")


_SAFE_EXPR_GLOBALS = {
    "np": np,
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
    "pi": math.pi,
}


def build_initial(spec: dict, model) -> HistoryFunction:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        value = spec.get("value", [0.0] * model.dim)
        if np.ndim(value) == 0:
            value = [float(value)] * model.dim
        return constant_history(value, model.step, model.depth)
    if kind == "expression":
        expr = _require(spec, "expr", "run.initial")
        n = round(model.depth / model.step)
        s = (np.arange(n + 1) - n) * model.step
        try:
            vals = eval(expr, {"__builtins__": {}}, dict(_SAFE_EXPR_GLOBALS, s=s))
        except Exception as exc:
            raise _fail(f"initial expression failed: {exc}") from None
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 1:
            vals = np.tile(vals[:, None], (1, model.dim))
        samples = np.broadcast_to(vals, (n + 1, model.dim)).copy()
        return HistoryFunction(model.step, samples)  # tail pinned to the value at -depth
    if kind == "file":
        path = _require(spec, "path", "run.initial")
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        if data.shape[1] != model.dim + 1:
            raise _fail(f"initial file must have columns s, x_1..x_{model.dim}")
        return HistoryFunction(model.step, data[:, 1:])
    raise _fail(f"unknown initial kind {kind!r}")


def _run_section(cfg: dict, model) -> tuple[BasePoint, HistoryFunction, float]:
    rc = cfg.get("run", {})
    theta0 = rc.get("theta0", [0.0] * model.base.dim_base)
    point0 = BasePoint(np.asarray(theta0, dtype=float))
    x0 = build_initial(rc.get("initial", {"kind": "constant", "value": [1.0] * model.dim}), model)
    T = float(rc.get("T", 10.0))
    return point0, x0, T


def _out_stream(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w"), True


def _emit_json(payload: dict, out: Optional[str]):
    fh, close = _out_stream(out)
    json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
    fh.write("\n")
    if close:
        fh.close()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return {k: getattr(obj, k) for k in obj.__dataclass_fields__}
    return str(obj)


def cmd_simulate(cfg: dict, out: Optional[str]) -> int:
    model = build_model(cfg)
    point0, x0, T = _run_section(cfg, model)
    try:
        if isinstance(model, NfdeModel):
            traj = integrate_nfde(model, point0, x0, T)
        else:
            traj = integrate(model, point0, x0, T)
    except BlowUpError as exc:
        log.error("blow-up: %s", exc)
        print(f"blow-up: {exc}", file=sys.stderr)
        return 3
    fh, close = _out_stream(out)
    traj.write_csv(fh)
    if close:
        fh.close()
    return 0


def cmd_verify(cfg: dict, out: Optional[str]) -> int:
    model = build_model(cfg)
    pc = cfg.get("probe", {})
    n_samples = int(pc.get("n_samples", 30))
    seed = int(cfg.get("run", {}).get("seed", 0))
    entries = audit_hypotheses(model, n_samples=n_samples, seed=seed)
    constants: dict[str, float] = {}
    if isinstance(model, NfdeModel):
        q = model.operator.mass_bound()
        constants.update(q=q, k_bound=1.0 / (1.0 - q), K_D=1.0 + q)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "constants": constants,
        "checklist": [
            {"hypothesis": e.hypothesis, "status": e.status, "margin": e.margin, "note": e.note}
            for e in entries
        ],
    }
    _emit_json(payload, out)
    hard_fail = any(e.status == "fail" for e in entries)
    return 4 if hard_fail else 0


def cmd_invert(cfg: dict, out: Optional[str]) -> int:
    model = build_model(cfg)
    if not isinstance(model, NfdeModel):
        raise _fail("invert requires a neutral model family")
    pc = cfg.get("probe", {}).get("invert", {})
    h_spec = pc.get("h", {"kind": "constant", "value": [1.0] * model.dim})
    h = build_initial(h_spec, model)
    point0, _, _ = _run_section(cfg, model)
    res = invert_along_flow(
        model.operator,
        point0,
        h,
        tol_fix=float(pc.get("tol_fix", 1e-10)),
        max_iter=int(pc.get("max_iter", 200)),
    )
    tolerance = float(pc.get("residual_tol", 1e-8))
    fh, close = _out_stream(out)
    fh.write("s," + ",".join(f"x_{i+1}" for i in range(model.dim)) + "\n")
    times = res.history.times
    for i in range(times.size):
        fh.write(",".join(repr(float(v)) for v in [times[i], *res.history.samples[i]]) + "\n")
    if close:
        fh.close()
    print(
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "residual": res.residual,
                "iterations": res.iterations,
                "converged": res.converged,
            },
            sort_keys=True,
        )
    )
    return 5 if res.residual > tolerance else 0


def cmd_omega(cfg: dict, out: Optional[str]) -> int:
    model = build_model(cfg)
    point0, x0, T = _run_section(cfg, model)
    pc = cfg.get("probe", {}).get("omega", {})
    transients = [float(t) for t in pc.get("transients", [T / 8.0, T / 4.0, T / 2.0])]
    t_max = float(pc.get("t_max", T))
    delta_base = float(pc.get("delta_base", 0.02))
    threshold = float(pc.get("threshold", 1e-3))
    n_pairs = int(pc.get("n_pairs", 24))
    try:
        if isinstance(model, NfdeModel):
            rep = nfde_omega_probe(
                model, point0, x0, transients, t_max, delta_base, n_pairs=n_pairs, threshold=threshold
            )
            payload = {
                "schema_version": SCHEMA_VERSION,
                "passed": rep.passed,
                "original": _omega_payload(rep.original),
                "hat": _omega_payload(rep.hat),
                "regularity_windows": rep.regularity_windows,
            }
        else:
            rep = omega_limit_probe(
                model, point0, x0, transients, t_max, delta_base, n_pairs=n_pairs, threshold=threshold
            )
            payload = {"schema_version": SCHEMA_VERSION, "passed": rep.passed, **_omega_payload(rep)}
    except ReturnPairError as exc:
        print(f"no return pairs: {exc}", file=sys.stderr)
        return 6
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return 3
    _emit_json(payload, out)
    return 0  # reporting command; pass/fail lives in the payload


def _omega_payload(rep) -> dict:
    return {
        "pairs": [
            {
                "transient": e.transient,
                "lag": e.lag,
                "lag_base_distance": e.lag_base_distance,
                "n_pairs": e.n_pairs,
                "max_distance": e.max_distance,
                "mean_distance": e.mean_distance,
            }
            for e in rep.pair_entries
        ],
        "two_solution": [{"t": t, "distance": d} for t, d in rep.two_solution],
        "decay_rate": rep.decay_rate,
        "monotone": rep.monotone,
        "final_below": rep.final_below,
        "threshold": rep.threshold,
    }


def _set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def cmd_sweep(cfg: dict, out: Optional[str]) -> int:
    sc = cfg.get("sweep")
    if not sc:
        raise _fail("missing [sweep] section")
    param = _require(sc, "param", "sweep")
    values = _require(sc, "values", "sweep")
    stem = out or "sweep"
    summary = []
    for i, v in enumerate(values):
        sub = json.loads(json.dumps(cfg))  # deep copy of plain data
        _set_path(sub, param, v)
        path = f"{stem}_{i}.csv" if out else None
        code = cmd_simulate(sub, path)
        summary.append({"value": v, "exit": code, "csv": path})
        if code != 0:
            print(json.dumps({"schema_version": SCHEMA_VERSION, "sweep": summary}, sort_keys=True))
            return code
    print(json.dumps({"schema_version": SCHEMA_VERSION, "sweep": summary}, sort_keys=True))
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("LOG_LEVEL", "WARNING"))
    parser = argparse.ArgumentParser(
        prog="fadeflow",
        description="simulate and verify fading-memory delay systems over minimal flows",
    )
    parser.add_argument("command", choices=["simulate", "verify", "invert", "omega", "sweep"])
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", default=None, help="output path (default: stdout)")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--dt", type=float, default=None, help="override [grid] dt")
    parser.add_argument("--depth", type=float, default=None, help="override [grid] depth")
    parser.add_argument("--format", choices=["csv", "json"], default=None, help="accepted for compatibility")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.setdefault("run", {})["seed"] = args.seed
        if args.dt is not None:
            cfg.setdefault("grid", {})["dt"] = args.dt
        if args.depth is not None:
            cfg.setdefault("grid", {})["depth"] = args.depth
        handler = {
            "simulate": cmd_simulate,
            "verify": cmd_verify,
            "invert": cmd_invert,
            "omega": cmd_omega,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
