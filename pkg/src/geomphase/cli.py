"""Command line front end.

    geomphase {perturb,connection,evolve,compare,sweep} CONFIG.ini [--order K]
              [--basis-size N] [--model KIND] [--out DIR]

Each run writes long-format CSV tables plus a JSON metadata file into the
output directory and prints a one-line JSON summary on stdout. Exit codes:
0 success, 2 configuration error, 3 numeric error, 4 precondition violation.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
import time

import numpy as np

from . import berry, dynamics, rspt
from .config import RunConfig
from .core import OperatorMatrix, ParameterPath, ParameterPoint, PhysicalConfig, solve_spectrum
from .errors import ConfigError, GeomPhaseError
from .models import BoxModel, ModelKind
from .tables import ResultTable, versions, write_json

# ratios are reported only when the denominator is above rounding noise
RATIO_FLOOR = 1e-14

COMMANDS = ("perturb", "connection", "evolve", "compare", "sweep")


# ---------------------------------------------------------------- builders

def physical_config(cfg: RunConfig) -> PhysicalConfig:
    p = cfg["physics"]
    return PhysicalConfig(p["hbar"], p["mass"], p["l0"])


def build_model(cfg: RunConfig, kind: str | None = None) -> BoxModel:
    kind = cfg["model"]["kind"] if kind is None else kind
    if kind == "custom":
        raise ConfigError("[model] kind = custom is only supported by the perturb command")
    return BoxModel(ModelKind.parse(kind), physical_config(cfg), cfg["model"]["basis_size"])


def _complex_matrix(raw, name):
    try:
        a = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"[model] {name} is not a numeric matrix") from None
    if a.ndim == 3 and a.shape[-1] == 2:
        a = a[..., 0] + 1j * a[..., 1]
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"[model] {name} must be a square matrix")
    return a.astype(complex)


def build_path(cfg: RunConfig, model: BoxModel) -> ParameterPath:
    p = cfg["path"]
    (la, lb), (ra, rb) = p["l_range"], p["r_range"]
    k = p["points_per_edge"]
    if p["shape"] == "rectangle":
        return ParameterPath.rectangle((la, lb), (ra, rb), k)
    if p["shape"] == "retrace":
        ls = np.concatenate((np.linspace(la, lb, k, endpoint=False), np.linspace(lb, la, k + 1)))
        return ParameterPath.from_points([ParameterPoint.of(L=v, R=ra) for v in ls], closed=True)
    schedule = build_schedule(cfg)
    times = np.linspace(0.0, schedule.tau, 4 * k + 1)
    lv, ld = schedule.sample(times)
    pts = [model.point_from_wall(a, b) for a, b in zip(lv, ld)]
    pts[-1] = pts[0]
    return ParameterPath(tuple(zip(times, pts)), closed=True)


def build_schedule(cfg: RunConfig) -> dynamics.WallSchedule:
    s = cfg["schedule"]
    if s["shape"] == "cosine-loop":
        return dynamics.WallSchedule.cosine_loop(s["l_start"], s["amplitude"], s["tau"])
    if s["shape"] == "linear":
        return dynamics.WallSchedule.linear(s["l_start"], s["l_end"], s["tau"])
    return dynamics.WallSchedule.static(s["l_start"], s["tau"])


# ---------------------------------------------------------------- commands

def _slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def cmd_perturb(cfg: RunConfig) -> tuple[dict, dict]:
    """Series coefficients, partial sums against a dense eigensolve, and residual scaling."""
    p = cfg["perturbation"]
    order = p["order"]
    if cfg["model"]["kind"] == "custom":
        h0 = _complex_matrix(cfg["model"]["h0"], "h0")
        h = OperatorMatrix(_complex_matrix(cfg["model"]["h"], "h"))
        base = solve_spectrum(OperatorMatrix(h0))
        exp = rspt.expand(base, h, order)
        dense = lambda eps: np.linalg.eigvalsh(h0 + eps * h.entries)
        point_eps = None
    else:
        model = build_model(cfg)
        point = ParameterPoint.of(L=p["wall"], R=p["rate"])
        exp = model.expansion(point, order)
        h0 = np.diag(model.energies(p["wall"])).astype(complex)
        h = exp.coupling
        dense = lambda eps: np.linalg.eigvalsh(h0 + eps * h.entries)
        point_eps = model.eps(point)
    levels = [n for n in p["levels"] if n <= exp.dim]
    table = ResultTable("perturb", ("quantity", "level", "order", "m", "eps", "re", "im"))
    for n in levels:
        for l in range(order + 1):
            table.add("energy", n, l, 0, 0.0, float(exp.energy_coeffs[l, n - 1]), 0.0)
        for l in range(1, order + 1):
            for m in range(1, min(p["coefficient_rows"], exp.dim) + 1):
                c = exp.vector_coeffs[l, m - 1, n - 1]
                table.add("coefficient", n, l, m, 0.0, float(c.real), float(c.imag))
    slopes = {}
    for n in levels:
        res, err = [], []
        for eps in p["eps"]:
            series = rspt.series_eigenvalue(exp, n, eps, warn=False)
            exact = float(dense(eps)[n - 1])
            r = rspt.residual_norm(exp, n, eps)
            res.append(r)
            err.append(abs(series - exact))
            table.add("series_energy", n, order, 0, float(eps), series, 0.0)
            table.add("oracle_energy", n, order, 0, float(eps), exact, 0.0)
            table.add("error", n, order, 0, float(eps), abs(series - exact), 0.0)
            table.add("residual", n, order, 0, float(eps), r, 0.0)
            table.add("convergence_ratio", n, order, 0, float(eps), rspt.convergence_ratio(exp, n, eps), 0.0)
        s = _slope(p["eps"], res) if order >= 1 else None
        if s is not None:
            table.add("residual_slope", n, order, 0, 0.0, s, 0.0)
            slopes[n] = s
    summary = {"order": order, "levels": levels, "residual_slopes": slopes}
    if point_eps is not None:
        summary["eps_at_point"] = point_eps
    return {"perturb": table}, summary


def _series_along(model: BoxModel, path: ParameterPath, order: int, step):
    if not model.kind.has_coupling:
        # D has a zero diagonal, so the zeroth-order connection vanishes
        n = model.basis_size
        return [berry.ConnectionSeries(q, ("L", "R"), 0.0, np.zeros((1, n, 2)), np.zeros((1, n, 2)), np.zeros(n))
                for q in path.points]
    return [berry.connection_perturbative(model, model.analytic_connection, model.eps, q, order=order,
                                          directions=("L", "R"), step=step) for q in path.points]


def cmd_connection(cfg: RunConfig) -> tuple[dict, dict]:
    """Connection coefficients along the path, loop integrals and the discrete-phase oracle."""
    model = build_model(cfg)
    path = build_path(cfg, model)
    order = min(cfg["perturbation"]["order"], berry.MAX_CONNECTION_ORDER) if model.kind.has_coupling else 0
    levels = [n for n in cfg["path"]["levels"] if n <= model.basis_size]
    series = _series_along(model, path, order, cfg["numerics"]["step"])
    snaps = [model.spectrum(q) for q in path.points]
    overlap = model.basis_overlap if model.moving_basis else None
    along = ResultTable("connection", ("level", "point", "L", "R", "eps", "order", "direction", "value"))
    summ = ResultTable("connection_summary", ("level", "quantity", "value"))
    rng = np.random.default_rng(cfg["run"]["seed"])
    hbar, mass = model.config.hbar, model.config.mass
    rl = berry.loop_integral(path, np.array([[q["R"] * q["L"], 0.0] for q in path.points]), ("L", "R"))
    out = {}
    for n in levels:
        for k, (q, s) in enumerate(zip(path.points, series)):
            for j in range(s.order + 1):
                for a, name in enumerate(s.directions):
                    along.add(n, k, q["L"], q["R"], s.eps, j, name, float(s.contributions[j, n - 1, a]))
        totals = np.array([s.total()[n - 1] for s in series])
        g_pert = berry.loop_integral(path, totals, ("L", "R"))
        g_oracle = berry.discrete_berry_phase(snaps, n, overlap, closed=path.closed)
        phases = np.exp(2j * np.pi * rng.random((len(snaps), model.basis_size)))
        rephased = [s.rephased(ph) for s, ph in zip(snaps, phases)]
        g_gauge = berry.discrete_berry_phase(rephased, n, overlap, closed=path.closed)
        s_n, tail = berry.leading_connection_sum(n, 10 ** 6)
        summ.add(n, "S_n", s_n)
        summ.add(n, "S_n_tail_bound", tail)
        summ.add(n, "loop_integral_RLdL", rl)
        summ.add(n, "gamma_perturbative", g_pert)
        summ.add(n, "gamma_oracle", g_oracle)
        summ.add(n, "gauge_change", abs(g_gauge - g_oracle))
        if model.kind in (ModelKind.EFFECTIVE_PLUS, ModelKind.EFFECTIVE_MINUS):
            sign = 1.0 if model.kind is ModelKind.EFFECTIVE_PLUS else -1.0
            lead = sign * s_n * (-16.0 * mass / (math.pi ** 2 * hbar)) * rl
            summ.add(n, "gamma_leading_formula", lead)
            if abs(lead) > RATIO_FLOOR:
                summ.add(n, "ratio_oracle_to_leading", g_oracle / lead)
        if abs(g_pert) > RATIO_FLOOR:
            summ.add(n, "ratio_oracle_to_perturbative", g_oracle / g_pert)
        out[n] = {"gamma_oracle": g_oracle, "gamma_perturbative": g_pert}
    return {"connection": along, "connection_summary": summ}, {"kind": model.kind.value, "levels": out}


def _evolve_level(model, schedule, n, cfg):
    num = cfg["numerics"]
    l0, ld0 = schedule.L(0.0), schedule.Ldot(0.0)
    psi0 = model.spectrum(model.point_from_wall(l0, ld0)).states[:, n - 1]
    res = dynamics.propagate(schedule, psi0, model, dt=num["dt"], sample_dt=num["sample_dt"], track=(n,),
                             leak_threshold=num["leak_threshold"])
    return res, res.phases[n]


def cmd_evolve(cfg: RunConfig) -> tuple[dict, dict]:
    """Propagate each tracked level from its instantaneous eigenstate and split its phase."""
    model = build_model(cfg)
    schedule = build_schedule(cfg)
    series = ResultTable("evolve", ("level", "time", "L", "Ldot", "alpha", "delta", "gamma", "gamma_reference",
                                    "W_re", "W_im", "Phi_re", "Phi_im", "population", "norm"))
    summ = ResultTable("evolve_summary", ("level", "tau", "gamma_final", "gamma_reference", "leak", "infidelity",
                                          "norm_drift", "steps"))
    history, out = {}, {}
    for n in cfg["schedule"]["levels"]:
        res, ph = _evolve_level(model, schedule, n, cfg)
        lv, ld = schedule.sample(res.times)
        for k, t in enumerate(res.times):
            series.add(n, float(t), float(lv[k]), float(ld[k]), float(ph.alpha[k]), float(ph.delta[k]),
                       float(ph.gamma[k]), float(ph.gamma_reference[k]), float(ph.overlap[k].real),
                       float(ph.overlap[k].imag), float(ph.noncyclic[k].real), float(ph.noncyclic[k].imag),
                       float(ph.population[k]), float(res.norms[k]))
        ref = ph.gamma_reference[-1]
        if schedule.closed:
            ref = dynamics.closed_path_reference(model, schedule, n, cfg["numerics"]["reference_samples"])
        drift = float(np.max(np.abs(res.norms - 1.0)))
        steps = int(round(abs(res.t_span[1] - res.t_span[0]) / abs(res.dt)))
        summ.add(n, schedule.tau, float(ph.gamma[-1]), float(ref), ph.leak, float(1.0 - ph.population[-1]), drift,
                 steps)
        history[str(n)] = {"times": res.times.tolist(), "re": res.states.real.tolist(),
                           "im": res.states.imag.tolist()}
        out[n] = {"gamma_final": float(ph.gamma[-1]), "gamma_reference": float(ref),
                  "infidelity": float(1.0 - ph.population[-1])}
    return {"evolve": series, "evolve_summary": summ}, {"kind": model.kind.value, "levels": out,
                                                        "_history": history}


def cmd_compare(cfg: RunConfig) -> tuple[dict, dict]:
    """Same schedule under several kinds: dynamic and geometric phases side by side."""
    schedule = build_schedule(cfg)
    table = ResultTable("compare", ("kind", "level", "gamma_dynamic", "gamma_geometric", "Phi_re", "Phi_im",
                                    "leak", "infidelity"))
    out = {}
    for kind in cfg["compare"]["kinds"]:
        model = build_model(cfg, kind)
        for n in cfg["schedule"]["levels"]:
            res, ph = _evolve_level(model, schedule, n, cfg)
            if schedule.closed:
                geo = dynamics.closed_path_reference(model, schedule, n, cfg["numerics"]["reference_samples"])
            else:
                geo = float(ph.gamma_reference[-1])
            phi = ph.noncyclic[-1]
            table.add(ModelKind.parse(kind).value, n, float(ph.gamma[-1]), float(geo), float(phi.real),
                      float(phi.imag), ph.leak, float(1.0 - ph.population[-1]))
            out[f"{ModelKind.parse(kind).value}:{n}"] = {"gamma_dynamic": float(ph.gamma[-1]), "gamma_geometric": geo}
    summary = {"results": out}
    # the rate-even non-adiabatic shift cancels in the odd part of the two effective signs
    for n in cfg["schedule"]["levels"]:
        plus, minus = out.get(f"effective-plus:{n}"), out.get(f"effective-minus:{n}")
        if plus and minus:
            summary[f"odd_part:{n}"] = 0.5 * (plus["gamma_dynamic"] - minus["gamma_dynamic"])
    return {"compare": table}, summary


RUNNERS = {"perturb": cmd_perturb, "connection": cmd_connection, "evolve": cmd_evolve, "compare": cmd_compare}


def thread_count() -> int:
    raw = os.environ.get("GEOMPHASE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"GEOMPHASE_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(8, os.cpu_count() or 1))


def cmd_sweep(cfg: RunConfig) -> tuple[dict, dict]:
    """Run one command for each value of a single parameter; rows merged in value order."""
    sw = cfg["sweep"]
    if not sw["values"]:
        raise ConfigError("[sweep] values is empty")
    runner = RUNNERS[sw["command"]]
    section, key = sw["parameter"].split(".")
    parse_int = isinstance(cfg[section][key], int)

    def task(value):
        v = int(value) if parse_int else value
        sub = cfg.with_overrides(**{f"{section}.{key}": v})
        tables, summary = runner(sub)
        summary.pop("_history", None)
        return tables, summary

    with concurrent.futures.ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(task, sw["values"]))
    merged = {}
    for value, (tables, _) in zip(sw["values"], results):
        for name, t in tables.items():
            if name not in merged:
                merged[name] = ResultTable(f"sweep_{name}", ("sweep_value",) + t.columns)
            merged[name].extend(t, (float(value),))
    summary = {"command": sw["command"], "parameter": sw["parameter"], "values": sw["values"],
               "runs": [s for _, s in results]}
    return {f"sweep_{k}": v for k, v in merged.items()}, summary


RUNNERS["sweep"] = cmd_sweep


# ---------------------------------------------------------------- driver

def run(command: str, cfg: RunConfig, write: bool = True) -> dict:
    """Execute ``command`` and write its outputs. Returns the stdout summary."""
    start = time.perf_counter()
    try:
        tables, summary = RUNNERS[command](cfg)
    except GeomPhaseError as exc:
        exc.args = (f"{command}: {exc}",) + exc.args[1:]
        raise
    elapsed = time.perf_counter() - start
    history = summary.pop("_history", None)
    files = {}
    if write:
        for name, table in tables.items():
            files[name] = str(table.write(cfg.output_path(f"{name}.csv")))
        if history is not None:
            files["states"] = str(write_json(cfg.output_path("states.json"), history))
        meta = {"command": command, "config": cfg.to_dict(), "config_sha256": cfg.digest(),
                "versions": versions(), "wall_clock_seconds": elapsed, "tables": sorted(files)}
        files["metadata"] = str(write_json(cfg.output_path(f"{command}.meta.json"), meta))
    return {"command": command, "status": "ok", "config_sha256": cfg.digest(),
            "rows": {k: len(v.rows) for k, v in tables.items()}, "files": files, "summary": _jsonable(summary),
            "seconds": round(elapsed, 3)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geomphase",
                                     description="Perturbative and exact Berry phases for the moving-wall box.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=RUNNERS[name].__doc__.splitlines()[0])
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--order", type=int, help="perturbation order K")
        p.add_argument("--basis-size", type=int, help="number of sine modes N")
        p.add_argument("--model", help="model kind")
        p.add_argument("--out", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config).with_overrides(**{
            "perturbation.order": args.order,
            "model.basis_size": args.basis_size,
            "model.kind": args.model,
            "output.dir": args.out,
        })
        summary = run(args.command, cfg)
    except GeomPhaseError as exc:
        exc.args = (f"{args.config}: {exc}",) + exc.args[1:]
        print(json.dumps({"command": args.command, "status": "error", "error": type(exc).__name__,
                          "message": str(exc), "exit_code": exc.exit_code}))
        print(f"geomphase: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
