"""glsurf command line: spectral constants, cell energies, tables and predictors.

Every JSON artifact carries the package version, the validated config, its
hash, the seed and a provenance tag per value. Expensive stages (zeta, table,
e2) are cached under $GLSURF_CACHE_DIR keyed by their config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

CACHED_STAGES = ("zeta", "table", "e2")


class UsageError(Exception):
    pass


class StaleCacheError(RuntimeError):
    pass


# -- value parsing ---------------------------------------------------------

_PI_TERM = re.compile(r"^\s*([-+]?\d*\.?\d*(?:[eE][-+]?\d+)?)\s*\*?\s*(pi)?\s*(?:/\s*(\d+\.?\d*))?\s*$")


def parse_number(text: str) -> float:
    """A float, optionally written with pi: ``0.3``, ``pi/2``, ``3pi/8``, ``0.25*pi``."""
    m = _PI_TERM.match(text)
    if not m or (not m.group(1) and not m.group(2)):
        raise ValueError(f"not a number: {text!r}")
    coef = m.group(1)
    if coef in ("", "+", "-"):
        coef = coef + "1"
    val = float(coef)
    if m.group(2):
        val *= math.pi
    if m.group(3):
        val /= float(m.group(3))
    return val


def parse_grid(text: str) -> list:
    """``a:b:n`` for n evenly spaced values, or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must look like start:stop:count, got {text!r}")
        a, b = parse_number(parts[0]), parse_number(parts[1])
        n = int(parts[2])
        if n < 1:
            raise ValueError("count must be positive")
        return [float(x) for x in np.linspace(a, b, n)]
    return [parse_number(t) for t in text.split(",") if t.strip()]


def parse_window(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 2:
        raise ValueError(f"window must look like lo:hi, got {text!r}")
    lo, hi = parse_number(parts[0]), parse_number(parts[1])
    if not lo < hi:
        raise ValueError("window must satisfy lo < hi")
    return lo, hi


def _typed(fn, flag):
    def conv(text):
        try:
            return fn(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"{flag}: {exc}") from None
    conv.__name__ = flag
    return conv


# -- config ----------------------------------------------------------------


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    outputs: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    serial_deterministic: bool = True
    force: bool = False

    def hash(self) -> str:
        return config_hash(self.subcommand, self.params)


def config_hash(stage: str, params: dict) -> str:
    blob = json.dumps({"stage": stage, "params": params, "version": __version__},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _key(stage: str, params: dict) -> str:
    blob = json.dumps({"stage": stage, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (recorded in outputs)")
    common.add_argument("--threads", type=int, default=1, help="worker pool size; 0 = auto")
    common.add_argument("--serial", action="store_true", help="force serial deterministic mode")
    common.add_argument("--force", action="store_true", help="recompute over a stale cache entry")

    num = lambda flag: _typed(parse_number, flag)
    grid = lambda flag: _typed(parse_grid, flag)

    p = argparse.ArgumentParser(prog="glsurf", description=__doc__.splitlines()[0],
                                allow_abbrev=False)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], allow_abbrev=False)

    s = add("theta0", "de Gennes constant and xi0")
    s.add_argument("--h", type=num("--h"), default=1.0 / 200)
    s.add_argument("--json", dest="json_out")
    s.add_argument("--csv", dest="csv_out")

    s = add("zeta", "spectral curve nu -> zeta(nu)")
    s.add_argument("--nu-grid", type=grid("--nu-grid"), default=parse_grid("0:pi/2:17"))
    s.add_argument("--h", type=num("--h"), default=0.1)
    s.add_argument("--max-length", type=num("--max-length"), default=80.0)
    s.add_argument("--out", dest="json_out")
    s.add_argument("--csv", dest="csv_out")

    s = add("cell", "reduced cell ground state d(b, nu; ell)")
    s.add_argument("--b", type=num("--b"), required=True)
    s.add_argument("--nu", type=num("--nu"), required=True)
    s.add_argument("--ell", type=num("--ell"), required=True)
    s.add_argument("--h", type=num("--h"), default=0.25)
    s.add_argument("--restarts", type=int, default=3)
    s.add_argument("--json", dest="json_out")

    s = add("limit", "thermodynamic limit E(b, nu)")
    s.add_argument("--b", type=num("--b"), required=True)
    s.add_argument("--nu", type=num("--nu"), required=True)
    s.add_argument("--ells", type=grid("--ells"), default=[4.0, 6.0, 8.0])
    s.add_argument("--h", type=num("--h"), default=0.25)
    s.add_argument("--curve")
    s.add_argument("--json", dest="json_out")

    s = add("table", "energy table E(b, nu)")
    s.add_argument("--b-grid", type=grid("--b-grid"), required=True)
    s.add_argument("--nu-grid", type=grid("--nu-grid"), required=True)
    s.add_argument("--ells", type=grid("--ells"), default=[4.0, 6.0, 8.0])
    s.add_argument("--h", type=num("--h"), default=0.25)
    s.add_argument("--curve")
    s.add_argument("--out", dest="json_out")

    s = add("bulk", "bulk density g(b) on a Dirichlet square")
    s.add_argument("--b-grid", type=grid("--b-grid"), required=True)
    s.add_argument("--R", type=num("--R"), default=14.0)
    s.add_argument("--h", type=num("--h"), default=0.25)
    s.add_argument("--restarts", type=int, default=3)
    s.add_argument("--csv", dest="csv_out")
    s.add_argument("--json", dest="json_out")

    s = add("e2", "fit E2 = lim g(b)/(1-b)^2")
    s.add_argument("--window", type=_typed(parse_window, "--window"), default=(0.85, 0.98))
    s.add_argument("--points", type=int, default=4)
    s.add_argument("--R", type=grid("--R"), default=[10.0, 14.0, 18.0])
    s.add_argument("--h", type=num("--h"), default=0.25)
    s.add_argument("--restarts", type=int, default=3)
    s.add_argument("--out", dest="json_out")

    s = add("predict", "leading-order ground-state energy")
    s.add_argument("--mesh", required=True)
    s.add_argument("--kappa", type=num("--kappa"), required=True)
    s.add_argument("--H", type=num("--H"), required=True)
    s.add_argument("--table", required=True)
    s.add_argument("--e2", required=True)
    s.add_argument("--mu", type=num("--mu"), default=0.1)
    s.add_argument("--json", dest="json_out")

    s = add("gamma", "boundary region where zeta(nu) < b")
    s.add_argument("--mesh", required=True)
    s.add_argument("--b", type=num("--b"), required=True)
    s.add_argument("--curve", required=True)
    s.add_argument("--csv", dest="csv_out")
    s.add_argument("--json", dest="json_out")

    s = add("scan", "bulk/surface transition along H = kappa - a sqrt(kappa)")
    s.add_argument("--mesh", required=True)
    s.add_argument("--kappa", type=num("--kappa"), required=True)
    s.add_argument("--a", type=grid("--a"), required=True)
    s.add_argument("--table", required=True)
    s.add_argument("--e2", required=True)
    s.add_argument("--mu", type=num("--mu"), default=0.1)
    s.add_argument("--csv", dest="csv_out")
    s.add_argument("--json", dest="json_out")
    return p


def _validate(cmd: str, a: argparse.Namespace):
    def need(cond, msg):
        if not cond:
            raise UsageError(msg)

    if hasattr(a, "h"):
        need(a.h > 0, "--h must be positive")
    need(a.threads >= 0, "--threads must be >= 0")
    if cmd in ("cell", "limit"):
        need(0.0 < a.b <= 1.0, f"--b must lie in (0, 1], got {a.b:g}")
        need(0.0 <= a.nu <= math.pi / 2 + 1e-12, f"--nu must lie in [0, pi/2], got {a.nu:g}")
    if cmd == "cell":
        need(a.ell > 0, "--ell must be positive")
        need(a.h <= 0.25 + 1e-12, "--h must be <= 0.25 to resolve the magnetic length")
        need(a.restarts >= 1, "--restarts must be >= 1")
    if cmd == "zeta":
        g = a.nu_grid
        need(all(0 <= x <= math.pi / 2 + 1e-12 for x in g), "--nu-grid must lie in [0, pi/2]")
        need(all(x < y for x, y in zip(g, g[1:])), "--nu-grid must be increasing")
    if cmd == "table":
        need(all(0 < x <= 1 for x in a.b_grid), "--b-grid must lie in (0, 1]")
        need(all(0 <= x <= math.pi / 2 + 1e-12 for x in a.nu_grid), "--nu-grid must lie in [0, pi/2]")
        need(all(x < y for x, y in zip(a.b_grid, a.b_grid[1:])), "--b-grid must be increasing")
        need(all(x < y for x, y in zip(a.nu_grid, a.nu_grid[1:])), "--nu-grid must be increasing")
    if cmd in ("table", "limit"):
        need(len(a.ells) >= 3 and all(x > 0 for x in a.ells), "--ells needs at least 3 positive sizes")
    if cmd == "bulk":
        need(all(0 <= x <= 1.2 for x in a.b_grid), "--b-grid must lie in [0, 1.2]")
        need(a.R >= 2, "--R must be at least 2")
    if cmd == "e2":
        need(a.points >= 4, "--points must be at least 4")
        need(a.window[0] > 0 and a.window[1] < 1, "--window must lie inside (0, 1)")
    if cmd in ("predict", "scan"):
        need(a.kappa > 0, "--kappa must be positive")
    if cmd == "predict":
        need(a.H > 0, "--H must be positive")
    if cmd == "gamma":
        need(0.0 < a.b <= 1.0, f"--b must lie in (0, 1], got {a.b:g}")


def parse_and_validate(argv) -> RunConfig:
    """Parse argv into a RunConfig; raises SystemExit(2) on usage errors."""
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        _validate(a.subcommand, a)
    except UsageError as exc:
        parser.error(str(exc))
    params = {k: v for k, v in vars(a).items()
              if k not in ("subcommand", "seed", "threads", "serial", "force")
              and not k.endswith("_out")}
    outputs = {k: v for k, v in vars(a).items() if k.endswith("_out") and v}
    threads = a.threads if a.threads > 0 else (os.cpu_count() or 1)
    return RunConfig(a.subcommand, params, outputs, a.seed, 1 if a.serial else threads,
                     a.serial or threads == 1, a.force)


# -- artifacts -------------------------------------------------------------


def cache_dir() -> Path:
    root = os.environ.get("GLSURF_CACHE_DIR")
    return Path(root) if root else Path.home() / ".cache" / "glsurf"


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def envelope(cfg: RunConfig, result, provenance, grid=None, upstream=None) -> dict:
    return {
        "version": __version__,
        "command": cfg.subcommand,
        "config": cfg.params,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "grid": grid or {},
        "provenance": provenance,
        "upstream": upstream or {},
        "result": result,
    }


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _cached(cfg: RunConfig, compute):
    """Reuse the cached artifact for this stage and config, if it is current."""
    path = cache_dir() / f"{cfg.subcommand}-{_key(cfg.subcommand, cfg.params)}.json"
    if path.is_file() and not cfg.force:
        data = json.loads(path.read_text())
        if data.get("config_hash") != cfg.hash():
            raise StaleCacheError(
                f"cached {cfg.subcommand} artifact {path} was produced with config hash "
                f"{data.get('config_hash')} but the current config hashes to {cfg.hash()} "
                "(different version or edited file); rerun with --force to recompute"
            )
        return data
    data = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data))
    return data


def _load_result(path):
    data = json.loads(Path(path).read_text())
    return data.get("result", data), data


def _mesh(spec):
    from .surface import bundled_mesh, load_mesh

    p = Path(spec)
    if p.is_file():
        return load_mesh(p)
    return bundled_mesh(spec)


def _curve(path):
    from .spectral2d import SpectralCurve

    if not path:
        return None
    result, _ = _load_result(path)
    return SpectralCurve.from_dict(result)


def _map(cfg: RunConfig, fn, items):
    if cfg.serial_deterministic or cfg.threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


# -- stages ----------------------------------------------------------------


def run_theta0(cfg):
    from .spectral1d import find_theta0

    r = find_theta0(cfg.params["h"])
    res = {"theta0": r.theta0, "xi0": r.xi0, "h": r.h, "residual": r.residual,
           "xi0_squared_minus_theta0": r.xi0 ** 2 - r.theta0}
    rows = [{"xi": x, "mu1": m} for x, m in r.mu1_curve]
    return envelope(cfg, res, {"theta0": "computed", "xi0": "computed"}, r.grid), rows


def run_zeta(cfg):
    from .spectral2d import SpectralCurve

    def compute():
        p = cfg.params
        c = SpectralCurve(h=p["h"], max_length=p["max_length"]).fit(p["nu_grid"])
        d = c.to_dict()
        prov = ["analytic-endpoint" if "analytic-endpoint" in f else "computed" for f in d["flags"]]
        return envelope(cfg, d, {"zeta": prov}, {"h": p["h"], "max_length": p["max_length"]})

    return _cached(cfg, compute)


def run_cell(cfg):
    from .reducedgl import CellProblem, solve_cell

    p = cfg.params
    sol = solve_cell(CellProblem(p["b"], p["nu"], p["ell"], h=p["h"]),
                     restarts=p["restarts"], seed=cfg.seed)
    d = sol.to_dict()
    return envelope(cfg, d, {"d": "computed"}, d.pop("grid"))


def run_limit(cfg):
    from .thermo import E_of

    p = cfg.params
    up = {"curve": _file_hash(p["curve"])} if p.get("curve") else {}
    r = E_of(p["b"], p["nu"], p["ells"], _curve(p.get("curve")), p["h"], seed=cfg.seed)
    res = {"E": r.E, "fit": r.fit.to_dict() if r.fit is not None else None,
           "cells": [s.to_dict() for s in r.solutions]}
    return envelope(cfg, res, {"E": r.provenance}, {"h": p["h"]}, up)


def run_table(cfg):
    from . import thermo

    p = cfg.params
    if p.get("curve"):
        cfg.params = dict(p, curve_hash=_file_hash(p["curve"]))

    def compute():
        curve = _curve(p.get("curve"))
        pairs = [(b, n) for b in p["b_grid"] for n in p["nu_grid"]]
        results = _map(cfg, lambda bn: thermo.E_of(bn[0], bn[1], p["ells"], curve, p["h"],
                                                   seed=cfg.seed), pairs)
        nb, nn = len(p["b_grid"]), len(p["nu_grid"])
        E = np.array([r.E for r in results]).reshape(nb, nn)
        prov = [[results[i * nn + j].provenance for j in range(nn)] for i in range(nb)]
        lip = np.array([r.lipschitz for r in results]).reshape(nb, nn)
        fits = {(k // nn, k % nn): r.fit.to_dict() for k, r in enumerate(results) if r.fit is not None}
        table = thermo.EnergyTable(ells=tuple(p["ells"]), h=p["h"], curve=curve)._store(
            p["b_grid"], p["nu_grid"], E, prov, lip, fits)
        up = {"curve": cfg.params.get("curve_hash")} if curve is not None else {}
        return envelope(cfg, table.to_dict(), {"E": prov}, {"h": p["h"], "ells": p["ells"]}, up)

    return _cached(cfg, compute)


def run_bulk(cfg):
    from .bulk2d import BulkResolution, g_curve

    p = cfg.params
    samples = g_curve(p["b_grid"], p["R"], BulkResolution(p["h"]), restarts=p["restarts"],
                      seed=cfg.seed)
    rows = [s.to_dict() for s in samples]
    return envelope(cfg, {"samples": rows}, {"g": ["computed"] * len(rows)}, {"h": p["h"], "R": p["R"]})


def run_e2(cfg):
    from .bulk2d import BulkResolution, fit_E2, m0

    def compute():
        p = cfg.params
        lo, hi = p["window"]
        bs = [float(x) for x in np.linspace(lo, hi, p["points"])]
        jobs = [(b, R) for b in bs for R in p["R"]]
        samples = _map(cfg, lambda bR: m0(bR[0], bR[1], BulkResolution(p["h"]),
                                          restarts=p["restarts"], seed=cfg.seed), jobs)
        fit = fit_E2(samples, window=(lo, hi))
        res = dict(fit.to_dict(), samples=[s.to_dict() for s in samples])
        return envelope(cfg, res, {"E2": "fitted"}, {"h": p["h"], "R": p["R"]})

    return _cached(cfg, compute)


def _table_and_e2(p):
    from .thermo import EnergyTable

    tres, _ = _load_result(p["table"])
    eres, _ = _load_result(p["e2"])
    return EnergyTable.from_dict(tres), float(eres["E2"])


def run_predict(cfg):
    from .surface import predict_ground_energy

    p = cfg.params
    table, E2 = _table_and_e2(p)
    mesh = _mesh(p["mesh"])
    pred = predict_ground_energy(p["kappa"], p["H"], mesh, table, E2, mu=p["mu"])
    up = {"table": _file_hash(p["table"]), "e2": _file_hash(p["e2"])}
    prov = {"surface_term": "extrapolated", "bulk_term": "fitted", "error_scale": "reported-only"}
    return envelope(cfg, pred.to_dict(), prov, {"facets": len(mesh), "volume": mesh.volume}, up)


def run_gamma(cfg):
    from .surface import gamma_region

    p = cfg.params
    mesh = _mesh(p["mesh"])
    curve = _curve(p["curve"])
    idx, area = gamma_region(mesh, p["b"], curve)
    inside = np.zeros(len(mesh), dtype=bool)
    inside[idx] = True
    zeta = curve.predict(mesh.nu)
    rows = [{"facet_id": k, "nu": float(mesh.nu[k]), "zeta": float(zeta[k]),
             "in_gamma": bool(inside[k]), "area": float(mesh.areas[k])} for k in range(len(mesh))]
    res = {"area": area, "facets": int(len(idx)), "total_area": mesh.area}
    return envelope(cfg, res, {"area": "computed"}, {"facets": len(mesh)},
                    {"curve": _file_hash(p["curve"])}), rows


def run_scan(cfg):
    from .surface import transition_scan

    p = cfg.params
    table, E2 = _table_and_e2(p)
    mesh = _mesh(p["mesh"])
    scan = transition_scan(p["kappa"], p["a"], mesh, table, E2, mu=p["mu"])
    rows = [dict(a=a, ratio=float(r), **pr.to_dict())
            for a, r, pr in zip(scan.a_values, scan.ratios(), scan.predictions)]
    res = {"a_star": scan.a_star, "a_star_closed_form": scan.a_star_closed_form, "rows": rows}
    up = {"table": _file_hash(p["table"]), "e2": _file_hash(p["e2"])}
    return envelope(cfg, res, {"a_star": "derived"}, {"facets": len(mesh)}, up), rows


CSV_COLUMNS = {
    "theta0": ["xi", "mu1"],
    "zeta": ["nu", "zeta", "gap", "flag"],
    "bulk": ["b", "R", "m0", "g"],
    "gamma": ["facet_id", "nu", "zeta", "in_gamma", "area"],
    "scan": ["a", "H", "b_eff", "surface_term", "bulk_term", "total", "ratio"],
}


def _write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    Path(path).write_text(buf.getvalue())


def run_pipeline(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    rows = None
    cmd = cfg.subcommand
    runner = globals()[f"run_{cmd}"]
    out = runner(cfg)
    if isinstance(out, tuple):
        out, rows = out
    if cmd == "zeta":
        r = out["result"]
        rows = [{"nu": n, "zeta": z, "gap": 1.0 - z, "flag": ";".join(f)}
                for n, z, f in zip(r["nu"], r["zeta"], r["flags"])]
    if cmd == "bulk":
        rows = out["result"]["samples"]
    text = dumps(out)
    if "json_out" in cfg.outputs:
        Path(cfg.outputs["json_out"]).write_text(text)
    else:
        stdout.write(text)
    if "csv_out" in cfg.outputs and rows is not None:
        _write_csv(cfg.outputs["csv_out"], CSV_COLUMNS[cmd], rows)
    return 0


def main(argv=None) -> int:
    cfg = parse_and_validate(sys.argv[1:] if argv is None else argv)
    try:
        return run_pipeline(cfg)
    except (StaleCacheError, ValueError, RuntimeError, OSError) as exc:
        print(f"glsurf {cfg.subcommand}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
