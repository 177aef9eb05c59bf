"""Command-line front end.

Every output file carries the output format version, the full run
configuration and the build id, and nothing time dependent, so repeating a
run with the same configuration reproduces the files byte for byte.

Exit codes: 0 success, 2 bad usage, 3 invalid model or input, 4 numerical
failure (no convergence, sign collapse, truncation).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .epr import (SamplingMode, check_exit_lemma, estimate_ground_energy, exit_histogram,
                  fit_exit_rate, sample_exit_times)
from .errors import (FockError, ModelError, NoConvergence, SignCollapse,
                     TruncationNotConverged)
from .fock import Partition, cavity_from_level, make_partition, restrict
from .models import ModelSpec, extensivity_warnings
from .rpm import (RpmSpec, critical_condition, predict_phase_dilute, solve_e1f,
                  two_level_closed_form)
from .spectral import (coupling_report, exit_rate_hamiltonian, finite_size_prediction,
                       ground_state, partition_energies, theorem_prediction)

logger = logging.getLogger("fockqpt")

OUTPUT_FORMAT = 1
BUILD_ID = f"fockqpt-v{__version__}"
SCAN_COLUMNS = ("param", "E_exact", "E_exact/N", "E_epr", "E_epr_err", "E_tilde", "E_bar",
                "pbar", "pibar", "kout_simple", "e_predicted", "phase")
SCAN_PARAMS = ("gamma", "v1", "v2", "p1", "J", "N")

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    model: dict
    params: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# parsing helpers


def parse_grid(text: str) -> list[float]:
    """``"a:b:n"`` (n evenly spaced points) or a comma list."""
    if text.count(":") == 2:
        a, b, n = text.split(":")
        return [round(float(x), 12) for x in np.linspace(float(a), float(b), int(n))]
    return [float(x) for x in text.split(",") if x.strip()]


def parse_levels(text: str):
    """``"v:p,v:p,..."`` into ``(levels, weights)``."""
    levels, weights = [], []
    for item in text.split(","):
        v, sep, p = item.partition(":")
        if not sep:
            raise UsageError(f"level {item!r} needs the form value:weight")
        levels.append(float(v))
        weights.append(float(p))
    return levels, weights


def _model_recipe(args, swept: str | None = None) -> dict:
    """Family recipe from the flags; the ``swept`` parameter may be omitted."""
    if args.model:
        return {"family": "from_file", "path": str(args.model)}
    fam = args.family
    if fam is None:
        raise UsageError("give --model or --family")
    need = {"hypercube_free": ("N", "gamma"), "two_level_rpm": ("N", "gamma", "v1", "v2"),
            "qrem": ("N", "gamma"), "random_potential": ("N", "gamma")}[fam]
    missing = [k for k in need if getattr(args, k) is None and k != swept]
    if missing:
        raise UsageError(f"--family {fam} needs " + ", ".join("--" + k for k in missing))
    recipe = {"family": fam, "N": args.N, "gamma": args.gamma}
    if fam == "two_level_rpm":
        recipe.update(v1=args.v1, v2=args.v2)
    elif fam == "qrem":
        recipe["J"] = args.J
    elif fam == "random_potential":
        if args.levels:
            recipe["levels"], recipe["weights"] = parse_levels(args.levels)
        elif None not in (args.v1, args.v2) and swept == "p1":
            recipe["levels"], recipe["weights"] = [args.v1, args.v2], None
        elif None not in (args.v1, args.v2, args.p1):
            recipe["levels"], recipe["weights"] = [args.v1, args.v2], [args.p1, 1 - args.p1]
        else:
            raise UsageError("--family random_potential needs --levels or --v1/--v2/--p1")
    if fam != "hypercube_free":
        recipe["seed"] = args.seed
    return recipe


def _parse_cavity(text, H):
    if text is None:
        return None
    if text.startswith("level:"):
        return cavity_from_level(H, int(text.split(":", 1)[1]))
    ids = [int(x) for x in text.split(",") if x.strip()]
    return make_partition(H, ids)


def build_model(recipe: dict, cavity: str | None, default_level: bool = False):
    """``(H, partition or None)`` from a recipe and an optional cavity selector.

    With ``default_level`` a model lacking any cavity gets the lowest level.
    """
    fam = recipe["family"]
    params = {k: v for k, v in recipe.items() if k not in ("family", "seed", "cavity")}
    if fam == "two_level_rpm" and cavity and not cavity.startswith("level:"):
        params["cavity"] = [int(x) for x in cavity.split(",")]
        cavity = None
    H, part = ModelSpec(fam, params, int(recipe.get("seed", 0))).build()
    if cavity is not None:
        part = _parse_cavity(cavity, H)
    elif part is None and default_level:
        part = cavity_from_level(H, 1)
    for msg in extensivity_warnings(H):
        logger.warning(msg)
    return H, part


def _need_partition(part: Partition | None) -> Partition:
    if part is None:
        raise UsageError("this analysis needs a cavity (--cavity)")
    return part


# ---------------------------------------------------------------------------
# output


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _header(config: RunConfig) -> dict:
    return {"format_version": OUTPUT_FORMAT, "build": BUILD_ID, "config": _clean(asdict(config))}


def dumps_report(config: RunConfig, result: dict) -> str:
    doc = _header(config)
    doc["result"] = _clean(result)
    return json.dumps(doc, indent=1) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def dumps_csv(config: RunConfig, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version: {OUTPUT_FORMAT}\n")
    buf.write(f"# build: {BUILD_ID}\n")
    buf.write("# config: " + json.dumps(_clean(asdict(config)), separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# analyses


def analyse_exact(H, part, subspace="full"):
    if subspace == "full":
        Hs = H
    else:
        part = _need_partition(part)
        Hs = restrict(H, part.cavity if subspace == "cavity" else part.reservoir,
                      allow_isolated=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gs = ground_state(Hs)
    return {"subspace": subspace, "M": Hs.M, "N": H.N, "E": gs.energy, "E1": gs.gap_energy,
            "E/N": gs.energy / H.N, "residual": gs.residual}


def analyse_epr(H, n0, t_grid, samples, seed, workers, mode):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = estimate_ground_energy(H, n0, t_grid, samples, seed, workers, mode)
    notes = [f"{w.category.__name__}: {w.message}" for w in caught]
    for note in notes:
        logger.warning(note)
    points = [{"t": p.t, "mean_functional": p.mean, "std_error": p.std_error,
               "mean_sign": p.mean_sign, "effective_samples": p.effective_samples}
              for p in est.points]
    return {"n0": n0, "mode": str(est.points[0].mode), "samples": samples, "points": points,
            "E": est.energy, "E_err": est.std_error, "curvature": est.curvature,
            "curvature_err": est.curvature_error, "warnings": notes}


def analyse_partition(H, part, tol=0.0):
    en = partition_energies(H, part)
    rep = coupling_report(H, part, en)
    star = exit_rate_hamiltonian(H, part)
    e_pred, phase = theorem_prediction(en.e_tilde, en.e_bar, H.N, tol)
    return {
        "cavity": part.cavity, "pbar": part.pbar, "pibar": part.pibar,
        "E_tilde": en.e_tilde, "E_bar": en.e_bar,
        "E_tilde_1": en.e_tilde_1, "E_bar_1": en.e_bar_1,
        "kout_simple": rep.kout_simple, "kout_boundary": rep.kout_boundary,
        "E_star": star.e_star, "E_star_star": star.star_star_energy,
        "e_predicted": e_pred, "phase": phase.value,
        "finite_size_simple": finite_size_prediction(en.e_bar, part.pibar, rep.kout_simple),
        "finite_size_boundary": finite_size_prediction(en.e_bar, part.pibar, rep.kout_boundary),
    }


def analyse_rpm(levels, weights, e0, tol):
    spec = RpmSpec(levels, weights, e0)
    out = {"levels": spec.levels, "weights": spec.weights, "e0free": spec.e0free,
           "e": solve_e1f(spec)}
    if spec.levels.size == 2:
        out["e_closed_form"] = two_level_closed_form(spec.levels[0], spec.levels[1],
                                                     spec.weights[0], e0)
    if spec.levels.size >= 2:
        W, crit = critical_condition(spec, tol)
        dil = predict_phase_dilute(spec, tol)
        out.update(W=W, critical=crit, dilute_phase=dil.phase.value, e_tilde=dil.e_tilde,
                   e_dilute=dil.energy)
    return out


# ---------------------------------------------------------------------------
# subcommands


def _default_n0(args, part):
    if args.n0 is not None:
        return args.n0
    return int(part.cavity[0]) if part is not None else 0


def cmd_exact(args, config):
    H, part = build_model(config.model, args.cavity)
    return analyse_exact(H, part, args.subspace)


def cmd_epr(args, config):
    H, part = build_model(config.model, args.cavity)
    n0 = args.n0 if args.n0 is not None else 0
    config.params["n0"] = n0
    return analyse_epr(H, n0, config.params["t_grid"], args.samples, args.seed, args.workers,
                       SamplingMode.parse(args.mode))


def cmd_partition(args, config):
    H, part = build_model(config.model, args.cavity, default_level=True)
    return analyse_partition(H, _need_partition(part), args.tol)


def cmd_rpm(args, config):
    if args.levels:
        levels, weights = parse_levels(args.levels)
    elif None not in (args.v1, args.v2, args.p1):
        levels, weights = [args.v1, args.v2], [args.p1, 1 - args.p1]
    else:
        raise UsageError("rpm needs --levels or --v1/--v2/--p1")
    e0 = args.e0 if args.e0 is not None else (-args.gamma if args.gamma is not None else None)
    if e0 is None:
        raise UsageError("rpm needs --e0 (or --gamma for a hypercube, e0 = -gamma)")
    config.params["e0"] = e0
    return analyse_rpm(levels, weights, e0, args.tol)


def cmd_exit(args, config):
    H, part = build_model(config.model, args.cavity, default_level=True)
    part = _need_partition(part)
    n0 = _default_n0(args, part)
    config.params["n0"] = n0
    times = sample_exit_times(H, part, n0, args.samples, args.seed, args.t, args.workers)
    fit = fit_exit_rate(times)
    star = exit_rate_hamiltonian(H, part)
    counts, edges, density = exit_histogram(times)
    hist = {"edges": edges, "counts": counts, "density": density}
    return {"n0": n0, "t_max": times.t_max, "samples": args.samples,
            "censored": int(times.censored.sum()), "rate": fit.rate, "rate_err": fit.std_error,
            "tail_threshold": fit.threshold, "E_star": star.e_star,
            "relative_deviation": (fit.rate - star.e_star) / star.e_star,
            "histogram": hist}


def cmd_lemma(args, config):
    H, part = build_model(config.model, args.cavity, default_level=True)
    part = _need_partition(part)
    n0 = _default_n0(args, part)
    config.params["n0"] = n0
    rows = []
    for t in config.params["t_grid"]:
        chk = check_exit_lemma(H, part, n0, t, args.samples, args.seed, args.workers)
        rows.append({"t": t, "lhs": chk.lhs, "lhs_err": chk.lhs_error, "rhs": chk.rhs,
                     "z": chk.z, "agree": chk.agree})
    return {"n0": n0, "samples": args.samples, "checks": rows}


def scan_values(text: str, steps: int) -> list[float]:
    lo, _, hi = text.partition(":")
    if not _:
        raise UsageError("--range needs the form lo:hi")
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    if steps == 1:
        return [float(lo)]
    return [round(float(x), 12) for x in np.linspace(float(lo), float(hi), steps)]


def scan_rows(recipe: dict, param: str, values, analyses, args, t_grid):
    rows = []
    for x in values:
        r = dict(recipe)
        r[param] = int(round(x)) if param == "N" else x
        if param == "p1":
            r["weights"] = [x, 1 - x]
        H, part = build_model(r, args.cavity, default_level=True)
        row = {"param": x}
        if "exact" in analyses:
            ex = analyse_exact(H, part)
            row.update({"E_exact": ex["E"], "E_exact/N": ex["E/N"]})
        if "epr" in analyses:
            ep = analyse_epr(H, args.n0 or 0, t_grid, args.samples, args.seed, args.workers,
                             SamplingMode.parse(args.mode))
            row.update(E_epr=ep["E"], E_epr_err=ep["E_err"])
        if "partition" in analyses:
            pa = analyse_partition(H, _need_partition(part), args.tol)
            row.update({k: pa[k] for k in ("E_tilde", "E_bar", "pbar", "pibar", "kout_simple",
                                           "e_predicted", "phase")})
        rows.append(row)
    return rows


def cmd_scan(args, config):
    if args.model:
        raise UsageError("scan needs a generated --family template")
    if args.param not in SCAN_PARAMS:
        raise UsageError(f"--param must be one of {', '.join(SCAN_PARAMS)}")
    analyses = [a for a in args.analyses.split(",") if a]
    bad = set(analyses) - {"exact", "epr", "partition"}
    if bad:
        raise UsageError(f"unknown analyses {sorted(bad)}")
    if args.family == "random_potential" and args.param == "p1" and args.levels:
        raise UsageError("scanning p1 needs --v1/--v2 rather than --levels")
    values = scan_values(args.range, args.steps)
    config.params.update(param=args.param, values=values, analyses=analyses)
    rows = scan_rows(config.model, args.param, values, analyses, args,
                     config.params.get("t_grid"))
    return {"columns": list(SCAN_COLUMNS), "rows": rows}


COMMANDS = {"exact": cmd_exact, "epr": cmd_epr, "partition": cmd_partition, "rpm": cmd_rpm,
            "scan": cmd_scan, "exit": cmd_exit, "lemma": cmd_lemma}


# ---------------------------------------------------------------------------
# argument parser


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", type=Path, help="JSON model file")
    g.add_argument("--family", choices=("two_level_rpm", "random_potential", "qrem",
                                        "hypercube_free"))
    g.add_argument("--N", type=int)
    g.add_argument("--gamma", type=float)
    g.add_argument("--v1", type=float)
    g.add_argument("--v2", type=float)
    g.add_argument("--p1", type=float)
    g.add_argument("--J", type=float, default=1.0, help="REM disorder scale (default 1)")
    g.add_argument("--levels", help="level distribution v:p,v:p,...")
    g.add_argument("--cavity", help="'level:k' or comma-separated state ids")


def _add_run_args(p, t_default=None):
    g = p.add_argument_group("run")
    g.add_argument("--t", type=float, default=t_default)
    g.add_argument("--t-grid", help="a:b:n or comma list")
    g.add_argument("--samples", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--mode", default="link", help="link | uniform | uniform:<rho>")
    g.add_argument("--n0", type=int, help="start state (default: first cavity state or 0)")
    g.add_argument("--tol", type=float, default=1e-9)
    g.add_argument("--out", type=Path, help="output file")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fockqpt", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=BUILD_ID)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("exact", help="exact ground energy of the model or a subspace")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--subspace", choices=("full", "cavity", "reservoir"), default="full")

    p = sub.add_parser("epr", help="Monte Carlo ground energy from the propagator sum")
    _add_model_args(p)
    _add_run_args(p)

    p = sub.add_parser("partition", help="cavity/reservoir energies, K_out and E*")
    _add_model_args(p)
    _add_run_args(p)

    p = sub.add_parser("rpm", help="random potential model self-consistent energy")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--e0", type=float, help="free kinetic ground energy density (< 0)")

    p = sub.add_parser("scan", help="parameter sweep to CSV with a JSON sidecar")
    _add_model_args(p)
    _add_run_args(p)
    p.add_argument("--param", default="gamma", choices=SCAN_PARAMS)
    p.add_argument("--range", default="0.2:2.0", help="lo:hi (inclusive)")
    p.add_argument("--steps", type=int, default=10, help="number of scan points")
    p.add_argument("--analyses", default="exact,partition",
                   help="comma list of exact, epr, partition")

    p = sub.add_parser("exit", help="first-exit times from the cavity and their decay rate")
    _add_model_args(p)
    _add_run_args(p)

    p = sub.add_parser("lemma", help="weight balance at the first cavity exit")
    _add_model_args(p)
    _add_run_args(p, t_default=1.0)
    return parser


def _config_from_args(args) -> RunConfig:
    params = {k: getattr(args, k) for k in ("samples", "seed", "workers", "mode", "tol", "t")
              if getattr(args, k, None) is not None}
    sub = args.subcommand
    if sub in ("epr", "scan", "lemma"):
        if args.t_grid:
            params["t_grid"] = parse_grid(args.t_grid)
        elif sub == "lemma":
            params["t_grid"] = [args.t]
        elif sub == "epr" or "epr" in args.analyses.split(","):
            raise UsageError("--t-grid is required for EPR energy estimates")
    if sub == "exact":
        params["subspace"] = args.subspace
    model = {} if sub == "rpm" else _model_recipe(args, args.param if sub == "scan" else None)
    if sub != "rpm" and args.cavity:
        model["cavity"] = args.cavity
    outputs = []
    if args.out is not None:
        outputs.append(str(args.out))
        if sub == "scan":
            outputs.append(str(args.out.with_suffix(".json")))
        elif sub == "exit":
            outputs.append(str(args.out.with_suffix(".hist.csv")))
    return RunConfig(sub, model, params, outputs)


def _write_outputs(args, config, result) -> str:
    if args.subcommand == "scan":
        text = dumps_csv(config, SCAN_COLUMNS, result["rows"])
        if args.out is not None:
            sidecar = dumps_report(config, {"columns": result["columns"],
                                            "rows": len(result["rows"])})
            atomic_write(args.out, text)
            atomic_write(args.out.with_suffix(".json"), sidecar)
        return text
    text = dumps_report(config, result)
    if args.out is not None:
        if args.subcommand == "exit":
            h = result["histogram"]
            rows = [{"lo": a, "hi": b, "count": int(c), "density": d}
                    for a, b, c, d in zip(h["edges"][:-1], h["edges"][1:], h["counts"],
                                          h["density"])]
            hist = dumps_csv(config, ("lo", "hi", "count", "density"), rows)
            atomic_write(args.out, text)
            atomic_write(args.out.with_suffix(".hist.csv"), hist)
        else:
            atomic_write(args.out, text)
    return text


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_from_args(args)
        result = COMMANDS[args.subcommand](args, config)
        text = _write_outputs(args, config, result)
    except UsageError as exc:
        parser.error(str(exc))
    except (NoConvergence, SignCollapse, TruncationNotConverged, ArithmeticError) as exc:
        print(f"fockqpt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ModelError, FockError, ValueError, KeyError, OSError) as exc:
        print(f"fockqpt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
