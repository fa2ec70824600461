"""Command line runner: ``mfbsde <subcommand> --config <file> [options]``.

Every run writes its artifacts plus ``manifest.json`` (config hash, seed,
library versions, output hashes) into ``--out``.  Files are written to a
temporary name and renamed, so a crashed run never leaves half a CSV.

Exit status: 0 success, 2 invalid input or failed hypothesis, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import tempfile
import traceback
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bsde import compare_solutions, picard_solve, residual_check, solve_markovian
from .config import config_hash, load_experiment, read_config
from .errors import ConvergenceWarning, ValidationError
from .martingale import martingale_battery
from .oracles import closed_form_grid, discretize, tree_solve

SUBCOMMANDS = ("solve", "picard", "verify", "compare", "converge", "oracle")


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _stats_csv(rows) -> str:
    out = ["statistic,estimate,stderr,z_score"]
    out += [f"{name},{_fmt(est)},{_fmt(se)},{_fmt(z)}" for name, est, se, z in rows]
    return "\n".join(out) + "\n"


def _grid_csv(grid, values, laws=None) -> str:
    rows = ["t,state,u,mu" if laws is not None else "t,state,u"]
    for k, t in enumerate(grid):
        for i in range(values.shape[1]):
            tail = f",{float(laws[k, i])!r}" if laws is not None else ""
            rows.append(f"{float(t)!r},{i},{float(values[k, i])!r}{tail}")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- subcommands


def cmd_solve(exp, args):
    sol = solve_markovian(exp.problem, args.steps)
    return {"solution.csv": sol.to_csv()}, 0


def cmd_picard(exp, args):
    s = exp.section("solver")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        sol, diag = picard_solve(exp.problem, args.steps, variant=args.variant,
                                 max_iter=s["max_iter"], tol=s["tol"])
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return {"solution.csv": sol.to_csv(), "diagnostics.csv": diag.to_csv()}, 0 if diag.converged else 1


def cmd_verify(exp, args):
    v = exp.section("verify")
    p = exp.problem
    x0 = v.get("x0")
    rows = martingale_battery(p.gen, v["n_paths"], args.seed, x0=x0,
                              mu0=None if x0 is not None else p.mu0)
    sol = solve_markovian(p, args.steps)
    r = residual_check(sol, p, v["n_paths"], seed=args.seed + 1)
    rows.append(("residual_mean", r.mean, r.stderr, r.z_score))
    rows.append(("residual_max_abs", r.max_abs, None, None))
    rows.append(("residual_budget", r.budget, None, None))
    return {"verify.csv": _stats_csv(rows)}, 0


def cmd_compare(exp, args):
    if exp.second is None:
        raise ValidationError("compare needs a 'compare' section describing the second problem")
    tol = exp.doc["compare"].get("tol", 1e-7)
    res = compare_solutions(exp.problem, exp.second, args.steps, tol=tol)
    status = 0 if res.hypotheses_ok else 2
    if not res.hypotheses_ok:
        print(f"comparison hypothesis violated at {res.first_violation}", file=sys.stderr)
    return {"compare.txt": res.report()}, status


def _reference(exp, steps):
    """u on the ``steps`` grid from the configured closed form, else None."""
    oc = exp.section("oracle")
    if "closed_form" not in oc:
        return None
    p = exp.problem
    cf = oc["closed_form"]
    params = {"gen": p.gen, "g": p.xi.g, "T": p.T, "c": cf.get("c", float(p.xi.g[0]))}
    return closed_form_grid(cf["name"], params, np.linspace(0.0, p.T, steps + 1), p.N)


def cmd_converge(exp, args):
    c = exp.section("converge")
    p = exp.problem
    ref_steps = c["reference_steps"]
    fine = None
    rows = ["K,error,ratio"]
    prev = None
    for K in c["steps"]:
        u = solve_markovian(p, K).u
        exact = _reference(exp, K)
        if exact is None:
            if fine is None:
                fine = solve_markovian(p, ref_steps)
            stride, rem = divmod(ref_steps, K)
            if rem:
                raise ValidationError(f"reference_steps={ref_steps} is not a multiple of K={K}",)
            exact = fine.u[::stride]
        err = float(np.max(np.abs(u - exact)))
        ratio = prev / err if prev is not None and err > 0 else None
        rows.append(f"{K},{err!r},{_fmt(ratio)}")
        prev = err
    return {"converge.csv": "\n".join(rows) + "\n"}, 0


def cmd_oracle(exp, args):
    oc = exp.section("oracle")
    p = exp.problem
    dp = discretize(p, oc["K"])
    res = tree_solve(dp, mode="lattice" if oc["mode"] == "auto" else oc["mode"], keep=True)
    out = {}
    if res.mode == "lattice":
        out["oracle.csv"] = _grid_csv(dp.times, np.stack(res.values), res.laws)
    else:
        out["oracle.csv"] = _grid_csv([0.0], res.y0[None, :], res.laws[:1])
    exact = _reference(exp, args.steps)
    if exact is not None:
        out["closed_form.csv"] = _grid_csv(np.linspace(0.0, p.T, args.steps + 1), exact)
    return out, 0


COMMANDS = {
    "solve": cmd_solve,
    "picard": cmd_picard,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "converge": cmd_converge,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfbsde", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: config 'output' or .)")
    ap.add_argument("--seed", type=int, default=None, help="overrides verify.seed")
    ap.add_argument("--steps", type=int, default=None, help="overrides solver.steps")
    ap.add_argument("--variant", choices=("y", "zprime"), default=None, help="overrides solver.variant")
    return ap


def _versions() -> dict:
    out = {"mfbsde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
           "python": platform.python_version()}
    try:
        out["jsonschema"] = metadata.version("jsonschema")
    except metadata.PackageNotFoundError:
        pass
    return out


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = read_config(args.config)
        exp = load_experiment(doc)
        solver = exp.section("solver")
        args.steps = args.steps if args.steps is not None else solver["steps"]
        args.variant = args.variant or solver["variant"]
        args.seed = args.seed if args.seed is not None else exp.section("verify")["seed"]
        if args.steps < 2:
            raise ValidationError("--steps must be at least 2")
        if args.seed < 0:
            raise ValidationError("--seed must be nonnegative")
        out_dir = args.out or Path(doc.get("output", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        files, status = COMMANDS[args.subcommand](exp, args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 1
    for name, text in files.items():
        write_atomic(out_dir / name, text)
    manifest = {
        "subcommand": args.subcommand,
        "config_sha256": config_hash(doc),
        "seed": args.seed,
        "steps": args.steps,
        "variant": args.variant,
        "versions": _versions(),
        "outputs": {n: hashlib.sha256(t.encode()).hexdigest() for n, t in sorted(files.items())},
        "exit_status": status,
    }
    write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
