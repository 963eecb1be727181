"""Command-line interface: fit, select-k, simulate, evaluate, rerun."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .aecm import METHODS, FitConfig, FitError, FitResult, fit
from .data import DEFAULT_MISSING_TOKENS, Dataset, load_csv, write_csv
from .evaluation import adjusted_rand_index, rand_index
from .selection import select_k
from .simulation import MECHANISMS, PRESETS, SimulationSpec, simulate, write_labels
from .tdist import DegenerateError

log = logging.getLogger("partialmix")

EXIT_FIT = 1
EXIT_INPUT = 2


class InputError(Exception):
    pass


def _method(s: str) -> str:
    m = s.replace("-", "_")
    if m not in METHODS:
        raise argparse.ArgumentTypeError("method must be one of observed, full, complete-case")
    return m


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV with a header row")
    p.add_argument("--missing-tokens", default=",".join(sorted(DEFAULT_MISSING_TOKENS)),
                   help="comma-separated tokens read as missing (default: ',NA,NaN')")
    p.add_argument("--log10", action="store_true", help="base-10 log transform every observed value")
    p.add_argument("--zero-missing", nargs="?", const="*", default=None, metavar="COLS",
                   help="treat literal zeros as missing; optionally a comma-separated column list")


def _add_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", type=_method, default="observed", help="observed | full | complete-case")
    p.add_argument("--epsilon", type=float, default=1e-3, help="lack-of-progress tolerance")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--starts", type=int, default=None, help="random starts (default 10*n*p*K)")
    p.add_argument("--short-iters", type=int, default=5)
    p.add_argument("--finalists", type=int, default=4)
    p.add_argument("--nu-mode", choices=("root", "approx"), default=None,
                   help="degrees-of-freedom update (default: approx for short runs, root for long runs)")
    p.add_argument("--nu-constant", choices=("standard", "doubled"), default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default=".", help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partialmix", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a K-component t mixture")
    _add_data_args(p)
    p.add_argument("--k", type=int, required=True)
    _add_fit_args(p)

    p = sub.add_parser("select-k", help="fit a range of K and pick the smallest BIC")
    _add_data_args(p)
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, required=True)
    _add_fit_args(p)

    p = sub.add_parser("simulate", help="generate a masked synthetic dataset")
    p.add_argument("--spec", help="SimulationSpec JSON file; flags below override its fields")
    p.add_argument("--preset", choices=sorted(PRESETS), default="low")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--eccentricity", type=float)
    p.add_argument("--separation", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--mechanism", choices=MECHANISMS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("evaluate", help="Rand and adjusted Rand index of two label files")
    p.add_argument("truth")
    p.add_argument("labels")

    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="override the recorded output directory")
    return parser


def _load(args) -> Dataset:
    tokens = [t for t in args.missing_tokens.split(",")]
    zero = False
    if args.zero_missing == "*":
        zero = True
    elif args.zero_missing:
        zero = [c.strip() for c in args.zero_missing.split(",")]
    try:
        return load_csv(args.data, tokens, log10_transform=args.log10, zero_missing=zero)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _config(args) -> FitConfig:
    try:
        return FitConfig(
            epsilon=args.epsilon,
            max_iters=args.max_iters,
            n_starts=args.starts,
            short_iters=args.short_iters,
            n_finalists=args.finalists,
            nu_mode=args.nu_mode,
            nu_constant=args.nu_constant,
            seed=args.seed,
            threads=args.threads,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _write_fit(res: FitResult, d: Dataset, out: Path, prefix: str = "") -> list[str]:
    files = [f"{prefix}assignments.csv", f"{prefix}params.json", f"{prefix}loglik_trace.csv"]
    zmax = res.responsibilities.z.max(axis=1)
    with open(out / files[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "label", "max_posterior"])
        for i, (lab, pz) in enumerate(zip(res.assignments, zmax)):
            w.writerow([int(d.row_index[i]), int(lab), repr(float(pz))])
    doc = res.params.to_dict()
    doc.update(method=res.method, loglik=res.loglik, iterations=res.iterations, converged=res.converged,
               n_eff=res.n_eff, pd_repairs=res.pd_repairs, columns=list(d.columns))
    (out / files[1]).write_text(json.dumps(doc, indent=2))
    with open(out / files[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loglik", "pd_repair"])
        for t, ll in enumerate(res.loglik_trace):
            rep = res.pd_repair_trace[t - 1] if t > 0 else False
            w.writerow([t, repr(ll), str(rep).lower()])
    return files


def _manifest(args, out: Path, outputs: list[str], started: float, extra: dict) -> None:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func",)}
    doc = {
        "subcommand": args.command,
        "args": resolved,
        "seed": resolved.get("seed"),
        "outputs": outputs,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, default=str))


def cmd_fit(args) -> int:
    started = time.time()
    d = _load(args)
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("fitting K=%d method=%s on n=%d p=%d", args.k, args.method, d.n, d.p)
    res = fit(d, args.k, args.method, cfg)
    files = _write_fit(res, d, out)
    _manifest(args, out, files, started, {"config": asdict(cfg), "iterations": res.iterations})
    print(json.dumps({"K": args.k, "method": args.method, "loglik": res.loglik, "iterations": res.iterations,
                      "converged": res.converged}))
    return 0


def cmd_select_k(args) -> int:
    started = time.time()
    d = _load(args)
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sel = select_k(d, (args.k_min, args.k_max), args.method, cfg)
    sel.write_csv(out / "bic_table.csv", d.p)
    files = ["bic_table.csv"] + _write_fit(sel.best, d, out, prefix="best_")
    iters = {str(e.K): (e.fit.iterations if e.ok else None) for e in sel.per_k}
    _manifest(args, out, files, started, {"config": asdict(cfg), "best_k": sel.best_k, "iterations": iters})
    print(json.dumps({"best_k": sel.best_k, "bic": {str(k): b for k, b in sel.bic_table}}))
    return 0


def cmd_simulate(args) -> int:
    started = time.time()
    base = SimulationSpec.from_json(Path(args.spec).read_text()) if args.spec else PRESETS[args.preset]
    fields = dict(n=args.n, p=args.p, K=args.k, eccentricity=args.eccentricity, separation=args.separation,
                  nu=args.nu, lam=args.lam, mechanism=args.mechanism, seed=args.seed)
    try:
        spec = SimulationSpec(**{**asdict(base), **{k: v for k, v in fields.items() if v is not None}})
        sim = simulate(spec)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(sim.data, out / "data.csv")
    write_labels(sim.truth_labels, out / "labels.csv")
    (out / "spec.json").write_text(spec.to_json())
    (out / "truth_params.json").write_text(json.dumps(sim.truth_params.to_dict(), indent=2))
    files = ["data.csv", "labels.csv", "spec.json", "truth_params.json"]
    _manifest(args, out, files, started, {"spec": asdict(spec)})
    print(json.dumps({"n": spec.n, "p": spec.p, "masked": int((~sim.data.mask).sum())}))
    return 0


def read_labels(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(str(exc)) from exc
    if not rows:
        raise InputError(f"{path}: empty label file")
    header = [h.strip() for h in rows[0]]
    col = header.index("label") if "label" in header else len(header) - 1
    try:
        return np.array([int(r[col]) for r in rows[1:] if r])
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: bad label entry ({exc})") from exc


def cmd_evaluate(args) -> int:
    a, b = read_labels(args.truth), read_labels(args.labels)
    try:
        ri, ari = rand_index(a, b), adjusted_rand_index(a, b)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print("rand,ari")
    print(f"{ri!r},{ari!r}")
    return 0


def cmd_rerun(args) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    recorded = argparse.Namespace(**doc["args"])
    if args.out_dir:
        recorded.out_dir = args.out_dir
    return COMMANDS[doc["subcommand"]](recorded)


COMMANDS = {
    "fit": cmd_fit,
    "select-k": cmd_select_k,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, DegenerateError, np.linalg.LinAlgError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
