"""Command-line driver.

Every subcommand takes one JSON configuration file plus ``--seed``,
``--out`` and ``--threads``.  Exit codes: 0 success, 2 usage error,
3 solver failure, 4 SPD violation.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .analysis1d import Bar1dCase, report_json, report_text, verify_model_classes
from .coupled import (CoupledProblem, LinearClosure, monolithic_qoi, qoi_reaction,
                      solve_coupled)
from .decomposition import SnapshotSet, schur_closure
from .exemplars import EXEMPLARS, Exemplar, build
from .fem import Assembler, solve_monolithic
from .plots import line_plot
from .pod import rank_for_energy, residual_energy, save_basis
from .solvers import NewtonOptions, SolverError, SpdViolationError
from .study import bases_at, fit_form, full_bases, run_study, write_table
from .surrogates import FORMS, ModelFileError, load_model, save_model
from .training import SpsdLlsOptions, TrainConfig, TrajectorySpec, generate_snapshots

log = logging.getLogger("subsurr")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_SPD = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("SUBSURR_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"SUBSURR_LOG must be one of {', '.join(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"configuration file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: configuration must be a JSON object")
    cfg["_dir"] = str(p.parent)
    return cfg


def _path(cfg, key, required=True) -> Optional[Path]:
    """Resolve a path from the config relative to the config file."""
    if key not in cfg:
        if required:
            raise UsageError(f"configuration needs {key!r}")
        return None
    p = Path(cfg[key])
    return p if p.is_absolute() else Path(cfg["_dir"]) / p


def _exemplar(cfg) -> Exemplar:
    name = cfg.get("exemplar")
    if name not in EXEMPLARS:
        raise UsageError(f"exemplar must be one of {', '.join(EXEMPLARS)}, got {name!r}")
    try:
        return build(name, **cfg.get("exemplar_options", {}))
    except TypeError as exc:
        raise UsageError(f"bad exemplar_options: {exc}") from None


def _specs(cfg, ex: Exemplar, key="trajectories") -> List[TrajectorySpec]:
    sel = cfg.get(key, "train")
    if sel == "train":
        return list(ex.train_specs)
    if sel == "test":
        return list(ex.test_specs)
    if not isinstance(sel, list):
        raise UsageError(f"{key!r} must be 'train', 'test' or a list of parameter objects")
    steps = ex.train_specs[0].n_steps
    return [TrajectorySpec(p, n_steps=steps, breakpoints=ex.train_specs[0].breakpoints)
            for p in sel]


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, seed: int, files: List[Path], extra: dict):
    man = {"command": command, "version": __version__, "seed": seed,
           "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
           "files": {f.name: _sha(f) for f in files}}
    man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------- commands

def cmd_generate(cfg, args) -> int:
    ex = _exemplar(cfg)
    specs = _specs(cfg, ex)
    if not specs:
        raise UsageError("trajectory list is empty")
    snap = generate_snapshots(ex.mesh, ex.decomp, ex.materials, ex.springs, specs, ex.load,
                              include_t0=ex.include_t0, reference_state=ex.reference_state,
                              f0=ex.f0, workers=args.threads)
    stem = args.out / cfg.get("name", "snapshots")
    snap.save(stem)
    files = [stem.with_suffix(".bin"), stem.with_suffix(".json")]
    _write_manifest(args.out, "generate", args.seed, files,
                    {"exemplar": ex.name, "n_snapshots": snap.n_snapshots,
                     "n_trajectories": len(specs), "interface_dofs": int(snap.U.shape[0])})
    print(f"wrote {snap.n_snapshots} snapshots ({len(specs)} trajectories) to {stem}.bin")
    return EXIT_OK


def _load_snapshots(cfg) -> SnapshotSet:
    stem = _path(cfg, "snapshots")
    if not stem.with_suffix(".json").is_file():
        raise UsageError(f"snapshot file not found: {stem.with_suffix('.json')}")
    return SnapshotSet.load(stem)


def cmd_pod(cfg, args) -> int:
    snap = _load_snapshots(cfg)
    full = full_bases(snap)
    if "K" in cfg:
        K = int(cfg["K"])
    elif "energy_tol" in cfg:
        tol = float(cfg["energy_tol"])
        K = max(rank_for_energy(full.phi_u, tol), rank_for_energy(full.phi_f, tol))
    else:
        raise UsageError("pod configuration needs 'K' or 'energy_tol'")
    if not 1 <= K <= full.phi_u.K:
        raise UsageError(f"K={K} out of range 1..{full.phi_u.K}")
    b = bases_at(full, K)
    files = []
    named = [("basis_u", b.phi_u), ("basis_f", b.phi_f)]
    if 2 * K <= b.phi_u.rows:
        named.append(("basis_star", b.phi_star))
    else:
        log.warning("2K=%d exceeds the %d interface dofs; no combined basis written", 2 * K,
                    b.phi_u.rows)
    for name, basis in named:
        save_basis(args.out / name, basis, snap.dof_order)
        files += [args.out / f"{name}.bin", args.out / f"{name}.json"]
    with open(args.out / "residual_energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "displacement", "force"])
        for k in range(1, full.phi_u.K + 1):
            w.writerow([k, repr(residual_energy(full.phi_u, k)), repr(residual_energy(full.phi_f, k))])
    files.append(args.out / "residual_energy.csv")
    _write_manifest(args.out, "pod", args.seed, files, {"K": K})
    print(f"wrote bases with K={K} (K*={2 * K}) to {args.out}")
    return EXIT_OK


def _check_combined(form, K, n_interface):
    if form.startswith("spsd") and 2 * K > n_interface:
        raise UsageError(f"{form} needs 2K <= {n_interface} interface dofs, got K={K}")


def _train_config(cfg, seed) -> TrainConfig:
    opts = dict(cfg.get("train", {}))
    preset = cfg.get("preset", "default")
    opts["rng_seed"] = seed
    try:
        return TrainConfig.preset(preset, **opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training options: {exc}") from None


def _spsd_options(cfg, seed) -> SpsdLlsOptions:
    opts = dict(cfg.get("spsd_lls", {}))
    opts.setdefault("seed", seed)
    try:
        return SpsdLlsOptions(**opts)
    except TypeError as exc:
        raise UsageError(f"bad spsd_lls options: {exc}") from None


def cmd_train(cfg, args) -> int:
    form = cfg.get("form")
    if form not in FORMS:
        raise UsageError(f"invalid model form {form!r}; valid forms are {', '.join(FORMS)}")
    snap = _load_snapshots(cfg)
    K = int(cfg.get("K", 0))
    if not 1 <= K <= min(snap.U.shape):
        raise UsageError(f"K={K} out of range 1..{min(snap.U.shape)}")
    _check_combined(form, K, snap.U.shape[0])
    tc = _train_config(cfg, args.seed)
    sopts = _spsd_options(cfg, args.seed)
    model, info = fit_form(form, snap, bases_at(full_bases(snap), K), tc, sopts)
    path = args.out / cfg.get("name", f"{form}_K{K}.model")
    save_model(path, model)
    files = [path]
    echo = {"form": form, "K": K, "training_error": info["training_error"]}
    if form in ("nn", "spsd-nn"):
        echo["train"] = json.loads(tc.to_json())
        hist = info["history"]
        log_path = args.out / "training_log.csv"
        hist.write_csv(log_path)
        files.append(log_path)
        echo["best_epoch"] = hist.best_epoch
        echo["epochs_run"] = len(hist.rows)
    if form == "spsd-lls":
        echo["spsd_lls"] = dataclasses.asdict(sopts)
        echo["objective"] = info["objective"]
    (args.out / "train_config.json").write_text(json.dumps(echo, sort_keys=True, indent=1) + "\n")
    files.append(args.out / "train_config.json")
    _write_manifest(args.out, "train", args.seed, files, {"form": form, "K": K})
    print(f"{form} K={K}: relative training error {info['training_error']:.3e}; wrote {path}")
    return EXIT_OK


def _closure(cfg, ex: Exemplar):
    spec = cfg.get("model")
    if spec == "schur":
        return "schur"
    path = _path(cfg, "model")
    if not path.is_file():
        raise UsageError(f"model file not found: {path}")
    try:
        return load_model(path)
    except ModelFileError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _schur_for(ex: Exemplar, S: np.ndarray, load) -> LinearClosure:
    g0 = np.zeros(ex.decomp.n_interface)
    if load.body_force is not None:
        g0 = schur_closure(ex.decomp, ex.mesh, ex.materials, load.body_force)[1]
    return LinearClosure(S, g0, tuple(ex.decomp.dof_order))


def cmd_solve(cfg, args) -> int:
    ex = _exemplar(cfg)
    model = _closure(cfg, ex)
    specs = _specs(cfg, ex, "trajectory") if isinstance(cfg.get("trajectory"), list) else None
    if specs is None:
        case = int(cfg.get("case", 0))
        if not 0 <= case < len(ex.test_specs):
            raise UsageError(f"case {case} out of range 0..{len(ex.test_specs) - 1}")
        spec = ex.test_specs[case]
    else:
        spec = specs[0]
    try:
        opts = NewtonOptions(**cfg.get("newton", {}))
    except TypeError as exc:
        raise UsageError(f"bad newton options: {exc}") from None
    S = schur_closure(ex.decomp, ex.mesh, ex.materials)[0] if model == "schur" else None
    steps, rows = [], []
    u = None
    status, message = EXIT_OK, ""
    compare = bool(cfg.get("compare_monolithic", False))
    asm = Assembler(ex.mesh, ex.materials, ex.springs) if compare else None
    uref = ex.reference_state
    for t in spec.times(ex.include_t0):
        load = ex.load(spec, float(t))
        closure = _schur_for(ex, S, load) if model == "schur" else model
        prob = CoupledProblem(ex.mesh, ex.decomp, ex.materials, closure, load, opts=opts,
                              reference_state=ex.reference_state, initial=u,
                              symmetrize=bool(cfg.get("symmetrize", False)))
        try:
            u, diag = solve_coupled(prob)
        except SpdViolationError as exc:
            status, message = EXIT_SPD, f"SPD violation at t={t:g}: {exc}"
            break
        except SolverError as exc:
            status, message = EXIT_SOLVER, f"solver failure at t={t:g}: {exc}"
            steps.append({"t": float(t), "residual_history": exc.residual_history})
            break
        diag["t"] = float(t)
        steps.append(diag)
        row = [float(t)] + [qoi_reaction(prob, u, s, c) for s, c in ex.qoi]
        if compare:
            res = solve_monolithic(ex.mesh, None, ex.materials, ex.springs, load, initial=uref,
                                   assembler=asm)
            uref = res.state
            row += [monolithic_qoi(ex.mesh, res.reactions, s, c) for s, c in ex.qoi]
        rows.append(row)
    names = [f"{s}_{c}" for s, c in ex.qoi]
    header = ["t"] + names + ([f"fem_{n}" for n in names] if compare else [])
    with open(args.out / "qoi.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) for x in r])
    summary = {
        "form": getattr(model, "form", "schur"),
        "status": {EXIT_OK: "ok", EXIT_SPD: "spd_violation", EXIT_SOLVER: "solver_failure"}[status],
        "message": message,
        "newton_iters": int(sum(s.get("newton_iters", 0) for s in steps)),
        "cg_iters": int(sum(s.get("cg_iters", 0) for s in steps)),
        "min_eig": _reduce([s.get("min_eig") for s in steps], min),
        "max_eig": _reduce([s.get("max_eig") for s in steps], max),
        "steps": steps,
        "qoi": {n: [r[i + 1] for r in rows] for i, n in enumerate(names)},
    }
    if compare and rows:
        q = np.asarray(rows)
        k = len(names)
        summary["qoi_relative_error"] = {
            n: float(np.linalg.norm(q[:, 1 + i] - q[:, 1 + k + i]) /
                     max(np.linalg.norm(q[:, 1 + k + i]), 1e-300)) for i, n in enumerate(names)}
    (args.out / "diagnostics.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    if status != EXIT_OK:
        print(message, file=sys.stderr)
    else:
        print(f"solved {len(rows)} steps: newton_iters={summary['newton_iters']} "
              f"cg_iters={summary['cg_iters']}")
    return status


def _reduce(vals, fn):
    vals = [v for v in vals if v is not None]
    return fn(vals) if vals else None


def cmd_study(cfg, args) -> int:
    ex = _exemplar(cfg)
    forms = cfg.get("forms", list(FORMS))
    Ks = [int(k) for k in cfg.get("K", [])]
    if not forms or not Ks:
        raise UsageError("study needs nonempty 'forms' and 'K' lists")
    bad = [f for f in forms if f not in FORMS]
    if bad:
        raise UsageError(f"invalid model forms {bad}; valid forms are {', '.join(FORMS)}")
    pre = {}
    for m in cfg.get("models", []):
        p = Path(m["path"])
        p = p if p.is_absolute() else Path(cfg["_dir"]) / p
        if not p.is_file():
            raise UsageError(f"model file not found: {p}")
        pre[(m["form"], int(m["K"]))] = p
    if "snapshots" in cfg:
        snap = _load_snapshots(cfg)
    else:
        snap = generate_snapshots(ex.mesh, ex.decomp, ex.materials, ex.springs, ex.train_specs,
                                  ex.load, include_t0=ex.include_t0,
                                  reference_state=ex.reference_state, f0=ex.f0,
                                  workers=args.threads)
    column = int(cfg.get("qoi_column", 0))
    cases = cfg.get("cases", list(range(len(ex.test_specs))))
    if not cases or any(not 0 <= int(c) < len(ex.test_specs) for c in cases):
        raise UsageError(f"cases must be a nonempty subset of 0..{len(ex.test_specs) - 1}")
    kmax = min(snap.U.shape)
    if any(not 1 <= K <= kmax for K in Ks):
        raise UsageError(f"K values must lie in 1..{kmax}")
    for form in forms:
        for K in Ks:
            if (form, K) not in pre:
                _check_combined(form, K, snap.U.shape[0])
    models = {}
    for key, p in pre.items():
        try:
            models[key] = load_model(p)
        except ModelFileError as exc:
            raise UsageError(f"{p}: {exc}") from None
    runs: Dict = {}
    rows, refs = run_study(ex, forms, Ks, _train_config(cfg, args.seed), snap,
                           [int(c) for c in cases], column, spsd_opts=_spsd_options(cfg, args.seed),
                           models=models, runs_out=runs,
                           workers=args.threads)
    for (form, K), model in models.items():
        if (form, K) not in pre and cfg.get("save_models", False):
            save_model(args.out / f"{form}_K{K}.model", model)
    write_table(args.out / "study.csv", rows)
    files = [args.out / "study.csv"]
    series = []
    for form in forms:
        ks, errs = [], []
        for K in Ks:
            rr = [r for r in rows if r.form == form and r.K == K]
            ks.append(K)
            errs.append(float(np.max([r.error for r in rr])) if rr and all(
                r.status == "ok" for r in rr) else float("nan"))
        series.append((form, ks, errs))
    (args.out / "error_vs_K.svg").write_text(line_plot(
        series, title=f"{ex.name}: worst-case relative QoI error", xlabel="K",
        ylabel="relative error", logy=True))
    files.append(args.out / "error_vs_K.svg")
    for c in cases:
        t = ex.test_specs[c].times(ex.include_t0)
        ser = [("FEM", t, refs[c][:, column])]
        for form in forms:
            ok = [r for r in rows if r.form == form and r.case == c and r.status == "ok"]
            if ok:
                best = min(ok, key=lambda r: r.error)
                ser.append((f"{form} K={best.K}", t, runs[(form, best.K, c)].qoi[:, column]))
        path = args.out / f"qoi_case{c}.svg"
        path.write_text(line_plot(ser, title=f"{ex.name} case {c}", xlabel="pseudo-time",
                                  ylabel=f"reaction {ex.qoi[column]}"))
        files.append(path)
    _write_manifest(args.out, "study", args.seed, files,
                    {"exemplar": ex.name, "forms": forms, "K": Ks, "rows": len(rows)})
    failed = sum(r.status != "ok" for r in rows)
    print(f"study: {len(rows)} runs, {failed} failed; table in {args.out / 'study.csv'}")
    return EXIT_OK


def cmd_analyze1d(cfg, args) -> int:
    fields = {k: cfg[k] for k in ("N", "A", "E", "L", "b") if k in cfg}
    try:
        case = Bar1dCase(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = verify_model_classes(case, n_draws=int(cfg.get("draws", 100)), seed=args.seed)
    (args.out / "analysis1d.json").write_text(report_json(rep) + "\n")
    text = report_text(rep)
    (args.out / "analysis1d.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "pod": cmd_pod, "train": cmd_train, "solve": cmd_solve,
            "study": cmd_study, "analyze1d": cmd_analyze1d}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subsurr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", nargs="?" if name == "analyze1d" else None,
                       help="JSON configuration file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", type=Path, default=Path("."))
        s.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = _read_config(args.config) if args.config else {"_dir": "."}
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"subsurr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpdViolationError as exc:
        print(f"subsurr {args.command}: SPD violation: {exc}", file=sys.stderr)
        return EXIT_SPD
    except SolverError as exc:
        print(f"subsurr {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
