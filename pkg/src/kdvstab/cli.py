"""Command-line driver.

    kdvstab spectrum --length 1 --modes 16
    kdvstab critical-lengths --bound 20
    kdvstab synthesize --length 1 --omega 0.5 --modes 16 --out run
    kdvstab simulate --out run [--open-loop] [--svg]
    kdvstab verify --length 1 --out run

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 unexpected
verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .basis import ModalState, lift_modes, random_state
from .closed_loop import SimConfig, simulate_closed_loop, simulate_open_loop
from .errors import KdvStabError
from .gramian import design, law_from_json, law_to_json
from .observability import enumerate_critical, is_critical
from .spectrum import appendix_quantities, scan_eigenvalues
from .verification import run_checks

DEFAULTS = {
    "length": 1.0,
    "omega": 0.5,
    "modes": 16,
    "tmax": 10.0,
    "dt": 0.01,
    "seed": 0,
    "control_side": "left-eta",
    "format": "csv",
    "out": ".",
    "allow_critical": False,
}
_TYPES = {"length": float, "omega": float, "modes": int, "tmax": float, "dt": float, "seed": int}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# io helpers


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{num}: unknown key {key!r}")
        out[key] = val
    return out


def resolve(args) -> dict:
    """Merge defaults < config file < command-line flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    try:
        for key, typ in _TYPES.items():
            cfg[key] = typ(cfg[key])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if isinstance(cfg["allow_critical"], str):
        cfg["allow_critical"] = cfg["allow_critical"].lower() in ("1", "true", "yes")
    if cfg["control_side"] not in ("left-eta", "right-w"):
        raise UsageError("control-side must be left-eta or right-w")
    if cfg["format"] not in ("csv", "json"):
        raise UsageError("format must be csv or json")
    if cfg["length"] <= 0 or cfg["omega"] <= 0 or cfg["tmax"] <= 0 or cfg["dt"] <= 0:
        raise UsageError("length, omega, tmax and dt must be positive")
    if cfg["modes"] < 1:
        raise UsageError("modes must be positive")
    return cfg


def _side(cfg) -> str:
    return cfg["control_side"].replace("-", "_")


def _manifest(out: Path, command: str, cfg: dict, t0: float, outputs) -> None:
    doc = {
        "command": command,
        "config": cfg,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 6),
        "outputs": sorted(str(p) for p in outputs),
    }
    write_atomic(out / "run_manifest.json", _dump(doc))


def _guard_critical(cfg) -> None:
    chk = is_critical(cfg["length"])
    if chk.critical and not cfg["allow_critical"]:
        k, l = chk.nearest.pairs[0]
        raise UsageError(
            f"L={cfg['length']} is a critical length (nearest {chk.nearest.value!r}, k={k}, l={l}); "
            "pass --allow-critical to proceed anyway"
        )


def _system_modes(L: float, n: int):
    if n == 1:
        return lift_modes(scan_eigenvalues(L, 1))[:1]
    if n % 2:
        raise UsageError("system mode count must be even (conjugate pairs) or 1")
    return lift_modes(scan_eigenvalues(L, n // 2))


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg, args) -> list:
    out = Path(cfg["out"])
    modes = scan_eigenvalues(cfg["length"], cfg["modes"])
    rows = []
    for m in modes:
        r = m.roots
        rows.append([
            m.n, m.lam,
            r[0].real, r[0].imag, r[1].real, r[1].imag, r[2].real, r[2].imag,
            appendix_quantities(m)["abs_a1"],
            m.trace_vp0.real, m.trace_vp0.imag, m.trace_vpL.real, m.trace_vpL.imag,
            m.residual,
        ])
    header = ["n", "lambda", "r1_re", "r1_im", "r2_re", "r2_im", "r3_re", "r3_im", "abs_a1",
              "vp0_re", "vp0_im", "vpL_re", "vpL_im", "residual"]
    if cfg["format"] == "json":
        path = out / "spectrum.json"
        write_atomic(path, _dump({"L": cfg["length"], "modes": [dict(zip(header, r)) for r in rows]}))
    else:
        path = out / "spectrum.csv"
        write_atomic(path, _csv(header, rows))
    print(f"{len(rows)} modes, max residual {max(r[-1] for r in rows):.2e} -> {path}")
    return [path]


def cmd_critical(cfg, args) -> list:
    out = Path(cfg["out"])
    cs = enumerate_critical(args.bound)
    rows = [(e.value, k, l) for e in cs.entries for k, l in e.pairs]
    for v, k, l in rows:
        print(f"{v!r}, k={k}, l={l}")
    if not rows:
        print(f"no critical lengths below {args.bound}")
    if cfg["format"] == "json":
        path = out / "critical_lengths.json"
        write_atomic(path, _dump({"bound": args.bound, "entries": [
            {"value": e.value, "pairs": [list(p) for p in e.pairs]} for e in cs.entries]}))
    else:
        path = out / "critical_lengths.csv"
        write_atomic(path, _csv(["value", "k", "l"], rows))
    return [path]


def cmd_synthesize(cfg, args) -> list:
    _guard_critical(cfg)
    out = Path(cfg["out"])
    modes = _system_modes(cfg["length"], cfg["modes"])
    law = design(modes, cfg["omega"], _side(cfg))
    path = out / "feedback.json"
    write_atomic(path, law_to_json(law))
    print(f"gain over {len(modes)} modes, |g|_max={np.abs(law.gain).max():.6g}, "
          f"abscissa={law.spectral_abscissa():.6g} -> {path}")
    return [path]


def _svg(times, norms, control) -> str:
    W, H, pad = 640, 220, 40

    def poly(y, top, label):
        t = np.asarray(times, dtype=float)
        y = np.asarray(y, dtype=float)
        tx = pad + (W - 2 * pad) * (t - t[0]) / max(t[-1] - t[0], 1e-300)
        lo, hi = float(np.min(y)), float(np.max(y))
        span = hi - lo if hi > lo else 1.0
        ty = top + H - pad - (H - 2 * pad) * (y - lo) / span
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(tx, ty))
        return (
            f'<line x1="{pad}" y1="{top + H - pad}" x2="{W - pad}" y2="{top + H - pad}" stroke="black"/>'
            f'<line x1="{pad}" y1="{top + pad}" x2="{pad}" y2="{top + H - pad}" stroke="black"/>'
            f'<text x="{pad}" y="{top + pad - 8}" font-size="12">{label} [{lo:.3g}, {hi:.3g}]</text>'
            f'<polyline fill="none" stroke="steelblue" points="{pts}"/>'
        )

    logn = np.log10(np.maximum(np.asarray(norms), 1e-30))
    body = poly(logn, 0, "log10 H1 norm") + poly(control, H, "control f(t)")
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{2 * H}">'
            f"{body}</svg>\n")


def cmd_simulate(cfg, args) -> list:
    out = Path(cfg["out"])
    sim = SimConfig(cfg["tmax"], cfg["dt"], args.stride, args.integrator)
    if args.open_loop:
        _guard_critical(cfg)
        modes = _system_modes(cfg["length"], cfg["modes"])
        law = None
    else:
        fb = Path(args.feedback) if args.feedback else out / "feedback.json"
        if not fb.is_file():
            raise UsageError(f"feedback file {fb} not found; run 'synthesize' first or pass --open-loop")
        try:
            law = law_from_json(fb.read_text(encoding="utf-8"))
        except (ValueError, KeyError) as exc:
            raise UsageError(f"invalid feedback file {fb}: {exc}") from exc
        modes = list(law.modes)
        cfg = {**cfg, "length": law.L, "omega": law.omega, "modes": len(modes),
               "control_side": law.control_side.replace("_", "-")}
    if len(modes) == 1:
        state = ModalState(modes[0].base.L, modes, [1.0])
    else:
        state = random_state(modes, np.random.default_rng(cfg["seed"]))
    res = simulate_open_loop(state, sim, _side(cfg)) if law is None else simulate_closed_loop(state, law, sim)

    traj = out / "trajectory.csv"
    write_atomic(traj, res.to_csv())
    summary = {
        "mode": "open_loop" if law is None else "closed_loop",
        "L": cfg["length"],
        "omega": None if law is None else law.omega,
        "modes": len(modes),
        "seed": cfg["seed"],
        "t_max": sim.t_max,
        "dt": sim.dt,
        "integrator": sim.integrator,
        "fitted_rate": res.fitted_rate,
        "fit_residual": res.residual,
        "fitted_C": res.fitted_C,
        "initial_h1": float(res.h1_norms[0]),
        "final_h1": float(res.h1_norms[-1]),
    }
    if law is None:
        summary["max_norm_drift"] = float(np.abs(res.h1_norms / res.h1_norms[0] - 1).max())
    written = [traj, out / "summary.json"]
    write_atomic(out / "summary.json", _dump(summary))
    if args.svg:
        write_atomic(out / "trajectory.svg", _svg(res.times, res.h1_norms, res.control))
        written.append(out / "trajectory.svg")
    print(f"fitted rate {res.fitted_rate:.6g}, final H1 norm {res.h1_norms[-1]:.3e} -> {traj}")
    return written


def cmd_verify(cfg, args) -> list:
    _guard_critical(cfg)
    out = Path(cfg["out"])
    report = run_checks(cfg["length"], cfg["omega"], cfg["modes"], cfg["seed"], _side(cfg),
                        cfg["tmax"], cfg["dt"], args.fd_points)
    path = out / "verify_report.json"
    write_atomic(path, _dump(report))
    for c in report["checks"]:
        print(f"{c['status']:>13}  {c['name']}")
    args._unexpected = report["unexpected_failures"]
    return [path]


COMMANDS = {
    "spectrum": cmd_spectrum,
    "critical-lengths": cmd_critical,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--length", type=float, help="domain length L (default 1)")
    common.add_argument("--omega", type=float, help="prescribed half decay rate (default 0.5)")
    common.add_argument("--modes", type=int,
                        help="scalar eigenvalues for 'spectrum', system modes elsewhere (default 16)")
    common.add_argument("--tmax", type=float, help="simulation horizon (default 10)")
    common.add_argument("--dt", type=float, help="time step (default 0.01)")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--control-side", dest="control_side", choices=["left-eta", "right-w"])
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--allow-critical", dest="allow_critical", action="store_true", default=None)
    common.add_argument("--config", help="key=value file; flags override it")

    p = _Parser(prog="kdvstab", description="Rapid boundary stabilization of the linear KdV-KdV system.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("spectrum", parents=[common], help="eigenvalue table")
    c = sub.add_parser("critical-lengths", parents=[common], help="list critical lengths")
    c.add_argument("--bound", type=float, default=20.0)
    sub.add_parser("synthesize", parents=[common], help="design the feedback gain")
    s = sub.add_parser("simulate", parents=[common], help="simulate the open or closed loop")
    s.add_argument("--feedback", help="feedback JSON (default OUT/feedback.json)")
    s.add_argument("--open-loop", action="store_true")
    s.add_argument("--svg", action="store_true", help="also write trajectory.svg")
    s.add_argument("--stride", type=int, default=1, help="record every k-th step")
    s.add_argument("--integrator", choices=["exact_expm", "trapezoidal"], default="exact_expm")
    v = sub.add_parser("verify", parents=[common], help="run the numerical self-checks")
    v.add_argument("--fd-points", dest="fd_points", type=int, default=2048)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = resolve(args)
        if args.command == "critical-lengths" and args.bound <= 0:
            raise UsageError("bound must be positive")
        written = COMMANDS[args.command](cfg, args)
        _manifest(Path(cfg["out"]), args.command, cfg, t0, written)
    except UsageError as exc:
        print(f"kdvstab: error: {exc}", file=sys.stderr)
        return 1
    except KdvStabError as exc:
        print(f"kdvstab: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    if getattr(args, "_unexpected", 0):
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
