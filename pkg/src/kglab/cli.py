"""``lab`` command line: config ingestion, dispatch and deterministic reports.

Exit codes: 0 all PASS, 2 any FAIL, 3 any Undetermined (and no FAIL), 1 config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, symdsl
from .ellipticity import EllipticityConstants, PreconditionError, appendix_scan, find_T0
from .escape import Direction, EscapeParams, NestingError, ladder, t_search
from .flow import (NoNullCovector, PhasePoint, integrate, nontrapping_sweep, null_lift,
                   stationary_null_points, velocity_bound_scan)
from .model import COEFF_KEYS, SpacetimeModel, check_asymptotic, check_decay, check_nondegeneracy
from .quantize import GridSpec, PacketClipped, assemble, symbol_a, symbol_b0_frozen
from .spectral import ladder_fit, mode_scan, sigma_min, symmetry_identity

EXIT = {"PASS": 0, "FAIL": 2, "Undetermined": 3}
COMMANDS = ("check-assumptions", "trace", "verify-positivity", "verify-ellipticity", "ladder",
            "spectral", "microlocal", "all")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config error at {key}: {message}")
        self.key = key


# -- config -------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeBlock:
    delta: float = 0.1
    nu: float | None = None          # defaults to mu/2
    gamma_w: float = 1.0
    T: float = 5.0
    direction: str = "both"
    c0: float | None = None          # defaults to gamma_w


@dataclass(frozen=True)
class EllipticityBlock:
    deltas: tuple = (0.05, 0.1, 0.2)
    T: float = 20.0


@dataclass(frozen=True)
class GridBlock:
    L: float = 20.0
    N_t: int = 64
    N_x: int = 16


@dataclass(frozen=True)
class FlowBlock:
    S_max: float = 1e3
    T_escape: float | None = None
    samples: int = 1000
    T: float = 10.0
    c1: float = 0.5
    seed: int = 0
    trace: dict | None = None


@dataclass(frozen=True)
class Resolutions:
    positivity: int = 32
    ellipticity: int = 48
    ladder: int = 24


@dataclass(frozen=True)
class LadderBlock:
    J: int = 1


@dataclass(frozen=True)
class SpectralBlock:
    m_max: int = 32
    L_modes: float = 100.0
    h: float = 1.0


@dataclass(frozen=True)
class MicrolocalBlock:
    L: float = 8.0
    N_t: int = 1024
    N_x: int = 512
    hs: tuple = (0.125, 0.0625, 0.03125, 0.015625, 0.0078125)
    symbol: str = "a"
    delta: float = 0.1
    T: float = 2.0
    tau_on: float = 1.0
    tau_off: float = 0.5
    xi: float = 1.0


@dataclass(frozen=True)
class LabConfig:
    model: SpacetimeModel
    model_strings: dict
    escape: EscapeBlock
    ellipticity: EllipticityBlock
    grid: GridBlock
    flow: FlowBlock
    resolutions: Resolutions
    ladder: LadderBlock
    spectral: SpectralBlock
    microlocal: MicrolocalBlock
    output: str
    digest: str

    def escape_params(self, direction: Direction) -> EscapeParams:
        e = self.escape
        nu = e.nu if e.nu is not None else self.model.mu / 2.0
        return EscapeParams(e.delta, nu, e.gamma_w, e.T, direction)


def _block(cls, raw, key):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}", "unknown key")
    vals = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        default = getattr(cls(), f.name)
        if isinstance(default, tuple):
            if not isinstance(v, list):
                raise ConfigError(f"{key}.{f.name}", "expected a list")
            v = tuple(float(a) for a in v)
        elif isinstance(default, bool) or isinstance(v, bool):
            raise ConfigError(f"{key}.{f.name}", "unexpected boolean")
        elif isinstance(default, int) and not isinstance(v, int):
            raise ConfigError(f"{key}.{f.name}", "expected an integer")
        elif isinstance(default, float) and not isinstance(v, (int, float)):
            raise ConfigError(f"{key}.{f.name}", "expected a number")
        elif isinstance(default, float):
            v = float(v)
        vals[f.name] = v
    return cls(**vals)


def _parse_expr(text, key):
    if not isinstance(text, str):
        raise ConfigError(key, "expected an expression string")
    try:
        symdsl.parse(text)
    except symdsl.ParseError as exc:
        raise ConfigError(key, str(exc) if "offset" in str(exc) else f"{exc} (offset {exc.offset})") from None
    return text


def load_config(path) -> LabConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc.msg} (offset {exc.pos})") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> LabConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected an object")
    allowed = {"model", "escape", "ellipticity", "grid", "flow", "resolutions", "ladder",
               "spectral", "microlocal", "output"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    mraw = raw.get("model", {})
    metric = mraw.get("metric", {})
    q = dict(mraw.get("q", {}))
    g = _parse_expr(metric.get("g", "1"), "model.metric.g")
    mu = q.pop("mu", 1.0)
    if not isinstance(mu, (int, float)) or isinstance(mu, bool) or not mu > 0:
        raise ConfigError("model.q.mu", "must be a positive number")
    for k in q:
        if k not in COEFF_KEYS:
            raise ConfigError(f"model.q.{k}", "unknown coefficient")
    coeffs = {k: _parse_expr(v, f"model.q.{k}") for k, v in q.items()}
    try:
        model = SpacetimeModel.from_strings(g, float(mu), **coeffs)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    cfg = LabConfig(
        model=model,
        model_strings={"g": g, "mu": float(mu), **coeffs},
        escape=_block(EscapeBlock, raw.get("escape"), "escape"),
        ellipticity=_block(EllipticityBlock, raw.get("ellipticity"), "ellipticity"),
        grid=_block(GridBlock, raw.get("grid"), "grid"),
        flow=_block(FlowBlock, raw.get("flow"), "flow"),
        resolutions=_block(Resolutions, raw.get("resolutions"), "resolutions"),
        ladder=_block(LadderBlock, raw.get("ladder"), "ladder"),
        spectral=_block(SpectralBlock, raw.get("spectral"), "spectral"),
        microlocal=_block(MicrolocalBlock, raw.get("microlocal"), "microlocal"),
        output=str((raw.get("output") or {}).get("dir", "reports")),
        digest=hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest(),
    )
    validate(cfg)
    return cfg


def validate(cfg: LabConfig):
    e = cfg.escape
    if e.direction not in ("both", "Incoming", "Outgoing"):
        raise ConfigError("escape.direction", "must be Incoming, Outgoing or both")
    for d in (Direction.INCOMING, Direction.OUTGOING):
        try:
            ep = cfg.escape_params(d)
            ep.check_model(cfg.model)
        except ValueError as exc:
            raise ConfigError("escape", str(exc)) from None
    try:
        grid = GridSpec(cfg.grid.L, cfg.grid.N_t, cfg.grid.N_x)
        grid.check_escape(cfg.escape_params(Direction.INCOMING))
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    mi = cfg.microlocal
    try:
        mg = GridSpec(mi.L, mi.N_t, mi.N_x)
        if mg.L < 4 * mi.T:
            raise ValueError(f"L={mg.L} must be >= 4*T={4 * mi.T}")
    except ValueError as exc:
        raise ConfigError("microlocal", str(exc)) from None
    hs = mi.hs
    if len(hs) < 4 or any(b >= a for a, b in zip(hs, hs[1:])) or not (0 < hs[-1] and hs[0] <= 0.25):
        raise ConfigError("microlocal.hs", "need >= 4 strictly decreasing values in (0, 1/4]")
    if mi.symbol not in ("a", "b0"):
        raise ConfigError("microlocal.symbol", "must be 'a' or 'b0'")
    for d in cfg.ellipticity.deltas:
        if not 0 < d < 1:
            raise ConfigError("ellipticity.deltas", f"delta={d} outside (0, 1)")
    if cfg.ladder.J < 1:
        raise ConfigError("ladder.J", "must be >= 1")
    if not e.delta * 2 ** cfg.ladder.J < 0.25:
        raise ConfigError("ladder.J", f"delta*2^J = {e.delta * 2 ** cfg.ladder.J:g} must be < 1/4")
    if not e.T * 2.0 ** (-cfg.ladder.J) > 1.0:
        raise ConfigError("ladder.J", "T*2^-J must exceed 1")
    if not 0 < cfg.flow.c1 < 1:
        raise ConfigError("flow.c1", "must lie in (0, 1)")
    if cfg.flow.trace is not None:
        tr = cfg.flow.trace
        if not isinstance(tr, dict) or not (("point" in tr) ^ ("null" in tr)):
            raise ConfigError("flow.trace", "needs exactly one of 'point' or 'null'")


# -- report output ------------------------------------------------------------

def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, complex):
        return [_clean(v.real), _clean(v.imag)]
    if hasattr(v, "value") and hasattr(v, "name"):   # enums
        return v.value
    return v


def write_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


@dataclass
class Outcome:
    command: str
    verdict: str
    body: dict
    csv: dict = field(default_factory=dict)      # filename -> (header, rows)


def _combine(verdicts):
    vs = list(verdicts)
    if "FAIL" in vs:
        return "FAIL"
    if "Undetermined" in vs:
        return "Undetermined"
    return "PASS"


def _v(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# -- commands -----------------------------------------------------------------

def cmd_check_assumptions(cfg: LabConfig, args) -> Outcome:
    m, fl = cfg.model, cfg.flow
    decay = check_decay(m)
    asym = check_asymptotic(m, decay)
    nondeg = check_nondegeneracy(m)
    stationary = stationary_null_points(m)
    sweep = nontrapping_sweep(m, T=fl.T, n=fl.samples, seed=fl.seed, S_max=fl.S_max,
                              T_escape=fl.T_escape, extra_points=stationary)
    vel = velocity_bound_scan(m, fl.c1, seed=fl.seed)
    trapped = [o for o in sweep.offenders if "Trapped" in (o["forward"], o["backward"])]
    findings = []
    if not decay.passed:
        findings.append("decay: FAIL")
    if not nondeg.passed:
        findings.append(f"nondegeneracy: FAIL (min discriminant {nondeg.min_discriminant:.3e} "
                        f"at (t, x) = {nondeg.argmin}); reproducer: model.check_nondegeneracy(model)")
    if trapped:
        findings.append(f"Trapped: {len(trapped)} point(s), first {trapped[0]['point']}")
    verdict = _combine([_v(decay.passed), _v(nondeg.passed), _v(asym["passed"]), sweep.verdict,
                        "PASS" if vel.T1_found is not None and vel.sign_agreement else "Undetermined"])
    body = {"decay": decay.to_dict(), "asymptotic": asym, "nondegeneracy": asdict(nondeg),
            "stationary_null_points": [list(p.astuple()) for p in stationary],
            "nontrapping": sweep.to_dict(), "velocity_bound": vel.to_dict(), "findings": findings}
    rows = [(e.coefficient, e.kt, e.kx, e.sup, _v(e.passed)) for e in decay.entries]
    vrows = [(float(T), float(r)) for T, r in zip(vel.T_grid, vel.max_ratio)]
    return Outcome("check-assumptions", verdict, body, {
        "decay.csv": (["coefficient", "kt", "kx", "weighted_sup", "verdict"], rows),
        "velocity_bound.csv": (["T", "max_ratio"], vrows)})


def cmd_trace(cfg: LabConfig, args) -> Outcome:
    tr = cfg.flow.trace
    if tr is None:
        raise ConfigError("flow.trace", "required by the trace command")
    m = cfg.model
    try:
        if "point" in tr:
            pt = PhasePoint(*map(float, tr["point"]))
        else:
            n = tr["null"]
            pt = null_lift(m, float(n["t"]), float(n["x"]), float(n["xi"]), n.get("branch", "+"))
    except NoNullCovector as exc:
        raise ConfigError("flow.trace.null", str(exc)) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("flow.trace", f"malformed point ({exc})") from None
    span = tuple(map(float, tr.get("s_span", (-50.0, 50.0))))
    try:
        trace = integrate(m, pt, span, tol=float(tr.get("tol", 1e-10)))
    except ValueError as exc:
        raise ConfigError("flow.trace", str(exc)) from None
    p0 = abs(float(m.p.value(*pt.astuple())))
    ok = trace.status == 0 and trace.drift <= 1e-7 * (1 + p0)
    body = {"start": list(pt.astuple()), "s_span": list(span), "drift": trace.drift, "nfev": trace.nfev,
            "steps": trace.steps, "status": trace.status, "message": trace.message,
            "drift_bound": 1e-7 * (1 + p0),
            "reproducer": f"flow.integrate(model, PhasePoint(*{list(pt.astuple())}), {list(span)})"}
    rows = [(float(s), *map(float, y), float(pv)) for s, y, pv in zip(trace.s, trace.states, trace.p)]
    return Outcome("trace", _v(ok), body, {"trace.csv": (["s", "t", "x", "tau", "xi", "p"], rows)})


def _directions(cfg):
    d = cfg.escape.direction
    return [Direction.INCOMING, Direction.OUTGOING] if d == "both" else [Direction(d)]


def cmd_verify_positivity(cfg: LabConfig, args) -> Outcome:
    res = args.res or cfg.resolutions.positivity
    reports, rows = {}, []
    for d in _directions(cfg):
        ep = cfg.escape_params(d)
        rep = t_search(ep, cfg.model, cfg.escape.c0, res, T_start=ep.T)
        reports[d.value] = rep.to_dict()
        rows += [(d.value, float(h["T"]), float(h["min_gap"]), _v(h["pass"])) for h in rep.T_search_history]
    verdict = _combine(_v(r["pass"]) for r in reports.values())
    return Outcome("verify-positivity", verdict, {"scans": reports},
                   {"positivity.csv": (["direction", "T", "min_gap", "verdict"], rows)})


def cmd_verify_ellipticity(cfg: LabConfig, args) -> Outcome:
    res = args.res or cfg.resolutions.ellipticity
    reports, rows, verdicts = {}, [], []
    for d in cfg.ellipticity.deltas:
        c = EllipticityConstants(d, cfg.ellipticity.T)
        try:
            T0 = find_T0(cfg.model, d)
            if T0 is None:
                raise PreconditionError(f"T0 search failed for delta={d}")
            rep = appendix_scan(cfg.model, d, max(cfg.ellipticity.T, T0), res)
            body = rep.to_dict()
            verdicts.append(_v(rep.passed))
            rows.append((d, c.gamma_ell, c.alpha, T0, rep.min_gap, _v(rep.passed)))
        except PreconditionError as exc:
            body = {"error": str(exc), "pass": False}
            verdicts.append("FAIL")
            rows.append((d, c.gamma_ell, c.alpha, "", "", "FAIL"))
        body.update(gamma_ell=c.gamma_ell, alpha=c.alpha, identity_residual=c.identity_residual())
        reports[repr(d)] = body
    return Outcome("verify-ellipticity", _combine(verdicts), {"scans": reports},
                   {"ellipticity.csv": (["delta", "gamma_ell", "alpha", "T0", "min_abs_p", "verdict"], rows)})


def cmd_ladder(cfg: LabConfig, args) -> Outcome:
    res = args.res or cfg.resolutions.ladder
    out, rows, verdicts = {}, [], []
    for d in _directions(cfg):
        ep = cfg.escape_params(d)
        try:
            levels = ladder(ep, cfg.ladder.J, cfg.model, res)
            out[d.value] = {"levels": [lv.to_dict() for lv in levels], "nested": True}
            rows += [(d.value, j, lv.delta, lv.T) for j, lv in enumerate(levels)]
            verdicts.append("PASS")
        except NestingError as exc:
            out[d.value] = {"nested": False, "level": exc.level, "point": exc.point,
                            "reproducer": f"escape.ladder(params, {cfg.ladder.J}, model, {res})"}
            verdicts.append("FAIL")
        except ValueError as exc:
            raise ConfigError("ladder", str(exc)) from None
    return Outcome("ladder", _combine(verdicts), out,
                   {"ladder_levels.csv": (["direction", "j", "delta", "T"], rows)})


def cmd_spectral(cfg: LabConfig, args) -> Outcome:
    g = cfg.grid
    grid = GridSpec(g.L, g.N_t, g.N_x)
    A = assemble(cfg.model, grid, cfg.spectral.h)
    seed = cfg.flow.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
    nphi = float(np.sum(np.abs(phi) ** 2) * grid.cell)
    sig = {}
    verdicts = []
    for z in (1j, -1j):
        s = sigma_min(A, z, seed=seed)
        sig[f"{z.imag:+g}i"] = {"sigma": s.sigma, "method": s.method, "converged": s.converged}
        verdicts.append(_v(s.sigma >= 1 - 1e-10))
    resid = symmetry_identity(A, phi, 1j)
    verdicts.append(_v(resid <= 1e-10 * nphi))
    body = {"grid": grid.to_dict(), "h": cfg.spectral.h, "asymmetry": A.asymmetry(),
            "sigma_min": sig, "symmetry_identity": {"residual": resid, "norm_sq": nphi},
            "limitation": ("finite symmetric truncations always give sigma_min(A - i) >= 1; "
                           "this is an assembly check, the mode connection scan is the kernel probe")}
    rows = []
    if cfg.model.metric.is_flat() and cfg.model.x_independent():
        ms = mode_scan(cfg.model, cfg.spectral.m_max, cfg.spectral.L_modes)
        body.update(ms.to_dict())
        verdicts.append(ms.verdict)
        rows = [(r.m, r.z.imag, r.W, r.verdict) for r in ms.results]
    else:
        body["mode_scan"] = "skipped: the model does not decouple into Fourier modes"
        verdicts.append("Undetermined")
    return Outcome("spectral", _combine(verdicts), body,
                   {"modes.csv": (["m", "im_z", "W", "verdict"], rows)})


def cmd_microlocal(cfg: LabConfig, args) -> Outcome:
    mi = cfg.microlocal
    grid = GridSpec(mi.L, mi.N_t, mi.N_x)
    if mi.symbol == "a":
        sym = symbol_a(mi.delta, mi.T)
    else:
        ep = replace(cfg.escape_params(Direction.INCOMING), delta=mi.delta, T=mi.T)
        sym = symbol_b0_frozen(ep, -3 * mi.T)
    fits = {}
    for name, tau in (("on_support", mi.tau_on), ("off_support", mi.tau_off)):
        try:
            fits[name] = ladder_fit(cfg.model, sym, (-3 * mi.T, 0.0, tau, mi.xi), mi.hs, grid).to_dict()
        except PacketClipped as exc:
            return Outcome("microlocal", "Undetermined", {"grid": grid.to_dict(), "packet": name,
                                                          "unresolved": str(exc)})
    off, on = fits["off_support"], fits["on_support"]
    off_ok = off["s_prime"] >= 4 and (off["r2"] is None or off["r2"] >= 0.95)
    on_ok = abs(on["s_prime"]) <= 0.5
    rows = [(name, h, n) for name, f in fits.items() for h, n in zip(f["hs"], f["norms"])]
    body = {"grid": grid.to_dict(), "fits": fits, "criteria": {
        "off_support": "s' >= 4 and R^2 >= 0.95", "on_support": "|s'| <= 0.5"},
        "off_support_pass": off_ok, "on_support_pass": on_ok}
    return Outcome("microlocal", _combine([_v(off_ok), _v(on_ok)]), body,
                   {"microlocal.csv": (["packet", "h", "norm"], rows)})


HANDLERS = {
    "check-assumptions": cmd_check_assumptions,
    "trace": cmd_trace,
    "verify-positivity": cmd_verify_positivity,
    "verify-ellipticity": cmd_verify_ellipticity,
    "ladder": cmd_ladder,
    "spectral": cmd_spectral,
    "microlocal": cmd_microlocal,
}


def _emit(cfg: LabConfig, out: Path, oc: Outcome):
    stem = oc.command.replace("-", "_")
    report = {"command": oc.command, "verdict": oc.verdict, "version": __version__,
              "config_sha256": cfg.digest, "model": cfg.model_strings, "result": oc.body}
    write_json(out / f"{stem}.json", report)
    for name, (header, rows) in oc.csv.items():
        write_csv(out / f"{stem}_{name}", header, rows)


def run(command: str, cfg: LabConfig, out: Path, args) -> str:
    out.mkdir(parents=True, exist_ok=True)
    if command != "all":
        oc = HANDLERS[command](cfg, args)
        _emit(cfg, out, oc)
        return oc.verdict
    summary = {}
    for name, fn in HANDLERS.items():
        if name == "trace" and cfg.flow.trace is None:
            summary[name] = "skipped"
            continue
        oc = fn(cfg, args)
        _emit(cfg, out, oc)
        summary[name] = oc.verdict
        print(f"{name}: {oc.verdict}", flush=True)
    verdict = _combine(v for v in summary.values() if v != "skipped")
    write_json(out / "summary.json", {"command": "all", "verdict": verdict, "version": __version__,
                                      "config_sha256": cfg.digest, "commands": summary})
    return verdict


def build_parser():
    p = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--res", type=int, default=None, help="override scan resolutions")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--version", action="version", version=__version__)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, flow=replace(cfg.flow, seed=args.seed))
        if args.res is not None and args.res < 16:
            raise ConfigError("--res", "must be >= 16")
        out = Path(args.out or cfg.output)
        verdict = run(args.command, cfg, out, args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(f"{args.command}: {verdict}")
    return EXIT[verdict]


if __name__ == "__main__":
    sys.exit(main())
