"""Command-line entry point: ``sbdkit {check,simulate,solve,limit-study,verify}``.

Runs are described by an INI file; ``--set section.key=value`` overrides one
key.  Exit codes: 0 success, 1 domain-level failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import conditions as cond
from . import ibm, kinetics, studies
from .kernels import DivergenceError, Exponential, Gaussian, PowerLaw, TopHat
from .model import Dispersal, Mechanism, ModelParams, ParameterError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# schema


def _float(v):
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


def _int(v):
    return int(v)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _str(v):
    return str(v).strip()


def _choice(*opts):
    def conv(v):
        s = str(v).strip().lower()
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return s
    return conv


def _list(conv):
    def parse(v):
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        items = [x for x in re.split(r"[,\s]+", str(v).strip()) if x]
        return [conv(x) for x in items]
    return parse


_KERNEL = {
    "family": (_choice("tophat", "gaussian", "exponential", "powerlaw"), None),
    "height": (_float, None), "radius": (_float, None), "mass": (_float, None),
    "sigma": (_float, None), "scale": (_float, None), "amplitude": (_float, None),
    "exponent": (_float, None), "cutoff": (_float, None),
}
_FAMILY_KEYS = {
    "tophat": ("height", "radius"), "gaussian": ("mass", "sigma"),
    "exponential": ("mass", "scale"), "powerlaw": ("amplitude", "exponent"),
}
THEOREMS = ("establishment", "fecundity", "vlasov", "picard")

SCHEMA = {
    "model": {
        "m": (_float, 1.0), "kappa": (_float, 1.0),
        "mechanism": (_choice("establishment", "fecundity"), "establishment"),
        "dispersal": (_choice("independent", "dependent"), "independent"),
    },
    "kernel.a_plus": _KERNEL, "kernel.phi": _KERNEL, "kernel.b_plus": _KERNEL,
    "domain": {"dim": (_int, 1), "length": (_float, 20.0), "grid": (_int, 256)},
    "ibm": {
        "replicas": (_int, 10), "t_end": (_float, 1.0), "sample_dt": (_float, 0.1),
        "snapshot_times": (_list(_float), []), "seed": (_int, 0),
        "eps": (_list(_float), [1.0, 0.5, 0.25, 0.125]),
        "initial": (_choice("poisson", "count"), "poisson"), "initial_count": (_int, 100),
        "times": (_list(_float), [0.5, 1.0]), "bins": (_int, 16),
    },
    "kinetics": {
        "scheme": (_choice("rk4", "exp-euler"), "rk4"), "dt": (_float, 0.01),
        "t_end": (_float, 1.0), "record_every": (_int, 10), "picard": (_bool, False),
        "picard_max_iters": (_int, 200), "picard_tol": (_float, 1e-10),
        "mechanisms": (_list(_choice("establishment", "fecundity")), []),
        "rho0": (_choice("constant", "gaussian-bump", "two-bump", "from-file"), "constant"),
        "rho0_level": (_float, 1.0), "rho0_amplitude": (_float, 1.0), "rho0_width": (_float, 1.0),
        "rho0_file": (_str, ""),
    },
    "checks": {
        "theorems": (_list(_choice(*THEOREMS)), []), "C": (_list(_float), [1.0 + 1e-6]),
        "c": (_float, None), "alpha": (_float, None),
    },
    "output": {"directory": (_str, "out"), "formats": (_list(_choice("csv", "dat")), ["csv"])},
    "verify": {"instances": (_int, 20), "seed": (_int, 0), "mc_samples": (_int, 100_000)},
}

DEFAULT_KERNELS = {
    "kernel.a_plus": {"family": "tophat", "height": 0.5, "radius": 1.0},
    "kernel.phi": {"family": "tophat", "height": 0.1, "radius": 1.0},
}


def _line_map(text: str) -> dict:
    """(section, key) -> line number, for error messages."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = no
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip())] = no
    return out


def load_config(path: str | None, overrides=()) -> dict:
    """Resolve defaults, file values and overrides into a validated nested dict."""
    raw: dict[str, dict[str, tuple[str, str]]] = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
        lines = _line_map(text)
        cp = configparser.ConfigParser(interpolation=None, default_section="\x00none",
                                       inline_comment_prefixes=(";",))
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
        for sec in cp.sections():
            where = f"{path}:{lines.get((sec, None), '?')}"
            if sec not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{sec}]")
            for key, val in cp.items(sec):
                raw.setdefault(sec, {})[key] = (val, f"{path}:{lines.get((sec, key), '?')}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item}: expected section.key=value")
        lhs, val = item.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"--set {item}: expected section.key=value")
        sec, key = lhs.strip().rsplit(".", 1)
        if sec not in SCHEMA:
            raise ConfigError(f"--set {lhs}: unknown section [{sec}]")
        raw.setdefault(sec, {})[key] = (val, f"--set {lhs}")

    cfg = {}
    for sec, fields in SCHEMA.items():
        given = raw.get(sec, {})
        for key, (_, where) in given.items():
            if key not in fields:
                raise ConfigError(f"{where}: [{sec}] unknown key '{key}'")
        out = {}
        if sec.startswith("kernel.") and not given and sec in DEFAULT_KERNELS:
            out = dict(DEFAULT_KERNELS[sec])
        elif sec.startswith("kernel.") and not given:
            out = None
        else:
            base = DEFAULT_KERNELS.get(sec, {})
            if base and given.get("family", (base["family"],))[0].strip() == base["family"]:
                # partial overrides keep the default kernel's remaining parameters
                out = dict(base)
            for key, (conv, default) in fields.items():
                if key in given:
                    val, where = given[key]
                    try:
                        out[key] = conv(val)
                    except (ValueError, TypeError) as exc:
                        raise ConfigError(f"{where}: [{sec}] {key}: {exc} (got {val!r})") from None
                elif not sec.startswith("kernel."):
                    out[key] = default
        if sec.startswith("kernel.") and out is not None and given:
            fam = out.get("family")
            if fam is None:
                raise ConfigError(f"[{sec}] family: required")
            allowed = set(_FAMILY_KEYS[fam]) | {"family", "cutoff"}
            for key in out:
                if key not in allowed:
                    raise ConfigError(f"{given[key][1]}: [{sec}] key '{key}' does not apply to family {fam}")
            for key in _FAMILY_KEYS[fam]:
                if key not in out:
                    raise ConfigError(f"[{sec}] {key}: required for family {fam}")
        cfg[sec] = out
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# model assembly


def build_kernel(spec: dict | None, dim: int, name: str):
    if spec is None:
        return None
    kw = {k: v for k, v in spec.items() if k != "family"}
    cls = {"tophat": TopHat, "gaussian": Gaussian, "exponential": Exponential,
           "powerlaw": PowerLaw}[spec["family"]]
    try:
        return cls(dim=dim, **kw)
    except (ValueError, TypeError, DivergenceError) as exc:
        raise ConfigError(f"[kernel.{name}] {exc}") from None


def build_params(cfg: dict) -> ModelParams:
    d = cfg["domain"]["dim"]
    if d not in (1, 2):
        raise ConfigError("[domain] dim: must be 1 or 2")
    m = cfg["model"]
    try:
        return ModelParams(
            m=m["m"], kappa=m["kappa"],
            a_plus=build_kernel(cfg["kernel.a_plus"], d, "a_plus"),
            phi=build_kernel(cfg["kernel.phi"], d, "phi"),
            b_plus=build_kernel(cfg["kernel.b_plus"], d, "b_plus"),
            mechanism=Mechanism(m["mechanism"]), dispersal=Dispersal(m["dispersal"]),
        )
    except ParameterError as exc:
        raise ConfigError(f"[model] {exc}") from None


def build_grid(cfg: dict) -> kinetics.Grid:
    dom = cfg["domain"]
    if dom["grid"] < 4 or dom["length"] <= 0:
        raise ConfigError("[domain] grid must be >= 4 and length positive")
    return kinetics.Grid(dom["grid"], dom["length"], dom["dim"])


def build_rho0(cfg: dict, grid: kinetics.Grid) -> kinetics.DensityField:
    k = cfg["kinetics"]
    try:
        rho = kinetics.initial_density(grid, k["rho0"], k["rho0_level"], k["rho0_amplitude"],
                                       k["rho0_width"], k["rho0_file"] or None)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"[kinetics] rho0: {exc}") from None
    return rho


def solver_config(cfg: dict, t_end=None, ball=None) -> kinetics.SolverConfig:
    k = cfg["kinetics"]
    try:
        return kinetics.SolverConfig(
            scheme=k["scheme"], dt=k["dt"], t_end=k["t_end"] if t_end is None else t_end,
            record_every=k["record_every"], picard_max_iters=k["picard_max_iters"],
            picard_tol=k["picard_tol"], ball_radius=ball,
        )
    except ValueError as exc:
        raise ConfigError(f"[kinetics] {exc}") from None


# ---------------------------------------------------------------------------
# output


class Output:
    def __init__(self, directory: str, cfg: dict, argv, seeds=""):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.header = [
            f"sbdkit {__version__}",
            f"command: sbdkit {' '.join(argv)}",
            f"config_sha256: {config_hash(cfg)}",
            f"seeds: {seeds}",
        ]
        self.formats = cfg["output"]["formats"]
        self.written: list[Path] = []

    def _fmt(self, v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v)).lower()
        if isinstance(v, np.floating):
            return repr(float(v))
        return str(v)

    def csv(self, name: str, columns, rows, extra_header=()):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            for h in (*self.header, *extra_header):
                fh.write(f"# {h}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows([self._fmt(v) for v in r] for r in rows)
        self.written.append(path)
        return path

    def dat(self, name: str, columns, blocks):
        """Gnuplot data: whitespace columns, blank line between blocks."""
        if "dat" not in self.formats:
            return None
        path = self.dir / name
        with open(path, "w") as fh:
            for h in self.header:
                fh.write(f"# {h}\n")
            fh.write("# " + " ".join(columns) + "\n")
            for i, block in enumerate(blocks):
                if i:
                    fh.write("\n\n")
                for r in block:
                    fh.write(" ".join(self._fmt(v) for v in r) + "\n")
        self.written.append(path)
        return path


# ---------------------------------------------------------------------------
# commands


def _theorem_list(cfg, params):
    th = cfg["checks"]["theorems"]
    return th or [params.mechanism.value]


def cmd_check(cfg, args, argv) -> int:
    params = build_params(cfg)
    out = Output(cfg["output"]["directory"], cfg, argv)
    C_grid = cfg["checks"]["C"]
    if any(C < 1 for C in C_grid):
        raise ConfigError("[checks] C: values must be >= 1")
    reports = []
    for th in _theorem_list(cfg, params):
        if th == "picard":
            c = cfg["checks"]["c"]
            if c is None:
                alpha = cfg["checks"]["alpha"]
                if alpha is None:
                    raise ConfigError("[checks] c or alpha is required for the picard check")
                c = alpha * max(C_grid)
            reports.append(cond.check_picard(params, c))
            continue
        check = {"establishment": cond.check_establishment, "fecundity": cond.check_fecundity,
                 "vlasov": cond.check_vlasov_scaling}[th]
        mech = Mechanism(th) if th != "vlasov" else params.mechanism
        best, _ = cond.scan_C(check, params, C_grid, mech)
        reports.append(best)
    keys = []
    for r in reports:
        for k in r.constants:
            if k not in keys:
                keys.append(k)
    cols = ["theorem", "verdict", "satisfied", "lhs", "rhs", *keys, "notes"]
    rows = [[r.theorem_id.value, r.verdict, r.satisfied, r.lhs, r.rhs,
             *[r.constants.get(k, "") for k in keys], " | ".join(r.notes)] for r in reports]
    out.csv("checks.csv", cols, rows)
    for r in reports:
        print(f"{r.theorem_id.value},satisfied={str(r.satisfied).lower()},verdict={r.verdict},"
              f"lhs={r.lhs:.10g},rhs={r.rhs:.10g}")
        for n in r.notes:
            print(f"  note: {n}")
    return EXIT_OK if all(r.satisfied for r in reports) else EXIT_FAIL


def _initial_sampler(cfg, params, grid, multiplier=1.0):
    ic = cfg["ibm"]
    L, d = grid.length, grid.dim
    if ic["initial"] == "count":
        n0 = ic["initial_count"]
        return lambda rng: rng.random((n0, d)) * L
    rho0 = build_rho0(cfg, grid)
    return lambda rng: ibm.poisson_configuration(rho0, L, d, rng, multiplier)


def cmd_simulate(cfg, args, argv) -> int:
    params = build_params(cfg)
    grid = build_grid(cfg)
    ic = cfg["ibm"]
    seed = ic["seed"]
    R = ic["replicas"]
    if R < 1:
        raise ConfigError("[ibm] replicas: must be >= 1")
    out = Output(cfg["output"]["directory"], cfg, argv, seeds=f"base={seed} replicas=0..{R - 1}")
    sampler = _initial_sampler(cfg, params, grid)
    try:
        trajs = ibm.run_replicas(params, grid.length, sampler, ic["t_end"], R, seed=seed,
                                 sample_dt=ic["sample_dt"], snapshot_times=ic["snapshot_times"])
    except ibm.DomainError as exc:
        raise ConfigError(f"[domain] {exc}") from None
    manifest = []
    width = max(3, len(str(R - 1)))
    for k, tr in enumerate(trajs):
        tag = f"{k:0{width}d}"
        flags = ["extinct" if tr.extinct and t >= tr.extinction_time else "" for t in tr.times]
        out.csv(f"trajectory_{tag}.csv", ["t", "N", "births", "deaths", "rejections", "flag"],
                zip(tr.times.tolist(), tr.counts.tolist(), tr.births.tolist(), tr.deaths.tolist(),
                    tr.rejections.tolist(), flags),
                extra_header=[f"replica_seed: {seed},{k}"])
        if tr.snapshots:
            rows = []
            for ts, ids, pts in tr.snapshots:
                for pid, p in zip(ids.tolist(), pts.tolist()):
                    rows.append([ts, pid, *p])
            cols = ["t", "particle_id"] + [f"x{i + 1}" for i in range(grid.dim)]
            out.csv(f"snapshots_{tag}.csv", cols, rows, extra_header=[f"replica_seed: {seed},{k}"])
        manifest.append([k, seed, f"[{seed}, {k}]", tr.extinct, int(tr.counts[-1])])
    out.csv("manifest.csv", ["replica", "seed", "seed_sequence", "extinct", "final_N"], manifest)
    t_end = ic["t_end"]
    summary = [["replicas", R], ["extinct", sum(tr.extinct for tr in trajs)],
               ["mean_final_N", float(np.mean([tr.counts[-1] for tr in trajs]))]]
    if R >= 2 and all(tr.counts[0] > 0 for tr in trajs) and np.mean([tr.counts[-1] for tr in trajs]) > 0:
        slope, se = ibm.growth_slope(trajs, t_end)
        summary += [["mean_growth_slope", slope], ["slope_stderr", se],
                    ["kappa_minus_m", params.kappa - params.m]]
    out.csv("summary.csv", ["quantity", "value"], summary)
    for k, v in summary:
        print(f"{k},{v}")
    return EXIT_OK


def _picard_ball(cfg):
    c = cfg["checks"]["c"]
    if c is None and cfg["checks"]["alpha"] is not None:
        c = cfg["checks"]["alpha"] * max(cfg["checks"]["C"])
    return c


def cmd_solve(cfg, args, argv) -> int:
    params = build_params(cfg)
    grid = build_grid(cfg)
    rho0 = build_rho0(cfg, grid)
    kc = cfg["kinetics"]
    mechs = kc["mechanisms"] or [params.mechanism.value]
    scfg = solver_config(cfg)
    out = Output(cfg["output"]["directory"], cfg, argv)
    solutions, summary = {}, []
    status = EXIT_OK
    idx_cols = ["i"] if grid.dim == 1 else ["i", "j"]
    for mech in mechs:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                sol = kinetics.integrate(rho0, params, scfg, mech)
        except kinetics.CutoffError as exc:
            raise ConfigError(f"[domain] {exc}") from None
        except kinetics.BlowUpError as exc:
            print(f"{mech}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        for w in caught:
            print(f"warning ({mech}): {w.message}", file=sys.stderr)
        solutions[mech] = sol
        rows = []
        for t, v in zip(sol.times.tolist(), sol.values):
            for ix in np.ndindex(*grid.shape):
                rows.append([t, *ix, float(v[ix])])
        out.csv(f"density_{mech}.csv", ["t", *idx_cols, "rho"], rows)
        if grid.dim == 1:
            x = grid.centers()[..., 0]
            out.dat(f"density_{mech}.dat", ["x", "rho"],
                    [[(float(xi), float(vi)) for xi, vi in zip(x, v)] for v in sol.values])
        cross = None
        if kc["picard"]:
            ball = _picard_ball(cfg)
            pcfg = solver_config(cfg, ball=ball)
            try:
                pr = kinetics.picard_solve(rho0, params, pcfg, mech)
            except (kinetics.ConvergenceError, kinetics.PicardInvariantError) as exc:
                print(f"{mech}: {exc}", file=sys.stderr)
                status = EXIT_FAIL
                pr = None
            if pr is not None:
                ratios = [math.nan] + pr.ratios
                out.csv(f"picard_{mech}.csv", ["iter", "delta_norm", "ratio"],
                        [[i, d, r] for i, (d, r) in enumerate(zip(pr.deltas, ratios))])
                nodes = np.arange(0, len(pr.times), scfg.record_every)
                if nodes[-1] != len(pr.times) - 1:
                    nodes = np.append(nodes, len(pr.times) - 1)
                cross = float(np.max(np.abs(pr.values[nodes] - sol.values)))
        fin = sol.final
        row = {"mechanism": mech, "t_end": float(sol.times[-1]), "final_sup": fin.sup_norm,
               "final_min": fin.min, "final_mass": fin.mass, "min_over_run": float(sol.min_values.min()),
               "picard_vs_timestep": cross if cross is not None else ""}
        if kc["rho0"] == "constant":
            try:
                eqs = kinetics.homogeneous_equilibria(params)
                near = min(eqs, key=lambda e: abs(e.u - float(fin.values.mean())))
                row["equilibrium"] = near.u
                row["equilibrium_stability"] = near.stability
                row["distance_to_equilibrium"] = float(np.max(np.abs(fin.values - near.u)))
            except ValueError:
                pass
        summary.append(row)
    if len(solutions) == 2:
        a, b = solutions["establishment"], solutions["fecundity"]
        diff = np.max(np.abs(a.values - b.values).reshape(len(a.times), -1), axis=1)
        out.csv("mechanism_difference.csv", ["t", "sup_difference"],
                zip(a.times.tolist(), diff.tolist()))
        for row in summary:
            row["mechanism_difference"] = float(diff[-1])
    cols = []
    for row in summary:
        cols += [k for k in row if k not in cols]
    out.csv("solve_summary.csv", cols, [[row.get(k, "") for k in cols] for row in summary])
    for row in summary:
        print(",".join(f"{k}={row[k]}" for k in row))
    return status


def cmd_limit_study(cfg, args, argv) -> int:
    params = build_params(cfg)
    if params.mechanism is not Mechanism.ESTABLISHMENT:
        raise ConfigError("[model] mechanism: the limit study uses the establishment model")
    grid = build_grid(cfg)
    rho0 = build_rho0(cfg, grid)
    ic = cfg["ibm"]
    out = Output(cfg["output"]["directory"], cfg, argv, seeds=f"base={ic['seed']}")
    try:
        st = studies.limit_study(params, rho0, ic["eps"], ic["times"], n_replicas=ic["replicas"],
                                 bins=ic["bins"], seed=ic["seed"],
                                 solver=solver_config(cfg, t_end=max(ic["times"])))
    except ValueError as exc:
        raise ConfigError(f"[ibm] {exc}") from None
    rows = [[r.eps, r.t, r.l2_error, r.stderr, r.poisson_scale, r.replicas] for r in st.rows]
    out.csv("limit_study.csv", ["eps", "t", "L2_error", "stderr", "poisson_scale", "replicas"], rows)
    for r in st.rows:
        print(f"eps={r.eps:g},t={r.t:g},L2_error={r.l2_error:.6g},stderr={r.stderr:.3g}")
    for t, ok in st.monotone.items():
        print(f"t={t:g}: {'decreasing' if ok else 'NOT decreasing'} in eps")
    return EXIT_OK if st.passed else EXIT_FAIL


def cmd_verify(cfg, args, argv) -> int:
    vc = cfg["verify"]
    if vc["instances"] < 0:
        raise ConfigError("[verify] instances: must be >= 0")
    out = Output(cfg["output"]["directory"], cfg, argv, seeds=f"{vc['seed']}")
    rep = studies.verify_suite(vc["instances"], vc["seed"], corrupt=args.corrupt or (),
                               mc_samples=vc["mc_samples"])
    rows = []
    for f in rep.families:
        status = "pass" if f.passed else "fail"
        if f.vacuous:
            status += " (vacuous)"
        print(f"{f.name}: {status}  max_dev={f.max_deviation:.3e}  tol={f.tolerance:g}  cases={f.cases}"
              + (f"  {f.detail}" if f.detail else ""))
        rows.append([f.name, f.passed, f.vacuous, f.cases, float(f.max_deviation), f.tolerance, f.detail])
    out.csv("verify.csv", ["family", "passed", "vacuous", "cases", "max_deviation", "tolerance", "detail"],
            rows)
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "solve": cmd_solve,
            "limit-study": cmd_limit_study, "verify": cmd_verify}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbdkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sbdkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, e.g. model.m=2")
        s.add_argument("--out", metavar="DIR")
        s.add_argument("--seed", type=int)
        if name == "verify":
            s.add_argument("--corrupt", action="append", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    overrides = list(args.set)
    if args.out:
        overrides.append(f"output.directory={args.out}")
    if args.seed is not None:
        overrides += [f"ibm.seed={args.seed}", f"verify.seed={args.seed}"]
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
