"""Command line driver: INI configuration, experiment runs, CSV/field output and manifests.

Usage::

    aclab verify-algebra --config F [--seed N --trials N]
    aclab solve          --config F --out D
    aclab asymptotics    --config F --out D
    aclab linearize      --config F --out D
    aclab reconstruct    --config F --out D --mode oracle|end-to-end
    aclab gamma-hat      --config F --out D
    aclab report         --manifest F

Every run writes ``manifest.json`` next to its outputs. Failures print a
JSON error object on stderr and exit with a nonzero status.
"""
import argparse
import configparser
import json
import os
import re
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import AclabError, ConfigError, ParameterError
from .mesh import BoxDomain, NodalField, build_mesh

SUBCOMMANDS = ("verify-algebra", "solve", "asymptotics", "linearize", "reconstruct", "gamma-hat", "report")
P_MESSAGE = "p must lie in (1,2)∪(2,∞)"

# section -> key -> parser name
SCHEMA = {
    "problem": {"p": "float"},
    "domain": {"lo": "vector", "hi": "vector", "n_per_axis": "int"},
    "gamma": {"preset": "str", "c": "float", "amplitude": "float", "width": "float", "center": "vector",
              "diag": "vector", "matrix": "vector", "shape": "vector"},
    "solver": {"tol": "float", "max_iter": "int", "delta": "float", "backtrack": "float",
               "linear_tol": "float", "linear_solver": "str", "armijo": "float", "max_backtracks": "int"},
    "run": {"workers": "int", "seed": "int"},
    "verify": {"trials": "int", "p_list": "list"},
    "solve": {"direction": "vector", "scale": "float"},
    "asymptotics": {"eps_list": "list", "direction": "vector"},
    "linearize": {"tau_list": "list", "direction": "vector", "perturbation": "str",
                  "xi": "vector", "eta": "vector", "t": "float"},
    "reconstruct": {"xi_list": "vectors", "t_list": "list", "tau_list": "list", "eps_list": "list",
                    "route": "str", "mode": "str", "reference": "str", "allow_small_p": "bool",
                    "volume_m_max": "int", "quad_level": "int"},
    "gamma-hat": {"xi_list": "vectors", "quad_level": "int"},
}

DEFAULTS = {
    "domain": {"lo": (-0.5, -0.5, -0.5), "hi": (0.5, 0.5, 0.5), "n_per_axis": 9},
    "gamma": {"preset": "constant-iso"},
    "run": {"workers": 1, "seed": 0},
    "verify": {"trials": 1000, "p_list": (1.5, 3.0, 4.0)},
    "solve": {"direction": (1.0, 0.0, 0.0), "scale": 1.0},
    "asymptotics": {"eps_list": (2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6), "direction": (1.0, 0.0, 0.0)},
    "linearize": {"tau_list": (4e-2, 2e-2, 1e-2), "direction": (0.0, 1.0, 0.0), "perturbation": "exponential",
                  "xi": (np.pi, 0.0, 0.0), "eta": (0.0, 0.0, 1.0), "t": 1.0},
    "reconstruct": {"xi_list": ((np.pi, 0.0, 0.0),), "route": "exact", "mode": "oracle", "reference": "identity",
                    "allow_small_p": False, "quad_level": 2},
    "gamma-hat": {"xi_list": ((np.pi, 0.0, 0.0),), "quad_level": 2},
}

_PI = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi(?:\s*/\s*(\d+\.?\d*))?$")


def parse_number(text):
    """A float, or a multiple of pi such as ``pi``, ``-pi``, ``2pi``, ``0.5*pi`` or ``pi/2``."""
    text = text.strip()
    m = _PI.match(text.replace("-pi", "-1pi").replace("+pi", "1pi"))
    if m:
        coef = float(m.group(1)) if m.group(1) not in (None, "") else 1.0
        div = float(m.group(2)) if m.group(2) else 1.0
        return coef * np.pi / div
    return float(text)


def _parse(kind, raw):
    if kind == "float":
        return parse_number(raw)
    if kind == "int":
        v = int(raw)
        return v
    if kind == "str":
        return raw.strip()
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in ("list", "vector"):
        items = [s for s in raw.split(",") if s.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(parse_number(s) for s in items)
    if kind == "vectors":
        vecs = [v for v in raw.split(";") if v.strip()]
        if not vecs:
            raise ValueError("empty list")
        return tuple(_parse("vector", v) for v in vecs)
    raise AssertionError(kind)


@dataclass
class RunConfig:
    p: float
    sections: dict
    source: str = ""

    def get(self, section, key):
        return self.sections.get(section, {}).get(key, DEFAULTS.get(section, {}).get(key))

    def section(self, name):
        out = dict(DEFAULTS.get(name, {}))
        out.update(self.sections.get(name, {}))
        return out

    def snapshot(self):
        return {"p": self.p, **{k: {kk: _jsonable(vv) for kk, vv in self.section(k).items()}
                                for k in sorted(set(SCHEMA) - {"problem"})}}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def parse_config(path):
    """Parse and validate an INI run configuration; every problem found is reported at once."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, source=str(path))


def parse_config_text(text, source="<string>"):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from exc
    errors, sections = [], {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        vals = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                errors.append(f"unknown key '{key}' in section [{sec}]")
                continue
            try:
                vals[key] = _parse(SCHEMA[sec][key], raw)
            except ValueError as exc:
                errors.append(f"[{sec}] {key}: cannot parse {raw!r} ({exc})")
        sections[sec] = vals
    p = sections.get("problem", {}).get("p")
    if p is None:
        if not any("[problem] p" in e for e in errors):
            errors.append("[problem] p is required")
    elif not (p > 1 and p != 2 and np.isfinite(p)):
        errors.append(P_MESSAGE)
    cfg = RunConfig(p if p is not None else float("nan"), sections, source)
    errors.extend(_validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _descending(name, seq, errors, lo=0.0, hi=1.0):
    if seq is None:
        return
    if any(not (lo < v < hi) for v in seq):
        errors.append(f"{name} values must lie in ({lo:g}, {hi:g})")
    if any(b >= a for a, b in zip(seq, seq[1:])):
        errors.append(f"{name} must be strictly descending")


def _validate(cfg):
    errors = []
    lo, hi = cfg.get("domain", "lo"), cfg.get("domain", "hi")
    if len(lo) != len(hi) or len(lo) not in (2, 3):
        errors.append("[domain] lo and hi must have the same dimension, 2 or 3")
    elif any(a >= b for a, b in zip(lo, hi)):
        errors.append("[domain] requires lo < hi componentwise")
    if cfg.get("domain", "n_per_axis") < 2:
        errors.append("[domain] n_per_axis must be >= 2")
    from .fields import PRESETS
    if cfg.get("gamma", "preset") not in PRESETS:
        errors.append(f"[gamma] preset must be one of {', '.join(PRESETS)}")
    for key, val in cfg.sections.get("solver", {}).items():
        if key != "linear_solver" and not val > 0:
            errors.append(f"[solver] {key} must be positive")
    if cfg.sections.get("solver", {}).get("linear_solver", "cg") not in ("cg", "direct"):
        errors.append("[solver] linear_solver must be cg or direct")
    if cfg.get("run", "workers") < 1:
        errors.append("[run] workers must be >= 1")
    if cfg.get("verify", "trials") < 1:
        errors.append("[verify] trials must be >= 1")
    for q in cfg.get("verify", "p_list"):
        if not (q > 1 and q != 2):
            errors.append(f"[verify] p_list: {P_MESSAGE}")
            break
    _descending("[asymptotics] eps_list", cfg.get("asymptotics", "eps_list"), errors)
    _descending("[reconstruct] eps_list", cfg.sections.get("reconstruct", {}).get("eps_list"), errors)
    _descending("[linearize] tau_list", cfg.get("linearize", "tau_list"), errors)
    _descending("[reconstruct] tau_list", cfg.sections.get("reconstruct", {}).get("tau_list"), errors)
    t_list = cfg.sections.get("reconstruct", {}).get("t_list")
    if t_list is not None and any(t <= 0 for t in t_list):
        errors.append("[reconstruct] t_list values must be positive")
    if cfg.get("linearize", "perturbation") not in ("self", "exponential", "zero"):
        errors.append("[linearize] perturbation must be self, exponential or zero")
    if cfg.get("reconstruct", "route") not in ("exact", "expansion"):
        errors.append("[reconstruct] route must be exact or expansion")
    if cfg.get("reconstruct", "mode") not in ("oracle", "end-to-end"):
        errors.append("[reconstruct] mode must be oracle or end-to-end")
    if cfg.get("reconstruct", "reference") not in ("identity", "none"):
        errors.append("[reconstruct] reference must be identity or none")
    return errors


# -- building blocks from a config ------------------------------------------

def _workers(cfg):
    env = os.environ.get("ACL_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError([f"ACL_WORKERS must be an integer, got {env!r}"])
        if w < 1:
            raise ConfigError(["ACL_WORKERS must be >= 1"])
        return w
    return cfg.get("run", "workers")


def _mesh(cfg):
    dom = BoxDomain(cfg.get("domain", "lo"), cfg.get("domain", "hi"))
    return build_mesh(dom, cfg.get("domain", "n_per_axis"))


def _gamma(cfg, mesh):
    from .fields import gamma_preset
    sec = cfg.section("gamma")
    name = sec.pop("preset")
    n = mesh.n
    if "matrix" in sec:
        sec["matrix"] = np.reshape(sec["matrix"], (n, n))
    if "shape" in sec:
        sec["shape"] = np.reshape(sec["shape"], (n, n))
    return gamma_preset(name, sec, mesh=mesh)


def _opts(cfg):
    from .pde import SolverOptions
    return SolverOptions(**cfg.sections.get("solver", {}))


def _direction(vec, n):
    v = np.asarray(vec, dtype=float)
    if v.shape != (n,) or np.linalg.norm(v) == 0:
        raise ParameterError(f"direction must be a nonzero {n}-vector")
    return v / np.linalg.norm(v)


# -- subcommands -------------------------------------------------------------

class Run:
    """Collects artifacts and timings for one subcommand invocation."""

    def __init__(self, name, cfg, out_dir):
        self.name = name
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.timings = {}
        self.summary = {}

    def timed(self, label):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = time.perf_counter() - self.t
        return _T()

    def csv(self, name, header, rows):
        path = io.write_csv(self.out / name, header, rows)
        self.artifacts.append(path)
        return path

    def field(self, name, fld):
        self.artifacts.extend(io.write_field(self.out / name, fld))

    def manifest(self, extra=None):
        from . import __version__
        data = {
            "subcommand": self.name,
            "version": __version__,
            "config_path": self.cfg.source,
            "config": self.cfg.snapshot(),
            "seed": self.cfg.get("run", "seed"),
            "workers": _workers(self.cfg),
            "artifacts": [{"path": p.name, "sha256": io.sha256(p), "bytes": p.stat().st_size}
                          for p in self.artifacts],
            "timings": self.timings,
            "summary": self.summary,
        }
        data.update(extra or {})
        path = self.out / "manifest.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return data


VERIFY_HEADER = ("check", "p", "family", "trials", "max_residual", "tolerance", "pass")
VERIFY_TOL = {"nullity": 1e-10, "sum": 1e-12, "bracket": 1e-12, "angle": 1e-12, "cos2": 1e-14,
              "taylor": 1e-10, "jacobian_eigen": 1e-12}


def verify_algebra_rows(p_list, trials, seed):
    """Maximum identity residuals over seeded random frames and flux arguments."""
    from .pde import FluxLaw, jacobian_eigen_error, sample_separated_pairs, taylor_remainder
    from .reconstruct import frame_residuals, random_family1, random_family2
    rng = np.random.default_rng(seed)
    rows = []
    for p in p_list:
        for fam, make in ((1, random_family1), (2, random_family2)):
            res = [frame_residuals(make(rng, p)) for _ in range(trials)]
            for key in res[0]:
                worst = max(float(r[key]) for r in res)
                rows.append((key, p, fam, trials, worst, VERIFY_TOL[key], worst <= VERIFY_TOL[key]))
        law = FluxLaw(p)
        a, b = sample_separated_pairs(rng, trials)
        r = taylor_remainder(law, a, b)
        scale = np.linalg.norm(law.flux(a), axis=1) + np.linalg.norm(law.flux(b), axis=1)
        worst = float(np.max(np.linalg.norm(r, axis=1) / scale))
        rows.append(("taylor", p, 0, trials, worst, VERIFY_TOL["taylor"], worst <= VERIFY_TOL["taylor"]))
        worst = float(jacobian_eigen_error(law, rng.normal(size=(trials, 3))))
        rows.append(("jacobian_eigen", p, 0, trials, worst, VERIFY_TOL["jacobian_eigen"],
                     worst <= VERIFY_TOL["jacobian_eigen"]))
    return rows


def cmd_verify_algebra(cfg, out_dir, seed=None, trials=None):
    seed = cfg.get("run", "seed") if seed is None else seed
    trials = cfg.get("verify", "trials") if trials is None else trials
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    run = Run("verify-algebra", cfg, out_dir)
    with run.timed("verify"):
        rows = verify_algebra_rows(cfg.get("verify", "p_list"), trials, seed)
    path = run.csv("verify_algebra.csv", VERIFY_HEADER, rows)
    run.summary = summarize("verify-algebra", {path.name: io.read_csv(path)})
    run.manifest({"seed": seed, "trials": trials})
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return 0 if all(r[-1] for r in rows) else 1


def cmd_solve(cfg, out_dir):
    from .pde import solve_quasilinear
    run = Run("solve", cfg, out_dir)
    mesh = _mesh(cfg)
    gamma = _gamma(cfg, mesh)
    opts = _opts(cfg)
    z = _direction(cfg.get("solve", "direction"), mesh.n)
    scale = cfg.get("solve", "scale")
    data = scale * (mesh.nodes @ z)
    with run.timed("solve"):
        u = solve_quasilinear(gamma, cfg.p, data, opts, mesh=mesh, run_id="solve")
    run.field("solution", u)
    run.csv("telemetry.csv", io.TELEMETRY_HEADER, u.info.rows())
    err = float(np.max(np.abs(u.values - data)))
    run.csv("solve_summary.csv", ("p", "preset", "n_per_axis", "iterations", "final_residual",
                                  "max_diff_from_linear_data", "converged"),
            [(cfg.p, gamma.name, mesh.dims[0], u.info.iterations, u.info.residuals[-1], err, u.info.converged)])
    run.summary = summarize("solve", _tables(run))
    run.manifest()
    return 0


def cmd_asymptotics(cfg, out_dir):
    from .asymptotics import dtn_correction, run_epsilon_experiment
    from .pde import solve_p_laplace
    run = Run("asymptotics", cfg, out_dir)
    mesh = _mesh(cfg)
    gamma = _gamma(cfg, mesh)
    opts = _opts(cfg)
    z = _direction(cfg.get("asymptotics", "direction"), mesh.n)
    eps = cfg.get("asymptotics", "eps_list")
    v = solve_p_laplace(cfg.p, mesh.nodes @ z, opts, mesh=mesh, initial=mesh.nodes @ z)
    with run.timed("epsilon_experiment"):
        exp = run_epsilon_experiment(gamma, cfg.p, v, eps, opts)
    run.csv("asymptotics.csv", ("branch", "p", "eps", "norm_scaled_R", "norm_R_minus_R", "dtn_quotient"), exp.rows())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        corr = dtn_correction(gamma, cfg.p, v, v.values, eps, opts, R=exp.R,
                              solutions=[NodalField(mesh, r.u) for r in exp.records])
    run.csv("dtn_correction.csv", ("extrapolated", "raw", "oracle", "order", "reliable", "warnings"),
            [(np.real(corr.value), np.real(corr.raw), np.real(corr.oracle), corr.order, corr.reliable,
              len(caught))])
    run.summary = summarize("asymptotics", _tables(run))
    run.manifest()
    return 0


def cmd_linearize(cfg, out_dir):
    from .asymptotics import frechet_check
    from .reconstruct import make_family1
    run = Run("linearize", cfg, out_dir)
    mesh = _mesh(cfg)
    opts = _opts(cfg)
    sec = cfg.section("linearize")
    z = _direction(sec["direction"], mesh.n)
    phi0 = mesh.nodes @ z
    kind = sec["perturbation"]
    if kind == "self":
        phi1 = phi0
    elif kind == "zero":
        phi1 = np.zeros(mesh.n_nodes)
    else:
        frame = make_family1(sec["xi"], sec["eta"], z, sec["t"], cfg.p)
        phi1 = np.exp(mesh.nodes @ frame.zeta_plus)
    with run.timed("frechet"):
        res = frechet_check(cfg.p, phi0, phi1, sec["tau_list"], mesh=mesh, opts=opts)
    run.csv("linearize.csv", ("tau", "frechet_error", "observed_order"), res.rows())
    run.summary = summarize("linearize", _tables(run))
    run.manifest()
    return 0


SLICE_HEADER = ("xi", "entry_label", "re", "im", "re_oracle", "im_oracle", "rel_error", "provenance", "mode")


def _slice_rows(slc, oracle, mode):
    from .reconstruct import ENTRY_LABELS
    frame_oracle = slc.frame @ oracle @ slc.frame.T
    scale = np.max(np.abs(oracle))
    xi_txt = " ".join(io.format_value(float(x)) for x in slc.xi)
    rows = []
    for (i, j), label in ENTRY_LABELS.items():
        val, ref = slc.frame_matrix[i, j], frame_oracle[i, j]
        rel = abs(val - ref) / scale if scale > 0 else abs(val - ref)
        rows.append((xi_txt, label, val.real, val.imag, ref.real, ref.imag, rel, slc.provenance[(i, j)], mode))
    return rows


def cmd_reconstruct(cfg, out_dir, mode=None):
    from .fields import gamma_hat_direct
    from .pde import DtNMap
    from .reconstruct import (DEFAULT_T, END_TO_END_T, EndToEndIdentity, OracleIdentity,
                              assemble_gamma_hat, frequency_grid, reconstruct_volume)
    from .asymptotics import DEFAULT_EPS
    from .reconstruct import DEFAULT_TAU
    mode = mode or cfg.get("reconstruct", "mode")
    if mode not in ("oracle", "end-to-end"):
        raise ParameterError("mode must be oracle or end-to-end")
    run = Run("reconstruct", cfg, out_dir)
    mesh = _mesh(cfg)
    if mesh.n != 3:
        raise ParameterError("reconstruction requires a 3D domain")
    gamma = _gamma(cfg, mesh)
    opts = _opts(cfg)
    sec = cfg.section("reconstruct")
    workers = _workers(cfg)
    if mode == "oracle":
        source = OracleIdentity(gamma, mesh, cfg.p, sec["quad_level"], opts)
        t_list = sec.get("t_list") or DEFAULT_T
    else:
        ref = None if sec["reference"] == "none" else "identity"
        source = EndToEndIdentity(DtNMap(gamma, cfg.p, mesh, opts), cfg.p,
                                  sec.get("tau_list") or DEFAULT_TAU, sec.get("eps_list") or DEFAULT_EPS,
                                  reference=ref, allow_small_p=sec["allow_small_p"], level=sec["quad_level"])
        t_list = sec.get("t_list") or END_TO_END_T
    xis = [np.asarray(x, dtype=float) for x in sec["xi_list"]]
    m_max = sec.get("volume_m_max")
    if m_max is not None:
        xis = list(frequency_grid(mesh.domain, m_max))
    rows, slices = [], {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with run.timed("assemble"):
            for xi in xis:
                slc = assemble_gamma_hat(source, xi, cfg.p, t_list, sec["route"], workers=workers)
                slices[tuple(xi)] = slc
                rows.extend(_slice_rows(slc, gamma_hat_direct(gamma, 2 * xi, mesh, sec["quad_level"]), mode))
    run.csv("gamma_hat_slices.csv", SLICE_HEADER, rows)
    if m_max is not None:
        vol = reconstruct_volume(slices, mesh, xis)
        run.field("gamma_reconstructed", vol)
    run.summary = summarize("reconstruct", _tables(run))
    run.manifest({"mode": mode})
    return 0


def cmd_gamma_hat(cfg, out_dir):
    from .fields import gamma_hat_direct
    run = Run("gamma-hat", cfg, out_dir)
    mesh = _mesh(cfg)
    gamma = _gamma(cfg, mesh)
    level = cfg.get("gamma-hat", "quad_level")
    rows = []
    with run.timed("quadrature"):
        for xi in cfg.get("gamma-hat", "xi_list"):
            xi = np.asarray(xi, dtype=float)
            G = gamma_hat_direct(gamma, 2 * xi, mesh, level)
            xi_txt = " ".join(io.format_value(float(x)) for x in xi)
            for i in range(mesh.n):
                for j in range(i, mesh.n):
                    rows.append((xi_txt, f"e{i + 1}.e{j + 1}", G[i, j].real, G[i, j].imag))
    run.csv("gamma_hat_direct.csv", ("xi", "entry_label", "re", "im"), rows)
    run.summary = summarize("gamma-hat", _tables(run))
    run.manifest()
    return 0


# -- summaries (recomputable from the CSVs alone) ----------------------------

def _tables(run):
    return {p.name: io.read_csv(p) for p in run.artifacts if p.suffix == ".csv"}


def _col(table, name):
    header, rows = table
    k = header.index(name)
    return [r[k] for r in rows]


def summarize(name, tables):
    """Summary table of a run from its CSV outputs."""
    if name == "verify-algebra":
        t = tables["verify_algebra.csv"]
        return {"checks": len(t[1]),
                "failed": sum(1 for v in _col(t, "pass") if v != "1"),
                "max_residual": max(float(v) for v in _col(t, "max_residual"))}
    if name == "solve":
        t = tables["solve_summary.csv"]
        return {"iterations": int(_col(t, "iterations")[0]),
                "max_diff_from_linear_data": float(_col(t, "max_diff_from_linear_data")[0]),
                "telemetry_rows": len(tables["telemetry.csv"][1])}
    if name == "asymptotics":
        t = tables["asymptotics.csv"]
        c = tables["dtn_correction.csv"]
        return {"eps": [float(v) for v in _col(t, "eps")],
                "norm_scaled_R": [float(v) for v in _col(t, "norm_scaled_R")],
                "norm_R_minus_R": [float(v) for v in _col(t, "norm_R_minus_R")],
                "dtn_extrapolated": float(_col(c, "extrapolated")[0]),
                "dtn_oracle": float(_col(c, "oracle")[0])}
    if name == "linearize":
        t = tables["linearize.csv"]
        return {"tau": [float(v) for v in _col(t, "tau")],
                "frechet_error": [float(v) for v in _col(t, "frechet_error")]}
    if name == "reconstruct":
        t = tables["gamma_hat_slices.csv"]
        return {"entries": len(t[1]), "max_rel_error": max(float(v) for v in _col(t, "rel_error"))}
    if name == "gamma-hat":
        t = tables["gamma_hat_direct.csv"]
        return {"entries": len(t[1]),
                "max_abs": max(abs(complex(float(a), float(b))) for a, b in zip(_col(t, "re"), _col(t, "im")))}
    raise ParameterError(f"no summary for {name!r}")


def cmd_report(manifest_path):
    path = Path(manifest_path)
    man = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    problems, tables = [], {}
    for art in man["artifacts"]:
        f = base / art["path"]
        if not f.exists():
            problems.append(f"missing artifact {art['path']}")
            continue
        if io.sha256(f) != art["sha256"]:
            problems.append(f"checksum mismatch for {art['path']}")
        if f.suffix == ".csv":
            tables[f.name] = io.read_csv(f)
    if problems:
        raise AclabError("; ".join(problems))
    summary = summarize(man["subcommand"], tables)
    out = {"subcommand": man["subcommand"], "version": man["version"], "summary": summary,
           "matches_manifest": _same(summary, man.get("summary", {})), "timings": man.get("timings", {})}
    sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0 if out["matches_manifest"] else 1


def _same(a, b):
    return json.loads(json.dumps(a)) == json.loads(json.dumps(b))


# -- entry point -------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="aclab", description="Quasilinear conductivity reconstruction laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify-algebra", help="seeded random checks of the frame and flux identities")
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int)
    v.add_argument("--trials", type=int)
    for name in ("solve", "asymptotics", "linearize", "gamma-hat"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True)
    r = sub.add_parser("reconstruct")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--mode", choices=("oracle", "end-to-end"), required=True)
    m = sub.add_parser("report")
    m.add_argument("--manifest", required=True)
    return ap


def _error(command, exc, out_dir=None):
    payload = {"subcommand": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["errors"] = exc.errors
    if getattr(exc, "missing", None):
        payload["missing"] = [str(m) for m in exc.missing]
    text = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    sys.stderr.write(text + "\n")
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return 2 if isinstance(exc, ConfigError) else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = getattr(args, "out", None)
    try:
        if args.command == "report":
            return cmd_report(args.manifest)
        cfg = parse_config(args.config)
        if args.command == "verify-algebra":
            return cmd_verify_algebra(cfg, Path(args.config).parent / "verify-algebra-out", args.seed, args.trials)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, out_dir, args.mode)
        handler = {"solve": cmd_solve, "asymptotics": cmd_asymptotics,
                   "linearize": cmd_linearize, "gamma-hat": cmd_gamma_hat}[args.command]
        return handler(cfg, out_dir)
    except Exception as exc:  # every failure leaves a machine-readable record
        return _error(args.command, exc, out_dir)


if __name__ == "__main__":
    sys.exit(main())
