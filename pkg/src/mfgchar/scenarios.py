"""Scenario files and the built-in catalog.

A scenario is a small sectioned ``key = value`` file (or the equivalent JSON
object) naming the coefficients, the initial measure, the solver settings,
an optional refinement sweep and per-check tolerances::

    [scenario]
    name = conv1d
    d = 1

    [hamiltonian]
    kind = quadratic

    [running_cost]
    kind = convolution
    modes = 1:0.5

    [initial_cost]
    kind = convolution
    modes = 1:0.3; 2:0.1

    [measure]
    kind = warped_grid
    n = 8
    delta = 0.05

    [solver]
    T = 0.1
    s = 0.05
    K = 40
    grid = 32

Unknown sections or keys are errors.  Seeded uniform samples use NumPy's
``PCG64`` bit generator: ``Generator(PCG64(seed)).random((n, d))``.
"""

import configparser
import copy
import json
import os
from io import StringIO

import numpy as np

from . import coefficients as co
from .characteristics import SolverConfig
from .errors import ConfigError, InvalidInputError
from .measure import EmpiricalMeasure

SECTIONS = {
    "scenario": {"name", "d", "description"},
    "hamiltonian": {"kind", "eps"},
    "running_cost": {"kind", "value", "vector", "amplitude", "modes"},
    "initial_cost": {"kind", "value", "vector", "amplitude", "modes"},
    "measure": {"kind", "n", "seed", "delta", "particles"},
    "solver": {"T", "s", "K", "grid", "tol", "max_iters", "h_q", "h_x",
               "newton_tol", "newton_max_iters", "theta", "theta_factor"},
    "sweep": {"K", "m", "n"},
    "checks": None,  # any known check name
    "master": {"q", "s"},
}

REQUIRED = ("scenario", "hamiltonian", "running_cost", "initial_cost", "measure", "solver")

CHECK_NAMES = (
    "fixed_point", "terminal_condition", "initial_condition", "contraction",
    "jacobian_det", "inversion_roundtrip", "initial_value", "hjb", "continuity",
    "gradient_identity", "symmetry", "quadratic_specialization", "flow_identity",
    "uniqueness", "mass_conservation",
)

DEFAULT_CHECKS = {
    "fixed_point": 2.0, "terminal_condition": 0.0, "initial_condition": 1.0,
    "contraction": 1.0, "jacobian_det": 0.5, "inversion_roundtrip": 1e-10,
    "initial_value": 1e-10, "hjb": 1e-3, "continuity": 1e-5,
    "gradient_identity": 1e-3, "symmetry": 1e-3, "flow_identity": 1e-8,
    "uniqueness": 1e-8, "mass_conservation": 0.0,
}


def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _ints(text):
    out = []
    for v in _floats(text):
        if v != int(v):
            raise ConfigError(f"expected integers, got {text!r}")
        out.append(int(v))
    return out


def _points(text, d):
    rows = [r for r in str(text).split(";") if r.strip()]
    pts = np.array([_floats(r) for r in rows], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != d:
        raise ConfigError(f"points must have {d} coordinates each: {text!r}")
    return pts


def _modes(text, d, width):
    """``k1,k2:c[:c2]; ...`` -> list of (wavevector, coefficients...)."""
    out = []
    for item in str(text).split(";"):
        if not item.strip():
            continue
        parts = item.split(":")
        if len(parts) != width + 1:
            raise ConfigError(f"bad mode {item!r}")
        k = _floats(parts[0])
        if len(k) != d:
            raise ConfigError(f"wavevector {parts[0]!r} must have {d} entries")
        out.append((tuple(k),) + tuple(float(p) for p in parts[1:]))
    if not out:
        raise ConfigError("at least one mode is required")
    return out


class Scenario:
    """Validated scenario; ``data`` keeps the normalised section dictionary."""

    def __init__(self, data):
        self.data = _normalise(data)
        self.triple  # validates coefficients and the theta gate
        self.config()

    # -- construction ------------------------------------------------------
    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
        if path.endswith(".json") or text.lstrip().startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        else:
            cp = configparser.ConfigParser(interpolation=None)
            cp.optionxform = str
            try:
                cp.read_string(text)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            data = {sec: dict(cp[sec]) for sec in cp.sections()}
        return cls(data)

    @classmethod
    def load(cls, ref):
        """Catalog name or path to a scenario file."""
        if ref in CATALOG and not os.path.exists(ref):
            return cls(copy.deepcopy(CATALOG[ref]))
        if not os.path.exists(ref):
            raise ConfigError(f"unknown scenario {ref!r} (not a file or catalog name)")
        return cls.from_file(ref)

    def with_overrides(self, **kw):
        data = copy.deepcopy(self.data)
        mapping = {"T": ("solver", "T"), "s": ("solver", "s"), "K": ("solver", "K"),
                   "grid": ("solver", "grid"), "tol": ("solver", "tol"),
                   "max_iters": ("solver", "max_iters"), "h_q": ("solver", "h_q"),
                   "n": ("measure", "n"), "seed": ("measure", "seed")}
        for key, val in kw.items():
            if val is None:
                continue
            sec, k = mapping[key]
            data[sec][k] = val
        return Scenario(data)

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, vals in self.data.items():
            cp[sec] = {k: _ini_value(k, v) for k, v in vals.items()}
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()

    def echo(self):
        return json.loads(json.dumps(self.data, sort_keys=True))

    # -- accessors ---------------------------------------------------------
    @property
    def name(self):
        return self.data["scenario"]["name"]

    @property
    def d(self):
        return self.data["scenario"]["d"]

    @property
    def grid(self):
        return self.data["solver"].get("grid", 8)

    @property
    def s(self):
        return self.data["solver"]["s"]

    @property
    def triple(self):
        sol = self.data["solver"]
        H = _hamiltonian(self.data["hamiltonian"], self.d)
        F = _coupling(self.data["running_cost"], self.d)
        g = _coupling(self.data["initial_cost"], self.d)
        theta = sol.get("theta", "auto")
        if theta == "auto":
            theta = sol.get("theta_factor", 1.1) * co.theta_threshold(max(F.kappa, g.kappa))
        return co.CoefficientTriple(H, F, g, theta=float(theta))

    def measure(self, n=None):
        m = self.data["measure"]
        kind = m["kind"]
        d = self.d
        if kind == "explicit":
            return EmpiricalMeasure(np.asarray(m["particles"], dtype=float))
        n = int(m["n"] if n is None else n)
        if n < 1:
            raise InvalidInputError("n must be at least 1")
        if kind == "uniform":
            rng = np.random.Generator(np.random.PCG64(int(m.get("seed", 0))))
            return EmpiricalMeasure(rng.random((n, d)))
        if kind == "warped_grid":
            # u_j = j / n moved by delta sin(2 pi u_j) / (2 pi) along the diagonal;
            # grids nest across n so a fixed point can be followed in sweeps
            u = np.arange(n) / n
            x = u + m.get("delta", 0.0) * np.sin(2 * np.pi * u) / (2 * np.pi)
            return EmpiricalMeasure(np.repeat(x[:, None], d, axis=1))
        raise ConfigError(f"unknown measure kind {kind!r}")

    def config(self, K=None):
        sol = self.data["solver"]
        kw = dict(T=sol["T"], s=sol["s"], K=int(sol["K"] if K is None else K))
        for src, dst in (("tol", "tol_fixed_point"), ("max_iters", "max_iters"),
                         ("h_q", "h_q"), ("h_x", "h_x"), ("newton_tol", "newton_tol"),
                         ("newton_max_iters", "newton_max_iters")):
            if src in sol:
                kw[dst] = sol[src]
        return SolverConfig(**kw)

    def checks(self):
        """Requested checks with tolerances, in the canonical order."""
        req = self.data.get("checks")
        if req is None:
            req = dict(DEFAULT_CHECKS)
            if self.data["hamiltonian"]["kind"] == "quadratic":
                req["quadratic_specialization"] = 1e-6
        return {k: req[k] for k in CHECK_NAMES if k in req}

    def sweep_levels(self):
        sw = self.data.get("sweep")
        if not sw:
            return [(self.data["solver"]["K"], self.grid, None)]
        Ks = sw.get("K", [self.data["solver"]["K"]])
        ms = sw.get("m", [self.grid] * len(Ks))
        ns = sw.get("n", [None] * len(Ks))
        L = max(len(Ks), len(ms), len(ns))
        for name, seq in (("K", Ks), ("m", ms), ("n", ns)):
            if len(seq) not in (1, L):
                raise ConfigError(f"sweep list {name} has inconsistent length")
        pick = (lambda seq, i: seq[i] if len(seq) == L else seq[0])
        return [(pick(Ks, i), pick(ms, i), pick(ns, i)) for i in range(L)]

    def master_probes(self):
        mp = self.data.get("master", {})
        qs = np.asarray(mp.get("q", [[0.3] * self.d]), dtype=float)
        ss = mp.get("s", [self.s])
        return qs, ss


def _ini_value(key, v):
    if key == "modes":
        return "; ".join(",".join(repr(float(c)) for c in m[0]) + ":"
                         + ":".join(repr(float(c)) for c in m[1:]) for m in v)
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            return "; ".join(", ".join(repr(float(c)) for c in row) for row in v)
        return ", ".join(str(c) for c in v)
    return str(v)


def _normalise(data):
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping of sections")
    for sec in data:
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    for sec in REQUIRED:
        if sec not in data:
            raise ConfigError(f"missing section [{sec}]")
    out = {}
    for sec, vals in data.items():
        if not isinstance(vals, dict):
            raise ConfigError(f"section [{sec}] must be a mapping")
        allowed = SECTIONS[sec] if sec != "checks" else set(CHECK_NAMES)
        for k in vals:
            if k not in allowed:
                raise ConfigError(f"unknown key {k!r} in [{sec}]")
        out[sec] = dict(vals)
    try:
        sc = out["scenario"]
        sc["name"] = str(sc["name"])
        sc["d"] = int(sc["d"])
        if sc["d"] < 1:
            raise ConfigError("d must be positive")
        d = sc["d"]
        sol = out["solver"]
        for k in ("T", "s", "tol", "h_q", "h_x", "newton_tol", "theta_factor"):
            if k in sol:
                sol[k] = float(sol[k])
        for k in ("K", "grid", "max_iters", "newton_max_iters"):
            if k in sol:
                sol[k] = int(float(sol[k]))
        if "theta" in sol and sol["theta"] != "auto":
            sol["theta"] = float(sol["theta"])
        for k in ("T", "s", "K"):
            if k not in sol:
                raise ConfigError(f"[solver] needs {k}")
        meas = out["measure"]
        if "n" in meas:
            meas["n"] = int(float(meas["n"]))
        if "seed" in meas:
            meas["seed"] = int(float(meas["seed"]))
        if "delta" in meas:
            meas["delta"] = float(meas["delta"])
        if "particles" in meas and isinstance(meas["particles"], str):
            meas["particles"] = _points(meas["particles"], d).tolist()
        if meas.get("kind") not in ("explicit", "uniform", "warped_grid"):
            raise ConfigError(f"unknown measure kind {meas.get('kind')!r}")
        if meas["kind"] == "explicit" and "particles" not in meas:
            raise ConfigError("explicit measure needs particles")
        if meas["kind"] != "explicit" and meas.get("n", 0) < 1:
            raise ConfigError("measure needs n >= 1")
        for sec in ("running_cost", "initial_cost"):
            c = out[sec]
            if "modes" in c and isinstance(c["modes"], str):
                width = 2 if c.get("kind") == "potential" else 1
                c["modes"] = [[list(m[0])] + list(m[1:]) for m in _modes(c["modes"], d, width)]
            if "vector" in c and isinstance(c["vector"], str):
                c["vector"] = _floats(c["vector"])
            for k in ("value", "amplitude"):
                if k in c:
                    c[k] = float(c[k])
        if "eps" in out["hamiltonian"]:
            out["hamiltonian"]["eps"] = float(out["hamiltonian"]["eps"])
        if "sweep" in out:
            sw = out["sweep"]
            for k in list(sw):
                sw[k] = _ints(sw[k]) if isinstance(sw[k], str) else [int(v) for v in sw[k]]
        if "checks" in out:
            out["checks"] = {k: float(v) for k, v in out["checks"].items()}
        if "master" in out:
            mp = out["master"]
            if "q" in mp and isinstance(mp["q"], str):
                mp["q"] = _points(mp["q"], d).tolist()
            if "s" in mp and isinstance(mp["s"], str):
                mp["s"] = _floats(mp["s"])
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid scenario value: {exc}") from exc
    return out


def _hamiltonian(spec, d):
    kind = spec.get("kind")
    if kind == "quadratic":
        return co.builtin_quadratic_hamiltonian()
    if kind == "nonconvex":
        return co.builtin_nonconvex_hamiltonian(float(spec.get("eps", 0.01)))
    raise ConfigError(f"unknown hamiltonian kind {kind!r}")


def _coupling(spec, d):
    kind = spec.get("kind")
    if kind == "zero":
        return co.builtin_zero_coupling()
    if kind == "constant":
        return co.builtin_constant_coupling(float(spec.get("value", 0.0)))
    if kind == "constant_gradient":
        vec = np.asarray(spec.get("vector", [0.0] * d), dtype=float)
        if vec.shape != (d,):
            raise ConfigError("constant_gradient vector must have d entries")
        return co.builtin_constant_gradient_coupling(vec)
    if kind == "cosine_force":
        return co.builtin_cosine_force(float(spec["amplitude"]), d)
    if kind == "convolution":
        modes = [(m[0], m[1]) for m in spec["modes"]]
        return co.builtin_convolution_coupling(co.FourierKernel.from_modes(modes, d))
    if kind == "potential":
        modes = [(m[0], m[1], m[2]) for m in spec["modes"]]
        return co.builtin_potential_coupling(co.FourierPotential.from_modes(modes, d))
    raise ConfigError(f"unknown coupling kind {kind!r}")


def _base(name, d, H, F, g, measure, solver, **extra):
    out = {"scenario": {"name": name, "d": d}, "hamiltonian": H,
           "running_cost": F, "initial_cost": g, "measure": measure, "solver": solver}
    out.update(extra)
    return out


_TRIVIAL_CHECKS = {k: 1e-8 for k in CHECK_NAMES}
_TRIVIAL_CHECKS.update(fixed_point=2.0, terminal_condition=0.0, initial_condition=1.0,
                       contraction=1.0, jacobian_det=0.5, mass_conservation=0.0)

CATALOG = {
    "trivial": _base(
        "trivial", 1, {"kind": "quadratic"}, {"kind": "zero"},
        {"kind": "constant", "value": 0.7},
        {"kind": "uniform", "n": 5, "seed": 0},
        {"T": 0.1, "s": 0.1, "K": 40, "grid": 16},
        checks=dict(_TRIVIAL_CHECKS), master={"q": [[0.3], [0.8]], "s": [0.05]}),
    "trivial2d": _base(
        "trivial2d", 2, {"kind": "quadratic"}, {"kind": "zero"},
        {"kind": "constant", "value": 0.7},
        {"kind": "uniform", "n": 5, "seed": 0},
        {"T": 0.1, "s": 0.1, "K": 20, "grid": 8},
        checks=dict(_TRIVIAL_CHECKS), master={"q": [[0.3, 0.6]], "s": [0.05]}),
    "oracle1d": _base(
        "oracle1d", 1, {"kind": "quadratic"}, {"kind": "zero"},
        {"kind": "cosine_force", "amplitude": 0.05},
        {"kind": "warped_grid", "n": 4, "delta": 0.05},
        {"T": 0.1, "s": 0.1, "K": 160, "grid": 64},
        sweep={"K": [40, 80, 160, 320], "m": [16, 32, 64, 128]},
        checks={"fixed_point": 2.0, "terminal_condition": 0.0, "initial_condition": 1.0,
                "contraction": 1.0, "jacobian_det": 0.5, "inversion_roundtrip": 1e-10,
                "initial_value": 1e-10, "hjb": 1e-4, "continuity": 1e-8,
                "gradient_identity": 2e-4, "symmetry": 1e-12,
                "quadratic_specialization": 1e-6, "flow_identity": 1e-8,
                "uniqueness": 1e-8, "mass_conservation": 0.0},
        master={"q": [[0.3], [0.55]], "s": [0.05]}),
    "translate1d": _base(
        "translate1d", 1, {"kind": "quadratic"}, {"kind": "zero"},
        {"kind": "constant_gradient", "vector": [0.2]},
        {"kind": "uniform", "n": 6, "seed": 3},
        {"T": 0.1, "s": 0.1, "K": 40, "grid": 16},
        checks={"fixed_point": 2.0, "terminal_condition": 0.0, "contraction": 1.0,
                "continuity": 1e-5, "mass_conservation": 0.0}),
    "conv1d": _base(
        "conv1d", 1, {"kind": "quadratic"},
        {"kind": "convolution", "modes": [[[1.0], 0.5]]},
        {"kind": "convolution", "modes": [[[1.0], 0.3], [[2.0], 0.1]]},
        {"kind": "warped_grid", "n": 8, "delta": 0.05},
        {"T": 0.1, "s": 0.05, "K": 40, "grid": 32},
        sweep={"K": [40, 80, 160], "m": [16, 32, 64], "n": [4, 8, 16]},
        checks={"fixed_point": 2.0, "terminal_condition": 0.0, "initial_condition": 1.0,
                "contraction": 1.0, "jacobian_det": 0.5, "inversion_roundtrip": 1e-10,
                "initial_value": 1e-10, "hjb": 1e-3, "continuity": 1e-6,
                "gradient_identity": 1e-3, "symmetry": 1e-12,
                "quadratic_specialization": 1e-6, "flow_identity": 1e-8,
                "uniqueness": 1e-8, "mass_conservation": 0.0},
        master={"q": [[0.3], [0.7]], "s": [0.05]}),
    "conv2d": _base(
        "conv2d", 2, {"kind": "quadratic"},
        {"kind": "convolution", "modes": [[[1.0, 0.0], 0.2], [[0.0, 1.0], 0.15],
                                          [[1.0, 1.0], 0.1]]},
        {"kind": "convolution", "modes": [[[1.0, 0.0], 0.15], [[1.0, -1.0], 0.08]]},
        {"kind": "uniform", "n": 6, "seed": 1},
        {"T": 0.1, "s": 0.1, "K": 16, "grid": 16},
        sweep={"K": [4, 8, 16, 32], "m": [4, 8, 16, 32]},
        checks={"fixed_point": 2.0, "terminal_condition": 0.0, "initial_condition": 1.0,
                "contraction": 1.0, "jacobian_det": 0.5, "inversion_roundtrip": 1e-10,
                "initial_value": 1e-10, "hjb": 1e-4, "continuity": 1e-6,
                "gradient_identity": 1e-3, "symmetry": 1e-4,
                "quadratic_specialization": 1e-6, "flow_identity": 1e-8,
                "uniqueness": 1e-8, "mass_conservation": 0.0},
        master={"q": [[0.3, 0.6]], "s": [0.05]}),
    "nonconvex1d": _base(
        "nonconvex1d", 1, {"kind": "nonconvex", "eps": 0.002},
        {"kind": "convolution", "modes": [[[1.0], 0.3]]},
        {"kind": "cosine_force", "amplitude": 0.05},
        {"kind": "uniform", "n": 6, "seed": 2},
        {"T": 0.1, "s": 0.05, "K": 40, "grid": 32},
        sweep={"K": [20, 40, 80], "m": [16, 32, 64]},
        master={"q": [[0.4]], "s": [0.05]}),
    "diverge": _base(
        "diverge", 1, {"kind": "quadratic"},
        {"kind": "convolution", "modes": [[[1.0], 4.0]]},
        {"kind": "convolution", "modes": [[[1.0], 4.0]]},
        {"kind": "uniform", "n": 4, "seed": 0},
        {"T": 5.0, "s": 5.0, "K": 50, "grid": 8, "max_iters": 200}),
}

#: scenarios where the horizon is small enough for contraction
STANDARD = ("trivial", "trivial2d", "oracle1d", "translate1d", "conv1d", "conv2d",
            "nonconvex1d")
