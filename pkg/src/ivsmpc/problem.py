"""Problem files (YAML) and synthesis artifacts (JSON).

A problem file looks like::

    system:
      a: [[1.0, 0.0075], [-0.143, 0.996]]
      b: [[4.798], [0.115]]
      vw: [[0.1, 0.0], [0.0, 0.1]]
    cost: {q: [[1, 0], [0, 10]], r: [[10]]}
    horizon: 8
    constraints:
      - {c: [1, 0], d: 2.0, rho: 0.9, kind: state}
    schemes:
      ivsmpc: {tightening: gaussian}
      icsmpc: {tightening: unimodal}
    terminal: {kind: none, box: 100.0}
    sim: {steps: 50, runs: 2000, seed: 7, x0: [1.99, 7.0]}

Matrices are row-major nested lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import numkernel as nk
from .controller import OcpSpec
from .convexsolver import ScpOptions
from .errors import ProblemFileError
from .estimators import terminal_region
from .mcsim import SimConfig, SimSetup
from .model import TIGHTENINGS, ChanceConstraint, GainSet, LinearSystem, synthesize, variance_profile
from .terminalset import Polytope

SCHEME_DEFAULTS = {
    "ivsmpc": {"tightening": "gaussian", "variance_mode": "interpolated"},
    "icsmpc": {"tightening": "unimodal", "variance_mode": "fixed"},
}


def _node_line(root, path):
    """1-based line of the YAML node at ``path`` (keys and indices), best effort."""
    node, line = root, None
    for key in path:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


class _Reader:
    def __init__(self, data, root, source):
        self.data, self.root, self.source = data, root, source

    def fail(self, path, msg):
        line = _node_line(self.root, path) if self.root is not None else None
        where = ".".join(str(p) for p in path) or "<root>"
        loc = f"{self.source}:{line}: " if line else f"{self.source}: "
        raise ProblemFileError(f"{loc}field '{where}': {msg}")

    def get(self, path, default=KeyError):
        node = self.data
        for key in path:
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
            else:
                if default is KeyError:
                    self.fail(path, "missing")
                return default
        return node

    def matrix(self, path, shape=None):
        raw = self.get(path)
        if isinstance(raw, (int, float)):
            raw = [[raw]]
        if not isinstance(raw, list) or not raw:
            self.fail(path, "expected a non-empty row-major matrix")
        rows = [r if isinstance(r, list) else [r] for r in raw]
        width = len(rows[0])
        for i, r in enumerate(rows):
            if len(r) != width:
                self.fail(path + [i], f"row has {len(r)} entries, expected {width}")
            for j, v in enumerate(r):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    self.fail(path + [i, j], f"entry {v!r} is not a finite number")
        m = np.array(rows, dtype=float)
        if shape is not None and m.shape != shape:
            self.fail(path, f"shape {m.shape}, expected {shape}")
        return m

    def vector(self, path, size=None):
        raw = self.get(path)
        if isinstance(raw, (int, float)):
            raw = [raw]
        if not isinstance(raw, list):
            self.fail(path, "expected a list of numbers")
        for i, v in enumerate(raw):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                self.fail(path + [i], f"entry {v!r} is not a finite number")
        v = np.array(raw, dtype=float)
        if size is not None and v.size != size:
            self.fail(path, f"length {v.size}, expected {size}")
        return v

    def number(self, path, default=KeyError, kind=float):
        v = self.get(path, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if kind is int and (not float(v).is_integer()):
            self.fail(path, f"expected an integer, got {v!r}")
        return kind(v)


@dataclass
class Problem:
    sys: LinearSystem
    q: np.ndarray
    r: np.ndarray
    horizon: int
    constraints: tuple
    schemes: dict
    terminal: str = "none"
    terminal_box: float = 100.0
    sim: dict = field(default_factory=dict)
    source: str = "<memory>"

    def scheme_options(self, scheme, tightening=None):
        opts = dict(SCHEME_DEFAULTS[scheme])
        opts.update(self.schemes.get(scheme, {}))
        if tightening is not None:
            opts["tightening"] = tightening
        return opts

    def synthesize(self):
        return synthesize(self.sys, self.q, self.r)

    def terminal_set(self, gains, scheme, tightening=None):
        opts = self.scheme_options(scheme, tightening)
        return terminal_region(gains, self.constraints, opts["tightening"], self.terminal,
                               self.terminal_box)

    def setup(self, scheme, tightening=None, gains=None, terminal_sets=None):
        """:class:`SimSetup` for ``scheme``; ``gains`` / ``terminal_sets`` come from an artifact."""
        gains = gains if gains is not None else self.synthesize()
        if scheme == "lqr":
            return SimSetup(sys=self.sys, gains=gains, constraints=self.constraints)
        opts = self.scheme_options(scheme, tightening)
        z_f = None
        if terminal_sets is not None and tightening is None:
            z_f = terminal_sets.get(scheme)
        if z_f is None:
            z_f = self.terminal_set(gains, scheme, tightening)
        ocp = OcpSpec(sys=self.sys, gains=gains, constraints=self.constraints, n=self.horizon,
                      z_f=z_f, tightening=opts["tightening"],
                      variance_mode=opts["variance_mode"], scp=ScpOptions())
        return SimSetup(sys=self.sys, gains=gains, constraints=self.constraints, ocp=ocp)

    def sim_config(self, scheme, steps=None, runs=None, seed=None):
        return SimConfig(steps=int(steps if steps is not None else self.sim.get("steps", 50)),
                         runs=int(runs if runs is not None else self.sim.get("runs", 2000)),
                         seed=int(seed if seed is not None else self.sim.get("seed", 0)),
                         scheme=scheme,
                         x0=tuple(self.sim.get("x0", np.zeros(self.sys.n_x))))


def parse_problem(text, source="<string>"):
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ProblemFileError(f"{source}: YAML syntax error: {exc}") from exc
    if not isinstance(data, dict):
        raise ProblemFileError(f"{source}: top level must be a mapping")
    rd = _Reader(data, root, source)
    a = rd.matrix(["system", "a"])
    n = a.shape[0]
    if a.shape != (n, n):
        rd.fail(["system", "a"], f"must be square, got {a.shape}")
    b = rd.matrix(["system", "b"])
    if b.shape[0] != n:
        if b.shape == (1, n):
            b = b.T
        else:
            rd.fail(["system", "b"], f"must have {n} rows, got shape {b.shape}")
    m = b.shape[1]
    vw = rd.matrix(["system", "vw"], (n, n))
    try:
        sys = LinearSystem(a, b, vw)
    except ValueError as exc:
        rd.fail(["system"], str(exc))
    q = rd.matrix(["cost", "q"], (n, n))
    r = rd.matrix(["cost", "r"], (m, m))
    horizon = rd.number(["horizon"], kind=int)
    if horizon < 1:
        rd.fail(["horizon"], "must be >= 1")
    cons = []
    raw_cons = rd.get(["constraints"], [])
    if not isinstance(raw_cons, list):
        rd.fail(["constraints"], "expected a list")
    for i in range(len(raw_cons)):
        kind = rd.get(["constraints", i, "kind"], "state")
        size = n if kind == "state" else m
        c = rd.vector(["constraints", i, "c"], size)
        d = rd.number(["constraints", i, "d"])
        rho = rd.number(["constraints", i, "rho"])
        try:
            cons.append(ChanceConstraint(c, d, rho, kind))
        except ValueError as exc:
            rd.fail(["constraints", i], str(exc))
    schemes = {}
    raw_schemes = rd.get(["schemes"], {}) or {}
    for name, opts in raw_schemes.items():
        if name not in SCHEME_DEFAULTS:
            rd.fail(["schemes", name], f"unknown scheme; expected one of {list(SCHEME_DEFAULTS)}")
        opts = dict(opts or {})
        if opts.get("tightening", "gaussian") not in TIGHTENINGS:
            rd.fail(["schemes", name, "tightening"], f"expected one of {TIGHTENINGS}")
        if opts.get("variance_mode", "interpolated") not in ("interpolated", "fixed"):
            rd.fail(["schemes", name, "variance_mode"], "expected 'interpolated' or 'fixed'")
        schemes[name] = opts
    terminal = rd.get(["terminal", "kind"], "none")
    if terminal not in ("none", "mpis"):
        rd.fail(["terminal", "kind"], "expected 'none' or 'mpis'")
    terminal_box = rd.number(["terminal", "box"], 100.0)
    sim = dict(rd.get(["sim"], {}) or {})
    if "x0" in sim:
        sim["x0"] = tuple(rd.vector(["sim", "x0"], n))
    for key in ("steps", "runs", "seed"):
        if key in sim:
            sim[key] = rd.number(["sim", key], kind=int)
    return Problem(sys=sys, q=q, r=r, horizon=horizon, constraints=tuple(cons), schemes=schemes,
                   terminal=terminal, terminal_box=terminal_box, sim=sim, source=source)


def load_problem(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(f"{path}: cannot read: {exc}") from exc
    return parse_problem(text, str(path))


def bundled_problem_path(name="dcdc"):
    return Path(__file__).parent / "data" / f"{name}.yaml"


# ---------------------------------------------------------------- artifacts

def _polytope_json(p):
    return {"c": p.c_mat.tolist(), "d": p.d_vec.tolist()}


def synthesis_artifact(problem, gains, terminal_sets):
    """JSON-ready record of the offline synthesis, floats at full precision."""
    profile = variance_profile(gains, gains.ve_inf, problem.horizon)
    ric = gains.a_k.T @ gains.p @ gains.a_k + gains.qk - gains.p
    lyap = gains.a_k @ gains.ve_inf @ gains.a_k.T + gains.vw - gains.ve_inf
    return {
        "k": gains.k.tolist(),
        "a_k": gains.a_k.tolist(),
        "p": gains.p.tolist(),
        "ve_inf": gains.ve_inf.tolist(),
        "ell_ss": gains.ell_ss,
        "q": gains.q.tolist(),
        "r": gains.r.tolist(),
        "vw": gains.vw.tolist(),
        "qk": gains.qk.tolist(),
        "variance_offsets": profile.h.tolist(),
        "terminal_sets": {k: _polytope_json(v) for k, v in terminal_sets.items()},
        "residuals": {
            "cost_to_go": float(np.abs(ric).max() / max(np.abs(gains.p).max(), 1e-300)),
            "stationary_covariance": float(np.abs(lyap).max()
                                           / max(np.abs(gains.ve_inf).max(), 1e-300)),
        },
    }


def riccati_residual(sys, gains):
    """Relative residual of the algebraic Riccati equation at the synthesized ``p``."""
    a, b, p, q, r = sys.a, sys.b, gains.p, gains.q, gains.r
    bp = b.T @ p
    res = a.T @ p @ a - a.T @ p @ b @ np.linalg.solve(r + bp @ b, bp @ a) + q - p
    return float(np.abs(res).max() / max(np.abs(p).max(), 1e-300))


def write_artifact(path, record):
    Path(path).write_text(json.dumps(record, indent=1))


def load_artifact(path):
    """``(gains, terminal_sets)`` from a synthesis artifact."""
    try:
        rec = json.loads(Path(path).read_text())
        arr = lambda key: np.array(rec[key], dtype=float)  # noqa: E731
        gains = GainSet(k=arr("k"), a_k=arr("a_k"), p=arr("p"), ve_inf=arr("ve_inf"),
                        ell_ss=float(rec["ell_ss"]), q=arr("q"), r=arr("r"), vw=arr("vw"),
                        qk=arr("qk"))
        sets = {}
        for name, pj in rec.get("terminal_sets", {}).items():
            c = np.array(pj["c"], dtype=float)
            n = gains.a_k.shape[0]
            sets[name] = Polytope(c.reshape(-1, n), np.array(pj["d"], dtype=float))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ProblemFileError(f"{path}: invalid synthesis artifact: {exc}") from exc
    if not nk.is_psd(gains.ve_inf):
        raise ProblemFileError(f"{path}: ve_inf is not positive semidefinite")
    return gains, sets
