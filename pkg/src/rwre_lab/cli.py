"""Command-line entry point: experiments as subcommands over a JSON config.

Every run writes its tabular outputs as RFC-4180 CSV with a leading ``#``
comment line carrying the run digest, plus a ``manifest.json`` with the
config snapshot and per-file checksums.  Outputs are byte-identical across
reruns with the same config and master seed, for any worker count.

Exit codes: 0 success, 2 invalid configuration, 3 insufficient data.
"""

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__
from .env import (ConfigurationError, DirichletNeighbors, EnvironmentHandle,
                  EnvironmentModel, EpsilonPerturbedDrift, Homogeneous,
                  JumpSet, ModelError, SiteKernel, TwoKernelMixture,
                  nearest_neighbor_jumps, validate_model)
from .paths import parse_functional, surgery_bound_check
from .prf import derive_seed
from .regen import (ConfirmationPolicy, InsufficientDataError, InputError,
                    detect_joint_regenerations, detect_regenerations)
from .walk import simulate_pair, simulate_walk
from . import stats as st

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


# --- Model catalog and construction ---------------------------------------

MODEL_CATALOG = {
    "homogeneous": {
        "doc": "One fixed kernel at every site.",
        "params": {"probs": "list of probabilities aligned with the jump set"},
        "defaults": {"probs": [0.4, 0.25, 0.1, 0.25]},
    },
    "dirichlet": {
        "doc": "Independent Dirichlet(alpha) kernel at every site.",
        "params": {"alpha": "positive concentration per jump offset"},
        "defaults": {"alpha": [4.0, 2.0, 1.0, 2.0]},
    },
    "perturbed": {
        "doc": "Base kernel plus small i.i.d. per-offset noise, renormalized.",
        "params": {"probs": "base kernel probabilities",
                   "epsilon": "perturbation amplitude",
                   "noise": "uniform | gaussian"},
        "defaults": {"probs": [0.4, 0.25, 0.1, 0.25], "epsilon": 0.05,
                     "noise": "uniform"},
    },
    "mixture": {
        "doc": "Kernel A with probability q, kernel B otherwise, per site.",
        "params": {"q": "mixing weight in [0, 1]",
                   "probs_a": "kernel A probabilities",
                   "probs_b": "kernel B probabilities"},
        "defaults": {"q": 0.5, "probs_a": [0.5, 0.2, 0.1, 0.2],
                     "probs_b": [0.3, 0.3, 0.1, 0.3]},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "family": {"enum": sorted(MODEL_CATALOG)},
                "dimension": {"type": "integer", "minimum": 2},
                "direction_axis": {"type": "integer", "minimum": 0},
                "r0": {"type": "number", "exclusiveMinimum": 0},
                "params": {"type": "object"},
            },
            "required": ["family"],
            "additionalProperties": False,
        },
        "policy": {
            "type": "object",
            "properties": {
                "margin": {"type": "integer", "minimum": 1},
                "tail_handling": {"enum": ["drop", "censor"]},
            },
            "additionalProperties": False,
        },
        "experiment": {"type": "object"},
        "master_seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "safety_factor": {"type": "number", "minimum": 1},
    },
    "additionalProperties": False,
}

DEFAULT_CONFIG = {
    "model": {"family": "dirichlet", "dimension": 2, "direction_axis": 0,
              "r0": 1.0, "params": {}},
    "policy": {"margin": 4, "tail_handling": "drop"},
    "experiment": {},
    "master_seed": 1,
    "out_dir": "out",
    "threads": 1,
    "safety_factor": 4,
}


def build_model(spec) -> EnvironmentModel:
    fam = spec["family"]
    if fam not in MODEL_CATALOG:
        raise ConfigurationError(
            f"unknown family {fam!r}; valid: {sorted(MODEL_CATALOG)}")
    d = int(spec.get("dimension", 2))
    params = dict(MODEL_CATALOG[fam]["defaults"])
    params.update(spec.get("params", {}))
    js = nearest_neighbor_jumps(d)
    if fam == "homogeneous":
        family = Homogeneous(SiteKernel(js, np.asarray(params["probs"])))
    elif fam == "dirichlet":
        family = DirichletNeighbors(js, np.asarray(params["alpha"]))
    elif fam == "perturbed":
        family = EpsilonPerturbedDrift(
            SiteKernel(js, np.asarray(params["probs"])),
            float(params["epsilon"]), params.get("noise", "uniform"))
    else:
        family = TwoKernelMixture(
            float(params["q"]),
            SiteKernel(js, np.asarray(params["probs_a"])),
            SiteKernel(js, np.asarray(params["probs_b"])))
    return EnvironmentModel(dimension=d,
                            direction_axis=int(spec.get("direction_axis", 0)),
                            r0=float(spec.get("r0", 1.0)), family=family)


# --- Config handling -------------------------------------------------------

def _parse_scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config, dotted, value):
    """Set ``a.b.c=value`` in the nested config dict."""
    keys = dotted.split(".")
    node = config
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot descend into {dotted!r}")
    node[keys[-1]] = _parse_scalar(value)


def load_config(path, overrides, seed=None, threads=None, out=None):
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            user = json.load(fh)
        for key, val in user.items():
            if isinstance(val, dict) and isinstance(config.get(key), dict):
                config[key].update(val)
            else:
                config[key] = val
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, _, val = item.partition("=")
        apply_override(config, key, val)
    if seed is not None:
        config["master_seed"] = seed
    if threads is not None:
        config["threads"] = threads
    if out is not None:
        config["out_dir"] = out
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigurationError(f"invalid config: {e.message}") from e
    return config


def config_digest(config):
    """Stable digest of the run inputs (config + tool version).

    Excludes execution details (threads, out_dir) so reruns of the same
    experiment are byte-identical regardless of parallelism or location.
    """
    core = {k: v for k, v in config.items() if k not in ("threads", "out_dir")}
    blob = json.dumps({"config": core, "version": __version__},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- Output helpers --------------------------------------------------------

class RunWriter:
    """Collects output files and emits the manifest, even on failure."""

    def __init__(self, config):
        self.config = config
        self.out_dir = config["out_dir"]
        self.digest = config_digest(config)
        self.start = time.time()
        self.checksums = {}
        self.status = "running"
        self.error = None
        os.makedirs(self.out_dir, exist_ok=True)

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# digest={self.digest}\r\n")
        w = csv.writer(buf)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
        data = buf.getvalue().encode()
        path = os.path.join(self.out_dir, name)
        with open(path, "wb") as fh:
            fh.write(data)
        self.checksums[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_json(self, name, obj):
        data = (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()
        path = os.path.join(self.out_dir, name)
        with open(path, "wb") as fh:
            fh.write(data)
        self.checksums[name] = hashlib.sha256(data).hexdigest()
        return path

    def finish(self, status, error=None):
        manifest = {
            "config": self.config,
            "version": __version__,
            "digest": self.digest,
            "seed_schedule": "env[k] = prf(master, 'env', k); "
                             "walk[k, m] = prf(master, 'walk', k, m)",
            "started_at": self.start,
            "finished_at": time.time(),
            "status": status,
            "error": error,
            "checksums": dict(sorted(self.checksums.items())),
        }
        data = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        with open(os.path.join(self.out_dir, "manifest.json"), "wb") as fh:
            fh.write(data)


def _fmt(x):
    """Locale-free repr for floats in CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# --- Experiments -----------------------------------------------------------

def _policy(config):
    p = config["policy"]
    return ConfirmationPolicy(margin=int(p.get("margin", 4)),
                              tail_handling=p.get("tail_handling", "drop"))


def cmd_simulate(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    horizon = int(exp.get("horizon", 1024))
    seed = config["master_seed"]
    handle = EnvironmentHandle(model, derive_seed(seed, "env", 0))
    traj = simulate_walk(handle, np.zeros(model.dimension, dtype=np.int64),
                         horizon, derive_seed(seed, "walk", 0, 0))
    d = model.dimension
    writer.write_csv("trajectory.csv", ["t"] + [f"x_{i+1}" for i in range(d)],
                     [[t] + [int(v) for v in traj.positions[t]]
                      for t in range(horizon + 1)])
    return EXIT_OK


def cmd_regen(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    horizon = int(exp.get("horizon", 4096))
    seed = config["master_seed"]
    policy = ConfirmationPolicy(margin=int(config["policy"].get("margin", 4)),
                                tail_handling="censor")
    handle = EnvironmentHandle(model, derive_seed(seed, "env", 0))
    traj = simulate_walk(handle, np.zeros(model.dimension, dtype=np.int64),
                         horizon, derive_seed(seed, "walk", 0, 0))
    recs = detect_regenerations(traj, model.direction_axis, policy)
    d = model.dimension
    writer.write_csv(
        "regen.csv",
        ["k", "time", "level"] + [f"x_{i+1}" for i in range(d)] + ["status"],
        [[k, r.time, r.level] + [int(v) for v in r.position] + [r.status]
         for k, r in enumerate(recs)])
    return EXIT_OK


def cmd_jointregen(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    horizon = int(exp.get("horizon", 8192))
    seed = config["master_seed"]
    handle = EnvironmentHandle(model, derive_seed(seed, "env", 0))
    zero = np.zeros(model.dimension, dtype=np.int64)
    pair = simulate_pair(handle, zero, zero, horizon,
                         derive_seed(seed, "walk", 0, 1),
                         derive_seed(seed, "walk", 0, 2))
    recs = detect_joint_regenerations(pair, model.direction_axis,
                                      _policy(config))
    d = model.dimension
    rows = []
    for k, r in enumerate(recs):
        dx = pair.first.positions[r.mu1] - pair.second.positions[r.mu2]
        rows.append([k, r.mu1, r.mu2, r.level] + [int(v) for v in dx])
    writer.write_csv(
        "jointregen.csv",
        ["k", "mu1", "mu2", "level"] + [f"dx_{i+1}" for i in range(d)], rows)
    return EXIT_OK


def cmd_variance_decay(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    n_grid = [int(v) for v in exp.get("n_grid", [128, 256, 512, 1024])]
    k_envs = int(exp.get("K", 50))
    m_walks = int(exp.get("M", 16))
    functional = parse_functional(exp.get("functional", "endpoint:1"))
    margin = int(config["policy"].get("margin", 4))
    result = st.variance_decay(
        model, functional, n_grid, k_envs, m_walks, config["master_seed"],
        margin=margin, burn=int(exp.get("burn", 256)),
        workers=int(config.get("threads", 1)))
    rows = [[n, k_envs, m_walks, _fmt(result.raw_variance[i]),
             _fmt(result.mean_inner_variance[i]),
             _fmt(result.corrected_variance[i]),
             _fmt(result.standard_error[i])]
            for i, n in enumerate(n_grid)]
    writer.write_csv("variance.csv",
                     ["n", "K", "M", "raw_var", "mean_inner_var",
                      "corrected_var", "stderr"], rows)
    fit = st.fit_decay_exponent(result)
    writer.write_json("fit.json", {
        "exponent": None if np.isnan(fit.exponent) else fit.exponent,
        "intercept": None if np.isnan(fit.intercept) else fit.intercept,
        "ci": [None if np.isnan(v) else v for v in fit.ci],
        "r_squared": None if np.isnan(fit.r_squared) else fit.r_squared,
        "grid": fit.used_n,
        "ok": fit.ok,
        "message": fit.message,
    })
    return EXIT_OK


def _intersection_rows(aggs):
    rows = []
    for agg in aggs:
        for r in agg.replicas:
            rows.append([r.replica, agg.n, _fmt(agg.eps), r.jrl_le, r.jrlc,
                         _fmt(r.decorr_sum), _fmt(r.o_n), _fmt(r.g_n),
                         _fmt(r.e_n)] + [_fmt(r.censored)])
    return rows


def cmd_intersections(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    n_grid = [int(v) for v in exp.get("n_grid", [64, 128, 256])]
    eps = float(exp.get("eps", 0.1))
    replicas = int(exp.get("replicas", 50))
    margin = int(config["policy"].get("margin", 4))
    aggs = [st.intersection_stats(
        model, n, eps, replicas, derive_seed(config["master_seed"], "scale", n),
        margin=margin, horizon_factor=int(exp.get("horizon_factor", 48)),
        workers=int(config.get("threads", 1)),
        with_jn=bool(exp.get("with_jn", False))) for n in n_grid]
    writer.write_csv("intersections.csv",
                     ["replica", "n", "eps", "jrl_le", "jrlc", "decorr_sum",
                      "o_n", "g_n", "e_n", "censored"],
                     _intersection_rows(aggs))
    if any(not agg.usable for agg in aggs):
        raise InsufficientDataError("some scales have no usable replicas")
    return EXIT_OK, aggs


def cmd_decorrelation(config, writer):
    code, aggs = cmd_intersections(config, writer)
    points = st.decorrelation_curve(aggs)
    writer.write_csv("decorrelation.csv",
                     ["n", "mean_decorr", "ci_lo", "ci_hi", "g_hat", "usable"],
                     [[p.n, _fmt(p.mean_decorr), _fmt(p.decorr_ci[0]),
                       _fmt(p.decorr_ci[1]), _fmt(p.g_hat), p.usable]
                      for p in points])
    return code


def cmd_clt(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    seed = config["master_seed"]
    n_grid = [int(v) for v in exp.get("n_grid", [256, 1024])]
    m_walks = int(exp.get("M", 500))
    margin = int(config["policy"].get("margin", 4))
    dx, tau = st.pooled_increments(model, int(exp.get("horizon", 4096)),
                                   int(exp.get("replicas", 50)),
                                   derive_seed(seed, "cov"), margin=margin,
                                   min_increments=100)
    v0 = dx.sum(axis=0) / tau.sum()
    sigma = st.estimate_annealed_covariance(dx, tau, v0)
    root_inv, _ = st._inv_sqrt(sigma)
    rows = []
    end_rows = []
    for e in range(int(exp.get("environments", 3))):
        handle = EnvironmentHandle(model, derive_seed(seed, "env", e))
        for n in n_grid:
            rep = st.quenched_clt_distance(
                handle, n, m_walks, sigma, v0, margin=margin,
                seed=derive_seed(seed, "clt", e, n))
            for i in range(model.dimension):
                rows.append([e, n, i, _fmt(rep.ks_per_coord[i]),
                             _fmt(rep.ks_pvalues[i]),
                             _fmt(rep.energy_distance), rep.used,
                             _fmt(rep.degenerate)])
            ends, _ = st.endpoint_sample(handle, n, m_walks, v0, margin,
                                         256, derive_seed(seed, "clt", e, n))
            for z in ends @ root_inv.T:
                end_rows.append([e, n] + [_fmt(v) for v in z])
    writer.write_csv("clt.csv",
                     ["env", "n", "coord", "ks", "ks_pvalue", "energy",
                      "used", "degenerate"], rows)
    writer.write_csv("endpoints.csv",
                     ["env", "n"] + [f"z_{i+1}" for i in range(model.dimension)],
                     end_rows)
    writer.write_json("sigma.json", {"sigma": sigma.tolist(),
                                     "v0": v0.tolist()})
    return EXIT_OK


def cmd_surgery_check(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    seed = config["master_seed"]
    n = int(exp.get("n", 64))
    samples = int(exp.get("samples", 200))
    horizon = int(exp.get("horizon", max(
        64 * n, int(config.get("safety_factor", 4)) * n)))
    margin = int(config["policy"].get("margin", 4))
    policy = ConfirmationPolicy(margin=margin)
    axis = model.direction_axis
    d = model.dimension
    v0 = st.estimate_v0(model, 4 * n, 32, derive_seed(seed, "v0")).direct
    rows = []
    for s in range(samples):
        env_seed = derive_seed(seed, "env", s)
        walk_seed = derive_seed(seed, "walk", s, 0)
        handle = EnvironmentHandle(model, env_seed)
        traj = simulate_walk(handle, np.zeros(d, dtype=np.int64), horizon,
                             walk_seed)
        regens = detect_regenerations(traj, axis, policy)
        t_pick = int(derive_seed(seed, "site", s) % max(1, n))
        z = traj.positions[t_pick].copy()
        rep = surgery_bound_check(traj, regens, z, n, v0, axis, model.r0)
        rows.append([env_seed, walk_seed] + [int(v) for v in z]
                    + [n, _fmt(rep.hit), rep.j_star, _fmt(rep.lhs),
                       _fmt(rep.rhs), _fmt(rep.holds), _fmt(rep.censored)])
    writer.write_csv("surgery.csv",
                     ["env_seed", "walk_seed"]
                     + [f"z_{i+1}" for i in range(d)]
                     + ["n", "hit", "j_star", "lhs", "rhs", "holds",
                        "censored"], rows)
    return EXIT_OK


def cmd_first_slab(config, writer):
    exp = config["experiment"]
    model = build_model(config["model"])
    levels = [int(v) for v in exp.get("levels", [1, 2, 4, 8])]
    results = st.conditioned_first_slab_moment(
        model, levels, int(exp.get("replicas", 500)), config["master_seed"],
        horizon=int(exp.get("horizon", 4096)))
    writer.write_csv("first_slab.csv",
                     ["level", "second_moment", "stderr", "acceptance_rate",
                      "accepted", "decided", "censored"],
                     [[r.level, _fmt(r.second_moment),
                       _fmt(r.standard_error), _fmt(r.acceptance_rate),
                       r.accepted, r.decided, _fmt(r.censored)]
                      for r in results])
    if any(r.censored for r in results):
        raise InsufficientDataError("acceptance rate below floor at some level")
    return EXIT_OK


def cmd_verify(config, writer):
    """Re-check manifest checksums in the output directory."""
    path = os.path.join(config["out_dir"], "manifest.json")
    if not os.path.exists(path):
        print(json.dumps({"error": "no manifest found", "dir": config["out_dir"]}))
        return EXIT_CONFIG
    with open(path) as fh:
        manifest = json.load(fh)
    bad = []
    for name, want in manifest.get("checksums", {}).items():
        fpath = os.path.join(config["out_dir"], name)
        if not os.path.exists(fpath):
            bad.append((name, "missing"))
            continue
        with open(fpath, "rb") as fh:
            got = hashlib.sha256(fh.read()).hexdigest()
        if got != want:
            bad.append((name, "mismatch"))
    print(json.dumps({"verified": not bad, "problems": dict(bad)}))
    return EXIT_OK if not bad else EXIT_DATA


def cmd_list_models(config, writer):
    print(json.dumps(MODEL_CATALOG, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "regen": cmd_regen,
    "jointregen": cmd_jointregen,
    "variance-decay": cmd_variance_decay,
    "intersections": lambda c, w: cmd_intersections(c, w)[0],
    "decorrelation": cmd_decorrelation,
    "clt": cmd_clt,
    "surgery-check": cmd_surgery_check,
    "first-slab": cmd_first_slab,
    "verify": cmd_verify,
    "list-models": cmd_list_models,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rwre-lab",
        description="Random walk in random environment experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="dotted config override, e.g. model.family=dirichlet")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.set, seed=args.seed,
                             threads=args.threads, out=args.out)
    except (ConfigurationError, OSError, json.JSONDecodeError) as e:
        print(json.dumps({"error": str(e), "exit": EXIT_CONFIG}),
              file=sys.stderr)
        return EXIT_CONFIG
    if args.command in ("verify", "list-models"):
        return COMMANDS[args.command](config, None)
    writer = RunWriter(config)
    try:
        code = COMMANDS[args.command](config, writer)
    except (ConfigurationError, ModelError, InputError) as e:
        writer.finish("failed", str(e))
        print(json.dumps({"error": str(e), "exit": EXIT_CONFIG}),
              file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientDataError as e:
        writer.finish("partial", str(e))
        print(json.dumps({"error": str(e), "exit": EXIT_DATA}),
              file=sys.stderr)
        return EXIT_DATA
    writer.finish("ok")
    return code


if __name__ == "__main__":
    sys.exit(main())
