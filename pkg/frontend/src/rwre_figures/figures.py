"""Figure builders over the simulator's CSV outputs.

Inputs are read-only; every builder validates the CSV header against the
documented schema before touching the data and refuses to write anything
for empty inputs.
"""

import csv
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Dict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


class SchemaError(ValueError):
    """The input CSV does not match the documented schema."""


class EmptyInputError(ValueError):
    """The input CSV has no data rows."""


KINDS = ("variance_loglog", "qq_gaussian", "intersection_scaling",
         "decorrelation_curve", "surgery_histogram")

REQUIRED_COLUMNS = {
    "variance_loglog": ["n", "K", "M", "raw_var", "mean_inner_var",
                        "corrected_var", "stderr"],
    "qq_gaussian": ["env", "n", "z_1"],
    "intersection_scaling": ["replica", "n", "eps", "jrl_le", "jrlc",
                             "decorr_sum"],
    "decorrelation_curve": ["n", "mean_decorr", "ci_lo", "ci_hi", "g_hat"],
    "surgery_histogram": ["n", "hit", "j_star", "lhs", "rhs", "holds",
                          "censored"],
}


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    input: str
    output: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"valid: {list(KINDS)}")


def read_table(path, required) -> Dict[str, np.ndarray]:
    """Load a CSV with optional leading ``#`` comments into column arrays."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh
                                      if not line.startswith("#")) if r]
    if not rows:
        raise SchemaError(f"{path}: no header row")
    header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r} "
                          f"(have {header})")
    if len(rows) == 1:
        raise EmptyInputError(f"{path}: no data rows")
    cols = {}
    body = rows[1:]
    for j, name in enumerate(header):
        raw = [r[j] for r in body]
        try:
            cols[name] = np.array([float(v) for v in raw])
        except ValueError:
            cols[name] = np.array(
                [1.0 if v == "true" else 0.0 if v == "false" else math.nan
                 for v in raw])
    return cols


def fit_loglog_slope(n, variance):
    """The simulator's exponent fit: OLS on positive points in log-log."""
    n = np.asarray(n, dtype=float)
    variance = np.asarray(variance, dtype=float)
    keep = variance > 0
    if keep.sum() < 2:
        raise EmptyInputError("fewer than 2 positive variances to fit")
    slope, intercept = np.polyfit(np.log(n[keep]), np.log(variance[keep]), 1)
    return float(slope), float(intercept)


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def build_variance_loglog(cols):
    n = cols["n"]
    cv = cols["corrected_var"]
    slope, intercept = fit_loglog_slope(n, cv)
    fig, ax = _new_axes("Quenched-mean variance decay", "n",
                        "corrected variance")
    keep = cv > 0
    ax.loglog(n[keep], cv[keep], "o-", label="corrected variance")
    grid = np.array([n.min(), n.max()], dtype=float)
    ax.loglog(grid, np.exp(intercept) * grid ** slope, "--",
              label=f"fit: slope {slope:.3f}")
    ref = cv[keep][0] * (grid / grid[0]) ** -0.5
    ax.loglog(grid, ref, ":", color="gray", label="n^(-1/2) guide")
    if np.any(~keep):
        ax.plot([], [], " ", label=f"{int((~keep).sum())} non-positive "
                                   "points excluded")
    ax.legend()
    ax.text(0.02, 0.02, f"slope = {slope:.3f}", transform=ax.transAxes)
    return fig, {"slope": slope}


def build_qq_gaussian(cols):
    zcols = sorted(c for c in cols if c.startswith("z_"))
    fig, ax = _new_axes("Standardized endpoints vs Gaussian",
                        "normal quantiles", "sample quantiles")
    norm = NormalDist()
    for name in zcols:
        z = np.sort(cols[name])
        m = z.size
        # plotting positions (k - 1/2)/m through the inverse normal CDF
        q = np.array([norm.inv_cdf((k - 0.5) / m) for k in range(1, m + 1)])
        ax.plot(q, z, ".", ms=3, label=name)
    lim = ax.get_ylim()
    ax.plot(lim, lim, "k--", lw=1, label="identity")
    ax.legend()
    return fig, {"coords": len(zcols)}


def build_intersection_scaling(cols):
    usable = np.ones(cols["n"].shape, dtype=bool)
    if "censored" in cols:
        usable = cols["censored"] == 0.0
    ns = np.unique(cols["n"][usable])
    if ns.size < 2:
        raise EmptyInputError("need at least 2 scales")
    means = np.array([cols["jrl_le"][usable & (cols["n"] == n)].mean()
                      for n in ns])
    slope, intercept = np.polyfit(np.log(ns), np.log(np.maximum(means, 1e-12)), 1)
    fig, ax = _new_axes("Close joint regenerations", "n", "mean |JRL(n)|")
    ax.loglog(ns, means, "o-", label="mean count")
    ax.loglog(ns, np.exp(intercept) * ns ** slope, "--",
              label=f"fit: exponent {slope:.3f}")
    ax.legend()
    ax.text(0.02, 0.02, f"exponent = {slope:.3f}", transform=ax.transAxes)
    return fig, {"slope": float(slope)}


def build_decorrelation_curve(cols):
    order = np.argsort(cols["n"])
    n = cols["n"][order]
    mean = cols["mean_decorr"][order]
    lo = cols["ci_lo"][order]
    hi = cols["ci_hi"][order]
    fig, ax = _new_axes("Decorrelation sum", "n", "mean decorrelation sum")
    ax.set_xscale("log")
    ax.fill_between(n, lo, hi, alpha=0.25, label="90% CI")
    ax.plot(n, mean, "o-", label="mean")
    ax.plot(n, cols["g_hat"][order], "s--", label="per-slab mean g(n)")
    ax.legend()
    return fig, {"points": int(n.size)}


def build_surgery_histogram(cols):
    mask = (cols["hit"] == 1.0) & (cols["censored"] == 0.0) \
        & (cols["rhs"] > 0.0)
    if not np.any(mask):
        raise EmptyInputError("no non-censored hits with a positive bound")
    ratio = cols["lhs"][mask] / cols["rhs"][mask]
    fig, ax = _new_axes("Surgery bound tightness", "sup difference / bound",
                        "count")
    ax.hist(ratio, bins=40)
    ax.axvline(1.0, color="k", ls="--", label="stated bound")
    ax.axvline(2.0, color="r", ls=":", label="doubled bound")
    ax.legend()
    return fig, {"hits": int(mask.sum()), "max_ratio": float(ratio.max())}


BUILDERS = {
    "variance_loglog": build_variance_loglog,
    "qq_gaussian": build_qq_gaussian,
    "intersection_scaling": build_intersection_scaling,
    "decorrelation_curve": build_decorrelation_curve,
    "surgery_histogram": build_surgery_histogram,
}


def render(spec: FigureSpec):
    """Render one figure; returns builder metadata (slopes, counts).

    Raises SchemaError / EmptyInputError before any file is written.
    """
    cols = read_table(spec.input, REQUIRED_COLUMNS[spec.kind])
    fig, meta = BUILDERS[spec.kind](cols)
    try:
        fig.savefig(spec.output)
    finally:
        plt.close(fig)
    return meta
