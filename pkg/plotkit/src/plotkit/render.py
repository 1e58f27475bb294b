"""Figure assembly from simulator artifacts.

A recipe names an artifact set and an output file; render() lays the data
out in the conventional style: scaled-process ensembles in a yellow-to-red
gradient (largest epsilon yellow, smallest red), the limit curve in black,
any analytic overlay as a dashed grey line, and summary statistics in a
small inset.  Rendering is pure: the same inputs produce byte-identical
output files.
"""

import glob
import json
import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import schema

STYLE = {
    "svg.hashsalt": "plotkit",
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 10,
    "lines.linewidth": 1.2,
}

LIMIT_COLOR = "black"
ANALYTIC_COLOR = "0.45"


class RecipeError(ValueError):
    pass


@dataclass
class FigureRecipe:
    kind: str            # figure1 | figure2 | trajectory | sweep
    output: str          # image file path, .svg or .png
    inputs: dict = field(default_factory=dict)
    title: str = ""

    def __post_init__(self):
        if self.kind not in ("figure1", "figure2", "trajectory", "sweep"):
            raise RecipeError(f"unknown recipe kind: {self.kind}")
        ext = os.path.splitext(self.output)[1].lower()
        if ext not in (".svg", ".png"):
            raise RecipeError(f"output format must be svg or png: "
                              f"{self.output}")


def load_recipe(path):
    if not os.path.exists(path):
        raise RecipeError(f"recipe file not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return FigureRecipe(kind=doc["kind"], output=doc["output"],
                            inputs=doc.get("inputs", {}),
                            title=doc.get("title", ""))
    except KeyError as exc:
        raise RecipeError(f"recipe missing field {exc}") from None


def _eps_colors(eps_values):
    """Largest epsilon yellow, smallest red."""
    order = sorted(set(float(e) for e in eps_values), reverse=True)
    n = max(len(order) - 1, 1)
    cmap = plt.get_cmap("autumn")
    return {eps: cmap(1.0 - i / n) for i, eps in enumerate(order)}


def _fmt_eps(eps):
    return "%g" % eps


def _save(fig, path):
    meta = {"Date": None} if path.lower().endswith(".svg") else {}
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def _plot_sweep_curves(ax, table, colors, label_prefix="eps="):
    eps_col = table["eps"]
    for eps in sorted(set(eps_col), reverse=True):
        sel = eps_col == eps
        t, w = table["t"][sel], table["mean_w"][sel]
        ok = np.isfinite(w)
        ax.plot(t[ok], w[ok], color=colors[eps],
                label=f"{label_prefix}{_fmt_eps(eps)}")


def _input_dir(recipe):
    d = recipe.inputs.get("directory")
    if not d:
        raise RecipeError(f"{recipe.kind} recipe needs inputs.directory")
    if not os.path.isdir(d):
        raise RecipeError(f"input directory not found: {d}")
    return d


def _render_figure1(recipe):
    d = _input_dir(recipe)
    manifest = schema.read_json(os.path.join(d, "figure1_manifest.json"))
    panels = manifest["panels"]
    colors = _eps_colors(manifest["eps"])
    fig, axes = plt.subplots(2, 2, figsize=(8, 6), constrained_layout=True)
    for ax, regime in zip(axes.flat, sorted(panels)):
        panel = panels[regime]
        for w0, files in sorted(panel["files"].items()):
            sweep = schema.read_csv(os.path.join(d, files["sweep"]), "sweep")
            _plot_sweep_curves(ax, sweep, colors)
            limit = schema.read_csv(os.path.join(d, files["limit"]),
                                    "trajectory")
            ok = np.isfinite(limit["w"])
            ax.plot(limit["t"][ok], limit["w"][ok], color=LIMIT_COLOR)
            analytic = schema.read_csv(os.path.join(d, files["analytic"]),
                                       "trajectory")
            ax.plot(analytic["t"], analytic["w"], color=ANALYTIC_COLOR,
                    linestyle="--")
        ax.set_title(f"{regime} (classified: {panel['classified']})")
        ax.set_xlabel("t")
        ax.set_ylabel("w")
    handles, labels = axes.flat[0].get_legend_handles_labels()
    seen = dict(zip(labels, handles))
    fig.legend(seen.values(), seen.keys(), loc="outside upper center",
               ncol=max(len(seen), 1))
    if recipe.title:
        fig.suptitle(recipe.title)
    _save(fig, recipe.output)
    return [recipe.output]


def _ensemble_files(d, pattern):
    files = sorted(glob.glob(os.path.join(d, pattern)))
    out = {}
    for path in files:
        table = schema.read_csv(path, "sweep")
        out[float(table["eps"][0])] = table
    return out


def _render_figure2(recipe):
    d = _input_dir(recipe)
    discrete = _ensemble_files(d, "scaled_eps-*.csv")
    if not discrete:
        raise RecipeError(f"no scaled_eps-*.csv files in {d}")
    continuous = _ensemble_files(d, "scaled_cont_eps-*.csv")
    colors = _eps_colors(discrete.keys() | continuous.keys())
    ncols = 2 if continuous else 1
    fig, axes = plt.subplots(1, ncols, figsize=(4.5 * ncols, 4),
                             constrained_layout=True, squeeze=False)

    ax = axes[0, 0]
    for eps in sorted(discrete, reverse=True):
        _plot_sweep_curves(ax, discrete[eps], colors)
    mc = schema.read_csv(os.path.join(d, "limit_mc.csv"), "ensemble")
    ax.plot(mc["t"], mc["mean_w"], color=LIMIT_COLOR, label="limit (MC drive)")
    ar = schema.read_csv(os.path.join(d, "limit_ar.csv"), "ensemble")
    ax.plot(ar["t"], ar["mean_w"], color=ANALYTIC_COLOR, linestyle="--",
            label="limit (analytic drive)")
    ax.set_title("discrete model")
    ax.set_xlabel("t")
    ax.set_ylabel("mean w")
    ax.legend(fontsize=7)

    inset_path = os.path.join(d, "sd_inset.json")
    if os.path.exists(inset_path):
        inset_data = schema.read_json(inset_path)
        keys = sorted((k for k in inset_data if k != "limit"),
                      key=float, reverse=True)
        labels = [_fmt_eps(float(k)) for k in keys]
        values = [inset_data[k] for k in keys]
        if "limit" in inset_data:
            labels.append("limit")
            values.append(inset_data["limit"])
        ins = ax.inset_axes([0.55, 0.08, 0.4, 0.3])
        bar_colors = [colors.get(float(k), "0.3") for k in keys]
        if len(values) > len(keys):
            bar_colors.append(LIMIT_COLOR)
        ins.bar(range(len(values)), values, color=bar_colors)
        ins.set_xticks(range(len(values)), labels, fontsize=6, rotation=45)
        ins.set_title("terminal sd", fontsize=7)
        ins.tick_params(labelsize=6)

    if continuous:
        ax = axes[0, 1]
        for eps in sorted(continuous, reverse=True):
            _plot_sweep_curves(ax, continuous[eps], colors)
        lc = schema.read_csv(os.path.join(d, "limit_cont.csv"), "ensemble")
        ax.plot(lc["t"], lc["mean_w"], color=LIMIT_COLOR, label="limit")
        ax.set_title("continuous model")
        ax.set_xlabel("t")
        ax.set_ylabel("mean w")
        ax.legend(fontsize=7)

    if recipe.title:
        fig.suptitle(recipe.title)
    _save(fig, recipe.output)
    return [recipe.output]


def _input_file(recipe):
    path = recipe.inputs.get("file")
    if not path:
        raise RecipeError(f"{recipe.kind} recipe needs inputs.file")
    return path


def _render_trajectory(recipe):
    table = schema.read_csv(_input_file(recipe), "trajectory")
    fig, ax = plt.subplots(figsize=(5, 3.5), constrained_layout=True)
    ax.plot(table["t"], table["w"], color=LIMIT_COLOR)
    ax.set_xlabel("t")
    ax.set_ylabel("w")
    if recipe.title:
        ax.set_title(recipe.title)
    _save(fig, recipe.output)
    return [recipe.output]


def _render_sweep(recipe):
    table = schema.read_csv(_input_file(recipe), "sweep")
    eps_values = sorted(set(table["eps"]), reverse=True)
    colors = _eps_colors(eps_values)
    fig, ax = plt.subplots(figsize=(5.5, 4), constrained_layout=True)
    _plot_sweep_curves(ax, table, colors)
    ax.set_xlabel("t")
    ax.set_ylabel("mean w")
    ax.legend(fontsize=7)
    sup = [table["sup_err"][table["eps"] == eps][0] for eps in eps_values]
    ins = ax.inset_axes([0.6, 0.65, 0.35, 0.3])
    ins.bar(range(len(sup)), sup, color=[colors[e] for e in eps_values])
    ins.set_xticks(range(len(sup)), [_fmt_eps(e) for e in eps_values],
                   fontsize=6)
    ins.set_title("sup error", fontsize=7)
    ins.tick_params(labelsize=6)
    if recipe.title:
        ax.set_title(recipe.title)
    _save(fig, recipe.output)
    return [recipe.output]


_RENDERERS = {"figure1": _render_figure1, "figure2": _render_figure2,
              "trajectory": _render_trajectory, "sweep": _render_sweep}


def render(recipe):
    """Render one recipe; returns the list of files written."""
    with matplotlib.rc_context(STYLE):
        return _RENDERERS[recipe.kind](recipe)
