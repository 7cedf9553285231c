"""The four panel renderers.

Each panel validates its inputs first (schema errors surface before any file
is touched), draws into an in-memory figure, and saves atomically, so a
failed render never leaves a partial image. Output is deterministic for
byte-identical inputs at fixed library versions: rendering runs under a
pinned rc context and strips volatile metadata.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection

from . import schema

PANELS = ("genealogy", "density", "mass", "fk-compare")

# fixed style so user rc files cannot perturb output bytes
_RC = {
    "figure.figsize": (7.0, 4.5),
    "figure.facecolor": "white",
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "grid.linewidth": 0.5,
    "svg.hashsalt": "lineagefigs",
    "path.simplify": False,
}


@dataclass(frozen=True)
class FigureSpec:
    """One panel: where to read, what to draw, where to write.

    xlim/ylim default to data limits; coord picks the trait coordinate for
    trait-vs-time panels.
    """
    input_dir: str | os.PathLike
    panel: str
    out_path: str | os.PathLike
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    coord: int = 0
    time_bins: int = 160
    trait_bins: int = 120
    dpi: int = 150

    def __post_init__(self):
        if self.panel not in PANELS:
            raise ValueError(f"unknown panel {self.panel!r}; want one of {PANELS}")
        if self.coord < 0:
            raise ValueError("coord must be nonnegative")
        if self.time_bins < 1 or self.trait_bins < 1:
            raise ValueError("bin counts must be positive")


@dataclass(frozen=True)
class RenderInfo:
    panel: str
    out_path: str
    polylines: int | None = None
    alive: int | None = None


def genealogy_polylines(forest: dict, t: float, coord: int = 0) -> list[np.ndarray]:
    """Trait-vs-time step curves, one polyline per individual alive at t.

    A lineage follows each ancestor from its own birth until the next
    ancestor on the path is born. Ancestors shared by several alive
    individuals are drawn once: later polylines start where already-drawn
    ink ends (ancestor coverage only ever extends forward in time, so the
    first gap going up a lineage is the only one).
    """
    parent, birth, death = forest["parent"], forest["birth"], forest["death"]
    trait = forest["trait"][:, coord]
    leaves = np.nonzero((birth <= t) & (death > t))[0]
    drawn_until: dict[int, float] = {}
    polylines = []
    for leaf in leaves:
        segs = []  # (node, from, to) bottom-up
        start = None
        v, exit_t = int(leaf), t
        while v >= 0:
            cov = drawn_until.get(v)
            if cov is None:
                segs.append((v, float(birth[v]), exit_t))
                drawn_until[v] = exit_t
                v, exit_t = int(parent[v]), float(birth[v])
                continue
            if cov < exit_t:  # partially drawn: extend, ancestors are covered
                segs.append((v, cov, exit_t))
                drawn_until[v] = exit_t
                start = (cov, trait[v])
            else:  # fully drawn: attach at the handoff point
                start = (exit_t, trait[v])
            break
        pts = [] if start is None else [start]
        for v, a, b in reversed(segs):
            pts.append((a, trait[v]))
            pts.append((b, trait[v]))
        polylines.append(np.asarray(pts))
    return polylines


def _panel_genealogy(spec: FigureSpec, ax) -> RenderInfo:
    forest = schema.load_forest(spec.input_dir)
    info = schema.load_run_summary(spec.input_dir)
    if spec.coord >= forest["trait"].shape[1]:
        raise schema.SchemaError(
            f"forest.jsonl: trait coordinate {spec.coord} out of range "
            f"(dimension {forest['trait'].shape[1]})")
    t = info["final_time"]
    lines = genealogy_polylines(forest, t, spec.coord)
    ax.add_collection(LineCollection(lines, colors="#27496d",
                                     linewidths=0.7, alpha=0.85))
    ax.set_xlim(0.0, max(t, 1e-9))
    if lines:
        lo = min(float(p[:, 1].min()) for p in lines)
        hi = max(float(p[:, 1].max()) for p in lines)
        pad = 0.05 * (hi - lo) or 0.5
        ax.set_ylim(lo - pad, hi + pad)
    ax.set_xlabel("time")
    ax.set_ylabel(f"trait[{spec.coord}]")
    ax.set_title(f"{info['label']}: genealogy of the {len(lines)} individuals "
                 f"alive at t={t:g}")
    return RenderInfo("genealogy", str(spec.out_path),
                      polylines=len(lines), alive=len(lines))


def occupancy_histogram(forest: dict, t_end: float, coord: int = 0,
                        time_bins: int = 160, trait_bins: int = 120):
    """Residence time of all individuals ever alive, binned in (time, trait).

    Returns (hist, t_edges, y_edges) with hist[trait_bin, time_bin] summing
    each individual's overlap with the time bin; total mass equals the sum
    of lifetimes clipped to [0, t_end].
    """
    birth = forest["birth"]
    stop = np.minimum(forest["death"], t_end)
    y = forest["trait"][:, coord]
    t_edges = np.linspace(0.0, t_end, time_bins + 1)
    lo, hi = float(y.min()), float(y.max())
    pad = 0.05 * (hi - lo) or 0.5
    y_edges = np.linspace(lo - pad, hi + pad, trait_bins + 1)
    overlap = np.clip(np.minimum(stop[:, None], t_edges[None, 1:])
                      - np.maximum(birth[:, None], t_edges[None, :-1]),
                      0.0, None)
    rows = np.clip(np.searchsorted(y_edges, y, side="right") - 1,
                   0, trait_bins - 1)
    hist = np.zeros((trait_bins, time_bins))
    np.add.at(hist, rows, overlap)
    return hist, t_edges, y_edges


def _panel_density(spec: FigureSpec, ax) -> RenderInfo:
    forest = schema.load_forest(spec.input_dir)
    info = schema.load_run_summary(spec.input_dir)
    if spec.coord >= forest["trait"].shape[1]:
        raise schema.SchemaError(
            f"forest.jsonl: trait coordinate {spec.coord} out of range "
            f"(dimension {forest['trait'].shape[1]})")
    hist, t_edges, y_edges = occupancy_histogram(
        forest, max(info["final_time"], 1e-9), spec.coord,
        spec.time_bins, spec.trait_bins)
    mesh = ax.pcolormesh(t_edges, y_edges, hist, cmap="viridis",
                         rasterized=True)
    ax.figure.colorbar(mesh, ax=ax, label="occupancy (individual-time)")
    ax.set_xlabel("time")
    ax.set_ylabel(f"trait[{spec.coord}]")
    ax.set_title(f"{info['label']}: trait occupancy")
    return RenderInfo("density", str(spec.out_path))


def _panel_mass(spec: FigureSpec, ax) -> RenderInfo:
    data = schema.load_mass(spec.input_dir)
    ax.step(data["times"], data["masses"], where="post",
            color="#27496d", linewidth=1.0)
    ax.set_xlabel("time")
    ax.set_ylabel("mass")
    ax.set_ylim(bottom=0.0)
    ax.set_title("population mass")
    return RenderInfo("mass", str(spec.out_path))


def _panel_fk_compare(spec: FigureSpec, ax) -> RenderInfo:
    batch = schema.load_batch_summary(spec.input_dir)
    report = schema.load_fk_report(spec.input_dir)
    yerr = np.stack([batch["mass_mean"] - batch["mass_ci_low"],
                     batch["mass_ci_high"] - batch["mass_mean"]])
    ax.errorbar(batch["times"], batch["mass_mean"], yerr=yerr,
                fmt="o-", markersize=3, linewidth=0.9, capsize=2,
                color="#27496d", label=f"particle mean ({batch['replicates']} replicates)")
    ax.errorbar(report["times"], report["values"], yerr=1.96 * report["se"],
                fmt="s--", markersize=3, linewidth=0.9, capsize=2,
                color="#c26b2a", label=f"{report['mode']} estimator")
    ax.set_xlabel("time")
    ax.set_ylabel("estimate")
    ax.set_title("particle batch vs branching-free estimator")
    ax.legend(loc="best")
    return RenderInfo("fk-compare", str(spec.out_path))


_RENDERERS = {
    "genealogy": _panel_genealogy,
    "density": _panel_density,
    "mass": _panel_mass,
    "fk-compare": _panel_fk_compare,
}


def render(spec: FigureSpec) -> RenderInfo:
    """Validate inputs, draw the panel, save atomically. Returns counts the
    caller can check without reopening the image."""
    out = Path(spec.out_path)
    suffix = out.suffix.lower()
    if suffix not in (".png", ".svg"):
        raise ValueError(f"unsupported output format {suffix!r} (png or svg)")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        try:
            info = _RENDERERS[spec.panel](spec, ax)
            if spec.xlim is not None:
                ax.set_xlim(*spec.xlim)
            if spec.ylim is not None:
                ax.set_ylim(*spec.ylim)
            fig.tight_layout()
            out.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(suffix=suffix, dir=out.parent)
            os.close(fd)
            try:
                fig.savefig(tmp, dpi=spec.dpi, metadata=_clean_metadata(suffix))
                os.replace(tmp, out)
            except BaseException:
                os.unlink(tmp)
                raise
        finally:
            plt.close(fig)
    return info


def _clean_metadata(suffix: str) -> dict:
    # drop timestamps and library stamps so identical inputs give identical bytes
    if suffix == ".svg":
        return {"Date": None, "Creator": None}
    return {"Software": None}
