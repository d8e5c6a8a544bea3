"""Matplotlib rendering of run reports: iteration history, diagnostic time
series and final-state fields, written as PNG files next to the delimited
output."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core_fields import Grid  # noqa: E402


def render_fixed_point_figure(fp_dict: dict, path) -> None:
    iterates = fp_dict.get("iterates", [])
    if not iterates:
        return
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    windows = sorted({it["window_index"] for it in iterates})
    for w in windows:
        pts = [it for it in iterates if it["window_index"] == w]
        ax1.semilogy([p["iterate"] for p in pts], [p["distance"] for p in pts],
                     marker="o", label=f"window {w}")
        ratios = [(p["iterate"], p["ratio"]) for p in pts if p["ratio"] is not None]
        if ratios:
            ax2.plot(*zip(*ratios), marker="s", label=f"window {w}")
    ax1.set_xlabel("sweep")
    ax1.set_ylabel("lower-topology step distance")
    ax2.axhline(1.0, color="k", lw=0.8, ls="--")
    ax2.set_xlabel("sweep")
    ax2.set_ylabel("contraction ratio")
    if len(windows) > 1:
        ax1.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_diagnostics_figure(diag_dict: dict, path) -> None:
    checks = {c["name"]: c for c in diag_dict.get("checks", [])}
    panels = []
    if "density_minmax" in checks:
        panels.append("density")
    if "temperature_minimum" in checks:
        panels.append("temperature")
    if "divergence_b" in checks:
        panels.append("div_b")
    if "mass_balance" in checks:
        panels.append("mass")
    if not panels:
        return
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.0))
    axes = np.atleast_1d(axes)
    for ax, panel in zip(axes, panels):
        if panel == "density":
            s = checks["density_minmax"]["series"]
            ax.plot(s["rho_min"], label="min rho")
            ax.plot(s["rho_max"], label="max rho")
            ax.plot(s["lower"], "k--", lw=0.8, label="bounds")
            ax.plot(s["upper"], "k--", lw=0.8)
            ax.set_title("density envelope")
            ax.legend(fontsize=6)
        elif panel == "temperature":
            s = checks["temperature_minimum"]["series"]
            ax.plot(s["theta_min"], label="min theta")
            ax.plot(s["bound"], "k--", lw=0.8, label="bound")
            ax.set_title("temperature minimum")
            ax.legend(fontsize=6)
        elif panel == "div_b":
            ax.plot(checks["divergence_b"]["series"]["max_div_b"])
            ax.set_title("max |div B|")
        else:
            ax.plot(checks["mass_balance"]["series"]["residual_per_dt"])
            ax.set_title("mass residual / dt")
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_fields_figure(fields: dict, grid: Grid, path, time=None) -> None:
    """Heatmaps of named scalar derived fields (value arrays of grid shape)."""
    n = len(fields)
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 2.8))
    axes = np.atleast_1d(axes)
    extent = (grid.extent.x0, grid.extent.x1, grid.extent.y0, grid.extent.y1)
    for ax, (name, values) in zip(axes, fields.items()):
        im = ax.imshow(values.T, origin="lower", extent=extent, aspect="auto",
                       cmap="viridis")
        ax.set_title(name, fontsize=9)
        fig.colorbar(im, ax=ax, shrink=0.85)
    if time is not None:
        fig.suptitle(f"t = {time:g}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_convergence_figure(table: list, path) -> None:
    """log-log error vs resolution for the refinement study."""
    if len(table) < 2:
        return
    hs = [row["h"] for row in table]
    fields = [k for k in table[0] if k.startswith("err_")]
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    for f in fields:
        ax.loglog(hs, [row[f] for row in table], marker="o", label=f[4:])
    ref = [table[0][fields[0]] * (h / hs[0]) for h in hs]
    ax.loglog(hs, ref, "k--", lw=0.8, label="order 1")
    ax.set_xlabel("h")
    ax.set_ylabel("L2 error")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
