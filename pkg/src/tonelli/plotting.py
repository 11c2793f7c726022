"""Figure rendering for campaign reports.

All figures go straight to files (Agg backend); report paths emit them next
to the delimited outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["apply_style", "render_search_figures", "render_bangert_figures"]


def apply_style():
    plt.rc("figure", figsize=(6.0, 4.0), dpi=130)
    plt.rc("font", size=9)
    plt.rc("axes", linewidth=0.6, grid=True)
    plt.rc("grid", alpha=0.3, linewidth=0.4)
    plt.rc("lines", linewidth=1.2)


def render_search_figures(registry, out_dir):
    """Phase portraits of the admitted orbits plus an index/action chart."""
    apply_style()
    out = Path(out_dir) / "figures"
    out.mkdir(parents=True, exist_ok=True)

    from .broken import glue_trajectory

    fig, ax = plt.subplots()
    for rec in sorted(registry.records, key=lambda r: (r.period, r.action)):
        traj = glue_trajectory(rec.loop)
        q = np.mod(traj.qs[:, 0], 1.0)
        v = traj.vs[:, 0]
        # break the torus wrap for clean lines
        jumps = np.abs(np.diff(q)) > 0.5
        q_plot = q.copy()
        q_plot[1:][jumps] = np.nan
        ax.plot(q_plot, v, label=f"tau={rec.period}, A={rec.action:.3f}, ({rec.iota},{rec.nu})")
    ax.set_xlabel("q mod 1")
    ax.set_ylabel("v")
    ax.set_title("admitted orbits (first coordinate)")
    if registry.records:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "orbits_phase.png")
    plt.close(fig)

    fig, ax = plt.subplots()
    periods = [rec.period for rec in registry.records]
    actions = [rec.action for rec in registry.records]
    iotas = [rec.iota for rec in registry.records]
    sc = ax.scatter(periods, actions, c=iotas, cmap="viridis", s=40)
    ax.set_xlabel("period")
    ax.set_ylabel("mean action")
    ax.set_title("registry: action vs period (color = index)")
    if registry.records:
        fig.colorbar(sc, ax=ax, label="iota")
    fig.tight_layout()
    fig.savefig(out / "registry_actions.png")
    plt.close(fig)
    return out


def render_bangert_figures(rows, out_dir):
    """Slack and W^{1,inf} tables against 1/n, per demo path."""
    apply_style()
    out = Path(out_dir) / "figures"
    out.mkdir(parents=True, exist_ok=True)
    demos = sorted({r["demo"] for r in rows})

    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for which in demos:
        sub = sorted((r for r in rows if r["demo"] == which), key=lambda r: r["n"])
        inv_n = [1.0 / r["n"] for r in sub]
        excess = [max(r["max_mean_action"] - (r["bound"] - r["c_theta"] / r["n"]), 0.0) for r in sub]
        axes[0].plot(inv_n, excess, "o-", label=which)
        axes[1].plot([r["n"] for r in sub], [r["w1inf"] for r in sub], "s-", label=which)
    axes[0].set_xlabel("1/n")
    axes[0].set_ylabel("action excess over endpoints")
    axes[0].set_title("pulled-iterate action excess vs 1/n")
    axes[0].legend(fontsize=8)
    axes[1].set_xlabel("n")
    axes[1].set_ylabel("max speed")
    axes[1].set_title("W^{1,inf} bound uniformity")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "bangert_slack.png")
    plt.close(fig)
    return out
