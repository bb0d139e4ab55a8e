"""Figure builders used by the CLI report paths."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io_linearization import io_control


def plot_gait_family(lib, path) -> None:
    """Phase portraits and torque profiles of every library member."""
    fig, axes = plt.subplots(1, 2, figsize=(11.0, 4.4))
    lo, hi = float(lib.betas[0]), float(lib.betas[-1])
    span = max(hi - lo, 1e-12)
    cmap = plt.get_cmap("viridis")
    for lc in lib.gaits:
        color = cmap((lc.beta - lo) / span)
        axes[0].plot(lc.samples[:, 0], lc.samples[:, 2], color=color, lw=1.0)
        us = [io_control(x, lc.vc, lib.gains, lib.robot) for x in lc.samples]
        axes[1].plot(lc.phases, us, color=color, lw=1.0)
    axes[0].set_xlabel("stance angle q1 [rad]")
    axes[0].set_ylabel("stance rate dq1 [rad/s]")
    axes[0].set_title("limit cycles")
    axes[1].axhline(lib.robot.u_max, color="k", ls=":", lw=0.8)
    axes[1].axhline(-lib.robot.u_max, color="k", ls=":", lw=0.8)
    axes[1].set_xlabel("phase")
    axes[1].set_ylabel("hip torque [N m]")
    axes[1].set_title("torque along the cycle")
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(lo, hi))
    fig.colorbar(sm, ax=axes[1], label="beta [rad]")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
