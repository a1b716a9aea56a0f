"""Figure rendering for revocation-race sweeps.

Produces a single headless matplotlib figure comparing post-revocation
admissions of the TTL cache (grows linearly with velocity) against the
execution-count cache (bounded by n) across the swept velocities.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .simulator import RaceMetrics


def plot_race(rows: Sequence[RaceMetrics], path: str | Path) -> Path:
    """Render sweep rows to an image file and return its path."""
    ordered = sorted(rows, key=lambda r: r.velocity)
    velocities = [r.velocity for r in ordered]
    ttl_ops = [r.unauthorized_ops_ttl for r in ordered]
    exec_ops = [r.unauthorized_ops_exec for r in ordered]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(velocities, ttl_ops, marker="o", label="wall-clock TTL cache")
    ax.plot(velocities, exec_ops, marker="s", label="execution-count cache")
    if ordered:
        ax.axhline(
            ordered[0].exec_count,
            color="gray",
            linestyle=":",
            linewidth=1,
            label=f"count ceiling (n={ordered[0].exec_count})",
        )
    ax.set_xscale("log")
    ax.set_yscale("symlog")
    ax.set_xlabel("operation velocity (ops per tick)")
    ax.set_ylabel("operations admitted after revocation")
    ax.set_title("Post-revocation admissions by cache-coherence mode")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
