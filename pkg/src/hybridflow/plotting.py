"""Matplotlib figures: density-colored network snapshots and cumulative curves.

SVG output is made reproducible by fixing the hash salt and dropping the date stamp.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap, Normalize, to_hex  # noqa: E402
from matplotlib.lines import Line2D  # noqa: E402

from .network import Mode, NodeKind  # noqa: E402

# Fixed colormap endpoints: 0 -> green, 0.5 -> yellow, 1 -> red (linear in rho_avg / rho_max).
DENSITY_COLORS = ("#00ff00", "#ffff00", "#ff0000")
DENSITY_CMAP = LinearSegmentedColormap.from_list("density", DENSITY_COLORS, N=257)  # odd N: 0.5 hits yellow exactly

ROAD_CASING = "#333333"
WALKWAY_CASING = "#bbbbbb"
NODE_FACE = {
    NodeKind.ENTRY: "#2ca02c",
    NodeKind.EXIT: "#d62728",
    NodeKind.PARKING: "#1f77b4",
}
JUNCTION_FACE = {Mode.VEHICLE: "#444444", Mode.PEDESTRIAN: "#cccccc"}
NODE_MARKER = {NodeKind.ENTRY: "o", NodeKind.EXIT: "o", NodeKind.PARKING: "s", NodeKind.JUNCTION: "o"}

_RC = {"svg.hashsalt": "hybridflow", "svg.fonttype": "none", "font.size": 9}


class SnapshotError(ValueError):
    pass


def density_color(fraction: float) -> str:
    return to_hex(DENSITY_CMAP(min(max(fraction, 0.0), 1.0)))


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _sample_index(results, t: float) -> int:
    times = results.sample_times
    if not times:
        raise SnapshotError("run has no recorded samples")
    if t < 0 or t > times[-1] + 1e-9:
        raise SnapshotError(f"t={t} outside run horizon [0, {times[-1]}]")
    # latest sample at or before t, or the first one when t precedes it
    best = 0
    for i, ts in enumerate(times):
        if ts <= t + 1e-9:
            best = i
    return best


def render_snapshot(results, t: float, out_path) -> str:
    """Draw the network at the recorded sample nearest (at or before) time ``t`` as SVG.

    Edges are colored by average density over jam density; roads get a dark casing and
    walkways a light one. Returns the output path.
    """
    sc = results.scenario
    net = sc.network
    missing = sorted(n.id for n in net.nodes if n.pos is None)
    if missing:
        raise SnapshotError(f"nodes without display positions: {', '.join(missing)}")
    s = _sample_index(results, t)
    avg = results.edge_average(s)
    pos = {n.id: n.pos for n in net.nodes}
    pairs = {(e.source, e.target) for e in net.edges}

    xs = [p[0] for p in pos.values()]
    ys = [p[1] for p in pos.values()]
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    offset = 0.012 * span

    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 5))
        for e in sorted(net.edges, key=lambda e: e.id):
            (x0, y0), (x1, y1) = pos[e.source], pos[e.target]
            if (e.target, e.source) in pairs:
                # shift two-way pairs apart so both directions stay visible
                L = math.hypot(x1 - x0, y1 - y0) or 1.0
                nx, ny = (y1 - y0) / L * offset, -(x1 - x0) / L * offset
                x0, x1, y0, y1 = x0 + nx, x1 + nx, y0 + ny, y1 + ny
            road = e.mode is Mode.VEHICLE
            frac = avg[e.id] / sc.flow_params[e.mode].rho_max
            ax.plot([x0, x1], [y0, y1], color=ROAD_CASING if road else WALKWAY_CASING,
                    lw=7 if road else 4.5, solid_capstyle="round", zorder=1, gid=f"casing-{e.id}")
            ax.plot([x0, x1], [y0, y1], color=density_color(frac), lw=4 if road else 2,
                    solid_capstyle="round", zorder=2, gid=f"edge-{e.id}")
        for n in sorted(net.nodes, key=lambda n: n.id):
            if n.kind is NodeKind.JUNCTION:
                modes = net.node_modes(n.id)
                face = JUNCTION_FACE[Mode.VEHICLE if Mode.VEHICLE in modes else Mode.PEDESTRIAN]
            else:
                face = NODE_FACE[n.kind]
            ax.plot([n.pos[0]], [n.pos[1]], marker=NODE_MARKER[n.kind], ms=10 if n.kind is not NodeKind.JUNCTION else 7,
                    mfc=face, mec="black", mew=0.8, ls="none", zorder=3, gid=f"node-{n.id}")
            ax.annotate(n.id, n.pos, textcoords="offset points", xytext=(6, 6), fontsize=7)

        handles = [
            Line2D([], [], color=ROAD_CASING, lw=5, label="road"),
            Line2D([], [], color=WALKWAY_CASING, lw=4, label="walkway"),
            Line2D([], [], marker="o", ls="none", mfc=NODE_FACE[NodeKind.ENTRY], mec="black", label="entry"),
            Line2D([], [], marker="o", ls="none", mfc=NODE_FACE[NodeKind.EXIT], mec="black", label="exit"),
            Line2D([], [], marker="s", ls="none", mfc=NODE_FACE[NodeKind.PARKING], mec="black", label="parking"),
            Line2D([], [], marker="o", ls="none", mfc=JUNCTION_FACE[Mode.VEHICLE], mec="black", label="junction"),
        ]
        ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.02, 1.0), frameon=False)
        sm = plt.cm.ScalarMappable(norm=Normalize(0, 1), cmap=DENSITY_CMAP)
        cbar = fig.colorbar(sm, ax=ax, fraction=0.04, pad=0.02, location="bottom")
        cbar.set_label(r"$\rho_{avg} / \rho_{max}$")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_axis_off()
        ax.set_title(f"t = {results.sample_times[s]:.1f} s")
        fig.tight_layout()
        _save(fig, out_path)
    return str(out_path)


def plot_curves(results, out_path) -> str:
    """Cumulative entered / exited subjects per commodity over time."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        times = results.sample_times
        for c, cid in enumerate(results.commodity_ids):
            ent = [row[c] for row in results.cum_entered]
            ext = [row[c] for row in results.cum_exited]
            line, = ax.plot(times, ent, lw=1.2, label=f"{cid} entered")
            ax.plot(times, ext, lw=1.2, ls="--", color=line.get_color(), label=f"{cid} exited")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("cumulative subjects")
        if results.commodity_ids and times:
            ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, out_path)
    return str(out_path)
