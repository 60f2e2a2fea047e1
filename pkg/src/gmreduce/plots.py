"""Figure rendering for the CLI report paths.

Each function takes already-computed data plus a target path and writes one
PNG next to the delimited output; nothing here feeds back into the numerics.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_W = 6.4
FIG_H = FIG_W * (np.sqrt(5.0) - 1.0) / 2.0  # golden ratio

plt.rcParams["figure.figsize"] = [FIG_W, FIG_H]
plt.rcParams["font.size"] = 9
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def mixture_figure(mix, path, grid_half_width=14.0, resolution=220):
    """Component centers and a density heatmap for a 2-d mixture."""
    if mix.dim != 2:
        raise ValueError("mixture figure requires a 2-d mixture")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(FIG_W * 1.4, FIG_H))
    ax1.scatter(mix.means[:, 0], mix.means[:, 1], c="k", s=18, marker="o")
    ax1.set_xlabel("x")
    ax1.set_ylabel("y")
    ax1.set_title(f"{mix.order} component centers")
    xs = np.linspace(-grid_half_width, grid_half_width, resolution)
    ys = np.linspace(-grid_half_width, grid_half_width, resolution)
    pts = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    dens = mix.density(pts).reshape(resolution, resolution)
    im = ax2.pcolormesh(xs, ys, dens, shading="auto", cmap="viridis")
    ax2.grid(False)
    ax2.set_title("density")
    fig.colorbar(im, ax=ax2)
    save(fig, path)


def trace_figure(trace, path, title="objective per iteration"):
    fig, ax = plt.subplots()
    ax.plot(range(len(trace)), trace, marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title(title)
    save(fig, path)


def plan_figure(plan, path):
    fig, ax = plt.subplots()
    im = ax.imshow(plan, aspect="auto", cmap="magma")
    ax.set_xlabel("reduced component")
    ax.set_ylabel("original component")
    ax.set_title("transport plan")
    ax.grid(False)
    fig.colorbar(im, ax=ax)
    save(fig, path)


def bp_ise_figure(rows, path):
    """Bar chart of per-node ISE by iteration; rows are (iteration, node, ise)."""
    iterations = sorted({r[0] for r in rows})
    nodes = sorted({r[1] for r in rows})
    fig, ax = plt.subplots()
    width = 0.8 / max(len(iterations), 1)
    for k, it in enumerate(iterations):
        vals = [next(v for (i, n, v) in rows if i == it and n == node) for node in nodes]
        ax.bar(np.arange(len(nodes)) + k * width, vals, width, label=f"iteration {it}")
    ax.set_yscale("log")
    ax.set_xticks(np.arange(len(nodes)) + 0.4 - width / 2)
    ax.set_xticklabels([f"node {n}" for n in nodes])
    ax.set_ylabel("squared L2 distance to the exact belief")
    ax.legend()
    save(fig, path)


def surface_figure(mus, sigmas, gaps, path):
    """Heatmap of the convexity gap over the (mu, sigma) grid, diverging
    colormap centered at zero so the sign structure is visible."""
    fig, ax = plt.subplots()
    gaps = np.asarray(gaps)
    bound = float(np.max(np.abs(gaps)))
    im = ax.pcolormesh(
        mus, sigmas, gaps.T, shading="auto", cmap="RdBu_r", vmin=-bound, vmax=bound
    )
    ax.set_xlabel("mu")
    ax.set_ylabel("sigma")
    ax.set_title("convexity gap")
    ax.grid(False)
    fig.colorbar(im, ax=ax)
    save(fig, path)
