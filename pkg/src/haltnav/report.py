"""Episode and batch figures: deterministic PPM renders and matplotlib plots."""

from __future__ import annotations

import math

import numpy as np

from haltnav import raster
from haltnav.osmag import AreaGraph

FREE = (255, 255, 255)
WALL = (60, 60, 60)
OBSTACLE = (210, 40, 40)
START = (30, 160, 60)
GOAL = (230, 180, 0)
HALT = {"bottom_up": (255, 120, 0), "reflective": (190, 0, 190)}
# trajectory colour per route epoch: initial route, after 1st replan, after 2nd, ...
ROUTE_COLORS = ((30, 90, 220), (0, 170, 170), (120, 60, 200), (200, 90, 140))


def _bresenham(c0, r0, c1, r1):
    dc, dr = abs(c1 - c0), -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    while True:
        yield c0, r0
        if c0 == c1 and r0 == r1:
            return
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c0 += sc
        if e2 <= dc:
            err += dc
            r0 += sr


class _Canvas:
    def __init__(self, grid: raster.OccupancyGrid):
        self.grid = grid
        self.img = np.empty((grid.height, grid.width, 3), dtype=np.uint8)
        self.img[~grid.cells] = FREE
        self.img[grid.cells] = WALL

    def cell(self, x, y):
        g = self.grid
        return (int(math.floor((x - g.origin.x) / g.resolution + 1e-9)),
                int(math.floor((y - g.origin.y) / g.resolution + 1e-9)))

    def put(self, c, r, color):
        if 0 <= c < self.grid.width and 0 <= r < self.grid.height:
            self.img[r, c] = color

    def line(self, a, b, color):
        for c, r in _bresenham(*self.cell(*a), *self.cell(*b)):
            self.put(c, r, color)

    def square(self, x, y, half, color):
        c0, r0 = self.cell(x, y)
        for dr in range(-half, half + 1):
            for dc in range(-half, half + 1):
                self.put(c0 + dc, r0 + dr, color)

    def cross(self, x, y, half, color):
        c0, r0 = self.cell(x, y)
        for d in range(-half, half + 1):
            self.put(c0 + d, r0 + d, color)
            self.put(c0 + d, r0 - d, color)

    def obstacle(self, o, color):
        g = self.grid
        for r in range(g.height):
            y0 = g.origin.y + r * g.resolution
            for c in range(g.width):
                x0 = g.origin.x + c * g.resolution
                if o.contains(x0 + g.resolution / 2, y0 + g.resolution / 2):
                    self.img[r, c] = color


def _obstacles_from_log(log) -> list:
    from haltnav.executor import Obstacle

    out = []
    for d in log.obstacles:
        if "disc" in d:
            disc = d["disc"]
            out.append(Obstacle(d["id"], d["level"], (disc["x"], disc["y"]), disc["r"], blocks=d.get("blocks")))
        else:
            out.append(Obstacle(d["id"], d["level"], polygon=tuple(map(tuple, d["polygon"])),
                                blocks=d.get("blocks")))
    return out


def _epochs(log) -> list[int]:
    """Route epoch of every step: how many replans happened before it."""
    marks = sorted(r["step"] for r in log.replans)
    out, k = [], 0
    for s in log.steps:
        while k < len(marks) and s["t"] > marks[k]:
            k += 1
        out.append(k)
    return out


def render_level(grid: raster.OccupancyGrid, level: int, log=None) -> np.ndarray:
    """RGB image of one level (row 0 = smallest y) with the episode drawn on top."""
    cv = _Canvas(grid)
    if log is None:
        return cv.img
    for o in _obstacles_from_log(log):
        if o.level == level:
            cv.obstacle(o, OBSTACLE)
    prev = (log.start["x"], log.start["y"], log.start["level"])
    for s, epoch in zip(log.steps, _epochs(log)):
        cur = (s["x"], s["y"], s["level"])
        if prev[2] == level and cur[2] == level:
            cv.line(prev[:2], cur[:2], ROUTE_COLORS[epoch % len(ROUTE_COLORS)])
        prev = cur
    by_t = {s["t"]: s for s in log.steps}
    for h in log.halts:
        s = by_t.get(h["step"])
        if s is not None and s["level"] == level:
            cv.cross(s["x"], s["y"], 3, HALT[h["cause"]])
    if log.start["level"] == level:
        cv.square(log.start["x"], log.start["y"], 2, START)
    if log.goal["level"] == level:
        cv.square(log.goal["x"], log.goal["y"], 2, GOAL)
    return cv.img


def render_ppm(graph: AreaGraph, log=None, resolution: float = raster.DEFAULT_RESOLUTION,
               grids=None, scale: int = 1) -> bytes:
    """Binary PPM (P6) with every level side by side, top row = largest y."""
    grids = grids or {lv: raster.rasterize_level(graph, lv, resolution) for lv in graph.levels}
    panels = [render_level(grids[lv], lv, log)[::-1] for lv in sorted(grids)]
    h = max(p.shape[0] for p in panels)
    gap = np.full((h, 2, 3), 0, dtype=np.uint8)
    parts = []
    for n, p in enumerate(panels):
        pad = np.full((h - p.shape[0], p.shape[1], 3), 0, dtype=np.uint8)
        parts.append(np.vstack([p, pad]))
        if n + 1 < len(panels):
            parts.append(gap)
    img = np.hstack(parts)
    if scale > 1:
        img = img.repeat(scale, axis=0).repeat(scale, axis=1)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img).tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


# -- matplotlib -----------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_episode(graph: AreaGraph, log, path) -> None:
    """Map outline, route epochs, halts and obstacles; one panel per level."""
    plt = _pyplot()
    from matplotlib.patches import Circle, Polygon

    levels = graph.levels
    fig, axes = plt.subplots(1, len(levels), figsize=(5 * len(levels), 5), squeeze=False)
    epochs = _epochs(log)
    for ax, lv in zip(axes[0], levels):
        for a in graph.areas.values():
            if a.level != lv:
                continue
            ax.add_patch(Polygon(a.ring, closed=True, fill=True, fc="0.93", ec="0.3", lw=1))
            c = a.centroid
            ax.text(c.x, c.y, a.name, ha="center", va="center", fontsize=8, color="0.4")
        for p in graph.passages.values():
            if p.level == lv:
                (x0, y0), (x1, y1) = p.segment()
                ax.plot([x0, x1], [y0, y1], color="tab:green", lw=3, solid_capstyle="butt")
        for o in _obstacles_from_log(log):
            if o.level != lv:
                continue
            if o.polygon is None:
                ax.add_patch(Circle(o.center, o.radius, color="tab:red", alpha=0.6))
            else:
                ax.add_patch(Polygon(o.polygon, closed=True, color="tab:red", alpha=0.6))
        traj = [(log.start["x"], log.start["y"], log.start["level"], 0)]
        traj += [(s["x"], s["y"], s["level"], e) for s, e in zip(log.steps, epochs)]
        for epoch in sorted({e for *_, e in traj}):
            xs = [x for x, y, l, e in traj if l == lv and e == epoch]
            ys = [y for x, y, l, e in traj if l == lv and e == epoch]
            if xs:
                ax.plot(xs, ys, lw=1.5, label=f"route {epoch}")
        by_t = {s["t"]: s for s in log.steps}
        for h in log.halts:
            s = by_t.get(h["step"])
            if s is not None and s["level"] == lv:
                ax.plot(s["x"], s["y"], "x", ms=9, mew=2,
                        color="tab:orange" if h["cause"] == "bottom_up" else "tab:purple")
        if log.start["level"] == lv:
            ax.plot(log.start["x"], log.start["y"], "s", color="tab:green", ms=7)
        if log.goal["level"] == lv:
            ax.plot(log.goal["x"], log.goal["y"], "*", color="gold", ms=14, mec="k")
            ax.add_patch(Circle((log.goal["x"], log.goal["y"]), 3.0, fill=False, ls="--", ec="gold"))
        ax.set_aspect("equal")
        ax.autoscale_view()
        ax.set_title(f"level {lv}")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
    status = "success" if log.success else f"failed: {log.terminal.get('failure_reason')}"
    fig.suptitle(f"{log.scenario} ({status})")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_metrics(report, path) -> None:
    """SR and OS per (family, level) group plus mean SPL."""
    plt = _pyplot()
    groups: dict = {}
    for row in report.rows:
        groups.setdefault((row["family"] or "-", row["level"]), []).append(row)
    keys = sorted(groups)
    labels = [f"{f}\n{lv}" for f, lv in keys]
    sr = [100.0 * np.mean([r["success"] for r in groups[k]]) for k in keys]
    os_ = [100.0 * np.mean([r["oracle_success"] for r in groups[k]]) for k in keys]
    spl = [np.mean([r["spl"] for r in groups[k]]) for k in keys]
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(keys)), 4))
    ax.bar(x - 0.2, sr, 0.4, label="SR %")
    ax.bar(x + 0.2, os_, 0.4, label="OS %")
    ax.set_ylim(0, 105)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("percent")
    ax2 = ax.twinx()
    ax2.plot(x, spl, "ko-", label="SPL")
    ax2.set_ylim(0, 1.05)
    ax2.set_ylabel("SPL")
    ax.legend(loc="upper left", fontsize=8)
    ax2.legend(loc="upper right", fontsize=8)
    ax.set_title(f"SR {report.sr:.1f}%  SPL {report.spl:.3f}  OS {report.os:.1f}%  NE {report.ne:.2f} m")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
