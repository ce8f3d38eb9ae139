"""SVG figures rendered from the CSV series of a run directory."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["render_all", "read_csv", "write_csv"]

PLOT_SPECS = {
    "scaling.csv": dict(x="delta", ys=["h_half", "lp_norm", "corrector_h1"], group="j", loglog=True,
                        title="probe norms vs delta"),
    "frechet.csv": dict(x="eps", ys=["error"], group="nonlinearity", loglog=True,
                        title="difference quotient error vs step"),
    "recover_sigma.csv": dict(x="delta", ys=["estimate"], group="case", loglog=False,
                              title="calibrated estimate vs delta"),
    "recover_aprime.csv": dict(x="t", ys=["estimate", "truth"], group="case", loglog=False,
                               title="recovered a1' - a2' at x_*"),
    "stability.csv": dict(x="X", ys=["Y"], group=None, loglog=True, title="stability: Y vs X"),
}


def write_csv(path, header, rows):
    """Write rows with floats in round-trip precision (deterministic bytes)."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _slope(x, y):
    from .fitting import fit_slope

    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 3:
        return None
    return fit_slope(x[ok], y[ok]).slope


def render(path, spec, out_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dtnprobe"
    rows = read_csv(path)
    if not rows:
        return None
    groups = {}
    for r in rows:
        groups.setdefault(r[spec["group"]] if spec["group"] else "", []).append(r)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for g, rs in groups.items():
        x = np.array([float(r[spec["x"]]) for r in rs])
        for yname in spec["ys"]:
            y = np.array([float(r[yname]) for r in rs])
            label = f"{yname} {g}".strip()
            if spec["loglog"]:
                s = _slope(x, y)
                if s is not None:
                    label += f" (slope {s:.3f})"
            ax.plot(x, y, "o-", label=label)
    if spec["loglog"]:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(spec["x"])
    ax.set_ylabel(", ".join(spec["ys"]))
    ax.set_title(spec["title"])
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def render_all(directory):
    """Render every known CSV in ``directory``; returns the written SVG paths."""
    directory = Path(directory)
    out = []
    for name, spec in PLOT_SPECS.items():
        p = directory / name
        if p.exists():
            svg = render(p, spec, directory / (p.stem + ".svg"))
            if svg:
                out.append(str(svg))
    return out
