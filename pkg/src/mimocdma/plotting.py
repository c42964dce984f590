"""Figures for sweep output.

matplotlib is imported only inside the rendering functions, so the numerical
modules and the CSV pipeline never load a graphics stack.
"""

from pathlib import Path

_STUB = '''"""Plot a spectral-efficiency sweep written by ``mimocdma sweep``.

Usage: python {script} [{csv}]
"""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
with open(path, newline="") as fh:
    rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]

fig, ax = plt.subplots(figsize=(5.0, 3.6))
for key, style in (("c_joint_per_antenna", "-"), ("c_sep_per_antenna", "--")):
    for branch in sorted({{r["branch"] for r in rows}}):
        pts = [(float(r["beta"]), float(r[key])) for r in rows
               if r["branch"] == branch and r[key] != ""]
        if pts:
            xs, ys = zip(*sorted(pts))
            ax.plot(xs, ys, style, lw=0.8, alpha=0.5, label=f"{{key}} ({{branch}})")
    sel = sorted((float(r["beta"]), float(r[key])) for r in rows
                 if r["selected"] == "1" and r[key] != "")
    if sel:
        xs, ys = zip(*sel)
        ax.plot(xs, ys, style + "k", lw=1.6, label=f"{{key}} (selected)")
ax.set_xlabel(r"load $\\beta$")
ax.set_ylabel("bits/s/Hz per antenna")
ax.legend(fontsize=7, frameon=False)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def script_stub(csv_name, script_name="plot_sweep.py"):
    """Source of a standalone script that plots ``csv_name``."""
    return _STUB.format(csv=csv_name, script=script_name)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_sweep(rows, path, title=None):
    """Draw per-antenna ``c_joint`` and ``c_sep`` against ``beta`` and save to ``path``.

    ``rows`` are sweep records (dicts with ``beta``, ``branch``, ``selected``,
    ``status`` and the per-antenna capacity columns). Every branch is drawn
    faintly; the selected branch is drawn on top.
    """
    plt = _pyplot()
    ok = [r for r in rows if r["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for key, style in (("c_joint_per_antenna", "-"), ("c_sep_per_antenna", "--")):
        for branch in sorted({r["branch"] for r in ok}):
            pts = sorted((r["beta"], r[key]) for r in ok if r["branch"] == branch and r[key] is not None)
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, style, lw=0.8, alpha=0.4, label=f"{key} ({branch})")
        sel = sorted((r["beta"], r[key]) for r in ok if r["selected"] and r[key] is not None)
        if sel:
            xs, ys = zip(*sel)
            ax.plot(xs, ys, style + "k", lw=1.6, label=f"{key} (selected)")
    ax.set_xlabel(r"load $\beta$")
    ax.set_ylabel("bits/s/Hz per antenna")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
