"""SVG figures for the two-dimensional quadratic problem.

The figures are written as plain SVG text so no plotting library is needed.
Each panel shows the actions sampled in one iteration, the policy mean, and
an axis-aligned ellipse whose semi-axes are one standard deviation.
"""
from __future__ import annotations

import csv
import json
import math
import os
from collections import defaultdict

from .harness import atomic_write_text

PANEL = 160          # panel side in px
MARGIN = 12
EXTENT = 2.0         # panels show [-EXTENT, EXTENT]^2 in action space
COLUMNS = 10


def _read_csv(path):
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items() if v != ""} for row in csv.DictReader(f)]


def _scale():
    return PANEL / (2 * EXTENT)


def _to_px(x, y, ox, oy):
    s = _scale()
    return ox + (x + EXTENT) * s, oy + (EXTENT - y) * s


def _panel(ox, oy, title, points, mu, sigma, clip_id):
    s = _scale()
    out = [f'<g class="panel" data-title="{title}">',
           f'<clipPath id="{clip_id}"><rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}"/></clipPath>',
           f'<rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}" fill="white" stroke="#999"/>',
           f'<g clip-path="url(#{clip_id})">']
    cx, cy = _to_px(0.0, 0.0, ox, oy)
    out.append(f'<line x1="{ox}" y1="{cy:.2f}" x2="{ox + PANEL}" y2="{cy:.2f}" stroke="#ddd"/>')
    out.append(f'<line x1="{cx:.2f}" y1="{oy}" x2="{cx:.2f}" y2="{oy + PANEL}" stroke="#ddd"/>')
    for x, y, A in points:
        px, py = _to_px(x, y, ox, oy)
        color = "#2a6fdb" if A is None else ("#2a9d4b" if A >= 0 else "#d1495b")
        out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="{color}" fill-opacity="0.6"/>')
    if mu is not None:
        mx, my = _to_px(mu[0], mu[1], ox, oy)
        out.append(f'<ellipse class="sigma" cx="{mx:.3f}" cy="{my:.3f}" rx="{sigma[0] * s:.6f}" '
                   f'ry="{sigma[1] * s:.6f}" data-sigma0="{sigma[0]!r}" data-sigma1="{sigma[1]!r}" '
                   f'fill="none" stroke="black" stroke-width="1.2"/>')
        out.append(f'<circle class="mean" cx="{mx:.3f}" cy="{my:.3f}" r="2.5" fill="black"/>')
    out.append("</g>")
    out.append(f'<text x="{ox + 4}" y="{oy + 12}" font-size="10" font-family="sans-serif">{title}</text>')
    out.append("</g>")
    return out


def _document(panels, n):
    cols = min(COLUMNS, max(n, 1))
    rows = max(1, math.ceil(n / cols))
    width = cols * (PANEL + MARGIN) + MARGIN
    height = rows * (PANEL + MARGIN) + MARGIN
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" data-px-per-unit="{_scale()!r}">')
    return "\n".join([head, *panels, "</svg>", ""])


def _origin(i):
    return MARGIN + (i % COLUMNS) * (PANEL + MARGIN), MARGIN + (i // COLUMNS) * (PANEL + MARGIN)


def didactic_svg(actions, policy_rows, every=1) -> str:
    """SVG with one panel per logged iteration (every ``every``-th, plus the last)."""
    by_iter = defaultdict(list)
    for row in actions:
        by_iter[int(row["iteration"])].append((row["a0"], row["a1"], row.get("advantage")))
    rows = sorted(policy_rows, key=lambda r: r["iteration"])
    keep = [r for i, r in enumerate(rows) if i % every == 0 or i == len(rows) - 1]
    panels = []
    for i, r in enumerate(keep):
        it = int(r["iteration"])
        ox, oy = _origin(i)
        panels += _panel(ox, oy, f"iteration {it}", by_iter.get(it, []),
                         (r["mu0"], r["mu1"]), (r["sigma0"], r["sigma1"]), f"c{i}")
    return _document(panels, len(keep))


def trace_svg(trace_rows, every=10) -> str:
    """Policy mean and std after each minibatch step of one iteration."""
    rows = sorted(trace_rows, key=lambda r: r["step"])
    keep = [r for i, r in enumerate(rows) if i % every == 0 or i == len(rows) - 1]
    panels = []
    for i, r in enumerate(keep):
        ox, oy = _origin(i)
        panels += _panel(ox, oy, f"step {int(r['step'])}", [],
                         (r["mu0"], r["mu1"]), (r["sigma0"], r["sigma1"]), f"t{i}")
    return _document(panels, len(keep))


def emit_didactic_viz(run_dir, every: int = 1) -> list[str]:
    """Write ``didactic.svg`` (and ``pg_trace.svg`` when a trace exists) into ``run_dir``.

    Needs the CSVs that ``run_seed`` records for the quadratic problem.
    Returns the paths written.
    """
    with open(os.path.join(run_dir, "config.json")) as f:
        env = json.load(f).get("env")
    if env != "quadratic":
        raise ValueError(f"didactic figures need a quadratic-problem run, got env={env!r}")
    actions_path = os.path.join(run_dir, "didactic_actions.csv")
    policy_path = os.path.join(run_dir, "didactic_policy.csv")
    if not os.path.exists(policy_path):
        raise FileNotFoundError(f"{policy_path} missing; was the run recorded?")
    actions = _read_csv(actions_path) if os.path.exists(actions_path) else []
    written = []
    out = os.path.join(run_dir, "didactic.svg")
    atomic_write_text(out, didactic_svg(actions, _read_csv(policy_path), every))
    written.append(out)
    trace_path = os.path.join(run_dir, "pg_trace.csv")
    if os.path.exists(trace_path):
        out = os.path.join(run_dir, "pg_trace.svg")
        atomic_write_text(out, trace_svg(_read_csv(trace_path)))
        written.append(out)
    return written
