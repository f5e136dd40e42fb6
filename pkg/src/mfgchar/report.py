"""Deterministic CSV, JSON and SVG writers for run outputs."""

import csv
import json
import math

import numpy as np


def fmt(v):
    """Stable text for a CSV cell: ``repr`` for floats, ``str`` otherwise."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def field_rows(field):
    """Rows ``(k, t, point_id, kind, sigma1..., sigma2...)``; particles in caller order."""
    d = field.d
    S1 = field.sigma1()
    S2 = field.sigma2()
    n = field.n
    rows = []
    for k, t in enumerate(field.times):
        for j in range(n):
            r = field.user_index(j)
            rows.append([k, float(t), j, "particle", *S1[k, r], *S2[k, r]])
        for i in range(field.m):
            rows.append([k, float(t), i, "query", *S1[k, n + i], *S2[k, n + i]])
    header = (["k", "t", "point_id", "kind"] + [f"sigma1_{a}" for a in range(d)]
              + [f"sigma2_{a}" for a in range(d)])
    return header, rows


def solution_rows(sol):
    d = sol.field.d
    rows = []
    for k, t in enumerate(sol.times):
        for i, x in enumerate(sol.grid):
            rows.append([k, float(t), i, *x, sol.U[k, i], *sol.V[k, i], *sol.X[k, i]])
    header = (["k", "t", "point_id"] + [f"x_{a}" for a in range(d)] + ["U"]
              + [f"V_{a}" for a in range(d)] + [f"X_{a}" for a in range(d)])
    return header, rows


def svg_line_chart(path, title, xs, ys, xlabel="level", ylabel="value", log=True):
    """Single polyline with axes; ``log`` plots ``log10`` of positive values."""
    W, H, pad = 480, 320, 50
    xs = [float(x) for x in xs]
    vals = []
    for y in ys:
        y = float(y)
        if log:
            y = math.log10(y) if y > 0 else float("nan")
        vals.append(y)
    finite = [v for v in vals if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def py(y):
        return H - pad - (y - lo) / (hi - lo) * (H - 2 * pad)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, vals) if math.isfinite(y))
    ylab = f"log10({ylabel})" if log else ylabel
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
        f'<text x="{W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<text x="{W / 2:.0f}" y="{H - 10}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>',
        f'<text x="14" y="{H / 2:.0f}" font-size="12" transform="rotate(-90 14 {H / 2:.0f})" '
        f'text-anchor="middle">{_esc(ylab)}</text>',
        f'<text x="{pad - 4}" y="{py(hi) + 4:.2f}" text-anchor="end" font-size="10">{hi:.3g}</text>',
        f'<text x="{pad - 4}" y="{py(lo) + 4:.2f}" text-anchor="end" font-size="10">{lo:.3g}</text>',
    ]
    for x in xs:
        parts.append(f'<text x="{px(x):.2f}" y="{H - pad + 14}" text-anchor="middle" '
                     f'font-size="10">{x:g}</text>')
    if pts:
        parts.append(f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>')
        for x, y in zip(xs, vals):
            if math.isfinite(y):
                parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _esc(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
