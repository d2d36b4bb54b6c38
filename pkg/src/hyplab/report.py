"""Verification reports, CSV traces, and static SVG line plots.

Report values are deterministic; wall-clock timings go to a sidecar file so
reruns produce byte-identical reports.
"""

import json
import os
import time

import numpy as np


def _jsonable(x):
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


class VerificationReport:
    """Ordered list of checks with a conjunction verdict."""

    def __init__(self, suite, config=None):
        self.suite = suite
        self.config = config
        self.checks = []
        self.timings = []
        self._t0 = time.perf_counter()

    def add(self, name, anchor, values, tolerance=None, passed=True,
            exploratory=False):
        if any(c["name"] == name for c in self.checks):
            raise ValueError(f"duplicate check name {name!r}")
        self.checks.append({
            "name": name,
            "anchor": anchor,
            "values": _jsonable(values),
            "tolerance": _jsonable(tolerance),
            "passed": bool(passed),
            "exploratory": bool(exploratory),
        })
        self.timings.append({"name": name,
                             "elapsed": time.perf_counter() - self._t0})
        self._t0 = time.perf_counter()
        return self.checks[-1]

    @property
    def ok(self):
        return all(c["passed"] for c in self.checks if not c["exploratory"])

    def as_dict(self):
        out = {"suite": self.suite, "ok": self.ok, "checks": self.checks}
        if self.config is not None:
            out["config"] = json.loads(self.config.to_json())
        return out

    def write(self, path):
        payload = json.dumps(self.as_dict(), indent=1, sort_keys=False)
        with open(path, "w") as fh:
            fh.write(payload + "\n")
        timing_path = _timing_sidecar(path)
        with open(timing_path, "w") as fh:
            json.dump({"suite": self.suite, "timings": self.timings}, fh,
                      indent=1)
            fh.write("\n")
        return path

    def summary_lines(self):
        lines = []
        for c in self.checks:
            tag = "PASS" if c["passed"] else ("info" if c["exploratory"]
                                              else "FAIL")
            lines.append(f"[{tag}] {c['name']} ({c['anchor']})")
        lines.append(f"overall: {'PASS' if self.ok else 'FAIL'}")
        return lines


def _timing_sidecar(path):
    root, ext = os.path.splitext(path)
    return root + ".timing" + (ext or ".json")


def emit_trace(trace, path, svg=False):
    """CSV with header p1,p2,E,ell,residual,iterations (row-major grid)."""
    rows = []
    for p in trace.params():
        if trace.mode == "z":
            p1, p2 = p.real, p.imag
        else:
            p1, p2 = p, 0.0
        ell = trace.ell.get(p, "")
        rows.append((p1, p2, trace.E[p], ell, trace.residual.get(p, 0.0),
                     trace.iterations.get(p, 0)))
    try:
        fh = open(path, "w")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path!r}: {exc}") from exc
    with fh:
        fh.write("p1,p2,E,ell,residual,iterations\n")
        for p1, p2, E, ell, res, its in rows:
            ell_s = repr(float(ell)) if ell != "" else ""
            fh.write(f"{p1!r},{p2!r},{E!r},{ell_s},{res!r},{its}\n")
    if svg:
        values = [r[2] for r in rows]
        xs = [r[0] for r in rows]
        write_svg_line(os.path.splitext(path)[0] + ".svg", xs, values,
                       xlabel="p1", ylabel="E")
    return path


def write_svg_line(path, xs, ys, xlabel="x", ylabel="y", width=640,
                   height=400):
    """Dependency-light static SVG polyline plot."""
    xs = list(map(float, xs))
    ys = list(map(float, ys))
    pad = 50
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0

    def sx(x):
        return pad + (x - x0) / dx * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / dy * (height - 2 * pad)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in
                   sorted(zip(xs, ys)))
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<polyline points="{pts}" fill="none" stroke="steelblue" '
        'stroke-width="1.5"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" '
        f'font-size="12" transform="rotate(-90 14 {height / 2:.0f})">'
        f'{ylabel}</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(body) + "\n")
    return path
