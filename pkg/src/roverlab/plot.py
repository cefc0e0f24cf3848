"""Self-contained SVG charts for telemetry and transfer reports.

The emitter writes plain SVG (no fonts beyond generic families, no external
assets), so outputs are byte-deterministic and reviewable in diffs. Telemetry
mode draws mean reward against env steps with one circle per iteration;
report mode draws per-run success/failure bar pairs.
"""

from __future__ import annotations

import csv

WIDTH, HEIGHT = 720, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 50


class MalformedCsvError(ValueError):
    def __init__(self, path, row: int, message: str):
        super().__init__(f"{path}:row {row}: {message}")
        self.row = row


def _read_csv(path, required: tuple[str, ...], numeric: tuple[str, ...]) -> list[dict]:
    with open(path, "r", newline="") as fp:
        reader = csv.DictReader(fp)
        if reader.fieldnames is None:
            raise MalformedCsvError(path, 0, "empty file (no header)")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise MalformedCsvError(path, 0, f"missing columns {missing}")
        rows = []
        for i, row in enumerate(reader, 1):
            parsed = dict(row)
            for col in numeric:
                raw = row.get(col)
                if raw in (None, ""):
                    raise MalformedCsvError(path, i, f"missing value in column {col!r}")
                try:
                    parsed[col] = float(raw)
                except ValueError:
                    raise MalformedCsvError(
                        path, i, f"column {col!r}: not a number: {raw!r}") from None
            rows.append(parsed)
        return rows


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]


def _axes(x_label: str, y_label: str) -> list[str]:
    x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
    x1, y1 = WIDTH - MARGIN_R, MARGIN_T
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="18" y="{(y0 + y1) / 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2})">{y_label}</text>',
    ]


def _scale(vals: list[float]) -> tuple[float, float]:
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def render_telemetry_svg(csv_path, out_path) -> int:
    """Mean reward vs env steps; returns the number of plotted points."""
    rows = _read_csv(csv_path, required=("iteration", "env_steps", "mean_reward"),
                     numeric=("env_steps", "mean_reward"))
    parts = _svg_header("mean reward vs env steps")
    parts += _axes("env steps", "mean reward")
    if rows:
        xs = [r["env_steps"] for r in rows]
        ys = [r["mean_reward"] for r in rows]
        xlo, xhi = _scale(xs)
        ylo, yhi = _scale(ys)
        px0, px1 = MARGIN_L, WIDTH - MARGIN_R
        py0, py1 = HEIGHT - MARGIN_B, MARGIN_T

        def px(x):
            return px0 + (x - xlo) / (xhi - xlo) * (px1 - px0)

        def py(y):
            return py0 - (y - ylo) / (yhi - ylo) * (py0 - py1)

        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        if len(rows) > 1:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" '
                         f'stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle class="pt" cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" '
                         f'r="2.5" fill="steelblue"/>')
        for v, anchor in ((xlo, "start"), (xhi, "end")):
            parts.append(f'<text x="{_fmt(px(v))}" y="{HEIGHT - MARGIN_B + 16}" '
                         f'text-anchor="{anchor}" font-family="sans-serif" '
                         f'font-size="10">{_fmt(v)}</text>')
        for v in (ylo, yhi):
            parts.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(py(v) + 3)}" '
                         f'text-anchor="end" font-family="sans-serif" '
                         f'font-size="10">{_fmt(v)}</text>')
    parts.append("</svg>")
    with open(out_path, "w") as fp:
        fp.write("\n".join(parts) + "\n")
    return len(rows)


def render_report_svg(csv_path, out_path) -> int:
    """Per-run success/failure bars from a transfer report; returns the number
    of run groups drawn (the summary row is excluded)."""
    rows = _read_csv(csv_path, required=("run", "successes", "collisions", "oob",
                                         "timeouts"),
                     numeric=())
    runs = []
    for i, r in enumerate(rows, 1):
        if r["run"] == "mean":
            continue
        try:
            succ = int(r["successes"])
            fail = int(r["collisions"]) + int(r["oob"]) + int(r["timeouts"])
        except (ValueError, TypeError):
            raise MalformedCsvError(csv_path, i, "non-integer outcome counts") from None
        runs.append((r["run"], succ, fail))
    parts = _svg_header("success / failure per run")
    parts += _axes("run", "episodes")
    if runs:
        top = max(max(s, f) for _, s, f in runs) or 1
        px0, px1 = MARGIN_L, WIDTH - MARGIN_R
        py0, py1 = HEIGHT - MARGIN_B, MARGIN_T
        group_w = (px1 - px0) / len(runs)
        bar_w = group_w * 0.35

        def bar(x, count, color, label):
            h = (count / top) * (py0 - py1)
            return (f'<rect class="bar" x="{_fmt(x)}" y="{_fmt(py0 - h)}" '
                    f'width="{_fmt(bar_w)}" height="{_fmt(h)}" fill="{color}">'
                    f'<title>{label}: {count}</title></rect>')

        for k, (name, succ, fail) in enumerate(runs):
            gx = px0 + k * group_w + group_w * 0.12
            parts.append(bar(gx, succ, "seagreen", f"run {name} successes"))
            parts.append(bar(gx + bar_w + group_w * 0.06, fail, "indianred",
                             f"run {name} failures"))
            parts.append(f'<text x="{_fmt(gx + bar_w)}" y="{HEIGHT - MARGIN_B + 16}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="10">{name}</text>')
        parts.append(f'<text x="{MARGIN_L - 6}" y="{MARGIN_T + 3}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{top}</text>')
    parts.append("</svg>")
    with open(out_path, "w") as fp:
        fp.write("\n".join(parts) + "\n")
    return len(runs)
