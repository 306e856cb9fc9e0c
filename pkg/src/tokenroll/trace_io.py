"""CSV traces and gnuplot scripts."""
import csv
from pathlib import Path

import numpy as np

from .errors import ConstraintViolated, OutOfRange
from .ncs import ControlInput, OverallState, overall_step


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def trace_header(n, m):
    return (
        ["k"]
        + [f"x_p{i}" for i in range(n)]
        + [f"u_s{i}" for i in range(m)]
        + ["beta", "gamma", "delta"]
        + [f"u_applied{i}" for i in range(m)]
        + ["stage_cost", "cum_cost", "V_star", "V_bar_star", "beta_pred_terminal"]
    )


def trace_rows(trace):
    for r in trace:
        yield (
            [r.k]
            + list(r.x.x_p)
            + list(r.x.u_s)
            + [r.x.beta, r.u_applied.gamma, r.u_applied.delta]
            + list(r.applied_input)
            + [r.stage_cost, r.cumulative_cost, r.V_star, r.V_bar_star, r.beta_pred_terminal]
        )


def write_trace_csv(trace, path):
    """Write one row per time step; solve-only columns are empty elsewhere."""
    first = trace[0].x
    n, m = first.x_p.size, first.u_s.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trace_header(n, m))
        for row in trace_rows(trace):
            writer.writerow([_fmt(v) for v in row])
    return Path(path)


def read_trace_csv(path):
    """Read a trace CSV back as a list of dicts with typed values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if value == "":
                    row[key] = None
                elif key in ("k", "beta", "gamma", "delta", "beta_pred_terminal"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def _vector(row, prefix):
    keys = sorted((k for k in row if k.startswith(prefix) and k[len(prefix):].isdigit()),
                  key=lambda k: int(k[len(prefix):]))
    return np.array([row[k] for k in keys])


def validate_rows(rows, plant, spec, variant, atol=1e-9):
    """Re-check reloaded rows against the model.

    Each row must hold a valid overall state, its applied input must match
    the flags, and stepping the model from row ``k`` with the logged input
    must reproduce row ``k+1`` to within ``atol``.

    Raises
    ------
    ConstraintViolated
        On the first inconsistent row.
    """
    states = []
    for row in rows:
        x = OverallState(_vector(row, "x_p"), _vector(row, "u_s"), row["beta"])
        spec.check_level(x.beta)
        if row["gamma"] not in (0, 1) or row["delta"] not in (0, 1):
            raise OutOfRange(f"row k={row['k']}: flags must be 0/1")
        u = _vector(row, "u_applied")
        if not (row["gamma"] or row["delta"]) and not np.allclose(u, x.u_s, atol=atol, rtol=0):
            raise ConstraintViolated(f"row k={row['k']}: held input differs from u_s")
        states.append((x, ControlInput(u, row["gamma"], row["delta"])))
    for (x, u), (x_next, _), row in zip(states, states[1:], rows):
        pred = overall_step(plant, spec, variant, x, u, row["k"])
        scale = 1.0 + float(np.max(np.abs(pred.x_p), initial=0.0))
        if pred.beta != x_next.beta or not np.allclose(pred.x_p, x_next.x_p, atol=atol * scale, rtol=0):
            raise ConstraintViolated(f"row k={row['k'] + 1}: does not follow from the previous row")
    return len(rows)


def gnuplot_script(csv_name, n, m, title=""):
    """Text of a gnuplot script plotting the bucket level and cumulative cost."""
    header = trace_header(n, m)
    col = {name: i + 1 for i, name in enumerate(header)}
    lines = [
        "# gnuplot script; run: gnuplot -p <this file>",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set multiplot layout 3,1" + (f" title '{title}'" if title else ""),
        "set xlabel 'k'",
        "set ylabel 'beta'",
        f"plot '{csv_name}' using {col['k']}:{col['beta']} with steps",
        "set ylabel 'x_p'",
        "plot " + ", ".join(
            f"'{csv_name}' using {col['k']}:{col[f'x_p{i}']} with lines" for i in range(n)
        ),
        "set ylabel 'cumulative cost'",
        f"plot '{csv_name}' using {col['k']}:{col['cum_cost']} with lines",
        "unset multiplot",
    ]
    return "\n".join(lines) + "\n"


def write_compare_csv(labels, cumulative, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k"] + [f"cum_cost_{label}" for label in labels])
        for k in range(cumulative.shape[1]):
            writer.writerow([str(k)] + [_fmt(v) for v in cumulative[:, k]])
    return Path(path)
