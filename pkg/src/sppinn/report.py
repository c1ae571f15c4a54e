"""CSV artifact writers, the field-diff report, and figure rendering.

CSVs are the data contract: fixed headers, full-precision floats, `\n`
line endings, so identical arrays serialize to identical bytes.  Each
CSV can also be rendered to a PNG of the same stem for quick viewing.
"""

import csv
import os

import numpy as np

from .errors import ShapeError

FIELD_HEADER = ("x", "t", "u")
ENERGY_HEADER = ("t", "J")
TRACE_HEADER = ("step", "loss", "l_eqn", "l_bnd", "l_ini", "l_strc", "lr")
CLF_TRACE_HEADER = ("epoch", "ce", "l_eqn", "l_ini", "acc", "viol")
ROBUSTNESS_HEADER = ("attack", "epsilon", "accuracy", "n_samples", "seed")
ALPHA_HEADER = ("i", "j", "alpha")
DIFF_HEADER = ("t", "l2", "linf")


def _fmt(value):
    if isinstance(value, (str, int, np.integer)):
        return str(value)
    return repr(float(value))


def write_csv(path, header, rows):
    """Writes rows under a fixed header; returns the path."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Returns (header tuple, list of string rows)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        return header, [tuple(row) for row in reader]


def _numeric(rows, cols):
    return np.array([[float(r[c]) for c in cols] for r in rows])


def write_field_csv(path, rows):
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ShapeError(f"field rows must be (n, 3), got {rows.shape}")
    return write_csv(path, FIELD_HEADER, rows)


def write_energy_csv(path, ts, js):
    ts = np.asarray(ts)
    js = np.asarray(js)
    if ts.shape != js.shape:
        raise ShapeError(f"{ts.shape} times for {js.shape} energies")
    return write_csv(path, ENERGY_HEADER, np.column_stack([ts, js]))


def write_trace_csv(path, trace):
    return write_csv(path, TRACE_HEADER, trace)


def write_clf_trace_csv(path, history):
    return write_csv(path, CLF_TRACE_HEADER, history)


def write_robustness_csv(path, rows):
    return write_csv(path, ROBUSTNESS_HEADER, rows)


def write_alpha_csv(path, alpha):
    alpha = np.atleast_2d(np.asarray(alpha))
    rows = [(i, j, alpha[i, j]) for i in range(alpha.shape[0]) for j in range(alpha.shape[1])]
    return write_csv(path, ALPHA_HEADER, rows)


def _field_grid(path):
    header, rows = read_csv(path)
    if header != FIELD_HEADER:
        raise ShapeError(f"{path} is not a field CSV (header {header})")
    data = _numeric(rows, (0, 1, 2))
    ts = np.unique(data[:, 1])
    xs = data[data[:, 1] == ts[0], 0]
    if data.shape[0] != len(ts) * len(xs):
        raise ShapeError(f"{path} is not a complete (x, t) grid")
    grid = data[:, 2].reshape(len(ts), len(xs))
    return xs, ts, grid


def diff_fields(path_a, path_b, out_path):
    """Per-time-slice L2/Linf errors between two field CSVs."""
    xs_a, ts_a, grid_a = _field_grid(path_a)
    xs_b, ts_b, grid_b = _field_grid(path_b)
    if xs_a.shape != xs_b.shape or ts_a.shape != ts_b.shape:
        raise ShapeError(
            f"grid mismatch: {len(xs_a)}x{len(ts_a)} vs {len(xs_b)}x{len(ts_b)}"
        )
    if not (np.allclose(xs_a, xs_b, atol=1e-12) and np.allclose(ts_a, ts_b, atol=1e-12)):
        raise ShapeError("grid mismatch: differing coordinate values")
    err = grid_a - grid_b
    dx = xs_a[1] - xs_a[0]
    w = np.ones(len(xs_a))
    w[0] = w[-1] = 0.5
    l2 = np.sqrt(np.sum(w * err**2, axis=1) * dx)
    linf = np.max(np.abs(err), axis=1)
    return write_csv(out_path, DIFF_HEADER, np.column_stack([ts_a, l2, linf]))


def _png_path(csv_path):
    stem, _ = os.path.splitext(csv_path)
    return stem + ".png"


def render_figure(csv_path, dpi=110):
    """Renders one CSV to a PNG of the same stem; returns the PNG path.

    The plot kind is chosen by the CSV header.  Unknown headers return
    None rather than failing a run over a cosmetic artifact.
    """
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    header, rows = read_csv(csv_path)
    out = _png_path(csv_path)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        if header == FIELD_HEADER:
            xs, ts, grid = _field_grid(csv_path)
            mesh = ax.pcolormesh(xs, ts, grid, shading="nearest", cmap="RdBu_r")
            fig.colorbar(mesh, ax=ax, label="u")
            ax.set_xlabel("x")
            ax.set_ylabel("t")
            ax.set_title("field u(x, t)")
        elif header == ENERGY_HEADER:
            data = _numeric(rows, (0, 1))
            ax.plot(data[:, 0], data[:, 1])
            ax.set_xlabel("t")
            ax.set_ylabel("J")
            ax.set_title("discrete global energy")
        elif header == TRACE_HEADER:
            data = _numeric(rows, (0, 1, 2, 3, 4, 5))
            labels = TRACE_HEADER[1:6]
            for col, label in enumerate(labels, start=1):
                ax.plot(data[:, 0], np.maximum(data[:, col], 1e-16), label=label)
            ax.set_yscale("log")
            ax.set_xlabel("step")
            ax.set_ylabel("loss")
            ax.legend(fontsize=8)
            ax.set_title("training trace")
        elif header == CLF_TRACE_HEADER:
            data = _numeric(rows, (0, 1, 4))
            ax.plot(data[:, 0], data[:, 1], label="cross entropy")
            ax.plot(data[:, 0], data[:, 2], label="train accuracy")
            ax.set_xlabel("epoch")
            ax.legend(fontsize=8)
            ax.set_title("classifier training")
        elif header == ROBUSTNESS_HEADER:
            families = {}
            for row in rows:
                families.setdefault(row[0], []).append((float(row[1]), float(row[2])))
            for name, pts in families.items():
                pts.sort()
                eps = [p[0] for p in pts]
                acc = [p[1] for p in pts]
                if name == "clean":
                    ax.axhline(acc[0], linestyle="--", color="gray", label="clean")
                else:
                    ax.plot(eps, acc, marker="o", label=name)
            ax.set_xlabel("epsilon")
            ax.set_ylabel("accuracy")
            ax.set_ylim(0.0, 1.0)
            ax.legend(fontsize=8)
            ax.set_title("robustness under attack")
        elif header == DIFF_HEADER:
            data = _numeric(rows, (0, 1, 2))
            ax.plot(data[:, 0], np.maximum(data[:, 1], 1e-16), label="L2")
            ax.plot(data[:, 0], np.maximum(data[:, 2], 1e-16), label="Linf")
            ax.set_yscale("log")
            ax.set_xlabel("t")
            ax.set_ylabel("error")
            ax.legend(fontsize=8)
            ax.set_title("field difference per time slice")
        else:
            return None
        fig.savefig(out, dpi=dpi, bbox_inches="tight")
    finally:
        plt.close(fig)
    return out


def render_figures(csv_paths, dpi=110):
    """Renders every recognized CSV; returns the PNG paths written."""
    written = []
    for path in csv_paths:
        png = render_figure(path, dpi=dpi)
        if png is not None:
            written.append(png)
    return written
