"""CSV tables and plain-text run summaries.

Floats are written with ``repr`` so a rerun with the same inputs produces
byte-identical files.  Wall-clock timings go to a separate file for the
same reason.
"""

import csv
import os

import numpy as np

PROCESS_COLUMNS = ("t", "mean", "var", "p05", "p50", "p95")
GAP_COLUMNS = ("k", "gap", "ratio")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def process_rows(times, values):
    """Per-node mean, variance and 5/50/95% quantiles over paths."""
    values = np.asarray(values, dtype=np.float64)
    q = np.quantile(values, [0.05, 0.5, 0.95], axis=1)
    mean = values.mean(axis=1)
    var = values.var(axis=1)
    return [(times[i], mean[i], var[i], q[0, i], q[1, i], q[2, i]) for i in range(values.shape[0])]


def write_process_csv(path, times, values):
    write_table(path, PROCESS_COLUMNS, process_rows(times, values))


def gap_rows(gaps):
    rows = []
    for k, g in enumerate(gaps):
        ratio = None if k == 0 or gaps[k - 1] == 0 else g / gaps[k - 1]
        rows.append((k, float(g), ratio))
    return rows


def write_gap_csv(path, gaps):
    write_table(path, GAP_COLUMNS, gap_rows(list(gaps)))


class RunSummary:
    """Ordered ``key = value`` metrics plus pass/fail flags per check."""

    def __init__(self, command, scenario):
        self.metrics = [
            ("command", command),
            ("experiment", scenario.experiment),
            ("scenario_hash", scenario.scenario_hash),
            ("config_digest", scenario.config_digest),
            ("seed", scenario.seed),
            ("n_paths", scenario.n_paths),
            ("n_steps", scenario.n_steps),
            ("T", scenario.T),
        ]
        self.checks = []
        self.timings = []

    def add(self, key, value):
        self.metrics.append((key, value))

    def check(self, name, passed):
        self.checks.append((name, bool(passed)))
        return bool(passed)

    def time(self, stage, seconds):
        self.timings.append((stage, seconds))

    @property
    def passed(self):
        return all(ok for _, ok in self.checks)

    def lines(self):
        out = [f"{k} = {_fmt(v)}" for k, v in self.metrics]
        out += [f"check.{name} = {'pass' if ok else 'fail'}" for name, ok in self.checks]
        return out

    def write(self, out_dir, name="summary.txt"):
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write("\n".join(self.lines()) + "\n")
        with open(os.path.join(out_dir, "timings.txt"), "w") as fh:
            for stage, seconds in self.timings:
                fh.write(f"{stage} = {seconds:.6f}\n")
