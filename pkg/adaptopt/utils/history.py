"""
Iteration history output: CSV log, JSON summary and the history plot.
"""
import csv
import json
import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from adaptopt.models.run_config import IterationRecord

logger = logging.getLogger(__name__)


class HistoryWriter:
    """Appends one CSV row per iteration, flushing after each row"""

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._file = open(path, 'w', newline='')
        self._writer = csv.writer(self._file)
        self._writer.writerow(IterationRecord.CSV_HEADER)
        self._file.flush()
        self.records = []

    def append(self, record):
        self._writer.writerow(record.csv_row())
        self._file.flush()
        self.records.append(record)

    def close(self):
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False


def read_history(path):
    """Rows of a history CSV as dicts of strings"""
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def write_summary(path, summary):
    with open(path, 'w') as f:
        json.dump(summary, f, indent=2, default=str)
    return path


def plot_history(path, records, title=None):
    """Objective, active cells and accumulated time over the iterations"""
    if not records:
        logger.warning("No iteration records to plot")
        return None

    iterations = [r.iteration for r in records]
    events = [r.iteration for r in records if r.event]

    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6, 8))
    axes[0].plot(iterations, [r.objective for r in records], color='tab:blue')
    axes[0].set_ylabel('objective')
    axes[1].step(iterations, [r.cells for r in records], where='post', color='tab:green')
    axes[1].set_ylabel('active cells')
    axes[2].plot(iterations, [r.t_acc for r in records], color='tab:red')
    axes[2].set_ylabel('accumulated time [s]')
    axes[2].set_xlabel('iteration')
    for ax in axes:
        for it in events:
            ax.axvline(it, color='0.85', linewidth=0.5, zorder=0)
        ax.grid(True, alpha=0.3)
    if title:
        axes[0].set_title(title)

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
