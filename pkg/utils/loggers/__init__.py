import json
import math
from pathlib import Path

import pandas as pd

from utils import TryExcept
from utils.general import LOGGER, colorstr, git_describe

KEYS = ('scenario', 'u', 'phat', 'ci_lo', 'ci_hi', 'asymptotic', 'ratio', 'regime', 'nsim', 'walltime_ms')


def _cell(v):
    # CSV cell, empty for quantities not computed
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ''
    if isinstance(v, float):
        return f'{v:.10g}'
    return str(v).replace(',', ';')


class ReportLogger:
    """
    Report rows to CSV and an optional JSON summary
    Usage: from utils.loggers import ReportLogger; logger = ReportLogger('runs/compare/exp/results.csv')
    Arguments
        file:       CSV path, rows are appended and flushed one at a time
        summary:    write summary.json next to the CSV on close()
    """

    def __init__(self, file, summary=False):
        self.csv = Path(file)
        self.csv.parent.mkdir(parents=True, exist_ok=True)
        self.summary = summary
        self.rows = []
        self.info = {'rows': self.rows}
        with open(self.csv, 'w') as f:
            f.write(','.join(KEYS) + '\n')  # header

    def log_row(self, **row):
        # Append one ReportRow; unknown keys raise, missing keys are written as empty cells
        bad = set(row) - set(KEYS)
        assert not bad, f'unknown report columns {bad}'
        with open(self.csv, 'a') as f:
            f.write(','.join(_cell(row.get(k)) for k in KEYS) + '\n')
            f.flush()
        self.rows.append({k: row.get(k) for k in KEYS})

    def update(self, **info):
        # Summary fields: regime, constants and their provenance, flags, ratio diagnostic
        self.info.update(info)

    def table(self):
        # Report rows as a DataFrame read back from the CSV
        return pd.read_csv(self.csv, keep_default_na=False, na_values=[''])

    def close(self):
        if self.rows:
            LOGGER.info(self.table().drop(columns='walltime_ms').to_string(index=False))
        if self.summary:
            with TryExcept(f'{colorstr("summary: ")}git description failed'):
                self.info['git'] = git_describe()
            f = self.csv.with_name('summary.json')
            with open(f, 'w') as fh:
                json.dump(self.info, fh, indent=2, default=str)
            LOGGER.info(f"Summary saved to {colorstr('bold', f)}")
        LOGGER.info(f"Results saved to {colorstr('bold', self.csv)}")

    def __enter__(self):
        return self

    def __exit__(self, *args):
        self.close()  # flush the summary on error exits too
