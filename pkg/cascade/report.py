"""
Plot data from sweep CSVs: accuracy heatmap, classified-sample counts and
the accuracy / offload trade-off frontier.
"""

import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from core.exceptions import DataError

from cascade.engine import COUNT_COLUMNS, SWEEP_COLUMNS

logger = logging.getLogger(__name__)


def load_sweep_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"sweep CSV not found: {path}")
    frame = pd.read_csv(path)
    if tuple(frame.columns) != SWEEP_COLUMNS:
        raise DataError(f"{path}: header {list(frame.columns)} is not {list(SWEEP_COLUMNS)}")
    return frame


def counts_csv_path(sweep_path: Union[str, Path]) -> Path:
    """Destination-count table written beside a sweep CSV"""
    sweep_path = Path(sweep_path)
    return sweep_path.with_name(f"{sweep_path.stem}_counts.csv")


def load_counts_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"destination counts not found: {path} (rerun `sweep`)")
    frame = pd.read_csv(path)
    if tuple(frame.columns) != COUNT_COLUMNS:
        raise DataError(f"{path}: header {list(frame.columns)} is not {list(COUNT_COLUMNS)}")
    return frame


def _pivot(frame: pd.DataFrame, values: pd.Series) -> pd.DataFrame:
    table = frame.assign(value=values).pivot(index='s1', columns='s2', values='value')
    table.index.name = 's1'
    table.columns.name = 's2'
    return table


def accuracy_grid(frame: pd.DataFrame) -> pd.DataFrame:
    """Overall accuracy with s1 rows and s2 columns"""
    return _pivot(frame, frame['accuracy'])


def exit1_count_grid(counts: pd.DataFrame) -> pd.DataFrame:
    """Samples finalized at exit 1"""
    return _pivot(counts, counts['exit1'])


def local_count_grid(counts: pd.DataFrame) -> pd.DataFrame:
    """Samples finalized on the device (exit 1 plus exit 2)"""
    return _pivot(counts, counts['exit1'] + counts['exit2'])


def pareto_frontier(frame: pd.DataFrame) -> pd.DataFrame:
    """Cells no other cell beats on both accuracy (higher) and offload fraction (lower)"""
    ordered = frame.sort_values(['offload_frac', 'accuracy'], ascending=[True, False], kind='mergesort')
    keep = []
    best = -np.inf
    for index, row in ordered.iterrows():
        if row['accuracy'] > best:
            keep.append(index)
            best = row['accuracy']
    return ordered.loc[keep].reset_index(drop=True)


def write_report(frame: pd.DataFrame, counts: pd.DataFrame, out_dir: Union[str, Path],
                 stem: str = "sweep") -> Dict[str, Path]:
    """Write every plot-data table derived from one sweep and its destination counts"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {
        'long': out_dir / f"{stem}_long.csv",
        'accuracy_grid': out_dir / f"{stem}_accuracy_grid.csv",
        'exit1_counts': out_dir / f"{stem}_exit1_counts.csv",
        'local_counts': out_dir / f"{stem}_local_counts.csv",
        'pareto': out_dir / f"{stem}_pareto.csv",
    }
    frame.loc[:, list(SWEEP_COLUMNS)].to_csv(outputs['long'], index=False, lineterminator='\n')
    accuracy_grid(frame).to_csv(outputs['accuracy_grid'], lineterminator='\n')
    exit1_count_grid(counts).to_csv(outputs['exit1_counts'], lineterminator='\n')
    local_count_grid(counts).to_csv(outputs['local_counts'], lineterminator='\n')
    pareto_frontier(frame).to_csv(outputs['pareto'], index=False, lineterminator='\n')
    logger.info(f"Report for {len(frame)} sweep cells written to {out_dir}")
    return outputs
