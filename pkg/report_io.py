import json
import logging
from typing import Dict

import numpy as np
import pandas as pd

from engine import Trace
from metrics import RegretReport

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['t', 'agent', 'loss', 'regret_partial', 'bits_cumulative', 'consensus_err', 'tracking_err']


def trace_frame(trace: Trace, report: RegretReport) -> pd.DataFrame:
    """
    Long-format table with one row per (round, agent), rounds outermost.
    """
    T, n = trace.T, trace.n
    return pd.DataFrame({
        't': np.repeat(np.arange(1, T + 1), n),
        'agent': np.tile(np.arange(n), T),
        'loss': trace.losses.ravel(),
        'regret_partial': report.regret.ravel(),
        'bits_cumulative': np.cumsum(trace.bits, axis=0).ravel(),
        'consensus_err': np.repeat(trace.consensus_error, n),
        'tracking_err': np.repeat(trace.tracking_error, n),
    }, columns=TRACE_COLUMNS)


def write_trace_csv(trace: Trace, report: RegretReport, file_path: str) -> pd.DataFrame:
    df = trace_frame(trace, report)
    df.to_csv(file_path, index=False, encoding='utf-8')
    logger.debug(f"Wrote {len(df)} trace rows to {file_path}")
    return df


def read_trace_csv(file_path: str) -> pd.DataFrame:
    """
    Reads a trace CSV written by write_trace_csv.

    Args:
        file_path (str): Path to the CSV file.

    Returns:
        pd.DataFrame: The trace rows, or an empty DataFrame with the trace columns if the
        file is missing or malformed.
    """
    try:
        df = pd.read_csv(file_path, encoding='utf-8')
    except FileNotFoundError:
        logger.error(f"Trace file not found at {file_path}")
        return pd.DataFrame(columns=TRACE_COLUMNS)
    except pd.errors.ParserError as e:
        logger.error(f"Error parsing trace file {file_path}: {e}")
        return pd.DataFrame(columns=TRACE_COLUMNS)

    missing = [col for col in TRACE_COLUMNS if col not in df.columns]
    if missing:
        logger.error(f"Trace file {file_path} is missing columns {missing}; found {list(df.columns)}")
        return pd.DataFrame(columns=TRACE_COLUMNS)
    return df[TRACE_COLUMNS]


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_summary_json(summary: Dict, file_path: str):
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, ensure_ascii=False, default=_to_builtin)
        f.write('\n')


def read_summary_json(file_path: str) -> Dict:
    with open(file_path, 'r', encoding='utf-8') as f:
        return json.load(f)
