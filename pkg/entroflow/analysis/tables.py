"""DataFrames behind the CSV artifacts of a run."""

from pathlib import Path
from typing import Any, Sequence

import pandas as pd

from ..pde import PdeRun
from ..sde import EnsembleResult
from ..transport import HwiResult, SlopeReport

__all__ = [
    "FLOAT_FORMAT",
    "write_frame",
    "snapshot_frame",
    "ensemble_frame",
    "slope_ladder_frame",
    "hwi_frame",
]

FLOAT_FORMAT = "%.17g"


def write_frame(frame: pd.DataFrame, path: Path | str) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def snapshot_frame(run: PdeRun, every: int = 1) -> pd.DataFrame:
    """Long table t, x0[, x1], value over every `every`-th snapshot and the last."""
    picked = list(range(0, len(run.snapshots), every))
    if picked[-1] != len(run.snapshots) - 1:
        picked.append(len(run.snapshots) - 1)
    frames = []
    for k in picked:
        frame = run.snapshots[k].to_frame()
        frame.insert(0, "t", run.snapshots[k].time_tag)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def ensemble_frame(result: EnsembleResult) -> pd.DataFrame:
    rows = [{k: v for k, v in s.items() if k != "hist"} for s in result.summaries]
    return pd.DataFrame(rows)


def slope_ladder_frame(report: SlopeReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "spacing": report.spacings,
            "fd_slope": report.finite_difference_slopes,
            "analytic_slope": report.analytic_slope,
        }
    )


def hwi_frame(results: Sequence[HwiResult]) -> pd.DataFrame:
    rows: list[dict[str, Any]] = []
    for i, r in enumerate(results):
        rows.append(
            {"pair": i, "lhs": r.lhs, "mid": r.mid, "rhs": r.rhs, "tol": r.tol, "w2": r.w2, "holds": r.holds}
        )
    return pd.DataFrame(rows)
