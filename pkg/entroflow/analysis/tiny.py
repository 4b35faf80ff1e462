from pathlib import Path

import pandas as pd
import pendulum

from ..storage import HISTORY_FILE, ExpStorage

__all__ = ["get_experiments", "sort_by_time", "history_frame"]


def get_experiments(out_dir: Path | str) -> dict:
    storage = ExpStorage(Path(out_dir) / HISTORY_FILE)
    experiments = {exp.doc_id: exp for exp in storage.all_experiments()}
    storage.close()
    return experiments


def sort_by_time(exp_id, experiments) -> pendulum.DateTime:
    started = experiments[exp_id]["started_ts"]
    return started if isinstance(started, pendulum.DateTime) else pendulum.parse(started)


def history_frame(out_dir: Path | str) -> pd.DataFrame:
    """One row per recorded run, oldest first."""
    experiments = get_experiments(out_dir)
    rows = []
    for exp_id in sorted(experiments, key=lambda i: sort_by_time(i, experiments)):
        exp = experiments[exp_id]
        results = exp["experiment_metadata"]["results"]
        rows.append(
            {
                "id": exp_id,
                "exp_name": exp["exp_name"],
                "started_ts": sort_by_time(exp_id, experiments).to_iso8601_string(),
                "duration": results.get("duration"),
                "checks": results.get("checks"),
                "failed": ",".join(results.get("failed", [])),
            }
        )
    return pd.DataFrame(rows, columns=["id", "exp_name", "started_ts", "duration", "checks", "failed"])
