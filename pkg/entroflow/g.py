import logging
from functools import cached_property
from pathlib import Path
from typing import Any

import gin
import pendulum

from .experiment import Experiment
from .storage import HISTORY_FILE, ExpStorage


@gin.configurable()
class _g:
    """Process-wide handle on the output directory and the experiment history."""

    def __init__(
        self,
        out_dir: str = gin.REQUIRED,
        storage_type: str = "tinydb",
    ):
        self.out_dir = Path(out_dir)
        self.storage_type = storage_type
        self.current_experiment: Experiment | None = None

    @cached_property
    def storage(self) -> ExpStorage | None:
        if self.storage_type == "tinydb":
            return ExpStorage(path=self.out_dir / HISTORY_FILE)
        return None

    def init_exp(self, exp_name: str, experiment_description: str, factors: dict[str, Any]) -> Experiment:
        e = Experiment(exp_name=exp_name, experiment_description=experiment_description, factors=factors)
        logging.info({"msg": "Starting experiment", "exp_name": exp_name, "started_ts": e.started_ts.to_iso8601_string()})
        self.current_experiment = e
        return e

    def end_exp(self, verdict: dict[str, str]) -> None:
        if self.current_experiment is None:
            raise RuntimeError("end_exp called without a running experiment")
        self.current_experiment.stopped_ts = pendulum.now()
        self.current_experiment.verdict = verdict
        if self.storage is not None:
            self.storage.commit_experiment(self.current_experiment)

    @staticmethod
    def get_g() -> "_g":
        return _g()


def patch_global_g(out_dir: str, storage_type: str = "tinydb") -> _g:
    """Binds and rebuilds the global `g` for one output directory."""
    with gin.unlock_config():
        gin.bind_parameter("entroflow.g._g.out_dir", out_dir)
        gin.bind_parameter("entroflow.g._g.storage_type", storage_type)
    global g
    g = _g.get_g()
    return g


g: _g
