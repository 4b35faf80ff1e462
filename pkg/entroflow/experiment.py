from typing import Any

import pendulum


class Experiment:
    def __init__(self, exp_name: str, experiment_description: str = "", factors: dict[str, Any] | None = None):
        self.factors = factors or {}
        self.results: dict[str, Any] = {}
        self.verdict: dict[str, str] = {}
        now = pendulum.now()
        self.started_ts = now
        self.stopped_ts = now
        self.exp_name = exp_name
        self.experiment_description = experiment_description

    def calculate_results(self) -> None:
        duration = (
            self.stopped_ts.diff(self.started_ts).seconds
            + self.stopped_ts.diff(self.started_ts).microseconds / 10**6
        )
        self.results["duration"] = duration
        self.results["checks"] = len(self.verdict)
        self.results["failed"] = sorted(k for k, v in self.verdict.items() if v == "fail")

    def to_dict(self) -> dict:
        self.calculate_results()

        return {
            "exp_name": self.exp_name,
            "experiment_description": self.experiment_description,
            "started_ts": self.started_ts,
            "stopped_ts": self.stopped_ts,
            "experiment_metadata": {
                "factors": self.factors,
                "results": self.results,
                "verdict": self.verdict,
            },
        }
