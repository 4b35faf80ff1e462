from pathlib import Path

from tinydb import TinyDB
from tinydb.table import Document
from tinydb_serialization import SerializationMiddleware

from .experiment import Experiment
from .utils import DateTimeSerializer, YAMLStorage

HISTORY_FILE = "experiment-history.yaml"


class ExpStorage:
    def __init__(self, path: Path | str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        serialization = SerializationMiddleware(YAMLStorage)
        serialization.register_serializer(DateTimeSerializer(), "Pendulum")
        self.experiments = TinyDB(
            path,
            storage=serialization,
        )

    def commit_experiment(self, experiment: Experiment) -> int:
        return self.experiments.insert(experiment.to_dict())

    def all_experiments(self) -> list[Document]:
        return self.experiments.all()

    def close(self) -> None:
        self.experiments.close()
