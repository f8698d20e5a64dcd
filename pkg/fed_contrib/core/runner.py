"""Experiment runner: materializes a task from config, runs strategies and the Shapley audit"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from .config import MAX_AUDIT_PARTICIPANTS, DataSource, ExperimentConfig
from .contribution import exact_shapley, utility_classwise_accuracy
from .data import (
    Dataset, class_histogram, gen_blobs, load_csv, partition, train_val_split,
)
from .exceptions import ConfigError
from .federation import (
    FederatedTask, RunLog, StrategyConfig, derive_seed, run_experiment, validate_task,
)
from .model import ModelKind, ModelSpec, params_delta
from ..utils.run_logger import RunLogger, RunTracker

logger = logging.getLogger(__name__)

# seed-derivation tags, disjoint from the ones used inside federation
_DATA_SEED = 10
_SPLIT_SEED = 11
_PARTITION_SEED = 12


@dataclass(frozen=True, eq=False)
class PreparedData:
    """The global dataset, its validation carve and the per-participant shards"""
    dataset: Dataset
    train: Dataset
    valset: Dataset
    shards: List[Dataset]


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Generate or load samples, carve the validation set, then partition the rest"""
    seed = config.seed
    if config.data.source == DataSource.CSV:
        dataset = load_csv(config.data.path, label_column=config.data.label_column)
    else:
        dataset = gen_blobs(
            config.data.num_classes, config.data.input_dim, config.data.per_class,
            config.data.separation, derive_seed(seed, _DATA_SEED),
        )
    train, valset = train_val_split(dataset, config.valset_fraction, derive_seed(seed, _SPLIT_SEED))
    shards = partition(train, config.partition, config.participants,
                       derive_seed(seed, _PARTITION_SEED))
    return PreparedData(dataset, train, valset, shards)


def model_spec(config: ExperimentConfig, dataset: Dataset) -> ModelSpec:
    hidden = config.model.hidden_dim if config.model.kind == ModelKind.MLP else None
    return ModelSpec(config.model.kind, dataset.input_dim, dataset.num_classes, hidden)


def assemble_task(config: ExperimentConfig, data: PreparedData) -> FederatedTask:
    task = FederatedTask(
        spec=model_spec(config, data.dataset),
        shards=data.shards,
        valset=data.valset,
        seed=config.seed,
        adversaries={a.participant: a for a in config.adversaries},
        workers=config.workers,
    )
    validate_task(task)
    return task


def build_task(config: ExperimentConfig) -> FederatedTask:
    """Materialize the FederatedTask every strategy of the config shares"""
    if not config.strategies:
        raise ConfigError("at least one strategy is required")
    return assemble_task(config, prepare_data(config))


def partition_counts(shards: List[Dataset]) -> np.ndarray:
    """n x M class-count table"""
    return np.vstack([class_histogram(shard) for shard in shards])


def _top_contributors(scores: np.ndarray) -> np.ndarray:
    """Per-class argmax over participants; ties go to the lowest index"""
    return np.argmax(scores, axis=0)


def shapley_audit(task: FederatedTask, strategy: StrategyConfig) -> Dict[str, Any]:
    """Compare exact class-wise Shapley values with CSSV and CGSV on the final round.

    The coalition utility averages the members' final local models in one
    shot (base + mean delta) and scores per-class validation accuracy.
    """
    if task.n > MAX_AUDIT_PARTICIPANTS:
        raise ConfigError(
            f"shapley audit is capped at {MAX_AUDIT_PARTICIPANTS} participants, got {task.n}"
        )
    log = run_experiment(task, strategy, with_standalone=False)
    state = log.final_state
    final = log.records[-1]

    base = state.global_params
    deltas = [params_delta(local, base) for local in state.local]

    def utility(coalition) -> np.ndarray:
        members = [deltas[i] for i in sorted(coalition)]
        return utility_classwise_accuracy(members, base, task.spec, task.valset)

    exact = exact_shapley(task.n, utility, workers=task.workers)

    exact_top = _top_contributors(exact.phi)
    cssv_top = _top_contributors(final.gamma_matrix)
    cgsv_top = np.full(task.spec.num_classes, int(np.argmax(final.cgsv_scores)))
    cssv_agree = cssv_top == exact_top
    cgsv_agree = cgsv_top == exact_top

    return {
        "strategy": log.strategy,
        "rounds": len(log.records),
        "exact_shapley": exact.phi,
        "cssv": final.gamma_matrix,
        "cssv_fresh": final.fresh_gamma_matrix,
        "cgsv": final.cgsv_scores,
        "top_contributor": {
            "exact": exact_top,
            "cssv": cssv_top,
            "cgsv": cgsv_top,
        },
        "agreement": {
            "cssv_vs_exact": cssv_agree,
            "cgsv_vs_exact": cgsv_agree,
            "cssv_matches": int(cssv_agree.sum()),
            "cgsv_matches": int(cgsv_agree.sum()),
        },
        "utility_calls": {
            "exact": exact.utility_calls,
            "cssv": task.n + 1,
        },
        "grand_coalition_utility": exact.grand_value,
        "efficiency_gap": exact.phi.sum(axis=0) - exact.grand_value,
    }


class ExperimentRunner:
    """Runs every configured strategy on one shared task"""

    def __init__(self, config: ExperimentConfig, run_logger: Optional[RunLogger] = None):
        self.config = config
        self.run_logger = run_logger
        self.tracker = RunTracker()
        self.data: Optional[PreparedData] = None
        self.task: Optional[FederatedTask] = None
        self.logs: Dict[str, RunLog] = {}

    def initialize(self) -> FederatedTask:
        """Build the shared task once; later calls reuse it"""
        if self.task is None:
            self.data = prepare_data(self.config)
            task = assemble_task(self.config, self.data)
            self.task = task
            logger.info("task ready: %d participants, %d classes, %d validation samples",
                        task.n, task.spec.num_classes, len(task.valset))
        return self.task

    def _event(self, run_name: str, event: str, details: Dict[str, Any]) -> None:
        if self.run_logger is not None:
            self.run_logger.log_event(run_name, event, details)

    def _failed(self, run_name: str, error: Exception) -> None:
        self.tracker.increment_error_count(run_name)
        self.tracker.set_last_error(run_name, str(error))
        if self.run_logger is not None:
            self.run_logger.log_error(run_name, str(error), {"type": type(error).__name__})

    def run_strategy(self, strategy: StrategyConfig) -> RunLog:
        task = self.initialize()
        name = strategy.label
        self.tracker.reset(name)
        self._event(name, "run_started", {
            "kind": strategy.kind.value,
            "participants": task.n,
            "rounds": strategy.rounds,
            "seed": self.config.seed,
        })
        try:
            log = run_experiment(task, strategy)
        except Exception as e:
            self._failed(name, e)
            raise

        for record in log.records:
            self.tracker.record_round(name)
            self._event(name, "round_completed", {
                "t": record.t,
                "gamma_norm": record.gamma_norm.tolist(),
                "global_balanced_acc": record.global_balanced_acc,
            })
        self._event(name, "run_completed", {
            "final_global_balanced_acc": log.records[-1].global_balanced_acc,
            "pearson_r": log.fairness.r,
            "degenerate": log.fairness.degenerate,
        })
        self.logs[name] = log
        return log

    def run_all(self) -> List[RunLog]:
        return [self.run_strategy(strategy) for strategy in self.config.strategies]

    def audit(self) -> Dict[str, Any]:
        """Shapley audit on the configured audit strategy (default: the first one)"""
        task = self.initialize()
        name = self.config.audit_strategy or self.config.strategies[0].label
        strategy = self.config.strategy(name)
        self._event(name, "audit_started", {"participants": task.n})
        try:
            payload = shapley_audit(task, strategy)
        except Exception as e:
            self._failed(name, e)
            raise
        self._event(name, "audit_completed", {
            "cssv_matches": payload["agreement"]["cssv_matches"],
            "cgsv_matches": payload["agreement"]["cgsv_matches"],
        })
        return payload

    def partition_table(self) -> np.ndarray:
        self.initialize()
        return partition_counts(self.data.shards)

    def get_status(self) -> Dict[str, Any]:
        """Per-strategy progress for the console summary"""
        return {
            strategy.label: self.tracker.get_stats(strategy.label)
            for strategy in self.config.strategies
        }
