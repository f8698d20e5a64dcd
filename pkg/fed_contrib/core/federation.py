"""Federated training rounds: broadcast, local SGD, aggregation and contribution refresh"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .contribution import (
    ZERO_NORM, ContributionMatrix, EmaState, ImportanceWeights,
    cgsv, cssv, ema_update, importance,
)
from .data import Dataset
from .exceptions import ConfigError, InputError, ShapeError
from .metrics import EvalReport, PearsonResult, evaluate, pearson
from .model import (
    Batch, ModelSpec, ParamVector,
    extract_last_layer, init_params, loss_and_grad, params_delta, sgd_step, weighted_sum,
)

logger = logging.getLogger(__name__)

# seed-derivation tags
_INIT_SEED = 0
_LOCAL_SEED = 1
_STANDALONE_SEED = 2


class StrategyKind(Enum):
    FEDAVG_UNIFORM = "fedavg_uniform"
    FEDAVG_SIZE_WEIGHTED = "fedavg_size_weighted"
    SHAPFED_WA = "shapfed_wa"
    SHAPFED = "shapfed"
    CGSV_WEIGHTED = "cgsv_weighted"


class AggregationMode(Enum):
    UNIFORM = "uniform"
    SIZE_WEIGHTED = "size_weighted"


class AdversaryKind(Enum):
    NOISE = "noise"
    FREE_RIDER = "free_rider"


@dataclass
class StrategyConfig:
    """Server strategy and the training hyper-parameters it runs with"""
    kind: StrategyKind
    name: Optional[str] = None
    mu: float = 0.9
    eta: float = 0.01
    local_epochs: int = 1
    batch_size: int = 32
    rounds: int = 50
    # Aggregate with 1/n regardless of contribution scores
    force_uniform: bool = False

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    @property
    def personalizes(self) -> bool:
        return self.kind == StrategyKind.SHAPFED

    def validate(self) -> None:
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"strategy '{self.label}': mu must lie in [0, 1), got {self.mu}")
        if self.eta <= 0:
            raise ConfigError(f"strategy '{self.label}': eta must be positive, got {self.eta}")
        for name in ("local_epochs", "batch_size", "rounds"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"strategy '{self.label}': {name} must be an integer >= 1, got {value}")


@dataclass
class AdversaryConfig:
    """A participant that submits noise (Byzantine) or nothing (free-rider) instead of training"""
    participant: int
    kind: AdversaryKind = AdversaryKind.NOISE
    noise_std: float = 0.01
    # Rescale each noise delta to the mean norm of the honest deltas of the same round
    match_honest_norm: bool = False


@dataclass(frozen=True, eq=False)
class FederatedTask:
    """Everything a run needs besides the strategy: model, shards, validation set, seed"""
    spec: ModelSpec
    shards: List[Dataset]
    valset: Dataset
    seed: int = 0
    adversaries: Dict[int, AdversaryConfig] = field(default_factory=dict)
    workers: int = 1

    @property
    def n(self) -> int:
        return len(self.shards)


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    participant_id: int
    final_params: ParamVector
    delta: ParamVector
    sample_count: int

    def __post_init__(self):
        if not self.delta.same_layout(self.final_params):
            raise ShapeError("update delta and final parameters differ in layout")


@dataclass(frozen=True, eq=False)
class RoundRecord:
    """Everything logged about one communication round"""
    t: int
    gamma_raw: np.ndarray
    gamma_norm: np.ndarray
    gamma_matrix: np.ndarray
    fresh_gamma_matrix: np.ndarray
    cgsv_scores: np.ndarray
    aggregation_weights: np.ndarray
    global_balanced_acc: float
    global_per_class_acc: np.ndarray
    participant_balanced_acc: np.ndarray
    participant_per_class_acc: np.ndarray
    # accuracy of each w_i right after local training, before aggregation
    participant_local_acc: np.ndarray


@dataclass(frozen=True, eq=False)
class RoundState:
    """Server-side state between rounds; `t` is the index of the next round to run"""
    t: int
    global_params: ParamVector
    delivered: List[ParamVector]
    local: List[Optional[ParamVector]]
    ema: EmaState
    cgsv_ema: EmaState
    weights: ImportanceWeights
    records: Tuple[RoundRecord, ...] = ()


@dataclass
class RunLog:
    strategy: str
    records: List[RoundRecord]
    standalone_acc: np.ndarray
    final_acc: np.ndarray
    fairness: PearsonResult
    local_acc: np.ndarray
    local_fairness: PearsonResult
    final_state: Optional[RoundState] = None


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for (master, keys...)"""
    return int(np.random.SeedSequence([int(master), *[int(k) for k in keys]]).generate_state(1)[0])


def local_train(start: ParamVector, spec: ModelSpec, shard: Dataset, eta: float,
                local_epochs: int, batch_size: int, seed: int,
                participant_id: int = 0) -> ClientUpdate:
    """K epochs of mini-batch SGD, reshuffled each epoch; the last short batch is kept"""
    if len(shard) == 0:
        raise ConfigError(f"participant {participant_id} has an empty shard")
    rng = np.random.default_rng(seed)
    params = start
    size = len(shard)
    for _ in range(local_epochs):
        order = rng.permutation(size)
        for begin in range(0, size, batch_size):
            index = order[begin:begin + batch_size]
            _, grad = loss_and_grad(params, spec, Batch(shard.features[index], shard.labels[index]))
            params = sgd_step(params, grad, eta)
    return ClientUpdate(participant_id, params, params_delta(params, start), size)


def adversarial_update(start: ParamVector, adversary: AdversaryConfig,
                       sample_count: int, seed: int) -> ClientUpdate:
    """Untrained update: Gaussian noise for Byzantine participants, zero delta for free-riders"""
    if adversary.kind == AdversaryKind.NOISE:
        rng = np.random.default_rng(seed)
        delta = ParamVector(rng.normal(0.0, adversary.noise_std, size=len(start)), start.spec)
    else:
        delta = ParamVector(np.zeros(len(start)), start.spec)
    final = weighted_sum([start, delta], [1.0, 1.0])
    return ClientUpdate(adversary.participant, final, delta, sample_count)


def match_noise_norms(updates: Sequence[ClientUpdate],
                      adversaries: Dict[int, AdversaryConfig]) -> List[ClientUpdate]:
    """Rescale flagged noise deltas to the mean L2 norm of the honest deltas.

    Updates without the flag pass through unchanged, as does everything when
    no honest participant moved.
    """
    matched = {i for i, a in adversaries.items()
               if a.kind == AdversaryKind.NOISE and a.match_honest_norm}
    if not matched:
        return list(updates)
    honest = [np.linalg.norm(u.delta.values) for u in updates if u.participant_id not in adversaries]
    target = float(np.mean(honest)) if honest else 0.0
    if target <= ZERO_NORM:
        return list(updates)

    result = []
    for update in updates:
        norm = np.linalg.norm(update.delta.values)
        if update.participant_id not in matched or norm <= ZERO_NORM:
            result.append(update)
            continue
        delta = ParamVector(update.delta.values * (target / norm), update.delta.spec)
        start = params_delta(update.final_params, update.delta)
        final = weighted_sum([start, delta], [1.0, 1.0])
        result.append(ClientUpdate(update.participant_id, final, delta, update.sample_count))
    return result


def fedavg_weights(updates: Sequence[ClientUpdate], mode: AggregationMode) -> np.ndarray:
    n = len(updates)
    if mode == AggregationMode.SIZE_WEIGHTED:
        counts = np.array([u.sample_count for u in updates], dtype=np.float64)
        return counts / counts.sum()
    return np.full(n, 1.0 / n)


def aggregate_fedavg(updates: Sequence[ClientUpdate],
                     mode: AggregationMode = AggregationMode.UNIFORM) -> ParamVector:
    """Uniform or sample-count-weighted mean of the participants' final parameters"""
    if len(updates) == 0:
        raise InputError("cannot aggregate zero updates")
    return weighted_sum([u.final_params for u in updates], fedavg_weights(updates, mode))


def aggregate_weighted(updates: Sequence[ClientUpdate], weights: ImportanceWeights) -> ParamVector:
    """Convex combination of final parameters by the normalized importance weights"""
    if len(weights) != len(updates):
        raise ShapeError(f"{len(updates)} updates but {len(weights)} importance weights")
    return weighted_sum([u.final_params for u in updates], weights.normalized)


def personalize(global_params: ParamVector, local_params: ParamVector, gamma: float) -> ParamVector:
    """gamma * w_s + (1 - gamma) * w_i with the raw (not normalized) contribution"""
    if not 0.0 <= gamma <= 1.0:
        raise InputError(f"personalization weight must lie in [0, 1], got {gamma}")
    if not global_params.same_layout(local_params):
        raise ShapeError("global and local parameters differ in layout")
    return ParamVector(gamma * global_params.values + (1.0 - gamma) * local_params.values,
                       global_params.spec)


def initial_state(task: FederatedTask, strategy: StrategyConfig,
                  init: Optional[ParamVector] = None) -> RoundState:
    if init is None:
        init = init_params(task.spec, derive_seed(task.seed, _INIT_SEED))
    n = task.n
    return RoundState(
        t=1,
        global_params=init,
        delivered=[init] * n,
        local=[None] * n,
        ema=EmaState(strategy.mu),
        cgsv_ema=EmaState(strategy.mu),
        weights=ImportanceWeights.uniform(n),
    )


def _client_round(task: FederatedTask, strategy: StrategyConfig, start: ParamVector,
                  participant: int, t: int) -> ClientUpdate:
    shard = task.shards[participant]
    seed = derive_seed(task.seed, _LOCAL_SEED, t, participant)
    adversary = task.adversaries.get(participant)
    if adversary is not None:
        return adversarial_update(start, adversary, len(shard), seed)
    return local_train(start, task.spec, shard, strategy.eta, strategy.local_epochs,
                       strategy.batch_size, seed, participant_id=participant)


def _aggregate(strategy: StrategyConfig, state: RoundState,
               updates: Sequence[ClientUpdate]) -> Tuple[ParamVector, np.ndarray]:
    """New global parameters and the weight vector that produced them"""
    if strategy.force_uniform or strategy.kind == StrategyKind.FEDAVG_UNIFORM:
        mode = AggregationMode.UNIFORM
    elif strategy.kind == StrategyKind.FEDAVG_SIZE_WEIGHTED:
        mode = AggregationMode.SIZE_WEIGHTED
    else:
        return aggregate_weighted(updates, state.weights), state.weights.normalized
    return aggregate_fedavg(updates, mode), fedavg_weights(updates, mode)


def _evaluate_delivered(task: FederatedTask, strategy: StrategyConfig,
                        delivered: Sequence[ParamVector],
                        global_report: EvalReport) -> List[EvalReport]:
    if not strategy.personalizes:
        return [global_report] * len(delivered)
    return [evaluate(params, task.spec, task.valset) for params in delivered]


def run_round(state: RoundState, strategy: StrategyConfig, task: FederatedTask) -> RoundState:
    """One communication round; aggregation uses the weights refreshed at the end of the previous round"""
    t = state.t
    n = task.n

    updates = Parallel(n_jobs=task.workers, prefer="threads")(
        delayed(_client_round)(task, strategy, state.delivered[i], i, t) for i in range(n)
    )
    updates = match_noise_norms(updates, task.adversaries)

    global_params, weights = _aggregate(strategy, state, updates)
    aggregate_delta = weighted_sum([u.delta for u in updates], weights)

    fresh = cssv(
        [extract_last_layer(u.delta, task.spec) for u in updates],
        extract_last_layer(aggregate_delta, task.spec),
    )
    ema = ema_update(state.ema, fresh)
    cgsv_scores = cgsv([u.delta for u in updates], aggregate_delta)
    cgsv_ema = ema_update(state.cgsv_ema, ContributionMatrix(cgsv_scores[:, np.newaxis]))

    if strategy.kind == StrategyKind.CGSV_WEIGHTED:
        next_weights = importance(cgsv_ema.smoothed)
    else:
        next_weights = importance(ema.smoothed)

    local = [u.final_params for u in updates]
    if strategy.personalizes:
        delivered = [personalize(global_params, local[i], float(next_weights.raw[i]))
                     for i in range(n)]
    else:
        delivered = [global_params] * n

    global_report = evaluate(global_params, task.spec, task.valset)
    reports = _evaluate_delivered(task, strategy, delivered, global_report)
    local_reports = [evaluate(params, task.spec, task.valset) for params in local]

    record = RoundRecord(
        t=t,
        gamma_raw=next_weights.raw,
        gamma_norm=next_weights.normalized,
        gamma_matrix=ema.smoothed.gamma,
        fresh_gamma_matrix=fresh.gamma,
        cgsv_scores=cgsv_scores,
        aggregation_weights=np.asarray(weights, dtype=np.float64),
        global_balanced_acc=global_report.balanced_acc,
        global_per_class_acc=global_report.per_class_acc,
        participant_balanced_acc=np.array([r.balanced_acc for r in reports]),
        participant_per_class_acc=np.vstack([r.per_class_acc for r in reports]),
        participant_local_acc=np.array([r.balanced_acc for r in local_reports]),
    )
    logger.debug("%s round %d: global balanced acc %.4f, weights %s",
                 strategy.label, t, global_report.balanced_acc, np.round(next_weights.normalized, 4))

    return replace(
        state,
        t=t + 1,
        global_params=global_params,
        delivered=delivered,
        local=local,
        ema=ema,
        cgsv_ema=cgsv_ema,
        weights=next_weights,
        records=state.records + (record,),
    )


def train_standalone(task: FederatedTask, strategy: StrategyConfig,
                     init: ParamVector) -> np.ndarray:
    """Balanced accuracy of each participant trained alone for rounds * local_epochs epochs"""
    epochs = strategy.rounds * strategy.local_epochs

    def _train(i: int) -> float:
        update = local_train(init, task.spec, task.shards[i], strategy.eta, epochs,
                             strategy.batch_size, derive_seed(task.seed, _STANDALONE_SEED, i),
                             participant_id=i)
        return evaluate(update.final_params, task.spec, task.valset).balanced_acc

    results = Parallel(n_jobs=task.workers, prefer="threads")(
        delayed(_train)(i) for i in range(task.n)
    )
    return np.array(results, dtype=np.float64)


def validate_task(task: FederatedTask) -> None:
    if task.n < 1:
        raise ConfigError("need at least one participant")
    if task.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {task.workers}")
    for i, shard in enumerate(task.shards):
        if len(shard) == 0:
            raise ConfigError(f"participant {i} has an empty shard")
    for participant, adversary in task.adversaries.items():
        if not 0 <= participant < task.n:
            raise ConfigError(f"adversary participant {participant} is not a participant index")
        if adversary.noise_std < 0:
            raise ConfigError(f"noise_std must be non-negative, got {adversary.noise_std}")


def run_experiment(task: FederatedTask, strategy: StrategyConfig,
                   with_standalone: bool = True) -> RunLog:
    """T rounds of the strategy plus standalone baselines for the fairness score"""
    strategy.validate()
    validate_task(task)

    init = init_params(task.spec, derive_seed(task.seed, _INIT_SEED))
    state = initial_state(task, strategy, init)
    for _ in range(strategy.rounds):
        state = run_round(state, strategy, task)

    final_acc = state.records[-1].participant_balanced_acc
    local_acc = state.records[-1].participant_local_acc
    if with_standalone:
        standalone = train_standalone(task, strategy, init)
    else:
        standalone = np.full(task.n, np.nan)

    if task.n >= 2 and with_standalone:
        fairness = pearson(standalone, final_acc)
        local_fairness = pearson(standalone, local_acc)
    else:
        fairness = PearsonResult(0.0, True)
        local_fairness = PearsonResult(0.0, True)

    return RunLog(
        strategy=strategy.label,
        records=list(state.records),
        standalone_acc=standalone,
        final_acc=final_acc,
        fairness=fairness,
        local_acc=local_acc,
        local_fairness=local_fairness,
        final_state=state,
    )
