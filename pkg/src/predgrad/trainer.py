"""Training loops: vanilla gradient descent and predicted gradient descent.

Both loops draw their epoch shuffles from the same named substream, so runs
with equal seeds see identical batch schedules regardless of algorithm. The
predicted loop splits each mini-batch with a per-step substream, computes
true and predicted gradients on the control micro-batch and predicted
gradients (from a cheap activations-only pass) on the rest, and combines
them with the control-variate correction.

The combination is evaluated in sum space,

    G = (sum_c g_true + sum_p h) / m
        - (1 - f_eff) / m_c * (sum_c h - sum_c g_true),

with f_eff = m_c / m, which is algebraically the textbook form
f g_c_true + (1-f)(g_pred - (g_c_pred - g_c_true)) but cancels the control
correction exactly (to the bit) when predictions coincide with true
gradients. Per-example gradients are scattered into an (m, params) array in
batch order and reduced identically in both loops, so a perfect predictor
reproduces the vanilla trajectory bit for bit.

Cost accounting charges what the algorithm structure prescribes (forward +
backward per control example, cheap forward per prediction example),
independent of how a predictor is implemented internally. The optional
warmup batch that seeds the predictor fit buffer is charged to a separate
warmup ledger; the budget governs stepping cost only, mirroring a cost
model that counts per-iteration passes.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import CostModel, gamma, rho_star
from .data import Dataset
from .errors import (BudgetError, ConfigError, DataError, DimensionError,
                     InsufficientData)
from .estimator import alignment_stats, control_batch_size, split_minibatch, variance_inflation
from .network import (Network, NetworkConfig, GradientEstimate, backward,
                      cheap_forward, forward, init_network, loss_and_residual)
from .predictor import (FitSample, RefitPolicy, ScalarPredictor, StructuredPredictor,
                        fit_scalar, fit_structured, make_fit_sample, should_refit)
from .rng import substream

METRICS_HEADER = ["step", "epoch", "cost_units", "loss", "val_metric",
                  "rho_hat", "kappa_hat", "phi_hat", "refit"]
RUN_CHECKPOINT_FORMAT = 1

LOSS_KINDS = ("squared_scalar", "squared_vector", "cross_entropy")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 32
    control_fraction: float = 0.25
    loss_kind: str | None = None        # None: derived from the dataset kind
    smoothing: float = 0.0
    optimizer: str = "sgd"              # "sgd" | "sgd_momentum"
    learning_rate: float = 0.05
    momentum: float = 0.0
    lr_decay: float = 0.0               # lr_t = lr / (1 + lr_decay * t)
    refit: RefitPolicy = field(default_factory=RefitPolicy)
    cost_model: CostModel = field(default_factory=CostModel)
    budget: float | None = None         # cap on stepping cost units
    max_steps: int | None = None
    seed: int = 0
    warmup: bool = True
    eval_every: int = 1                 # 0 disables validation evaluation

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.control_fraction <= 1.0:
            raise ConfigError(
                f"control_fraction must be in (0,1], got {self.control_fraction}")
        if self.loss_kind is not None and self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing must be in [0,1)")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0,1)")
        if self.lr_decay < 0:
            raise ConfigError("lr_decay must be nonnegative")
        if self.budget is not None and self.budget < 0:
            raise ConfigError("budget must be nonnegative")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be nonnegative")


@dataclass
class BudgetLedger:
    cost_model: CostModel
    forward_count: int = 0
    cheap_forward_count: int = 0
    backward_count: int = 0

    def charge(self, forward: int = 0, cheap_forward: int = 0, backward: int = 0):
        self.forward_count += forward
        self.cheap_forward_count += cheap_forward
        self.backward_count += backward

    @property
    def cost_units(self) -> float:
        cm = self.cost_model
        return (self.forward_count * cm.forward
                + self.cheap_forward_count * cm.cheap_forward
                + self.backward_count * cm.backward)

    def plus(self, other: "BudgetLedger") -> "BudgetLedger":
        return BudgetLedger(self.cost_model,
                            self.forward_count + other.forward_count,
                            self.cheap_forward_count + other.cheap_forward_count,
                            self.backward_count + other.backward_count)


@dataclass
class StepRecord:
    step: int
    epoch: int
    cost_units: float
    loss: float
    val_metric: float
    rho_hat: float          # trunk-only alignment estimate from the control batch
    kappa_hat: float
    phi_hat: float
    refit: int
    rho_hat_full: float = float("nan")  # full-vector variant, not in the CSV

    def csv_row(self):
        return [self.step, self.epoch, repr(float(self.cost_units)),
                repr(float(self.loss)), repr(float(self.val_metric)),
                repr(float(self.rho_hat)), repr(float(self.kappa_hat)),
                repr(float(self.phi_hat)), self.refit]


class PerfectPredictor:
    """Diagnostic predictor that returns the exact backward gradient.

    Used to exercise the algebraic identity G = mean gradient when
    predictions are perfect; cost accounting still charges the predicted
    algorithm's pass structure.
    """

    def predict(self, net: Network, x, y, loss_kind: str, smoothing: float) -> GradientEstimate:
        llh, output, cache = forward(net, x)
        _, residual = loss_and_residual(output, y, loss_kind, smoothing)
        est = backward(net, cache, residual)
        return GradientEstimate(est.trunk_grad, est.head_grad, source="predicted")


def optimizer_step(theta: np.ndarray, g: np.ndarray, state, lr: float, momentum: float):
    """One sgd / sgd-with-momentum update; returns (theta', state')."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape:
        raise DimensionError(f"parameter/gradient shape mismatch "
                             f"{theta.shape} vs {g.shape}")
    if momentum == 0.0 and state is None:
        return theta - lr * g, None
    buf = np.zeros_like(theta) if state is None else state
    buf = momentum * buf + g
    return theta - lr * buf, buf


@dataclass
class TrainState:
    algo: str                       # "vanilla" | "predicted"
    net: Network
    predictor: object | None        # instance, kind string, or None
    opt_state: np.ndarray | None
    buffer: list
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    warmup_done: bool = False
    stepping: BudgetLedger | None = None
    warmup_ledger: BudgetLedger | None = None


@dataclass
class RunResult:
    network: Network
    records: list
    stepping_ledger: BudgetLedger
    warmup_ledger: BudgetLedger
    predictor: object | None
    state: TrainState

    @property
    def ledger(self) -> BudgetLedger:
        """Total compute ledger for the run (stepping plus warmup)."""
        return self.stepping_ledger.plus(self.warmup_ledger)

    @property
    def steps(self) -> int:
        return self.state.step

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else float("nan")


def _resolve_loss_kind(cfg: TrainConfig, ds: Dataset) -> str:
    if cfg.loss_kind is not None:
        kind = cfg.loss_kind
    elif ds.kind == "classification":
        kind = "cross_entropy"
    else:
        kind = "squared_scalar" if ds.targets.shape[1] == 1 else "squared_vector"
    if ds.kind == "classification" and kind != "cross_entropy":
        raise ConfigError("classification data requires the cross_entropy loss")
    if ds.kind == "regression" and kind == "cross_entropy":
        raise ConfigError("cross_entropy needs classification data")
    if kind == "squared_scalar" and ds.kind == "regression" and ds.targets.shape[1] != 1:
        raise ConfigError("squared_scalar needs one-dimensional targets")
    return kind


def _predict_example(predictor, net, x, y, llh, output, loss_kind, smoothing):
    if isinstance(predictor, PerfectPredictor):
        return predictor.predict(net, x, y, loss_kind, smoothing)
    if isinstance(predictor, ScalarPredictor):
        from .predictor import predict_scalar
        return predict_scalar(predictor, llh, float(output[0]),
                              float(np.asarray(y, dtype=np.float64).ravel()[0]))
    if isinstance(predictor, StructuredPredictor):
        from .predictor import predict_structured
        _, residual = loss_and_residual(output, y, loss_kind, smoothing)
        return predict_structured(predictor, llh, residual, net.head_weight)
    raise ConfigError(f"not a usable predictor: {predictor!r}")


def _fit_like(predictor, samples, policy: RefitPolicy):
    """Fit a fresh predictor of the same kind from buffered samples."""
    if isinstance(predictor, PerfectPredictor):
        return predictor
    kind = predictor if isinstance(predictor, str) else (
        "scalar" if isinstance(predictor, ScalarPredictor) else "structured")
    if kind == "perfect":
        return PerfectPredictor()
    if kind == "scalar":
        return fit_scalar(samples, policy.ridge_lambda)
    if kind == "structured":
        return fit_structured(samples, None, policy.ridge_lambda)
    raise ConfigError(f"unknown predictor kind {kind!r}")


def _batch_true(net, ds, batch_idx, loss_kind, smoothing, ledger):
    """Mean true gradient over a batch; scatters per-example flat gradients
    in batch order before reducing."""
    m = len(batch_idx)
    grads = np.empty((m, net.n_params))
    losses = np.empty(m)
    for pos, i in enumerate(batch_idx):
        llh, output, cache = forward(net, ds.features[i])
        loss, residual = loss_and_residual(output, ds.target_for(i), loss_kind, smoothing)
        grads[pos] = backward(net, cache, residual).flat()
        losses[pos] = loss
    ledger.charge(forward=m, backward=m)
    return grads.sum(axis=0) / m, float(losses.sum() / m)


def _batch_predicted(net, predictor, ds, batch_idx, split, loss_kind, smoothing, ledger):
    """Debiased combined gradient over one split mini-batch.

    Returns (G, batch loss, trunk stats, full stats, fit samples). Stats are
    None when the control micro-batch has fewer than 2 examples.
    """
    m = split.m
    grads = np.empty((m, net.n_params))
    losses = np.empty(m)
    ctrl_true = np.empty((split.m_c, net.n_params))
    ctrl_pred = np.empty((split.m_c, net.n_params))
    fit_samples = []

    for k, pos in enumerate(split.control):
        i = batch_idx[pos]
        x, y = ds.features[i], ds.target_for(i)
        llh, output, cache = forward(net, x)
        loss, residual = loss_and_residual(output, y, loss_kind, smoothing)
        est_true = backward(net, cache, residual)
        est_pred = _predict_example(predictor, net, x, y, llh, output,
                                    loss_kind, smoothing)
        g = est_true.flat()
        grads[pos] = g
        losses[pos] = loss
        ctrl_true[k] = g
        ctrl_pred[k] = est_pred.flat()
        fit_samples.append(make_fit_sample(llh, residual, est_true.trunk_grad,
                                           net.head_weight))
    ledger.charge(forward=split.m_c, backward=split.m_c)

    for pos in split.prediction:
        i = batch_idx[pos]
        x, y = ds.features[i], ds.target_for(i)
        llh, output = cheap_forward(net, x)
        loss, residual = loss_and_residual(output, y, loss_kind, smoothing)
        est = _predict_example(predictor, net, x, y, llh, output,
                               loss_kind, smoothing)
        grads[pos] = est.flat()
        losses[pos] = loss
    ledger.charge(cheap_forward=split.m_p)

    s_all = grads.sum(axis=0)
    s_ct = ctrl_true.sum(axis=0)
    s_cp = ctrl_pred.sum(axis=0)
    f_eff = split.m_c / m
    combined = s_all / m - ((1.0 - f_eff) / split.m_c) * (s_cp - s_ct)

    stats_trunk = stats_full = None
    if split.m_c >= 2:
        pt = net.trunk_size
        stats_full = alignment_stats(list(zip(ctrl_true, ctrl_pred)))
        stats_trunk = alignment_stats(
            [(g[:pt], h[:pt]) for g, h in zip(ctrl_true, ctrl_pred)])
    return combined, float(losses.sum() / m), stats_trunk, stats_full, fit_samples


def _eval_val(net, ds, loss_kind, smoothing) -> float:
    if len(ds.val_idx) == 0:
        return float("nan")
    total = 0.0
    for i in ds.val_idx:
        _, output = cheap_forward(net, ds.features[i])
        total += loss_and_residual(output, ds.target_for(i), loss_kind, smoothing)[0]
    return total / len(ds.val_idx)


def _batch_cost(cm: CostModel, m: int, algo: str, f: float) -> float:
    if algo == "vanilla":
        return m * cm.vanilla_per_example
    m_c = control_batch_size(m, f, warn=False)
    return m_c * cm.vanilla_per_example + (m - m_c) * cm.cheap_forward


class _MetricsWriter:
    def __init__(self, path):
        self.path = path
        if path is not None:
            fresh = not os.path.exists(path) or os.path.getsize(path) == 0
            self._fh = open(path, "a", newline="")
            self._csv = csv.writer(self._fh)
            if fresh:
                self._csv.writerow(METRICS_HEADER)
                self._fh.flush()

    def write(self, rec: StepRecord):
        if self.path is not None:
            self._csv.writerow(rec.csv_row())
            self._fh.flush()

    def close(self):
        if self.path is not None:
            self._fh.close()


def _run_warmup(cfg: TrainConfig, ds: Dataset, state: TrainState, loss_kind: str):
    """Process one dedicated full-backward batch to seed the fit buffer and
    fit the predictor; charged to the warmup ledger."""
    m = min(cfg.batch_size, len(ds.train_idx))
    rng = substream(cfg.seed, "warmup")
    chosen = rng.choice(ds.train_idx, size=m, replace=False)
    for i in chosen:
        llh, output, cache = forward(state.net, ds.features[i])
        _, residual = loss_and_residual(output, ds.target_for(i), loss_kind,
                                        cfg.smoothing)
        est = backward(state.net, cache, residual)
        state.buffer.append(make_fit_sample(llh, residual, est.trunk_grad,
                                            state.net.head_weight))
    state.warmup_ledger.charge(forward=m, backward=m)
    del state.buffer[:-cfg.refit.buffer_capacity]
    state.predictor = _fit_like(state.predictor, state.buffer, cfg.refit)
    state.warmup_done = True


def _train_loop(cfg: TrainConfig, ds: Dataset, state: TrainState,
                metrics_path=None) -> RunResult:
    if len(ds.train_idx) == 0:
        raise DataError("dataset has no training examples")
    loss_kind = _resolve_loss_kind(cfg, ds)
    algo = state.algo
    f = cfg.control_fraction
    if algo == "predicted":
        if not 0.0 < f < 1.0:
            raise ConfigError(
                f"predicted training needs 0 < control_fraction < 1, got {f}")
        min_batch = max(2, math.ceil(1.0 / f))
        if cfg.batch_size < min_batch:
            raise ConfigError(
                f"batch_size {cfg.batch_size} too small for control fraction "
                f"{f} (need >= {min_batch})")
        if isinstance(state.predictor, ScalarPredictor) and loss_kind != "squared_scalar":
            raise ConfigError("the scalar predictor requires a scalar squared loss")
    else:
        min_batch = 2

    if (algo == "predicted" and not state.warmup_done
            and not isinstance(state.predictor, PerfectPredictor)):
        if isinstance(state.predictor, str) and state.predictor != "perfect":
            if not cfg.warmup:
                raise ConfigError(
                    "predictor is unfitted and warmup is disabled; pass a "
                    "fitted predictor or enable warmup")
            _run_warmup(cfg, ds, state, loss_kind)
        elif state.predictor == "perfect":
            state.predictor = PerfectPredictor()
            state.warmup_done = True
        else:
            state.warmup_done = True  # caller supplied a fitted predictor
    elif algo == "predicted" and isinstance(state.predictor, str):
        if state.predictor == "perfect":
            state.predictor = PerfectPredictor()

    theta = state.net.flat_params()
    momentum = cfg.momentum if cfg.optimizer == "sgd_momentum" else 0.0
    records = []
    writer = _MetricsWriter(metrics_path)
    fittable = not isinstance(state.predictor, PerfectPredictor)
    n_train = len(ds.train_idx)

    try:
        done = False
        for epoch in range(state.epoch, cfg.epochs):
            state.epoch = epoch
            perm = substream(cfg.seed, f"shuffle:{epoch}").permutation(n_train)
            order = ds.train_idx[perm]
            batches = [order[s:s + cfg.batch_size]
                       for s in range(0, n_train, cfg.batch_size)]
            if len(batches) > 1 and len(batches[-1]) < max(min_batch, 1) \
                    and len(batches[-1]) < cfg.batch_size:
                batches = batches[:-1]
            elif len(batches) == 1 and len(batches[0]) < min_batch and algo == "predicted":
                raise DataError("training set smaller than the minimum batch")

            start = state.batch_in_epoch
            for bi in range(start, len(batches)):
                batch_idx = batches[bi]
                if cfg.max_steps is not None and state.step >= cfg.max_steps:
                    done = True
                    break
                cost = _batch_cost(cfg.cost_model, len(batch_idx), algo, f)
                if cfg.budget is not None and \
                        state.stepping.cost_units + cost > cfg.budget:
                    if state.step == 0:
                        raise BudgetError(
                            f"budget {cfg.budget} is smaller than one batch "
                            f"({cost} cost units)")
                    done = True
                    break
                state.batch_in_epoch = bi

                if algo == "vanilla":
                    grad, batch_loss = _batch_true(
                        state.net, ds, batch_idx, loss_kind, cfg.smoothing,
                        state.stepping)
                    stats_trunk = stats_full = None
                else:
                    split = split_minibatch(
                        len(batch_idx), f, substream(cfg.seed, f"split:{state.step}"))
                    grad, batch_loss, stats_trunk, stats_full, samples = \
                        _batch_predicted(state.net, state.predictor, ds, batch_idx,
                                         split, loss_kind, cfg.smoothing,
                                         state.stepping)
                    state.buffer.extend(samples)
                    del state.buffer[:-cfg.refit.buffer_capacity]

                lr_t = cfg.learning_rate / (1.0 + cfg.lr_decay * state.step)
                theta, state.opt_state = optimizer_step(
                    theta, grad, state.opt_state, lr_t, momentum)
                state.net.set_flat_params(theta)
                state.step += 1
                state.batch_in_epoch = bi + 1

                refit_flag = 0
                if algo == "predicted" and fittable and \
                        should_refit(cfg.refit, state.step):
                    try:
                        state.predictor = _fit_like(state.predictor, state.buffer,
                                                    cfg.refit)
                        refit_flag = 1
                    except InsufficientData:
                        pass  # not enough usable samples yet; keep the old fit

                if cfg.eval_every and state.step % cfg.eval_every == 0:
                    val = _eval_val(state.net, ds, loss_kind, cfg.smoothing)
                else:
                    val = float("nan")

                nan = float("nan")
                if stats_trunk is not None and not stats_trunk.degenerate:
                    f_eff = split.f_effective
                    rec = StepRecord(
                        state.step, epoch, state.stepping.cost_units, batch_loss,
                        val, stats_trunk.rho, stats_trunk.kappa,
                        variance_inflation(f_eff, stats_trunk.rho, stats_trunk.kappa),
                        refit_flag, rho_hat_full=stats_full.rho)
                else:
                    rec = StepRecord(state.step, epoch, state.stepping.cost_units,
                                     batch_loss, val, nan, nan, nan, refit_flag)
                records.append(rec)
                writer.write(rec)
            if done:
                break
            state.batch_in_epoch = 0
        else:
            state.epoch = cfg.epochs
    finally:
        writer.close()

    return RunResult(network=state.net, records=records,
                     stepping_ledger=state.stepping,
                     warmup_ledger=state.warmup_ledger,
                     predictor=state.predictor, state=state)


def _fresh_state(algo: str, cfg: TrainConfig, net: Network, predictor) -> TrainState:
    return TrainState(algo=algo, net=net, predictor=predictor, opt_state=None,
                      buffer=[], stepping=BudgetLedger(cfg.cost_model),
                      warmup_ledger=BudgetLedger(cfg.cost_model))


def train_vanilla(cfg: TrainConfig, ds: Dataset, net: Network,
                  metrics_path=None) -> RunResult:
    """Full-gradient mini-batch training (the baseline loop)."""
    return _train_loop(cfg, ds, _fresh_state("vanilla", cfg, net, None),
                       metrics_path)


def train_predicted(cfg: TrainConfig, ds: Dataset, net: Network, predictor,
                    metrics_path=None) -> RunResult:
    """Predicted-gradient training.

    ``predictor`` is a fitted ScalarPredictor / StructuredPredictor, a
    PerfectPredictor, or one of the kind strings "scalar" / "structured" /
    "perfect"; unfitted kinds are warm-fit from a dedicated warmup batch.
    """
    return _train_loop(cfg, ds, _fresh_state("predicted", cfg, net, predictor),
                       metrics_path)


@dataclass
class ComparisonReport:
    control_fraction: float
    budget: float
    gamma_f: float
    vanilla_steps: int
    predicted_steps: int
    vanilla_final_loss: float
    predicted_final_loss: float
    vanilla_final_val: float
    predicted_final_val: float
    vanilla_cost_units: float
    predicted_cost_units: float
    predicted_warmup_cost_units: float
    rho_hat_trunk_mean: float
    rho_hat_full_mean: float
    kappa_hat_mean: float
    phi_hat_mean: float
    rho_star_measured: float
    break_even_verdict: bool
    vanilla_records: list
    predicted_records: list

    def to_dict(self) -> dict:
        skip = ("vanilla_records", "predicted_records")
        return {k: v for k, v in self.__dict__.items() if k not in skip}


def _nanmean(values) -> float:
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    return float(arr.mean()) if arr.size else float("nan")


def run_budgeted_comparison(cfg: TrainConfig, ds: Dataset, net_cfg: NetworkConfig,
                            predictor="structured",
                            vanilla_metrics_path=None,
                            predicted_metrics_path=None) -> ComparisonReport:
    """Train both algorithms from the same initialization until each exhausts
    the same stepping-cost budget, and report paired outcomes plus the
    measured-alignment break-even verdict."""
    if cfg.budget is None or cfg.budget <= 0:
        raise BudgetError("run_budgeted_comparison requires a positive budget")
    base = init_network(net_cfg)
    batches_per_epoch = max(1, len(ds.train_idx) // cfg.batch_size)
    cheapest = cfg.batch_size * cfg.cost_model.cheap_forward
    epochs_needed = int(cfg.budget // (batches_per_epoch * cheapest)) + 2
    run_cfg = replace(cfg, epochs=max(cfg.epochs, epochs_needed))

    res_v = train_vanilla(run_cfg, ds, base.copy(), vanilla_metrics_path)
    res_p = train_predicted(run_cfg, ds, base.copy(), predictor,
                            predicted_metrics_path)

    rho_trunk = _nanmean([r.rho_hat for r in res_p.records])
    rho_full = _nanmean([r.rho_hat_full for r in res_p.records])
    kappa = _nanmean([r.kappa_hat for r in res_p.records])
    phi = _nanmean([r.phi_hat for r in res_p.records])
    f = cfg.control_fraction
    if math.isnan(rho_trunk) or math.isnan(kappa) or kappa <= 0:
        star = float("nan")
        verdict = False
    else:
        star = rho_star(cfg.cost_model, f, kappa)
        verdict = bool(rho_trunk >= star)

    def final_val(records):
        vals = [r.val_metric for r in records if not math.isnan(r.val_metric)]
        return vals[-1] if vals else float("nan")

    return ComparisonReport(
        control_fraction=f,
        budget=float(cfg.budget),
        gamma_f=gamma(cfg.cost_model, f),
        vanilla_steps=res_v.steps,
        predicted_steps=res_p.steps,
        vanilla_final_loss=res_v.final_loss,
        predicted_final_loss=res_p.final_loss,
        vanilla_final_val=final_val(res_v.records),
        predicted_final_val=final_val(res_p.records),
        vanilla_cost_units=res_v.stepping_ledger.cost_units,
        predicted_cost_units=res_p.stepping_ledger.cost_units,
        predicted_warmup_cost_units=res_p.warmup_ledger.cost_units,
        rho_hat_trunk_mean=rho_trunk,
        rho_hat_full_mean=rho_full,
        kappa_hat_mean=kappa,
        phi_hat_mean=phi,
        rho_star_measured=star,
        break_even_verdict=verdict,
        vanilla_records=res_v.records,
        predicted_records=res_p.records,
    )


# --- run checkpointing -----------------------------------------------------

def _cfg_json(cfg: TrainConfig) -> str:
    d = {
        "epochs": cfg.epochs, "batch_size": cfg.batch_size,
        "control_fraction": cfg.control_fraction, "loss_kind": cfg.loss_kind,
        "smoothing": cfg.smoothing, "optimizer": cfg.optimizer,
        "learning_rate": cfg.learning_rate, "momentum": cfg.momentum,
        "lr_decay": cfg.lr_decay,
        "refit_period": cfg.refit.period,
        "buffer_capacity": cfg.refit.buffer_capacity,
        "ridge_lambda": cfg.refit.ridge_lambda,
        "cost_backward": cfg.cost_model.backward,
        "cost_forward": cfg.cost_model.forward,
        "cost_cheap_forward": cfg.cost_model.cheap_forward,
        "budget": cfg.budget, "max_steps": cfg.max_steps, "seed": cfg.seed,
        "warmup": cfg.warmup, "eval_every": cfg.eval_every,
    }
    return json.dumps(d, sort_keys=True)


def save_run_checkpoint(path, result: RunResult, cfg: TrainConfig) -> None:
    """Bundle network, predictor, optimizer state, fit buffer and loop
    counters; resuming from it reproduces an uninterrupted run bit-exactly
    (all random streams are derived statelessly from the seed and the
    counters stored here)."""
    state = result.state
    net = state.net
    arrays = {
        "trunk_params": net.trunk_params,
        "head_weight": net.head_weight,
        "head_bias": net.head_bias,
        "net_version": np.int64(net.version),
        "counters": np.asarray([state.step, state.epoch, state.batch_in_epoch,
                                int(state.warmup_done)], dtype=np.int64),
        "stepping_counts": np.asarray([state.stepping.forward_count,
                                       state.stepping.cheap_forward_count,
                                       state.stepping.backward_count], dtype=np.int64),
        "warmup_counts": np.asarray([state.warmup_ledger.forward_count,
                                     state.warmup_ledger.cheap_forward_count,
                                     state.warmup_ledger.backward_count], dtype=np.int64),
    }
    if state.opt_state is not None:
        arrays["opt_state"] = state.opt_state

    pred = state.predictor
    if pred is None:
        pred_kind = "none"
    elif isinstance(pred, PerfectPredictor):
        pred_kind = "perfect"
    elif isinstance(pred, str):
        pred_kind = f"unfitted:{pred}"
    elif isinstance(pred, ScalarPredictor):
        pred_kind = "scalar"
        arrays["pred_coef"] = pred.coef
        arrays["pred_meta"] = np.asarray([pred.n_fit, pred.ridge_lambda])
    elif isinstance(pred, StructuredPredictor):
        pred_kind = "structured"
        arrays["pred_basis"] = pred.basis
        arrays["pred_maps"] = pred.maps
        arrays["pred_meta"] = np.asarray([pred.rank, pred.n_fit, pred.ridge_lambda])
    else:
        raise ConfigError(f"cannot checkpoint predictor {pred!r}")

    if state.buffer:
        arrays["buf_llh"] = np.stack([s.llh for s in state.buffer])
        arrays["buf_residual"] = np.stack([s.residual for s in state.buffer])
        arrays["buf_h"] = np.stack([s.h for s in state.buffer])
        arrays["buf_trunk_grad"] = np.stack([s.trunk_grad for s in state.buffer])

    header = json.dumps({
        "format": RUN_CHECKPOINT_FORMAT,
        "algo": state.algo,
        "predictor_kind": pred_kind,
        "cfg": _cfg_json(cfg),
        "net": {
            "input_dim": net.config.input_dim,
            "hidden_widths": list(net.config.hidden_widths),
            "output_dim": net.config.output_dim,
            "activation": net.config.activation,
            "seed": net.config.seed,
        },
    })
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(header.encode("utf-8"), dtype=np.uint8),
                 **arrays)


def load_run_checkpoint(path, cfg: TrainConfig) -> TrainState:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode("utf-8"))
        if header.get("format") != RUN_CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {header.get('format')}")
        if header["cfg"] != _cfg_json(cfg):
            raise ConfigError("checkpoint was written under a different training config")
        ncfg = NetworkConfig(input_dim=header["net"]["input_dim"],
                             hidden_widths=tuple(header["net"]["hidden_widths"]),
                             output_dim=header["net"]["output_dim"],
                             activation=header["net"]["activation"],
                             seed=header["net"]["seed"])
        net = Network(ncfg, z["trunk_params"], z["head_weight"], z["head_bias"],
                      version=int(z["net_version"]))
        step, epoch, batch_in_epoch, warmup_done = (int(v) for v in z["counters"])

        kind = header["predictor_kind"]
        if kind == "none":
            pred = None
        elif kind == "perfect":
            pred = PerfectPredictor()
        elif kind.startswith("unfitted:"):
            pred = kind.split(":", 1)[1]
        elif kind == "scalar":
            n_fit, lam = z["pred_meta"]
            pred = ScalarPredictor(coef=z["pred_coef"], n_fit=int(n_fit),
                                   ridge_lambda=float(lam))
        else:
            rank, n_fit, lam = z["pred_meta"]
            pred = StructuredPredictor(basis=z["pred_basis"], maps=z["pred_maps"],
                                       rank=int(rank), n_fit=int(n_fit),
                                       ridge_lambda=float(lam))

        buffer = []
        if "buf_llh" in z:
            for llh, residual, h, tg in zip(z["buf_llh"], z["buf_residual"],
                                            z["buf_h"], z["buf_trunk_grad"]):
                buffer.append(FitSample(llh=llh.copy(), residual=residual.copy(),
                                        h=h.copy(), trunk_grad=tg.copy()))

        stepping = BudgetLedger(cfg.cost_model, *(int(v) for v in z["stepping_counts"]))
        warmup_ledger = BudgetLedger(cfg.cost_model, *(int(v) for v in z["warmup_counts"]))
        opt_state = z["opt_state"].copy() if "opt_state" in z else None
        return TrainState(algo=header["algo"], net=net, predictor=pred,
                          opt_state=opt_state, buffer=buffer, step=step,
                          epoch=epoch, batch_in_epoch=batch_in_epoch,
                          warmup_done=bool(warmup_done), stepping=stepping,
                          warmup_ledger=warmup_ledger)


def resume_run(cfg: TrainConfig, ds: Dataset, checkpoint_path,
               metrics_path=None) -> RunResult:
    """Continue a checkpointed run; produces the same records the original
    run would have produced from that point."""
    state = load_run_checkpoint(checkpoint_path, cfg)
    return _train_loop(cfg, ds, state, metrics_path)
