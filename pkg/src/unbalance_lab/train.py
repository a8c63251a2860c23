"""Training procedures: single-loss descent, the Lagrangian fairness game,
and the adversarial bias-resilient network.

All three shuffle with the same derived stream and initialise parameters
from the same derived seed, so that the documented reductions hold exactly:
fbi with all d = 0 walks the same trajectory as plain cross-entropy, the
Lagrangian trainer with a frozen zero multiplier reduces to standard
training, and the adversarial trainer with delta = 0 reduces to standard
training of the composed trunk + classifier network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DataError
from .evaluation import GroupReport, evaluate
from .losses import LossSpec, elementwise_loss, h_star, peo_batch_loss, soft_group_rates
from .net import (
    LayerSpec,
    NetworkParams,
    NonFiniteError,
    OptimizerState,
    backward,
    backward_features,
    backward_total,
    forward,
    forward_features,
    init_params,
    step,
)
from .seeding import stream

HISTORY_COLUMNS = ["epoch", "train_loss", "lambda", "r2", "underg", "overg"]


@dataclass
class TrainConfig:
    loss: LossSpec
    epochs: int = 30
    batch_size: int = 128
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    seed: int = 0
    early_stop: tuple[int, str] | None = None  # (patience, "min_group"|"train_loss")

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise DataError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class ValidationContext:
    """Hold-out set evaluated after every epoch."""

    dataset: Dataset
    mode: str
    minority: int | None = None
    threshold: float = 0.5

    def report(self, p: np.ndarray) -> GroupReport:
        return evaluate(self.dataset, p, self.mode, self.minority, self.threshold)


@dataclass
class TrainResult:
    params: "NetworkParams | BrnnParams"
    history: list[dict]
    final_lambda: float | None = None
    lambda_min: float | None = None
    constraint_skips: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        if isinstance(self.params, BrnnParams):
            return self.params.predict(X)
        return forward(self.params, X).p


def history_to_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for rec in history:
            cells = []
            for col in HISTORY_COLUMNS:
                v = rec.get(col)
                if v is None:
                    cells.append("")
                elif col == "epoch":
                    cells.append(str(v))
                else:
                    cells.append(repr(float(v)))
            fh.write(",".join(cells) + "\n")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _epoch_record(epoch, train_loss, validation, predict_fn, lam=None, r2=None) -> dict:
    rec = {"epoch": epoch, "train_loss": train_loss, "lambda": lam, "r2": r2,
           "underg": None, "overg": None}
    if validation is not None:
        report = validation.report(predict_fn(validation.dataset.X))
        rec["underg"] = report.underg_metric
        rec["overg"] = report.overg_metric
    return rec


def _early_stop_metric(rec: dict, kind: str) -> float:
    if kind == "train_loss":
        return -rec["train_loss"]  # larger is better, uniformly
    if kind == "min_group":
        if rec["underg"] is None:
            raise DataError("min_group early stopping needs a validation context")
        return min(rec["underg"], rec["overg"])
    raise DataError(f"unknown early-stop metric {kind!r}")


def _stop_now(history: list[dict], early_stop) -> bool:
    if early_stop is None:
        return False
    patience, kind = early_stop
    scores = [_early_stop_metric(rec, kind) for rec in history]
    best = int(np.argmax(scores))
    return len(scores) - 1 - best >= patience


def train_standard(
    spec: LayerSpec,
    dataset: Dataset,
    config: TrainConfig,
    validation: ValidationContext | None = None,
) -> TrainResult:
    """Minimise one loss with mini-batch steps; deterministic given the seed."""
    loss = config.loss
    if len(dataset) == 0:
        raise DataError("empty training set")
    if loss.needs_z and dataset.z is None:
        raise DataError(f"loss {loss.kind!r} requires the confounder column z")
    if loss.is_batchwise and config.batch_size < 2:
        raise DataError(f"loss {loss.kind!r} needs batch statistics: batch_size >= 2")
    params = init_params(spec, config.seed)
    state = config.optimizer.fresh()
    rng = stream(config.seed, "shuffle")
    history: list[dict] = []
    skips = 0
    for epoch in range(config.epochs):
        batch_losses = []
        for idx in _batches(len(dataset), config.batch_size, rng):
            trace = forward(params, dataset.X[idx])
            if loss.is_batchwise:
                res = peo_batch_loss(dataset.y[idx], dataset.z[idx], trace.p,
                                     loss.lam, loss.epsilon)
                if res.cpeo is None:
                    skips += 1
                batch_loss = res.loss
                grads, _ = backward_total(trace, res.dloss_dp)
            else:
                lvec, gvec = elementwise_loss(loss, dataset.y[idx], trace.p, dataset.d[idx])
                batch_loss = float(lvec.mean())
                grads = backward(trace, gvec)
            if not np.isfinite(batch_loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch start {len(batch_losses)}")
            params, state = step(params, grads, state)
            batch_losses.append(batch_loss)
        history.append(_epoch_record(epoch, float(np.mean(batch_losses)), validation,
                                     lambda X: forward(params, X).p))
        if _stop_now(history, config.early_stop):
            break
    return TrainResult(params, history, constraint_skips=skips)


# ---------------------------------------------------------------------------
# Lagrangian fairness optimisation


@dataclass
class LfoConfig:
    lr_model: float = 1e-3
    lr_lambda: float = 1e-3
    epsilon: float = 0.05
    lambda_init: float = 0.0

    def __post_init__(self):
        if self.lr_model <= 0 or self.lr_lambda < 0:
            raise DataError("lr_model must be positive and lr_lambda nonnegative")
        if self.epsilon < 0 or self.lambda_init < 0:
            raise DataError("epsilon and lambda_init must be nonnegative")


def train_lfo(
    spec: LayerSpec,
    dataset: Dataset,
    config: TrainConfig,
    lfo: LfoConfig,
    validation: ValidationContext | None = None,
) -> TrainResult:
    """Two-player game: the model descends H* + lambda * (C_PEO - eps) while
    the multiplier does projected ascent on the same batch constraint."""
    if dataset.z is None:
        raise DataError("the Lagrangian fairness trainer requires the confounder column z")
    if config.batch_size < 2:
        raise DataError("constraint statistics need batch_size >= 2")
    params = init_params(spec, config.seed)
    state = config.optimizer.fresh()
    state.learning_rate = lfo.lr_model
    rng = stream(config.seed, "shuffle")
    lam = lfo.lambda_init
    lam_min = lam
    history: list[dict] = []
    skips = 0
    for epoch in range(config.epochs):
        batch_losses = []
        for idx in _batches(len(dataset), config.batch_size, rng):
            trace = forward(params, dataset.X[idx])
            h, dh = h_star(dataset.y[idx], trace.p)
            grad_p = dh / len(idx)
            rates = soft_group_rates(dataset.y[idx], dataset.z[idx], trace.p)
            if rates is None:
                skips += 1
            else:
                # the multiplier derivative carries no constraint gradient
                grad_p = grad_p + lam * rates.dcpeo_dp
            batch_loss = float(h.mean())
            if not np.isfinite(batch_loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}")
            grads, _ = backward_total(trace, grad_p)
            params, state = step(params, grads, state)
            if rates is not None:
                lam = max(0.0, lam + lfo.lr_lambda * (rates.cpeo - lfo.epsilon))
                lam_min = min(lam_min, lam)
            batch_losses.append(batch_loss)
        history.append(_epoch_record(epoch, float(np.mean(batch_losses)), validation,
                                     lambda X: forward(params, X).p, lam=lam))
        if _stop_now(history, config.early_stop):
            break
    return TrainResult(params, history, final_lambda=lam, lambda_min=lam_min,
                       constraint_skips=skips)


# ---------------------------------------------------------------------------
# adversarial bias-resilient network


@dataclass(frozen=True)
class BrnnSpec:
    """Feature-extractor trunk plus classifier and confounder heads.

    The trunk's final layer takes the hidden activation (it emits features,
    not probabilities); both heads end in a sigmoid unit.
    """

    trunk: LayerSpec
    classifier_head: LayerSpec
    confounder_head: LayerSpec
    delta: float = 0.0

    def __post_init__(self):
        for name, head in (("classifier", self.classifier_head), ("confounder", self.confounder_head)):
            if head.input_width != self.trunk.output_width:
                raise DataError(
                    f"{name} head input width {head.input_width} != trunk output "
                    f"width {self.trunk.output_width}"
                )
            if head.output_width != 1:
                raise DataError(f"{name} head must end in a single sigmoid unit")
        if self.delta < 0:
            raise DataError("delta must be nonnegative")

    @staticmethod
    def from_classifier(spec: LayerSpec, delta: float) -> "BrnnSpec":
        """Split a classifier after its last hidden layer."""
        if not spec.hidden_widths:
            raise DataError("the adversarial trainer needs at least one hidden layer")
        trunk = LayerSpec(spec.input_width, spec.hidden_widths[:-1],
                          spec.hidden_widths[-1], spec.hidden_activation)
        head = LayerSpec(spec.hidden_widths[-1], (), 1, spec.hidden_activation)
        return BrnnSpec(trunk=trunk, classifier_head=head, confounder_head=head, delta=delta)

    def composed(self) -> LayerSpec:
        return LayerSpec(
            self.trunk.input_width,
            (*self.trunk.hidden_widths, self.trunk.output_width, *self.classifier_head.hidden_widths),
            1,
            self.trunk.hidden_activation,
        )


@dataclass
class BrnnParams:
    spec: BrnnSpec
    trunk: NetworkParams
    classifier_head: NetworkParams
    confounder_head: NetworkParams

    def predict(self, X: np.ndarray) -> np.ndarray:
        feats = forward_features(self.trunk, X).acts[-1]
        return forward(self.classifier_head, feats).p


def pearson_r2(z: np.ndarray, zhat: np.ndarray):
    """Squared Pearson correlation and its gradient w.r.t. zhat.

    Returns (0.0, None) when either argument has zero batch variance.
    """
    z = np.asarray(z, dtype=np.float64)
    zhat = np.asarray(zhat, dtype=np.float64)
    a = z - z.mean()
    b = zhat - zhat.mean()
    saa = float(a @ a)
    sbb = float(b @ b)
    if saa <= 1e-24 or sbb <= 1e-24:
        return 0.0, None
    sab = float(a @ b)
    r2 = sab * sab / (saa * sbb)
    grad = (2.0 * sab / (saa * sbb)) * (a - (sab / sbb) * b)
    return r2, grad


def _split_composed(full: NetworkParams, spec: BrnnSpec) -> tuple[NetworkParams, NetworkParams]:
    cut = spec.trunk.n_layers()
    trunk = NetworkParams(spec.trunk, full.weights[:cut], full.biases[:cut])
    head = NetworkParams(spec.classifier_head, full.weights[cut:], full.biases[cut:])
    return trunk, head


def compose_params(brnn: BrnnParams) -> NetworkParams:
    """Trunk plus classifier head as one standard classifier network."""
    return NetworkParams(
        brnn.spec.composed(),
        [*brnn.trunk.weights, *brnn.classifier_head.weights],
        [*brnn.trunk.biases, *brnn.classifier_head.biases],
    )


def train_brnn(
    brnn: BrnnSpec,
    dataset: Dataset,
    config: TrainConfig,
    validation: ValidationContext | None = None,
) -> TrainResult:
    """Adversarial training: the confounder head maximises the batch r²
    between z and its prediction, the classifier head minimises H*, and the
    trunk minimises H* - delta * r² through the frozen confounder head."""
    if dataset.z is None:
        raise DataError("the adversarial trainer requires the confounder column z")
    if config.batch_size < 8:
        raise DataError("batch correlation needs batch_size >= 8")
    full = init_params(brnn.composed(), config.seed)
    trunk, clf = _split_composed(full, brnn)
    conf = _init_confounder(brnn.confounder_head, config.seed)
    st_trunk = config.optimizer.fresh()
    st_clf = config.optimizer.fresh()
    st_conf = config.optimizer.fresh()
    rng = stream(config.seed, "shuffle")
    history: list[dict] = []
    for epoch in range(config.epochs):
        batch_losses, batch_r2 = [], []
        for idx in _batches(len(dataset), config.batch_size, rng):
            zb = dataset.z[idx].astype(np.float64)
            tr_trace = forward_features(trunk, dataset.X[idx])
            feats = tr_trace.acts[-1]
            # adversary step: ascend r2 through the head parameters only
            conf_trace = forward(conf, feats)
            r2, dr2 = pearson_r2(zb, conf_trace.p)
            if dr2 is not None:
                conf_grads, _ = backward_total(conf_trace, -dr2)
                conf, st_conf = step(conf, conf_grads, st_conf)
            # classifier and trunk steps from the same start-of-batch forward
            clf_trace = forward(clf, feats)
            h, dh = h_star(dataset.y[idx], clf_trace.p)
            clf_grads, dfeat = backward_total(clf_trace, dh / len(idx))
            if brnn.delta > 0:
                conf_trace2 = forward(conf, feats)
                r2_new, dr2_new = pearson_r2(zb, conf_trace2.p)
                if dr2_new is not None:
                    _, dfeat_r2 = backward_total(conf_trace2, dr2_new)
                    dfeat = dfeat - brnn.delta * dfeat_r2
                r2 = r2_new
            batch_loss = float(h.mean())
            if not np.isfinite(batch_loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}")
            trunk_grads, _ = backward_features(tr_trace, dfeat)
            clf, st_clf = step(clf, clf_grads, st_clf)
            trunk, st_trunk = step(trunk, trunk_grads, st_trunk)
            batch_losses.append(batch_loss)
            batch_r2.append(r2)
        params = BrnnParams(brnn, trunk, clf, conf)
        history.append(_epoch_record(epoch, float(np.mean(batch_losses)), validation,
                                     params.predict, r2=float(np.mean(batch_r2))))
        if _stop_now(history, config.early_stop):
            break
    return TrainResult(BrnnParams(brnn, trunk, clf, conf), history)


def _init_confounder(head: LayerSpec, seed: int) -> NetworkParams:
    rng = stream(seed, "brnn-confounder")
    weights, biases = [], []
    widths = head.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(head, weights, biases)
