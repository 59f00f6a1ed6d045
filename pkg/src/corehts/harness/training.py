"""Full-batch training with early stopping on validation MSE."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import kernels
from ..data import PreparedData
from ..hierarchy import projection_matrix, summing_matrix
from ..losses import GaussianForecast, combined_loss, coherency_bound, gaussian_nll, layer_coherency_terms, profhit_consistency
from ..metrics import MetricsReport, evaluate, gaussian_samples
from ..models import Forecaster, build_model, sample_forecasts
from ..numerics import INFER, TRAIN, AdamState, Graph, adam_step, sgd_step
from .checkpoint import save_checkpoint
from .config import STREAM_EVAL, STREAM_INIT, STREAM_TRAIN, TrainConfig, rng_for

log = logging.getLogger(__name__)

# c(yhat) <= bound is checked with this relative slack plus a roundoff allowance
BOUND_RTOL = 1e-9


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class BoundMonitor:
    """Checks c(yhat_row) <= ||z_row|| ||W - AW||_F + ||b - Ab|| on every forward pass."""

    forward_passes: int = 0
    rows_checked: int = 0
    violations: int = 0
    max_ratio: float = 0.0

    def check(self, model: Forecaster, out, A) -> None:
        layer = model.final_layer
        raw = out.raw.value
        c = np.linalg.norm(raw - raw @ A.entries.T, axis=1)
        bound = coherency_bound(layer, A, out.z.value)
        # floating-point allowance for rows where the bound is ~0
        scale = np.linalg.norm(out.z.value, axis=1) * np.linalg.norm(layer.W.value) + np.linalg.norm(layer.b.value)
        allowance = 64 * np.finfo(float).eps * A.m * scale
        self.forward_passes += 1
        self.rows_checked += c.size
        self.violations += int(np.sum(c > bound * (1 + BOUND_RTOL) + allowance))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bound > 0, c / bound, 0.0)
        self.max_ratio = max(self.max_ratio, float(np.max(ratio, initial=0.0)))


@dataclass
class RunReport:
    config: dict
    config_hash: str
    best_epoch: int
    epochs_run: int
    stop_reason: str
    best_val_mse: float
    curves: dict[str, list[float]]
    test: dict
    bound_check: dict
    final_layer: dict
    kernel_backend: str
    wall_time: float = 0.0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, include_wall_time: bool = True) -> str:
        d = self.to_dict()
        if not include_wall_time:
            d.pop("wall_time")
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    @property
    def test_metrics(self) -> MetricsReport:
        return MetricsReport.from_dict(self.test)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)


@dataclass
class TrainResult:
    report: RunReport
    model: Forecaster
    adam: AdamState | None


def make_model(config: TrainConfig, data: PreparedData) -> Forecaster:
    P = projection_matrix(summing_matrix(data.A)) if config.variant == "projection" else None
    return build_model(config.variant, config.mode, data.A.m, hidden=config.hidden, lag=config.lag,
                       rng=rng_for(config.seed, STREAM_INIT), projection=P,
                       dropout_rate=config.dropout_rate, noise_scale=config.noise_scale)


def training_loss(config: TrainConfig, model: Forecaster, out, y, A, g: Graph):
    if config.variant == "profhit_style":
        f = GaussianForecast(out.yhat, out.sigma)
        nll = gaussian_nll(f, y, g)
        if config.weight == 0:
            return nll
        return g.add_scalars(nll, g.scale(profhit_consistency(f, A, g), config.weight))
    return combined_loss(out.yhat, y, model.final_layer, A, config.effective_weight, config.accuracy, g)


def predict_point(model: Forecaster, X) -> np.ndarray:
    return model.forward(Graph(), X, INFER).yhat.value


def _snapshot(model: Forecaster, adam: AdamState | None):
    a = None if adam is None else AdamState([m.copy() for m in adam.m], [v.copy() for v in adam.v], adam.t)
    return model.state_dict(), a


def train(config: TrainConfig, data: PreparedData, checkpoint_path=None,
          monitor_bound: bool = True) -> TrainResult:
    """Train until validation MSE stalls for ``patience`` epochs, restore the best
    epoch, and evaluate it on the test split."""
    t0 = time.perf_counter()
    if len(data.train) < 2:
        raise ValueError("training split needs at least 2 windows (batchnorm)")
    if len(data.val) == 0 or len(data.test) == 0:
        raise ValueError("empty validation or test split")
    A = data.A
    model = make_model(config, data)
    params = model.parameters
    adam = AdamState.for_params(params) if config.optimizer == "adam" else None
    train_rng = rng_for(config.seed, STREAM_TRAIN)
    monitor = BoundMonitor() if monitor_bound else None

    Xtr, ytr = data.train.inputs, data.train.targets
    Xva, yva = data.val.inputs, data.val.targets
    curves: dict[str, list[float]] = {"train_loss": [], "train_mse": [], "lc": [], "val_mse": []}
    best = (np.inf, -1, None)
    stop_reason = "max_epochs"
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        model.zero_grad()
        g = Graph()
        out = model.forward(g, Xtr, TRAIN, train_rng)
        if monitor is not None:
            monitor.check(model, out, A)
        loss = training_loss(config, model, out, ytr, A, g)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"epoch {epoch}: non-finite training loss ({loss.item()!r})")
        g.backward(loss)
        grads = [p.grad for p in params]
        if adam is not None:
            adam_step(params, grads, adam, config.lr, config.beta1, config.beta2, config.adam_eps)
        else:
            sgd_step(params, grads, config.lr)

        vout = model.forward(Graph(), Xva, INFER)
        if monitor is not None:
            monitor.check(model, vout, A)
        val_mse = float(np.mean((vout.yhat.value - yva) ** 2))
        if not np.isfinite(val_mse):
            raise TrainingDiverged(f"epoch {epoch}: non-finite validation MSE")
        w_term, b_term = layer_coherency_terms(model.final_layer, A)
        curves["train_loss"].append(loss.item())
        curves["train_mse"].append(float(np.mean((out.yhat.value - ytr) ** 2)))
        curves["lc"].append(w_term + b_term)
        curves["val_mse"].append(val_mse)
        if val_mse < best[0]:
            best = (val_mse, epoch, _snapshot(model, adam))
        elif epoch - best[1] >= config.patience:
            stop_reason = "patience"
            break

    best_val, best_epoch, (state, best_adam) = best
    model.load_state_dict(state)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.state_dict(), best_adam, best_epoch, config.to_json(), config.hash)

    test = evaluate_model(model, config, data)
    w_term, b_term = layer_coherency_terms(model.final_layer, A)
    report = RunReport(
        config=config.to_dict(),
        config_hash=config.hash,
        best_epoch=best_epoch,
        epochs_run=epoch,
        stop_reason=stop_reason,
        best_val_mse=best_val,
        curves=curves,
        test=test.to_dict(),
        bound_check=asdict(monitor) if monitor is not None else {},
        final_layer={"w_term": w_term, "b_term": b_term, "lc": w_term + b_term},
        kernel_backend=kernels.BACKEND,
        wall_time=time.perf_counter() - t0,
        notes={
            "validation": "MSE of the deterministic (inference-mode) forecast",
            "seed_streams": "SeedSequence(seed, spawn_key=(stream,)): 0 data, 1 init, 2 train noise, 3 eval sampling",
            "max_epochs": config.max_epochs,
        },
    )
    log.info("%s/%s w=%g seed=%d: best epoch %d of %d, val %.5g, test coherency %.4g",
             config.variant, config.mode, config.weight, config.seed, best_epoch, epoch, best_val,
             test.coherency)
    return TrainResult(report, model, best_adam)


def evaluate_model(model: Forecaster, config: TrainConfig, data: PreparedData, split: str = "test") -> MetricsReport:
    """Test metrics; distributional models are scored on samples, with their
    sample mean as the point forecast."""
    ds = getattr(data, split)
    y = ds.targets.T
    rng = rng_for(config.seed, STREAM_EVAL)
    samples = None
    if config.mode in ("vae", "dropout"):
        draws = sample_forecasts(model, ds.inputs, config.n_samples, rng)  # (n, N, m)
        samples = draws.transpose(0, 2, 1)
        yhat = samples.mean(axis=0)
    elif config.variant == "profhit_style":
        out = model.forward(Graph(), ds.inputs, INFER)
        yhat = out.yhat.value.T
        samples = gaussian_samples(yhat, out.sigma.value.T, config.n_samples, rng)
    else:
        yhat = predict_point(model, ds.inputs).T
    return evaluate(yhat, y, data.spec, data.A, samples=samples, config_hash=config.hash)
