"""Adam training of coordinate networks on sampled signals.

The objective is the mean squared error over every target entry plus
ke_weight times the batch-mean kinetic energy of the latent trajectory
(static models have no trajectory, so the second term is identically
zero).  One loss graph is built per batch shape and replayed with fresh
parameters each step; histories always log full-dataset losses computed
from the parameters as they stand after the logged epoch, so every row
can be recomputed from a checkpoint of that moment.

Batches: when batch_size covers the dataset the visit order is fixed and
no shuffling happens; otherwise each epoch reshuffles with a generator
seeded by config.seed + epoch, making runs bitwise reproducible for any
epoch count.

Wall-clock seconds are recorded in the in-memory history; history_to_csv
writes zeros in the seconds column by default so identical runs produce
identical bytes, and keeps real timings only on request.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Var, add, backward, eval_graph, scale, square, tsum
from .csvio import write_csv
from .data import SignalDataset
from .metrics import MetricRecord, mse as mse_of, psnr, ssim_arrays
from .models import DivergedTrajectoryError, Model, build_forward, dynamical_forward, static_forward
from .rng import Xoshiro256

HISTORY_COLUMNS = ("epoch", "data_loss", "ke_loss", "total_loss", "holdout_mse", "seconds")


class TrainConfigError(ValueError):
    """Raised for invalid optimization settings."""


class NonFiniteLossError(RuntimeError):
    """Raised when a loss component stops being finite; names the component."""

    def __init__(self, component: str, value: float):
        self.component = component
        super().__init__(f"non-finite {component} loss: {value!r}")


class TrainDivergedError(RuntimeError):
    """Raised when training blows up; carries the history collected so far."""

    def __init__(self, epoch: int, cause: Exception, history: "TrainHistory"):
        self.epoch = epoch
        self.cause = cause
        self.history = history
        super().__init__(f"training diverged at epoch {epoch}: {cause}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ke_weight: float = 1.0
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise TrainConfigError(f"epochs must be >= 1, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise TrainConfigError(f"batch_size must be >= 1, got {self.batch_size!r}")
        if not self.lr > 0:
            raise TrainConfigError(f"lr must be > 0, got {self.lr!r}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise TrainConfigError(f"{name} must be in [0, 1), got {b!r}")
        if not self.eps > 0:
            raise TrainConfigError(f"eps must be > 0, got {self.eps!r}")
        if self.ke_weight < 0:
            raise TrainConfigError(f"ke_weight must be >= 0, got {self.ke_weight!r}")
        if not isinstance(self.eval_every, int) or self.eval_every < 1:
            raise TrainConfigError(f"eval_every must be >= 1, got {self.eval_every!r}")


@dataclass
class HistoryRow:
    epoch: int
    data_loss: float
    ke_loss: float
    total_loss: float
    holdout_mse: float | None
    seconds: float


@dataclass
class TrainHistory:
    rows: list[HistoryRow] = field(default_factory=list)

    def epochs_logged(self) -> list[int]:
        return [r.epoch for r in self.rows]


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter blocks."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              config: TrainConfig) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; mutates state, returns fresh params.

    Gradient blocks may arrive flat (as backward emits them); they are
    reshaped against the matching parameter.
    """
    if set(grads) != set(params):
        raise ShapeError(f"gradient blocks {sorted(grads)} != parameter blocks {sorted(params)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.size != p.size:
            raise ShapeError(f"block {k!r}: gradient size {g.size} != parameter size {p.size}")
        g = g.reshape(p.shape)
        state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g
        state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * (g * g)
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        out[k] = p - config.lr * mhat / (np.sqrt(vhat) + config.eps)
    return out


# ---------------------------------------------------------------------------
# loss graphs

def _replay(fg, inputs):
    """eval_graph, tolerating a non-finite terminal value.

    Node values are fully recomputed before eval_graph validates its return,
    so after swallowing that one failure mode the loss components can still
    be read off and classified by the caller.  Shape errors stay fatal.
    """
    try:
        eval_graph(inputs, fg.tape)
    except ShapeError:
        raise
    except ValueError:
        pass


@dataclass
class LossGraph:
    """A forward graph with data/KE/total loss nodes appended to its tape."""

    fg: object
    data_var: Var
    ke_var: Var | None
    total_var: Var

    def run(self, params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray):
        """Replay with fresh values; returns (data, ke, total) after a
        finiteness check that raises NonFiniteLossError naming the bad part."""
        _replay(self.fg, self.fg.leaf_values(params, x) + [y])
        data = float(self.data_var.value)
        ke = float(self.ke_var.value) if self.ke_var is not None else 0.0
        for name, v in (("data", data), ("ke", ke)):
            if not math.isfinite(v):
                raise NonFiniteLossError(name, v)
        return data, ke, float(self.total_var.value)


def build_loss_graph(model: Model, x: np.ndarray, y: np.ndarray, ke_weight: float) -> LossGraph:
    fg = build_forward(model, x)
    n, d = fg.out.shape
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n, d):
        raise ShapeError(f"targets must be {(n, d)}, got {y.shape}")
    y_leaf = fg.tape.leaf(value=y, name="y")
    diff = add(fg.out, scale(y_leaf, -1.0))
    data = scale(tsum(square(diff)), 1.0 / (n * d))
    total = add(data, scale(fg.ke, ke_weight)) if fg.ke is not None else data
    return LossGraph(fg, data, fg.ke, total)


def loss_total(model: Model, batch: SignalDataset, ke_weight: float = 1.0):
    """(total, {"data": ..., "ke": ...}) on one batch; raises on non-finite parts."""
    if batch.n == 0:
        raise ValueError("loss_total needs a nonempty batch")
    lg = build_loss_graph(model, batch.coords.asarray(), batch.targets.asarray(), ke_weight)
    data, ke, total = lg.run(model.params, batch.coords.asarray(), batch.targets.asarray())
    return total, {"data": data, "ke": ke}


# ---------------------------------------------------------------------------
# training loop

def train(model: Model, data: SignalDataset, config: TrainConfig,
          holdout: SignalDataset | None = None):
    """Optimize a copy of the model's parameters; returns (model, history).

    The input model is left untouched.  Raises TrainDivergedError (partial
    history attached) if any loss component or parameter stops being finite
    or a latent trajectory leaves the trust region.
    """
    if data.n == 0:
        raise ValueError("train needs a nonempty dataset")
    x_all = data.coords.asarray()
    y_all = data.targets.asarray()
    n = data.n
    batch = min(config.batch_size, n)
    full_batch = batch == n
    rem = n % batch

    params = {k: v.copy() for k, v in model.params.items()}
    work = Model(model.spec, params, model.frozen)
    try:
        step_graph = build_loss_graph(work, x_all[:batch], y_all[:batch], config.ke_weight)
        log_graph = step_graph if full_batch else build_loss_graph(work, x_all, y_all, config.ke_weight)
        rem_graph = None
        if rem:
            rem_graph = build_loss_graph(work, x_all[:rem], y_all[:rem], config.ke_weight)

        hold = None
        if holdout is not None and holdout.n:
            hx = holdout.coords.asarray()
            hold = (build_forward(work, hx), hx, holdout.targets.asarray())
    except DivergedTrajectoryError as e:
        raise TrainDivergedError(0, e, TrainHistory()) from e

    state = AdamState.for_params(params)
    history = TrainHistory()
    start = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = np.arange(n)
        if not full_batch:
            Xoshiro256(config.seed + epoch).shuffle(order)
        try:
            for lo in range(0, n - rem, batch):
                idx = order[lo:lo + batch]
                _one_step(step_graph, params, state, config, x_all[idx], y_all[idx])
            if rem_graph is not None:
                idx = order[n - rem:]
                _one_step(rem_graph, params, state, config, x_all[idx], y_all[idx])
            if epoch % config.eval_every == 0 or epoch == 1 or epoch == config.epochs:
                data_l, ke_l, total_l = log_graph.run(params, x_all, y_all)
                hm = _holdout_mse(params, hold) if hold is not None else None
                history.rows.append(HistoryRow(epoch, data_l, ke_l, total_l, hm,
                                               time.perf_counter() - start))
        except (DivergedTrajectoryError, NonFiniteLossError) as e:
            raise TrainDivergedError(epoch, e, history) from e

    return work, history


def _one_step(lg: LossGraph, params, state, config, xb, yb):
    lg.run(params, xb, yb)
    gv = backward(lg.fg.tape, lg.total_var)
    new_params = adam_step(state, params, gv.blocks, config)
    params.clear()
    params.update(new_params)


def _holdout_mse(params, hold) -> float:
    fg, hx, hy = hold
    _replay(fg, fg.leaf_values(params, hx))
    v = float(np.mean((fg.out.value - hy) ** 2))
    if not math.isfinite(v):
        raise NonFiniteLossError("holdout", v)
    return v


# ---------------------------------------------------------------------------
# evaluation

def evaluate(model: Model, data: SignalDataset) -> MetricRecord:
    """Full-batch fidelity metrics; SSIM only when the rows tile a full grid."""
    if data.n == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    forward = static_forward if model.spec.mode == "static" else (lambda m, x: dynamical_forward(m, x)[0])
    pred = forward(model, data.coords.asarray())
    target = data.targets.asarray()
    m = mse_of(pred, target)
    s = None
    dims = data.grid_dims
    if dims is not None and len(dims) >= 2 and min(dims) >= 11 and target.shape[1] == 1:
        lo, hi = data.value_range
        s = ssim_arrays(pred[:, 0].reshape(dims), target[:, 0].reshape(dims), hi - lo)
    return MetricRecord(m, psnr(m), s)


# ---------------------------------------------------------------------------
# history export

def history_to_csv(history: TrainHistory, path, timing: bool = False):
    """Fixed-column CSV; seconds are zeroed unless timing is requested, and a
    missing holdout serializes as an empty cell."""
    rows = []
    for r in history.rows:
        rows.append((
            r.epoch,
            r.data_loss,
            r.ke_loss,
            r.total_loss,
            "" if r.holdout_mse is None else r.holdout_mse,
            r.seconds if timing else 0.0,
        ))
    write_csv(path, HISTORY_COLUMNS, rows)
