"""Objectives and training loops for flow-based and baseline spectral models.

The flow is trained so that its forward observables evolve linearly under a
per-trajectory rank-r spectral fit (linearity loss) while the inverse of the
spectral predictions lands back on the true states (reconstruction loss).
The spectral factors are refit from the current observables on every visit
but treated as constants during backpropagation; gradients flow through the
observables themselves and through the inverse map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import no_grad, value_of
from .dmd import DMDModel, SnapshotPair, fit_dmd
from .errors import ConfigError, TrainingDivergenceError
from .flows import FlowNetwork, build_flow
from .nncore import Adam, Fnn, PlateauScheduler, xavier_init
from .systems import Dataset, Trajectory


@dataclass
class FlowDmdConfig:
    """Network shape, loss weight, spectral rank, and optimizer settings."""

    m: int
    depth: int = 3
    kind: str = "affine"
    hidden: tuple = (8,)
    q: int | None = None
    alpha: float = 1.0
    rank: int = 2
    lr: float = 1e-3
    max_epochs: int = 3000
    early_stop: int = 200
    scheduler_factor: float = 0.5
    scheduler_patience: int = 10
    min_lr: float = 1e-6
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"loss weight must be non-negative, got {self.alpha}")
        if self.rank < 1:
            raise ConfigError(f"rank must be positive, got {self.rank}")
        if self.depth < 1:
            raise ConfigError(f"depth must be positive, got {self.depth}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be positive, got {self.max_epochs}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def build(self) -> FlowNetwork:
        return build_flow(
            self.m, self.depth, kind=self.kind, hidden=self.hidden,
            q=self.q, seed=self.seed, activation=self.activation,
        )


def _fit_observable_model(g_values: np.ndarray, rank: int) -> DMDModel:
    return fit_dmd(SnapshotPair(g_values[:-1].T, g_values[1:].T), rank)


def _losses(flow: FlowNetwork, traj: Trajectory, rank: int, model=None,
            want_rec=True):
    """Linearity and reconstruction losses for one trajectory.

    Fits the spectral surrogate from the current observables unless a model
    is supplied (the supplied-model path is what finite-difference checks
    use, since refitting inside a perturbed evaluation would differentiate
    through the factorization).
    """
    states = traj.states
    steps = states.shape[0] - 1
    observables = flow.forward(states)
    if model is None:
        model = _fit_observable_model(value_of(observables), rank)
    factors = model.operator_powers(steps)            # (T, n, n) constants
    g0 = ad.reshape(ad.row_slice(observables, 0, 1), (-1,))
    predicted = ad.stacked_matvec(factors, g0)        # (T, n)
    lin = ad.ssq(ad.sub(ad.row_slice(observables, 1, steps + 1), predicted))
    rec = None
    if want_rec:
        reconstructed = flow.inverse(predicted)
        rec = ad.ssq(ad.sub(states[1:], reconstructed))
    return lin, rec, model


def linearity_loss(flow: FlowNetwork, traj: Trajectory, rank: int, model=None):
    """Sum over t >= 1 of the squared gap between the observables and their
    spectral predictions. Returns (loss, fitted model)."""
    if traj.states.shape[0] < rank + 1:
        raise ConfigError(
            f"need at least rank+1 = {rank + 1} snapshots, got {traj.states.shape[0]}"
        )
    lin, _, model = _losses(flow, traj, rank, model=model, want_rec=False)
    return lin, model

def reconstruction_loss(flow: FlowNetwork, traj: Trajectory, model: DMDModel):
    """Sum over t >= 1 of the squared gap between the true states and the
    inverse map applied to the spectral predictions."""
    _, rec, _ = _losses(flow, traj, rank=model.rank, model=model, want_rec=True)
    return rec


def trajectory_losses(flow: FlowNetwork, traj: Trajectory, rank: int, model=None):
    """Both losses from one shared forward pass. Returns (lin, rec, model)."""
    return _losses(flow, traj, rank, model=model, want_rec=True)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    epoch: int
    params: list
    adam: dict
    scheduler: dict
    best_val: float
    best_epoch: int
    best_params: list
    stall: int
    history: list


@dataclass
class TrainedModel:
    """Best-validation flow plus the spectral cache and training history."""

    flow: FlowNetwork
    config: FlowDmdConfig
    history: list
    best_epoch: int
    best_val: float
    train_models: list
    state: TrainState | None = None


HISTORY_COLUMNS = ("epoch", "l_linear", "l_rec", "total", "val_total", "lr")


def _snapshot(params):
    return [p.value.copy() for p in params]


def _restore(params, values):
    for p, v in zip(params, values):
        p.value[...] = v


def _validation_total(flow, trajectories, config):
    with no_grad():
        totals = []
        for traj in trajectories:
            lin, rec, _ = _losses(flow, traj, config.rank)
            totals.append(float(lin) + config.alpha * float(rec))
    return float(np.mean(totals))


def train_flowdmd(config: FlowDmdConfig, dataset: Dataset,
                  resume: TrainState | None = None,
                  log_every: int = 0) -> TrainedModel:
    """Train a coupling flow on the dataset's training trajectories.

    Every epoch walks the training list in order, refits the per-trajectory
    spectral surrogate from the current observables, and takes one Adam step
    on linearity + alpha * reconstruction. Mean validation total drives the
    plateau scheduler and early stopping; the returned flow carries the
    best-validation parameters. Runs are deterministic given the seed, and a
    ``resume`` state continues bit-exactly.
    """
    if not dataset.train:
        raise ConfigError("training split is empty")
    if dataset.train[0].m != config.m:
        raise ConfigError(
            f"config dimension {config.m} != data dimension {dataset.train[0].m}"
        )
    flow = config.build()
    params = flow.parameters()
    optimizer = Adam(params, lr=config.lr)
    scheduler = PlateauScheduler(
        config.lr, factor=config.scheduler_factor,
        patience=config.scheduler_patience, min_lr=config.min_lr,
    )
    history: list = []
    best_val = np.inf
    best_epoch = -1
    best_params = _snapshot(params)
    stall = 0
    start_epoch = 0
    if resume is not None:
        _restore(params, resume.params)
        optimizer.load_state_arrays(resume.adam)
        scheduler.load_state(resume.scheduler)
        best_val = resume.best_val
        best_epoch = resume.best_epoch
        best_params = [np.array(v, copy=True) for v in resume.best_params]
        stall = resume.stall
        start_epoch = resume.epoch
        history = list(resume.history)

    val_set = dataset.val if dataset.val else dataset.train
    alpha = config.alpha

    for epoch in range(start_epoch, config.max_epochs):
        lin_sum = 0.0
        rec_sum = 0.0
        epoch_lr = scheduler.lr
        for traj in dataset.train:
            flow.zero_grad()
            lin, rec, _ = _losses(flow, traj, config.rank)
            total = ad.add(lin, ad.scale(rec, alpha)) if alpha > 0 else lin
            total_value = float(total)
            if not np.isfinite(total_value):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            ad.backward(total)
            optimizer.lr = epoch_lr
            optimizer.step()
            lin_sum += float(lin)
            rec_sum += float(rec)
        n_train = len(dataset.train)
        lin_mean = lin_sum / n_train
        rec_mean = rec_sum / n_train
        val_total = _validation_total(flow, val_set, config)
        if not np.isfinite(val_total):
            raise TrainingDivergenceError(f"non-finite validation loss at epoch {epoch}")
        scheduler.step(val_total)
        history.append((epoch, lin_mean, rec_mean, lin_mean + alpha * rec_mean,
                        val_total, epoch_lr))
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch}: train {lin_mean + alpha * rec_mean:.6e} "
                  f"val {val_total:.6e} lr {epoch_lr:.2e}")
        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            best_params = _snapshot(params)
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop:
                break

    state = TrainState(
        epoch=history[-1][0] + 1 if history else start_epoch,
        params=_snapshot(params),
        adam=optimizer.state_arrays(),
        scheduler=scheduler.state(),
        best_val=float(best_val),
        best_epoch=int(best_epoch),
        best_params=[v.copy() for v in best_params],
        stall=stall,
        history=list(history),
    )
    _restore(params, best_params)
    with no_grad():
        train_models = [
            _fit_observable_model(value_of(flow.forward(t.states)), config.rank)
            for t in dataset.train
        ]
    return TrainedModel(
        flow=flow, config=config, history=history,
        best_epoch=int(best_epoch), best_val=float(best_val),
        train_models=train_models, state=state,
    )


def reconstruct_with_flow(flow: FlowNetwork, traj: Trajectory, rank: int) -> np.ndarray:
    """Reconstruct a trajectory through the trained observables.

    Maps the states forward, fits the rank-r surrogate to that observable
    sequence, and pulls the spectral predictions back through the inverse.
    Returns a (T+1, m) array aligned with ``traj.states``.
    """
    with no_grad():
        observables = value_of(flow.forward(traj.states))
        model = _fit_observable_model(observables, rank)
        predicted = model.predict_series(traj.T)
        return value_of(flow.inverse(predicted))


def exact_dmd_baseline(trajectories, rank: int):
    """Rank-r spectral fit directly on raw states, one model per trajectory.

    Returns (reconstructions, models); reconstruction row k is the step-k
    prediction, so this is the identity-observable special case.
    """
    recons = []
    models = []
    for traj in trajectories:
        model = fit_dmd(SnapshotPair.from_states(traj.states), rank)
        models.append(model)
        recons.append(model.predict_series(traj.T))
    return recons, models


@dataclass
class AutoencoderDemo:
    """Trained encoder/decoder pair plus reconstruction statistics."""

    encoder: Fnn
    decoder: Fnn
    report: dict


def _mean_row_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def _ood_sets(rng: np.random.Generator, n_points: int = 400):
    """Planar probe sets far from the attractor's positive-quadrant data."""
    xs = np.linspace(-2 * np.pi, 2 * np.pi, n_points)
    sin_curve = np.column_stack([xs, np.sin(xs)])
    ts = np.linspace(-3.0, 3.0, n_points)
    s_curve = np.column_stack([2.0 * np.sin(ts), ts])
    normal_scatter = rng.standard_normal((n_points, 2))
    return {"sin_curve": sin_curve, "s_curve": s_curve,
            "normal_scatter": normal_scatter}


def train_ae_baseline(encoder_dims, decoder_dims, dataset: Dataset, seed: int,
                      epochs: int = 6000, lr: float = 1e-3) -> AutoencoderDemo:
    """Train a plain reconstruction autoencoder on pooled snapshots.

    Minimizes the mean squared error between states and their decoded
    encodings, full batch. The report compares held-out reconstruction
    against out-of-distribution probe sets and measures the latent
    round-trip gap (encode after decode at random latents), which a
    bottleneck pair trained only on one direction does not control.
    """
    encoder_dims = [int(d) for d in encoder_dims]
    decoder_dims = [int(d) for d in decoder_dims]
    if encoder_dims[-1] != decoder_dims[0]:
        raise ConfigError(
            f"latent widths differ: encoder ends at {encoder_dims[-1]}, "
            f"decoder starts at {decoder_dims[0]}"
        )
    if encoder_dims[0] != decoder_dims[-1]:
        raise ConfigError("decoder output width must match encoder input width")
    rng = np.random.default_rng(seed)
    encoder = xavier_init(encoder_dims, seed=rng)
    decoder = xavier_init(decoder_dims, seed=rng)
    train_states = np.vstack([t.states for t in dataset.train])
    holdout_states = np.vstack([t.states for t in (dataset.val or dataset.train)])

    params = encoder.parameters() + decoder.parameters()
    optimizer = Adam(params, lr=lr)
    scheduler = PlateauScheduler(lr)
    inv_size = 1.0 / train_states.size
    for epoch in range(epochs):
        for p in params:
            p.grad = None
        decoded = decoder.forward(encoder.forward(train_states))
        loss = ad.scale(ad.ssq(ad.sub(decoded, train_states)), inv_size)
        loss_value = float(loss)
        if not np.isfinite(loss_value):
            raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
        ad.backward(loss)
        optimizer.lr = scheduler.lr
        optimizer.step()
        scheduler.step(loss_value)

    def roundtrip(points):
        with no_grad():
            return value_of(decoder.forward(encoder.forward(points)))

    report = {
        "train_reconstruction": _mean_row_distance(roundtrip(train_states), train_states),
        "holdout_reconstruction": _mean_row_distance(roundtrip(holdout_states), holdout_states),
        "final_loss": float(loss_value),
    }
    if encoder_dims[0] == 2:
        for name, points in _ood_sets(rng).items():
            report[f"ood_{name}"] = _mean_row_distance(roundtrip(points), points)
    latent = rng.standard_normal((400, encoder_dims[-1]))
    with no_grad():
        latent_back = value_of(encoder.forward(decoder.forward(latent)))
    report["latent_roundtrip"] = _mean_row_distance(latent_back, latent)
    return AutoencoderDemo(encoder=encoder, decoder=decoder, report=report)
