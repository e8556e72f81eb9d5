"""Benchmark dynamical systems and dataset assembly.

Three data generators: a quadratically coupled two-state map with a fixed
point at the origin, a viscous Burgers solver with homogeneous Dirichlet
boundaries, and a bistable reaction-diffusion solver on a periodic grid.
Both PDE solvers use second-order central differences in space and implicit
Euler in time, solved per step by damped Newton.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DeserializationError, NumericError, SolverError

SYSTEMS = ("fixed_point", "burgers", "allen_cahn")

BURGERS_VISCOSITY = 0.01 / np.pi

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 12

DATASET_HEADER = "flowdmd-dataset v1"


@dataclass
class Trajectory:
    """Time-ordered states from one initial condition.

    ``states`` has shape (T+1, m) with row k holding the step-k state;
    ``dt`` is seconds per step (1 for the discrete map); ``params`` records
    the sampled inputs that produced the trajectory.
    """

    states: np.ndarray
    dt: float
    system: str
    params: dict = field(default_factory=dict)
    sample_id: int = -1

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ConfigError("states must be (T+1, m) with T >= 1")
        if not np.isfinite(self.states).all():
            raise NumericError("non-finite trajectory states")
        self.dt = float(self.dt)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def m(self) -> int:
        return self.states.shape[1]


@dataclass
class Dataset:
    """Disjoint train/validation/test trajectory lists from one seed."""

    train: list
    val: list
    test: list
    seed: int
    fractions: tuple = (0.6, 0.2, 0.2)
    system: str = ""

    @property
    def n(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)

    def splits(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def simulate_fixed_point(x0, steps: int = 60, lam: float = 0.9,
                         mu: float = 0.5) -> Trajectory:
    """Two-state map with a linear first coordinate and a quadratically
    forced second coordinate.

    The combination x2 - x1^2 contracts geometrically at rate ``mu``, which
    makes the map a standard testbed for learned linearizations.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (2,):
        raise ConfigError(f"initial state must have shape (2,), got {x0.shape}")
    steps = int(steps)
    if steps < 1:
        raise ConfigError(f"steps must be at least 1, got {steps}")
    states = np.empty((steps + 1, 2))
    states[0] = x0
    for t in range(steps):
        x1, x2 = states[t]
        states[t + 1, 0] = lam * x1
        states[t + 1, 1] = mu * x2 + (lam**2 - mu) * x1**2
    return Trajectory(
        states, dt=1.0, system="fixed_point",
        params={"x0_1": float(x0[0]), "x0_2": float(x0[1]),
                "lam": float(lam), "mu": float(mu)},
    )


def _newton_step(u_prev, dt, rhs, jac, step_index):
    """One implicit Euler step: solve w = u_prev + dt*rhs(w) by damped Newton."""
    w = u_prev.copy()
    residual = w - u_prev - dt * rhs(w)
    res_norm = np.abs(residual).max()
    eye = np.eye(u_prev.size)
    for _ in range(NEWTON_MAX_ITER):
        if res_norm < NEWTON_TOL:
            return w
        jacobian = eye - dt * jac(w)
        delta = np.linalg.solve(jacobian, -residual)
        step = 1.0
        for _ in range(NEWTON_MAX_HALVINGS):
            w_new = w + step * delta
            residual_new = w_new - u_prev - dt * rhs(w_new)
            res_new = np.abs(residual_new).max()
            if res_new < res_norm:
                break
            step *= 0.5
        else:
            raise SolverError(f"newton stalled at time step {step_index}")
        w, residual, res_norm = w_new, residual_new, res_new
    if res_norm < NEWTON_TOL:
        return w
    raise SolverError(
        f"newton did not converge at time step {step_index} "
        f"(residual {res_norm:.3e})"
    )


def _implicit_euler(u0, n_steps, dt, rhs, jac):
    states = np.empty((n_steps + 1, u0.size))
    states[0] = u0
    u = u0.copy()
    for k in range(n_steps):
        u = _newton_step(u, dt, rhs, jac, step_index=k)
        states[k + 1] = u
    return states


def _step_count(t_end, dt):
    n = round(t_end / dt)
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ConfigError(f"t_end {t_end} is not a positive multiple of dt {dt}")
    return n


def solve_burgers(xi, nx: int = 30, dt: float = 0.01, t_end: float = 1.0,
                  viscosity: float = BURGERS_VISCOSITY) -> Trajectory:
    """Viscous Burgers flow from a scaled negative sine profile.

    The state holds the ``nx`` interior values of an equidistant grid on
    (-1, 1); both boundary values are pinned to zero and excluded from the
    state vector. The advection term uses the skew-symmetric central split
    (u u_x = (u Du + D(u^2)) / 3), which contributes exactly zero to the
    discrete energy; the plain non-conservative central stencil is
    nonlinearly unstable once the front steepens beyond this grid's
    resolution.
    """
    xi = float(xi)
    if not np.isfinite(xi):
        raise NumericError("initial amplitude must be finite")
    if nx < 4:
        raise ConfigError(f"need at least 4 grid points, got {nx}")
    h = 2.0 / (nx + 1)
    x = -1.0 + h * np.arange(1, nx + 1)
    u0 = -xi * np.sin(np.pi * x)
    inv_h2 = 1.0 / h**2
    inv_2h = 1.0 / (2.0 * h)

    def padded(u):
        up = np.empty(u.size + 2)
        up[0] = up[-1] = 0.0
        up[1:-1] = u
        return up

    def central(up):
        return (up[2:] - up[:-2]) * inv_2h

    def rhs(u):
        up = padded(u)
        diffusion = (up[2:] - 2.0 * u + up[:-2]) * inv_h2
        advection = (u * central(up) + central(padded(u * u))) / 3.0
        return viscosity * diffusion - advection

    def jac(u):
        up = padded(u)
        J = np.zeros((nx, nx))
        main = -2.0 * viscosity * inv_h2 - central(up) / 3.0
        np.fill_diagonal(J, main)
        idx = np.arange(nx - 1)
        J[idx + 1, idx] = viscosity * inv_h2 + (u[1:] + 2.0 * u[:-1]) * inv_2h / 3.0
        J[idx, idx + 1] = viscosity * inv_h2 - (u[:-1] + 2.0 * u[1:]) * inv_2h / 3.0
        return J

    states = _implicit_euler(u0, _step_count(t_end, dt), dt, rhs, jac)
    return Trajectory(states, dt=dt, system="burgers", params={"xi": xi})


def solve_allen_cahn(xi, nx: int = 20, dt: float = 0.02, t_end: float = 1.0,
                     diffusion: float = 1e-4, reaction: float = 5.0) -> Trajectory:
    """Bistable reaction-diffusion flow on a periodic grid.

    The state holds ``nx`` periodic grid values on [-1, 1) with the duplicate
    right endpoint excluded. The cubic reaction drives values toward the
    stable levels at plus and minus one.
    """
    xi = float(xi)
    if not np.isfinite(xi):
        raise NumericError("initial amplitude must be finite")
    if nx < 4:
        raise ConfigError(f"need at least 4 grid points, got {nx}")
    h = 2.0 / nx
    x = -1.0 + h * np.arange(nx)
    u0 = xi * x**2 * np.cos(2.0 * np.pi * x)
    inv_h2 = 1.0 / h**2
    eye = np.eye(nx)
    lap = (np.roll(eye, -1, axis=1) + np.roll(eye, 1, axis=1) - 2.0 * eye) * inv_h2

    def rhs(u):
        lap_u = (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) * inv_h2
        return diffusion * lap_u - reaction * (u**3 - u)

    def jac(u):
        return diffusion * lap - reaction * np.diag(3.0 * u**2 - 1.0)

    states = _implicit_euler(u0, _step_count(t_end, dt), dt, rhs, jac)
    return Trajectory(states, dt=dt, system="allen_cahn", params={"xi": xi})


def sample_params(system: str, rng: np.random.Generator, overrides=None) -> dict:
    """Draw one set of trajectory inputs from the system's distribution."""
    overrides = dict(overrides or {})
    if system == "fixed_point":
        low = overrides.get("x0_low", 0.2)
        high = overrides.get("x0_high", 4.2)
        x0 = rng.uniform(low, high, size=2)
        return {"x0_1": float(x0[0]), "x0_2": float(x0[1])}
    if system == "burgers":
        low = overrides.get("xi_low", 0.2)
        high = overrides.get("xi_high", 1.2)
        return {"xi": float(rng.uniform(low, high))}
    if system == "allen_cahn":
        mean = overrides.get("xi_mean", -0.1)
        # the stated spread 0.04 is read as a variance
        std = overrides.get("xi_std", 0.2)
        return {"xi": float(rng.normal(mean, std))}
    raise ConfigError(f"unknown system {system!r}")


def simulate(system: str, params: dict, **kwargs) -> Trajectory:
    """Run one trajectory of a named system from sampled inputs."""
    if system == "fixed_point":
        x0 = np.array([params["x0_1"], params["x0_2"]])
        allowed = {k: kwargs[k] for k in ("steps", "lam", "mu") if k in kwargs}
        return simulate_fixed_point(x0, **allowed)
    if system == "burgers":
        allowed = {k: kwargs[k] for k in ("nx", "dt", "t_end", "viscosity") if k in kwargs}
        return solve_burgers(params["xi"], **allowed)
    if system == "allen_cahn":
        allowed = {k: kwargs[k] for k in ("nx", "dt", "t_end", "diffusion", "reaction")
                   if k in kwargs}
        return solve_allen_cahn(params["xi"], **allowed)
    raise ConfigError(f"unknown system {system!r}")


def _simulate_indexed(args):
    system, index, params, kwargs = args
    traj = simulate(system, params, **kwargs)
    traj.sample_id = index
    return traj


def make_dataset(system: str, n_samples: int, seed: int, split=(0.6, 0.2, 0.2),
                 workers: int | None = None, sampler_overrides=None,
                 **system_kwargs) -> Dataset:
    """Sample inputs, simulate every trajectory, and split by shuffled index.

    Each sample draws from its own generator seeded with ``seed ^ index``,
    so datasets are reproducible and samples independent of generation
    order. Split sizes are floor(0.6 n) / floor(0.2 n) / remainder. Solver
    failures carry the offending sample index.
    """
    if system not in SYSTEMS:
        raise ConfigError(f"unknown system {system!r}; choose from {SYSTEMS}")
    n_samples = int(n_samples)
    if n_samples < 5:
        raise ConfigError(f"need at least 5 samples, got {n_samples}")
    seed = int(seed)
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    split = tuple(float(f) for f in split)
    if len(split) != 3 or any(f <= 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {split}")

    params_list = [
        sample_params(system, np.random.default_rng(seed ^ i), sampler_overrides)
        for i in range(n_samples)
    ]
    jobs = [(system, i, params_list[i], system_kwargs) for i in range(n_samples)]

    if workers is None:
        workers = int(os.environ.get("KOOPMAN_FLOW_THREADS", "1"))
    trajectories: list[Trajectory] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, result in enumerate(pool.map(_simulate_indexed, jobs)):
                trajectories.append(result)
    else:
        for job in jobs:
            try:
                trajectories.append(_simulate_indexed(job))
            except SolverError as err:
                raise SolverError(f"sample {job[1]}: {err}") from None

    perm = np.random.default_rng(seed).permutation(n_samples)
    n_train = int(np.floor(split[0] * n_samples))
    n_val = int(np.floor(split[1] * n_samples))
    train_ids = perm[:n_train]
    val_ids = perm[n_train:n_train + n_val]
    test_ids = perm[n_train + n_val:]
    return Dataset(
        train=[trajectories[i] for i in train_ids],
        val=[trajectories[i] for i in val_ids],
        test=[trajectories[i] for i in test_ids],
        seed=seed,
        fractions=split,
        system=system,
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write the header, split index lists, and row-major snapshot blocks."""
    ordered = sorted(
        (traj for _, trajs in dataset.splits() for traj in trajs),
        key=lambda t: t.sample_id,
    )
    split_of = {}
    split_order = {}
    for name, trajs in dataset.splits():
        split_order[name] = [t.sample_id for t in trajs]
        for t in trajs:
            split_of[t.sample_id] = name
    first = ordered[0]
    with open(path, "w") as fh:
        fh.write(DATASET_HEADER + "\n")
        fh.write(f"system {dataset.system or first.system}\n")
        fh.write(f"seed {dataset.seed}\n")
        fh.write(f"dt {first.dt!r}\n")
        fh.write(f"m {first.m}\n")
        fh.write(f"T {first.T}\n")
        fh.write(f"n {len(ordered)}\n")
        fh.write("split " + " ".join(repr(f) for f in dataset.fractions) + "\n")
        for name in ("train", "val", "test"):
            fh.write(name + " " + " ".join(str(i) for i in split_order[name]) + "\n")
        for traj in ordered:
            kv = " ".join(f"{k}={v!r}" for k, v in sorted(traj.params.items()))
            fh.write(f"sample {traj.sample_id} {split_of[traj.sample_id]} {kv}\n")
            for row in traj.states:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        if lines[0] != DATASET_HEADER:
            raise DeserializationError(f"unexpected header {lines[0]!r}")
        meta = {}
        idx = 1
        for key in ("system", "seed", "dt", "m", "T", "n", "split"):
            parts = lines[idx].split()
            if parts[0] != key:
                raise DeserializationError(f"expected key {key!r}, got {parts[0]!r}")
            meta[key] = parts[1:]
            idx += 1
        system = meta["system"][0]
        seed = int(meta["seed"][0])
        dt = float(meta["dt"][0])
        n_rows = int(meta["T"][0]) + 1
        n = int(meta["n"][0])
        fractions = tuple(float(f) for f in meta["split"])
        split_order = {}
        for name in ("train", "val", "test"):
            parts = lines[idx].split()
            if parts[0] != name:
                raise DeserializationError(f"expected split {name!r}, got {parts[0]!r}")
            split_order[name] = [int(i) for i in parts[1:]]
            idx += 1
        by_id = {}
        for _ in range(n):
            parts = lines[idx].split()
            if parts[0] != "sample":
                raise DeserializationError(f"expected sample line, got {lines[idx]!r}")
            sample_id = int(parts[1])
            params = {}
            for kv in parts[3:]:
                key, _, val = kv.partition("=")
                params[key] = float(val)
            idx += 1
            states = np.array(
                [[float(v) for v in lines[idx + r].split()] for r in range(n_rows)]
            )
            idx += n_rows
            by_id[sample_id] = Trajectory(states, dt=dt, system=system,
                                          params=params, sample_id=sample_id)
    except (IndexError, ValueError) as err:
        raise DeserializationError(f"malformed dataset file: {err}") from None
    return Dataset(
        train=[by_id[i] for i in split_order["train"]],
        val=[by_id[i] for i in split_order["val"]],
        test=[by_id[i] for i in split_order["test"]],
        seed=seed,
        fractions=fractions,
        system=system,
    )


def write_dataset_csv(dataset: Dataset, path) -> None:
    """Flat export: sample_id, split, t, x_1..x_m."""
    first = next(traj for _, trajs in dataset.splits() for traj in trajs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "split", "t"] + [f"x_{j+1}" for j in range(first.m)])
        for name, trajs in dataset.splits():
            for traj in trajs:
                for t, row in enumerate(traj.states):
                    writer.writerow([traj.sample_id, name, t] + [repr(float(v)) for v in row])
