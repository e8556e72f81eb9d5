"""Rank-truncated spectral surrogates of snapshot dynamics.

Fits a rank-r linear model to a pair of time-shifted snapshot matrices via
reduced SVD, recovers complex modes, eigenvalues, and amplitudes, and
predicts observables as mode combinations scaled by eigenvalue powers.
Complex arithmetic stays inside this module; everything exchanged with the
rest of the package is real.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DeserializationError,
    NumericError,
    RankDeficiencyError,
    SpectralInconsistencyWarning,
)

# sigma_r must exceed this fraction of sigma_1 for a rank-r fit
RANK_TOL = 1e-12
# Moore-Penrose cutoff relative to the largest singular value
PINV_RTOL = 1e-12
# eigenvector bases worse conditioned than this trigger a warning
EIGENVECTOR_COND_LIMIT = 1e8
# imaginary residue above this fraction of the real part triggers a warning
IMAG_TOL = 1e-8


@dataclass
class SnapshotPair:
    """Time-shifted snapshot matrices: column k of Y follows column k of X."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape != self.Y.shape:
            raise ConfigError(
                f"snapshot matrices must share one 2-d shape, "
                f"got {self.X.shape} and {self.Y.shape}"
            )
        if self.X.shape[1] < 1:
            raise ConfigError("need at least one snapshot column")
        if not (np.isfinite(self.X).all() and np.isfinite(self.Y).all()):
            raise NumericError("non-finite snapshot entries")

    @classmethod
    def from_states(cls, states) -> "SnapshotPair":
        """Build the pair from a time-ordered (T+1, n) state array."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 2:
            raise ConfigError("need a 2-d array with at least two rows")
        return cls(states[:-1].T, states[1:].T)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _spectral_order(eigvals: np.ndarray) -> np.ndarray:
    """Descending magnitude, ties broken by ascending argument."""
    return np.lexsort((np.angle(eigvals), -np.abs(eigvals)))


@dataclass
class DMDModel:
    """Rank-r spectral surrogate: modes, eigenvalues, and amplitudes.

    Prediction of the observable at step k is the real part of
    ``modes @ (eigenvalues**k * amplitudes)``.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    amplitudes: np.ndarray
    rank: int
    singular_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n(self) -> int:
        return self.modes.shape[0]

    def predict(self, k: int) -> np.ndarray:
        """Real observable prediction at non-negative step k."""
        if k < 0:
            raise ConfigError(f"prediction step must be non-negative, got {k}")
        g = self.modes @ (self.eigenvalues**k * self.amplitudes)
        _check_imaginary(g)
        return g.real

    def predict_series(self, steps: int) -> np.ndarray:
        """Predictions for k = 0..steps as rows of a real (steps+1, n) array."""
        if steps < 0:
            raise ConfigError(f"steps must be non-negative, got {steps}")
        powers = self.eigenvalues[None, :] ** np.arange(steps + 1)[:, None]
        g = (powers * self.amplitudes[None, :]) @ self.modes.T
        _check_imaginary(g)
        return g.real

    def operator_powers(self, steps: int) -> np.ndarray:
        """Real matrices M_k = Re(modes diag(lambda^k) modes^+), k = 1..steps.

        M_k maps the initial observable to the step-k prediction, so these
        serve as frozen linear factors in training objectives.
        """
        pinv = np.linalg.pinv(self.modes, rcond=PINV_RTOL)
        powers = self.eigenvalues[None, :] ** np.arange(1, steps + 1)[:, None]
        mats = np.einsum("nr,tr,rk->tnk", self.modes, powers, pinv)
        return mats.real


def _check_imaginary(g: np.ndarray) -> None:
    imag = np.linalg.norm(g.imag)
    real = np.linalg.norm(g.real)
    if imag > IMAG_TOL * max(real, np.finfo(float).tiny):
        warnings.warn(
            f"imaginary residue {imag:.3e} exceeds {IMAG_TOL:.0e} of the real part",
            SpectralInconsistencyWarning,
            stacklevel=3,
        )


def fit_dmd(pair: SnapshotPair, rank: int) -> DMDModel:
    """Fit a rank-r spectral model to a snapshot pair.

    Reduced SVD of X keeps the top ``rank`` singular triplets, the projected
    operator is eigendecomposed, modes are lifted through Y, and amplitudes
    come from the pseudo-inverse of the modes applied to the first snapshot.
    Raises RankDeficiencyError when sigma_rank is numerically zero relative
    to sigma_1.
    """
    rank = int(rank)
    if not 1 <= rank <= min(pair.n, pair.p):
        raise ConfigError(
            f"rank must lie in [1, {min(pair.n, pair.p)}], got {rank}"
        )
    U, S, Vh = np.linalg.svd(pair.X, full_matrices=False)
    if S[0] <= 0.0 or S[rank - 1] <= RANK_TOL * S[0]:
        ratio = S[rank - 1] / S[0] if S[0] > 0 else 0.0
        raise RankDeficiencyError(
            f"rank {rank} exceeds numerical rank: sigma_{rank}/sigma_1 = {ratio:.3e}"
        )
    Ur = U[:, :rank]
    Sr = S[:rank]
    Vr = Vh[:rank].conj().T
    lifted = pair.Y @ (Vr / Sr)              # Y V_r Sigma_r^-1, shape (n, r)
    reduced = Ur.conj().T @ lifted           # projected operator, shape (r, r)
    eigvals, eigvecs = np.linalg.eig(reduced)
    order = _spectral_order(eigvals)
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    cond = np.linalg.cond(eigvecs)
    if not np.isfinite(cond) or cond > EIGENVECTOR_COND_LIMIT:
        warnings.warn(
            f"near-defective projected operator (eigenvector condition {cond:.3e})",
            SpectralInconsistencyWarning,
            stacklevel=2,
        )
    modes = lifted @ eigvecs
    amplitudes = np.linalg.pinv(modes, rcond=PINV_RTOL) @ pair.X[:, 0].astype(complex)
    return DMDModel(
        modes=modes,
        eigenvalues=eigvals,
        amplitudes=amplitudes,
        rank=rank,
        singular_values=Sr.copy(),
    )


def dense_dmd_oracle(pair: SnapshotPair):
    """Eigen-pairs of the explicitly assembled operator Y pinv(X).

    Independent check for ``fit_dmd``: forms the full n-by-n operator, so it
    needs X to have full row rank. Returns (eigenvalues, eigenvectors) in the
    same spectral order used by the fitted models.
    """
    S = np.linalg.svd(pair.X, compute_uv=False)
    if len(S) < pair.n or S[0] <= 0.0 or S[pair.n - 1] <= RANK_TOL * S[0]:
        raise RankDeficiencyError("snapshot matrix X is numerically row-rank deficient")
    K = pair.Y @ np.linalg.pinv(pair.X, rcond=PINV_RTOL)
    eigvals, eigvecs = np.linalg.eig(K)
    order = _spectral_order(eigvals)
    return eigvals[order], eigvecs[:, order]


def reconstruct_state(model: DMDModel, inverse_map, k: int) -> np.ndarray:
    """Predicted state at step k: the inverse observable map applied to the
    spectral prediction."""
    return np.asarray(inverse_map(model.predict(k)), dtype=np.float64)


def export_model(model: DMDModel) -> str:
    """Textual dump with 17 significant digits per component.

    Layout: header, rank, dimension, singular values, one line per
    eigenvalue and amplitude (re im), one line per mode column (re im
    interleaved entrywise).
    """
    out = io.StringIO()
    out.write("dmd-model v1\n")
    out.write(f"rank {model.rank}\n")
    out.write(f"n {model.n}\n")
    out.write("sigma " + " ".join(f"{x:.17g}" for x in model.singular_values) + "\n")
    for lam in model.eigenvalues:
        out.write(f"eigenvalue {lam.real:.17g} {lam.imag:.17g}\n")
    for b in model.amplitudes:
        out.write(f"amplitude {b.real:.17g} {b.imag:.17g}\n")
    for j in range(model.modes.shape[1]):
        col = model.modes[:, j]
        parts = " ".join(f"{v.real:.17g} {v.imag:.17g}" for v in col)
        out.write(f"mode {parts}\n")
    return out.getvalue()


def parse_model(text: str) -> DMDModel:
    """Inverse of :func:`export_model`; round trips are exact in float64."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        if lines[0] != "dmd-model v1":
            raise DeserializationError(f"unexpected header {lines[0]!r}")
        rank = int(lines[1].split()[1])
        n = int(lines[2].split()[1])
        sigma = np.array([float(x) for x in lines[3].split()[1:]])
        idx = 4
        eigvals = np.empty(rank, dtype=complex)
        for i in range(rank):
            _, re, im = lines[idx].split()
            eigvals[i] = complex(float(re), float(im))
            idx += 1
        amps = np.empty(rank, dtype=complex)
        for i in range(rank):
            _, re, im = lines[idx].split()
            amps[i] = complex(float(re), float(im))
            idx += 1
        modes = np.empty((n, rank), dtype=complex)
        for j in range(rank):
            nums = [float(x) for x in lines[idx].split()[1:]]
            if len(nums) != 2 * n:
                raise DeserializationError(f"mode line {j} has {len(nums)} numbers")
            modes[:, j] = [complex(nums[2 * i], nums[2 * i + 1]) for i in range(n)]
            idx += 1
    except (IndexError, ValueError) as err:
        raise DeserializationError(f"malformed model text: {err}") from None
    return DMDModel(modes=modes, eigenvalues=eigvals, amplitudes=amps,
                    rank=rank, singular_values=sigma)
