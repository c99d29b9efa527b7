"""Base (identifiable) parameter sets via pivoted QR on sampled regressors.

The full parameter vector is structurally redundant: some columns of the
torque regressor are identically zero and others are linearly dependent for
every state.  A rank-revealing QR over a batch of random states splits the
active columns into an independent set and a dependent set, and the base
vector beta = theta_b + B_d theta_d reproduces every torque the full vector
can produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dynamics import (FrictionConfig, active_param_mask, param_names,
                       regressor, sample_states)
from .errors import DimensionError, RankError
from .kinematics import RobotModel

DEFAULT_RANK_TOL = 1e-8


@dataclass
class BaseParamDecomposition:
    """Split of the active regressor columns into base and dependent sets.

    Column indices refer to the full parameter vector.  `B_d` holds the
    recombination weights: beta = theta[b_cols] + B_d @ theta[d_cols].
    """

    b_cols: np.ndarray  # (n_b,) full-vector indices of independent columns
    d_cols: np.ndarray  # (n_d,) full-vector indices of dependent columns
    B_d: np.ndarray  # (n_b, n_d)
    n_params: int
    tol: float
    diag_kept: float  # smallest kept |R_ii| / |R_00|
    diag_dropped: float  # largest dropped |R_ii| / |R_00|, 0 if none dropped

    @property
    def n_base(self) -> int:
        return len(self.b_cols)

    def beta(self, theta: np.ndarray) -> np.ndarray:
        """Base vector equivalent to a full parameter vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.n_params:
            raise DimensionError(
                f"expected parameter vector of length {self.n_params}, "
                f"got {theta.shape[-1]}")
        out = theta[..., self.b_cols].copy()
        if self.d_cols.size:
            out += theta[..., self.d_cols] @ self.B_d.T
        return out

    def base_regressor(self, Y: np.ndarray) -> np.ndarray:
        """Columns of a full regressor belonging to the base set."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1] != self.n_params:
            raise DimensionError(
                f"expected regressor with {self.n_params} columns, "
                f"got {Y.shape[-1]}")
        return Y[..., self.b_cols]

    def expand(self, beta: np.ndarray) -> np.ndarray:
        """A full vector reproducing `beta` (dependent entries left zero)."""
        beta = np.asarray(beta, dtype=float)
        if beta.shape[-1] != self.n_base:
            raise DimensionError(
                f"expected base vector of length {self.n_base}, "
                f"got {beta.shape[-1]}")
        theta = np.zeros(beta.shape[:-1] + (self.n_params,))
        theta[..., self.b_cols] = beta
        return theta

    def describe(self, model: RobotModel, coef_tol: float = 1e-9) -> list[str]:
        """Readable combination strings, one per base parameter."""
        names = param_names(model)
        lines = []
        for i, bc in enumerate(self.b_cols):
            terms = [names[bc]]
            for j, dc in enumerate(self.d_cols):
                c = self.B_d[i, j]
                if abs(c) <= coef_tol:
                    continue
                sign = "-" if c < 0 else "+"
                mag = abs(c)
                if abs(mag - 1.0) <= coef_tol:
                    terms.append(f"{sign} {names[dc]}")
                else:
                    terms.append(f"{sign} {mag:.6g}*{names[dc]}")
            lines.append(" ".join(terms))
        return lines


def compute_base(model: RobotModel, n_samples: int = 240, seed: int = 0,
                 tol: float = DEFAULT_RANK_TOL,
                 friction: FrictionConfig | None = None,
                 limits=None) -> BaseParamDecomposition:
    """Find the base parameter set from regressors at random states.

    Structural zeros are removed before the QR and never enter the base set.
    The numerical rank keeps columns with |R_ii| >= tol * |R_00|; the tol
    is meant to separate structural dependencies (R_ii at rounding level)
    from genuinely excited directions, so the sampled batch must be large
    enough that every base direction is excited.
    """
    active = np.flatnonzero(active_param_mask(model))
    if n_samples * 7 < active.size:
        raise RankError(
            f"{n_samples} samples give {n_samples * 7} rows for "
            f"{active.size} active columns; increase n_samples")
    states = sample_states(model, n_samples, seed=seed, limits=limits)
    Y = regressor(model, states, friction)
    W = Y[:, :, active].reshape(-1, active.size)

    R, perm = scipy.linalg.qr(W, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        raise RankError("regressor is identically zero over the sample batch")
    rank = int(np.count_nonzero(diag >= tol * diag[0]))
    if rank == 0:
        raise RankError("no regressor column above the rank tolerance")

    b_active = perm[:rank]
    d_active = perm[rank:]
    if d_active.size:
        B_d = scipy.linalg.solve_triangular(R[:rank, :rank], R[:rank, rank:])
    else:
        B_d = np.zeros((rank, 0))

    # Sort both sets by full-vector position for stable naming; permute B_d
    # to match.
    bo = np.argsort(b_active)
    do = np.argsort(d_active)
    B_d = B_d[np.ix_(bo, do)]
    return BaseParamDecomposition(
        b_cols=active[b_active[bo]],
        d_cols=active[d_active[do]],
        B_d=B_d,
        n_params=model.n_params,
        tol=tol,
        diag_kept=float(diag[rank - 1] / diag[0]),
        diag_dropped=float(diag[rank] / diag[0]) if rank < diag.size else 0.0,
    )
