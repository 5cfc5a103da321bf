import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import cg, spsolve

from lib import ConfigError, SignalError, get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class GlrParams:
    kappa: float = 60.0
    mu_fraction: float = 0.67
    solver_tol: float = 1e-10
    solver_max_iters: int = None

    def __post_init__(self):
        if not self.kappa > 1:
            raise ConfigError(f"kappa must be > 1, got {self.kappa}")
        if not 0 < self.mu_fraction <= 1:
            raise ConfigError(f"mu_fraction must lie in (0, 1], got {self.mu_fraction}")
        if not self.solver_tol > 0:
            raise ConfigError("solver_tol must be positive")


def mu_max(kappa, d_max):
    """Largest mu keeping the condition number of I + mu L below kappa; +inf for an edgeless graph."""
    if not kappa > 1:
        raise ConfigError(f"kappa must be > 1, got {kappa}")
    if d_max <= 0:
        return math.inf
    return (kappa - 1) / (2.0 * d_max)


def smoothness(lap, y):
    y = np.asarray(y, dtype=float)
    return float(y @ (lap.laplacian @ y))


def denoise(lap, y_prev, params=None, mu=None, history=None):
    """
    Smoothest signal close to y_prev: solves (I + mu L) Y = y_prev with Jacobi preconditioned CG. `mu` defaults to
    params.mu_fraction * mu_max. Pass a list as `history` to collect the residual norm of every CG iterate.
    """
    params = params or GlrParams()
    y_prev = np.asarray(y_prev, dtype=float)
    if y_prev.shape != (lap.n_nodes,):
        raise SignalError(f"signal of shape {y_prev.shape} does not match {lap.n_nodes} nodes")
    if not np.isfinite(y_prev).all():
        raise SignalError("signal contains non-finite values")
    if mu is None:
        limit = mu_max(params.kappa, lap.d_max)
        if math.isinf(limit):
            return y_prev.copy()
        mu = params.mu_fraction * limit
    if mu < 0:
        raise ConfigError(f"mu must be non-negative, got {mu}")
    if mu == 0 or lap.d_max == 0:
        return y_prev.copy()

    n = lap.n_nodes
    system = (sparse.identity(n, format="csr") + mu * lap.laplacian).tocsr()
    precon = sparse.diags(1.0 / system.diagonal())
    max_iters = params.solver_max_iters or 10 * n
    callback = None
    if history is not None:
        def callback(xk):
            history.append(float(np.linalg.norm(y_prev - system @ xk)))
    y, info = cg(system, y_prev, x0=y_prev.copy(), rtol=params.solver_tol, atol=0.0, maxiter=max_iters, M=precon,
                 callback=callback)
    if info != 0:
        logger.warning("CG did not converge, using a direct solve", extra={'phase': "GLR", "info": int(info),
                                                                          "nodes": n, "mu": mu})
        y = spsolve(system.tocsc(), y_prev)
    return np.clip(y, y_prev.min(), y_prev.max())


def write_residual_history(history, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.DataFrame({"iteration": np.arange(1, len(history) + 1), "residual_norm": history}).to_csv(path, index=False)
