"""REML fitting of the variance-component model and its smoothing-spline dual.

The model is ``y = mu 1 + m1 + m2 + m12 + e`` with ``m_l ~ N(0, tau_l K_l)`` and
``e ~ N(0, sigma2 I)``, so ``V = sigma2 I + sum_l tau_l K_l``. Components are
always ordered ``(sigma2, tau1, tau2, tau3)``; a kernel list shorter than three
simply leaves the trailing taus unused.

The restricted log-likelihood drops the ``-(n-1)/2 log(2 pi)`` constant::

    l_R = -1/2 log|V| - 1/2 log(1' V^-1 1) - 1/2 (y - mu_hat 1)' V^-1 (y - mu_hat 1)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, NumericError, ValidationError

log = logging.getLogger(__name__)

MAX_ITER = 500
REL_TOL_LOGLIK = 1e-8
GRAD_TOL = 1e-6
SNAP_FRACTION = 1e-8
RIDGE_FRACTION = 1e-8


@dataclass(frozen=True)
class VarianceComponents:
    sigma2: float
    tau1: float = 0.0
    tau2: float = 0.0
    tau3: float = 0.0

    def __post_init__(self):
        for name in ("sigma2", "tau1", "tau2", "tau3"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"variance component {name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, arr) -> "VarianceComponents":
        arr = list(np.asarray(arr, dtype=float).ravel()) + [0.0] * 4
        return cls(*arr[:4])

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma2, self.tau1, self.tau2, self.tau3])

    @property
    def taus(self) -> np.ndarray:
        return np.array([self.tau1, self.tau2, self.tau3])

    def lambdas(self) -> np.ndarray:
        """Smoothing parameters ``sigma2 / tau_l`` (inf where tau_l = 0)."""
        with np.errstate(divide="ignore"):
            return self.sigma2 / self.taus


@dataclass(frozen=True)
class NullFit:
    components: VarianceComponents
    mu_hat: float
    reml_loglik: float
    v_factor: tuple = field(repr=False)
    free_mask: tuple = (True, True, True, True)
    n_iter: int = 0

    def v_solve(self, b: np.ndarray) -> np.ndarray:
        if self.v_factor is None:  # V = sigma2 I
            return np.asarray(b, dtype=float) / self.components.sigma2
        return linalg.cho_solve(self.v_factor, b)


@dataclass(frozen=True)
class BlupEstimates:
    mu: float
    m1: np.ndarray
    m2: np.ndarray
    m12: np.ndarray


def _check_inputs(y, kernels):
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.shape[0]
    if len(kernels) > 3:
        raise ValidationError(f"at most three kernels supported, got {len(kernels)}")
    ks = []
    for K in kernels:
        K = np.asarray(K, dtype=np.float64)
        if K.shape != (n, n):
            raise ValidationError(f"kernel shape {K.shape} does not match n = {n}")
        ks.append(K)
    return y, ks


def _components(vc) -> np.ndarray:
    if isinstance(vc, VarianceComponents):
        return vc.as_array()
    arr = np.zeros(4)
    v = np.asarray(vc, dtype=float).ravel()
    arr[: v.size] = v
    return arr


def assemble_v(kernels: Sequence[np.ndarray], vc, n: int | None = None) -> np.ndarray:
    beta = _components(vc)
    if n is None:
        n = kernels[0].shape[0]
    V = beta[0] * np.eye(n)
    for tau, K in zip(beta[1:], kernels):
        if tau != 0.0:
            V += tau * K
    return V


def _factor(V: np.ndarray):
    try:
        return linalg.cho_factor(V, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericError(f"covariance matrix is not positive definite: {exc}") from exc


class _RemlState:
    """Quantities shared by the likelihood, score and information at one point."""

    def __init__(self, y, kernels, beta):
        n = y.shape[0]
        self.n = n
        V = assemble_v(kernels, beta, n)
        self.factor = _factor(V)
        L = self.factor[0]
        self.logdet = 2.0 * np.sum(np.log(np.diag(L)))
        ones = np.ones(n)
        vinv_1 = linalg.cho_solve(self.factor, ones, check_finite=False)
        vinv_y = linalg.cho_solve(self.factor, y, check_finite=False)
        self.s = float(ones @ vinv_1)
        self.mu_hat = float(ones @ vinv_y) / self.s
        # Py = R y = V^-1 (y - mu_hat 1)
        self.py = vinv_y - self.mu_hat * vinv_1
        resid = y - self.mu_hat
        self.quad = float(resid @ self.py)
        self.loglik = -0.5 * (self.logdet + np.log(self.s) + self.quad)
        self._vinv_1 = vinv_1
        self._R = None

    @property
    def R(self) -> np.ndarray:
        if self._R is None:
            vinv = linalg.cho_solve(self.factor, np.eye(self.n), check_finite=False)
            R = vinv - np.outer(self._vinv_1, self._vinv_1) / self.s
            self._R = 0.5 * (R + R.T)
        return self._R

    def score(self, kernels) -> np.ndarray:
        R = self.R
        py = self.py
        g = np.zeros(4)
        g[0] = -0.5 * np.trace(R) + 0.5 * py @ py
        for i, K in enumerate(kernels):
            # tr(R K) with both symmetric
            g[i + 1] = -0.5 * np.sum(R * K) + 0.5 * py @ (K @ py)
        return g

    def average_information(self, kernels) -> np.ndarray:
        """``AI[i, j] = 1/2 (Py)' V_i R V_j (Py)``."""
        vpy = [self.py] + [K @ self.py for K in kernels]
        rvpy = [self.R @ v for v in vpy]
        k = len(vpy)
        ai = np.zeros((4, 4))
        for i in range(k):
            for j in range(i, k):
                ai[i, j] = ai[j, i] = 0.5 * vpy[i] @ rvpy[j]
        return ai


def restricted_loglik(y, kernels, vc) -> float:
    """Restricted log-likelihood with the intercept profiled out."""
    y, kernels = _check_inputs(y, kernels)
    return _RemlState(y, kernels, _components(vc)).loglik


def reml_score(y, kernels, vc) -> np.ndarray:
    """Gradient of :func:`restricted_loglik` w.r.t. ``(sigma2, tau1, tau2, tau3)``.

    Entries for kernels that are not supplied are zero.
    """
    y, kernels = _check_inputs(y, kernels)
    return _RemlState(y, kernels, _components(vc)).score(kernels)


def reml_fit(y, kernels, free_mask=None, max_iter: int = MAX_ITER) -> NullFit:
    """Maximize the restricted likelihood over the non-negative orthant.

    Free components are optimized on the log scale with average-information
    Newton steps and step halving; masked components stay at zero. ``sigma2``
    is always free. Components that end below ``1e-8 * var(y)`` are reported
    as exactly zero.
    """
    y, kernels = _check_inputs(y, kernels)
    n = y.shape[0]
    if free_mask is None:
        free_mask = [True] * (1 + len(kernels)) + [False] * (3 - len(kernels))
    mask = np.zeros(4, dtype=bool)
    mask[: len(free_mask)] = np.asarray(free_mask, dtype=bool)
    mask[0] = True
    mask[1 + len(kernels):] = False
    free = np.flatnonzero(mask)

    vy = float(np.var(y))
    if vy <= 0:
        raise ValidationError("trait is constant; variance components are not identifiable")
    floor = np.log(1e-10 * vy)

    beta = np.zeros(4)
    beta[0] = vy / 2.0
    n_tau = free.size - 1
    if n_tau:
        beta[free[1:]] = vy / (2.0 * n_tau)

    zeta = np.log(beta[free])
    state = _RemlState(y, kernels, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = state.score(kernels)[free] * beta[free]
        if np.max(np.abs(g)) < GRAD_TOL:
            converged = True
            break
        ai = state.average_information(kernels)[np.ix_(free, free)] * np.outer(beta[free], beta[free])
        try:
            step = np.linalg.solve(ai + 1e-12 * np.trace(ai) * np.eye(free.size), g)
        except np.linalg.LinAlgError:
            step = g
        if not np.all(np.isfinite(step)):
            step = g
        # cap per-iteration log-scale moves
        big = np.max(np.abs(step))
        if big > 5.0:
            step *= 5.0 / big

        accepted = False
        t = 1.0
        for _ in range(30):
            z_new = np.maximum(zeta + t * step, floor)
            b_new = beta.copy()
            b_new[free] = np.exp(z_new)
            try:
                s_new = _RemlState(y, kernels, b_new)
            except NumericError:
                t *= 0.5
                continue
            if s_new.loglik >= state.loglik - 1e-12 * abs(state.loglik):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no ascent direction found along the Newton step: try the gradient
            z_new = np.maximum(zeta + 1e-3 * np.sign(g), floor)
            b_new = beta.copy()
            b_new[free] = np.exp(z_new)
            s_new = _RemlState(y, kernels, b_new)
            if s_new.loglik <= state.loglik:
                converged = True
                break

        delta = s_new.loglik - state.loglik
        zeta, beta, state = z_new, b_new, s_new
        if abs(delta) < REL_TOL_LOGLIK * max(1.0, abs(state.loglik)) and (
            t == 1.0 or np.max(np.abs(t * step)) < 1e-6
        ):
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"REML did not converge in {max_iter} iterations",
            last_iterate=VarianceComponents.from_array(beta),
        )

    snapped = beta.copy()
    small = (snapped < SNAP_FRACTION * vy)
    small[0] = False
    if small.any():
        snapped[small] = 0.0
        state = _RemlState(y, kernels, snapped)
    log.debug("REML converged in %d iterations: %s", it, snapped)
    return NullFit(
        components=VarianceComponents.from_array(snapped),
        mu_hat=state.mu_hat,
        reml_loglik=state.loglik,
        v_factor=state.factor,
        free_mask=tuple(bool(m) for m in mask),
        n_iter=it,
    )


def _regularized(K: np.ndarray) -> np.ndarray:
    """Add ``1e-8 tr(K)/n`` to the diagonal when ``K`` is numerically singular."""
    n = K.shape[0]
    w = linalg.eigvalsh(K, check_finite=False)
    if w[0] <= 1e-10 * max(w[-1], 1e-300) or w[0] <= 0:
        return K + RIDGE_FRACTION * np.trace(K) / n * np.eye(n)
    return K


def henderson_blup(y, kernels, vc) -> BlupEstimates:
    """Solve Henderson's mixed-model equations for ``(mu, m1, m2, m12)``.

    Kernels whose component is zero contribute a zero random effect and are
    left out of the block system.
    """
    y, kernels = _check_inputs(y, kernels)
    n = y.shape[0]
    beta = _components(vc)
    sigma2 = beta[0]
    if sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    active = [i for i, K in enumerate(kernels) if beta[i + 1] > 0]
    k = len(active)
    size = 1 + k * n
    A = np.zeros((size, size))
    b = np.zeros(size)
    ones = np.ones(n)
    A[0, 0] = n
    b[0] = y.sum()
    eye = np.eye(n)
    for a, i in enumerate(active):
        sl = slice(1 + a * n, 1 + (a + 1) * n)
        A[0, sl] = ones
        A[sl, 0] = ones
        b[sl] = y
        Kinv = linalg.inv(_regularized(kernels[i]))
        for c, _ in enumerate(active):
            sl2 = slice(1 + c * n, 1 + (c + 1) * n)
            A[sl, sl2] = eye
        A[sl, sl] += (sigma2 / beta[i + 1]) * Kinv
    sol = _solve(A, b)
    ms = [np.zeros(n) for _ in range(3)]
    for a, i in enumerate(active):
        ms[i] = sol[1 + a * n: 1 + (a + 1) * n]
    return BlupEstimates(float(sol[0]), ms[0], ms[1], ms[2])


def ss_first_order_solve(y, kernels, lambdas):
    """Coefficients ``(mu, C1, C2, C3)`` of the penalized least-squares fit.

    Solves the normal equations of
    ``||y - mu 1 - sum K_l C_l||^2 + sum lambda_l C_l' K_l C_l``. Missing
    kernels give zero coefficient vectors.
    """
    y, kernels = _check_inputs(y, kernels)
    n = y.shape[0]
    lam = np.asarray(lambdas, dtype=float).ravel()
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValidationError("smoothing parameters must be non-negative")
    # an infinite penalty forces that coefficient vector to zero
    active = [i for i in range(len(kernels)) if np.isfinite(lam[i])]
    ks = [_regularized(kernels[i]) for i in active]
    lam = lam[active]
    k = len(ks)
    blocks = [np.ones((n, 1))] + ks
    A = np.block([[bi.T @ bj for bj in blocks] for bi in blocks])
    for a, K in enumerate(ks):
        sl = slice(1 + a * n, 1 + (a + 1) * n)
        A[sl, sl] += lam[a] * K
    b = np.concatenate([bi.T @ y for bi in blocks])
    sol = _solve(A, b)
    Cs = [np.zeros(n) for _ in range(3)]
    for a, i in enumerate(active):
        Cs[i] = sol[1 + a * n: 1 + (a + 1) * n]
    return float(sol[0]), Cs[0], Cs[1], Cs[2]


def _solve(A, b):
    try:
        x = linalg.solve(A, b, assume_a="sym", check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"singular block system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericError("singular block system: non-finite solution")
    return x


def blup_from_coefficients(kernels, C) -> list:
    """Map spline coefficients to random-effect predictions ``m_l = K_l C_l``."""
    return [np.asarray(K) @ c for K, c in zip(kernels, C)]
