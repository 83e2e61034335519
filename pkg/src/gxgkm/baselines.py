"""Regression baselines for gene-pair interaction: single-SNP, partial PCA, full PCA.

All three fit ordinary least squares with an intercept and compare nested
models with exact F tests.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ValidationError
from .kernels import GenotypeMatrix

log = logging.getLogger(__name__)

_ALIAS_TOL = 1e-9


@dataclass(frozen=True)
class RegressionTestResult:
    p_overall: float
    p_interaction: float
    dof_model: int
    dof_residual: int
    flags: tuple = ()


def _independent_columns(X: np.ndarray) -> list:
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    Q = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        x = X[:, j]
        r = x - Q @ (Q.T @ x)
        # re-orthogonalize once for stability
        r = r - Q @ (Q.T @ r)
        nr = np.linalg.norm(r)
        if nr > _ALIAS_TOL * max(np.linalg.norm(x), 1.0) * np.sqrt(X.shape[0]):
            keep.append(j)
            Q = np.column_stack([Q, r / nr])
    return keep


def _rss(y, X):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return float(r @ r)


def _f_pvalue(rss_red, rss_full, df1, df2):
    if df1 <= 0:
        return 1.0
    if rss_full <= 0:
        return 0.0 if rss_red > 0 else 1.0
    F = ((rss_red - rss_full) / df1) / (rss_full / df2)
    return float(stats.f.sf(max(F, 0.0), df1, df2))


def _nested_tests(y, main: np.ndarray, inter: np.ndarray):
    """Overall test (all genetic columns) and interaction test (``inter`` columns).

    Aliased columns are dropped left to right, intercept first, then main
    effects, then interaction terms.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    ones = np.ones((n, 1))
    X = np.column_stack([ones, main, inter])
    keep = _independent_columns(X)
    flags = ()
    if len(keep) < X.shape[1]:
        flags = ("aliased-columns-dropped",)
    n_main = 1 + main.shape[1]
    keep_main = [j for j in keep if j < n_main]
    keep_inter = [j for j in keep if j >= n_main]
    Xf = X[:, keep]
    p = len(keep)
    df_res = n - p
    if df_res < 1:
        raise ValidationError(
            f"no residual degrees of freedom ({p} columns for n = {n}); use fewer terms")
    rss_full = _rss(y, Xf)
    rss_null = float(np.sum((y - y.mean()) ** 2))
    p_overall = _f_pvalue(rss_null, rss_full, p - 1, df_res)
    if keep_inter:
        rss_main = _rss(y, X[:, keep_main])
        p_inter = _f_pvalue(rss_main, rss_full, len(keep_inter), df_res)
    else:
        flags += ("interaction-aliased",)
        p_inter = 1.0
    return RegressionTestResult(p_overall, p_inter, p - 1, df_res, flags)


def _codes(G) -> np.ndarray:
    if isinstance(G, GenotypeMatrix):
        return G.values.astype(float)
    G = np.asarray(G, dtype=float)
    return G[:, None] if G.ndim == 1 else G


def single_snp_test(y, s1, s2) -> RegressionTestResult:
    """``y = b0 + b1 s1 + b2 s2 + b12 s1 s2``; F tests of all slopes and of ``b12``."""
    s1 = np.asarray(s1, dtype=float).ravel()
    s2 = np.asarray(s2, dtype=float).ravel()
    for name, s in (("s1", s1), ("s2", s2)):
        if np.ptp(s) == 0:
            raise ValidationError(f"SNP column {name} is constant")
    return _nested_tests(y, np.column_stack([s1, s2]), (s1 * s2)[:, None])


def gene_pcs(G, var_threshold: float = 0.85) -> np.ndarray:
    """Leading principal-component scores of a column-centered gene matrix.

    Keeps the fewest components whose squared singular values reach
    ``var_threshold`` of the total. Each loading vector is signed so that its
    largest-magnitude entry is positive.
    """
    if not 0 < var_threshold <= 1:
        raise ValidationError(f"var_threshold must lie in (0, 1], got {var_threshold}")
    X = _codes(G)
    Xc = X - X.mean(axis=0)
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * np.sqrt(X.shape[0]):
        raise ValidationError("gene has zero variance (all rows identical)")
    rank = int(np.sum(s > s[0] * max(Xc.shape) * np.finfo(float).eps))
    energy = np.cumsum(s[:rank] ** 2) / np.sum(s[:rank] ** 2)
    if var_threshold >= 1:
        k = rank
    else:
        k = int(np.searchsorted(energy, var_threshold - 1e-12) + 1)
        k = min(max(k, 1), rank)
    V = Vt[:k].T
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    V = V * signs
    return Xc @ V


def ppca_test(y, G1, G2) -> RegressionTestResult:
    """All single-SNP main effects plus one product of the two first PCs."""
    X1, X2 = _codes(G1), _codes(G2)
    u1 = gene_pcs(X1, 1.0)[:, 0]
    u2 = gene_pcs(X2, 1.0)[:, 0]
    return _nested_tests(y, np.column_stack([X1, X2]), (u1 * u2)[:, None])


def fpca_test(y, G1, G2, var_threshold: float = 0.85) -> RegressionTestResult:
    """Selected PCs of both genes as main effects plus all PC-by-PC products."""
    U1 = gene_pcs(G1, var_threshold)
    U2 = gene_pcs(G2, var_threshold)
    prods = (U1[:, :, None] * U2[:, None, :]).reshape(U1.shape[0], -1)
    n = U1.shape[0]
    if n - (1 + U1.shape[1] + U2.shape[1] + prods.shape[1]) < 1:
        raise ValidationError(
            "no residual degrees of freedom with all PC products; raise the sample size "
            "or lower var_threshold")
    return _nested_tests(y, np.column_stack([U1, U2]), prods)
