"""Allele-matching similarity kernels for gene-level genotype data.

Genotypes use the additive coding 0/1/2 (copies of a reference allele).
Writing a genotype ``g`` as the allele-count pair ``(g, 2 - g)``, the number of
identical-by-state matches among the four cross comparisons of two genotypes is
the inner product of their pairs::

    AM(a, b) = a*b + (2 - a)*(2 - b)

so a gene kernel is a scaled Gram matrix ``Z W Z^T`` and is PSD by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidGenotypeError, MonomorphicSNPError, ValidationError

_AM_TABLE = np.array([[4, 2, 0],
                      [2, 2, 2],
                      [0, 2, 4]], dtype=np.int64)


@dataclass(frozen=True)
class GenotypeMatrix:
    """n individuals x L SNPs of additive genotype codes."""

    values: np.ndarray
    snp_ids: Sequence[str] = None
    individual_ids: Sequence[str] = None

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ValidationError(f"genotype matrix must be 2-D, got shape {vals.shape}")
        n, L = vals.shape
        if n < 2 or L < 1:
            raise ValidationError(f"need n >= 2 individuals and L >= 1 SNPs, got {vals.shape}")
        check_genotypes(vals)
        vals = vals.astype(np.int8)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        snp_ids = list(self.snp_ids) if self.snp_ids is not None else [f"snp{j + 1}" for j in range(L)]
        ind_ids = list(self.individual_ids) if self.individual_ids is not None else [str(i + 1) for i in range(n)]
        if len(snp_ids) != L:
            raise ValidationError(f"{len(snp_ids)} SNP ids for {L} columns")
        if len(ind_ids) != n:
            raise ValidationError(f"{len(ind_ids)} individual ids for {n} rows")
        if len(set(snp_ids)) != L:
            raise ValidationError("SNP ids are not unique")
        object.__setattr__(self, "snp_ids", tuple(snp_ids))
        object.__setattr__(self, "individual_ids", tuple(ind_ids))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_snps(self) -> int:
        return self.values.shape[1]

    def columns(self, idx) -> "GenotypeMatrix":
        idx = list(idx)
        return GenotypeMatrix(self.values[:, idx], [self.snp_ids[j] for j in idx], self.individual_ids)


def check_genotypes(values) -> None:
    vals = np.asarray(values)
    if vals.dtype.kind == "f" and not np.all(np.isfinite(vals)):
        raise InvalidGenotypeError("genotype codes must be finite")
    bad = ~np.isin(vals, (0, 1, 2))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise InvalidGenotypeError(f"invalid genotype code {vals[i, j]!r} at row {i}, column {j}")


def _as_codes(G) -> np.ndarray:
    if isinstance(G, GenotypeMatrix):
        return G.values
    vals = np.asarray(G)
    if vals.ndim == 1:
        vals = vals[:, None]
    check_genotypes(vals)
    return vals


def am_score(g_a: int, g_b: int) -> int:
    """Allele-matching count between two genotypes (0, 2 or 4)."""
    for g in (g_a, g_b):
        if g not in (0, 1, 2) or isinstance(g, bool):
            raise InvalidGenotypeError(f"invalid genotype code {g!r}")
    return int(_AM_TABLE[int(g_a), int(g_b)])


def gene_kernel(G, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Weighted allele-matching kernel of one gene.

    ``K[i, j] = sum_s w_s AM(g_is, g_js) / (4 sum_s w_s)``; unit weights when
    ``weights`` is None. Returns a dense symmetric ``n x n`` float array with
    unit diagonal.
    """
    codes = _as_codes(G).astype(np.float64)
    S = codes.shape[1]
    if weights is None:
        w = np.ones(S)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape[0] != S:
            raise ValidationError(f"weight vector has length {w.shape[0]}, gene has {S} SNPs")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and non-negative")
        if not np.any(w > 0):
            raise ValidationError("at least one weight must be positive")
    # features (g, 2 - g) per SNP, scaled by sqrt(w)
    sw = np.sqrt(w)
    Z = np.concatenate([codes * sw, (2.0 - codes) * sw], axis=1)
    K = (Z @ Z.T) / (4.0 * w.sum())
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def interaction_kernel(K1: np.ndarray, K2: np.ndarray) -> np.ndarray:
    """Elementwise (Schur) product kernel for the tensor-product subspace."""
    K1 = np.asarray(K1, dtype=np.float64)
    K2 = np.asarray(K2, dtype=np.float64)
    if K1.shape != K2.shape or K1.ndim != 2 or K1.shape[0] != K1.shape[1]:
        raise ValidationError(f"kernel shapes differ or are not square: {K1.shape} vs {K2.shape}")
    return K1 * K2


def allele_frequencies(G) -> np.ndarray:
    codes = _as_codes(G)
    return codes.sum(axis=0) / (2.0 * codes.shape[0])


def minor_allele_frequencies(G) -> np.ndarray:
    p = allele_frequencies(G)
    return np.minimum(p, 1.0 - p)


def inverse_maf_weights(G) -> np.ndarray:
    """Per-SNP weights ``1 / MAF`` computed from the sample itself."""
    maf = minor_allele_frequencies(G)
    zero = np.flatnonzero(maf == 0)
    if zero.size:
        j = zero[0]
        snp = G.snp_ids[j] if isinstance(G, GenotypeMatrix) else f"column {j}"
        raise MonomorphicSNPError(snp)
    return 1.0 / maf
