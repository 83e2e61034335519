"""Two-stage gene-pair scan: overall test on every pair, interaction test on survivors."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateTraitError, GxGError, ValidationError
from .kernels import GenotypeMatrix, gene_kernel, interaction_kernel, inverse_maf_weights
from .mixed_model import reml_fit
from .score_tests import interaction_test, overall_test

log = logging.getLogger(__name__)

RESULT_HEADER = ("gene1", "gene2", "tau1", "tau2", "tau3", "sigma2", "p_overall", "p_interaction", "flags")
EDGE_HEADER = ("gene1", "gene2", "p_interaction", "tau3")


@dataclass(frozen=True)
class GenePartition:
    """Ordered genes, each a tuple of SNP column indices."""

    genes: tuple

    def __post_init__(self):
        genes = tuple((str(g), tuple(int(c) for c in cols)) for g, cols in self.genes)
        ids = [g for g, _ in genes]
        if len(set(ids)) != len(ids):
            raise ValidationError("gene ids are not unique")
        seen = set()
        for g, cols in genes:
            if not cols:
                raise ValidationError(f"gene {g!r} has no SNPs")
            dup = seen.intersection(cols)
            if dup or len(set(cols)) != len(cols):
                raise ValidationError(f"SNP column assigned twice (gene {g!r})")
            seen.update(cols)
        object.__setattr__(self, "genes", genes)

    @property
    def gene_ids(self) -> list:
        return [g for g, _ in self.genes]

    def __len__(self):
        return len(self.genes)

    @classmethod
    def contiguous(cls, sizes: Sequence[int], names: Sequence[str] | None = None) -> "GenePartition":
        names = names or [f"gene{i + 1}" for i in range(len(sizes))]
        start, genes = 0, []
        for name, s in zip(names, sizes):
            genes.append((name, tuple(range(start, start + s))))
            start += s
        return cls(tuple(genes))


class KernelStore:
    """One kernel per gene, computed once and shared read-only by all pair tests."""

    def __init__(self, gene_ids, kernels):
        self.gene_ids = list(gene_ids)
        self._kernels = dict(zip(self.gene_ids, kernels))
        for K in kernels:
            K.setflags(write=False)
        self.computed = len(kernels)

    def __getitem__(self, gene_id) -> np.ndarray:
        return self._kernels[gene_id]

    def __len__(self):
        return len(self.gene_ids)

    @property
    def n(self) -> int:
        return next(iter(self._kernels.values())).shape[0]


def precompute_gene_kernels(G: GenotypeMatrix, partition: GenePartition, weighting: str = "none") -> KernelStore:
    if weighting not in ("none", "inv-maf"):
        raise ValidationError(f"unknown weighting {weighting!r}; use 'none' or 'inv-maf'")
    kernels = []
    for gene_id, cols in partition.genes:
        if max(cols) >= G.n_snps:
            raise ValidationError(f"gene {gene_id!r} refers to column {max(cols)} beyond {G.n_snps} SNPs")
        sub = G.columns(cols)
        w = inverse_maf_weights(sub) if weighting == "inv-maf" else None
        kernels.append(gene_kernel(sub, w))
    return KernelStore(partition.gene_ids, kernels)


@dataclass(frozen=True)
class Stage1Policy:
    kind: str
    level: float

    @classmethod
    def parse(cls, text: str) -> "Stage1Policy":
        try:
            kind, level = text.split(":", 1)
            level = float(level)
        except ValueError:
            raise ValidationError(f"stage-1 policy must look like 'fixed:<c>' or 'bonferroni:<alpha>', got {text!r}")
        if kind not in ("fixed", "bonferroni"):
            raise ValidationError(f"unknown stage-1 policy {kind!r}")
        if not 0 < level <= 1:
            raise ValidationError(f"stage-1 level must lie in (0, 1], got {level}")
        return cls(kind, level)

    def threshold(self, n_pairs: int) -> float:
        if self.kind == "bonferroni":
            return self.level / max(n_pairs, 1)
        return self.level


@dataclass(frozen=True)
class ScanRecord:
    gene1: str
    gene2: str
    p_overall: float | None
    tau1: float | None = None
    tau2: float | None = None
    tau3: float | None = None
    sigma2: float | None = None
    p_interaction: float | None = None
    flags: tuple = ()


def _test_pair(y, store, g1, g2, threshold, alpha2) -> ScanRecord:
    K1, K2 = store[g1], store[g2]
    try:
        K3 = interaction_kernel(K1, K2)
        overall = overall_test(y, K1, K2, K3)
    except DegenerateTraitError:
        raise
    except GxGError as exc:
        return ScanRecord(g1, g2, None, flags=(f"failed:{type(exc).__name__}",))
    flags = tuple(overall.flags)
    if overall.p_value > threshold:
        return ScanRecord(g1, g2, overall.p_value, flags=flags)
    try:
        inter = interaction_test(y, K1, K2, K3)
        full = reml_fit(y, [K1, K2, K3], free_mask=(True, True, True, True)).components
    except GxGError as exc:
        return ScanRecord(g1, g2, overall.p_value, flags=flags + (f"failed:{type(exc).__name__}",))
    flags += tuple(inter.flags) + ("stage2",)
    if inter.p_value <= alpha2:
        flags += ("interaction",)
    return ScanRecord(g1, g2, overall.p_value, full.tau1, full.tau2, full.tau3, full.sigma2,
                      inter.p_value, flags)


def two_stage_scan(y, store: KernelStore, stage1: Stage1Policy | str = "bonferroni:0.05",
                   alpha2: float = 0.05, threads: int = 1) -> list:
    """Scan all unordered gene pairs.

    Records are sorted by ``(p_overall, gene1, gene2)`` in partition order, so
    the output does not depend on ``threads``.
    """
    if isinstance(stage1, str):
        stage1 = Stage1Policy.parse(stage1)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != store.n:
        raise ValidationError(f"trait length {y.shape[0]} does not match {store.n} individuals")
    yc = y - y.mean()
    if float(yc @ yc) <= 1e-14 * max(1.0, float(y @ y)):
        raise DegenerateTraitError("trait has zero variance; nothing to scan")
    order = {g: i for i, g in enumerate(store.gene_ids)}
    pairs = list(combinations(store.gene_ids, 2))
    threshold = stage1.threshold(len(pairs))

    def task(pair):
        return _test_pair(y, store, pair[0], pair[1], threshold, alpha2)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(task, pairs))
    else:
        records = [task(p) for p in pairs]

    def key(r):
        p = r.p_overall if r.p_overall is not None else math.inf
        return (p, order[r.gene1], order[r.gene2])

    return sorted(records, key=key)


def _fmt_p(p) -> str:
    return "NA" if p is None else f"{p:.3e}"


def _fmt_c(v) -> str:
    return "NA" if v is None else f"{v:.6g}"


def format_results(records: Iterable[ScanRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in records:
        w.writerow([r.gene1, r.gene2, _fmt_c(r.tau1), _fmt_c(r.tau2), _fmt_c(r.tau3), _fmt_c(r.sigma2),
                    _fmt_p(r.p_overall), _fmt_p(r.p_interaction), ";".join(r.flags) or "NA"])
    return buf.getvalue()


def export_edges(records: Iterable[ScanRecord], p_cut: float = 0.05) -> list:
    """Gene pairs with ``p_interaction <= p_cut`` as ``(gene1, gene2, p_interaction, tau3)``."""
    return [(r.gene1, r.gene2, r.p_interaction, r.tau3) for r in records
            if r.p_interaction is not None and r.p_interaction <= p_cut]


def format_edges(edges) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(EDGE_HEADER)
    for g1, g2, p, tau3 in edges:
        w.writerow([g1, g2, _fmt_p(p), _fmt_c(tau3)])
    return buf.getvalue()
