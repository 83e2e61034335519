"""Genotype and trait simulation, and the type-I-error / power study harness."""
from __future__ import annotations

import configparser
import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from . import baselines
from .errors import NumericError, ValidationError, GxGError
from .kernels import GenotypeMatrix, gene_kernel, interaction_kernel, minor_allele_frequencies
from .mixed_model import VarianceComponents, assemble_v
from .score_tests import interaction_test, overall_test

log = logging.getLogger(__name__)

MIN_MAF = 0.05
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class GenotypeSimConfig:
    n: int
    snps_per_gene: int = 10
    maf_range: tuple = (0.05, 0.5)
    ld_rho: float = 0.5
    haplotype_pool: int = 100
    seed: int = 0
    n_genes: int = 1

    def __post_init__(self):
        lo, hi = self.maf_range
        if not 0 < lo <= hi <= 0.5:
            raise ValidationError(f"maf_range must satisfy 0 < low <= high <= 0.5, got {self.maf_range}")
        if self.n < 2 or self.haplotype_pool < 2 or self.snps_per_gene < 1 or self.n_genes < 1:
            raise ValidationError("need n >= 2, haplotype_pool >= 2, snps_per_gene >= 1, n_genes >= 1")
        if not 0 <= self.ld_rho < 1:
            raise ValidationError(f"ld_rho must lie in [0, 1), got {self.ld_rho}")


@dataclass(frozen=True)
class TraitSimConfig:
    mu: float = 0.0
    components: VarianceComponents = VarianceComponents(0.8)
    seed: int = 0


def _simulate_gene(cfg: GenotypeSimConfig, rng: np.random.Generator) -> np.ndarray:
    L = cfg.snps_per_gene
    lo, hi = cfg.maf_range
    for _ in range(MAX_ATTEMPTS):
        freqs = rng.uniform(lo, hi, size=L)
        # AR(1) latent Gaussian along the gene gives adjacent-SNP dependence
        z = np.empty((cfg.haplotype_pool, L))
        z[:, 0] = rng.standard_normal(cfg.haplotype_pool)
        innov = np.sqrt(1.0 - cfg.ld_rho ** 2)
        for s in range(1, L):
            z[:, s] = cfg.ld_rho * z[:, s - 1] + innov * rng.standard_normal(cfg.haplotype_pool)
        pool = (stats.norm.cdf(z) < freqs).astype(np.int8)
        picks = rng.integers(0, cfg.haplotype_pool, size=(cfg.n, 2))
        codes = pool[picks[:, 0]] + pool[picks[:, 1]]
        if np.all(minor_allele_frequencies(codes) >= min(MIN_MAF, lo)):
            return codes
    raise ValidationError(
        f"could not draw a gene with all sample MAFs >= {MIN_MAF} in {MAX_ATTEMPTS} attempts; "
        "widen maf_range or enlarge the haplotype pool")


def simulate_genotypes(cfg: GenotypeSimConfig) -> GenotypeMatrix:
    """Genotypes from independent haplotype pools, one pool per gene."""
    rng = np.random.default_rng(cfg.seed)
    genes = [_simulate_gene(cfg, rng) for _ in range(cfg.n_genes)]
    values = np.concatenate(genes, axis=1)
    if cfg.n_genes == 1:
        ids = [f"snp{s + 1}" for s in range(cfg.snps_per_gene)]
    else:
        ids = [f"g{g + 1}_snp{s + 1}" for g in range(cfg.n_genes) for s in range(cfg.snps_per_gene)]
    return GenotypeMatrix(values, ids)


def components_from_heritability(h2: float, eta: float, sigma2: float = 0.8,
                                 main_ratio: float = 0.5) -> VarianceComponents:
    """Variance components giving heritability ``h2`` and interaction share ``eta``."""
    if not 0 <= h2 < 1:
        raise ValidationError(f"h2 must lie in [0, 1), got {h2}")
    if not 0 <= eta <= 1 or not 0 <= main_ratio <= 1:
        raise ValidationError("eta and main_ratio must lie in [0, 1]")
    if sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    sg = sigma2 * h2 / (1.0 - h2)
    return VarianceComponents(
        sigma2,
        main_ratio * (1.0 - eta) * sg,
        (1.0 - main_ratio) * (1.0 - eta) * sg,
        eta * sg,
    )


def heritability(vc: VarianceComponents) -> tuple:
    """``(h2, eta)`` implied by a set of components."""
    sg = vc.tau1 + vc.tau2 + vc.tau3
    return sg / (sg + vc.sigma2), (vc.tau3 / sg if sg > 0 else 0.0)


def simulate_phenotype(K1, K2, K3, cfg: TraitSimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``y ~ N(mu 1, sigma2 I + tau1 K1 + tau2 K2 + tau3 K3)``."""
    vc = cfg.components
    if vc.sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    n = np.shape(K1)[0]
    V = assemble_v([np.asarray(K1), np.asarray(K2), np.asarray(K3)], vc, n)
    try:
        L = linalg.cholesky(V, lower=True, check_finite=False)
    except linalg.LinAlgError:
        try:
            L = linalg.cholesky(V + 1e-10 * n * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericError(f"trait covariance could not be factorized: {exc}") from exc
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return cfg.mu + L @ rng.standard_normal(n)


# --- study harness -------------------------------------------------------

SCENARIO_ETA = {"I": 0.0, "II": 0.0, "III": 0.2, "IV": 0.5}
METHODS = ("kernel", "ppca", "fpca", "single_snp")


@dataclass(frozen=True)
class StudyDescriptor:
    """One simulation setting.

    ``model = "kernel"`` draws traits from the mixed model with kernel
    covariance; ``model = "single_snp"`` draws one SNP per gene at ``maf`` and
    a trait from the single-SNP interaction regression with ``coefficients``
    ``(b0, b1, b2, b12)`` and residual variance ``sigma2``.
    """

    methods: tuple = ("kernel", "ppca", "fpca")
    n: int = 500
    h2: float = 0.2
    eta: float = 0.0
    scenario: str | None = None
    replicates: int = 1000
    alpha: float = 0.05
    seed: int = 1
    sigma2: float = 0.8
    mu: float = 0.0
    snps_per_gene: int = 10
    maf_range: tuple = (0.05, 0.5)
    ld_rho: float = 0.5
    haplotype_pool: int = 100
    var_threshold: float = 0.85
    gate_interaction: bool = False
    model: str = "kernel"
    coefficients: tuple = (0.0, 0.0, 0.0, 0.0)
    maf: float = 0.3
    threads: int = 1
    tests: tuple = ("overall", "interaction")

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
        if self.model not in ("kernel", "single_snp"):
            raise ValidationError(f"unknown generating model {self.model!r}")
        if self.scenario is not None and self.scenario not in SCENARIO_ETA:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        if self.replicates < 1 or not 0 < self.alpha < 1:
            raise ValidationError("replicates must be >= 1 and alpha in (0, 1)")
        if not self.tests or any(t not in ("overall", "interaction") for t in self.tests):
            raise ValidationError(f"tests must be a subset of (overall, interaction), got {self.tests}")
        if "single_snp" in self.methods and self.model != "single_snp" and self.snps_per_gene != 1:
            raise ValidationError("single_snp method needs one SNP per gene")

    def components(self) -> VarianceComponents:
        if self.scenario == "I":
            return VarianceComponents(self.sigma2)
        eta = SCENARIO_ETA[self.scenario] if self.scenario else self.eta
        return components_from_heritability(self.h2, eta, self.sigma2)


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(replicate,)))


def simulate_replicate(desc: StudyDescriptor, r: int):
    """Genotypes of both genes and a trait for replicate ``r``."""
    rng = replicate_rng(desc.seed, r)
    if desc.model == "single_snp":
        s1 = rng.binomial(2, desc.maf, desc.n)
        s2 = rng.binomial(2, desc.maf, desc.n)
        b0, b1, b2, b12 = desc.coefficients
        y = b0 + b1 * s1 + b2 * s2 + b12 * s1 * s2 + rng.normal(0.0, np.sqrt(desc.sigma2), desc.n)
        return s1[:, None], s2[:, None], y
    cfg = GenotypeSimConfig(desc.n, desc.snps_per_gene, tuple(desc.maf_range), desc.ld_rho,
                            desc.haplotype_pool, seed=int(rng.integers(2 ** 63)), n_genes=2)
    G = simulate_genotypes(cfg).values
    G1, G2 = G[:, : desc.snps_per_gene], G[:, desc.snps_per_gene:]
    K1, K2 = gene_kernel(G1), gene_kernel(G2)
    K3 = interaction_kernel(K1, K2)
    y = simulate_phenotype(K1, K2, K3, TraitSimConfig(desc.mu, desc.components()), rng)
    return G1, G2, y


def _run_replicate(desc: StudyDescriptor, r: int) -> dict:
    G1, G2, y = simulate_replicate(desc, r)
    want_inter = "interaction" in desc.tests
    out = {}
    for method in desc.methods:
        try:
            if method == "kernel":
                K1, K2 = gene_kernel(G1), gene_kernel(G2)
                K3 = interaction_kernel(K1, K2)
                p_o = overall_test(y, K1, K2, K3).p_value
                if not want_inter or (desc.gate_interaction and p_o > desc.alpha):
                    p_i = 1.0
                else:
                    p_i = interaction_test(y, K1, K2, K3).p_value
            else:
                if method == "ppca":
                    res = baselines.ppca_test(y, G1, G2)
                elif method == "fpca":
                    res = baselines.fpca_test(y, G1, G2, desc.var_threshold)
                else:
                    res = baselines.single_snp_test(y, G1[:, 0], G2[:, 0])
                p_o = res.p_overall
                p_i = 1.0 if desc.gate_interaction and p_o > desc.alpha else res.p_interaction
            out[method] = (p_o, p_i, False)
        except GxGError as exc:
            log.warning("replicate %d, method %s failed: %s", r, method, exc)
            out[method] = (1.0, 1.0, True)
    return out


@dataclass
class StudyTable:
    """Rejection counts per method and test."""

    replicates: int
    counts: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)

    def rate(self, method: str, test: str) -> float:
        return self.counts[(method, test)] / self.replicates

    def se(self, method: str, test: str) -> float:
        p = self.rate(method, test)
        return float(np.sqrt(p * (1.0 - p) / self.replicates))

    def rows(self):
        for (method, test), k in self.counts.items():
            yield (method, test, k, self.replicates, self.rate(method, test), self.se(method, test),
                   self.failures.get(method, 0))

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["method", "test", "rejections", "replicates", "rate", "se", "failures"])
        for method, test, k, R, rate, se, fails in self.rows():
            w.writerow([method, test, k, R, f"{rate:.6f}", f"{se:.6f}", fails])
        return buf.getvalue()


def run_study(desc: StudyDescriptor, keep_pvalues: bool = False) -> StudyTable:
    """Empirical rejection rates at ``desc.alpha`` for every requested method.

    All methods see the same simulated replicates; replicate seeds derive
    from ``desc.seed`` so results do not depend on ``desc.threads``.
    """
    reps = range(desc.replicates)
    if desc.threads > 1:
        with ThreadPoolExecutor(desc.threads) as pool:
            results = list(pool.map(lambda r: _run_replicate(desc, r), reps))
    else:
        results = [_run_replicate(desc, r) for r in reps]
    table = StudyTable(desc.replicates)
    for method in desc.methods:
        po = np.array([res[method][0] for res in results])
        pi = np.array([res[method][1] for res in results])
        for test, p in (("overall", po), ("interaction", pi)):
            if test in desc.tests:
                table.counts[(method, test)] = int(np.sum(p <= desc.alpha))
        table.failures[method] = int(sum(res[method][2] for res in results))
        if keep_pvalues:
            table.pvalues[method] = (po, pi)
    return table


# --- descriptor files ----------------------------------------------------

def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        if name in ("methods", "tests"):
            return tuple(parts)
        return tuple(float(p) for p in parts)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if name == "scenario":
        return raw or None
    return raw


def read_descriptor(text: str) -> StudyDescriptor:
    """Parse ``key = value`` lines (``#`` comments allowed) into a descriptor."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[study]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed study descriptor: {exc}") from exc
    defaults = {f.name: f.default for f in fields(StudyDescriptor)}
    kwargs = {}
    for key, raw in parser["study"].items():
        if key not in defaults:
            raise ValidationError(f"unknown study key {key!r}")
        try:
            kwargs[key] = _parse_value(key, raw, defaults[key])
        except ValueError as exc:
            raise ValidationError(f"bad value for {key!r}: {raw!r}") from exc
    return StudyDescriptor(**kwargs)
