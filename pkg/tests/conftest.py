import numpy as np
import pytest

# genotype table of the three-individual, ten-SNP worked example
WORKED_EXAMPLE = np.array([
    [2, 0, 2, 1, 1, 0, 1, 1, 1, 1],
    [0, 0, 0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 1, 1, 0, 1, 0, 1, 1],
])
WORKED_EXAMPLE_KERNEL = np.array([
    [1.0, 0.5, 0.5],
    [0.5, 1.0, 0.7],
    [0.5, 0.7, 1.0],
])


@pytest.fixture
def worked_example():
    return WORKED_EXAMPLE.copy()


def random_psd(rng, n, rank=None, ridge=0.0):
    rank = rank or n
    A = rng.standard_normal((n, rank))
    K = A @ A.T / rank
    return K + ridge * np.eye(n)


def random_am_kernels(rng, n, snps=(6, 5), maf=0.3):
    from gxgkm.kernels import gene_kernel, interaction_kernel
    G1 = rng.binomial(2, maf, (n, snps[0]))
    G2 = rng.binomial(2, maf, (n, snps[1]))
    K1, K2 = gene_kernel(G1), gene_kernel(G2)
    return K1, K2, interaction_kernel(K1, K2)


@pytest.fixture
def rng():
    return np.random.default_rng(20121018)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
