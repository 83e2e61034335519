"""Gene-centric gene-gene interaction analysis with allele-matching kernel machines."""
from .errors import (ConvergenceError, DegenerateTraitError, GxGError, InvalidGenotypeError,
                     MonomorphicSNPError, NumericError, ValidationError)
from .kernels import GenotypeMatrix, am_score, gene_kernel, interaction_kernel, inverse_maf_weights
from .mixed_model import (BlupEstimates, NullFit, VarianceComponents, henderson_blup, reml_fit,
                          reml_score, restricted_loglik, ss_first_order_solve)
from .score_tests import (SatterthwaiteParams, TestResult, interaction_test, overall_moments,
                          overall_test, satterthwaite, scaled_chisq_sf)
from .baselines import RegressionTestResult, fpca_test, gene_pcs, ppca_test, single_snp_test
from .simulate import (GenotypeSimConfig, StudyDescriptor, TraitSimConfig, components_from_heritability,
                       run_study, simulate_genotypes, simulate_phenotype)
from .scan import (GenePartition, ScanRecord, export_edges, precompute_gene_kernels, two_stage_scan)

__version__ = "0.1.0"
