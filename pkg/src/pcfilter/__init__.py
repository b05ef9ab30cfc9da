"""Replicability analysis across dependent studies with e-value selection.

Test r-of-n partial conjunction hypotheses: combine per-study p-values into
selection and filter statistics, calibrate them to e-values, and select with
simultaneous error control (FWER, PFER or FDR) that survives unknown
dependence between the studies.  Classical PC p-value baselines, a seeded
Monte-Carlo harness, Lehmann-exponent diagnostics and enrichment-score
helpers round out the toolkit; the pcfilter CLI wires them to delimited
files and figures.
"""

from .calibrate import (
    DEFAULT_KAPPA_GRID,
    Calibrator,
    phi,
    phi_inverse,
    tune_kappa,
)
from .combine import (
    BasePValueMatrix,
    FilterPair,
    PCHSpec,
    build_filter_pair,
    filter_stat,
    order_stats,
    pc_bonferroni,
    pc_cauchy,
    pc_fisher,
    pc_simes,
    selection_pvalues,
)
from .diagnose import (
    CdfEstimates,
    LehmannDiagnostic,
    Prop1Check,
    default_x_grid,
    diagnose,
    diagnostics_rows,
    estimate_cdfs,
    fit_lehmann,
    kappa_star_curve,
    verify_prop1,
)
from .enrich import (
    DEGENERATE,
    EnrichmentTable,
    combined_score,
    enrich_gene_list,
    fisher_exact_p,
    load_membership,
    odds_ratio,
    odds_ratio_ratio,
    permutation_z,
)
from .errors import ComputationError, PCFilterError, ValidationError
from .io import (
    AnalysisReport,
    IngestResult,
    StudyTable,
    analyze,
    ingest,
    read_report,
    read_study,
    write_matrix,
    write_report,
)
from .select import (
    PROCEDURES,
    RejectionResult,
    adafilter,
    bh,
    bh_on_pc,
    ebh,
    efilter,
    efilter_adjusted,
    efilter_threshold,
    epch,
    run_procedure,
)
from .simulate import (
    NR_GRID,
    SCENARIOS,
    ErrorMetrics,
    ExperimentResult,
    ScenarioConfig,
    TruthAssignment,
    generate,
    rep_generator,
    run_experiment,
    run_nr_grid,
    sample_configurations,
    score,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_KAPPA_GRID",
    "Calibrator",
    "phi",
    "phi_inverse",
    "tune_kappa",
    "BasePValueMatrix",
    "FilterPair",
    "PCHSpec",
    "build_filter_pair",
    "filter_stat",
    "order_stats",
    "pc_bonferroni",
    "pc_cauchy",
    "pc_fisher",
    "pc_simes",
    "selection_pvalues",
    "CdfEstimates",
    "LehmannDiagnostic",
    "Prop1Check",
    "default_x_grid",
    "diagnose",
    "diagnostics_rows",
    "estimate_cdfs",
    "fit_lehmann",
    "kappa_star_curve",
    "verify_prop1",
    "DEGENERATE",
    "EnrichmentTable",
    "combined_score",
    "enrich_gene_list",
    "fisher_exact_p",
    "load_membership",
    "odds_ratio",
    "odds_ratio_ratio",
    "permutation_z",
    "ComputationError",
    "PCFilterError",
    "ValidationError",
    "AnalysisReport",
    "IngestResult",
    "StudyTable",
    "analyze",
    "ingest",
    "read_report",
    "read_study",
    "write_matrix",
    "write_report",
    "PROCEDURES",
    "RejectionResult",
    "adafilter",
    "bh",
    "bh_on_pc",
    "ebh",
    "efilter",
    "efilter_adjusted",
    "efilter_threshold",
    "epch",
    "run_procedure",
    "NR_GRID",
    "SCENARIOS",
    "ErrorMetrics",
    "ExperimentResult",
    "ScenarioConfig",
    "TruthAssignment",
    "generate",
    "rep_generator",
    "run_experiment",
    "run_nr_grid",
    "sample_configurations",
    "score",
    "__version__",
]
