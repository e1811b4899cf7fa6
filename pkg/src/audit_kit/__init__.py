"""audit-kit: build, inject, execute and survey spreadsheet self-checks."""

__version__ = "0.1.0"

from .checks import (
    CheckResult,
    CheckSpec,
    ModelSchema,
    generate_checks,
    inject_audit_sheet,
    load_schema,
    run_checks,
)
from .detect import (
    DetectionReport,
    MetricsReport,
    SurveyCounts,
    analyze_workbook,
    compute_metrics,
    count_unique_formulae,
    detect_tests,
    render_survey_report,
)
from .evaluate import EvalResult, IterationPolicy, builtin_call, evaluate, npv, solve_irr
from .fixture import build_fixture, generate_reference_model
from .formula import canonicalize, normalize_relative, parse_formula, print_formula
from .graph import build_graph, topo_order, transitive_dependents
from .mutate import (
    CoverageReport,
    Mutation,
    apply_mutation,
    regression_lock,
    run_campaign,
    standard_mutations,
)
from .workbook import (
    CellError,
    CellRef,
    Workbook,
    dumps_workbook,
    load_workbook,
    loads_workbook,
    save_workbook,
)

__all__ = [
    "__version__",
    "CheckResult", "CheckSpec", "ModelSchema", "generate_checks",
    "inject_audit_sheet", "load_schema", "run_checks",
    "DetectionReport", "MetricsReport", "SurveyCounts", "analyze_workbook",
    "compute_metrics", "count_unique_formulae", "detect_tests", "render_survey_report",
    "EvalResult", "IterationPolicy", "builtin_call", "evaluate", "npv", "solve_irr",
    "build_fixture", "generate_reference_model",
    "canonicalize", "normalize_relative", "parse_formula", "print_formula",
    "build_graph", "topo_order", "transitive_dependents",
    "CoverageReport", "Mutation", "apply_mutation", "regression_lock",
    "run_campaign", "standard_mutations",
    "CellError", "CellRef", "Workbook", "dumps_workbook", "load_workbook",
    "loads_workbook", "save_workbook",
]
