"""Explicit-state epistemic model checking for Dining Cryptographers protocols."""

from .formula import (
    FALSE,
    TRUE,
    And,
    Atom,
    Formula,
    FormulaSyntaxError,
    Iff,
    Implies,
    Knows,
    KnowsWhether,
    MacroContext,
    Not,
    Or,
    Top,
    eval_at,
    evaluate,
    parse_formula,
    valid,
)
from .kripke import (
    FitnessError,
    KripkeStructure,
    build_structure,
    check_consistent,
    classes_of,
    from_classes,
)
from .bisim import (
    BisimRelation,
    are_bisimilar,
    check_preservation,
    greatest_bisimulation,
    is_bisimulation,
)
from .lang import (
    Assign,
    Broadcast,
    JointAction,
    NotEnabledError,
    Program,
    Rand,
    ResourceExhausted,
    Send,
    apply_ov,
    enabled_at_ov,
    enabled_at_structure,
    parse_program,
    run,
    step,
)
from .dc import (
    KeyGraph,
    abstract_program,
    build_dc,
    build_dc_abstract,
    char_sim_dc,
    char_sim_dca,
    complete,
    find_key_completion,
    parse_graph,
    ring,
)
from .twophase import (
    CandidateImpl,
    SpecReport,
    build_initial,
    build_program,
    check_implementation,
    final_candidate,
    initial_candidate,
    spec_formulas,
)

__version__ = "0.1.0"

__all__ = [
    "FALSE",
    "TRUE",
    "And",
    "Atom",
    "Formula",
    "FormulaSyntaxError",
    "Iff",
    "Implies",
    "Knows",
    "KnowsWhether",
    "MacroContext",
    "Not",
    "Or",
    "Top",
    "eval_at",
    "evaluate",
    "parse_formula",
    "valid",
    "FitnessError",
    "KripkeStructure",
    "build_structure",
    "check_consistent",
    "classes_of",
    "from_classes",
    "BisimRelation",
    "are_bisimilar",
    "check_preservation",
    "greatest_bisimulation",
    "is_bisimulation",
    "Assign",
    "Broadcast",
    "JointAction",
    "NotEnabledError",
    "Program",
    "Rand",
    "ResourceExhausted",
    "Send",
    "apply_ov",
    "enabled_at_ov",
    "enabled_at_structure",
    "parse_program",
    "run",
    "step",
    "KeyGraph",
    "abstract_program",
    "build_dc",
    "build_dc_abstract",
    "char_sim_dc",
    "char_sim_dca",
    "complete",
    "find_key_completion",
    "parse_graph",
    "ring",
    "CandidateImpl",
    "SpecReport",
    "build_initial",
    "build_program",
    "check_implementation",
    "final_candidate",
    "initial_candidate",
    "spec_formulas",
]
