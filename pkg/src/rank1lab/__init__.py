"""Exact, interval-certified experiments on rank-one cutting-and-stacking systems."""

from .construction import (
    AcceleratedSchedule,
    InadmissibleTime,
    RankOneSystem,
    Schedule,
    ScheduleError,
    StageNotBuilt,
    StageRecipe,
    accelerate_schedule,
    build_stage,
    flat_roof_defect,
    list_presets,
    load_system,
    preset,
    validate_schedule,
)
from .core_measure import (
    LevelSet,
    Translation,
    base_level,
    full_tower,
    level_set,
    measure,
    refine,
    symm_diff_measure,
    time_image,
    translate,
)
from .intervals import RationalInterval, as_rational, fmt
from .joinings import (
    ColoringError,
    ColoringFactor,
    Diagonal,
    GraphOfAction,
    OffDiagonal,
    Product,
    RelIndep,
    TestFamily,
    column_mass,
    conditional_offdiagonal,
    eval_joining,
    fat_diagonal,
    fat_diagonal_mass,
    invariance_defect,
    pair_counts,
)
from .weak_closure import (
    Budget,
    BudgetExceeded,
    HypothesisViolation,
    SearchReport,
    approximation_search,
    choice_select,
    decompose_offdiagonal,
    flat_roof_convergence,
    rigidity_search,
    wct_search,
)
from .zn_actions import (
    epsilon_for,
    zn_fat_diag_lower_bound,
    zn_partial_rigidity_check,
    zn_partial_wct_search,
)

__version__ = "0.1.0"

__all__ = [
    "RationalInterval",
    "as_rational",
    "fmt",
    "AcceleratedSchedule",
    "Budget",
    "BudgetExceeded",
    "ColoringError",
    "ColoringFactor",
    "Diagonal",
    "GraphOfAction",
    "HypothesisViolation",
    "InadmissibleTime",
    "LevelSet",
    "OffDiagonal",
    "Product",
    "RankOneSystem",
    "RelIndep",
    "Schedule",
    "ScheduleError",
    "SearchReport",
    "StageNotBuilt",
    "StageRecipe",
    "TestFamily",
    "Translation",
    "accelerate_schedule",
    "approximation_search",
    "base_level",
    "build_stage",
    "choice_select",
    "column_mass",
    "conditional_offdiagonal",
    "decompose_offdiagonal",
    "epsilon_for",
    "eval_joining",
    "fat_diagonal",
    "fat_diagonal_mass",
    "flat_roof_convergence",
    "flat_roof_defect",
    "full_tower",
    "invariance_defect",
    "level_set",
    "list_presets",
    "load_system",
    "measure",
    "pair_counts",
    "preset",
    "refine",
    "rigidity_search",
    "symm_diff_measure",
    "time_image",
    "translate",
    "validate_schedule",
    "wct_search",
    "zn_fat_diag_lower_bound",
    "zn_partial_rigidity_check",
    "zn_partial_wct_search",
]
