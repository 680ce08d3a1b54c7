from .candidates import EPSILON_SCHEDULE, Candidate, CandidatePool, density_cluster, generate_candidates
from .completeness import (
    THRESHOLDS,
    SceneBundle,
    ViewData,
    completeness_levelwise,
    completeness_viewwise,
    ctr,
    iou,
    iou_sweep,
    tangent_affinity_score,
    threshold_mask,
)
from .recall import DEFAULT_BUDGETS, RecallReport, budget_auc, group_recall, iou_matrix
