"""RankCLIP lab: list-wise ranking-consistency losses on a toy dual encoder."""

from .losses import LossBreakdown, LossConfig, clip_infonce, cross_modal_loss, in_modal_loss, lambda_schedule, rankclip_total
from .ranking import RankLossConfig, brute_force_rank_nll, pl_placement_prob, pl_ranking_prob, rank_loss
from .tensor import Tensor, backward, finite_diff_check

__all__ = [
    "LossBreakdown",
    "LossConfig",
    "RankLossConfig",
    "Tensor",
    "backward",
    "brute_force_rank_nll",
    "clip_infonce",
    "cross_modal_loss",
    "finite_diff_check",
    "in_modal_loss",
    "lambda_schedule",
    "pl_placement_prob",
    "pl_ranking_prob",
    "rank_loss",
    "rankclip_total",
]
