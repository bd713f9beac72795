# Services package
from .allocation_service import regret_adversarial, regret_stochastic, run_allocation, click_allocation
from .mechanism_service import get_mechanism, get_rule
from .run_logger import get_run_logger

__all__ = [
    "regret_adversarial",
    "regret_stochastic",
    "run_allocation",
    "click_allocation",
    "get_mechanism",
    "get_rule",
    "get_run_logger",
]
