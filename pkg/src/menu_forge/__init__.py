"""Learning revenue-maximising menus of two-part tariffs and lotteries."""

from .cover import (
    EnumerationTooLarge,
    LotteryCoverParams,
    TariffCoverParams,
    enumerate_lottery_cover,
    enumerate_tariff_cover,
    round_lottery_menu,
    round_tariff_menu,
)
from .distributional import erm_over_cover, sample_complexity_lottery, sample_complexity_tariff
from .experts import RegretTrace, run_bandit, run_full_information
from .harness import ExperimentConfig, generate_adversary, run_experiment
from .limited_types import barycentric_spanner, extreme_point_set, run_limited_bandit
from .mechanisms import (
    NO_PURCHASE,
    DemandKind,
    ItemValuation,
    LotteryChoice,
    LotteryEntry,
    LotteryMenu,
    TariffChoice,
    TariffMenu,
    UnitValuation,
    best_response,
    best_response_lottery,
    best_response_tariff,
    revenue,
)

__version__ = "0.1.0"
