"""Reserve-price prediction for second-price auctions via objective-variable EM."""

from .auction import (
    AuctionRecord,
    Dataset,
    oracle_revenue,
    pct_of_max,
    revenue,
    satisfaction_prob,
    total_revenue,
)
from .baselines import ScalarPolicy, nof_fit, zero_policy
from .em import EmConfig, EmTrace, e_step, em_fit, log_normalizer, posterior_mean, smoothed_revenue
from .predictors import KernelPredictor, LinearPredictor, NeuralPredictor, SgdConfig
from .simdata import SimConfig, gen_simulated, split

__version__ = "0.1.0"

__all__ = [
    "AuctionRecord",
    "Dataset",
    "EmConfig",
    "EmTrace",
    "KernelPredictor",
    "LinearPredictor",
    "NeuralPredictor",
    "ScalarPolicy",
    "SgdConfig",
    "SimConfig",
    "e_step",
    "em_fit",
    "gen_simulated",
    "log_normalizer",
    "nof_fit",
    "oracle_revenue",
    "pct_of_max",
    "posterior_mean",
    "revenue",
    "satisfaction_prob",
    "smoothed_revenue",
    "split",
    "total_revenue",
    "zero_policy",
]
