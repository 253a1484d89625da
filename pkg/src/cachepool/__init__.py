"""Miss ratios of LRU caches shared by several request flows.

Modules
-------
workload
    Popularity families, catalogs and seeded request streams.
cache_sim
    Exact LRU (move-to-front) simulation over many capacities at once.
analytic
    ``m(z)``, its inverse, Che, asymptotic and closed-form predictors.
planner
    Pooling versus separation: splits, ratios and good regions.
oracle
    Exact stationary miss probabilities for catalogs of at most eight items.
"""

from .analytic import (
    AnalyticModel,
    MultiZipfModel,
    che_time,
    closed_multi_zipf,
    closed_weibull,
    closed_zipf,
    m_eval,
    m_invert,
    predict_asymptotic,
    predict_che,
    sigma_tail,
)
from .cache_sim import MissStats, run, run_dedicated, run_separated
from .errors import *  # noqa: F401,F403
from .oracle import TinyInstance, exact_miss, exact_sigma_distribution
from .planner import (
    OverlapParams,
    PartitionPlan,
    PlanFlow,
    good_region,
    optimal_split_zipf,
    optimize_split_numeric,
    per_flow_impact,
    pooling_vs_separation,
)
from .scenario import Scenario, load_scenario
from .workload import (
    Catalog,
    Constant,
    FlowSpec,
    LogZipf,
    Multinomial,
    OverlapSpec,
    RateSchedule,
    Weibull,
    Zipf,
    build_catalog,
)

__version__ = "0.1.0"
