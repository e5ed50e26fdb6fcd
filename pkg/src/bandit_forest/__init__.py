"""Thompson sampling for contextual bandits with Bayesian forest reward models.

Library surface: sum-of-trees priors and prediction (``forest``), the
Metropolis-within-Gibbs posterior sampler (``mcmc``), bandit agents and
baselines (``agents``), synthetic / tabular / logged-panel environments
(``environments``), replay off-policy evaluation (``ope``), diagnostics
(``diagnostics``), and the experiment harness (``runner``, ``cli``).
"""

from .agents import (
    BftsAgent,
    EveryN,
    FeelGoodConfig,
    LinTSAgent,
    LinUCBAgent,
    Logarithmic,
    SquareRoot,
    encode_context,
    refresh_index,
    refresh_rounds,
    softmax_tilt_probs,
)
from .config import DEFAULTS, ConfigError, build_agent, dump_config, parse_config_text
from .diagnostics import (
    coverage_and_length,
    credible_interval,
    ece,
    feature_inclusion,
    inclusion_frontier,
    policy_delta_tv,
    probe_contexts,
    r_hat,
    rhat_summary,
)
from .environments import (
    ClassificationBanditEnv,
    EnvironmentExhausted,
    LoggedPanel,
    SyntheticEnv,
    classification_step,
    friedman1,
    friedman2,
    friedman3,
    load_logged_panel,
    load_tabular_csv,
    make_scenario,
    make_synthetic_panel,
    save_logged_panel,
)
from .forest import (
    DepthGeometric,
    DirichletSparse,
    Forest,
    Node,
    OriginalStructure,
    PriorConfig,
    SplitGrid,
    Tree,
    UniformAxes,
    build_split_grid,
    forest_from_text,
    forest_to_text,
    leaf_prior_sd,
    predict,
    sample_axis_probs,
    sample_forest_from_prior,
    sample_tree_from_prior,
    split_prob,
    tree_log_prior,
)
from .mcmc import (
    ChainState,
    DrawPool,
    RescaleMap,
    SamplerConfig,
    calibrate_lambda_sigma,
    gibbs_leaf_update,
    gibbs_sigma_update,
    gibbs_split_axis_update,
    leaf_marginal_loglik,
    mh_step,
    posterior_predict,
    propose_structure,
    rescale_response,
    run_chain,
    run_refresh,
)
from .ope import (
    ReplayResult,
    cluster_bootstrap,
    dr_estimate,
    ess,
    estimate_policy_dist,
    replay_run,
    snips,
)
from .runner import AgentSpec, ExperimentConfig, RunResult, diagnose, run_experiment, run_ope
from .seeding import derive_seed, splitmix64

__version__ = "0.1.0"
