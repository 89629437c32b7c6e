"""Peer-effect inference for one-shot program adoption on household networks.

The pipeline: parse households and events (:mod:`peerspread.ingest`), build
distance-threshold peer networks (:mod:`peerspread.geonet`), evaluate the
SEIR-with-autoinfection likelihood (:mod:`peerspread.epimodel`), fit and
compare models by AIC (:mod:`peerspread.inference`), validate by forward
Monte Carlo (:mod:`peerspread.simulate`), and benchmark against a logistic
baseline (:mod:`peerspread.glm`).
"""

__version__ = "0.1.0"

from ._common import NEVER
from .epimodel import (
    EpidemicParams,
    ModelData,
    activation_prob,
    autoinfection_prob,
    build_model_data,
    covariate_matrix,
    exposure_steps,
    hazard_rate,
    log_likelihood,
    n_infectious,
    never_activation_prob,
)
from .geonet import (
    PeerNetwork,
    RoadGraph,
    build_network,
    distance_regression,
    euclidean_distance,
    road_travel_distance,
    snap_to_road,
)
from .glm import LogitFit, fit_logistic, predict_prob
from .inference import (
    FitConfig,
    FitResult,
    aic,
    compare_models,
    fit_mle,
    numerical_gradient,
    numerical_hessian,
    standard_errors,
)
from .ingest import (
    EventTimeline,
    Household,
    NeighborhoodSample,
    analysis_set,
    discretize_events,
    load_households,
    select_neighborhood,
    write_households,
)
from .simulate import (
    LagRule,
    SimConfig,
    Snapshot,
    cross_validate,
    generate_synthetic,
    grid_households,
    monte_carlo_mean,
    rmse,
    simulate_forward,
    synthetic_grid_study,
)
