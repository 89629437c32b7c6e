"""The adoption-hazard model: probabilities, likelihood, hazard formulations."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerspread._common import NEVER
from peerspread.epimodel import (
    EpidemicParams,
    autoinfection_prob,
    build_model_data,
    covariate_matrix,
    exposure_steps,
    hazard_rate,
    log_activation_prob,
    log_likelihood,
    log_never_activation_prob,
    n_infectious,
    activation_prob,
    never_activation_prob,
)
from conftest import make_household, make_network, make_timeline, mu_to_lambda


def constant_mu_params(mu, tau_r=12, alpha=0.0):
    return EpidemicParams(alpha=alpha, beta=[], lambda0=[mu_to_lambda(mu)],
                          breakpoints=[1], tau_r=tau_r)


def single_house_data(t_e, t_i, horizon, tau_r=12):
    net = make_network(1, [])
    tl = make_timeline([t_e], [t_i], horizon)
    homes = [make_household("h0")]
    return build_model_data(tl, net, homes, [], ["h0"], tau_r)


def pair_data(t_e, t_i, horizon, tau_r=12):
    net = make_network(2, [(0, 1)])
    tl = make_timeline(t_e, t_i, horizon)
    homes = [make_household("h0"), make_household("h1", x=10.0)]
    return build_model_data(tl, net, homes, [], ["h0", "h1"], tau_r)


# --- autoinfection ----------------------------------------------------------

def test_zero_baseline_gives_exact_zero():
    assert autoinfection_prob(3.7, 0.0) == 0.0


def test_hand_evaluated_autoinfection():
    assert autoinfection_prob(0.0, 0.01) == pytest.approx(1 - math.exp(-0.01), rel=1e-12)
    assert autoinfection_prob(math.log(2.0), 0.01) == pytest.approx(
        1 - math.exp(-0.02), rel=1e-12)


def test_negative_baseline_rejected():
    with pytest.raises(ValueError):
        autoinfection_prob(0.0, -0.1)


# --- exposure accounting ----------------------------------------------------

def test_exposure_steps_hand_counts():
    assert exposure_steps(3, 10, 12) == 6    # infectious pressure at months 4..9
    assert exposure_steps(3, 20, 12) == 12   # recovered before month 16
    assert exposure_steps(9, 10, 12) == 0    # no complete month of exposure


def test_exposure_steps_pre_study_neighbor():
    # infectious since month -5 with a 8-month window: in-window months 1..3
    assert exposure_steps(-5, 10, 8) == 3
    # fully recovered before the window opens
    assert exposure_steps(-12, 10, 8) == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(-50, 50), st.integers(1, 60), st.integers(1, 40))
def test_exposure_steps_bounds(t_ki, t, tau_r):
    steps = exposure_steps(t_ki, t, tau_r)
    assert 0 <= steps <= min(max(t - 1, 0), tau_r)


def test_exposure_matches_monthly_infectious_counts():
    # chain rule consistency: sum of per-month counts equals the step count
    rng = np.random.default_rng(7)
    for _ in range(50):
        t_ki = int(rng.integers(-5, 15))
        tau_r = int(rng.integers(1, 10))
        t = int(rng.integers(1, 20))
        total = sum(n_infectious([t_ki], s, tau_r) for s in range(1, t))
        assert total == exposure_steps(t_ki, t, tau_r)


# --- activation probabilities -----------------------------------------------

def test_isolated_house_geometric_law():
    mu = 0.2
    data = single_house_data(5, 7, horizon=10)
    p = constant_mu_params(mu)
    for t in (1, 3, 5, 10):
        assert activation_prob(0, t, data, p) == pytest.approx(
            (1 - mu) ** (t - 1) * mu, rel=1e-12)


def test_final_month_factor_hand_value():
    # two neighbors infectious from the window edge, activation at month 1
    net = make_network(3, [(0, 1), (0, 2)])
    tl = make_timeline([NEVER, 0, 0], [NEVER, 0, 0], horizon=6)
    homes = [make_household(f"h{k}", x=float(k)) for k in range(3)]
    data = build_model_data(tl, net, homes, [], ["h0", "h1", "h2"], tau_r=12)
    p = constant_mu_params(0.1, alpha=0.2)
    assert activation_prob(0, 1, data, p) == pytest.approx(
        1 - 0.9 * 0.8 ** 2, rel=1e-12)


def test_nothing_activates_when_hazard_zero():
    data = single_house_data(NEVER, NEVER, horizon=8)
    p = constant_mu_params(0.0)
    for t in (1, 4, 8):
        assert activation_prob(0, t, data, p) == 0.0


def test_activation_month_out_of_window_rejected():
    data = single_house_data(2, 2, horizon=8)
    with pytest.raises(ValueError):
        log_activation_prob(0, 9, data, constant_mu_params(0.1))


def test_never_activation_trivial_and_hand_products():
    data = single_house_data(NEVER, NEVER, horizon=3)
    assert never_activation_prob(0, data, constant_mu_params(0.0)) == 1.0
    assert never_activation_prob(0, data, constant_mu_params(0.1)) == pytest.approx(
        0.9 ** 3, rel=1e-12)


def test_never_activation_with_planted_neighbor():
    # neighbor enters the window already converted: pressure at months 1 and 2
    data = pair_data([NEVER, 0], [NEVER, 0], horizon=2, tau_r=NEVER)
    p = EpidemicParams(alpha=0.5, beta=[], lambda0=[0.0], breakpoints=[1], tau_r=NEVER)
    assert never_activation_prob(0, data, p) == pytest.approx(0.25, rel=1e-12)


def test_final_factor_monotone_in_alpha_and_neighbors():
    precedent = 0.0
    for alpha in (0.0, 0.1, 0.3, 0.6):
        f = 1 - (1 - 0.05) * (1 - alpha) ** 2
        assert f >= precedent
        precedent = f
    precedent = 0.0
    for n in range(5):
        f = 1 - (1 - 0.05) * (1 - 0.2) ** n
        assert f >= precedent
        precedent = f


# --- log-likelihood ---------------------------------------------------------

def test_single_house_loglik_hand_value():
    data = single_house_data(2, 2, horizon=3)
    p = constant_mu_params(0.1)
    assert log_likelihood(data, p) == pytest.approx(math.log(0.9 * 0.1), rel=1e-12)


def test_alpha_zero_is_topology_independent():
    tl_args = ([2, NEVER, 5], [3, NEVER, 7], 12)
    homes = [make_household(f"h{k}", x=float(k)) for k in range(3)]
    ids = ["h0", "h1", "h2"]
    p = constant_mu_params(0.07, alpha=0.0)
    values = []
    for edges in ([], [(0, 1)], [(0, 1), (1, 2), (0, 2)]):
        net = make_network(3, edges)
        data = build_model_data(make_timeline(*tl_args), net, homes, [], ids, 12)
        values.append(log_likelihood(data, p))
    assert values[0] == pytest.approx(values[1], rel=1e-14)
    assert values[0] == pytest.approx(values[2], rel=1e-14)


def test_vectorized_matches_per_household_chain():
    rng = np.random.default_rng(17)
    homes = [make_household(f"h{k}", x=float(k), value=float(rng.normal(5e4, 2e4)),
                            outdoor_area=float(rng.uniform(100, 800)))
             for k in range(8)]
    net = make_network(8, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 7)])
    t_e = np.array([3, NEVER, 7, 1, NEVER, 12, 9, NEVER])
    t_i = np.array([5, NEVER, 8, 3, NEVER, 14, 9, NEVER])
    tl = make_timeline(t_e, t_i, horizon=15)
    data = build_model_data(tl, net, homes, ["value", "outdoor_area"],
                            [h.id for h in homes], tau_r=6, breakpoints=[1, 7])
    p = EpidemicParams(alpha=0.15, beta=[0.3, -0.2], lambda0=[0.02, 0.05],
                       breakpoints=[1, 7], tau_r=6)
    ref = 0.0
    for k, i in enumerate(data.scored_idx):
        if data.act_mask[k]:
            ref += log_activation_prob(int(i), int(data.event_month[k]), data, p)
        else:
            ref += log_never_activation_prob(int(i), data, p)
    assert log_likelihood(data, p) == pytest.approx(ref, rel=1e-13)


def test_two_node_enumeration_sums_to_one():
    homes = [make_household("h0"), make_household("h1", x=5.0)]
    net = make_network(2, [(0, 1)])
    p = EpidemicParams(alpha=0.3, beta=[], lambda0=[mu_to_lambda(0.2)],
                       breakpoints=[1], tau_r=1)
    total = 0.0
    outcomes = 0
    for te in itertools.product([1, 2, NEVER], repeat=2):
        t_e = np.array(te)
        t_i = np.where(t_e < NEVER, t_e, NEVER)
        tl = make_timeline(t_e, t_i, horizon=2)
        data = build_model_data(tl, net, homes, [], ["h0", "h1"], tau_r=1)
        total += math.exp(log_likelihood(data, p))
        outcomes += 1
    assert outcomes == 9
    assert total == pytest.approx(1.0, abs=1e-12)


def test_buffer_households_only_enter_via_neighbors():
    homes = [make_household("core"), make_household("buf", x=10.0)]
    net = make_network(2, [(0, 1)])
    tl = make_timeline([NEVER, 1], [NEVER, 1], horizon=4)
    p = constant_mu_params(0.1, alpha=0.25, tau_r=12)
    data_with_buffer = build_model_data(tl, net, homes, [], ["core"], tau_r=12)
    # scored set is only the core household
    assert list(data_with_buffer.scored_idx) == [0]
    # its term feels the buffer neighbor's conversion
    solo = build_model_data(tl, make_network(2, []), homes, [], ["core"], tau_r=12)
    assert log_likelihood(data_with_buffer, p) < log_likelihood(solo, p)


# --- SEI / SI reductions ----------------------------------------------------

def test_infinite_recovery_never_clamps():
    for t in (5, 20, 100):
        assert exposure_steps(2, t, NEVER) == max(t - 3, 0)


def independent_si_loglik(t_e, edges, alpha, mu, horizon):
    """Separately coded SI likelihood on a tiny network (lag 0, no recovery)."""
    n = len(t_e)
    nbrs = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    total = 0.0
    for i in range(n):
        months = range(1, horizon + 1) if t_e[i] == NEVER else range(1, t_e[i] + 1)
        for t in months:
            n_inf = sum(1 for k in nbrs[i] if t_e[k] < t and t <= t_e[k] + NEVER)
            surv = (1 - mu) * (1 - alpha) ** n_inf
            if t_e[i] == t:
                total += math.log(1 - surv)
            else:
                total += math.log(surv)
    return total


def test_si_reduction_matches_independent_implementation():
    homes = [make_household("h0"), make_household("h1", x=5.0)]
    net = make_network(2, [(0, 1)])
    alpha, mu, horizon = 0.2, 0.1, 4
    p = EpidemicParams(alpha=alpha, beta=[], lambda0=[mu_to_lambda(mu)],
                       breakpoints=[1], tau_r=NEVER)
    for te in itertools.product([1, 2, 3, NEVER], repeat=2):
        t_e = np.array(te)
        t_i = t_e.copy()  # exposed period of zero months: SI dynamics
        tl = make_timeline(t_e, t_i, horizon)
        data = build_model_data(tl, net, homes, [], ["h0", "h1"], tau_r=NEVER)
        ours = log_likelihood(data, p)
        ref = independent_si_loglik(list(te), [(0, 1)], alpha, mu, horizon)
        assert ours == pytest.approx(ref, rel=1e-12, abs=1e-12)


# --- hazard formulations ----------------------------------------------------

def test_no_neighbors_hazards_coincide_with_autoinfection():
    mu = autoinfection_prob(0.4, 0.03)
    assert hazard_rate("epidemic", 0.3, 0, 0.03, 0.4) == pytest.approx(mu, rel=1e-14)
    assert hazard_rate("additive_multiplicative", 0.3, 0, 0.03, 0.4) == pytest.approx(
        mu, rel=1e-14)


def test_mapping_identity_random_tuples():
    rng = np.random.default_rng(5)
    alpha = rng.uniform(0, 0.9, size=2000)
    n = rng.integers(0, 10, size=2000)
    lam = rng.uniform(1e-6, 0.5, size=2000)
    xb = rng.uniform(-3, 3, size=2000)
    epi = np.array([hazard_rate("epidemic", a, k, l, x)
                    for a, k, l, x in zip(alpha, n, lam, xb)])
    add = np.array([hazard_rate("additive_multiplicative", a, k, l, x)
                    for a, k, l, x in zip(alpha, n, lam, xb)])
    rel = np.abs(epi - add) / np.maximum(np.abs(epi), 1e-300)
    assert rel.max() <= 1e-14


def test_multiplicative_zero_baseline_kills_hazard():
    for n in (0, 1, 5, 50):
        assert hazard_rate("multiplicative", 0.9, n, 0.0, 2.0) == 0.0
    # while the superposition models keep the peer channel alive
    assert hazard_rate("epidemic", 0.9, 1, 0.0, 2.0) > 0.5


def test_unknown_formulation_tag_rejected():
    with pytest.raises(ValueError, match="formulation"):
        hazard_rate("cox", 0.1, 1, 0.1, 0.0)


# --- params & covariates ----------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        EpidemicParams(alpha=1.5, beta=[], lambda0=[0.1], breakpoints=[1], tau_r=12)
    with pytest.raises(ValueError):
        EpidemicParams(alpha=0.1, beta=[], lambda0=[-0.1], breakpoints=[1], tau_r=12)
    with pytest.raises(ValueError):
        EpidemicParams(alpha=0.1, beta=[], lambda0=[0.1, 0.2], breakpoints=[1, 1], tau_r=12)
    with pytest.raises(ValueError):
        EpidemicParams(alpha=0.1, beta=[], lambda0=[0.1], breakpoints=[2], tau_r=12)
    with pytest.raises(ValueError):
        EpidemicParams(alpha=0.1, beta=[], lambda0=[0.1], breakpoints=[1], tau_r=0)


def test_baseline_continues_past_last_breakpoint():
    p = EpidemicParams(alpha=0.0, beta=[], lambda0=[0.2, 0.05], breakpoints=[1, 10], tau_r=12)
    assert p.lambda_at(9) == 0.2
    assert p.lambda_at(10) == 0.05
    assert p.lambda_at(500) == 0.05


def test_covariate_standardization_and_reuse():
    homes = [make_household(f"h{k}", value=float(v), has_pool=bool(k % 2))
             for k, v in enumerate((1e4, 5e4, 9e4, 2e4))]
    X, stats = covariate_matrix(homes, ["value", "has_pool"])
    assert X[:, 0].mean() == pytest.approx(0.0, abs=1e-12)
    assert X[:, 0].std() == pytest.approx(1.0, rel=1e-12)
    assert set(np.unique(X[:, 1])) == {0.0, 1.0}  # booleans pass through
    X2, _ = covariate_matrix(homes[:2], ["value", "has_pool"], stats=stats)
    assert X2[0, 0] == pytest.approx((1e4 - stats.center[0]) / stats.scale[0])
    with pytest.raises(ValueError):
        covariate_matrix(homes, ["value"], stats=stats)
