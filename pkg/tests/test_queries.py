import numpy as np
import pytest
from scipy.stats import norm

from dynamics import SystemModel
from exceptions import BeliefError, InvalidArgumentError, InvalidQueryError
from kalman import BeliefState, Phase, posterior_covariance
from queries import (CountRange, Max, Mean, State, Variance, estimate, evaluate,
                     expected_posterior_mse, parse_query, sensor_vois, voi)


@pytest.mark.parametrize("text,expected", [
    ('state', State()),
    ('MEAN', Mean()),
    ('avg', Mean()),
    ('var', Variance()),
    ('max', Max()),
    ('cnt', CountRange()),
    ('cnt[-1, 2.5]', CountRange(a=-1.0, b=2.5)),
])
def test_parse_query(text, expected):
    assert parse_query(text) == expected


@pytest.mark.parametrize("text", ['median', 'cnt[2,1]', 'cnt[x,1]'])
def test_parse_query_rejects(text):
    with pytest.raises(InvalidQueryError):
        parse_query(text)


def test_count_label_and_closed_interval():
    kind = CountRange(a=-5.0, b=0.0)
    assert kind.label == 'cnt[-5,0]'
    assert evaluate(kind, [-5.0, 0.0, 0.1, -5.1, -2.0]) == 3.0


def test_exact_evaluation():
    x = np.array([1.0, 3.0, -2.0, 6.0])
    np.testing.assert_array_equal(evaluate(State(), x), x)
    assert evaluate(Mean(), x) == pytest.approx(2.0)
    assert evaluate(Max(), x) == 6.0
    assert evaluate(Variance(), x) == pytest.approx(np.var(x, ddof=1))


def test_variance_needs_two_components():
    with pytest.raises(InvalidQueryError):
        estimate(Variance(), BeliefState(x_hat=np.zeros(1), psi=np.eye(1)))


def test_closed_forms():
    psi = np.array([[2.0, 0.5], [0.5, 1.0]])
    belief = BeliefState(x_hat=np.array([1.0, 3.0]), psi=psi)
    state = estimate(State(), belief)
    np.testing.assert_array_equal(state.value, [1.0, 3.0])
    assert state.expected_mse == pytest.approx(3.0)
    mean = estimate(Mean(), belief)
    assert mean.value == pytest.approx(2.0)
    assert mean.expected_mse == pytest.approx(4.0 / 4.0)


def test_zero_covariance_is_exact():
    belief = BeliefState(x_hat=np.array([-1.0, 0.5, -6.0]), psi=np.zeros((3, 3)))
    result = estimate(CountRange(), belief, 10, np.random.default_rng(0))
    assert result.value == 1.0
    assert result.expected_mse == 0.0


def test_count_estimate_matches_bernoulli_sum():
    x_hat = np.array([-2.0, 0.5, -6.0])
    sd = np.array([1.0, 0.7, 2.0])
    p = norm.cdf((0.0 - x_hat) / sd) - norm.cdf((-5.0 - x_hat) / sd)
    belief = BeliefState(x_hat=x_hat, psi=np.diag(sd ** 2))
    result = estimate(CountRange(), belief, 200000, np.random.default_rng(1))
    assert result.value == pytest.approx(p.sum(), abs=0.01)
    assert result.expected_mse == pytest.approx(np.sum(p * (1 - p)), abs=0.01)


def test_max_of_two_iid_standard_normals():
    belief = BeliefState(x_hat=np.zeros(2), psi=np.eye(2))
    result = estimate(Max(), belief, 200000, np.random.default_rng(2))
    assert result.value == pytest.approx(1.0 / np.sqrt(np.pi), abs=0.01)
    assert result.expected_mse == pytest.approx(1.0 - 1.0 / np.pi, abs=0.01)


def test_variance_conditional_mean_matches_sampling():
    x_hat = np.array([0.5, -1.0, 2.0])
    psi = np.array([[1.0, 0.3, 0.0], [0.3, 2.0, 0.4], [0.0, 0.4, 0.5]])
    draws = np.random.default_rng(3).multivariate_normal(x_hat, psi, size=200000)
    assert Variance().conditional_mean(x_hat, psi) == pytest.approx(np.var(draws, axis=1, ddof=1).mean(), rel=0.01)


def test_estimate_needs_samples_for_sampled_queries():
    belief = BeliefState(x_hat=np.zeros(2), psi=np.eye(2))
    with pytest.raises(InvalidArgumentError):
        estimate(Max(), belief, 0)


def test_invalid_belief():
    with pytest.raises(BeliefError):
        estimate(Mean(), BeliefState(x_hat=np.zeros(2), psi=np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(BeliefError):
        estimate(Mean(), BeliefState(x_hat=np.array([np.nan, 0.0]), psi=np.eye(2)))


@pytest.fixture
def two_sensor_model():
    return SystemModel(A=np.eye(2) * 0.5, H=np.eye(2), sigma_v=np.eye(2), sigma_w=np.eye(2), epsilon=[0.0, 0.5])


def test_state_voi_is_trace_reduction(two_sensor_model):
    prior = BeliefState(x_hat=np.zeros(2), psi=np.diag([2.0, 4.0]), phase=Phase.PRIOR)
    # poll sensor 0: 2 -> 2/3; sensor 1 halves the gain of 4 -> 0.8 by its erasure rate
    assert voi(State(), prior, two_sensor_model, 0) == pytest.approx(4.0 / 3.0)
    assert voi(State(), prior, two_sensor_model, 1) == pytest.approx(0.5 * 3.2)


def test_voi_is_zero_when_nothing_can_be_learned(two_sensor_model):
    certain = BeliefState(x_hat=np.ones(2), psi=np.zeros((2, 2)), phase=Phase.PRIOR)
    assert voi(Max(), certain, two_sensor_model, 0) == 0.0
    lossy = SystemModel(A=np.eye(2) * 0.5, H=np.eye(2), sigma_v=np.eye(2), sigma_w=np.eye(2), epsilon=[1.0, 0.0])
    prior = BeliefState(x_hat=np.zeros(2), psi=np.eye(2), phase=Phase.PRIOR)
    assert voi(Max(), prior, lossy, 0) == 0.0


def test_mean_voi_matches_closed_form(two_sensor_model):
    prior = BeliefState(x_hat=np.zeros(2), psi=np.array([[2.0, 0.5], [0.5, 1.0]]), phase=Phase.PRIOR)
    post = posterior_covariance(two_sensor_model, prior, 0)
    assert voi(Mean(), prior, two_sensor_model, 0) == pytest.approx((prior.psi.sum() - post.sum()) / 4.0)


def test_sampled_voi_is_positive_for_informative_sensor(two_sensor_model):
    prior = BeliefState(x_hat=np.array([-1.0, -3.0]), psi=np.diag([3.0, 3.0]), phase=Phase.PRIOR)
    theta = voi(CountRange(), prior, two_sensor_model, 0, sample_count=100, rng=np.random.default_rng(4),
                inner_samples=400)
    assert theta > 0.0


def test_expected_posterior_mse_is_reproducible(two_sensor_model):
    prior = BeliefState(x_hat=np.zeros(2), psi=np.eye(2), phase=Phase.PRIOR)
    a = expected_posterior_mse(Max(), prior, two_sensor_model, 1, 20, 50, np.random.default_rng(9))
    b = expected_posterior_mse(Max(), prior, two_sensor_model, 1, 20, 50, np.random.default_rng(9))
    assert a == b
    with pytest.raises(InvalidArgumentError):
        expected_posterior_mse(Max(), prior, two_sensor_model, 1, 0, 50, np.random.default_rng(9))


def test_sensor_vois_match_single_sensor_values(two_sensor_model):
    prior = BeliefState(x_hat=np.zeros(2), psi=np.array([[2.0, 0.5], [0.5, 4.0]]), phase=Phase.PRIOR)
    thetas = sensor_vois(State(), prior, two_sensor_model)
    assert thetas.tolist() == pytest.approx([voi(State(), prior, two_sensor_model, n) for n in range(2)])
    sampled = sensor_vois(Max(), prior, two_sensor_model, sample_count=50, inner_samples=4000,
                          rng=np.random.default_rng(2))
    assert sampled.shape == (2,) and np.all(sampled > 0.0)
    again = sensor_vois(Max(), prior, two_sensor_model, sample_count=50, inner_samples=4000,
                        rng=np.random.default_rng(2))
    np.testing.assert_array_equal(sampled, again)


def test_count_estimate_matches_the_gaussian_cdf_on_random_beliefs():
    rng = np.random.default_rng(31)
    kind = CountRange(-5.0, 0.0)
    for _ in range(50):
        mu, sd = rng.uniform(-7.0, 2.0), rng.uniform(0.2, 3.0)
        belief = BeliefState(x_hat=np.array([mu]), psi=np.array([[sd ** 2]]))
        expected = norm.cdf(0.0, mu, sd) - norm.cdf(-5.0, mu, sd)
        answer = estimate(kind, belief, 100_000, rng)
        assert answer.value == pytest.approx(expected, abs=0.01)
        assert answer.expected_mse == pytest.approx(expected * (1 - expected), abs=0.01)


def test_variance_closed_form_mean_on_random_five_dimensional_beliefs():
    rng = np.random.default_rng(32)
    kind = Variance()
    for _ in range(10):
        root = rng.normal(size=(5, 5)) / np.sqrt(5)
        psi = root @ root.T + 0.1 * np.eye(5)
        x_hat = rng.normal(size=5)
        draws = rng.multivariate_normal(x_hat, psi, size=1_000_000)
        assert kind.conditional_mean(x_hat, psi) == pytest.approx(np.mean(kind.evaluate(draws)), abs=0.01)


@pytest.mark.parametrize("kind", [State(), Mean()])
def test_closed_forms_agree_with_monte_carlo(kind):
    rng = np.random.default_rng(33)
    root = rng.normal(size=(4, 4))
    belief = BeliefState(x_hat=rng.normal(size=4), psi=root @ root.T + 0.5 * np.eye(4))
    answer = estimate(kind, belief)
    draws = rng.multivariate_normal(belief.x_hat, belief.psi, size=200_000)
    errors = ((kind.evaluate(draws) - answer.value) ** 2).reshape(len(draws), -1).sum(axis=1)
    standard_error = errors.std() / np.sqrt(len(errors))
    assert abs(errors.mean() - answer.expected_mse) < 3 * standard_error
