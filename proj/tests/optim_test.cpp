#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "streamnet/optim.hpp"
#include "streamnet/rng.hpp"

using namespace streamnet;

namespace {

// Hand-rolled scalar Adam recurrence, kept deliberately separate from the
// implementation under test.
struct ScalarAdamOracle {
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double theta, double g, const AdamConfig& c) {
    ++t;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(c.beta1, t));
    const double v_hat = v / (1.0 - std::pow(c.beta2, t));
    return theta - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
};

}  // namespace

TEST(Adam, FirstStepMagnitudeIsLearningRateTimesSign) {
  const AdamConfig config{};  // paper defaults: lr 5e-4, beta1 .99, beta2 .9
  for (double g : {0.3, -1.7, 1e-3, -4e2}) {
    Tensor theta({1}, {1.0});
    Tensor grad({1}, {g});
    AdamState state;
    std::vector<Tensor*> params = {&theta};
    std::vector<Tensor> grads = {grad};
    adam_step(config, state, params, grads);
    const double delta = theta[0] - 1.0;
    // bias correction makes m_hat = g and v_hat = g^2 at t=1
    EXPECT_NEAR(delta, -config.learning_rate * (g > 0 ? 1.0 : -1.0),
                config.learning_rate * 1e-4);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  const AdamConfig config{};
  Tensor theta({3}, {1.0, -2.0, 0.5});
  AdamState state;
  for (int step = 0; step < 10; ++step) {
    Tensor grad = Tensor::zeros({3});
    std::vector<Tensor*> params = {&theta};
    std::vector<Tensor> grads = {grad};
    adam_step(config, state, params, grads);
  }
  EXPECT_DOUBLE_EQ(theta[0], 1.0);
  EXPECT_DOUBLE_EQ(theta[1], -2.0);
  EXPECT_DOUBLE_EQ(theta[2], 0.5);
}

TEST(Adam, ThreeStepsMatchScalarOracleOnQuadratic) {
  // minimize 0.5*theta^2, gradient = theta, paper hyperparameters
  const AdamConfig config{0.0005, 0.99, 0.9, 1e-8};
  Tensor theta({1}, {0.7});
  AdamState state;
  ScalarAdamOracle oracle;
  double expected = 0.7;
  for (int step = 0; step < 3; ++step) {
    const double g = expected;
    expected = oracle.step(expected, g, config);

    Tensor grad({1}, {theta[0]});
    std::vector<Tensor*> params = {&theta};
    std::vector<Tensor> grads = {grad};
    adam_step(config, state, params, grads);
    EXPECT_NEAR(theta[0], expected, 1e-12) << "step " << step + 1;
  }
}

TEST(Adam, UpdateMagnitudeStaysBounded) {
  const AdamConfig config{};
  SplitMix64 rng(42);
  Tensor theta({64});
  AdamState state;
  for (int step = 0; step < 50; ++step) {
    Tensor grad({64});
    for (std::size_t i = 0; i < 64; ++i) grad[i] = rng.next_double(-100.0, 100.0);
    Tensor before = theta;
    std::vector<Tensor*> params = {&theta};
    std::vector<Tensor> grads = {grad};
    adam_step(config, state, params, grads);
    for (std::size_t i = 0; i < 64; ++i) {
      EXPECT_LE(std::abs(theta[i] - before[i]), 10.0 * config.learning_rate)
          << "step " << step << " coordinate " << i;
    }
  }
}

TEST(Adam, ParameterOrderIndependence) {
  const AdamConfig config{};
  SplitMix64 rng(7);
  Tensor a0({5}), b0({3});
  for (std::size_t i = 0; i < 5; ++i) a0[i] = rng.next_double(-1, 1);
  for (std::size_t i = 0; i < 3; ++i) b0[i] = rng.next_double(-1, 1);
  Tensor ga({5}), gb({3});
  for (std::size_t i = 0; i < 5; ++i) ga[i] = rng.next_double(-1, 1);
  for (std::size_t i = 0; i < 3; ++i) gb[i] = rng.next_double(-1, 1);

  Tensor a1 = a0, b1 = b0;
  AdamState s1;
  std::vector<Tensor*> p1 = {&a1, &b1};
  std::vector<Tensor> g1 = {ga, gb};
  adam_step(config, s1, p1, g1);

  Tensor a2 = a0, b2 = b0;
  AdamState s2;
  std::vector<Tensor*> p2 = {&b2, &a2};
  std::vector<Tensor> g2 = {gb, ga};
  adam_step(config, s2, p2, g2);

  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a1[i], a2[i]);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(b1[i], b2[i]);
}

TEST(Adam, ConventionalBetaOrderingIsSelectable) {
  const AdamConfig conventional{0.001, 0.9, 0.999, 1e-8};
  conventional.validate();
  Tensor theta({1}, {1.0});
  AdamState state;
  ScalarAdamOracle oracle;
  const double expected = oracle.step(1.0, 0.5, conventional);
  Tensor grad({1}, {0.5});
  std::vector<Tensor*> params = {&theta};
  std::vector<Tensor> grads = {grad};
  adam_step(conventional, state, params, grads);
  EXPECT_NEAR(theta[0], expected, 1e-15);
}

TEST(Adam, NonFiniteGradientAbortsWithKeyAndStep) {
  const AdamConfig config{};
  Tensor theta({2}, {1.0, 2.0});
  Tensor grad({2}, {0.1, std::numeric_limits<double>::quiet_NaN()});
  AdamState state;
  std::vector<Tensor*> params = {&theta};
  std::vector<Tensor> grads = {grad};
  std::vector<std::string> keys = {"s0.conv1.kernel"};
  try {
    adam_step(config, state, params, grads, keys);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string message = e.what();
    EXPECT_NE(message.find("s0.conv1.kernel"), std::string::npos);
    EXPECT_NE(message.find("step 1"), std::string::npos);
  }
}

TEST(Adam, RejectsInvalidHyperparameters) {
  AdamState state;
  Tensor theta({1}), grad({1});
  std::vector<Tensor*> params = {&theta};
  std::vector<Tensor> grads = {grad};
  EXPECT_THROW(adam_step({-0.1, 0.9, 0.99, 1e-8}, state, params, grads), ConfigError);
  EXPECT_THROW(adam_step({0.1, 1.0, 0.99, 1e-8}, state, params, grads), ConfigError);
  EXPECT_THROW(adam_step({0.1, 0.9, 0.99, 0.0}, state, params, grads), ConfigError);
}
