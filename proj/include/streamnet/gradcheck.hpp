#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "streamnet/error.hpp"
#include "streamnet/graph.hpp"
#include "streamnet/model.hpp"
#include "streamnet/rng.hpp"
#include "streamnet/tensor.hpp"

// Central finite differences against analytic gradients. This is the
// independent oracle for the autodiff tape: it re-evaluates the loss from
// scratch and never touches the backward code path.

namespace streamnet::gradcheck {

struct Report {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_coordinate;
};

/// Worst relative error between analytic gradients and central differences
/// (f(t+e) - f(t-e)) / 2e, coordinate by coordinate, with denominator
/// max(|analytic|, |numeric|, 1e-8).
///
/// `loss` must be a pure function of the parameter tensors. Data with relu
/// kinks or pooling ties within epsilon of the evaluation point is the
/// caller's to avoid; the standard suite below pushes its random values away
/// from zero.
inline Report finite_difference_check(
    const std::function<double(std::span<const Tensor>)>& loss,
    std::vector<Tensor> params, std::span<const Tensor> analytic,
    double epsilon, const std::string& name = "gradcheck") {
  if (!(epsilon > 0.0)) throw ConfigError("gradcheck: epsilon must be > 0");
  if (params.size() != analytic.size()) {
    throw ShapeError("gradcheck: " + std::to_string(params.size()) +
                     " parameters vs " + std::to_string(analytic.size()) +
                     " gradients");
  }
  Report report{name, 0.0, 0, ""};
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0, n = params[p].numel(); i < n; ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + epsilon;
      const double up = loss(params);
      params[p][i] = saved - epsilon;
      const double down = loss(params);
      params[p][i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double exact = analytic[p][i];
      const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-8});
      const double rel = std::abs(numeric - exact) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_coordinate =
            "param " + std::to_string(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

namespace detail {

inline Tensor random_tensor(Shape shape, SplitMix64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0, n = t.numel(); i < n; ++i) {
    t[i] = rng.next_double(lo, hi);
  }
  return t;
}

// Keeps |v| >= margin so relu kinks and pooling near-ties sit further than
// any finite-difference step.
inline void push_from_zero(Tensor& t, double margin) {
  for (std::size_t i = 0, n = t.numel(); i < n; ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0.0 ? -margin : margin;
  }
}

}  // namespace detail

/// Per-layer finite-difference checks at small shapes ("inputs" are treated
/// as parameters so their gradients are covered too). Each builds the same
/// graph twice: once per finite-difference probe via `loss`, once recorded
/// for the analytic gradients.
inline std::vector<Report> run_layer_suite(double epsilon = 1e-5) {
  std::vector<Report> reports;
  SplitMix64 rng(20240117);

  // conv2d, same and valid padding.
  for (Padding padding : {Padding::kSame, Padding::kValid}) {
    Tensor x = detail::random_tensor({2, 3, 6, 6}, rng, -1.0, 1.0);
    Tensor k = detail::random_tensor({4, 3, 3, 3}, rng, -0.7, 0.7);
    Tensor b = detail::random_tensor({4}, rng, -0.5, 0.5);
    auto build = [padding](Graph& g, std::span<const Tensor> p) {
      NodeId out = g.conv2d(g.parameter(p[0]), g.parameter(p[1]),
                            g.parameter(p[2]), padding);
      return g.sum_squares_half(out);
    };
    auto loss = [&](std::span<const Tensor> p) {
      Graph g;
      return g.value(build(g, p))[0];
    };
    Graph g;
    NodeId xn = g.parameter(x), kn = g.parameter(k), bn = g.parameter(b);
    g.backward(g.sum_squares_half(g.conv2d(xn, kn, bn, padding)));
    std::vector<Tensor> analytic = {g.grad(xn), g.grad(kn), g.grad(bn)};
    reports.push_back(finite_difference_check(
        loss, {x, k, b}, analytic, epsilon,
        padding == Padding::kSame ? "conv2d(same)" : "conv2d(valid)"));
  }

  // relu, values pushed away from the kink.
  {
    Tensor x = detail::random_tensor({3, 4, 5, 2}, rng, -1.0, 1.0);
    detail::push_from_zero(x, 1e-2);
    Tensor w = detail::random_tensor(x.shape(), rng, -1.0, 1.0);
    auto loss = [&](std::span<const Tensor> p) {
      Graph g;
      return g.value(g.weighted_sum(g.relu(g.parameter(p[0])), w))[0];
    };
    Graph g;
    NodeId xn = g.parameter(x);
    g.backward(g.weighted_sum(g.relu(xn), w));
    std::vector<Tensor> analytic = {g.grad(xn)};
    reports.push_back(
        finite_difference_check(loss, {x}, analytic, epsilon, "relu"));
  }

  // maxpool2x2 on odd spatial sides; random values make ties improbable and
  // push_from_zero keeps margins comfortable.
  {
    Tensor x = detail::random_tensor({1, 3, 9, 9}, rng, -2.0, 2.0);
    detail::push_from_zero(x, 1e-2);
    Tensor w = detail::random_tensor({1, 3, 4, 4}, rng, -1.0, 1.0);
    auto loss = [&](std::span<const Tensor> p) {
      Graph g;
      return g.value(g.weighted_sum(g.maxpool2x2(g.parameter(p[0])), w))[0];
    };
    Graph g;
    NodeId xn = g.parameter(x);
    g.backward(g.weighted_sum(g.maxpool2x2(xn), w));
    std::vector<Tensor> analytic = {g.grad(xn)};
    reports.push_back(
        finite_difference_check(loss, {x}, analytic, epsilon, "maxpool2x2"));
  }

  // dense.
  {
    Tensor x = detail::random_tensor({3, 7}, rng, -1.0, 1.0);
    Tensor w = detail::random_tensor({7, 4}, rng, -1.0, 1.0);
    Tensor b = detail::random_tensor({4}, rng, -1.0, 1.0);
    auto loss = [&](std::span<const Tensor> p) {
      Graph g;
      return g.value(g.sum_squares_half(
          g.dense(g.parameter(p[0]), g.parameter(p[1]), g.parameter(p[2]))))[0];
    };
    Graph g;
    NodeId xn = g.parameter(x), wn = g.parameter(w), bn = g.parameter(b);
    g.backward(g.sum_squares_half(g.dense(xn, wn, bn)));
    std::vector<Tensor> analytic = {g.grad(xn), g.grad(wn), g.grad(bn)};
    reports.push_back(
        finite_difference_check(loss, {x, w, b}, analytic, epsilon, "dense"));
  }

  // softmax cross-entropy w.r.t. logits.
  {
    Tensor logits = detail::random_tensor({4, 6}, rng, -2.0, 2.0);
    std::vector<std::size_t> labels = {0, 3, 5, 2};
    auto loss = [&](std::span<const Tensor> p) {
      Graph g;
      return g.value(g.softmax_cross_entropy(g.parameter(p[0]), labels).loss)[0];
    };
    Graph g;
    NodeId ln = g.parameter(logits);
    g.backward(g.softmax_cross_entropy(ln, labels).loss);
    std::vector<Tensor> analytic = {g.grad(ln)};
    reports.push_back(finite_difference_check(loss, {logits}, analytic, epsilon,
                                              "softmax_cross_entropy"));
  }

  // concat of two feature blocks.
  {
    Tensor a = detail::random_tensor({3, 4}, rng, -1.0, 1.0);
    Tensor b = detail::random_tensor({3, 2}, rng, -1.0, 1.0);
    Tensor w = detail::random_tensor({3, 6}, rng, -1.0, 1.0);
    auto loss = [&](std::span<const Tensor> p) {
      Graph g;
      std::vector<NodeId> xs = {g.parameter(p[0]), g.parameter(p[1])};
      return g.value(g.weighted_sum(g.concat_features(xs), w))[0];
    };
    Graph g;
    NodeId an = g.parameter(a), bn = g.parameter(b);
    std::vector<NodeId> xs = {an, bn};
    g.backward(g.weighted_sum(g.concat_features(xs), w));
    std::vector<Tensor> analytic = {g.grad(an), g.grad(bn)};
    reports.push_back(
        finite_difference_check(loss, {a, b}, analytic, epsilon, "concat"));
  }

  return reports;
}

/// Finite-difference check of the full composed network (all five conv
/// blocks, flatten, head, softmax loss) at narrow widths on a 32x32 input -
/// the smallest side five pooling stages admit. Checks every parameter.
inline Report run_composed_network_check(double epsilon = 1e-5) {
  SplitMix64 rng(7151);
  model::ModelSpec spec;
  spec.in_channels = 3;
  spec.in_height = 32;
  spec.in_width = 32;
  spec.num_classes = 3;
  spec.blocks = {{2, 7}, {3, 5}, {4, 3}, {5, 1}, {3, 1}};
  model::ModelState state = model::init_state(spec, rng.next_u64());

  Tensor batch = detail::random_tensor({2, 3, 32, 32}, rng, 0.05, 1.0);
  std::vector<std::size_t> labels = {1, 2};

  std::vector<Tensor> params;
  params.reserve(state.params.size());
  for (const auto& p : state.params) params.push_back(p.value);

  auto loss = [&](std::span<const Tensor> p) {
    model::ModelState probe;
    for (std::size_t i = 0; i < p.size(); ++i) {
      probe.params.push_back({state.params[i].key, p[i]});
    }
    model::ForwardPass fp = model::build_forward(spec, probe, batch);
    return fp.graph.value(
        fp.graph.softmax_cross_entropy(fp.logits, labels).loss)[0];
  };

  model::ForwardPass fp = model::build_forward(spec, state, batch);
  fp.graph.backward(fp.graph.softmax_cross_entropy(fp.logits, labels).loss);
  std::vector<Tensor> analytic;
  for (NodeId id : fp.param_nodes) analytic.push_back(fp.graph.grad(id));

  return finite_difference_check(loss, std::move(params), analytic, epsilon,
                                 "composed simple convnet");
}

/// The whole gradient-check battery: per-layer suites plus the composed
/// network. Passing means every report's max_rel_error < 1e-4.
inline std::vector<Report> run_standard_suite(double epsilon = 1e-5) {
  std::vector<Report> reports = run_layer_suite(epsilon);
  reports.push_back(run_composed_network_check(epsilon));
  return reports;
}

}  // namespace streamnet::gradcheck
