#pragma once

#include <cstdlib>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streamnet/error.hpp"
#include "streamnet/kernels.hpp"
#include "streamnet/tensor.hpp"

namespace streamnet {

using NodeId = std::size_t;

/// Reverse-mode autodiff tape. Operations append nodes in topological order;
/// backward() walks the tape in reverse, accumulating gradients. A graph is
/// built for one forward pass and is single-threaded at the node level;
/// kernels may parallelize internally (see kernels.hpp), and distinct graphs
/// are independent.
class Graph {
 public:
  /// recording=false skips backward bookkeeping (inference mode).
  explicit Graph(bool recording = true) : recording_(recording) {
    paranoid_ = std::getenv("STREAMNET_PARANOID") != nullptr;
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId input(Tensor value) { return add_leaf(std::move(value), false); }

  NodeId parameter(Tensor value) { return add_leaf(std::move(value), true); }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }

  /// Gradient of the last backward() target with respect to node `id`.
  const Tensor& grad(NodeId id) const {
    const Node& node = nodes_[id];
    if (node.grad.numel() == 0) {
      throw Error("autodiff", "no gradient recorded for node " + std::to_string(id));
    }
    return node.grad;
  }

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Cross-correlation plus per-channel bias. input [N,Cin,H,W],
  /// kernels [Cout,Cin,kh,kw], bias [Cout].
  NodeId conv2d(NodeId x, NodeId k, NodeId b, Padding padding) {
    require_rank(value(x), 4, "conv2d input");
    require_rank(value(k), 4, "conv2d kernels");
    require_rank(value(b), 1, "conv2d bias");
    if (value(b).dim(0) != value(k).dim(0)) {
      throw ShapeError("conv2d: bias has " + std::to_string(value(b).dim(0)) +
                       " entries for " + std::to_string(value(k).dim(0)) +
                       " output channels");
    }
    const kernels::Conv2dDims dims =
        kernels::conv2d_dims(value(x).shape(), value(k).shape(), padding);
    Tensor out({value(x).dim(0), dims.out_c, dims.out_h, dims.out_w});
    kernels::conv2d_forward(value(x), value(k), value(b), dims, out);
    return add_op(std::move(out), {x, k, b},
                  [dims](Graph& g, NodeId self) {
                    const auto& in = g.nodes_[self].inputs;
                    const Tensor& dy = g.nodes_[self].grad;
                    Tensor* dx = g.wants_grad(in[0]) ? &g.grad_acc(in[0]) : nullptr;
                    kernels::conv2d_backward(g.value(in[0]), g.value(in[1]), dims,
                                             dy, dx, g.grad_acc(in[1]),
                                             g.grad_acc(in[2]));
                  });
  }

  /// Elementwise max(0, x). Subgradient at 0 is 0.
  NodeId relu(NodeId x) {
    Tensor out(value(x).shape());
    const double* src = value(x).data();
    double* dst = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) {
      dst[i] = src[i] > 0.0 ? src[i] : 0.0;
    }
    return add_op(std::move(out), {x}, [](Graph& g, NodeId self) {
      const NodeId x_id = g.nodes_[self].inputs[0];
      if (!g.wants_grad(x_id)) return;
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& xv = g.value(x_id);
      Tensor& dx = g.grad_acc(x_id);
      for (std::size_t i = 0, n = dy.numel(); i < n; ++i) {
        if (xv[i] > 0.0) dx[i] += dy[i];
      }
    });
  }

  /// Non-overlapping 2x2 window maxima, stride 2. Requires H,W >= 2; an odd
  /// trailing row/column is dropped.
  NodeId maxpool2x2(NodeId x) {
    require_rank(value(x), 4, "maxpool2x2 input");
    const Shape& s = value(x).shape();
    if (s[2] < 2 || s[3] < 2) {
      throw SpatialCollapseError(
          "maxpool2x2: input " + shape_to_string(s) +
          " has a spatial side below 2; the network is too deep for this input size");
    }
    Tensor out({s[0], s[1], s[2] / 2, s[3] / 2});
    std::vector<std::uint8_t> argmax(out.numel());
    kernels::maxpool2x2_forward(value(x), out, argmax);
    return add_op(std::move(out), {x},
                  [argmax = std::move(argmax)](Graph& g, NodeId self) {
                    const NodeId x_id = g.nodes_[self].inputs[0];
                    if (!g.wants_grad(x_id)) return;
                    kernels::maxpool2x2_backward(g.value(x_id), g.nodes_[self].grad,
                                                 argmax, g.grad_acc(x_id));
                  });
  }

  /// [N,C,H,W] -> [N, C*H*W]; same storage order, so this is a reshape.
  NodeId flatten(NodeId x) {
    require_rank(value(x), 4, "flatten input");
    const Shape& s = value(x).shape();
    Tensor out = value(x).reshaped({s[0], s[1] * s[2] * s[3]});
    return add_op(std::move(out), {x}, [](Graph& g, NodeId self) {
      const NodeId x_id = g.nodes_[self].inputs[0];
      if (!g.wants_grad(x_id)) return;
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& dx = g.grad_acc(x_id);
      for (std::size_t i = 0, n = dy.numel(); i < n; ++i) dx[i] += dy[i];
    });
  }

  /// Concatenates [N,Fi] feature matrices along the feature axis, in the
  /// order given.
  NodeId concat_features(std::span<const NodeId> xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const std::size_t batch = value(xs[0]).dim(0);
    std::size_t total = 0;
    for (NodeId id : xs) {
      require_rank(value(id), 2, "concat input");
      if (value(id).dim(0) != batch) {
        throw ShapeError("concat: batch sizes differ (" + std::to_string(batch) +
                         " vs " + std::to_string(value(id).dim(0)) + ")");
      }
      total += value(id).dim(1);
    }
    Tensor out({batch, total});
    std::size_t offset = 0;
    for (NodeId id : xs) {
      const Tensor& v = value(id);
      const std::size_t f = v.dim(1);
      for (std::size_t n = 0; n < batch; ++n) {
        std::memcpy(out.data() + n * total + offset, v.data() + n * f,
                    f * sizeof(double));
      }
      offset += f;
    }
    std::vector<NodeId> inputs(xs.begin(), xs.end());
    return add_op(std::move(out), std::move(inputs), [](Graph& g, NodeId self) {
      const auto& in = g.nodes_[self].inputs;
      const Tensor& dy = g.nodes_[self].grad;
      const std::size_t batch = dy.dim(0);
      const std::size_t total = dy.dim(1);
      std::size_t offset = 0;
      for (NodeId id : in) {
        const std::size_t f = g.value(id).dim(1);
        if (g.wants_grad(id)) {
          Tensor& dx = g.grad_acc(id);
          for (std::size_t n = 0; n < batch; ++n) {
            const double* src = dy.data() + n * total + offset;
            double* dst = dx.data() + n * f;
            for (std::size_t j = 0; j < f; ++j) dst[j] += src[j];
          }
        }
        offset += f;
      }
    });
  }

  /// Affine map: out[N,K] = x[N,F] * w[F,K] + b[K].
  NodeId dense(NodeId x, NodeId w, NodeId b) {
    require_rank(value(x), 2, "dense input");
    require_rank(value(w), 2, "dense weights");
    require_rank(value(b), 1, "dense bias");
    const std::size_t batch = value(x).dim(0), feat = value(x).dim(1);
    const std::size_t out_f = value(w).dim(1);
    if (value(w).dim(0) != feat) {
      throw ShapeError("dense: input has " + std::to_string(feat) +
                       " features but weights expect " +
                       std::to_string(value(w).dim(0)));
    }
    if (value(b).dim(0) != out_f) {
      throw ShapeError("dense: bias has " + std::to_string(value(b).dim(0)) +
                       " entries for " + std::to_string(out_f) + " outputs");
    }
    Tensor out({batch, out_f});
    kernels::gemm(value(x).data(), feat, value(w).data(), out_f, out.data(),
                  out_f, batch, feat, out_f);
    for (std::size_t n = 0; n < batch; ++n) {
      double* row = out.data() + n * out_f;
      const double* bias = value(b).data();
      for (std::size_t k = 0; k < out_f; ++k) row[k] += bias[k];
    }
    return add_op(std::move(out), {x, w, b}, [](Graph& g, NodeId self) {
      const auto& in = g.nodes_[self].inputs;
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& xv = g.value(in[0]);
      const Tensor& wv = g.value(in[1]);
      const std::size_t batch = xv.dim(0), feat = xv.dim(1), out_f = wv.dim(1);
      if (g.wants_grad(in[0])) {
        kernels::gemm_nt_acc(dy.data(), out_f, wv.data(), out_f,
                             g.grad_acc(in[0]).data(), feat, batch, out_f, feat);
      }
      if (g.wants_grad(in[1])) {
        kernels::gemm_tn_acc(xv.data(), feat, dy.data(), out_f,
                             g.grad_acc(in[1]).data(), out_f, batch, feat, out_f);
      }
      if (g.wants_grad(in[2])) {
        Tensor& db = g.grad_acc(in[2]);
        for (std::size_t n = 0; n < batch; ++n) {
          const double* row = dy.data() + n * out_f;
          for (std::size_t k = 0; k < out_f; ++k) db[k] += row[k];
        }
      }
    });
  }

  /// Scalar sum of all elements.
  NodeId sum(NodeId x) {
    double s = 0.0;
    for (std::size_t i = 0, n = value(x).numel(); i < n; ++i) s += value(x)[i];
    return add_op(Tensor::scalar(s), {x}, [](Graph& g, NodeId self) {
      const NodeId x_id = g.nodes_[self].inputs[0];
      if (!g.wants_grad(x_id)) return;
      const double gy = g.nodes_[self].grad[0];
      Tensor& dx = g.grad_acc(x_id);
      for (std::size_t i = 0, n = dx.numel(); i < n; ++i) dx[i] += gy;
    });
  }

  /// Scalar 0.5 * sum(x^2); gradient is x itself.
  NodeId sum_squares_half(NodeId x) {
    double s = 0.0;
    for (std::size_t i = 0, n = value(x).numel(); i < n; ++i) {
      s += value(x)[i] * value(x)[i];
    }
    return add_op(Tensor::scalar(0.5 * s), {x}, [](Graph& g, NodeId self) {
      const NodeId x_id = g.nodes_[self].inputs[0];
      if (!g.wants_grad(x_id)) return;
      const double gy = g.nodes_[self].grad[0];
      const Tensor& xv = g.value(x_id);
      Tensor& dx = g.grad_acc(x_id);
      for (std::size_t i = 0, n = dx.numel(); i < n; ++i) dx[i] += gy * xv[i];
    });
  }

  /// Scalar sum(weights * x) for a fixed weight tensor (a linear readout for
  /// gradient checks).
  NodeId weighted_sum(NodeId x, Tensor weights) {
    if (!value(x).same_shape(weights)) {
      throw ShapeError("weighted_sum: weights " + shape_to_string(weights.shape()) +
                       " vs input " + shape_to_string(value(x).shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0, n = weights.numel(); i < n; ++i) {
      s += weights[i] * value(x)[i];
    }
    return add_op(Tensor::scalar(s), {x},
                  [w = std::move(weights)](Graph& g, NodeId self) {
                    const NodeId x_id = g.nodes_[self].inputs[0];
                    if (!g.wants_grad(x_id)) return;
                    const double gy = g.nodes_[self].grad[0];
                    Tensor& dx = g.grad_acc(x_id);
                    for (std::size_t i = 0, n = dx.numel(); i < n; ++i) {
                      dx[i] += gy * w[i];
                    }
                  });
  }

  struct SoftmaxLoss {
    NodeId loss;           ///< scalar node: mean negative log-likelihood
    Tensor probabilities;  ///< [N,K] softmax rows
  };

  /// Numerically stabilized softmax + mean cross-entropy against class
  /// indices. Backward yields (p - onehot)/N.
  SoftmaxLoss softmax_cross_entropy(NodeId logits,
                                    std::span<const std::size_t> labels) {
    require_rank(value(logits), 2, "softmax logits");
    const std::size_t batch = value(logits).dim(0);
    const std::size_t classes = value(logits).dim(1);
    if (labels.size() != batch) {
      throw ShapeError("softmax: " + std::to_string(labels.size()) +
                       " labels for batch of " + std::to_string(batch));
    }
    for (std::size_t n = 0; n < batch; ++n) {
      if (labels[n] >= classes) {
        throw Error("label", "label " + std::to_string(labels[n]) +
                                 " out of range for " + std::to_string(classes) +
                                 " classes (sample " + std::to_string(n) + ")");
      }
    }
    Tensor probs({batch, classes});
    double loss_sum = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* row = value(logits).data() + n * classes;
      double* p = probs.data() + n * classes;
      double m = row[0];
      for (std::size_t k = 1; k < classes; ++k) m = std::max(m, row[k]);
      double z = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        p[k] = std::exp(row[k] - m);
        z += p[k];
      }
      for (std::size_t k = 0; k < classes; ++k) p[k] /= z;
      loss_sum += -(row[labels[n]] - m - std::log(z));
    }
    Tensor loss_value = Tensor::scalar(loss_sum / static_cast<double>(batch));
    std::vector<std::size_t> label_copy(labels.begin(), labels.end());
    NodeId loss = add_op(
        std::move(loss_value), {logits},
        [probs, label_copy = std::move(label_copy)](Graph& g, NodeId self) {
          const NodeId logits_id = g.nodes_[self].inputs[0];
          if (!g.wants_grad(logits_id)) return;
          const double scale = g.nodes_[self].grad[0] /
                               static_cast<double>(probs.dim(0));
          Tensor& dx = g.grad_acc(logits_id);
          const std::size_t classes = probs.dim(1);
          for (std::size_t n = 0; n < probs.dim(0); ++n) {
            const double* p = probs.data() + n * classes;
            double* d = dx.data() + n * classes;
            for (std::size_t k = 0; k < classes; ++k) d[k] += scale * p[k];
            d[label_copy[n]] -= scale;
          }
        });
    return {loss, std::move(probs)};
  }

  /// Reverse accumulation from a scalar loss node. Deterministic: nodes run
  /// in strict reverse insertion order. One-shot per graph.
  void backward(NodeId loss) {
    if (!recording_) {
      throw Error("autodiff", "backward on a non-recording graph");
    }
    if (backward_run_) {
      throw Error("autodiff", "backward already ran on this graph");
    }
    backward_run_ = true;
    if (value(loss).numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_to_string(value(loss).shape()));
    }
    grad_acc(loss)[0] = 1.0;
    for (std::size_t i = loss + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward_fn && node.grad.numel() != 0) {
        node.backward_fn(*this, i);
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> backward_fn;
    bool needs_grad = false;
    bool trainable = false;
  };

  NodeId add_leaf(Tensor value, bool trainable) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = trainable && recording_;
    node.trainable = trainable;
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  NodeId add_op(Tensor value, std::vector<NodeId> inputs,
                std::function<void(Graph&, NodeId)> backward_fn) {
    if (paranoid_ && !value.all_finite()) {
      throw NumericError("non-finite value in op output (node " +
                         std::to_string(nodes_.size()) + ")");
    }
    Node node;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    if (recording_) {
      for (NodeId id : node.inputs) {
        if (nodes_[id].needs_grad) {
          node.needs_grad = true;
          break;
        }
      }
      if (node.needs_grad) node.backward_fn = std::move(backward_fn);
    }
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  bool wants_grad(NodeId id) const { return nodes_[id].needs_grad; }

  Tensor& grad_acc(NodeId id) {
    Node& node = nodes_[id];
    if (node.grad.numel() == 0) node.grad = Tensor(node.value.shape());
    return node.grad;
  }

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_run_ = false;
  bool paranoid_ = false;
};

}  // namespace streamnet
