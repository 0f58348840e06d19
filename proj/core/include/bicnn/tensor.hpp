#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bicnn::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with a gradient buffer of the same size.
///
/// Tensor is a reference-counted handle: copies alias the same storage, which
/// is what lets a Graph record an op and later write gradients back into the
/// parameters it read. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t size() const { return data_->values.size(); }

  // Handle semantics: constness of the handle does not extend to the storage.
  std::span<double> values() const { return data_->values; }
  std::span<double> grad() const { return data_->grad; }

  double& value(std::size_t i) const { return data_->values[i]; }
  /// Value of a single-element tensor.
  double item() const;

  void zero_grad();
  void fill(double v);
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
  };
  std::shared_ptr<Storage> data_;
};

/// Tape of operations recorded during a forward pass.
///
/// Nodes are appended in execution order, so the tape is topologically sorted
/// by construction. backward() walks it in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every tensor reachable from
  /// the node that produced `loss`. Gradients of leaf tensors accumulate;
  /// intermediate gradients are reset first so repeated calls are stable.
  /// Throws GraphNotFinalized when `loss` was not produced by this graph.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline void backward(Graph& graph, const Tensor& loss) { graph.backward(loss); }

enum class CrossEntropyMode {
  categorical,  // -(1/R) sum_i sum_p t ln y
  binary,       // -(1/R) sum_i sum_p [t ln y + (1-t) ln(1-y)]
};

enum class L2Mode {
  squared,  // eta * sum w^2
  literal,  // eta * ||W||_F
};

inline constexpr double kProbClamp = 1e-12;

// Operations. Each appends one node to `g` and returns a fresh output tensor.

/// Row gather: out[n] = table[indices[n]].
Tensor embed_lookup(Graph& g, const Tensor& table, std::span<const std::uint32_t> indices);

/// Single-filter sliding window over a sequence of word vectors (pre-activation):
/// out[m] = sum_k sum_d x[m+k, d] * w[k, d] + b[m].
Tensor conv_window(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);

/// F filters at once: x[N,D], w[F,K,D], b[F,N-K+1] -> [F, N-K+1]. Numerically
/// identical to stacking F conv_window calls; rows of x that are entirely zero
/// (padding) are skipped.
Tensor conv_bank(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(Graph& g, const Tensor& z);

/// Rank 1 [M] -> [1]; rank 2 [F, M] -> [F] (row-wise). Ties go to the lowest
/// index, which also receives the whole upstream gradient.
Tensor max_over_time(Graph& g, const Tensor& h);

/// Flattens and joins the inputs in order.
Tensor concat(Graph& g, std::span<const Tensor> parts);

/// y = softmax((hhat * mask) W + b). `mask` is treated as a constant.
Tensor dense_softmax(Graph& g, const Tensor& hhat, const Tensor& mask, const Tensor& w,
                     const Tensor& b);

/// Stacks R rank-1 tensors of length P into [R, P].
Tensor stack_rows(Graph& g, std::span<const Tensor> rows);

/// Mean cross-entropy over R rows. Probabilities are clamped to
/// [kProbClamp, 1 - kProbClamp] before the log. `targets` is a constant.
Tensor cross_entropy_loss(Graph& g, const Tensor& probs, const Tensor& targets,
                          CrossEntropyMode mode = CrossEntropyMode::categorical);

Tensor l2_penalty(Graph& g, const Tensor& w, double eta, L2Mode mode = L2Mode::squared);

/// Elementwise sum of two same-shape tensors.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);

/// Elementwise product with a constant mask (used for dropout).
Tensor mul_const(Graph& g, const Tensor& x, const Tensor& mask);

}  // namespace bicnn::ad
