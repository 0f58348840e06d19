#include "bicnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bicnn/errors.hpp"

namespace bicnn::ad {
namespace {

// Four independent partial sums; keeps the FP pipeline busy without
// reassociation flags.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

double clamp_prob(double y) { return std::clamp(y, kProbClamp, 1.0 - kProbClamp); }
bool inside_clamp(double y) { return y > kProbClamp && y < 1.0 - kProbClamp; }

// Shared kernel for conv_window / conv_bank. w is [F, K, D] flattened.
Tensor conv_impl(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b, std::size_t filters,
                 std::size_t kernel, Shape out_shape) {
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  const std::size_t m = n - kernel + 1;

  std::vector<char> nonzero(n, 0);
  {
    const auto xv = x.values();
    for (std::size_t row = 0; row < n; ++row) {
      const double* xr = xv.data() + row * d;
      nonzero[row] = std::any_of(xr, xr + d, [](double v) { return v != 0.0; }) ? 1 : 0;
    }
  }

  Tensor out(std::move(out_shape));
  {
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t f = 0; f < filters; ++f) {
      const double* wf = wv + f * kernel * d;
      for (std::size_t pos = 0; pos < m; ++pos) {
        double acc = bv[f * m + pos];
        for (std::size_t k = 0; k < kernel; ++k) {
          const std::size_t row = pos + k;
          if (nonzero[row]) acc += dot(xv + row * d, wf + k * d, d);
        }
        ov[f * m + pos] = acc;
      }
    }
  }

  g.record({x, w, b}, out,
           [x, w, b, out, filters, kernel, n, d, m, nonzero = std::move(nonzero)]() mutable {
             const double* go = out.grad().data();
             const double* xv = x.values().data();
             const double* wv = w.values().data();
             double* gx = x.grad().data();
             double* gw = w.grad().data();
             double* gb = b.grad().data();
             for (std::size_t f = 0; f < filters; ++f) {
               for (std::size_t pos = 0; pos < m; ++pos) {
                 const double up = go[f * m + pos];
                 if (up == 0.0) continue;
                 gb[f * m + pos] += up;
                 for (std::size_t k = 0; k < kernel; ++k) {
                   const std::size_t row = pos + k;
                   const std::size_t widx = (f * kernel + k) * d;
                   if (nonzero[row]) axpy(up, xv + row * d, gw + widx, d);
                   axpy(up, wv + widx, gx + row * d, d);
                 }
               }
             }
             (void)n;
           });
  return out;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Tensor ----------------------------------------------------------------------

Tensor::Tensor(Shape shape) {
  require(!shape.empty(), "tensor needs at least one dimension");
  for (const auto dim : shape) require(dim >= 1, "tensor dims must be >= 1, got " + shape_string(shape));
  const auto n = shape_size(shape);
  data_ = std::make_shared<Storage>(Storage{std::move(shape), std::vector<double>(n, 0.0),
                                            std::vector<double>(n, 0.0)});
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
  require(values.size() == data_->values.size(),
          "value count " + std::to_string(values.size()) + " does not match shape " +
              shape_string(data_->shape));
  data_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  require(rows.size() > 0, "matrix needs rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    require(r.size() == cols, "ragged matrix literal");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(flat));
}

double Tensor::item() const {
  require(size() == 1, "item() on tensor of shape " + shape_string(shape()));
  return data_->values[0];
}

void Tensor::zero_grad() { std::fill(data_->grad.begin(), data_->grad.end(), 0.0); }

void Tensor::fill(double v) { std::fill(data_->values.begin(), data_->values.end(), v); }

Tensor Tensor::clone() const {
  Tensor t(data_->shape, data_->values);
  std::copy(data_->grad.begin(), data_->grad.end(), t.data_->grad.begin());
  return t;
}

// Graph -----------------------------------------------------------------------

void Graph::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphNotFinalized("loss tensor is undefined");
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& node) { return node.output.same_storage(loss); });
  if (it == nodes_.rend()) throw GraphNotFinalized("loss was not produced by this graph");
  require(loss.size() == 1, "backward() needs a scalar loss, got " + shape_string(loss.shape()));

  for (auto node = it; node != nodes_.rend(); ++node) node->output.zero_grad();
  Tensor seed = loss;
  seed.grad()[0] = 1.0;
  for (auto node = it; node != nodes_.rend(); ++node) node->backward();
}

// Ops -------------------------------------------------------------------------

Tensor embed_lookup(Graph& g, const Tensor& table, std::span<const std::uint32_t> indices) {
  require(table.rank() == 2, "embedding table must be rank 2");
  require(!indices.empty(), "embed_lookup needs at least one index");
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  for (const auto idx : indices) {
    if (idx >= rows) {
      throw IndexOutOfRange("token index " + std::to_string(idx) + " >= table rows " +
                            std::to_string(rows));
    }
  }
  Tensor out({indices.size(), d});
  const double* tv = table.values().data();
  double* ov = out.values().data();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    std::copy_n(tv + indices[n] * d, d, ov + n * d);
  }
  std::vector<std::uint32_t> idx(indices.begin(), indices.end());
  g.record({table}, out, [table, out, d, idx = std::move(idx)]() mutable {
    const double* go = out.grad().data();
    double* gt = table.grad().data();
    for (std::size_t n = 0; n < idx.size(); ++n) axpy(1.0, go + n * d, gt + idx[n] * d, d);
  });
  return out;
}

Tensor conv_window(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2, "conv_window expects x[N,D] and w[K,D]");
  require(x.dim(1) == w.dim(1), "conv_window embedding dims differ: " + shape_string(x.shape()) +
                                    " vs " + shape_string(w.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t k = w.dim(0);
  require(n >= k, "conv_window needs N >= K");
  require(b.rank() == 1 && b.dim(0) == n - k + 1, "conv_window bias must be [N-K+1]");
  return conv_impl(g, x, w, b, 1, k, {n - k + 1});
}

Tensor conv_bank(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 3, "conv_bank expects x[N,D] and w[F,K,D]");
  require(x.dim(1) == w.dim(2), "conv_bank embedding dims differ: " + shape_string(x.shape()) +
                                    " vs " + shape_string(w.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t f = w.dim(0);
  const std::size_t k = w.dim(1);
  require(n >= k, "conv_bank needs N >= K");
  require(b.rank() == 2 && b.dim(0) == f && b.dim(1) == n - k + 1,
          "conv_bank bias must be [F, N-K+1], got " + shape_string(b.shape()));
  return conv_impl(g, x, w, b, f, k, {f, n - k + 1});
}

Tensor relu(Graph& g, const Tensor& z) {
  Tensor out(z.shape());
  const auto zv = z.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < zv.size(); ++i) ov[i] = zv[i] > 0.0 ? zv[i] : 0.0;
  g.record({z}, out, [z, out]() mutable {
    const auto zv = z.values();
    const auto go = out.grad();
    auto gz = z.grad();
    for (std::size_t i = 0; i < zv.size(); ++i) {
      if (zv[i] > 0.0) gz[i] += go[i];
    }
  });
  return out;
}

Tensor max_over_time(Graph& g, const Tensor& h) {
  require(h.rank() == 1 || h.rank() == 2, "max_over_time expects rank 1 or 2");
  const std::size_t rows = h.rank() == 1 ? 1 : h.dim(0);
  const std::size_t len = h.rank() == 1 ? h.dim(0) : h.dim(1);
  Tensor out({rows});
  std::vector<std::size_t> argmax(rows);
  const double* hv = h.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = hv + r * len;
    // max_element returns the first maximum: lowest-index tie-break.
    argmax[r] = static_cast<std::size_t>(std::max_element(row, row + len) - row);
    out.value(r) = row[argmax[r]];
  }
  g.record({h}, out, [h, out, len, argmax = std::move(argmax)]() mutable {
    const auto go = out.grad();
    auto gh = h.grad();
    for (std::size_t r = 0; r < argmax.size(); ++r) gh[r * len + argmax[r]] += go[r];
  });
  return out;
}

Tensor concat(Graph& g, std::span<const Tensor> parts) {
  require(!parts.empty(), "concat needs inputs");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Tensor out({total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  g.record(inputs, out, [inputs, out]() mutable {
    std::size_t offset = 0;
    const auto go = out.grad();
    for (auto& p : inputs) {
      auto gp = p.grad();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[offset + i];
      offset += gp.size();
    }
  });
  return out;
}

Tensor dense_softmax(Graph& g, const Tensor& hhat, const Tensor& mask, const Tensor& w,
                     const Tensor& b) {
  require(hhat.rank() == 1 && mask.rank() == 1 && w.rank() == 2 && b.rank() == 1,
          "dense_softmax expects hhat[L], mask[L], W[L,P], b[P]");
  const std::size_t l = hhat.dim(0);
  const std::size_t p = b.dim(0);
  require(mask.dim(0) == l && w.dim(0) == l && w.dim(1) == p,
          "dense_softmax shapes disagree: hhat " + shape_string(hhat.shape()) + ", mask " +
              shape_string(mask.shape()) + ", W " + shape_string(w.shape()) + ", b " +
              shape_string(b.shape()));

  std::vector<double> masked(l);
  for (std::size_t i = 0; i < l; ++i) masked[i] = hhat.value(i) * mask.value(i);

  std::vector<double> z(b.values().begin(), b.values().end());
  const double* wv = w.values().data();
  for (std::size_t i = 0; i < l; ++i) {
    if (masked[i] != 0.0) axpy(masked[i], wv + i * p, z.data(), p);
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (auto& v : z) {
    v = std::exp(v - zmax);
    denom += v;
  }
  Tensor out({p});
  for (std::size_t j = 0; j < p; ++j) out.value(j) = z[j] / denom;

  g.record({hhat, w, b}, out, [hhat, mask, w, b, out, l, p, masked = std::move(masked)]() mutable {
    const auto y = out.values();
    const auto gy = out.grad();
    double inner = 0.0;
    for (std::size_t j = 0; j < p; ++j) inner += gy[j] * y[j];
    std::vector<double> gz(p);
    for (std::size_t j = 0; j < p; ++j) gz[j] = y[j] * (gy[j] - inner);

    auto gb = b.grad();
    for (std::size_t j = 0; j < p; ++j) gb[j] += gz[j];
    const double* wv = w.values().data();
    double* gw = w.grad().data();
    auto gh = hhat.grad();
    const auto mv = mask.values();
    for (std::size_t i = 0; i < l; ++i) {
      if (masked[i] != 0.0) axpy(masked[i], gz.data(), gw + i * p, p);
      if (mv[i] != 0.0) gh[i] += mv[i] * dot(wv + i * p, gz.data(), p);
    }
  });
  return out;
}

Tensor stack_rows(Graph& g, std::span<const Tensor> rows) {
  require(!rows.empty(), "stack_rows needs rows");
  const std::size_t p = rows.front().size();
  for (const auto& r : rows) require(r.size() == p, "stack_rows rows differ in length");
  Tensor out({rows.size(), p});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].values().begin(), rows[i].values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * p));
  }
  std::vector<Tensor> inputs(rows.begin(), rows.end());
  g.record(inputs, out, [inputs, out, p]() mutable {
    const auto go = out.grad();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto gr = inputs[i].grad();
      for (std::size_t j = 0; j < p; ++j) gr[j] += go[i * p + j];
    }
  });
  return out;
}

Tensor cross_entropy_loss(Graph& g, const Tensor& probs, const Tensor& targets,
                          CrossEntropyMode mode) {
  require(probs.shape() == targets.shape(), "cross_entropy_loss shapes differ: " +
                                                shape_string(probs.shape()) + " vs " +
                                                shape_string(targets.shape()));
  const std::size_t r = probs.rank() == 1 ? 1 : probs.dim(0);
  const auto y = probs.values();
  const auto t = targets.values();
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double c = clamp_prob(y[i]);
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw NonFiniteLoss("probability " + std::to_string(y[i]) + " at position " +
                          std::to_string(i) + " cannot enter a log");
    }
    total += t[i] * std::log(c);
    if (mode == CrossEntropyMode::binary) total += (1.0 - t[i]) * std::log(1.0 - c);
  }
  const double loss = -total / static_cast<double>(r);
  if (!std::isfinite(loss)) throw NonFiniteLoss("cross-entropy evaluated to " + std::to_string(loss));

  Tensor out = Tensor::scalar(loss);
  g.record({probs}, out, [probs, targets, out, r, mode]() mutable {
    const double up = out.grad()[0] / static_cast<double>(r);
    const auto y = probs.values();
    const auto t = targets.values();
    auto gy = probs.grad();
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!inside_clamp(y[i])) continue;
      double d = -t[i] / y[i];
      if (mode == CrossEntropyMode::binary) d += (1.0 - t[i]) / (1.0 - y[i]);
      gy[i] += up * d;
    }
  });
  return out;
}

Tensor l2_penalty(Graph& g, const Tensor& w, double eta, L2Mode mode) {
  if (!(eta >= 0.0)) throw InvalidConfig("l2 eta must be >= 0");
  double sq = 0.0;
  for (const double v : w.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  Tensor out = Tensor::scalar(mode == L2Mode::squared ? eta * sq : eta * norm);
  g.record({w}, out, [w, out, eta, mode, norm]() mutable {
    const double up = out.grad()[0];
    const auto wv = w.values();
    auto gw = w.grad();
    if (mode == L2Mode::squared) {
      for (std::size_t i = 0; i < wv.size(); ++i) gw[i] += up * 2.0 * eta * wv[i];
    } else if (norm > 0.0) {
      for (std::size_t i = 0; i < wv.size(); ++i) gw[i] += up * eta * wv[i] / norm;
    }
  });
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add shapes differ");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.value(i) = a.value(i) + b.value(i);
  g.record({a, b}, out, [a, b, out]() mutable {
    const auto go = out.grad();
    auto ga = a.grad();
    auto gb = b.grad();
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  });
  return out;
}

Tensor mul_const(Graph& g, const Tensor& x, const Tensor& mask) {
  require(x.shape() == mask.shape(), "mul_const shapes differ");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.value(i) = x.value(i) * mask.value(i);
  g.record({x}, out, [x, mask, out]() mutable {
    const auto go = out.grad();
    const auto mv = mask.values();
    auto gx = x.grad();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mv[i];
  });
  return out;
}

}  // namespace bicnn::ad
