#include "promptcam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcam {

namespace {

// C (m x n) = A (m x k) * B (k x n), overwriting C. The j-inner loop keeps
// accumulation order per element identical to the naive i-j-k triple loop.
void mm(const double* A, const double* B, double* C, std::size_t m,
        std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    std::fill(c, c + n, 0.0);
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// dA (m x k) += dC (m x n) * B^T (n x k): row-by-row dot products.
void mm_acc_nt(const double* dC, const double* B, double* dA, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dc = dC + i * n;
    double* da = dA + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dc[j] * b[j];
      da[p] += s;
    }
  }
}

// dB (k x n) += A^T (k x m) * dC (m x n): axpy rows of dC into rows of dB.
void mm_acc_tn(const double* A, const double* dC, double* dB, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* dc = dC + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      double* db = dB + p * n;
      for (std::size_t j = 0; j < n; ++j) db[j] += av * dc[j];
    }
  }
}

void ensure_grad(const TensorPtr& t) {
  if (t->grad.empty()) t->grad.assign(t->size(), 0.0);
}

void require_rank2(const TensorPtr& a, const char* op) {
  if (a->shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(a->shape));
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch: " +
                                shape_str(a->shape) + " vs " + shape_str(b->shape));
}

bool track(GradTape& t, const std::vector<TensorPtr>& inputs) {
  for (const auto& in : inputs)
    if (in->needs_grad) return true;
  (void)t;
  return false;
}

TensorPtr finish(GradTape& t, const char* op, const std::vector<TensorPtr>& inputs,
                 TensorPtr out, std::function<void()> backward) {
  if (track(t, inputs)) {
    out->needs_grad = true;
    t.record(op, inputs, out, std::move(backward));
  }
  return out;
}

constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / M_PI);

}  // namespace

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->data.assign(shape_size(shape), 0.0);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  t->needs_grad = requires_grad;
  return t;
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw std::invalid_argument("make_tensor: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  t->needs_grad = requires_grad;
  return t;
}

TensorPtr make_scalar(double value, bool requires_grad) {
  return make_tensor({1}, {value}, requires_grad);
}

void GradTape::register_leaf(const TensorPtr& t) {
  if (t->node_id >= 0) return;
  t->node_id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"leaf", {}, t->node_id, t, nullptr});
}

void GradTape::record(const char* op, const std::vector<TensorPtr>& inputs,
                      const TensorPtr& output, std::function<void()> backward) {
  Node node;
  node.op = op;
  node.input_ids.reserve(inputs.size());
  for (const auto& in : inputs) {
    register_leaf(in);
    node.input_ids.push_back(in->node_id);
  }
  output->node_id = static_cast<int>(nodes_.size());
  node.output_id = output->node_id;
  node.output = output;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
}

void GradTape::backward(const TensorPtr& loss) {
  if (loss->size() != 1)
    throw std::invalid_argument("reverse_mode_gradient: loss must be scalar, got " +
                                shape_str(loss->shape));
  if (consumed_)
    throw std::logic_error("reverse_mode_gradient: tape already consumed");
  consumed_ = true;
  loss->grad.assign(1, 1.0);
  if (loss->node_id < 0) return;  // constant loss: nothing recorded upstream
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward) continue;           // leaf
    if (node.output->grad.empty()) continue;  // did not feed the loss
    node.backward();
  }
}

TensorPtr matmul(GradTape& t, const TensorPtr& a, const TensorPtr& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a->shape[1] != b->shape[0])
    throw std::invalid_argument("matmul: inner extents differ: " +
                                shape_str(a->shape) + " vs " + shape_str(b->shape));
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_tensor({m, n});
  mm(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  return finish(t, "matmul", {a, b}, out, [a, b, out, m, k, n] {
    if (a->needs_grad) {
      ensure_grad(a);
      mm_acc_nt(out->grad.data(), b->data.data(), a->grad.data(), m, k, n);
    }
    if (b->needs_grad) {
      ensure_grad(b);
      mm_acc_tn(a->data.data(), out->grad.data(), b->grad.data(), m, k, n);
    }
  });
}

TensorPtr add(GradTape& t, const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  return finish(t, "add", {a, b}, out, [a, b, out] {
    if (a->needs_grad) {
      ensure_grad(a);
      for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
    }
    if (b->needs_grad) {
      ensure_grad(b);
      for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
    }
  });
}

TensorPtr add_rowvec(GradTape& t, const TensorPtr& a, const TensorPtr& v) {
  require_rank2(a, "add_rowvec");
  if (v->size() != a->shape[1])
    throw std::invalid_argument("add_rowvec: vector length mismatch: " +
                                shape_str(a->shape) + " vs " + shape_str(v->shape));
  const std::size_t m = a->shape[0], n = a->shape[1];
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->data[i * n + j] = a->data[i * n + j] + v->data[j];
  return finish(t, "add_rowvec", {a, v}, out, [a, v, out, m, n] {
    if (a->needs_grad) {
      ensure_grad(a);
      for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
    }
    if (v->needs_grad) {
      ensure_grad(v);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v->grad[j] += out->grad[i * n + j];
    }
  });
}

TensorPtr scale(GradTape& t, const TensorPtr& a, double s) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = s * a->data[i];
  return finish(t, "scale", {a}, out, [a, out, s] {
    ensure_grad(a);
    for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += s * out->grad[i];
  });
}

TensorPtr softmax(GradTape& t, const TensorPtr& a, int axis) {
  const int rank = static_cast<int>(a->shape.size());
  if (rank == 0) throw std::invalid_argument("softmax: scalar input");
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("softmax: axis out of range for " + shape_str(a->shape));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a->shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= a->shape[i];
  const std::size_t n = a->shape[axis];

  auto out = make_tensor(a->shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = a->data[base];
      for (std::size_t j = 1; j < n; ++j)
        mx = std::max(mx, a->data[base + j * inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(a->data[base + j * inner] - mx);
        out->data[base + j * inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < n; ++j) out->data[base + j * inner] /= sum;
    }
  }
  return finish(t, "softmax", {a}, out, [a, out, outer, inner, n] {
    ensure_grad(a);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          dot += out->grad[base + j * inner] * out->data[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t ix = base + j * inner;
          a->grad[ix] += out->data[ix] * (out->grad[ix] - dot);
        }
      }
    }
  });
}

TensorPtr masked_softmax_rows(GradTape& t, const TensorPtr& logits,
                              const std::vector<std::uint8_t>& keep) {
  require_rank2(logits, "masked_softmax_rows");
  if (keep.empty()) return softmax(t, logits, -1);
  if (keep.size() != logits->size())
    throw std::invalid_argument("masked_softmax_rows: mask length " +
                                std::to_string(keep.size()) + " does not cover " +
                                shape_str(logits->shape));
  const std::size_t m = logits->shape[0], n = logits->shape[1];
  auto out = make_tensor(logits->shape);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = logits->data.data() + i * n;
    const std::uint8_t* k = keep.data() + i * n;
    double* y = out->data.data() + i * n;
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < n; ++j)
      if (k[j] && x[j] > mx) mx = x[j];
    if (mx == -HUGE_VAL)
      throw std::invalid_argument("masked_softmax_rows: row " + std::to_string(i) +
                                  " has no visible key");
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = k[j] ? std::exp(x[j] - mx) : 0.0;
      sum += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
  }
  return finish(t, "masked_softmax_rows", {logits}, out, [logits, out, m, n] {
    ensure_grad(logits);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = out->data.data() + i * n;
      const double* dy = out->grad.data() + i * n;
      double* dx = logits->grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
}

TensorPtr layer_norm(GradTape& t, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
  if (x->shape.empty()) throw std::invalid_argument("layer_norm: scalar input");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t n = x->shape.back();
  if (gamma->size() != n || beta->size() != n)
    throw std::invalid_argument("layer_norm: affine params " + shape_str(gamma->shape) +
                                "/" + shape_str(beta->shape) + " do not match last axis of " +
                                shape_str(x->shape));
  const std::size_t rows = x->size() / n;

  auto out = make_tensor(x->shape);
  // Two-pass mean/variance per row; xhat and 1/std are saved for backward.
  auto xhat = std::make_shared<std::vector<double>>(x->size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xv = x->data.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xv[j] - mean) * is;
      (*xhat)[r * n + j] = xh;
      out->data[r * n + j] = gamma->data[j] * xh + beta->data[j];
    }
  }
  return finish(t, "layer_norm", {x, gamma, beta}, out,
                [x, gamma, beta, out, xhat, inv_std, rows, n] {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = out->grad.data() + r * n;
      const double* xh = xhat->data() + r * n;
      if (gamma->needs_grad) {
        ensure_grad(gamma);
        for (std::size_t j = 0; j < n; ++j) gamma->grad[j] += dy[j] * xh[j];
      }
      if (beta->needs_grad) {
        ensure_grad(beta);
        for (std::size_t j = 0; j < n; ++j) beta->grad[j] += dy[j];
      }
      if (x->needs_grad) {
        ensure_grad(x);
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = dy[j] * gamma->data[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= static_cast<double>(n);
        mean_dxhat_xhat /= static_cast<double>(n);
        double* dx = x->grad.data() + r * n;
        const double is = (*inv_std)[r];
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = dy[j] * gamma->data[j];
          dx[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    }
  });
}

TensorPtr gelu(GradTape& t, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i) {
    const double x = a->data[i];
    const double u = kGeluScale * (x + kGeluCubic * x * x * x);
    out->data[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  return finish(t, "gelu", {a}, out, [a, out] {
    ensure_grad(a);
    for (std::size_t i = 0; i < a->size(); ++i) {
      const double x = a->data[i];
      const double u = kGeluScale * (x + kGeluCubic * x * x * x);
      const double th = std::tanh(u);
      const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      a->grad[i] += d * out->grad[i];
    }
  });
}

TensorPtr log_elem(GradTape& t, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i) {
    if (a->data[i] <= 0.0)
      throw std::domain_error("log_elem: input must be positive, got " +
                              std::to_string(a->data[i]));
    out->data[i] = std::log(a->data[i]);
  }
  return finish(t, "log_elem", {a}, out, [a, out] {
    ensure_grad(a);
    for (std::size_t i = 0; i < a->size(); ++i)
      a->grad[i] += out->grad[i] / a->data[i];
  });
}

TensorPtr pick(GradTape& t, const TensorPtr& a, std::size_t flat_index) {
  if (flat_index >= a->size())
    throw std::out_of_range("pick: index " + std::to_string(flat_index) +
                            " out of range for " + shape_str(a->shape));
  auto out = make_scalar(a->data[flat_index]);
  return finish(t, "pick", {a}, out, [a, out, flat_index] {
    ensure_grad(a);
    a->grad[flat_index] += out->grad[0];
  });
}

TensorPtr slice_rows(GradTape& t, const TensorPtr& a, std::size_t r0, std::size_t r1) {
  require_rank2(a, "slice_rows");
  if (r0 > r1 || r1 > a->shape[0])
    throw std::out_of_range("slice_rows: range [" + std::to_string(r0) + ", " +
                            std::to_string(r1) + ") invalid for " + shape_str(a->shape));
  const std::size_t n = a->shape[1];
  auto out = make_tensor({r1 - r0, n});
  std::copy(a->data.begin() + r0 * n, a->data.begin() + r1 * n, out->data.begin());
  return finish(t, "slice_rows", {a}, out, [a, out, r0, n] {
    ensure_grad(a);
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      a->grad[r0 * n + i] += out->grad[i];
  });
}

TensorPtr slice_cols(GradTape& t, const TensorPtr& a, std::size_t c0, std::size_t c1) {
  require_rank2(a, "slice_cols");
  if (c0 > c1 || c1 > a->shape[1])
    throw std::out_of_range("slice_cols: range [" + std::to_string(c0) + ", " +
                            std::to_string(c1) + ") invalid for " + shape_str(a->shape));
  const std::size_t m = a->shape[0], n = a->shape[1], w = c1 - c0;
  auto out = make_tensor({m, w});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(a->data.begin() + i * n + c0, a->data.begin() + i * n + c1,
              out->data.begin() + i * w);
  return finish(t, "slice_cols", {a}, out, [a, out, c0, m, n, w] {
    ensure_grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        a->grad[i * n + c0 + j] += out->grad[i * w + j];
  });
}

TensorPtr concat_rows(GradTape& t, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t n = parts[0]->cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p->shape[1] != n)
      throw std::invalid_argument("concat_rows: column mismatch: " +
                                  shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
    m += p->shape[0];
  }
  auto out = make_tensor({m, n});
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + row * n);
    row += p->shape[0];
  }
  return finish(t, "concat_rows", parts, out, [parts, out, n] {
    std::size_t row = 0;
    for (const auto& p : parts) {
      if (p->needs_grad) {
        ensure_grad(p);
        for (std::size_t i = 0; i < p->size(); ++i)
          p->grad[i] += out->grad[row * n + i];
      }
      row += p->shape[0];
    }
  });
}

TensorPtr concat_cols(GradTape& t, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t m = parts[0]->rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p->shape[0] != m)
      throw std::invalid_argument("concat_cols: row mismatch: " +
                                  shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
    n += p->shape[1];
  }
  auto out = make_tensor({m, n});
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p->shape[1];
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p->data.begin() + i * w, p->data.begin() + (i + 1) * w,
                out->data.begin() + i * n + col);
    col += w;
  }
  return finish(t, "concat_cols", parts, out, [parts, out, m, n] {
    std::size_t col = 0;
    for (const auto& p : parts) {
      const std::size_t w = p->shape[1];
      if (p->needs_grad) {
        ensure_grad(p);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j)
            p->grad[i * w + j] += out->grad[i * n + col + j];
      }
      col += w;
    }
  });
}

TensorPtr transpose(GradTape& t, const TensorPtr& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a->shape[0], n = a->shape[1];
  auto out = make_tensor({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->data[j * m + i] = a->data[i * n + j];
  return finish(t, "transpose", {a}, out, [a, out, m, n] {
    ensure_grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        a->grad[i * n + j] += out->grad[j * m + i];
  });
}

TensorPtr average_scalars(GradTape& t, const std::vector<TensorPtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("average_scalars: no inputs");
  double sum = 0.0;
  for (const auto& x : xs) {
    if (x->size() != 1)
      throw std::invalid_argument("average_scalars: non-scalar input " +
                                  shape_str(x->shape));
    sum += x->data[0];
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  auto out = make_scalar(sum * inv);
  return finish(t, "average_scalars", xs, out, [xs, out, inv] {
    for (const auto& x : xs) {
      if (!x->needs_grad) continue;
      ensure_grad(x);
      x->grad[0] += out->grad[0] * inv;
    }
  });
}

TensorPtr cross_entropy_with_logits(GradTape& t, const TensorPtr& logits, int label) {
  const std::size_t c = logits->size();
  if (label < 0 || static_cast<std::size_t>(label) >= c)
    throw std::out_of_range("cross_entropy_with_logits: label " + std::to_string(label) +
                            " out of range for " + std::to_string(c) + " classes");
  double mx = logits->data[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, logits->data[i]);
  double sum = 0.0;
  auto probs = std::make_shared<std::vector<double>>(c);
  for (std::size_t i = 0; i < c; ++i) {
    (*probs)[i] = std::exp(logits->data[i] - mx);
    sum += (*probs)[i];
  }
  for (std::size_t i = 0; i < c; ++i) (*probs)[i] /= sum;
  const double loss = mx + std::log(sum) - logits->data[static_cast<std::size_t>(label)];
  auto out = make_scalar(loss);
  return finish(t, "cross_entropy_with_logits", {logits}, out,
                [logits, out, probs, label] {
    ensure_grad(logits);
    const double d = out->grad[0];
    for (std::size_t i = 0; i < probs->size(); ++i) {
      const double onehot = (static_cast<int>(i) == label) ? 1.0 : 0.0;
      logits->grad[i] += d * ((*probs)[i] - onehot);
    }
  });
}

std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace pcam
