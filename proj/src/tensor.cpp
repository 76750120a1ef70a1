#include "bifuse/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace bifuse {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

using BackwardFn = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.ptr());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
  }
}

// Unary elementwise op with derivative expressed through (x, y).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.numel());
  auto av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_numel(shape), v);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->value); }

Tensor Tensor::clone() const {
  Tensor t = from(shape(), node_->value);
  if (node_->requires_grad && node_->parents.empty()) t.node_->requires_grad = true;
  return t;
}

void Tensor::backward(double seed) const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  // Owning references keep queued nodes alive while parents are released.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{node_, 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<Node> p = top.first->parents[top.second++];
      if (p->requires_grad && !p->parents.empty() && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  node_->accumulate(0, seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (n->backward && !n->grad.empty()) n->backward(*n);
    if (n->parents.empty()) continue;  // leaf root keeps its gradient
    // Interior nodes are single-use; release the graph as we go.
    n->backward = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const double s = k == 0 ? 1.0 : -1.0;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  // exact erf form
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
        return cdf + x * pdf;
      });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  return mul_scalar(sum(a), 1.0 / n);
}

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.value().begin(), a.value().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank(a, 2, "slice_cols");
  const std::size_t n = a.dim(0), m = a.dim(1);
  if (start + count > m) throw ShapeError("slice_cols: range exceeds " + shape_str(a.shape()));
  std::vector<double> out(n * count);
  auto av = a.value();
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(av.begin() + r * m + start, count, out.begin() + r * count);
  return make_result({n, count}, std::move(out), {a}, [n, m, start, count](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < count; ++c) g[r * m + start + c] += self.grad[r * count + c];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) throw ShapeError("concat_cols: row mismatch");
    m += p.dim(1);
  }
  std::vector<double> out(n * m);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto pv = p.value();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(pv.begin() + r * w, w, out.begin() + r * m + off);
    off += w;
  }
  return make_result({n, m}, std::move(out), parts, [n, m](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t w = p->shape[1];
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * m + off + c];
      }
      off += w;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank(a, 2, "slice_rows");
  const std::size_t m = a.dim(1);
  if (start + count > a.dim(0)) throw ShapeError("slice_rows: range exceeds " + shape_str(a.shape()));
  std::vector<double> out(a.value().begin() + start * m, a.value().begin() + (start + count) * m);
  return make_result({count, m}, std::move(out), {a}, [start, m](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * m + i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts[0].dim(1);
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != m) throw ShapeError("concat_rows: column mismatch");
    n += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(n * m);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_result({n, m}, std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1);
  const std::size_t m = transpose_b ? b.dim(0) : b.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  if (k != kb) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  std::vector<double> out(n * m);
  CMapMat A(a.value().data(), n, k);
  CMapMat B(b.value().data(), b.dim(0), b.dim(1));
  MapMat C(out.data(), n, m);
  if (transpose_b) C.noalias() = A * B.transpose();
  else C.noalias() = A * B;

  return make_result({n, m}, std::move(out), {a, b}, [n, k, m, transpose_b](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    CMapMat G(self.grad.data(), n, m);
    if (pa.requires_grad) {
      MapMat GA(pa.grad_buffer().data(), n, k);
      CMapMat B(pb.value.data(), pb.shape[0], pb.shape[1]);
      if (transpose_b) GA.noalias() += G * B;
      else GA.noalias() += G * B.transpose();
    }
    if (pb.requires_grad) {
      CMapMat A(pa.value.data(), n, k);
      MapMat GB(pb.grad_buffer().data(), pb.shape[0], pb.shape[1]);
      if (transpose_b) GB.noalias() += G.transpose() * A;
      else GB.noalias() += A.transpose() * G;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  if (w.dim(0) != k || bias.numel() != m) {
    throw ShapeError("linear: x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" +
                     shape_str(bias.shape()));
  }
  std::vector<double> out(n * m);
  CMapMat X(x.value().data(), n, k);
  CMapMat W(w.value().data(), k, m);
  Eigen::Map<const Eigen::RowVectorXd> B(bias.value().data(), m);
  MapMat Y(out.data(), n, m);
  Y.noalias() = X * W;
  Y.rowwise() += B;

  return make_result({n, m}, std::move(out), {x, w, bias}, [n, k, m](Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    CMapMat G(self.grad.data(), n, m);
    if (px.requires_grad) {
      MapMat GX(px.grad_buffer().data(), n, k);
      GX.noalias() += G * CMapMat(pw.value.data(), k, m).transpose();
    }
    if (pw.requires_grad) {
      MapMat GW(pw.grad_buffer().data(), k, m);
      GW.noalias() += CMapMat(px.value.data(), n, k).transpose() * G;
    }
    if (pb.requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> GB(pb.grad_buffer().data(), m);
      GB += G.colwise().sum();
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  auto av = a.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = av.data() + r * m;
    double* o = out.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += (o[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < m; ++c) o[c] /= s;
  }
  return make_result({n, m}, std::move(out), {a}, [n, m](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += y[c] * gy[c];
      for (std::size_t c = 0; c < m; ++c) g[r * m + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t n = q.dim(0), m = k.dim(0), c = q.dim(1);
  if (k.dim(1) != c || v.dim(1) != c || v.dim(0) != m || heads == 0 || c % heads != 0) {
    throw ShapeError("attention: q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) + " v" +
                     shape_str(v.shape()) + " heads " + std::to_string(heads));
  }
  using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
  using MStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
  const std::size_t hd = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(c));
  const auto ni = static_cast<Eigen::Index>(n), mi = static_cast<Eigen::Index>(m), hi = static_cast<Eigen::Index>(hd);

  auto probs = std::make_shared<std::vector<RowMat>>(heads);
  std::vector<double> out(n * c);
  for (std::size_t h = 0; h < heads; ++h) {
    Strided Q(q.value().data() + h * hd, ni, hi, stride);
    Strided K(k.value().data() + h * hd, mi, hi, stride);
    Strided V(v.value().data() + h * hd, mi, hi, stride);
    RowMat& P = (*probs)[h];
    P.noalias() = (Q * K.transpose()) * scale;
    for (Eigen::Index r = 0; r < ni; ++r) {
      auto row = P.row(r);
      row = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    MStrided O(out.data() + h * hd, ni, hi, stride);
    O.noalias() = P * V;
  }
  if (!grad_enabled() || !(q.requires_grad() || k.requires_grad() || v.requires_grad())) probs->clear();

  return make_result({n, c}, std::move(out), {q, k, v}, [probs, heads, hd, scale, ni, mi, hi, stride](Node& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    for (std::size_t h = 0; h < heads; ++h) {
      const RowMat& P = (*probs)[h];
      Strided G(self.grad.data() + h * hd, ni, hi, stride);
      Strided V(pv.value.data() + h * hd, mi, hi, stride);
      if (pv.requires_grad) {
        MStrided GV(pv.grad_buffer().data() + h * hd, mi, hi, stride);
        GV.noalias() += P.transpose() * G;
      }
      if (!pq.requires_grad && !pk.requires_grad) continue;
      RowMat dS = G * V.transpose();
      for (Eigen::Index r = 0; r < ni; ++r) {
        const double dot = P.row(r).dot(dS.row(r));
        dS.row(r) = (P.row(r).array() * (dS.row(r).array() - dot)).matrix() * scale;
      }
      if (pq.requires_grad) {
        Strided K(pk.value.data() + h * hd, mi, hi, stride);
        MStrided GQ(pq.grad_buffer().data() + h * hd, ni, hi, stride);
        GQ.noalias() += dS * K;
      }
      if (pk.requires_grad) {
        Strided Q(pq.value.data() + h * hd, ni, hi, stride);
        MStrided GK(pk.grad_buffer().data() + h * hd, mi, hi, stride);
        GK.noalias() += dS.transpose() * Q;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("layer_norm: affine width mismatch");
  std::vector<double> out(n * c);
  auto xhat = std::make_shared<std::vector<double>>(n * c);
  auto rstd = std::make_shared<std::vector<double>>(n);
  auto xv = x.value(), gv = gamma.value(), bv = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result({n, c}, std::move(out), {x, gamma, beta}, [n, c, xhat, rstd](Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad) {
      auto& gg = pg.grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) gg[j] += self.grad[r * c + j] * (*xhat)[r * c + j];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[r * c + j];
    }
    if (px.requires_grad) {
      auto& gx = px.grad_buffer();
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t r = 0; r < n; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dh = self.grad[r * c + j] * pg.value[j];
          s1 += dh;
          s2 += dh * (*xhat)[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
          const double dh = self.grad[r * c + j] * pg.value[j];
          gx[r * c + j] += (*rstd)[r] * (dh - inv_c * s1 - (*xhat)[r * c + j] * inv_c * s2);
        }
      }
    }
  });
}

// ---- spatial ---------------------------------------------------------------

Tensor upsample_nearest(const Tensor& x, std::size_t f) {
  require_rank(x, 3, "upsample_nearest");
  if (f == 0) throw ShapeError("upsample_nearest: factor must be positive");
  if (f == 1) return x;
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t H = h * f, W = w * f;
  std::vector<double> out(H * W * c);
  auto xv = x.value();
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      std::copy_n(xv.begin() + ((i / f) * w + j / f) * c, c, out.begin() + (i * W + j) * c);
  return make_result({H, W, c}, std::move(out), {x}, [f, w, c, H, W](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t src = ((i / f) * w + j / f) * c, dst = (i * W + j) * c;
        for (std::size_t k = 0; k < c; ++k) g[src + k] += self.grad[dst + k];
      }
  });
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  require_rank(x, 3, "pixel_shuffle");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  if (r == 0 || cin % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(cin) + " not divisible by r^2");
  }
  const std::size_t c = cin / (r * r);
  const std::size_t H = h * r, W = w * r;
  std::vector<std::size_t> src_index(H * W * c);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t dy = 0; dy < r; ++dy)
          for (std::size_t dx = 0; dx < r; ++dx) {
            const std::size_t dst = ((i * r + dy) * W + (j * r + dx)) * c + k;
            src_index[dst] = (i * w + j) * cin + k * r * r + dy * r + dx;
          }
  std::vector<double> out(src_index.size());
  auto xv = x.value();
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = xv[src_index[d]];
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(src_index));
  return make_result({H, W, c}, std::move(out), {x}, [idx](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t d = 0; d < idx->size(); ++d) g[(*idx)[d]] += self.grad[d];
  });
}

Tensor filter2d(const Tensor& x, const std::vector<double>& kernel, std::size_t kh, std::size_t kw,
                std::size_t pad) {
  require_rank(x, 2, "filter2d");
  if (kernel.size() != kh * kw) throw ShapeError("filter2d: kernel size mismatch");
  const std::size_t h = x.dim(0), w = x.dim(1);
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw ShapeError("filter2d: image " + shape_str(x.shape()) + " smaller than " + std::to_string(kh) +
                     "x" + std::to_string(kw) + " window");
  }
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  const auto ph = static_cast<std::ptrdiff_t>(pad);
  std::vector<double> out(oh * ow, 0.0);
  auto xv = x.value();
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < kh; ++a) {
        const auto yi = static_cast<std::ptrdiff_t>(i + a) - ph;
        if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t b = 0; b < kw; ++b) {
          const auto xj = static_cast<std::ptrdiff_t>(j + b) - ph;
          if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(w)) continue;
          s += kernel[a * kw + b] * xv[static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xj)];
        }
      }
      out[i * ow + j] = s;
    }
  return make_result({oh, ow}, std::move(out), {x}, [kernel, kh, kw, h, w, oh, ow, ph](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const double gy = self.grad[i * ow + j];
        if (gy == 0.0) continue;
        for (std::size_t a = 0; a < kh; ++a) {
          const auto yi = static_cast<std::ptrdiff_t>(i + a) - ph;
          if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t b = 0; b < kw; ++b) {
            const auto xj = static_cast<std::ptrdiff_t>(j + b) - ph;
            if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(w)) continue;
            g[static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xj)] += kernel[a * kw + b] * gy;
          }
        }
      }
  });
}

}  // namespace bifuse
