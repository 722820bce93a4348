#include "hmc/diff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "hmc/error.hpp"

namespace hmc::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local std::size_t g_last_backward_nodes = 0;

void check(bool ok, const std::string& msg) {
  if (!ok) fail(Errc::ShapeMismatch, msg);
}

// New node whose parents are `parents`; requires grad if any parent does.
std::shared_ptr<Node> make_node(Shape shape, std::initializer_list<const Tensor*> parents, const char* op) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), 0.0);
  n->shape = std::move(shape);
  n->op = op;
  for (const Tensor* p : parents) {
    if (p == nullptr || !p->defined()) continue;
    n->parents.push_back(p->node());
    n->requires_grad = n->requires_grad || p->requires_grad();
  }
  return n;
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

void axis_split(const Shape& s, int axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
  len = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  check(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

struct ConvGeom {
  int B, Cin, D, H, W, Cout, k, stride, pad, Do, Ho, Wo;
  std::size_t in_spatial() const { return static_cast<std::size_t>(D) * H * W; }
  std::size_t out_spatial() const { return static_cast<std::size_t>(Do) * Ho * Wo; }
  std::size_t col_rows() const { return static_cast<std::size_t>(Cin) * k * k * k; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const ConvGeom& g, const double* x, double* col) {
  const std::size_t P = g.out_spatial();
  std::size_t row = 0;
  for (int c = 0; c < g.Cin; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.in_spatial();
    for (int kd = 0; kd < g.k; ++kd)
      for (int kh = 0; kh < g.k; ++kh)
        for (int kw = 0; kw < g.k; ++kw, ++row) {
          double* dst = col + row * P;
          for (int od = 0; od < g.Do; ++od) {
            const int id = od * g.stride - g.pad + kd;
            for (int oh = 0; oh < g.Ho; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              double* d = dst + (static_cast<std::size_t>(od) * g.Ho + oh) * g.Wo;
              if (id < 0 || id >= g.D || ih < 0 || ih >= g.H) {
                std::fill(d, d + g.Wo, 0.0);
                continue;
              }
              const double* src = xc + (static_cast<std::size_t>(id) * g.H + ih) * g.W;
              for (int ow = 0; ow < g.Wo; ++ow) {
                const int iw = ow * g.stride - g.pad + kw;
                d[ow] = (iw >= 0 && iw < g.W) ? src[iw] : 0.0;
              }
            }
          }
        }
  }
}

void col2im(const ConvGeom& g, const double* col, double* dx) {
  const std::size_t P = g.out_spatial();
  std::size_t row = 0;
  for (int c = 0; c < g.Cin; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * g.in_spatial();
    for (int kd = 0; kd < g.k; ++kd)
      for (int kh = 0; kh < g.k; ++kh)
        for (int kw = 0; kw < g.k; ++kw, ++row) {
          const double* srcrow = col + row * P;
          for (int od = 0; od < g.Do; ++od) {
            const int id = od * g.stride - g.pad + kd;
            if (id < 0 || id >= g.D) continue;
            for (int oh = 0; oh < g.Ho; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.H) continue;
              const double* s = srcrow + (static_cast<std::size_t>(od) * g.Ho + oh) * g.Wo;
              double* d = xc + (static_cast<std::size_t>(id) * g.H + ih) * g.W;
              for (int ow = 0; ow < g.Wo; ++ow) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw >= 0 && iw < g.W) d[iw] += s[ow];
              }
            }
          }
        }
  }
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    check(d >= 0, "negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(nn::numel(shape), v);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check(values.size() == nn::numel(shape), "value count does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({}, v, requires_grad); }

double Tensor::item() const {
  check(numel() == 1, "item() on non-scalar tensor");
  return node_->value[0];
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) fail(Errc::NonScalarLoss, "backward() needs a scalar loss");
  // iterative post-order DFS -> topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* root = loss.node().get();
  if (!root->requires_grad) {
    g_last_backward_nodes = 0;
    return;
  }
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  g_last_backward_nodes = order.size();
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

std::size_t last_backward_node_count() { return g_last_backward_nodes; }

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = make_node(a.shape(), {&a, &b}, "add");
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      for (std::size_t p = 0; p < 2; ++p) {
        Node& in = parent(self, p);
        if (!in.requires_grad) continue;
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = make_node(a.shape(), {&a, &b}, "mul");
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * b.value()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      Node& x = parent(self, 0);
      Node& y = parent(self, 1);
      if (x.requires_grad) {
        auto& g = x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
      }
      if (y.requires_grad) {
        auto& g = y.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
      }
    };
  }
  return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  check((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3), "matmul: rank 2 or 3 operands");
  const int B = batched ? a.dim(0) : 1;
  const int M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);
  check(b.dim(-2) == K && (!batched || b.dim(0) == B),
        "matmul: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Shape out = batched ? Shape{B, M, N} : Shape{M, N};
  auto n = make_node(out, {&a, &b}, "matmul");
  const std::size_t sa = static_cast<std::size_t>(M) * K, sb = static_cast<std::size_t>(K) * N,
                    sc = static_cast<std::size_t>(M) * N;
  for (int i = 0; i < B; ++i) {
    MapMat(n->value.data() + i * sc, M, N).noalias() =
        CMapMat(a.value().data() + i * sa, M, K) * CMapMat(b.value().data() + i * sb, K, N);
  }
  if (n->requires_grad) {
    n->backward_fn = [B, M, K, N, sa, sb, sc](Node& self) {
      Node& x = parent(self, 0);
      Node& y = parent(self, 1);
      for (int i = 0; i < B; ++i) {
        CMapMat g(self.grad.data() + i * sc, M, N);
        if (x.requires_grad) {
          MapMat(x.ensure_grad().data() + i * sa, M, K).noalias() += g * CMapMat(y.value.data() + i * sb, K, N).transpose();
        }
        if (y.requires_grad) {
          MapMat(y.ensure_grad().data() + i * sb, K, N).noalias() += CMapMat(x.value.data() + i * sa, M, K).transpose() * g;
        }
      }
    };
  }
  return Tensor(n);
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  check(x.rank() == 5 && w.rank() == 5, "conv3d: x (B,C,D,H,W) and w (Co,Ci,k,k,k) expected");
  check(stride >= 1 && pad >= 0, "conv3d: bad stride/pad");
  ConvGeom g{};
  g.B = x.dim(0);
  g.Cin = x.dim(1);
  g.D = x.dim(2);
  g.H = x.dim(3);
  g.W = x.dim(4);
  g.Cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  check(w.dim(1) == g.Cin && w.dim(3) == g.k && w.dim(4) == g.k,
        "conv3d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  check(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == g.Cout), "conv3d: bias shape");
  g.Do = (g.D + 2 * pad - g.k) / stride + 1;
  g.Ho = (g.H + 2 * pad - g.k) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.k) / stride + 1;
  check(g.Do > 0 && g.Ho > 0 && g.Wo > 0, "conv3d: kernel larger than padded input");

  auto n = make_node({g.B, g.Cout, g.Do, g.Ho, g.Wo}, {&x, &w, &bias}, "conv3d");
  const std::size_t P = g.out_spatial(), Kc = g.col_rows();
  const std::size_t xs = static_cast<std::size_t>(g.Cin) * g.in_spatial(), ys = static_cast<std::size_t>(g.Cout) * P;
  std::vector<double> col(g.pointwise() ? 0 : Kc * P);
  CMapMat W(w.value().data(), g.Cout, static_cast<Eigen::Index>(Kc));
  for (int b = 0; b < g.B; ++b) {
    const double* xb = x.value().data() + b * xs;
    if (!g.pointwise()) im2col(g, xb, col.data());
    const double* cp = g.pointwise() ? xb : col.data();
    MapMat Y(n->value.data() + b * ys, g.Cout, static_cast<Eigen::Index>(P));
    Y.noalias() = W * CMapMat(cp, static_cast<Eigen::Index>(Kc), static_cast<Eigen::Index>(P));
    if (bias.defined()) {
      for (int c = 0; c < g.Cout; ++c) Y.row(c).array() += bias.value()[c];
    }
  }
  if (n->requires_grad) {
    const bool has_bias = bias.defined();
    n->backward_fn = [g, P, Kc, xs, ys, has_bias](Node& self) {
      Node& xn = parent(self, 0);
      Node& wn = parent(self, 1);
      Node* bn = has_bias ? &parent(self, 2) : nullptr;
      std::vector<double> col(g.pointwise() ? 0 : Kc * P), dcol;
      if (xn.requires_grad && !g.pointwise()) dcol.resize(Kc * P);
      CMapMat W(wn.value.data(), g.Cout, static_cast<Eigen::Index>(Kc));
      for (int b = 0; b < g.B; ++b) {
        CMapMat dY(self.grad.data() + b * ys, g.Cout, static_cast<Eigen::Index>(P));
        if (bn && bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (int c = 0; c < g.Cout; ++c) {
            const double* row = self.grad.data() + b * ys + static_cast<std::size_t>(c) * P;
            gb[c] = std::accumulate(row, row + P, gb[c]);
          }
        }
        const double* xb = xn.value.data() + b * xs;
        if (wn.requires_grad) {
          if (!g.pointwise()) im2col(g, xb, col.data());
          const double* cp = g.pointwise() ? xb : col.data();
          MapMat(wn.ensure_grad().data(), g.Cout, static_cast<Eigen::Index>(Kc)).noalias() +=
              dY * CMapMat(cp, static_cast<Eigen::Index>(Kc), static_cast<Eigen::Index>(P)).transpose();
        }
        if (xn.requires_grad) {
          double* dxb = xn.ensure_grad().data() + b * xs;
          if (g.pointwise()) {
            MapMat(dxb, static_cast<Eigen::Index>(Kc), static_cast<Eigen::Index>(P)).noalias() += W.transpose() * dY;
          } else {
            MapMat(dcol.data(), static_cast<Eigen::Index>(Kc), static_cast<Eigen::Index>(P)).noalias() =
                W.transpose() * dY;
            col2im(g, dcol.data(), dxb);
          }
        }
      }
    };
  }
  return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check(x.rank() == 2 && w.rank() == 2 && w.dim(1) == x.dim(1),
        "linear: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
  const int B = x.dim(0), In = x.dim(1), Out = w.dim(0);
  check(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == Out), "linear: bias shape");
  auto n = make_node({B, Out}, {&x, &w, &bias}, "linear");
  MapMat Y(n->value.data(), B, Out);
  Y.noalias() = CMapMat(x.value().data(), B, In) * CMapMat(w.value().data(), Out, In).transpose();
  if (bias.defined()) {
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < Out; ++o) Y(b, o) += bias.value()[o];
  }
  if (n->requires_grad) {
    const bool has_bias = bias.defined();
    n->backward_fn = [B, In, Out, has_bias](Node& self) {
      Node& xn = parent(self, 0);
      Node& wn = parent(self, 1);
      CMapMat dY(self.grad.data(), B, Out);
      if (xn.requires_grad) MapMat(xn.ensure_grad().data(), B, In).noalias() += dY * CMapMat(wn.value.data(), Out, In);
      if (wn.requires_grad) {
        MapMat(wn.ensure_grad().data(), Out, In).noalias() += dY.transpose() * CMapMat(xn.value.data(), B, In);
      }
      if (has_bias) {
        Node& bn = parent(self, 2);
        if (bn.requires_grad) {
          auto& gb = bn.ensure_grad();
          for (int b = 0; b < B; ++b)
            for (int o = 0; o < Out; ++o) gb[o] += dY(b, o);
        }
      }
    };
  }
  return Tensor(n);
}

Tensor relu(const Tensor& x) {
  auto n = make_node(x.shape(), {&x}, "relu");
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::max(0.0, x.value()[i]);
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      Node& in = parent(self, 0);
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (in.value[i] > 0) g[i] += self.grad[i];
    };
  }
  return Tensor(n);
}

Tensor sigmoid(const Tensor& x) {
  auto n = make_node(x.shape(), {&x}, "sigmoid");
  for (std::size_t i = 0; i < n->value.size(); ++i) {
    const double v = x.value()[i];
    // stable for large |v|
    n->value[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    };
  }
  return Tensor(n);
}

Tensor softmax(const Tensor& x, int axis_in) {
  const int axis = norm_axis(axis_in, x.rank());
  std::size_t outer, len, inner;
  axis_split(x.shape(), axis, outer, len, inner);
  auto n = make_node(x.shape(), {&x}, "softmax");
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      double sum = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xv[base + i * inner] - mx);
        n->value[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < len; ++i) n->value[base + i * inner] /= sum;
    }
  if (n->requires_grad) {
    n->backward_fn = [outer, len, inner](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0;
          for (std::size_t i = 0; i < len; ++i) dot += self.grad[base + i * inner] * self.value[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t k = base + i * inner;
            g[k] += self.value[k] * (self.grad[k] - dot);
          }
        }
    };
  }
  return Tensor(n);
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                 double momentum, double eps) {
  check(x.rank() >= 2, "batchnorm: input needs a channel axis");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (static_cast<std::size_t>(B) * C);
  check(gamma.numel() == static_cast<std::size_t>(C) && beta.numel() == static_cast<std::size_t>(C),
        "batchnorm: affine params must have one value per channel");
  check(stats.running_mean.defined() && stats.running_mean.numel() == static_cast<std::size_t>(C) &&
            stats.running_var.defined() && stats.running_var.numel() == static_cast<std::size_t>(C),
        "batchnorm: running stats shape");
  const std::size_t count = static_cast<std::size_t>(B) * S;
  check(!training || count > 1, "batchnorm: training mode needs more than one value per channel");

  auto n = make_node(x.shape(), {&x, &gamma, &beta}, "batchnorm");
  std::vector<double> mean(C), inv_std(C);
  const auto& xv = x.value();
  for (int c = 0; c < C; ++c) {
    double m, var;
    if (training) {
      double s = 0;
      for (int b = 0; b < B; ++b) {
        const double* p = xv.data() + (static_cast<std::size_t>(b) * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) s += p[i];
      }
      m = s / static_cast<double>(count);
      double ss = 0;
      for (int b = 0; b < B; ++b) {
        const double* p = xv.data() + (static_cast<std::size_t>(b) * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      var = ss / static_cast<double>(count);
      auto& rm = stats.running_mean.value()[c];
      auto& rv = stats.running_var.value()[c];
      rm = (1 - momentum) * rm + momentum * m;
      rv = (1 - momentum) * rv + momentum * ss / static_cast<double>(count - 1);
    } else {
      m = stats.running_mean.value()[c];
      var = stats.running_var.value()[c];
    }
    mean[c] = m;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    const double ga = gamma.value()[c], be = beta.value()[c];
    for (int b = 0; b < B; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) n->value[off + i] = ga * (xv[off + i] - m) * inv_std[c] + be;
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [B, C, S, count, training, mean = std::move(mean), inv_std = std::move(inv_std)](Node& self) {
      Node& xn = parent(self, 0);
      Node& gn = parent(self, 1);
      Node& bn = parent(self, 2);
      for (int c = 0; c < C; ++c) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int b = 0; b < B; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            const double xhat = (xn.value[off + i] - mean[c]) * inv_std[c];
            sum_dy += self.grad[off + i];
            sum_dy_xhat += self.grad[off + i] * xhat;
          }
        }
        if (gn.requires_grad) gn.ensure_grad()[c] += sum_dy_xhat;
        if (bn.requires_grad) bn.ensure_grad()[c] += sum_dy;
        if (!xn.requires_grad) continue;
        auto& gx = xn.ensure_grad();
        const double k = gn.value[c] * inv_std[c];
        const double nn = static_cast<double>(count);
        for (int b = 0; b < B; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            if (training) {
              const double xhat = (xn.value[off + i] - mean[c]) * inv_std[c];
              gx[off + i] += k * (self.grad[off + i] - sum_dy / nn - xhat * sum_dy_xhat / nn);
            } else {
              gx[off + i] += k * self.grad[off + i];
            }
          }
        }
      }
    };
  }
  return Tensor(n);
}

Tensor reshape(const Tensor& x, Shape shape) {
  check(numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto n = make_node(std::move(shape), {&x}, "reshape");
  n->value = x.value();
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(n);
}

Tensor transpose(const Tensor& x, int d0_in, int d1_in) {
  const int r = x.rank();
  const int d0 = norm_axis(d0_in, r), d1 = norm_axis(d1_in, r);
  Shape out = x.shape();
  std::swap(out[d0], out[d1]);
  auto n = make_node(out, {&x}, "transpose");
  // strides of the input, permuted into output order
  std::vector<std::size_t> in_stride(r), perm_stride(r);
  std::size_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_stride[i] = s;
    s *= static_cast<std::size_t>(x.shape()[i]);
  }
  for (int i = 0; i < r; ++i) perm_stride[i] = in_stride[i == d0 ? d1 : i == d1 ? d0 : i];
  std::vector<std::size_t> map(n->value.size());
  std::vector<int> idx(r, 0);
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[i] * perm_stride[i];
    map[o] = src;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  for (std::size_t o = 0; o < map.size(); ++o) n->value[o] = x.value()[map[o]];
  if (n->requires_grad) {
    n->backward_fn = [map = std::move(map)](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
    };
  }
  return Tensor(n);
}

Tensor concat(std::span<const Tensor> xs, int axis_in) {
  check(!xs.empty(), "concat: no inputs");
  const int axis = norm_axis(axis_in, xs[0].rank());
  Shape out = xs[0].shape();
  out[axis] = 0;
  for (const auto& t : xs) {
    check(t.rank() == xs[0].rank(), "concat: rank mismatch");
    for (int i = 0; i < t.rank(); ++i)
      check(i == axis || t.shape()[i] == xs[0].shape()[i], "concat: shapes differ off the concat axis");
    out[axis] += t.shape()[axis];
  }
  auto n = std::make_shared<Node>();
  n->shape = out;
  n->value.assign(numel(out), 0.0);
  n->op = "concat";
  for (const auto& t : xs) {
    n->parents.push_back(t.node());
    n->requires_grad = n->requires_grad || t.requires_grad();
  }
  std::size_t outer, len_out, inner;
  axis_split(out, axis, outer, len_out, inner);
  std::vector<std::size_t> lens;
  std::size_t offset = 0;
  for (const auto& t : xs) {
    const std::size_t len = static_cast<std::size_t>(t.shape()[axis]);
    lens.push_back(len);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(t.value().data() + o * len * inner, len * inner, n->value.data() + (o * len_out + offset) * inner);
    }
    offset += len;
  }
  if (n->requires_grad) {
    n->backward_fn = [outer, len_out, inner, lens = std::move(lens)](Node& self) {
      std::size_t off = 0;
      for (std::size_t p = 0; p < self.parents.size(); ++p) {
        Node& in = *self.parents[p];
        const std::size_t len = lens[p];
        if (in.requires_grad) {
          auto& g = in.ensure_grad();
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + (o * len_out + off) * inner;
            double* dst = g.data() + o * len * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
        }
        off += len;
      }
    };
  }
  return Tensor(n);
}

Tensor slice(const Tensor& x, int axis_in, int start, int length) {
  const int axis = norm_axis(axis_in, x.rank());
  check(start >= 0 && length >= 0 && start + length <= x.shape()[axis], "slice: range out of bounds");
  Shape out = x.shape();
  out[axis] = length;
  auto n = make_node(out, {&x}, "slice");
  std::size_t outer, len_in, inner;
  axis_split(x.shape(), axis, outer, len_in, inner);
  const std::size_t len = static_cast<std::size_t>(length), st = static_cast<std::size_t>(start);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().data() + (o * len_in + st) * inner, len * inner, n->value.data() + o * len * inner);
  }
  if (n->requires_grad) {
    n->backward_fn = [outer, len_in, inner, len, st](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data() + o * len * inner;
        double* dst = g.data() + (o * len_in + st) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor(n);
}

Tensor broadcast_channels(const Tensor& x, int channels) {
  check(x.rank() >= 2 && x.dim(1) == 1 && channels >= 1, "broadcast_channels: input must be (B,1,...)");
  Shape out = x.shape();
  out[1] = channels;
  auto n = make_node(out, {&x}, "broadcast_channels");
  const std::size_t B = static_cast<std::size_t>(x.dim(0)), S = x.numel() / B;
  for (std::size_t b = 0; b < B; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(x.value().data() + b * S, S, n->value.data() + (b * channels + c) * S);
  if (n->requires_grad) {
    n->backward_fn = [B, S, channels](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (int c = 0; c < channels; ++c) {
          const double* src = self.grad.data() + (b * channels + c) * S;
          for (std::size_t i = 0; i < S; ++i) g[b * S + i] += src[i];
        }
    };
  }
  return Tensor(n);
}

Tensor mean(const Tensor& x) {
  check(x.numel() > 0, "mean of empty tensor");
  auto n = make_node({}, {&x}, "mean");
  n->value[0] = std::accumulate(x.value().begin(), x.value().end(), 0.0) / static_cast<double>(x.numel());
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      const double d = self.grad[0] / static_cast<double>(g.size());
      for (auto& v : g) v += d;
    };
  }
  return Tensor(n);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const double> weights) {
  check(pred.shape() == target.shape(), "mse_loss: shapes " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  check(pred.numel() > 0, "mse_loss of empty tensor");
  const std::size_t last = pred.rank() == 0 ? 1 : static_cast<std::size_t>(pred.dim(-1));
  check(weights.empty() || weights.size() == last, "mse_loss: one weight per last-axis entry");
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(last, 1.0);
  auto n = make_node({}, {&pred, &target}, "mse_loss");
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.value()[i] - target.value()[i];
    s += w[i % last] * d * d;
  }
  const double N = static_cast<double>(pred.numel());
  n->value[0] = s / N;
  if (n->requires_grad) {
    n->backward_fn = [w = std::move(w), last, N](Node& self) {
      Node& p = parent(self, 0);
      Node& t = parent(self, 1);
      const double scale = 2.0 * self.grad[0] / N;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double d = scale * w[i % last] * (p.value[i] - t.value[i]);
        if (p.requires_grad) p.ensure_grad()[i] += d;
        if (t.requires_grad) t.ensure_grad()[i] -= d;
      }
    };
  }
  return Tensor(n);
}

}  // namespace hmc::nn
