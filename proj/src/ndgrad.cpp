#include "sedkd/ndgrad.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "sedkd/errors.hpp"

namespace sedkd::nd {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RMat>;
using ConstMatMap = Eigen::Map<const RMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

thread_local bool g_grad_enabled = true;

MatMap as_mat(Array& a, std::size_t rows, std::size_t cols) {
  return MatMap(a.data().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}
ConstMatMap as_mat(const Array& a, std::size_t rows, std::size_t cols) {
  return ConstMatMap(a.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    fail(ErrorKind::dimension, std::string(op) + ": expected rank " + std::to_string(rank) +
                                   " input, got " + shape_str(x.shape()));
  }
}

// Builds a node; parents and the backward rule are only kept when some
// parent needs a gradient and recording is on.
Var make_node(Array value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const Var& p) { return p.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.shared());
      node->backward = std::move(bw);
    }
  }
  return Var(std::move(node));
}

// Gradient buffer of the i-th parent, or null when it takes no gradient.
Array* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Array& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

enum class BinaryKind { add, sub, mul };

Var binary(const Var& a, const Var& b, BinaryKind kind, const char* op) {
  const Array& av = a.value();
  const Array& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool a_scalar = av.is_scalar() && !same;
  const bool b_scalar = bv.is_scalar() && !same;
  if (!same && !a_scalar && !b_scalar) {
    fail(ErrorKind::dimension, std::string(op) + ": shapes " + shape_str(av.shape()) + " and " +
                                   shape_str(bv.shape()) + " do not match");
  }
  const Array& big = a_scalar ? bv : av;
  Array out(big.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    double x = a_scalar ? av[0] : av[i];
    double y = b_scalar ? bv[0] : bv[i];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
    }
  }
  return make_node(std::move(out), {a, b}, [kind, a_scalar, b_scalar](Node& self) {
    const Array& g = self.grad;
    const Array& x = parent_value(self, 0);
    const Array& y = parent_value(self, 1);
    const std::size_t n = g.size();
    if (Array* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == BinaryKind::mul) d *= b_scalar ? y[0] : y[i];
        (*ga)[a_scalar ? 0 : i] += d;
      }
    }
    if (Array* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == BinaryKind::sub) d = -d;
        if (kind == BinaryKind::mul) d *= a_scalar ? x[0] : x[i];
        (*gb)[b_scalar ? 0 : i] += d;
      }
    }
  });
}

// Views a tensor as [outer, len, inner] and max-pools the middle axis.
Var pool_axis(const Var& x, std::size_t outer, std::size_t len, std::size_t inner,
              std::size_t factor, Shape out_shape) {
  const std::size_t out_len = (len + factor - 1) / factor;
  Array out(std::move(out_shape));
  std::vector<std::size_t> argmax(out.size());
  const Array& in = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::size_t begin = t * factor;
      const std::size_t end = std::min(begin + factor, len);
      for (std::size_t k = 0; k < inner; ++k) {
        std::size_t best = (o * len + begin) * inner + k;
        for (std::size_t s = begin + 1; s < end; ++s) {
          std::size_t idx = (o * len + s) * inner + k;
          if (in[idx] > in[best]) best = idx;
        }
        std::size_t dst = (o * out_len + t) * inner + k;
        out[dst] = in[best];
        argmax[dst] = best;
      }
    }
  }
  return make_node(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += self.grad[i];
  });
}

// im2col for one [Cin,H,W] map: rows are (ci, ki, kj), columns output pixels.
void im2col(const Array& x, std::size_t kh, std::size_t kw, Stride s, std::size_t ho,
            std::size_t wo, RMat& cols) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  cols.resize(static_cast<Eigen::Index>(cin * kh * kw), static_cast<Eigen::Index>(ho * wo));
  const double* src = x.data().data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = cols.data() + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const double* line = src + (c * h + oi * s.time + ki) * w + kj;
          for (std::size_t oj = 0; oj < wo; ++oj) row[oi * wo + oj] = line[oj * s.freq];
        }
      }
    }
  }
}

void col2im_add(const RMat& cols, std::size_t kh, std::size_t kw, Stride s, std::size_t ho,
                std::size_t wo, Array& gx) {
  const std::size_t cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  double* dst = gx.data().data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = cols.data() + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          double* line = dst + (c * h + oi * s.time + ki) * w + kj;
          for (std::size_t oj = 0; oj < wo; ++oj) line[oj * s.freq] += row[oi * wo + oj];
        }
      }
    }
  }
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

bool get_u64(std::istream& in, std::uint64_t& v) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}

constexpr char kCheckpointMagic[] = "SEDP1";
constexpr std::size_t kMagicLen = 5;

}  // namespace

// ---- Array ----------------------------------------------------------------------

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    fail(ErrorKind::dimension, "array shape " + shape_str(shape_) + " holds " +
                                   std::to_string(shape_size(shape_)) + " values, got " +
                                   std::to_string(data_.size()));
  }
}

double Array::item() const {
  require(data_.size() == 1, ErrorKind::contract,
          "item() on array of shape " + shape_str(shape_));
  return data_[0];
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Array Array::reshaped(Shape shape) const {
  require(shape_size(shape) == data_.size(), ErrorKind::dimension,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Array out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Array& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Array(value.shape());
  return grad;
}

Var constant(Array value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Array value, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

std::vector<Var> backward(const Var& loss, GradMode mode) {
  require(loss.value().size() == 1, ErrorKind::contract,
          "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  std::vector<Var> leaves;
  if (!loss.requires_grad()) return leaves;

  // Iterative post-order DFS.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{loss.shared(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& p = node->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (const auto& n : order) {
    const bool leaf = n->parents.empty();
    if (leaf) leaves.emplace_back(n);
    if (!leaf || mode == GradMode::reset) {
      n->grad_buffer().fill(0.0);
    } else {
      n->grad_buffer();
    }
  }

  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward) n.backward(n);
  }
  return leaves;
}

// ---- elementwise ----------------------------------------------------------------

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Var scale(const Var& x, double factor) {
  Array out = x.value();
  for (auto& v : out.data()) v *= factor;
  return make_node(std::move(out), {x}, [factor](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += factor * self.grad[i];
  });
}

Var add_scalar(const Var& x, double offset) {
  Array out = x.value();
  for (auto& v : out.data()) v += offset;
  return make_node(std::move(out), {x}, [](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
  });
}

Var one_minus(const Var& x) { return add_scalar(scale(x, -1.0), 1.0); }

Var pow_scalar(const Var& x, double exponent) {
  Array out = x.value();
  for (auto& v : out.data()) {
    if (v < 0.0) fail(ErrorKind::numeric_domain, "pow_scalar: negative base " + std::to_string(v));
    v = std::pow(v, exponent);
  }
  return make_node(std::move(out), {x}, [exponent](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    const Array& in = parent_value(self, 0);
    for (std::size_t i = 0; i < gx->size(); ++i) {
      if (exponent == 0.0) continue;
      double d = (in[i] == 0.0 && exponent < 1.0) ? 0.0 : exponent * std::pow(in[i], exponent - 1.0);
      (*gx)[i] += d * self.grad[i];
    }
  });
}

Var clamp(const Var& x, double lo, double hi) {
  require(lo <= hi, ErrorKind::parameter, "clamp: lo > hi");
  Array out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return make_node(std::move(out), {x}, [lo, hi](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    const Array& in = parent_value(self, 0);
    for (std::size_t i = 0; i < gx->size(); ++i)
      if (in[i] >= lo && in[i] <= hi) (*gx)[i] += self.grad[i];
  });
}

Var elementwise(const Var& x, Unary fn) {
  Array out = x.value();
  for (auto& v : out.data()) {
    switch (fn) {
      case Unary::sigmoid:
        v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case Unary::tanh: v = std::tanh(v); break;
      case Unary::relu: v = v > 0 ? v : 0.0; break;
      case Unary::exp: v = std::exp(v); break;
      case Unary::log:
        if (!(v > 0.0))
          fail(ErrorKind::numeric_domain, "log of non-positive value " + std::to_string(v));
        v = std::log(v);
        break;
    }
  }
  return make_node(std::move(out), {x}, [fn](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    const Array& in = parent_value(self, 0);
    const Array& y = self.value;
    for (std::size_t i = 0; i < gx->size(); ++i) {
      double d = 0.0;
      switch (fn) {
        case Unary::sigmoid: d = y[i] * (1.0 - y[i]); break;
        case Unary::tanh: d = 1.0 - y[i] * y[i]; break;
        case Unary::relu: d = in[i] > 0 ? 1.0 : 0.0; break;
        case Unary::exp: d = y[i]; break;
        case Unary::log: d = 1.0 / in[i]; break;
      }
      (*gx)[i] += d * self.grad[i];
    }
  });
}

// ---- reductions and reshaping ------------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_node(Array::scalar(s), {x}, [](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (auto& g : gx->data()) g += self.grad[0];
  });
}

Var mean(const Var& x) {
  require(x.size() > 0, ErrorKind::contract, "mean of empty array");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var sum_rows(const Var& x) {
  require_rank(x, 2, "sum_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Array out(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += x.value().at(r, c);
  return make_node(std::move(out), {x}, [rows, cols](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx->at(r, c) += self.grad[c];
  });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    fail(ErrorKind::dimension,
         "reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  return make_node(x.value().reshaped(std::move(shape)), {x}, [](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t rows = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != rows) {
    fail(ErrorKind::dimension, "concat_cols: row counts differ, " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
  }
  Array out(Shape{rows, p + q});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < p; ++c) out.at(r, c) = a.value().at(r, c);
    for (std::size_t c = 0; c < q; ++c) out.at(r, p + c) = b.value().at(r, c);
  }
  return make_node(std::move(out), {a, b}, [rows, p, q](Node& self) {
    if (Array* ga = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < p; ++c) ga->at(r, c) += self.grad.at(r, c);
    if (Array* gb = parent_grad(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < q; ++c) gb->at(r, c) += self.grad.at(r, p + c);
  });
}

Var stack_cols(const std::vector<Var>& columns) {
  require(!columns.empty(), ErrorKind::contract, "stack_cols: no columns");
  const std::size_t rows = columns[0].size();
  for (const auto& c : columns) {
    const auto& s = c.shape();
    const bool ok = (s.size() == 1 || (s.size() == 2 && s[1] == 1)) && c.size() == rows;
    if (!ok) {
      fail(ErrorKind::dimension, "stack_cols: column shape " + shape_str(s) +
                                     " incompatible with " + std::to_string(rows) + " rows");
    }
  }
  const std::size_t n = columns.size();
  Array out(Shape{rows, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t r = 0; r < rows; ++r) out.at(r, j) = columns[j].value()[r];
  return make_node(std::move(out), columns, [rows, n](Node& self) {
    for (std::size_t j = 0; j < n; ++j)
      if (Array* g = parent_grad(self, j))
        for (std::size_t r = 0; r < rows; ++r) (*g)[r] += self.grad.at(r, j);
  });
}

Var select_col(const Var& x, std::size_t col) {
  require_rank(x, 2, "select_col");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  require(col < cols, ErrorKind::dimension,
          "select_col: column " + std::to_string(col) + " outside " + shape_str(x.shape()));
  Array out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value().at(r, col);
  return make_node(std::move(out), {x}, [rows, col](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r) gx->at(r, col) += self.grad[r];
  });
}

Var repeat_rows(const Var& x, std::size_t factor, std::size_t rows) {
  require_rank(x, 2, "repeat_rows");
  require(factor >= 1, ErrorKind::parameter, "repeat_rows: factor must be >= 1");
  const std::size_t in_rows = x.shape()[0], cols = x.shape()[1];
  require(rows >= 1 && rows <= in_rows * factor && rows > (in_rows - 1) * factor,
          ErrorKind::dimension,
          "repeat_rows: cannot expand " + shape_str(x.shape()) + " by " +
              std::to_string(factor) + " to " + std::to_string(rows) + " rows");
  Array out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.value().at(r / factor, c);
  return make_node(std::move(out), {x}, [factor, rows, cols](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx->at(r / factor, c) += self.grad.at(r, c);
  });
}

Var map_to_frames(const Var& x) {
  require_rank(x, 3, "map_to_frames");
  const std::size_t ch = x.shape()[0], t = x.shape()[1], f = x.shape()[2];
  Array out(Shape{t, ch * f});
  const Array& in = x.value();
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = 0; k < f; ++k) out.at(i, c * f + k) = in[(c * t + i) * f + k];
  return make_node(std::move(out), {x}, [ch, t, f](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t k = 0; k < f; ++k) (*gx)[(c * t + i) * f + k] += self.grad.at(i, c * f + k);
  });
}

// ---- linear algebra -------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    fail(ErrorKind::dimension, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                   " x " + shape_str(b.shape()));
  }
  Array out(Shape{m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto g = as_mat(std::as_const(self.grad), m, n);
    if (Array* ga = parent_grad(self, 0))
      as_mat(*ga, m, k).noalias() += g * as_mat(parent_value(self, 1), k, n).transpose();
    if (Array* gb = parent_grad(self, 1))
      as_mat(*gb, k, n).noalias() += as_mat(parent_value(self, 0), m, k).transpose() * g;
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (bias.value().rank() != 1 || bias.size() != cols) {
    fail(ErrorKind::dimension, "add_row_bias: bias " + shape_str(bias.shape()) +
                                   " does not fit " + shape_str(x.shape()));
  }
  Array out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += bias.value()[c];
  return make_node(std::move(out), {x, bias}, [rows, cols](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    if (Array* gb = parent_grad(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += self.grad.at(r, c);
  });
}

Var row_l2_norm(const Var& x) {
  require_rank(x, 2, "row_l2_norm");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Array out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x.value().at(r, c) * x.value().at(r, c);
    out[r] = std::sqrt(s);
  }
  return make_node(std::move(out), {x}, [rows, cols](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    const Array& in = parent_value(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double norm = self.value[r];
      if (norm == 0.0) continue;  // subgradient 0 at the origin
      const double k = self.grad[r] / norm;
      for (std::size_t c = 0; c < cols; ++c) gx->at(r, c) += k * in.at(r, c);
    }
  });
}

Var softmax_rows_axis0(const Var& x) {
  require_rank(x, 2, "softmax_rows_axis0");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  require(rows >= 1, ErrorKind::contract, "softmax over an empty axis");
  Array out(x.shape());
  for (std::size_t c = 0; c < cols; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) mx = std::max(mx, x.value().at(r, c));
    double z = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      out.at(r, c) = std::exp(x.value().at(r, c) - mx);
      z += out.at(r, c);
    }
    for (std::size_t r = 0; r < rows; ++r) out.at(r, c) /= z;
  }
  return make_node(std::move(out), {x}, [rows, cols](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    const Array& y = self.value;
    for (std::size_t c = 0; c < cols; ++c) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += y.at(r, c) * self.grad.at(r, c);
      for (std::size_t r = 0; r < rows; ++r) gx->at(r, c) += y.at(r, c) * (self.grad.at(r, c) - dot);
    }
  });
}

// ---- convolution / pooling ----------------------------------------------------------------

Var conv2d(const Var& x, const Var& kernel, Stride stride) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d kernel");
  require(stride.time >= 1 && stride.freq >= 1, ErrorKind::parameter, "conv2d: zero stride");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (kernel.shape()[1] != cin) {
    fail(ErrorKind::dimension, "conv2d: kernel " + shape_str(kernel.shape()) +
                                   " expects a different channel count than input " +
                                   shape_str(x.shape()));
  }
  if (kh > h || kw > w || kh == 0 || kw == 0) {
    fail(ErrorKind::dimension, "conv2d: kernel " + shape_str(kernel.shape()) +
                                   " larger than input " + shape_str(x.shape()));
  }
  const std::size_t ho = (h - kh) / stride.time + 1;
  const std::size_t wo = (w - kw) / stride.freq + 1;
  const std::size_t patch = cin * kh * kw;

  RMat cols;
  im2col(x.value(), kh, kw, stride, ho, wo, cols);
  Array out(Shape{cout, ho, wo});
  as_mat(out, cout, ho * wo).noalias() = as_mat(kernel.value(), cout, patch) * cols;

  return make_node(std::move(out), {x, kernel},
                   [kh, kw, stride, ho, wo, cout, patch](Node& self) {
                     auto g = as_mat(std::as_const(self.grad), cout, ho * wo);
                     Array* gx = parent_grad(self, 0);
                     Array* gk = parent_grad(self, 1);
                     if (gk) {
                       RMat cols;
                       im2col(parent_value(self, 0), kh, kw, stride, ho, wo, cols);
                       as_mat(*gk, cout, patch).noalias() += g * cols.transpose();
                     }
                     if (gx) {
                       RMat dcols = as_mat(parent_value(self, 1), cout, patch).transpose() * g;
                       col2im_add(dcols, kh, kw, stride, ho, wo, *gx);
                     }
                   });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 3, "add_channel_bias");
  const std::size_t ch = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
  if (bias.value().rank() != 1 || bias.size() != ch) {
    fail(ErrorKind::dimension, "add_channel_bias: bias " + shape_str(bias.shape()) +
                                   " does not fit " + shape_str(x.shape()));
  }
  Array out = x.value();
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bias.value()[c];
  return make_node(std::move(out), {x, bias}, [ch, plane](Node& self) {
    if (Array* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    if (Array* gb = parent_grad(self, 1))
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < plane; ++i) (*gb)[c] += self.grad[c * plane + i];
  });
}

Var pad2d(const Var& x, std::size_t pad_h, std::size_t pad_w) {
  require_rank(x, 3, "pad2d");
  const std::size_t ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t ph = h + 2 * pad_h, pw = w + 2 * pad_w;
  Array out(Shape{ch, ph, pw});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[(c * ph + i + pad_h) * pw + j + pad_w] = x.value()[(c * h + i) * w + j];
  return make_node(std::move(out), {x}, [ch, h, w, ph, pw, pad_h, pad_w](Node& self) {
    Array* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          (*gx)[(c * h + i) * w + j] += self.grad[(c * ph + i + pad_h) * pw + j + pad_w];
  });
}

Var pool_time(const Var& x, std::size_t factor) {
  require(factor >= 1, ErrorKind::parameter, "pool_time: factor must be >= 1");
  const Shape& s = x.shape();
  switch (s.size()) {
    case 1: return pool_axis(x, 1, s[0], 1, factor, Shape{(s[0] + factor - 1) / factor});
    case 2:
      return pool_axis(x, 1, s[0], s[1], factor, Shape{(s[0] + factor - 1) / factor, s[1]});
    case 3:
      return pool_axis(x, s[0], s[1], s[2], factor,
                       Shape{s[0], (s[1] + factor - 1) / factor, s[2]});
    default:
      fail(ErrorKind::dimension, "pool_time: unsupported shape " + shape_str(s));
  }
}

Var pool_freq(const Var& x, std::size_t factor) {
  require(factor >= 1, ErrorKind::parameter, "pool_freq: factor must be >= 1");
  require_rank(x, 3, "pool_freq");
  const Shape& s = x.shape();
  return pool_axis(x, s[0] * s[1], s[2], 1, factor,
                   Shape{s[0], s[1], (s[2] + factor - 1) / factor});
}

// ---- recurrent --------------------------------------------------------------------------------

Var gru(const Var& x, const Var& wx, const Var& wh, const Var& bx, const Var& bh, bool reverse) {
  require_rank(x, 2, "gru");
  const std::size_t steps = x.shape()[0], in = x.shape()[1];
  require_rank(wh, 2, "gru wh");
  const std::size_t hid = wh.shape()[0];
  const bool ok = wx.shape() == Shape{in, 3 * hid} && wh.shape() == Shape{hid, 3 * hid} &&
                  bx.shape() == Shape{3 * hid} && bh.shape() == Shape{3 * hid};
  if (!ok) {
    fail(ErrorKind::dimension, "gru: weights " + shape_str(wx.shape()) + ", " +
                                   shape_str(wh.shape()) + " do not fit input " +
                                   shape_str(x.shape()));
  }
  require(steps >= 1, ErrorKind::contract, "gru: empty sequence");

  // Pre-activations of the input path for all steps at once.
  RMat xproj = as_mat(x.value(), steps, in) * as_mat(wx.value(), in, 3 * hid);
  xproj.rowwise() += ConstVecMap(bx.value().data().data(), 3 * hid).transpose();

  // Per processed step: r, z, n, (h_prev Wh + bh) candidate slice, h_prev.
  RMat gates(steps, 3 * hid), hh_n(steps, hid), h_prev(steps, hid);
  Array out(Shape{steps, hid});
  auto whm = as_mat(wh.value(), hid, 3 * hid);
  RowVec bhv = ConstVecMap(bh.value().data().data(), 3 * hid).transpose();
  RowVec h = RowVec::Zero(hid);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    h_prev.row(t) = h;
    RowVec hh = h * whm + bhv;
    for (std::size_t j = 0; j < hid; ++j) {
      double r = 1.0 / (1.0 + std::exp(-(xproj(t, j) + hh(j))));
      double z = 1.0 / (1.0 + std::exp(-(xproj(t, hid + j) + hh(hid + j))));
      double n = std::tanh(xproj(t, 2 * hid + j) + r * hh(2 * hid + j));
      gates(t, j) = r;
      gates(t, hid + j) = z;
      gates(t, 2 * hid + j) = n;
      hh_n(t, j) = hh(2 * hid + j);
      h(j) = (1.0 - z) * n + z * h(j);
    }
    for (std::size_t j = 0; j < hid; ++j) out.at(t, j) = h(j);
  }

  return make_node(
      std::move(out), {x, wx, wh, bx, bh},
      [steps, in, hid, reverse, gates = std::move(gates), hh_n = std::move(hh_n),
       h_prev = std::move(h_prev)](Node& self) {
        RMat dxpre(steps, 3 * hid);
        RMat dhh_all(steps, 3 * hid);
        auto whm = as_mat(parent_value(self, 2), hid, 3 * hid);
        RowVec dh_next = RowVec::Zero(hid);
        for (std::size_t k = steps; k-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - k : k;
          RowVec dh = dh_next;
          for (std::size_t j = 0; j < hid; ++j) dh(j) += self.grad.at(t, j);
          RowVec dhh(3 * hid);
          RowVec dprev(hid);
          for (std::size_t j = 0; j < hid; ++j) {
            const double r = gates(t, j), z = gates(t, hid + j), n = gates(t, 2 * hid + j);
            const double dn = dh(j) * (1.0 - z);
            const double dz = dh(j) * (h_prev(t, j) - n);
            dprev(j) = dh(j) * z;
            const double dn_pre = dn * (1.0 - n * n);
            const double dz_pre = dz * z * (1.0 - z);
            const double dr_pre = dn_pre * hh_n(t, j) * r * (1.0 - r);
            dxpre(t, j) = dr_pre;
            dxpre(t, hid + j) = dz_pre;
            dxpre(t, 2 * hid + j) = dn_pre;
            dhh(j) = dr_pre;
            dhh(hid + j) = dz_pre;
            dhh(2 * hid + j) = dn_pre * r;
          }
          dhh_all.row(t) = dhh;
          dh_next = dprev + dhh * whm.transpose();
        }
        if (Array* gwh = parent_grad(self, 2))
          as_mat(*gwh, hid, 3 * hid).noalias() += h_prev.transpose() * dhh_all;
        if (Array* gbh = parent_grad(self, 4))
          VecMap(gbh->data().data(), 3 * hid) += dhh_all.colwise().sum().transpose();
        if (Array* gwx = parent_grad(self, 1))
          as_mat(*gwx, in, 3 * hid).noalias() +=
              as_mat(parent_value(self, 0), steps, in).transpose() * dxpre;
        if (Array* gbx = parent_grad(self, 3))
          VecMap(gbx->data().data(), 3 * hid) += dxpre.colwise().sum().transpose();
        if (Array* gx = parent_grad(self, 0))
          as_mat(*gx, steps, in).noalias() +=
              dxpre * as_mat(parent_value(self, 1), in, 3 * hid).transpose();
      });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::parameter, "dropout: rate outside [0,1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Array mask(x.shape());
  for (auto& m : mask.data()) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mul(x, constant(std::move(mask)));
}

// ---- checkpoints ---------------------------------------------------------------------------------

void write_checkpoint(std::ostream& out, const std::vector<NamedArray>& tensors) {
  out.write(kCheckpointMagic, kMagicLen);
  for (const auto& t : tensors) {
    put_u64(out, t.name.size());
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u64(out, t.value.rank());
    for (auto d : t.value.shape()) put_u64(out, d);
    for (double v : t.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) fail(ErrorKind::io, "checkpoint write failed");
}

std::vector<NamedArray> read_checkpoint(std::istream& in) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::string(magic, kMagicLen) != kCheckpointMagic)
    fail(ErrorKind::format, "checkpoint: bad magic (expected SEDP1)");
  std::vector<NamedArray> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    std::uint64_t name_len = 0, ndim = 0;
    if (!get_u64(in, name_len) || name_len > (1u << 20))
      fail(ErrorKind::format, "checkpoint: truncated record header");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len)) || !get_u64(in, ndim) ||
        ndim > 16)
      fail(ErrorKind::format, "checkpoint: truncated record for '" + name + "'");
    Shape shape(ndim);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!get_u64(in, v)) fail(ErrorKind::format, "checkpoint: truncated dims for '" + name + "'");
      d = v;
    }
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) {
      std::uint64_t bits = 0;
      if (!get_u64(in, bits)) fail(ErrorKind::format, "checkpoint: truncated values for '" + name + "'");
      v = std::bit_cast<double>(bits);
    }
    tensors.push_back({std::move(name), Array(std::move(shape), std::move(values))});
  }
  return tensors;
}

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open checkpoint for writing: " + path);
  write_checkpoint(out, tensors);
}

std::vector<NamedArray> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

}  // namespace sedkd::nd
