#pragma once

// Dense 64-bit arrays with a small reverse-mode differentiation engine.
//
// A Var is a handle to a graph Node. Ops build new nodes whose backward
// closures push the node's gradient into its parents. Parameters are leaf
// nodes created with `parameter()`; everything reachable from a scalar loss
// gets a gradient when `backward()` runs.
//
// Broadcasting is limited to scalar-with-array. Every other shape mix is a
// dimension error.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sedkd::nd {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage, so vectorised reductions split their work the
// same way on every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), alignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_scalar() const noexcept { return data_.size() == 1 && shape_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  Buffer& vec() noexcept { return data_; }
  const Buffer& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D access.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const;
  void fill(double v);
  Array reshaped(Shape shape) const;

  bool operator==(const Array& other) const = default;

 private:
  Shape shape_;
  Buffer data_;
};

struct Node {
  Array value;
  Array grad;  // allocated lazily, same shape as value
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  std::string name;

  Array& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Array& grad() const { return node_->grad; }
  Array& grad_buffer() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Array value);
Var parameter(Array value, std::string name = {});

// While alive, ops on this thread record no parents or backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled() noexcept;

enum class GradMode {
  reset,       // zero every reachable gradient (parameters included) first
  accumulate,  // keep existing leaf gradients and add into them
};

// Runs reverse-mode differentiation from a scalar loss. Returns the leaf
// nodes (parameters) that received gradients, in discovery order.
std::vector<Var> backward(const Var& loss, GradMode mode = GradMode::reset);

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);
Var one_minus(const Var& x);
Var pow_scalar(const Var& x, double exponent);
Var clamp(const Var& x, double lo, double hi);

enum class Unary { sigmoid, tanh, relu, exp, log };
Var elementwise(const Var& x, Unary fn);
inline Var sigmoid(const Var& x) { return elementwise(x, Unary::sigmoid); }
inline Var tanh(const Var& x) { return elementwise(x, Unary::tanh); }
inline Var relu(const Var& x) { return elementwise(x, Unary::relu); }
inline Var exp(const Var& x) { return elementwise(x, Unary::exp); }
inline Var log(const Var& x) { return elementwise(x, Unary::log); }

// ---- reductions and reshaping ----------------------------------------------

Var sum(const Var& x);
Var mean(const Var& x);
Var sum_rows(const Var& x);  // [R,C] -> [C]
Var reshape(const Var& x, Shape shape);
Var concat_cols(const Var& a, const Var& b);           // [T,p],[T,q] -> [T,p+q]
Var stack_cols(const std::vector<Var>& columns);       // n x [T] or [T,1] -> [T,n]
Var select_col(const Var& x, std::size_t col);         // [T,C] -> [T]
Var repeat_rows(const Var& x, std::size_t factor, std::size_t rows);
Var map_to_frames(const Var& x);                       // [C,T,F] -> [T,C*F]

// ---- linear algebra ----------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add_row_bias(const Var& x, const Var& bias);       // [T,n] + [n]
Var row_l2_norm(const Var& x);                         // [T,d] -> [T]
Var softmax_rows_axis0(const Var& x);                  // softmax down each column

// ---- convolution / pooling ----------------------------------------------------

struct Stride {
  std::size_t time = 1;
  std::size_t freq = 1;
};

// Valid cross-correlation. x: [Cin,H,W], kernel: [Cout,Cin,kh,kw].
Var conv2d(const Var& x, const Var& kernel, Stride stride = {});
Var add_channel_bias(const Var& x, const Var& bias);   // [C,H,W] + [C]
Var pad2d(const Var& x, std::size_t pad_h, std::size_t pad_w);

// Non-overlapping max pooling along time. Time is axis 0 for rank 1/2 inputs
// and axis 1 for [C,T,F]. A ragged tail is padded with the last frame, so the
// output length is ceil(T / factor).
Var pool_time(const Var& x, std::size_t factor);
// Same along the last axis of a [C,T,F] map.
Var pool_freq(const Var& x, std::size_t factor);

// ---- recurrent -------------------------------------------------------------------

// Gated recurrent unit unrolled over the rows of x ([T,in]). Weights hold the
// reset|update|candidate gates side by side: wx [in,3h], wh [h,3h], bx/bh [3h].
// With reverse=true the sequence is consumed back to front; row t of the
// output is always the hidden state aligned with input row t.
Var gru(const Var& x, const Var& wx, const Var& wh, const Var& bx, const Var& bh,
        bool reverse);

Var dropout(const Var& x, double rate, std::mt19937_64& rng);

// ---- checkpoints -------------------------------------------------------------------

struct NamedArray {
  std::string name;
  Array value;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedArray>& tensors);
std::vector<NamedArray> read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const std::vector<NamedArray>& tensors);
std::vector<NamedArray> load_checkpoint(const std::string& path);

}  // namespace sedkd::nd
