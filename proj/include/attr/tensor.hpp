#pragma once

#include <Eigen/Core>

#include <cassert>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace attr {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& m) : std::runtime_error(m) {}
};

// Dense n-d array of Scalar with optional gradient buffer. Storage is flat
// row-major; shape is metadata. Nodes are shared so tensors behave like
// references to one value/grad pair (cheap to copy into backward closures).
template <typename S>
struct TensorNode {
  Shape shape;
  Eigen::Array<S, Eigen::Dynamic, 1> value;
  Eigen::Array<S, Eigen::Dynamic, 1> grad;  // empty until first touched
  bool requires_grad = false;
};

template <typename S>
class GradTape;

template <typename S>
class Tensor {
 public:
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using ArrayMap = Eigen::Map<Array>;
  using ConstArrayMap = Eigen::Map<const Array>;
  // Row-major matrix view of a rank-2 tensor.
  using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = Array::Zero(shape_numel(t.node_->shape));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.array() = v;
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) { return full({1}, v, requires_grad); }

  static Tensor from_data(Shape shape, const std::vector<S>& data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw TensorError("from_data: size mismatch for shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    std::copy(data.begin(), data.end(), t.data());
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  std::int64_t size() const { return node_->value.size(); }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }

  ArrayMap array() { return ArrayMap(node_->value.data(), node_->value.size()); }
  ConstArrayMap array() const { return ConstArrayMap(node_->value.data(), node_->value.size()); }

  // Rank-2 matrix views.
  MatrixMap mat() {
    assert(rank() == 2);
    return MatrixMap(data(), dim(0), dim(1));
  }
  ConstMatrixMap mat() const {
    assert(rank() == 2);
    return ConstMatrixMap(data(), dim(0), dim(1));
  }

  S& at(std::int64_t i) { return node_->value(i); }
  S at(std::int64_t i) const { return node_->value(i); }
  S& at2(int r, int c) { return node_->value(static_cast<std::int64_t>(r) * dim(1) + c); }
  S at2(int r, int c) const { return node_->value(static_cast<std::int64_t>(r) * dim(1) + c); }
  S item() const {
    if (size() != 1) throw TensorError("item: tensor is not a scalar");
    return node_->value(0);
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

  // Gradient buffer, allocated to zeros on first touch.
  ArrayMap grad() {
    ensure_grad();
    return ArrayMap(node_->grad.data(), node_->grad.size());
  }
  ConstArrayMap grad() const {
    const_cast<Tensor*>(this)->ensure_grad();
    return ConstArrayMap(node_->grad.data(), node_->grad.size());
  }
  MatrixMap grad_mat() {
    ensure_grad();
    assert(rank() == 2);
    return MatrixMap(node_->grad.data(), dim(0), dim(1));
  }

  void zero_grad() {
    if (node_ && node_->grad.size() > 0) node_->grad.setZero();
  }

  // Node identity (two tensors sharing a node are the same value).
  const void* id() const { return node_.get(); }
  TensorNode<S>* node() const { return node_.get(); }

  Tensor clone() const {
    Tensor t = zeros(shape());
    t.array() = array();
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t = Tensor<T>::zeros(shape());
    for (std::int64_t i = 0; i < size(); ++i) t.at(i) = static_cast<T>(at(i));
    return t;
  }

 private:
  void ensure_grad() {
    if (node_->grad.size() != node_->value.size())
      node_->grad = Array::Zero(node_->value.size());
  }

  std::shared_ptr<TensorNode<S>> node_;
};

// Reverse-mode tape. Ops append a backward closure in execution order;
// backward() replays them in reverse (a valid reverse topological order since
// records were appended as the forward graph was built) and then clears.
// One tape is active per scalar type at a time (single-threaded training).
template <typename S>
class GradTape {
 public:
  GradTape() {
    prev_ = active_;
    active_ = this;
  }
  ~GradTape() { active_ = prev_; }

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return active_; }

  void record(std::function<void()> backward) { records_.push_back(std::move(backward)); }

  std::size_t size() const { return records_.size(); }

  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss)=1 and propagates. The tape is cleared afterwards.
  void backward(Tensor<S> loss) {
    if (loss.size() != 1) throw TensorError("backward: loss must be scalar");
    loss.grad()(0) = S(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    clear();
  }

 private:
  std::vector<std::function<void()>> records_;
  GradTape* prev_ = nullptr;
  static inline thread_local GradTape* active_ = nullptr;
};

namespace detail {

// True when the op must participate in autograd.
template <typename S, typename... Ts>
bool tracing(const Ts&... inputs) {
  return GradTape<S>::active() != nullptr && (inputs.requires_grad() || ...);
}

template <typename S>
void mark_output(Tensor<S>& out) {
  out.set_requires_grad(true);
}

}  // namespace detail

}  // namespace attr
