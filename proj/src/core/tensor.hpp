#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace mohets {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense array with an optional gradient buffer.  Copies share storage
// (values are immutable once produced), so tensors are cheap to pass around
// and to capture in backward closures.  A tensor "requires grad" iff its
// gradient buffer is allocated; operations allocate one on their outputs
// whenever a tape is active and any input carries one.
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;
  explicit TensorT(Shape shape, bool requires_grad = false);
  static TensorT from(Shape shape, std::vector<T> values);
  static TensorT full(Shape shape, T value);
  static TensorT scalar(T value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const;  // negative i counts from the back
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T* grad() { return grad_ ? grad_->data() : nullptr; }
  const T* grad() const { return grad_ ? grad_->data() : nullptr; }
  bool requires_grad() const { return static_cast<bool>(grad_); }

  void ensure_grad();  // allocate (zeroed) gradient buffer if missing
  void zero_grad();
  T item() const;
  std::vector<T> to_vector() const { return *data_; }

  // Shares both value and gradient storage; the adjoint of a reshape is a
  // reshape, so no tape entry is needed.
  TensorT reshape(Shape new_shape) const;

  bool shares_data(const TensorT& other) const { return data_ == other.data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
};

// Ordered record of executed primitives; backward() replays the adjoints in
// reverse execution order, exactly once each.
template <typename T>
class TapeT {
 public:
  void record(std::function<void()> backward) {
    entries_.push_back(std::move(backward));
  }
  void backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }
  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

// Innermost active tape for element type T (thread-local).  Ops record onto
// it when set; with no active tape, forwards run grad-free (inference mode).
template <typename T>
TapeT<T>*& active_tape();

template <typename T>
class TapeScopeT {
 public:
  explicit TapeScopeT(TapeT<T>& tape) : prev_(active_tape<T>()) {
    active_tape<T>() = &tape;
  }
  ~TapeScopeT() { active_tape<T>() = prev_; }
  TapeScopeT(const TapeScopeT&) = delete;
  TapeScopeT& operator=(const TapeScopeT&) = delete;

 private:
  TapeT<T>* prev_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape.
template <typename T>
void backward(TensorT<T>& loss, TapeT<T>& tape);

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using TapeScope = TapeScopeT<float>;

extern template class TensorT<float>;
extern template class TensorT<double>;
extern template class TapeT<float>;
extern template class TapeT<double>;
extern template TapeT<float>*& active_tape<float>();
extern template TapeT<double>*& active_tape<double>();
extern template void backward(TensorT<float>&, TapeT<float>&);
extern template void backward(TensorT<double>&, TapeT<double>&);

}  // namespace mohets
