#include "core/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace mohets {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    require(d >= 0, ErrorCode::internal, "negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
TensorT<T>::TensorT(Shape shape, bool requires_grad) : shape_(std::move(shape)) {
  int64_t n = numel(shape_);
  data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T(0));
  if (requires_grad) grad_ = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T(0));
}

template <typename T>
TensorT<T> TensorT<T>::from(Shape shape, std::vector<T> values) {
  require(numel(shape) == static_cast<int64_t>(values.size()), ErrorCode::internal,
          "tensor literal: " + std::to_string(values.size()) + " values for shape " +
              shape_str(shape));
  TensorT t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<T>>(std::move(values));
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value) {
  TensorT t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

template <typename T>
int64_t TensorT<T>::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  require(i >= 0 && i < r, ErrorCode::internal,
          "dim index " + std::to_string(i) + " out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(i)];
}

template <typename T>
void TensorT<T>::ensure_grad() {
  if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
}

template <typename T>
void TensorT<T>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
}

template <typename T>
T TensorT<T>::item() const {
  require(size() == 1, ErrorCode::internal, "item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

template <typename T>
TensorT<T> TensorT<T>::reshape(Shape new_shape) const {
  require(numel(new_shape) == size(), ErrorCode::internal,
          "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
              " changes element count");
  TensorT t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  t.grad_ = grad_;
  return t;
}

template <typename T>
TapeT<T>*& active_tape() {
  thread_local TapeT<T>* tape = nullptr;
  return tape;
}

template <typename T>
void backward(TensorT<T>& loss, TapeT<T>& tape) {
  require(loss.size() == 1, ErrorCode::internal,
          "backward: loss must be scalar, got " + shape_str(loss.shape()));
  require(loss.requires_grad(), ErrorCode::internal,
          "backward: loss does not require gradients");
  loss.grad()[0] = T(1);
  tape.backward();
}

template class TensorT<float>;
template class TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;
template TapeT<float>*& active_tape<float>();
template TapeT<double>*& active_tape<double>();
template void backward(TensorT<float>&, TapeT<float>&);
template void backward(TensorT<double>&, TapeT<double>&);

}  // namespace mohets
