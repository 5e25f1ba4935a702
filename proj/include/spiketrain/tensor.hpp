#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spiketrain/errors.hpp"

namespace spiketrain {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

// Thread-local recycling pool behind every tensor allocation. Buffers are
// bucketed by exact element count; once the training loop reaches steady
// state each step's tensors come from the previous step's frees.
template <typename T>
class BufferPool {
 public:
  ~BufferPool() {
    for (auto& [n, bucket] : free_)
      for (T* p : bucket) delete[] p;
  }

  T* get(std::size_t n) {
    auto it = free_.find(n);
    if (it != free_.end() && !it->second.empty()) {
      T* p = it->second.back();
      it->second.pop_back();
      held_bytes_ -= n * sizeof(T);
      return p;
    }
    return new T[n];
  }

  void put(T* p, std::size_t n) {
    if (held_bytes_ + n * sizeof(T) > kMaxHeldBytes) {
      delete[] p;
      return;
    }
    free_[n].push_back(p);
    held_bytes_ += n * sizeof(T);
  }

  static const std::shared_ptr<BufferPool>& local() {
    thread_local auto pool = std::make_shared<BufferPool>();
    return pool;
  }

 private:
  static constexpr std::size_t kMaxHeldBytes = std::size_t(1) << 28;
  std::unordered_map<std::size_t, std::vector<T*>> free_;
  std::size_t held_bytes_ = 0;
};

template <typename T>
std::shared_ptr<T[]> acquire_buffer(std::size_t n) {
  if (n == 0) return nullptr;
  auto pool = BufferPool<T>::local();
  T* p = pool->get(n);
  return std::shared_ptr<T[]>(
      p, [n, wp = std::weak_ptr<BufferPool<T>>(pool)](T* q) {
        if (auto sp = wp.lock())
          sp->put(q, n);
        else
          delete[] q;
      });
}

}  // namespace detail

// Dense row-major n-dimensional array with value semantics. Copies are
// shallow (shared storage); tensors are treated as immutable once built,
// so sharing read-only across threads is safe. Mutation happens only while
// a tensor is being filled by its creator.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  // Uninitialized storage; callers fill every element.
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        size_(shape_numel(shape_)),
        data_(detail::acquire_buffer<T>(size_)) {}

  static Tensor zeros(Shape shape) {
    Tensor t(std::move(shape));
    std::memset(t.data(), 0, t.size() * sizeof(T));
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.size(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T value) { return full(Shape{}, value); }

  static Tensor from(Shape shape, std::initializer_list<T> values) {
    Tensor t(std::move(shape));
    if (values.size() != t.size())
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor from(Shape shape, const std::vector<T>& values) {
    Tensor t(std::move(shape));
    if (values.size() != t.size())
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape()));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Views: same storage, new shape. Row-major contiguity makes this free.
  Tensor reshape(Shape shape) const {
    if (shape_numel(shape) != size_)
      throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                       shape_str(shape) + ": element count differs");
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = size_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t(shape_);
    std::memcpy(t.data(), data(), size_ * sizeof(T));
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::size_t size_ = 0;
  std::shared_ptr<T[]> data_;
};

template <typename T>
bool tensor_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
bool allclose(const Tensor<T>& a, const Tensor<T>& b, double atol = 1e-8) {
  return a.same_shape(b) && max_abs_diff(a, b) <= atol;
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = To(t[i]);
  return out;
}

}  // namespace spiketrain
