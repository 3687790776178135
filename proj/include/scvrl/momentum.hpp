#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "scvrl/model.hpp"

namespace scvrl {

/// theta <- m * theta + (1 - m) * theta' for every parameter.
template <class T>
void ema_update(ModelState<T>& momentum, const ModelState<T>& online, double m) {
  if (!(m >= 0 && m <= 1)) throw InputError("ema coefficient must be in [0,1]");
  auto& dst = momentum.params();
  const auto& src = online.params();
  if (dst.size() != src.size()) throw InputError("ema_update: parameter lists differ in length");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].rows != src[i].rows || dst[i].cols != src[i].cols)
      throw InputError("ema_update: shape mismatch at tensor " + src[i].name);
  }
  const T a = static_cast<T>(m), b = static_cast<T>(1 - m);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[i].data;
    const auto& s = src[i].data;
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = a * d[j] + b * s[j];
  }
}

/// Row-major embedding matrix.
struct EmbeddingMatrix {
  int rows = 0;
  int dim = 0;
  std::vector<float> data;

  [[nodiscard]] const float* row(int r) const { return data.data() + static_cast<std::size_t>(r) * dim; }
  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;
};

/// Fixed-capacity FIFO of unit-norm keys. Once full, each new key overwrites
/// the oldest one.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int capacity, int dim)
      : capacity_(capacity), dim_(dim), data_(static_cast<std::size_t>(capacity) * dim, 0.0f) {
    if (capacity < 1 || dim < 1) throw InputError("memory bank needs capacity >= 1 and dim >= 1");
  }

  [[nodiscard]] int capacity() const { return capacity_; }
  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] int count() const { return count_; }
  [[nodiscard]] int cursor() const { return cursor_; }
  [[nodiscard]] const std::vector<float>& raw() const { return data_; }

  void enqueue(const float* key) {
    double n2 = 0;
    for (int c = 0; c < dim_; ++c) n2 += static_cast<double>(key[c]) * key[c];
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-4)
      throw InputError("memory bank keys must be unit-norm (norm " + std::to_string(std::sqrt(n2)) + ")");
    std::copy_n(key, dim_, data_.begin() + static_cast<std::ptrdiff_t>(cursor_) * dim_);
    cursor_ = (cursor_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
  }

  void enqueue(const std::vector<float>& key) {
    if (static_cast<int>(key.size()) != dim_) throw InputError("memory bank key has wrong dimension");
    enqueue(key.data());
  }

  void enqueue(const EmbeddingMatrix& keys) {
    if (keys.dim != dim_) throw InputError("memory bank key has wrong dimension");
    for (int r = 0; r < keys.rows; ++r) enqueue(keys.row(r));
  }

  /// Snapshot copy, oldest key first.
  [[nodiscard]] EmbeddingMatrix negatives() const {
    if (count_ == 0) throw InputError("bank must be warmed before visual loss");
    EmbeddingMatrix m{count_, dim_, std::vector<float>(static_cast<std::size_t>(count_) * dim_)};
    const int start = count_ < capacity_ ? 0 : cursor_;
    for (int i = 0; i < count_; ++i)
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>((start + i) % capacity_) * dim_, dim_,
                  m.data.begin() + static_cast<std::ptrdiff_t>(i) * dim_);
    return m;
  }

  /// Restores raw state (checkpoint loading).
  void restore(int count, int cursor, std::vector<float> data) {
    if (count < 0 || count > capacity_ || cursor < 0 || cursor >= capacity_ ||
        data.size() != static_cast<std::size_t>(capacity_) * dim_)
      throw InputError("corrupt memory bank state");
    count_ = count;
    cursor_ = cursor;
    data_ = std::move(data);
  }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  int capacity_ = 0;
  int dim_ = 0;
  int count_ = 0;
  int cursor_ = 0;
  std::vector<float> data_;
};

}  // namespace scvrl
