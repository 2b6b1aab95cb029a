#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvl/error.hpp"

namespace cvl {

// Dense H x W x C grid with a per-pixel validity mask. Storage is row-major
// with the channel index varying fastest. Masked pixels always hold zeros.
template <typename T = double>
class FeatureMap {
 public:
  using value_type = T;

  FeatureMap() = default;

  FeatureMap(std::size_t height, std::size_t width, std::size_t channels, bool valid = false)
      : height_(height),
        width_(width),
        channels_(channels),
        data_(height * width * channels, T(0)),
        mask_(height * width, valid ? 1 : 0) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return pixels() == 0 || channels_ == 0; }

  bool same_shape(const FeatureMap& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  T& at(std::size_t row, std::size_t col, std::size_t ch) {
    return data_[(row * width_ + col) * channels_ + ch];
  }
  const T& at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * width_ + col) * channels_ + ch];
  }

  std::span<T> pixel(std::size_t row, std::size_t col) {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }
  std::span<const T> pixel(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }

  bool valid(std::size_t row, std::size_t col) const { return mask_[row * width_ + col] != 0; }
  void set_valid(std::size_t row, std::size_t col, bool v) { mask_[row * width_ + col] = v ? 1 : 0; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<std::uint8_t> mask() noexcept { return mask_; }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }

  std::size_t valid_count() const noexcept {
    std::size_t n = 0;
    for (auto m : mask_) n += m != 0;
    return n;
  }

  // Zeroes data under the mask so the mask/data invariant holds.
  void apply_mask() {
    for (std::size_t p = 0; p < pixels(); ++p)
      if (!mask_[p])
        for (std::size_t c = 0; c < channels_; ++c) data_[p * channels_ + c] = T(0);
  }

  bool is_consistent() const {
    for (std::size_t p = 0; p < pixels(); ++p)
      for (std::size_t c = 0; c < channels_; ++c) {
        const T v = data_[p * channels_ + c];
        if (!std::isfinite(static_cast<double>(v))) return false;
        if (!mask_[p] && v != T(0)) return false;
      }
    return true;
  }

  template <typename U>
  FeatureMap<U> cast() const {
    FeatureMap<U> out(height_, width_, channels_);
    auto dst = out.data();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
    auto m = out.mask();
    for (std::size_t i = 0; i < mask_.size(); ++i) m[i] = mask_[i];
    return out;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
  std::vector<std::uint8_t> mask_;
};

template <typename T>
void require_same_shape(const FeatureMap<T>& a, const FeatureMap<T>& b, const char* what) {
  require(a.same_shape(b), ErrorCode::DimensionMismatch,
          std::string(what) + ": " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + "x" +
              std::to_string(a.channels()) + " vs " + std::to_string(b.height()) + "x" +
              std::to_string(b.width()) + "x" + std::to_string(b.channels()));
}

}  // namespace cvl
