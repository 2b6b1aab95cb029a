#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cvl/conv.hpp"
#include "cvl/error.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/parallel.hpp"

namespace cvl {

struct QkvWeights {
  ConvStack query;
  ConvStack key;
  ConvStack value;

  static QkvWeights identity(std::size_t channels) {
    return {ConvStack::identity(channels), ConvStack::identity(channels), ConvStack::identity(channels)};
  }
};

template <typename T>
struct Qkv {
  FeatureMap<T> query;
  FeatureMap<T> key;
  FeatureMap<T> value;
};

template <typename T>
Qkv<T> qkv_transform(const FeatureMap<T>& frame, const QkvWeights& weights) {
  for (const ConvStack* s : {&weights.query, &weights.key, &weights.value}) {
    require(s->in_channels() == frame.channels() && s->out_channels() == frame.channels(),
            ErrorCode::DimensionMismatch,
            "qkv stack maps " + std::to_string(s->in_channels()) + "->" + std::to_string(s->out_channels()) +
                " channels but frame has " + std::to_string(frame.channels()));
  }
  return {apply(weights.query, frame), apply(weights.key, frame), apply(weights.value, frame)};
}

// Cross-frame attention weights M[i][j][p]: for each source frame i and
// pixel p, a softmax over target frames j of the channel dot product
// Q_i[p] . K_j[p]. Frames masked at p are excluded from the softmax.
class AttentionTensor {
 public:
  AttentionTensor(std::size_t frames, std::size_t height, std::size_t width)
      : frames_(frames),
        height_(height),
        width_(width),
        values_(frames * frames * height * width, 0.0),
        valid_(height * width, 0) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return height_ * width_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t p) {
    return values_[(i * frames_ + j) * pixels() + p];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t p) const {
    return values_[(i * frames_ + j) * pixels() + p];
  }

  bool valid(std::size_t p) const { return valid_[p] != 0; }
  void set_valid(std::size_t p, bool v) { valid_[p] = v ? 1 : 0; }

 private:
  std::size_t frames_;
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

struct AttentionOptions {
  // Divide logits by sqrt(C). Off by default: the fused softmax has no temperature.
  bool scale_logits = false;
};

template <typename T>
AttentionTensor attention_matrix(const std::vector<FeatureMap<T>>& queries, const std::vector<FeatureMap<T>>& keys,
                                 AttentionOptions options = {}) {
  require(!queries.empty(), ErrorCode::EmptySequence, "attention over an empty sequence");
  require(keys.size() == queries.size(), ErrorCode::DimensionMismatch, "query and key counts differ");
  const FeatureMap<T>& ref = queries.front();
  for (const auto& m : queries) require_same_shape(ref, m, "attention query");
  for (const auto& m : keys) require_same_shape(ref, m, "attention key");

  const std::size_t n = queries.size();
  const std::size_t channels = ref.channels();
  const std::size_t width = ref.width();
  const double scale = options.scale_logits && channels > 0 ? 1.0 / std::sqrt(static_cast<double>(channels)) : 1.0;
  AttentionTensor m(n, ref.height(), width);

  parallel_for(0, ref.height(), [&](std::size_t r) {
    std::vector<double> logits(n);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t p = r * width + c;
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) any = any || keys[j].valid(r, c);
      if (!any) continue;
      m.set_valid(p, true);
      for (std::size_t i = 0; i < n; ++i) {
        const auto q = queries[i].pixel(r, c);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!keys[j].valid(r, c)) {
            logits[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const auto k = keys[j].pixel(r, c);
          double s = 0.0;
          for (std::size_t ch = 0; ch < channels; ++ch) s += static_cast<double>(q[ch]) * static_cast<double>(k[ch]);
          logits[j] = s * scale;
          max_logit = std::max(max_logit, logits[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          logits[j] = keys[j].valid(r, c) ? std::exp(logits[j] - max_logit) : 0.0;
          total += logits[j];
        }
        for (std::size_t j = 0; j < n; ++j) m(i, j, p) = logits[j] / total;
      }
    }
  });
  return m;
}

/// Fused map F[p] = (1/N) sum_i sum_j M[i][j][p] V_j[p]. The output is
/// valid wherever at least one frame is.
template <typename T>
FeatureMap<T> pcsf_fuse(const AttentionTensor& m, const std::vector<FeatureMap<T>>& values) {
  require(!values.empty(), ErrorCode::EmptySequence, "fusion over an empty sequence");
  require(values.size() == m.frames(), ErrorCode::DimensionMismatch, "attention and value frame counts differ");
  const FeatureMap<T>& ref = values.front();
  for (const auto& v : values) require_same_shape(ref, v, "fusion value");
  require(ref.height() == m.height() && ref.width() == m.width(), ErrorCode::DimensionMismatch,
          "attention and value spatial sizes differ");

  const std::size_t n = values.size();
  const std::size_t channels = ref.channels();
  const std::size_t width = ref.width();
  FeatureMap<T> out(ref.height(), width, channels);
  parallel_for(0, ref.height(), [&](std::size_t r) {
    std::vector<double> weight(n);
    std::vector<double> acc(channels);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t p = r * width + c;
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) any = any || values[j].valid(r, c);
      if (!any || !m.valid(p)) continue;
      // Column sums of M: total weight each value frame receives.
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += m(i, j, p);
        weight[j] = s / static_cast<double>(n);
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (weight[j] == 0.0) continue;
        const auto v = values[j].pixel(r, c);
        for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += weight[j] * static_cast<double>(v[ch]);
      }
      auto dst = out.pixel(r, c);
      for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] = static_cast<T>(acc[ch]);
      out.set_valid(r, c, true);
    }
  });
  return out;
}

// Mask-weighted per-pixel mean across frames.
template <typename T>
FeatureMap<T> mean_fuse(const std::vector<FeatureMap<T>>& frames) {
  require(!frames.empty(), ErrorCode::EmptySequence, "fusion over an empty sequence");
  const FeatureMap<T>& ref = frames.front();
  for (const auto& f : frames) require_same_shape(ref, f, "mean fusion frame");
  const std::size_t channels = ref.channels();
  FeatureMap<T> out(ref.height(), ref.width(), channels);
  parallel_for(0, ref.height(), [&](std::size_t r) {
    std::vector<double> acc(channels);
    for (std::size_t c = 0; c < ref.width(); ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t count = 0;
      for (const auto& f : frames) {
        if (!f.valid(r, c)) continue;
        ++count;
        const auto px = f.pixel(r, c);
        for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += static_cast<double>(px[ch]);
      }
      if (count == 0) continue;
      auto dst = out.pixel(r, c);
      for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] = static_cast<T>(acc[ch] / static_cast<double>(count));
      out.set_valid(r, c, true);
    }
  });
  return out;
}

// Full photo-consistency fusion: per-frame Q/K/V, attention, weighted sum.
template <typename T>
FeatureMap<T> fuse_sequence(const std::vector<FeatureMap<T>>& frames, const QkvWeights& weights,
                            AttentionOptions options = {}) {
  require(!frames.empty(), ErrorCode::EmptySequence, "fusion over an empty sequence");
  std::vector<FeatureMap<T>> q, k, v;
  q.reserve(frames.size());
  k.reserve(frames.size());
  v.reserve(frames.size());
  for (const auto& f : frames) {
    auto t = qkv_transform(f, weights);
    q.push_back(std::move(t.query));
    k.push_back(std::move(t.key));
    v.push_back(std::move(t.value));
  }
  return pcsf_fuse(attention_matrix(q, k, options), v);
}

}  // namespace cvl
