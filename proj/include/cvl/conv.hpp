#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cvl/error.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/parallel.hpp"

namespace cvl {

// 3x3 convolution layer, kernel laid out [ky][kx][c_in][c_out].
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> kernel;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(std::size_t cin, std::size_t cout)
      : in_channels(cin), out_channels(cout), kernel(9 * cin * cout, 0.0), bias(cout, 0.0) {}

  double& weight(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co) {
    return kernel[((ky * 3 + kx) * in_channels + ci) * out_channels + co];
  }
  double weight(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co) const {
    return kernel[((ky * 3 + kx) * in_channels + ci) * out_channels + co];
  }

  bool finite() const {
    return std::all_of(kernel.begin(), kernel.end(), [](double w) { return std::isfinite(w); }) &&
           std::all_of(bias.begin(), bias.end(), [](double b) { return std::isfinite(b); });
  }
};

// Two stacked 3x3 layers with a ReLU in between (disabled for the identity
// configuration, which must pass negative values through).
struct ConvStack {
  ConvLayer first;
  ConvLayer second;
  bool relu_between = true;

  std::size_t in_channels() const { return first.in_channels; }
  std::size_t out_channels() const { return second.out_channels; }

  static ConvStack identity(std::size_t channels) {
    ConvStack s{ConvLayer(channels, channels), ConvLayer(channels, channels), false};
    for (std::size_t c = 0; c < channels; ++c) {
      s.first.weight(1, 1, c, c) = 1.0;
      s.second.weight(1, 1, c, c) = 1.0;
    }
    return s;
  }

  static ConvStack zeros(std::size_t in_channels, std::size_t hidden, std::size_t out_channels) {
    return {ConvLayer(in_channels, hidden), ConvLayer(hidden, out_channels), true};
  }

  void validate() const {
    require(first.kernel.size() == 9 * first.in_channels * first.out_channels &&
                second.kernel.size() == 9 * second.in_channels * second.out_channels &&
                first.bias.size() == first.out_channels && second.bias.size() == second.out_channels,
            ErrorCode::DimensionMismatch, "conv layer storage does not match its channel counts");
    require(second.in_channels == first.out_channels, ErrorCode::DimensionMismatch,
            "second conv layer input does not match first layer output");
    require(first.finite() && second.finite(), ErrorCode::InvalidArgument, "non-finite conv weights");
  }
};

// Zero-padded same-size convolution. Masked input pixels read as zero and
// masked output pixels are written as zero; the mask is preserved.
template <typename T>
FeatureMap<T> conv3x3(const FeatureMap<T>& in, const ConvLayer& layer, bool relu = false) {
  require(in.channels() == layer.in_channels, ErrorCode::DimensionMismatch,
          "conv expects " + std::to_string(layer.in_channels) + " channels, got " + std::to_string(in.channels()));
  const std::size_t h = in.height();
  const std::size_t w = in.width();
  const std::size_t cin = layer.in_channels;
  const std::size_t cout = layer.out_channels;
  FeatureMap<T> out(h, w, cout);
  {
    auto src = in.mask();
    auto dst = out.mask();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  parallel_for(0, h, [&](std::size_t r) {
    std::vector<double> acc(cout);
    for (std::size_t c = 0; c < w; ++c) {
      if (!in.valid(r, c)) continue;
      std::copy(layer.bias.begin(), layer.bias.end(), acc.begin());
      for (std::size_t ky = 0; ky < 3; ++ky) {
        if ((r == 0 && ky == 0) || r + ky - 1 >= h) continue;
        const std::size_t rr = r + ky - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          if ((c == 0 && kx == 0) || c + kx - 1 >= w) continue;
          const std::size_t cc = c + kx - 1;
          if (!in.valid(rr, cc)) continue;
          const auto px = in.pixel(rr, cc);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double x = static_cast<double>(px[ci]);
            if (x == 0.0) continue;
            const double* wrow = &layer.kernel[((ky * 3 + kx) * cin + ci) * cout];
            for (std::size_t co = 0; co < cout; ++co) acc[co] += wrow[co] * x;
          }
        }
      }
      auto dst = out.pixel(r, c);
      for (std::size_t co = 0; co < cout; ++co)
        dst[co] = static_cast<T>(relu ? std::max(0.0, acc[co]) : acc[co]);
    }
  });
  return out;
}

template <typename T>
FeatureMap<T> apply(const ConvStack& stack, const FeatureMap<T>& in) {
  stack.validate();
  return conv3x3(conv3x3(in, stack.first, stack.relu_between), stack.second, false);
}

}  // namespace cvl
