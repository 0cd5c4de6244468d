/* Copyright 2026 The mhforge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Dense NCHW tensors and the forward/backward math for every layer kind the
// netspec IR knows about. Compute is 64-bit throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mhforge/error.hpp"

namespace mhforge {

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t per_sample() const { return c * h * w; }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return detail::concat(n, "x", c, "x", h, "x", w);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape4 shape, std::vector<double> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError(detail::concat("tensor data length ", data_.size(),
                                      " does not match shape ", shape_.str()));
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  // Same data viewed with a new shape of equal element count.
  Tensor reshaped(Shape4 shape) const {
    if (shape.size() != data_.size()) {
      throw ShapeError(detail::concat("cannot reshape ", shape_.str(), " to ",
                                      shape.str()));
    }
    return Tensor(shape, data_);
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

// Trainable parameters of one conv or fc layer. Conv weights are
// (Cout, Cin, K, K); fc weights are (F, D, 1, 1).
struct LayerParams {
  Tensor weights;
  std::vector<double> bias;
  bool frozen = false;

  std::size_t count() const { return weights.size() + bias.size(); }
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

struct FcGrads {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

struct PoolResult {
  Tensor output;
  // Flat input index chosen for every output element.
  std::vector<std::size_t> argmax;
  Shape4 input_shape;
};

struct SoftmaxCrossEntropy {
  double loss = 0.0;
  Tensor probs;
  Tensor grad_logits;
};

inline std::size_t conv_output_dim(std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t pad,
                                   const char* dim_name) {
  if (stride == 0) throw ShapeError("conv stride must be >= 1");
  const std::size_t padded = in + 2 * pad;
  if (kernel == 0 || padded < kernel) {
    throw ShapeError(detail::concat("conv ", dim_name, ": (", in, "+2*", pad,
                                    "-", kernel, ")/", stride,
                                    "+1 < 1"));
  }
  return (padded - kernel) / stride + 1;
}

inline Tensor conv2d_forward(const Tensor& input, const LayerParams& params,
                             std::size_t stride, std::size_t pad) {
  const Shape4& in = input.shape();
  const Shape4& ws = params.weights.shape();
  if (ws.h != ws.w) {
    throw ShapeError(detail::concat("conv kernel must be square, got ",
                                    ws.str()));
  }
  if (in.c != ws.c) {
    throw ShapeError(detail::concat("conv input channels: expected ", ws.c,
                                    ", found ", in.c));
  }
  if (params.bias.size() != ws.n) {
    throw ShapeError(detail::concat("conv bias length: expected ", ws.n,
                                    ", found ", params.bias.size()));
  }
  const std::size_t k = ws.h;
  const std::size_t oh = conv_output_dim(in.h, k, stride, pad, "height");
  const std::size_t ow = conv_output_dim(in.w, k, stride, pad, "width");
  Tensor out({in.n, ws.n, oh, ow});

  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  const auto ih_max = static_cast<std::ptrdiff_t>(in.h);
  const auto iw_max = static_cast<std::ptrdiff_t>(in.w);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      double* dst = &out.at(n, co, 0, 0);
      std::fill(dst, dst + oh * ow, params.bias[co]);
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        const double* src = &input.at(n, ci, 0, 0);
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = params.weights.at(co, ci, kh, kw);
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y * stride + kh) - ipad;
              if (iy < 0 || iy >= ih_max) continue;
              const double* row = src + iy * iw_max;
              double* orow = dst + y * ow;
              for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(x * stride + kw) - ipad;
                if (ix < 0 || ix >= iw_max) continue;
                orow[x] += wv * row[ix];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline ConvGrads conv2d_backward(const Tensor& input, const LayerParams& params,
                                 const Tensor& grad_out, std::size_t stride,
                                 std::size_t pad) {
  const Shape4& in = input.shape();
  const Shape4& ws = params.weights.shape();
  if (in.c != ws.c) {
    throw ShapeError(detail::concat("conv input channels: expected ", ws.c,
                                    ", found ", in.c));
  }
  const std::size_t k = ws.h;
  const std::size_t oh = conv_output_dim(in.h, k, stride, pad, "height");
  const std::size_t ow = conv_output_dim(in.w, k, stride, pad, "width");
  const Shape4 expected{in.n, ws.n, oh, ow};
  if (grad_out.shape() != expected) {
    throw ShapeError(detail::concat("conv grad_out shape: expected ",
                                    expected.str(), ", found ",
                                    grad_out.shape().str()));
  }

  ConvGrads g{Tensor(in), Tensor(ws), std::vector<double>(ws.n, 0.0)};
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  const auto ih_max = static_cast<std::ptrdiff_t>(in.h);
  const auto iw_max = static_cast<std::ptrdiff_t>(in.w);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      const double* go = &grad_out.at(n, co, 0, 0);
      double bsum = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) bsum += go[i];
      g.bias[co] += bsum;
      for (std::size_t ci = 0; ci < in.c; ++ci) {
        const double* src = &input.at(n, ci, 0, 0);
        double* gsrc = &g.input.at(n, ci, 0, 0);
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = params.weights.at(co, ci, kh, kw);
            double wgrad = 0.0;
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y * stride + kh) - ipad;
              if (iy < 0 || iy >= ih_max) continue;
              for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(x * stride + kw) - ipad;
                if (ix < 0 || ix >= iw_max) continue;
                const double gv = go[y * ow + x];
                wgrad += gv * src[iy * iw_max + ix];
                gsrc[iy * iw_max + ix] += gv * wv;
              }
            }
            g.weights.at(co, ci, kh, kw) += wgrad;
          }
        }
      }
    }
  }
  return g;
}

// Ties resolve to the lowest flat index inside the window.
inline PoolResult maxpool2d(const Tensor& input, std::size_t kernel,
                            std::size_t stride) {
  const Shape4& in = input.shape();
  if (kernel == 0 || stride == 0) {
    throw ShapeError("maxpool kernel and stride must be >= 1");
  }
  if (in.h < kernel || in.w < kernel) {
    throw ShapeError(detail::concat("maxpool window ", kernel, "x", kernel,
                                    " exceeds input ", in.h, "x", in.w));
  }
  const std::size_t oh = (in.h - kernel) / stride + 1;
  const std::size_t ow = (in.w - kernel) / stride + 1;
  PoolResult r{Tensor({in.n, in.c, oh, ow}), {}, in};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          std::size_t best = input.offset(n, c, y * stride, x * stride);
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const std::size_t idx =
                  input.offset(n, c, y * stride + ky, x * stride + kx);
              if (input[idx] > input[best]) best = idx;
            }
          }
          r.output[o] = input[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

inline Tensor maxpool2d_backward(const std::vector<std::size_t>& argmax,
                                 const Shape4& input_shape,
                                 const Tensor& grad_out) {
  if (grad_out.size() != argmax.size()) {
    throw ShapeError(detail::concat("maxpool grad_out has ", grad_out.size(),
                                    " elements, expected ", argmax.size()));
  }
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

inline Tensor global_avgpool(const Tensor& input) {
  const Shape4& in = input.shape();
  const std::size_t area = in.h * in.w;
  if (area == 0) throw ShapeError("global_avgpool needs H*W >= 1");
  Tensor out({in.n, in.c, 1, 1});
  for (std::size_t i = 0; i < in.n * in.c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < area; ++j) s += input[i * area + j];
    out[i] = s / static_cast<double>(area);
  }
  return out;
}

inline Tensor global_avgpool_backward(const Shape4& input_shape,
                                      const Tensor& grad_out) {
  const std::size_t area = input_shape.h * input_shape.w;
  const Shape4 expected{input_shape.n, input_shape.c, 1, 1};
  if (grad_out.shape() != expected) {
    throw ShapeError(detail::concat("global_avgpool grad_out shape: expected ",
                                    expected.str(), ", found ",
                                    grad_out.shape().str()));
  }
  Tensor g(input_shape);
  const double scale = 1.0 / static_cast<double>(area);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    for (std::size_t j = 0; j < area; ++j) g[i * area + j] = grad_out[i] * scale;
  }
  return g;
}

inline Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > 0.0 ? input[i] : 0.0;
  }
  return out;
}

// Subgradient at exactly zero is zero.
inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw ShapeError(detail::concat("relu grad_out shape: expected ",
                                    input.shape().str(), ", found ",
                                    grad_out.shape().str()));
  }
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  }
  return g;
}

inline void check_fc(const Tensor& input, const LayerParams& params) {
  const Shape4& ws = params.weights.shape();
  const std::size_t d = input.shape().per_sample();
  if (ws.c * ws.h * ws.w != d) {
    throw ShapeError(detail::concat("fc input dimension: expected D=",
                                    ws.c * ws.h * ws.w, ", found D=", d));
  }
  if (params.bias.size() != ws.n) {
    throw ShapeError(detail::concat("fc bias length: expected ", ws.n,
                                    ", found ", params.bias.size()));
  }
}

// Input is flattened to N x D; output is N x F x 1 x 1.
inline Tensor fully_connected(const Tensor& input, const LayerParams& params) {
  check_fc(input, params);
  const std::size_t batch = input.shape().n;
  const std::size_t d = input.shape().per_sample();
  const std::size_t f = params.weights.shape().n;
  Tensor out({batch, f, 1, 1});
  const auto x = input.data();
  const auto w = params.weights.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < f; ++j) {
      double acc = params.bias[j];
      const double* xr = &x[n * d];
      const double* wr = &w[j * d];
      for (std::size_t i = 0; i < d; ++i) acc += xr[i] * wr[i];
      out[n * f + j] = acc;
    }
  }
  return out;
}

inline FcGrads fully_connected_backward(const Tensor& input,
                                        const LayerParams& params,
                                        const Tensor& grad_out) {
  check_fc(input, params);
  const std::size_t batch = input.shape().n;
  const std::size_t d = input.shape().per_sample();
  const std::size_t f = params.weights.shape().n;
  if (grad_out.size() != batch * f || grad_out.shape().n != batch) {
    throw ShapeError(detail::concat("fc grad_out shape: expected ", batch, "x",
                                    f, "x1x1, found ",
                                    grad_out.shape().str()));
  }
  FcGrads g{Tensor(input.shape()), Tensor(params.weights.shape()),
            std::vector<double>(f, 0.0)};
  const auto x = input.data();
  const auto w = params.weights.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < f; ++j) {
      const double gv = grad_out[n * f + j];
      g.bias[j] += gv;
      for (std::size_t i = 0; i < d; ++i) {
        g.weights[j * d + i] += gv * x[n * d + i];
        g.input[n * d + i] += gv * w[j * d + i];
      }
    }
  }
  return g;
}

inline std::size_t logits_width(const Tensor& logits) {
  return logits.shape().per_sample();
}

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
inline SoftmaxCrossEntropy softmax_cross_entropy(
    const Tensor& logits, std::span<const int> labels) {
  const std::size_t batch = logits.shape().n;
  const std::size_t f = logits_width(logits);
  if (labels.size() != batch) {
    throw ShapeError(detail::concat("softmax_cross_entropy: ", batch,
                                    " rows but ", labels.size(), " labels"));
  }
  if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  SoftmaxCrossEntropy r{0.0, Tensor(logits.shape()), Tensor(logits.shape())};
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= f) {
      throw Error(detail::concat("label ", labels[n], " at row ", n,
                                 " outside [0, ", f, ")"));
    }
    const double* row = &logits[n * f];
    double m = row[0];
    for (std::size_t j = 1; j < f; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < f; ++j) z += std::exp(row[j] - m);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < f; ++j) {
      r.probs[n * f + j] = std::exp(row[j] - m - log_z);
    }
    r.loss += -(row[labels[n]] - m - log_z);
  }
  const double inv = 1.0 / static_cast<double>(batch);
  r.loss *= inv;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < f; ++j) {
      const double onehot =
          static_cast<std::size_t>(labels[n]) == j ? 1.0 : 0.0;
      r.grad_logits[n * f + j] = (r.probs[n * f + j] - onehot) * inv;
    }
  }
  return r;
}

// Lowest index wins ties.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t batch = logits.shape().n;
  const std::size_t f = logits_width(logits);
  std::vector<int> out(batch, 0);
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < f; ++j) {
      if (logits[n * f + j] > logits[n * f + best]) best = j;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

inline double top1_accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) {
    throw ShapeError(detail::concat("top1_accuracy: ", pred.size(),
                                    " rows but ", labels.size(), " labels"));
  }
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// He-normal conv weights, zero bias.
inline LayerParams init_conv_params(std::size_t out_channels,
                                    std::size_t in_channels, std::size_t kernel,
                                    std::uint64_t seed) {
  LayerParams p{Tensor({out_channels, in_channels, kernel, kernel}),
                std::vector<double>(out_channels, 0.0), false};
  std::mt19937_64 rng(seed);
  const double stddev =
      std::sqrt(2.0 / static_cast<double>(kernel * kernel * in_channels));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.weights.data()) v = dist(rng);
  return p;
}

// Xavier-uniform fc weights, zero bias.
inline LayerParams init_fc_params(std::size_t out_features,
                                  std::size_t in_features, std::uint64_t seed) {
  LayerParams p{Tensor({out_features, in_features, 1, 1}),
                std::vector<double>(out_features, 0.0), false};
  std::mt19937_64 rng(seed);
  const double limit =
      std::sqrt(6.0 / static_cast<double>(in_features + out_features));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : p.weights.data()) v = dist(rng);
  return p;
}

// Classification heads: N(0, 0.01^2) weights, zero bias, so fresh heads
// predict close to uniformly.
inline LayerParams init_head_params(std::size_t out_features,
                                    std::size_t in_features, std::uint64_t seed) {
  LayerParams p{Tensor({out_features, in_features, 1, 1}),
                std::vector<double>(out_features, 0.0), false};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.01);
  for (double& v : p.weights.data()) v = dist(rng);
  return p;
}

}  // namespace mhforge
