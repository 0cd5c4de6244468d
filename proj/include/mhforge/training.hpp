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

// Multi-loss training: one shared forward pass, one softmax cross-entropy per
// head, gradients of all heads accumulated in a single reverse traversal, and
// momentum SGD on unfrozen parameters.

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhforge/dataset.hpp"
#include "mhforge/error.hpp"
#include "mhforge/model_io.hpp"
#include "mhforge/netspec.hpp"
#include "mhforge/surgery.hpp"
#include "mhforge/tensor.hpp"

namespace mhforge {

struct ForwardCache {
  std::map<std::string, Tensor, std::less<>> activations;
  std::map<std::string, std::vector<std::size_t>, std::less<>> pool_argmax;
};

struct HeadOutput {
  std::string slot;
  std::string head_layer;
  double weight = 1.0;
  Tensor logits;
  double loss = 0.0;
  double accuracy = 0.0;
  Tensor grad_logits;  // d(loss)/d(logits), unweighted
};

struct ForwardResult {
  ForwardCache cache;
  std::vector<HeadOutput> heads;  // loss-layer order
};

using GradientMap = std::map<std::string, LayerParams, std::less<>>;

inline const LayerParams& params_of(const ModelBundle& bundle,
                                    const std::string& name) {
  const auto it = bundle.params.find(name);
  if (it == bundle.params.end()) {
    throw Error(detail::concat("missing parameters for layer '", name, "'"));
  }
  return it->second;
}

// Runs every compute layer once. Loss and accuracy layers are skipped here.
inline ForwardCache forward(const ModelBundle& bundle, const Tensor& images) {
  ForwardCache cache;
  for (const auto& l : bundle.spec.layers) {
    if (l.kind == LayerKind::loss || l.kind == LayerKind::accuracy) continue;
    if (l.kind == LayerKind::input) {
      const Shape3& s = l.shape;
      const Shape4& got = images.shape();
      if (got.c != s.c || got.h != s.h || got.w != s.w) {
        throw ShapeError(detail::concat("input '", l.name, "' expects ",
                                        s.str(), " per sample, found ",
                                        got.c, "x", got.h, "x", got.w));
      }
      cache.activations.insert_or_assign(l.name, images);
      continue;
    }
    const Tensor& in = cache.activations.at(l.inputs[0]);
    Tensor out;
    switch (l.kind) {
      case LayerKind::conv:
        out = conv2d_forward(in, params_of(bundle, l.name), l.stride, l.pad);
        break;
      case LayerKind::relu:
        out = relu(in);
        break;
      case LayerKind::maxpool: {
        PoolResult p = maxpool2d(in, l.kernel, l.stride);
        out = std::move(p.output);
        cache.pool_argmax.insert_or_assign(l.name, std::move(p.argmax));
        break;
      }
      case LayerKind::gavgpool:
        out = global_avgpool(in);
        break;
      case LayerKind::fc:
        out = fully_connected(in, params_of(bundle, l.name));
        break;
      default:
        break;
    }
    cache.activations.insert_or_assign(l.name, std::move(out));
  }
  return cache;
}

// labels[s] holds the targets of label slot s (loss-layer order).
inline ForwardResult forward_all(const ModelBundle& bundle, const Tensor& images,
                                 const std::vector<std::vector<int>>& labels) {
  const auto slots = bundle.spec.label_slots();
  if (labels.size() != slots.size()) {
    throw Error(detail::concat("batch has ", labels.size(),
                               " label columns, network has ", slots.size(),
                               " heads"));
  }
  ForwardResult r{forward(bundle, images), {}};
  std::size_t s = 0;
  for (const auto& l : bundle.spec.layers) {
    if (l.kind != LayerKind::loss) continue;
    HeadOutput h;
    h.slot = l.label;
    h.head_layer = l.inputs[0];
    h.weight = l.loss_weight;
    h.logits = r.cache.activations.at(h.head_layer);
    auto ce = softmax_cross_entropy(h.logits, labels[s]);
    h.loss = ce.loss;
    h.grad_logits = std::move(ce.grad_logits);
    h.accuracy = top1_accuracy(h.logits, labels[s]);
    r.heads.push_back(std::move(h));
    ++s;
  }
  return r;
}

// Layers whose output gradient is needed: those with trainable parameters
// at or below them.
inline std::map<std::string, bool, std::less<>> gradient_demand(
    const NetworkSpec& spec) {
  std::map<std::string, bool, std::less<>> need;
  for (const auto& l : spec.layers) {
    bool n = has_params(l.kind) && !l.frozen;
    for (const auto& in : l.inputs) n = n || need.at(in);
    need[l.name] = n;
  }
  return need;
}

// head_grads maps a head fc layer name to d(total loss)/d(logits). Returns
// gradients for unfrozen parameters only; traversal never descends below
// the deepest trainable layer.
inline GradientMap backward_multi(
    const ModelBundle& bundle, const ForwardCache& cache,
    const std::map<std::string, Tensor, std::less<>>& head_grads) {
  const auto need = gradient_demand(bundle.spec);
  std::map<std::string, Tensor, std::less<>> grad;
  auto accumulate = [&](const std::string& name, Tensor g) {
    auto it = grad.find(name);
    if (it == grad.end()) {
      grad.emplace(name, std::move(g));
    } else {
      auto dst = it->second.data();
      const auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  };
  for (const auto& [name, g] : head_grads) {
    const LayerSpec* l = bundle.spec.find(name);
    if (!l || l->kind != LayerKind::fc) {
      throw Error(detail::concat("'", name, "' is not an fc layer"));
    }
    if (need.at(name)) accumulate(name, g);
  }

  GradientMap out;
  const auto& layers = bundle.spec.layers;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    const LayerSpec& l = *it;
    if (l.kind == LayerKind::input || l.kind == LayerKind::loss ||
        l.kind == LayerKind::accuracy) {
      continue;
    }
    const auto g_it = grad.find(l.name);
    if (g_it == grad.end()) continue;
    const Tensor& g = g_it->second;
    const std::string& src = l.inputs[0];
    const bool pass_down = need.at(src);
    const Tensor& in = cache.activations.at(src);
    switch (l.kind) {
      case LayerKind::conv: {
        const LayerParams& p = params_of(bundle, l.name);
        ConvGrads cg = conv2d_backward(in, p, g, l.stride, l.pad);
        if (!l.frozen) {
          out[l.name] = {std::move(cg.weights), std::move(cg.bias), false};
        }
        if (pass_down) accumulate(src, std::move(cg.input));
        break;
      }
      case LayerKind::fc: {
        const LayerParams& p = params_of(bundle, l.name);
        FcGrads fg = fully_connected_backward(in, p, g);
        if (!l.frozen) {
          out[l.name] = {std::move(fg.weights), std::move(fg.bias), false};
        }
        if (pass_down) accumulate(src, fg.input.reshaped(in.shape()));
        break;
      }
      case LayerKind::relu:
        if (pass_down) accumulate(src, relu_backward(in, g));
        break;
      case LayerKind::maxpool:
        if (pass_down) {
          accumulate(src, maxpool2d_backward(cache.pool_argmax.at(l.name),
                                             in.shape(), g));
        }
        break;
      case LayerKind::gavgpool:
        if (pass_down) accumulate(src, global_avgpool_backward(in.shape(), g));
        break;
      default:
        break;
    }
    grad.erase(l.name);
  }
  return out;
}

// Weighted upstream gradients of the total loss sum_k w_k * L_k.
inline std::map<std::string, Tensor, std::less<>> weighted_head_grads(
    const ForwardResult& r) {
  std::map<std::string, Tensor, std::less<>> out;
  for (const auto& h : r.heads) {
    Tensor g = h.grad_logits;
    for (double& v : g.data()) v *= h.weight;
    auto it = out.find(h.head_layer);
    if (it == out.end()) {
      out.emplace(h.head_layer, std::move(g));
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return out;
}

using VelocityState = std::map<std::string, LayerParams, std::less<>>;

// v <- momentum*v - lr*g; w <- w + v. Frozen parameters are never touched.
inline void sgd_step(std::map<std::string, LayerParams, std::less<>>& params,
                     const GradientMap& grads, double lr, double momentum,
                     VelocityState& velocity) {
  for (const auto& [name, g] : grads) {
    auto p_it = params.find(name);
    if (p_it == params.end()) {
      throw Error(detail::concat("gradient for unknown layer '", name, "'"));
    }
    LayerParams& p = p_it->second;
    if (p.frozen) continue;
    auto [v_it, fresh] = velocity.try_emplace(name);
    LayerParams& v = v_it->second;
    if (fresh) {
      v.weights = Tensor(p.weights.shape());
      v.bias.assign(p.bias.size(), 0.0);
    }
    if (g.weights.shape() != p.weights.shape() || g.bias.size() != p.bias.size()) {
      throw ShapeError(detail::concat("gradient shape mismatch for '", name,
                                      "'"));
    }
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      v.weights[i] = momentum * v.weights[i] - lr * g.weights[i];
      p.weights[i] += v.weights[i];
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
      v.bias[i] = momentum * v.bias[i] - lr * g.bias[i];
      p.bias[i] += v.bias[i];
    }
  }
}

// Maps each label slot of a network to its targets given full per-category
// labels: a slot named after a category reads that column; the hard-coded
// slot encodes the whole tuple.
class LabelBinder {
 public:
  LabelBinder(const NetworkSpec& spec, const LabelMaps& maps)
      : categories_(maps.categories), hc_(maps.hc) {
    for (const auto& slot : spec.label_slots()) {
      if (auto k = categories_.index_of(slot)) {
        columns_.push_back(static_cast<int>(*k));
      } else if (slot == kHcSlot && hc_) {
        columns_.push_back(-1);
      } else {
        throw Error(detail::concat("label slot '", slot,
                                   "' matches no category in the model"));
      }
      slots_.push_back(slot);
    }
  }

  const std::vector<std::string>& slots() const { return slots_; }
  bool is_hard_coded() const {
    return std::find(columns_.begin(), columns_.end(), -1) != columns_.end();
  }
  const LabelCategories& categories() const { return categories_; }
  const std::optional<HcLabelMap>& hc() const { return hc_; }

  // per_category[k][row] -> per_slot[s][row]
  std::vector<std::vector<int>> bind(
      const std::vector<std::vector<int>>& per_category) const {
    if (per_category.size() != categories_.size()) {
      throw Error(detail::concat("samples carry ", per_category.size(),
                                 " label categories, model expects ",
                                 categories_.size()));
    }
    std::vector<std::vector<int>> out;
    const std::size_t rows = per_category.empty() ? 0 : per_category[0].size();
    for (int col : columns_) {
      if (col >= 0) {
        out.push_back(per_category[static_cast<std::size_t>(col)]);
        continue;
      }
      auto& enc = out.emplace_back(rows);
      std::vector<int> tuple(per_category.size());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < tuple.size(); ++k) {
          tuple[k] = per_category[k][r];
        }
        enc[r] = hc_encode(*hc_, tuple);
      }
    }
    return out;
  }

 private:
  LabelCategories categories_;
  std::optional<HcLabelMap> hc_;
  std::vector<int> columns_;
  std::vector<std::string> slots_;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  double split_fraction = 0.8;
};

inline void check_config(const TrainConfig& c) {
  if (c.batch_size == 0) throw Error("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw Error("learning_rate must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw Error("momentum must lie in [0, 1)");
  }
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) {
    throw Error("split_fraction must lie in (0, 1)");
  }
}

struct SlotMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  std::vector<std::string> slots;
  std::vector<SlotMetrics> per_slot;
  // Accuracy per label category; hard-coded predictions are decoded first.
  std::map<std::string, double> category_accuracy;
  std::size_t samples = 0;
};

inline EvalResult evaluate(const ModelBundle& bundle,
                           std::span<const Sample> samples,
                           std::span<const std::size_t> indices = {},
                           std::size_t batch_size = 64) {
  std::vector<std::size_t> order(indices.begin(), indices.end());
  if (order.empty()) {
    for (std::size_t i = 0; i < samples.size(); ++i) order.push_back(i);
  }
  if (order.empty()) throw Error("evaluate: no samples");
  const LabelBinder binder(bundle.spec, bundle.label_maps);
  const auto& cats = binder.categories();
  EvalResult r;
  r.slots = binder.slots();
  r.per_slot.resize(r.slots.size());
  r.samples = order.size();
  std::vector<std::size_t> cat_hits(cats.size(), 0);
  std::vector<bool> cat_seen(cats.size(), false);

  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const Batch b = gather_batch(
        samples, std::span<const std::size_t>(order).subspan(start, end - start));
    const auto labels = binder.bind(b.labels);
    const ForwardResult f = forward_all(bundle, b.images, labels);
    const double n = static_cast<double>(end - start);
    for (std::size_t s = 0; s < f.heads.size(); ++s) {
      r.per_slot[s].loss += f.heads[s].loss * n;
      r.per_slot[s].accuracy += f.heads[s].accuracy * n;
      const auto pred = argmax_rows(f.heads[s].logits);
      if (r.slots[s] == kHcSlot && binder.hc()) {
        for (std::size_t row = 0; row < pred.size(); ++row) {
          const auto& tuple = hc_decode(*binder.hc(), pred[row]);
          for (std::size_t k = 0; k < cats.size(); ++k) {
            cat_hits[k] += tuple[k] == b.labels[k][row];
            cat_seen[k] = true;
          }
        }
      } else if (const auto k = cats.index_of(r.slots[s])) {
        for (std::size_t row = 0; row < pred.size(); ++row) {
          cat_hits[*k] += pred[row] == b.labels[*k][row];
        }
        cat_seen[*k] = true;
      }
    }
  }
  const double total = static_cast<double>(order.size());
  for (auto& m : r.per_slot) {
    m.loss /= total;
    m.accuracy /= total;
  }
  for (std::size_t k = 0; k < cats.size(); ++k) {
    if (cat_seen[k]) {
      r.category_accuracy[cats.names[k]] =
          static_cast<double>(cat_hits[k]) / total;
    }
  }
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<SlotMetrics> train;
  std::vector<SlotMetrics> validation;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<std::string> slots;
  std::vector<EpochRecord> epochs;
};

inline std::string format_train_log_csv(const TrainLog& log) {
  std::string out = "epoch";
  for (const auto& s : log.slots) {
    out += ",train_loss_" + s + ",train_acc_" + s + ",val_loss_" + s +
           ",val_acc_" + s;
  }
  out += ",seconds\n";
  char buf[64];
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch);
    for (std::size_t s = 0; s < log.slots.size(); ++s) {
      for (double v : {e.train[s].loss, e.train[s].accuracy,
                       e.validation[s].loss, e.validation[s].accuracy}) {
        std::snprintf(buf, sizeof(buf), ",%.6f", v);
        out += buf;
      }
    }
    std::snprintf(buf, sizeof(buf), ",%.3f\n", e.seconds);
    out += buf;
  }
  return out;
}

struct TrainResult {
  ModelBundle bundle;
  TrainLog log;
  Split split;
};

// Deterministic for a fixed seed: the split, the per-epoch shuffle and the
// update order depend only on config.seed.
inline TrainResult train(ModelBundle bundle, std::span<const Sample> samples,
                         const TrainConfig& config) {
  check_config(config);
  if (samples.empty()) throw Error("train: empty dataset");
  check_params(bundle);
  const LabelBinder binder(bundle.spec, bundle.label_maps);
  for (const auto& s : samples) {
    if (s.labels.size() != binder.categories().size()) {
      throw Error(detail::concat("sample has ", s.labels.size(),
                                 " labels, model categories number ",
                                 binder.categories().size()));
    }
  }

  std::vector<std::vector<int>> tuples;
  for (const auto& s : samples) tuples.push_back(s.labels);
  TrainResult result{std::move(bundle), {binder.slots(), {}},
                     stratified_split(tuples, config.split_fraction, config.seed)};
  ModelBundle& model = result.bundle;
  VelocityState velocity;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train.resize(binder.slots().size());
    const auto batches =
        make_batches(samples, config.batch_size,
                     detail::splitmix64(config.seed + epoch), true,
                     result.split.train);
    std::size_t seen = 0;
    for (const auto& b : batches) {
      const auto labels = binder.bind(b.labels);
      const ForwardResult f = forward_all(model, b.images, labels);
      const double n = static_cast<double>(b.indices.size());
      for (std::size_t s = 0; s < f.heads.size(); ++s) {
        rec.train[s].loss += f.heads[s].loss * n;
        rec.train[s].accuracy += f.heads[s].accuracy * n;
      }
      seen += b.indices.size();
      const GradientMap g = backward_multi(model, f.cache, weighted_head_grads(f));
      sgd_step(model.params, g, config.learning_rate, config.momentum, velocity);
    }
    for (auto& m : rec.train) {
      m.loss /= static_cast<double>(seen);
      m.accuracy /= static_cast<double>(seen);
    }
    if (!result.split.validation.empty()) {
      rec.validation = evaluate(model, samples, result.split.validation).per_slot;
    } else {
      rec.validation.resize(binder.slots().size());
    }
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.log.epochs.push_back(std::move(rec));
  }
  return result;
}

}  // namespace mhforge
