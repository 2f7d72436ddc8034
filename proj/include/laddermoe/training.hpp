// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization: lazy Adam, backbone pretraining, the two-phase PLM/OSF
// schedule and conversion between live training state and checkpoints.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "laddermoe/checkpoint.hpp"
#include "laddermoe/config_json.hpp"
#include "laddermoe/model.hpp"
#include "laddermoe/syndata.hpp"
#include "laddermoe/train_config.hpp"

namespace laddermoe {

/// One recognition training example: an encoder-sized image and its label
/// as category ids.
struct TextSample {
  Image image;
  std::vector<std::size_t> label;
};

inline std::vector<TextSample> text_samples(const std::vector<GlyphSample>& crops, std::size_t image_size) {
  std::vector<TextSample> out;
  out.reserve(crops.size());
  for (const auto& g : crops) {
    Image img = (g.image.height == image_size && g.image.width == image_size) ? g.image
                                                                             : resize(g.image, image_size, image_size);
    out.push_back({std::move(img), {g.category}});
  }
  return out;
}

inline std::vector<int> label_tokens(const std::vector<std::size_t>& label) {
  std::vector<int> t;
  t.reserve(label.size());
  for (auto c : label) t.push_back(tokens::from_category(c));
  return t;
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Moments and step counters are kept per
// parameter; a parameter that received no gradient in a step is left
// untouched (its moments do not decay).

class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(NamedTensors& params) {
    for (auto& [name, t] : params) {
      if (!t.requires_grad() || !t.has_grad()) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(t.size(), 0.0);
        v.assign(t.size(), 0.0);
      }
      const auto step = ++steps_[name];
      const double c1 = 1.0 - std::pow(b1_, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2_, static_cast<double>(step));
      auto g = t.grad();
      auto w = t.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  void export_state(std::vector<TensorRecord>& out) const {
    for (const auto& [name, m] : m_) {
      out.push_back({"adam.m." + name, {m.size()}, m});
      out.push_back({"adam.v." + name, {m.size()}, v_.at(name)});
      out.push_back({"adam.step." + name, {1}, {static_cast<double>(steps_.at(name))}});
    }
  }

  void import_state(const Checkpoint& ck) {
    m_.clear();
    v_.clear();
    steps_.clear();
    const std::string pm = "adam.m.", pv = "adam.v.", ps = "adam.step.";
    for (const auto& t : ck.tensors) {
      if (t.name.rfind(pm, 0) == 0) m_[t.name.substr(pm.size())] = t.values;
      else if (t.name.rfind(pv, 0) == 0) v_[t.name.substr(pv.size())] = t.values;
      else if (t.name.rfind(ps, 0) == 0) {
        if (t.values.size() != 1) throw FormatError("optimizer step record '" + t.name + "' malformed");
        steps_[t.name.substr(ps.size())] = static_cast<std::uint64_t>(t.values[0]);
      }
    }
    for (const auto& [name, m] : m_)
      if (!v_.count(name) || !steps_.count(name) || v_[name].size() != m.size())
        throw FormatError("optimizer state for '" + name + "' incomplete");
  }

  std::uint64_t steps(const std::string& name) const {
    auto it = steps_.find(name);
    return it == steps_.end() ? 0 : it->second;
  }

 private:
  double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  std::map<std::string, std::vector<double>> m_, v_;
  std::map<std::string, std::uint64_t> steps_;
};

struct EpochStats {
  Phase phase = Phase::Plm;
  std::size_t epoch = 0;  // global, 1-based
  double mean_loss = 0.0;
  std::size_t samples = 0;
  bool operator==(const EpochStats&) const = default;
};

inline void zero_all_grads(NamedTensors& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

/// Runs `body(i)` for each example index in shuffled mini-batches, then
/// steps the optimizer after each batch. `body` returns the example's loss
/// tensor; its gradient is scaled by 1/batch before accumulation.
template <class LossFn>
double run_batches(std::size_t n, std::size_t batch_size, Rng& rng, NamedTensors& params, Adam& opt,
                   const std::string& last_checkpoint, LossFn&& body, std::function<void(std::size_t)> on_batch = {}) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (on_batch) on_batch(start);
    zero_all_grads(params);
    const double inv = 1.0 / static_cast<double>(end - start);
    for (std::size_t b = start; b < end; ++b) {
      Tensor loss = body(order[b]);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NonFiniteLossError("non-finite training loss at example " + std::to_string(order[b]), last_checkpoint);
      total += value;
      if (loss.requires_grad()) backward(scale(loss, inv));
    }
    opt.step(params);
  }
  zero_all_grads(params);
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Backbone pretraining: adapters disabled, class-token classification head.

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> log;
};

inline constexpr const char* kPretrainHead = "pretrain.head";

inline Json pretrain_config_json(const EncoderConfig& enc, std::size_t num_classes, const TrainConfig& tc) {
  return Json{{"encoder", to_json(enc)}, {"num_classes", num_classes}, {"train", to_json(tc)}};
}

inline std::vector<double> classify_logits(const Image& image, const EncoderConfig& cfg, const EncoderParams& p,
                                           const nn::Linear& head) {
  NoGradGuard guard;
  const Tensor f = encode(image, cfg, p).features;
  return head(slice_rows(f, 0, 1)).values();
}

/// Trains backbone + a throwaway linear head on single-character crops.
/// The backbone is initialized exactly as Model::create would for the same
/// seed, so zero epochs returns that initialization.
inline PretrainResult pretrain_backbone(const std::vector<TextSample>& data, std::size_t num_classes,
                                        EncoderConfig cfg, const TrainConfig& tc) {
  if (data.empty()) throw DataError("pretraining needs at least one sample");
  tc.validate();
  cfg.adapter_layers.clear();
  cfg.validate();
  for (const auto& s : data)
    if (s.label.size() != 1 || s.label[0] >= num_classes)
      throw DataError("pretraining samples must carry exactly one category id below num_classes");

  EncoderParams enc = init_encoder(cfg, derive_seed(tc.seed, "model.encoder"));
  Rng head_rng(tc.seed, "pretrain.head");
  nn::Linear head = nn::Linear::init(cfg.embed_dim, num_classes, head_rng);
  NamedTensors params;
  enc.visit_backbone([&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });
  head.visit(kPretrainHead, [&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });
  for (auto& [n, t] : params) t.set_requires_grad(true);

  Adam opt(tc.pretrain_learning_rate, tc.beta1, tc.beta2, tc.adam_eps);
  Rng rng(tc.seed, "pretrain.order");
  PretrainResult res;
  for (std::size_t e = 0; e < tc.pretrain_epochs; ++e) {
    const double mean = run_batches(data.size(), tc.batch_size, rng, params, opt, "", [&](std::size_t i) {
      const Tensor f = encode(data[i].image, cfg, enc).features;
      return cross_entropy(head(slice_rows(f, 0, 1)), {static_cast<int>(data[i].label[0])});
    });
    res.log.push_back({Phase::Pretrain, e + 1, mean, data.size()});
  }

  Checkpoint& ck = res.checkpoint;
  ck.config = pretrain_config_json(cfg, num_classes, tc);
  ck.phase = Phase::Pretrain;
  ck.epoch = tc.pretrain_epochs;
  ck.rng_state = rng.state();
  for (auto& [n, t] : params) ck.tensors.push_back({n, t.shape(), t.values()});
  return res;
}

/// Rebuilds the pretrained backbone and head from a pretraining checkpoint.
struct PretrainedClassifier {
  EncoderConfig cfg;
  EncoderParams encoder;
  nn::Linear head;

  std::size_t predict(const Image& image) const {
    const auto logits = classify_logits(image, cfg, encoder, head);
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
};

inline void copy_record(const Checkpoint& ck, const std::string& name, Tensor& t) {
  const TensorRecord* r = ck.find(name);
  if (!r) throw FormatError("checkpoint lacks tensor '" + name + "'");
  if (r->shape != t.shape())
    throw FormatError("tensor '" + name + "' has shape " + shape_str(r->shape) + ", expected " + shape_str(t.shape()));
  std::copy(r->values.begin(), r->values.end(), t.data().begin());
}

inline PretrainedClassifier load_pretrained_classifier(const Checkpoint& ck) {
  if (ck.phase != Phase::Pretrain) throw FormatError("not a pretraining checkpoint");
  PretrainedClassifier pc;
  from_json(ck.config.at("encoder"), pc.cfg);
  const auto classes = ck.config.at("num_classes").get<std::size_t>();
  pc.encoder = init_encoder(pc.cfg, 0);
  pc.head = nn::Linear::zeros(pc.cfg.embed_dim, classes);
  pc.encoder.visit_backbone([&](const std::string& n, Tensor& t) { copy_record(ck, n, t); });
  pc.head.visit(kPretrainHead, [&](const std::string& n, Tensor& t) { copy_record(ck, n, t); });
  return pc;
}

/// Copies every backbone tensor of a pretraining checkpoint into `m`.
inline void apply_pretrained_backbone(Model& m, const Checkpoint& ck) {
  m.encoder.visit_backbone([&](const std::string& n, Tensor& t) { copy_record(ck, n, t); });
}

// ---------------------------------------------------------------------------
// Two-phase schedule

inline Phase phase_of_epoch(std::size_t epoch_index, const TrainConfig& cfg) {
  return epoch_index < cfg.plm_epochs ? Phase::Plm : Phase::Osf;
}

struct TrainingSession {
  Model model;
  TrainConfig cfg;
  Adam optimizer;
  Rng rng;
  std::size_t epochs_done = 0;
  std::string last_checkpoint;

  Phase phase() const {
    if (epochs_done == 0) return Phase::Pretrain;
    return phase_of_epoch(epochs_done - 1, cfg);
  }
};

/// Freezes the backbone and seeds the run RNG.
inline TrainingSession start_session(Model model, const TrainConfig& cfg) {
  cfg.validate();
  TrainingSession s{std::move(model), cfg, Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps),
                    Rng(cfg.seed, "train.run"), 0, ""};
  freeze_partition(s.model);
  return s;
}

inline Json run_config_json(const ModelConfig& mc, const TrainConfig& tc) {
  return Json{{"model", to_json(mc)}, {"train", to_json(tc)}};
}

inline Checkpoint to_checkpoint(TrainingSession& s) {
  Checkpoint ck;
  ck.config = run_config_json(s.model.cfg, s.cfg);
  ck.phase = s.phase();
  ck.epoch = s.epochs_done;
  ck.rng_state = s.rng.state();
  s.model.visit([&](const std::string& n, Tensor& t) { ck.tensors.push_back({n, t.shape(), t.values()}); });
  s.optimizer.export_state(ck.tensors);
  return ck;
}

/// Restores a session (model, optimizer, RNG, epoch counter) from a
/// training checkpoint. Throws FormatError if anything is missing.
inline TrainingSession resume_session(const Checkpoint& ck) {
  if (ck.phase == Phase::Pretrain && ck.epoch != 0) throw FormatError("pretraining checkpoints cannot be resumed as runs");
  ModelConfig mc;
  TrainConfig tc;
  try {
    from_json(ck.config.at("model"), mc);
    from_json(ck.config.at("train"), tc);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config incomplete: ") + e.what());
  }
  TrainingSession s = start_session(Model::create(mc, tc.seed), tc);
  s.model.visit([&](const std::string& n, Tensor& t) { copy_record(ck, n, t); });
  s.optimizer.import_state(ck);
  s.rng.set_state(ck.rng_state);
  s.epochs_done = static_cast<std::size_t>(ck.epoch);
  return s;
}

/// One epoch over `data`. PLM draws a fresh set of permutation masks per
/// batch (per label length); OSF uses the sequential mask only.
inline EpochStats train_epoch(TrainingSession& s, const std::vector<TextSample>& data, Phase phase) {
  if (phase == Phase::Pretrain) throw ParameterError("train_epoch runs the plm or osf phase only");
  if (data.empty()) throw DataError("training needs at least one sample");
  const std::size_t K = s.model.cfg.decoder.num_permutations;
  NamedTensors params = s.model.trainable_parameters();
  std::map<std::size_t, std::vector<VisibilityMask>> masks;
  auto refresh = [&](std::size_t) { masks.clear(); };
  const double mean = run_batches(
      data.size(), s.cfg.batch_size, s.rng, params, s.optimizer, s.last_checkpoint,
      [&](std::size_t i) {
        const std::size_t side = data[i].label.size() + 1;
        auto it = masks.find(side);
        if (it == masks.end()) {
          std::vector<VisibilityMask> m;
          if (phase == Phase::Plm) m = make_permutation_masks(side, K, s.rng);
          else m.push_back(make_sequential_mask(side));
          it = masks.emplace(side, std::move(m)).first;
        }
        return s.model.loss(data[i].image, label_tokens(data[i].label), it->second);
      },
      refresh);
  ++s.epochs_done;
  return {phase, s.epochs_done, mean, data.size()};
}

struct ScheduleOptions {
  std::filesystem::path checkpoint_dir;     // empty: no files written
  std::optional<std::size_t> stop_after;    // stop once this many total epochs are done
  std::function<void(const EpochStats&, TrainingSession&)> on_epoch;
};

struct ScheduleResult {
  Checkpoint final_checkpoint;
  std::vector<EpochStats> log;
  std::vector<std::string> written;  // checkpoint paths in write order
  bool completed = false;
};

/// Continues `s` through the remaining PLM then OSF epochs. Writes
/// `plm_end.ckpt` at the phase boundary, `final.ckpt` at the end and
/// `latest.ckpt` after every epoch when a directory is configured.
inline ScheduleResult run_schedule(TrainingSession& s, const std::vector<TextSample>& data,
                                   const ScheduleOptions& opt = {}) {
  ScheduleResult res;
  const std::size_t total = s.cfg.plm_epochs + s.cfg.osf_epochs;
  auto write = [&](const std::string& file) {
    if (opt.checkpoint_dir.empty()) return;
    const auto path = opt.checkpoint_dir / file;
    save_checkpoint(to_checkpoint(s), path);
    s.last_checkpoint = path.string();
    res.written.push_back(path.string());
  };
  if (s.epochs_done == 0 && s.cfg.plm_epochs == 0) write("plm_end.ckpt");
  while (s.epochs_done < total) {
    if (opt.stop_after && s.epochs_done >= *opt.stop_after) break;
    const Phase ph = phase_of_epoch(s.epochs_done, s.cfg);
    const EpochStats st = train_epoch(s, data, ph);
    res.log.push_back(st);
    write("latest.ckpt");
    if (s.epochs_done == s.cfg.plm_epochs) write("plm_end.ckpt");
    if (opt.on_epoch) opt.on_epoch(st, s);
  }
  res.completed = s.epochs_done >= total;
  if (res.completed) write("final.ckpt");
  res.final_checkpoint = to_checkpoint(s);
  return res;
}

/// Mean per-sample loss under the ordered (sequential) mask, no gradients.
inline double ordered_loss(const Model& m, const std::vector<TextSample>& data) {
  if (data.empty()) throw EmptyInputError("ordered_loss needs at least one sample");
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& s : data) {
    const std::vector<VisibilityMask> masks{make_sequential_mask(s.label.size() + 1)};
    total += m.loss(s.image, label_tokens(s.label), masks).item();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace laddermoe
