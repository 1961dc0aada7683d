#pragma once

// View-conditioned crossmodal feature mapping.
//
// For a source view s and target view t, features of one modality from s are
// modulated by a FiLM layer whose scale/shift come from the one-hot codes of
// (s, t), then mapped to the other modality and compared with the target
// view's actual features by cosine distance.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "modmap/encoders.hpp"
#include "modmap/error.hpp"
#include "modmap/nn/adam.hpp"
#include "modmap/nn/loss.hpp"
#include "modmap/nn/matrix.hpp"
#include "modmap/nn/mlp.hpp"
#include "modmap/nn/schedule.hpp"
#include "modmap/parallel.hpp"
#include "modmap/rng.hpp"

namespace modmap {

/// One-hot identity of a view, optionally extended by a one-hot class.
struct ViewCode {
  std::vector<float> view;
  std::vector<float> cls; // empty when the model is class-agnostic

  static ViewCode make(std::size_t view_index, std::size_t n_views, std::size_t class_index = 0,
                       std::size_t n_classes = 0) {
    if (view_index >= n_views)
      throw UsageError("view index " + std::to_string(view_index) + " out of range for " +
                       std::to_string(n_views) + " views");
    ViewCode c;
    c.view.assign(n_views, 0.0f);
    c.view[view_index] = 1.0f;
    if (n_classes >= 2) {
      if (class_index >= n_classes) throw UsageError("class index out of range");
      c.cls.assign(n_classes, 0.0f);
      c.cls[class_index] = 1.0f;
    }
    return c;
  }

  void validate() const {
    auto one_hot = [](const std::vector<float>& v) {
      std::size_t ones = 0;
      for (float x : v) {
        if (x == 1.0f) ++ones;
        else if (x != 0.0f) return false;
      }
      return ones == 1;
    };
    if (!one_hot(view)) throw UsageError("malformed one-hot view code");
    if (!cls.empty() && !one_hot(cls)) throw UsageError("malformed one-hot class code");
  }

  std::size_t length() const { return view.size() + cls.size(); }
};

struct ModelDims {
  std::size_t n_views = 8;
  std::size_t n_classes = 0; // 0 or 1: class-agnostic
  std::size_t c_image = 16;
  std::size_t c_depth = 12;
  std::vector<std::size_t> hidden_i2d{16, 12, 8};
  std::vector<std::size_t> hidden_d2i{24, 12, 8};
  std::size_t modulator_hidden = 128;

  /// Hidden widths obtained by scaling the full-size layout by c_image / 768.
  static ModelDims scaled(std::size_t n_views, std::size_t c_image, std::size_t c_depth, std::size_t n_classes = 0) {
    auto scale = [&](std::initializer_list<std::size_t> full) {
      std::vector<std::size_t> out;
      for (auto f : full) out.push_back(std::max<std::size_t>(1, f * c_image / 768));
      return out;
    };
    ModelDims d;
    d.n_views = n_views;
    d.n_classes = n_classes;
    d.c_image = c_image;
    d.c_depth = c_depth;
    d.hidden_i2d = scale({768, 576, 384});
    d.hidden_d2i = scale({1152, 576, 384});
    return d;
  }

  bool class_conditioned() const noexcept { return n_classes >= 2; }
  std::size_t code_length() const noexcept { return n_views + (class_conditioned() ? n_classes : 0); }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// FiLM modulator: [gamma, beta] = MLP([code_s; code_t]).
template <typename T>
struct BasicModulator {
  nn::BasicMlp<T> net;
  std::size_t feature_dim = 0;

  BasicModulator() = default;
  BasicModulator(std::size_t code_pair_length, std::size_t hidden, std::size_t d)
      : net({code_pair_length, hidden, 2 * d}), feature_dim(d) {}

  /// Uniform init, then the output layer is zeroed and its bias set to
  /// [1...1, 0...0] so that gamma = 1 and beta = 0 for every input.
  void init(Rng& rng) {
    net.init_uniform(rng);
    auto& out = net.mutable_layers().back();
    out.weight.fill(T{0});
    for (std::size_t i = 0; i < out.bias.size(); ++i) out.bias[i] = i < feature_dim ? T{1} : T{0};
  }

  nn::BasicMatrix<T> code_input(const ViewCode& s, const ViewCode& t) const {
    s.validate();
    t.validate();
    const std::size_t n = s.length() + t.length();
    if (n != net.in_dim())
      throw DimensionMismatch("view codes have length " + std::to_string(n) + ", modulator expects " +
                              std::to_string(net.in_dim()));
    nn::BasicMatrix<T> x(1, n);
    std::size_t k = 0;
    for (float v : s.view) x(0, k++) = T(v);
    for (float v : s.cls) x(0, k++) = T(v);
    for (float v : t.view) x(0, k++) = T(v);
    for (float v : t.cls) x(0, k++) = T(v);
    return x;
  }
};

enum class Direction { image_to_depth, depth_to_image };

template <typename T>
struct BasicMappingNetwork {
  nn::BasicMlp<T> net;
  Direction direction = Direction::image_to_depth;
};

template <typename T>
struct BasicModMapModel {
  ModelDims dims;
  EncoderConfig encoder;
  BasicModulator<T> phi_image;
  BasicModulator<T> phi_depth;
  BasicMappingNetwork<T> map_i2d;
  BasicMappingNetwork<T> map_d2i;

  static BasicModMapModel create(const ModelDims& dims, const EncoderConfig& encoder, std::uint64_t seed) {
    BasicModMapModel m;
    m.dims = dims;
    m.encoder = encoder;
    const std::size_t code2 = 2 * dims.code_length();
    m.phi_image = BasicModulator<T>(code2, dims.modulator_hidden, dims.c_image);
    m.phi_depth = BasicModulator<T>(code2, dims.modulator_hidden, dims.c_depth);
    std::vector<std::size_t> i2d{dims.c_image};
    i2d.insert(i2d.end(), dims.hidden_i2d.begin(), dims.hidden_i2d.end());
    i2d.push_back(dims.c_depth);
    std::vector<std::size_t> d2i{dims.c_depth};
    d2i.insert(d2i.end(), dims.hidden_d2i.begin(), dims.hidden_d2i.end());
    d2i.push_back(dims.c_image);
    m.map_i2d = {nn::BasicMlp<T>(i2d), Direction::image_to_depth};
    m.map_d2i = {nn::BasicMlp<T>(d2i), Direction::depth_to_image};
    Rng rng(derive_seed(seed, 0));
    m.phi_image.init(rng);
    m.phi_depth.init(rng);
    m.map_i2d.net.init_uniform(rng);
    m.map_d2i.net.init_uniform(rng);
    return m;
  }

  ViewCode code(std::size_t view, std::size_t cls = 0) const {
    return ViewCode::make(view, dims.n_views, cls, dims.n_classes);
  }

  /// Named parameter tensors in checkpoint/optimizer order.
  std::vector<std::pair<std::string, nn::BasicMlp<T>*>> submodules() {
    return {{"phi_image", &phi_image.net}, {"phi_depth", &phi_depth.net},
            {"map_i2d", &map_i2d.net}, {"map_d2i", &map_d2i.net}};
  }
  std::vector<std::pair<std::string, const nn::BasicMlp<T>*>> submodules() const {
    return {{"phi_image", &phi_image.net}, {"phi_depth", &phi_depth.net},
            {"map_i2d", &map_i2d.net}, {"map_d2i", &map_d2i.net}};
  }

  friend bool operator==(const BasicModMapModel& a, const BasicModMapModel& b) {
    return a.dims == b.dims && a.encoder == b.encoder && a.phi_image.net == b.phi_image.net &&
           a.phi_depth.net == b.phi_depth.net && a.map_i2d.net == b.map_i2d.net && a.map_d2i.net == b.map_d2i.net;
  }
};

using Modulator = BasicModulator<float>;
using MappingNetwork = BasicMappingNetwork<float>;
using ModMapModel = BasicModMapModel<float>;

template <typename T>
struct FilmParams {
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
FilmParams<T> film_params(const BasicModulator<T>& mod, const ViewCode& s, const ViewCode& t,
                          nn::MlpCache<T>* cache = nullptr) {
  const auto out = mod.net.forward(mod.code_input(s, t), cache);
  const std::size_t d = mod.feature_dim;
  FilmParams<T> p;
  p.gamma.assign(out.flat().begin(), out.flat().begin() + d);
  p.beta.assign(out.flat().begin() + d, out.flat().end());
  return p;
}

template <typename T>
nn::BasicMatrix<T> apply_film(const FilmParams<T>& p, const nn::BasicMatrix<T>& features) {
  if (features.cols() != p.gamma.size())
    throw DimensionMismatch("features have " + std::to_string(features.cols()) + " channels, modulator " +
                            std::to_string(p.gamma.size()));
  nn::BasicMatrix<T> out(features.rows(), features.cols());
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (std::size_t c = 0; c < features.cols(); ++c) out(r, c) = p.gamma[c] * features(r, c) + p.beta[c];
  return out;
}

/// gamma * F + beta, one (gamma, beta) shared by every position of the pair.
template <typename T>
nn::BasicMatrix<T> modulate(const BasicModulator<T>& mod, const nn::BasicMatrix<T>& features, const ViewCode& s,
                            const ViewCode& t) {
  return apply_film(film_params(mod, s, t), features);
}

/// Predicts the opposite modality's features from modulated source features.
template <typename T>
nn::BasicMatrix<T> map_features(const BasicModMapModel<T>& model, Modality source, const nn::BasicMatrix<T>& features,
                                const ViewCode& s, const ViewCode& t) {
  const auto& mod = source == Modality::image ? model.phi_image : model.phi_depth;
  const auto& mapper = source == Modality::image ? model.map_i2d : model.map_d2i;
  return mapper.net.forward(modulate(mod, features, s, t));
}

template <typename T>
struct ModelGradients {
  nn::MlpGradients<T> phi_image, phi_depth, map_i2d, map_d2i;

  void add(const ModelGradients& o) {
    nn::accumulate(phi_image, o.phi_image);
    nn::accumulate(phi_depth, o.phi_depth);
    nn::accumulate(map_i2d, o.map_i2d);
    nn::accumulate(map_d2i, o.map_d2i);
  }

  void scale(T s) {
    for (auto* g : {&phi_image, &phi_depth, &map_i2d, &map_d2i})
      for (auto& l : g->layers) {
        for (auto& v : l.weight.flat()) v *= s;
        for (auto& v : l.bias) v *= s;
      }
  }

  bool empty() const { return map_i2d.layers.empty(); }

  std::vector<std::span<const T>> spans() const {
    std::vector<std::span<const T>> out;
    for (const auto* g : {&phi_image, &phi_depth, &map_i2d, &map_d2i}) {
      auto s = nn::gradient_spans(*g);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }
};

/// Features of the two views of a pair as (positions x channels) matrices.
template <typename T>
struct PairInputs {
  nn::BasicMatrix<T> src_image, src_depth, tgt_image, tgt_depth;
  std::vector<std::uint8_t> counted; // target positions that enter the loss
};

template <typename T>
nn::BasicMatrix<T> feature_matrix(const FeatureMap& f) {
  nn::BasicMatrix<T> m(f.positions(), f.c);
  for (std::size_t i = 0; i < f.data.size(); ++i) m.flat()[i] = T(f.data[i]);
  return m;
}

/// Positions whose target patch holds no valid depth are excluded.
template <typename T>
PairInputs<T> pair_inputs(const ViewFeatures& src, const ViewFeatures& tgt) {
  if (src.image.positions() != tgt.image.positions() || src.depth.positions() != tgt.depth.positions() ||
      src.image.positions() != src.depth.positions())
    throw DimensionMismatch("source and target feature grids differ");
  PairInputs<T> in{feature_matrix<T>(src.image), feature_matrix<T>(src.depth), feature_matrix<T>(tgt.image),
                   feature_matrix<T>(tgt.depth), {}};
  in.counted.resize(tgt.valid.size());
  for (std::size_t i = 0; i < in.counted.size(); ++i) in.counted[i] = tgt.valid.values[i] > 0.0f;
  return in;
}

template <typename T>
struct DirectionResult {
  double loss = 0; // mean cosine distance over counted positions
  std::size_t count = 0;
  nn::MlpGradients<T> modulator;
  nn::MlpGradients<T> mapper;
};

/// Mean cosine distance of one direction plus gradients of that mean.
template <typename T>
DirectionResult<T> direction_loss(const BasicModulator<T>& mod, const nn::BasicMlp<T>& mapper,
                                  const nn::BasicMatrix<T>& source, const nn::BasicMatrix<T>& target,
                                  std::span<const std::uint8_t> counted, const ViewCode& s, const ViewCode& t,
                                  bool with_gradient = true) {
  nn::MlpCache<T> mod_cache, map_cache;
  const FilmParams<T> film = film_params(mod, s, t, &mod_cache);
  const nn::BasicMatrix<T> modulated = apply_film(film, source);
  const nn::BasicMatrix<T> predicted = mapper.forward(modulated, &map_cache);
  if (predicted.cols() != target.cols())
    throw DimensionMismatch("mapped features have " + std::to_string(predicted.cols()) + " channels, target " +
                            std::to_string(target.cols()));

  DirectionResult<T> out;
  nn::BasicMatrix<T> dpred(predicted.rows(), predicted.cols());
  double sum = 0;
  for (std::size_t p = 0; p < predicted.rows(); ++p) {
    if (!counted[p]) continue;
    const auto pr = predicted.row(p);
    const auto tr = target.row(p);
    if (nn::cosine_distance_or_negative<T>(pr, tr) < 0) continue;
    auto cd = nn::cosine_distance<T>(pr, tr, with_gradient);
    sum += double(cd.distance);
    ++out.count;
    if (with_gradient) std::copy(cd.grad_x.begin(), cd.grad_x.end(), dpred.row(p).begin());
  }
  if (out.count == 0) return out;
  out.loss = sum / double(out.count);
  if (!with_gradient) return out;

  const T inv = T(1.0 / double(out.count));
  for (auto& v : dpred.flat()) v *= inv;
  out.mapper = mapper.backward(map_cache, dpred);
  const auto& dmod = out.mapper.input;
  nn::BasicMatrix<T> dfilm(1, 2 * mod.feature_dim);
  for (std::size_t p = 0; p < dmod.rows(); ++p)
    for (std::size_t c = 0; c < dmod.cols(); ++c) {
      dfilm(0, c) += dmod(p, c) * source(p, c);
      dfilm(0, mod.feature_dim + c) += dmod(p, c);
    }
  out.modulator = mod.net.backward(mod_cache, dfilm);
  return out;
}

template <typename T>
struct PairLoss {
  double loss = 0; // C_{I->D} + C_{D->I}, each averaged over counted positions
  bool empty = true;
  ModelGradients<T> grads;
};

/// Loss of one ordered (source, target) pair; `empty` when no position counts.
template <typename T>
PairLoss<T> pair_loss(const BasicModMapModel<T>& model, const PairInputs<T>& in, const ViewCode& s, const ViewCode& t,
                      bool with_gradient = true) {
  auto i2d = direction_loss(model.phi_image, model.map_i2d.net, in.src_image, in.tgt_depth, in.counted, s, t,
                            with_gradient);
  auto d2i = direction_loss(model.phi_depth, model.map_d2i.net, in.src_depth, in.tgt_image, in.counted, s, t,
                            with_gradient);
  PairLoss<T> out;
  if (i2d.count == 0 || d2i.count == 0) return out;
  out.empty = false;
  out.loss = i2d.loss + d2i.loss;
  if (with_gradient) {
    out.grads.phi_image = std::move(i2d.modulator);
    out.grads.map_i2d = std::move(i2d.mapper);
    out.grads.phi_depth = std::move(d2i.modulator);
    out.grads.map_d2i = std::move(d2i.mapper);
  }
  return out;
}

/// Convenience overload over encoded views of one instance.
template <typename T>
PairLoss<T> pair_loss(const BasicModMapModel<T>& model, const std::vector<ViewFeatures>& views, std::size_t s,
                      std::size_t t, std::size_t cls = 0, bool with_gradient = true) {
  if (s >= views.size() || t >= views.size()) throw UsageError("pair index out of range");
  return pair_loss(model, pair_inputs<T>(views[s], views[t]), model.code(s, cls), model.code(t, cls), with_gradient);
}

enum class PairMode { all_pairs, same_view };

/// Adam moves each weight by about lr per step, so a layer's output moves by
/// about fan_in * lr. Narrow desk-scale layers therefore need the full-width
/// learning rate multiplied by 768 / c_image to train at a comparable pace.
inline double width_lr_scale(std::size_t c_image) { return 768.0 / double(c_image); }

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t pairs_per_batch = 48;
  nn::OneCycleSchedule schedule; // total_steps is derived at train time
  std::uint64_t seed = 0;
  PairMode pair_mode = PairMode::all_pairs;
  double lr_scale = 1.0; // multiplies every scheduled learning rate

  void validate() const {
    if (pairs_per_batch < 1) throw UsageError("pairs_per_batch must be >= 1");
    if (!(lr_scale > 0) || !std::isfinite(lr_scale)) throw UsageError("lr_scale must be positive");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss; // mean pair loss of every epoch
  std::uint64_t steps = 0;
  std::size_t skipped_pairs = 0;
};

struct PairJob {
  std::size_t cls, s, t;
};

namespace detail {

template <typename T>
void train_jobs(BasicModMapModel<T>& model, const std::vector<std::vector<ViewFeatures>>& classes,
                std::vector<PairJob> jobs, const TrainConfig& cfg, TrainResult& result,
                const std::function<void(std::size_t, double)>& on_epoch) {
  cfg.validate();
  if (cfg.epochs == 0 || jobs.empty()) return;

  // Precompute pair inputs once; they do not change during training.
  std::vector<PairInputs<T>> inputs(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& views = classes[jobs[i].cls];
    inputs[i] = pair_inputs<T>(views[jobs[i].s], views[jobs[i].t]);
  });

  const std::size_t steps_per_epoch = (jobs.size() + cfg.pairs_per_batch - 1) / cfg.pairs_per_batch;
  nn::OneCycleSchedule schedule = cfg.schedule;
  schedule.total_steps = cfg.epochs * steps_per_epoch;
  schedule.validate();

  std::vector<std::string> names;
  for (auto& [name, net] : model.submodules())
    for (std::size_t k = 0; k < net->depth(); ++k) {
      names.push_back(name + ".layer" + std::to_string(k) + ".weight");
      names.push_back(name + ".layer" + std::to_string(k) + ".bias");
    }

  nn::AdamState adam;
  Rng order_rng(derive_seed(cfg.seed, 1));
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = order_rng.permutation(jobs.size());
    double epoch_sum = 0;
    std::size_t epoch_pairs = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.pairs_per_batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.pairs_per_batch);
      std::vector<PairLoss<T>> losses(b1 - b0);
      parallel_for(losses.size(), [&](std::size_t i) {
        const auto& job = jobs[order[b0 + i]];
        losses[i] = pair_loss(model, inputs[order[b0 + i]], model.code(job.s, job.cls), model.code(job.t, job.cls));
      });
      ModelGradients<T> total;
      std::size_t used = 0;
      for (std::size_t i = 0; i < losses.size(); ++i) {
        const auto& job = jobs[order[b0 + i]];
        if (losses[i].empty) {
          ++result.skipped_pairs;
          continue;
        }
        if (!std::isfinite(losses[i].loss))
          throw NumericError("non-finite loss at pair (class " + std::to_string(job.cls) + ", s=" +
                             std::to_string(job.s) + ", t=" + std::to_string(job.t) + ")");
        epoch_sum += losses[i].loss;
        ++epoch_pairs;
        total.add(losses[i].grads);
        ++used;
      }
      if (used > 0) {
        total.scale(T(1.0 / double(used)));
        std::vector<std::span<T>> params;
        for (auto& [name, net] : model.submodules()) {
          auto s = nn::parameter_spans(*net);
          params.insert(params.end(), s.begin(), s.end());
        }
        const auto grads = total.spans();
        nn::adam_step<T>(params, grads, adam, cfg.lr_scale * nn::lr_at(schedule, step), names);
      }
      ++step;
    }
    const double mean = epoch_pairs ? epoch_sum / double(epoch_pairs) : 0.0;
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.steps = step;
}

inline std::vector<PairJob> pair_jobs(std::size_t n_views, std::size_t cls, PairMode mode) {
  std::vector<PairJob> jobs;
  for (std::size_t s = 0; s < n_views; ++s)
    for (std::size_t t = 0; t < n_views; ++t)
      if (mode == PairMode::all_pairs || s == t) jobs.push_back({cls, s, t});
  return jobs;
}

template <typename T>
void check_views(const BasicModMapModel<T>& model, const std::vector<ViewFeatures>& views) {
  if (views.size() != model.dims.n_views)
    throw DataError("sample has " + std::to_string(views.size()) + " views, model expects " +
                    std::to_string(model.dims.n_views));
  for (const auto& v : views)
    if (v.image.c != model.dims.c_image || v.depth.c != model.dims.c_depth)
      throw DimensionMismatch("feature channels (" + std::to_string(v.image.c) + ", " + std::to_string(v.depth.c) +
                              ") vs model (" + std::to_string(model.dims.c_image) + ", " +
                              std::to_string(model.dims.c_depth) + ")");
}

} // namespace detail

/// Trains on every ordered view pair of a single nominal instance.
template <typename T>
TrainResult train(BasicModMapModel<T>& model, const std::vector<ViewFeatures>& nominal, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_epoch = {}) {
  detail::check_views(model, nominal);
  TrainResult result;
  detail::train_jobs(model, {nominal}, detail::pair_jobs(nominal.size(), 0, cfg.pair_mode), cfg, result, on_epoch);
  return result;
}

/// One class-conditioned model over the union of every class's view pairs.
template <typename T>
TrainResult train_multiclass(BasicModMapModel<T>& model, const std::vector<std::vector<ViewFeatures>>& per_class,
                             const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (per_class.empty()) throw UsageError("multi-class training needs at least one class");
  const std::size_t expected_classes = model.dims.class_conditioned() ? model.dims.n_classes : 1;
  if (per_class.size() != expected_classes)
    throw UsageError("model is conditioned on " + std::to_string(expected_classes) + " classes, got " +
                     std::to_string(per_class.size()));
  const auto& first = per_class.front().front();
  std::vector<PairJob> jobs;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (const auto& v : per_class[c])
      if (v.image.c != first.image.c || v.depth.c != first.depth.c)
        throw DimensionMismatch("class " + std::to_string(c) + " has different channel counts");
    detail::check_views(model, per_class[c]);
    auto j = detail::pair_jobs(per_class[c].size(), c, cfg.pair_mode);
    jobs.insert(jobs.end(), j.begin(), j.end());
  }
  TrainResult result;
  detail::train_jobs(model, per_class, std::move(jobs), cfg, result, on_epoch);
  return result;
}

template <typename To, typename From>
BasicModMapModel<To> convert(const BasicModMapModel<From>& m) {
  BasicModMapModel<To> out;
  out.dims = m.dims;
  out.encoder = m.encoder;
  out.phi_image.net = nn::convert<To>(m.phi_image.net);
  out.phi_image.feature_dim = m.phi_image.feature_dim;
  out.phi_depth.net = nn::convert<To>(m.phi_depth.net);
  out.phi_depth.feature_dim = m.phi_depth.feature_dim;
  out.map_i2d = {nn::convert<To>(m.map_i2d.net), m.map_i2d.direction};
  out.map_d2i = {nn::convert<To>(m.map_d2i.net), m.map_d2i.direction};
  return out;
}

} // namespace modmap
