#pragma once

// Adam training with logical data-parallel shards and early stopping.

#include "aumask/dataops.hpp"
#include "aumask/error.hpp"
#include "aumask/masked_loss.hpp"
#include "aumask/model.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace aumask {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 10;
  int batch_size = 32;
  int early_stop_patience = 2;
  double early_stop_min_delta = 1e-4;
  /// Number of logical shards each batch is split into.
  int workers = 1;
  /// Run shards on separate threads. Results do not depend on this flag.
  bool threaded = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("learning_rate must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ValidationError("beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("beta2 must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (early_stop_patience < 1) throw ValidationError("early_stop_patience must be at least 1");
    if (!(early_stop_min_delta >= 0.0)) throw ValidationError("early_stop_min_delta must be nonnegative");
    if (workers < 1) throw ValidationError("workers must be at least 1");
  }
};

template <typename Scalar>
struct AdamState {
  ParameterSet<Scalar> m;
  ParameterSet<Scalar> v;
  std::int64_t step = 0;

  static AdamState zeros(const ParameterSet<Scalar>& params) {
    return {zeros_like(params), zeros_like(params), 0};
  }
};

/// One bias-corrected Adam update of a dense tensor. `t` is the 1-based step.
template <typename DerivedP, typename DerivedG, typename DerivedM, typename DerivedV>
void adam_update(Eigen::DenseBase<DerivedP>& param, const Eigen::DenseBase<DerivedG>& grad,
                 Eigen::DenseBase<DerivedM>& m, Eigen::DenseBase<DerivedV>& v, std::int64_t t,
                 const TrainConfig& config) {
  using Scalar = typename DerivedP::Scalar;
  using std::pow;
  using std::sqrt;
  const Scalar b1(config.beta1), b2(config.beta2);
  const Scalar c1 = Scalar(1) - pow(b1, Scalar(t));
  const Scalar c2 = Scalar(1) - pow(b2, Scalar(t));
  const Scalar lr(config.learning_rate), eps(config.epsilon);
  for (Eigen::Index r = 0; r < param.rows(); ++r) {
    for (Eigen::Index c = 0; c < param.cols(); ++c) {
      const Scalar g = grad(r, c);
      m(r, c) = b1 * m(r, c) + (Scalar(1) - b1) * g;
      v(r, c) = b2 * v(r, c) + (Scalar(1) - b2) * g * g;
      const Scalar mhat = m(r, c) / c1;
      const Scalar vhat = v(r, c) / c2;
      param(r, c) -= lr * mhat / (sqrt(vhat) + eps);
    }
  }
}

/// Applies one Adam step to every tensor. A non-finite gradient rejects the
/// whole step before anything is modified.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, AdamState<Scalar>& state,
               const TrainConfig& config) {
  bool finite = true;
  for_each_tensor(
      [&](const std::string& name, const auto& p, const auto& g, const auto& m, const auto& v) {
        if (p.rows() != g.rows() || p.cols() != g.cols() || p.rows() != m.rows() || p.cols() != m.cols() ||
            p.rows() != v.rows() || p.cols() != v.cols()) {
          throw ValidationError("shape mismatch in adam_step for " + name);
        }
        if (!g.allFinite()) finite = false;
      },
      params, grads, state.m, state.v);
  if (!finite) throw NumericError("non-finite gradient; Adam step rejected");

  const std::int64_t t = state.step + 1;
  for_each_tensor([&](const std::string&, auto& p, const auto& g, auto& m,
                      auto& v) { adam_update(p, g, m, v, t, config); },
                  params, grads, state.m, state.v);
  state.step = t;
}

template <typename Scalar>
struct ReducedGradient {
  ParameterSet<Scalar> grad;
  Eigen::Index unmasked_count = 0;

  bool empty_mask() const { return unmasked_count == 0; }
};

/// sum_k count_k * grad_k / sum_k count_k, summed in shard order. Each
/// grad_k must be normalized by its own shard's unmasked count.
template <typename Scalar>
ReducedGradient<Scalar> parallel_gradient_reduce(std::span<const ParameterSet<Scalar>> shard_grads,
                                                 std::span<const Eigen::Index> shard_counts) {
  if (shard_grads.empty()) throw ValidationError("at least one shard is required");
  if (shard_grads.size() != shard_counts.size()) {
    throw ValidationError("one unmasked count is required per shard");
  }
  ReducedGradient<Scalar> out{zeros_like(shard_grads.front()), 0};
  for (const Eigen::Index c : shard_counts) {
    if (c < 0) throw ValidationError("unmasked counts must be nonnegative");
    out.unmasked_count += c;
  }
  if (out.unmasked_count == 0) return out;
  const Scalar total = Scalar(out.unmasked_count);
  for (std::size_t k = 0; k < shard_grads.size(); ++k) {
    if (shard_counts[k] == 0) continue;
    const Scalar w = Scalar(shard_counts[k]) / total;
    for_each_tensor(
        [&](const std::string& name, auto& acc, const auto& g) {
          if (acc.rows() != g.rows() || acc.cols() != g.cols()) {
            throw ValidationError("shard gradient shape mismatch for " + name);
          }
          acc += w * g;
        },
        out.grad, shard_grads[k]);
  }
  return out;
}

/// True when the best value has not improved by more than `min_delta` for
/// `patience` consecutive epochs.
inline bool early_stop_check(std::span<const double> history, int patience, double min_delta) {
  if (history.empty()) throw ValidationError("early stopping needs a nonempty history");
  double best = history.front();
  int wait = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < best - min_delta) {
      best = history[i];
      wait = 0;
    } else {
      ++wait;
    }
  }
  return wait >= patience;
}

template <typename Scalar>
struct TrainingSample {
  ImageT<Scalar> image;
  LabelVector labels;
};

template <typename Scalar>
struct ShardResult {
  /// Gradient normalized by this shard's own unmasked count.
  ParameterSet<Scalar> grad;
  LossValue<Scalar> loss;
};

/// Masked loss and gradient of one shard of samples.
template <typename Scalar>
ShardResult<Scalar> shard_gradient(std::span<const TrainingSample<Scalar>* const> samples,
                                   const ParameterSet<Scalar>& params, const ModelConfig& config) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, kNumAus, Eigen::RowMajor> logits(n, kNumAus);
  LabelMatrix labels(n, kNumAus);
  std::vector<ForwardCache<Scalar>> caches(samples.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = *samples[static_cast<std::size_t>(i)];
    logits.row(i) = forward(s.image, params, config, &caches[static_cast<std::size_t>(i)]);
    labels.row(i) = s.labels;
  }
  const MaskMatrix mask = build_mask_matrix(labels);
  ShardResult<Scalar> out{zeros_like(params), masked_bce(logits, labels, mask)};
  if (out.loss.empty_mask()) return out;
  const auto dlogits = masked_bce_grad(logits, labels, mask);
  for (Eigen::Index i = 0; i < n; ++i) {
    accumulate_gradients(caches[static_cast<std::size_t>(i)], params, config, dlogits.row(i), out.grad);
  }
  return out;
}

/// Splits `batch` into `workers` contiguous shards (some may be empty),
/// computes each shard independently and reduces by unmasked count.
template <typename Scalar>
std::pair<ReducedGradient<Scalar>, Scalar> sharded_gradient(std::span<const TrainingSample<Scalar>* const> batch,
                                                            const ParameterSet<Scalar>& params,
                                                            const ModelConfig& config, int workers,
                                                            bool threaded) {
  const auto k = static_cast<std::size_t>(workers);
  std::vector<ShardResult<Scalar>> results(k);
  auto run = [&](std::size_t s) {
    const std::size_t lo = s * batch.size() / k;
    const std::size_t hi = (s + 1) * batch.size() / k;
    results[s] = shard_gradient<Scalar>(batch.subspan(lo, hi - lo), params, config);
  };
  if (threaded && k > 1) {
    std::vector<std::exception_ptr> errors(k);
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (std::size_t s = 0; s < k; ++s) {
      pool.emplace_back([&, s] {
        try {
          run(s);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t s = 0; s < k; ++s) run(s);
  }

  std::vector<ParameterSet<Scalar>> grads;
  std::vector<Eigen::Index> counts;
  grads.reserve(k);
  Scalar weighted_loss(0);
  for (auto& r : results) {
    counts.push_back(r.loss.unmasked_count);
    weighted_loss += r.loss.value * Scalar(r.loss.unmasked_count);
    grads.push_back(std::move(r.grad));
  }
  auto reduced = parallel_gradient_reduce<Scalar>(grads, counts);
  const Scalar loss = reduced.empty_mask() ? Scalar(0) : weighted_loss / Scalar(reduced.unmasked_count);
  return {std::move(reduced), loss};
}

/// Masked loss of `samples` under `params`, over all unmasked entries.
template <typename Scalar>
LossValue<Scalar> evaluate_loss(std::span<const TrainingSample<Scalar>> samples,
                                const ParameterSet<Scalar>& params, const ModelConfig& config) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, kNumAus, Eigen::RowMajor> logits(n, kNumAus);
  LabelMatrix labels(n, kNumAus);
  for (Eigen::Index i = 0; i < n; ++i) {
    logits.row(i) = forward(samples[static_cast<std::size_t>(i)].image, params, config);
    labels.row(i) = samples[static_cast<std::size_t>(i)].labels;
  }
  return masked_bce(logits, labels, build_mask_matrix(labels));
}

struct EpochRecord {
  int epoch = 0;
  /// Unmasked-count weighted mean of the per-step training losses.
  double train_loss = 0.0;
  /// Absent when there is no validation set.
  std::optional<double> val_loss;
  std::int64_t unmasked_count = 0;
  /// Wall-clock time of the epoch; the only nondeterministic field.
  std::int64_t wall_ms = 0;
  bool stopped_early = false;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json(nullptr);
  j["unmasked_count"] = r.unmasked_count;
  j["wall_ms"] = r.wall_ms;
  j["stopped_early"] = r.stopped_early;
  return j;
}

/// One JSON object per line.
inline std::string format_run_log(std::span<const EpochRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + '\n';
  return out;
}

template <typename Scalar>
struct TrainResult {
  ParameterSet<Scalar> params;
  AdamState<Scalar> optimizer;
  std::vector<EpochRecord> log;
  bool stopped_early = false;
};

/// Seed of the shuffle for a given epoch.
inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
}

/// Per epoch: shuffle, split into batches, reduce sharded gradients, take an
/// Adam step per batch with signal, then evaluate validation loss and check
/// early stopping. The monitored quantity is the validation loss, or the
/// training loss when `val` is empty. `on_epoch` sees each record as it is
/// produced.
template <typename Scalar>
TrainResult<Scalar> train(const ModelConfig& model_config, ParameterSet<Scalar> params,
                          std::span<const TrainingSample<Scalar>> train_set,
                          std::span<const TrainingSample<Scalar>> val_set, const TrainConfig& config,
                          const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  model_config.validate();
  check_parameter_shapes(params, model_config);
  if (train_set.empty()) throw ValidationError("training set is empty");

  TrainResult<Scalar> result{std::move(params), {}, {}, false};
  result.optimizer = AdamState<Scalar>::zeros(result.params);
  std::vector<double> monitored;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = seeded_permutation(train_set.size(), epoch_seed(config.seed, epoch));
    std::vector<const TrainingSample<Scalar>*> shuffled(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) shuffled[i] = &train_set[order[i]];

    Scalar loss_sum(0);
    std::int64_t count = 0;
    for (std::size_t lo = 0; lo < shuffled.size(); lo += bs) {
      const std::size_t hi = std::min(shuffled.size(), lo + bs);
      std::span<const TrainingSample<Scalar>* const> batch(shuffled.data() + lo, hi - lo);
      auto [reduced, loss] = sharded_gradient<Scalar>(batch, result.params, model_config, config.workers,
                                                      config.threaded);
      if (reduced.empty_mask()) continue;
      adam_step(result.params, reduced.grad, result.optimizer, config);
      loss_sum += loss * Scalar(reduced.unmasked_count);
      count += reduced.unmasked_count;
    }
    if (count == 0) {
      throw ValidationError("epoch " + std::to_string(epoch + 1) + " has no unmasked labels to learn from");
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = static_cast<double>(loss_sum / Scalar(count));
    rec.unmasked_count = count;
    if (!val_set.empty()) {
      const auto val = evaluate_loss(val_set, result.params, model_config);
      if (!val.empty_mask()) rec.val_loss = static_cast<double>(val.value);
    }
    monitored.push_back(rec.val_loss ? *rec.val_loss : rec.train_loss);
    rec.stopped_early = epoch + 1 < config.epochs &&
                        early_stop_check(monitored, config.early_stop_patience, config.early_stop_min_delta);
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                      .count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.stopped_early) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace aumask
