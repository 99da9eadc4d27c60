#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lpose/dataset.hpp"
#include "lpose/losses.hpp"
#include "lpose/metrics.hpp"
#include "lpose/network.hpp"

namespace lpose {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int batch_size = 8;
  int epochs = 60;
  int warmup_epochs = 5;
  double cosine_floor = 0.01;  // fraction of lr
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  bool hflip = true;
  double conf_dropout_prob = 0.2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lift_scale = kDefaultLiftScale;
  CurriculumSchedule curriculum;

  void validate() const {
    if (lr <= 0 || batch_size < 1 || epochs < 1 || warmup_epochs < 0 || grad_clip <= 0 ||
        cosine_floor < 0 || cosine_floor > 1)
      throw std::invalid_argument("train config: invalid values");
  }
};

/// Per-step learning rate: linear warmup from 0 over warmup_epochs, then a
/// cosine decay to the floor fraction. lr(0) = 0 and lr(total) = floor * lr.
inline double lr_at(const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch,
                    std::int64_t total_steps) {
  const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  if (warm > 0 && step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
  const double floor = cfg.cosine_floor * cfg.lr;
  if (total_steps <= warm) return floor;
  double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  progress = std::clamp(progress, 0.0, 1.0);
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Kendall log sigma^2 triple (mpjpe, velocity, bone), trained jointly with
/// the network but kept out of its parameter count.
template <typename T>
ParamStore<T> make_uncertainty_params() {
  ParamStore<T> store;
  store.add("loss.log_sigma_sq", ad::Tensor<T>::zeros({3}), false);
  return store;
}

/// Decoupled-weight-decay Adam over a set of parameter stores.
template <typename T>
class AdamW {
 public:
  explicit AdamW(std::vector<ParamStore<T>*> stores) : stores_(std::move(stores)) {
    for (auto* s : stores_)
      for (auto& e : s->entries) {
        m_.push_back(ad::Tensor<T>::zeros(e.value.shape));
        v_.push_back(ad::Tensor<T>::zeros(e.value.shape));
      }
  }

  std::size_t flat_size() const { return m_.size(); }

  /// grads must align with the concatenated store entries.
  void step(const std::vector<ad::Tensor<T>>& grads, double lr, const TrainConfig& cfg) {
    if (grads.size() != m_.size()) throw std::invalid_argument("adamw: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t_);
    std::size_t idx = 0;
    for (auto* s : stores_)
      for (auto& e : s->entries) {
        ad::Tensor<T>& m = m_[idx];
        ad::Tensor<T>& v = v_[idx];
        const ad::Tensor<T>& g = grads[idx];
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
          double gi = static_cast<double>(g.data[i]);
          double mi = cfg.adam_beta1 * static_cast<double>(m.data[i]) + (1 - cfg.adam_beta1) * gi;
          double vi = cfg.adam_beta2 * static_cast<double>(v.data[i]) + (1 - cfg.adam_beta2) * gi * gi;
          m.data[i] = static_cast<T>(mi);
          v.data[i] = static_cast<T>(vi);
          double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
          double value = static_cast<double>(e.value.data[i]);
          if (e.decay) value -= lr * cfg.weight_decay * value;
          e.value.data[i] = static_cast<T>(value - lr * update);
        }
        ++idx;
      }
  }

 private:
  std::vector<ParamStore<T>*> stores_;
  std::vector<ad::Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

/// Horizontal flip: negate the x channel and relabel joints through the
/// skeleton's mirror map (inputs and targets consistently). Involutive.
template <typename T>
ad::Tensor<T> hflip_sequence(const ad::Tensor<T>& seq, const std::vector<int>& mirror) {
  const int t_n = seq.shape[0], j_n = seq.shape[1];
  ad::Tensor<T> out(seq.shape);
  for (int t = 0; t < t_n; ++t)
    for (int j = 0; j < j_n; ++j) {
      int src = mirror[static_cast<std::size_t>(j)];
      std::size_t dst_base = static_cast<std::size_t>((t * j_n + j) * 3);
      std::size_t src_base = static_cast<std::size_t>((t * j_n + src) * 3);
      out.data[dst_base] = -seq.data[src_base];
      out.data[dst_base + 1] = seq.data[src_base + 1];
      out.data[dst_base + 2] = seq.data[src_base + 2];
    }
  return out;
}

struct StepStats {
  std::int64_t step = 0;
  double lr = 0;
  double grad_norm_post_clip = 0;
  double loss_total = 0;
  double drift = 0;
};

struct TrainHooks {
  std::function<void(const StepStats&)> on_step;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double loss_total = 0, loss_mpjpe = 0, loss_vel = 0, loss_bone = 0;
  double sigma2_mpjpe = 1, sigma2_vel = 1, sigma2_bone = 1;
  double omega = 0;
  double drift = 0;
  double val_mpjpe = 0;
  double wall_s = 0;
};

struct TrainOutcome {
  std::vector<EpochLog> epochs;
  double best_val_mpjpe = 0;
  int best_epoch = -1;
  std::string best_checkpoint, final_checkpoint, log_path;
};

namespace detail {

inline std::string epoch_log_header() {
  return "epoch,lr,loss_total,loss_mpjpe,loss_vel,loss_bone,sigma2_mpjpe,sigma2_vel,sigma2_bone,"
         "omega,drift,val_mpjpe,wall_s";
}

inline std::string epoch_log_row(const EpochLog& e) {
  char buf[640];
  std::snprintf(buf, sizeof(buf),
                "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f", e.epoch,
                e.lr, e.loss_total, e.loss_mpjpe, e.loss_vel, e.loss_bone, e.sigma2_mpjpe, e.sigma2_vel,
                e.sigma2_bone, e.omega, e.drift, e.val_mpjpe, e.wall_s);
  return buf;
}

}  // namespace detail

/// Mean MPJPE (mm) of the model over a dataset, eval mode.
template <typename T>
double dataset_mpjpe(const Model<T>& model, const Dataset& data) {
  double acc = 0;
  for (const auto& seq : data.sequences) {
    auto pred = model.predict(seq.inputs.template cast<T>());
    acc += metrics::mpjpe(pred.template cast<double>(), seq.targets.template cast<double>());
  }
  return data.sequences.empty() ? 0.0 : acc / static_cast<double>(data.sequences.size());
}

/// Desk-scale training loop: AdamW with decoupled weight decay, per-step
/// cosine schedule with linear warmup, global-norm gradient clipping,
/// hflip / confidence-dropout augmentation, the uncertainty-weighted loss
/// with the epoch curriculum, per-epoch CSV logging and best-by-validation
/// checkpointing. Sequential and deterministic for a fixed seed.
template <typename T>
TrainOutcome train_model(Model<T>& model, ParamStore<T>& loss_params, const Dataset& train_data,
                         const Dataset* val_data, const TrainConfig& cfg, const std::string& out_dir,
                         const TrainHooks* hooks = nullptr) {
  cfg.validate();
  if (train_data.sequences.empty()) throw std::invalid_argument("train: empty dataset");
  if (train_data.joints != model.config().joints)
    throw std::invalid_argument("train: dataset joints do not match the model");
  std::filesystem::create_directories(out_dir);

  const int n = static_cast<int>(train_data.sequences.size());
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const Dataset& val = val_data ? *val_data : train_data;

  std::mt19937_64 rng(cfg.seed);
  AdamW<T> optimizer({&model.params(), &loss_params});
  const std::vector<int>& mirror = model.skeleton().mirror;

  TrainOutcome outcome;
  outcome.log_path = out_dir + "/train_log.csv";
  outcome.best_checkpoint = out_dir + "/best.ckpt";
  outcome.final_checkpoint = out_dir + "/final.ckpt";
  std::ofstream log(outcome.log_path);
  if (!log) throw std::runtime_error("train: cannot open " + outcome.log_path);
  log << detail::epoch_log_header() << "\n";

  std::vector<int> indices(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;

  std::int64_t step = 0;
  outcome.best_val_mpjpe = std::numeric_limits<double>::infinity();
  const auto t_start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(indices.begin(), indices.end(), rng);
    const double omega = cfg.curriculum.weight(epoch);
    EpochLog elog;
    elog.epoch = epoch;
    elog.omega = omega;
    double drift_sum = 0;
    std::int64_t drift_steps = 0;

    for (std::int64_t bstart = 0; bstart < n; bstart += cfg.batch_size) {
      const double lr = lr_at(cfg, step, steps_per_epoch, total_steps);
      ad::Tape<T> tape;
      auto model_vars = model.bind(tape, true);
      auto loss_vars = loss_params.bind(tape, true);
      const auto& logvar = loss_vars[0];

      ad::Var<T> batch_mpjpe, batch_vel, batch_bone;
      int batch_count = 0;
      ForwardStats stats;
      for (std::int64_t bi = bstart; bi < std::min<std::int64_t>(n, bstart + cfg.batch_size); ++bi) {
        const auto& raw = train_data.sequences[static_cast<std::size_t>(
            indices[static_cast<std::size_t>(bi)])];
        ad::Tensor<T> inputs = raw.inputs.template cast<T>();
        ad::Tensor<T> targets = raw.targets.template cast<T>();
        if (cfg.hflip && std::uniform_real_distribution<double>(0, 1)(rng) < 0.5) {
          inputs = hflip_sequence(inputs, mirror);
          targets = hflip_sequence(targets, mirror);
        }
        if (cfg.conf_dropout_prob > 0 &&
            std::uniform_real_distribution<double>(0, 1)(rng) < cfg.conf_dropout_prob) {
          int joints_to_drop = 1 + static_cast<int>(rng() % 2);
          for (int kdrop = 0; kdrop < joints_to_drop; ++kdrop) {
            int jd = static_cast<int>(rng() % static_cast<std::uint64_t>(train_data.joints));
            for (int t = 0; t < train_data.frames; ++t)
              inputs.data[static_cast<std::size_t>((t * train_data.joints + jd) * 3 + 2)] = T(0);
          }
        }

        ForwardOptions<T> opts;
        opts.training = true;
        opts.rng = &rng;
        opts.stats = &stats;
        auto fwd = model.forward(tape, model_vars, inputs, opts);
        auto gt = tape.constant(std::move(targets), "targets");
        auto lm = loss_mpjpe(fwd.prediction, gt);
        auto lv = loss_velocity(fwd.prediction, gt, static_cast<T>(cfg.lift_scale));
        auto lb = loss_bone(fwd.prediction, gt, model.skeleton(), static_cast<T>(cfg.lift_scale));
        batch_mpjpe = batch_count == 0 ? lm : ad::add(batch_mpjpe, lm);
        batch_vel = batch_count == 0 ? lv : ad::add(batch_vel, lv);
        batch_bone = batch_count == 0 ? lb : ad::add(batch_bone, lb);
        ++batch_count;
      }
      const T inv_batch = T(1) / static_cast<T>(batch_count);
      batch_mpjpe = ad::mul_scalar(batch_mpjpe, inv_batch);
      batch_vel = ad::mul_scalar(batch_vel, inv_batch);
      batch_bone = ad::mul_scalar(batch_bone, inv_batch);
      auto total = total_loss(batch_mpjpe, batch_vel, batch_bone, logvar, omega);

      const double total_value = static_cast<double>(total.scalar());
      if (!std::isfinite(total_value)) {
        std::string where = "unknown";
        if (auto bad = tape.find_nonfinite())
          where = std::string(bad->op) + (bad->name.empty() ? "" : " (" + bad->name + ")");
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                 ", first bad tensor: " + where);
      }

      tape.backward(total);
      std::vector<ad::Tensor<T>> grads;
      grads.reserve(model_vars.size() + loss_vars.size());
      for (const auto& v : model_vars) grads.push_back(tape.grad(v.id));
      for (const auto& v : loss_vars) grads.push_back(tape.grad(v.id));

      double norm2 = 0;
      for (const auto& g : grads)
        for (T gi : g.data) norm2 += static_cast<double>(gi) * static_cast<double>(gi);
      double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip) {
        const T scale = static_cast<T>(cfg.grad_clip / norm);
        for (auto& g : grads)
          for (auto& gi : g.data) gi *= scale;
        norm = cfg.grad_clip;
      }
      optimizer.step(grads, lr, cfg);

      elog.lr = lr;
      elog.loss_total += total_value;
      elog.loss_mpjpe += static_cast<double>(batch_mpjpe.scalar());
      elog.loss_vel += static_cast<double>(batch_vel.scalar());
      elog.loss_bone += static_cast<double>(batch_bone.scalar());
      drift_sum += stats.mean_drift();
      ++drift_steps;
      if (hooks && hooks->on_step) hooks->on_step({step, lr, norm, total_value, stats.mean_drift()});
      ++step;
    }

    elog.loss_total /= static_cast<double>(steps_per_epoch);
    elog.loss_mpjpe /= static_cast<double>(steps_per_epoch);
    elog.loss_vel /= static_cast<double>(steps_per_epoch);
    elog.loss_bone /= static_cast<double>(steps_per_epoch);
    elog.drift = drift_steps ? drift_sum / static_cast<double>(drift_steps) : 0.0;
    const auto& lv = loss_params.entries[0].value;
    elog.sigma2_mpjpe = std::exp(static_cast<double>(lv.data[0]));
    elog.sigma2_vel = std::exp(static_cast<double>(lv.data[1]));
    elog.sigma2_bone = std::exp(static_cast<double>(lv.data[2]));
    elog.val_mpjpe = dataset_mpjpe(model, val);
    elog.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    log << detail::epoch_log_row(elog) << "\n";
    outcome.epochs.push_back(elog);

    if (elog.val_mpjpe < outcome.best_val_mpjpe) {
      outcome.best_val_mpjpe = elog.val_mpjpe;
      outcome.best_epoch = epoch;
      model.save_checkpoint(outcome.best_checkpoint);
    }
  }
  model.save_checkpoint(outcome.final_checkpoint);
  return outcome;
}

/// Evaluation report with the per-sequence metric rows plus diagnostics from
/// the forward stats and final hidden state.
template <typename T>
metrics::EvalReport evaluate_model(const Model<T>& model, const Dataset& data) {
  metrics::EvalReport report;
  int idx = 0;
  for (const auto& seq : data.sequences) {
    ad::Tape<T> tape;
    tape.set_grad_enabled(false);
    auto vars = model.bind(tape, false);
    ForwardStats stats;
    ForwardOptions<T> opts;
    opts.stats = &stats;
    auto fwd = model.forward(tape, vars, seq.inputs.template cast<T>(), opts);
    ad::Tensor<double> pred = fwd.prediction.val().template cast<double>();
    ad::Tensor<double> hidden = fwd.hidden.val().template cast<double>();
    ad::Tensor<double> gt = seq.targets.template cast<double>();

    metrics::SequenceMetrics row;
    char name[32];
    std::snprintf(name, sizeof(name), "seq%03d", idx++);
    row.name = name;
    row.mpjpe = metrics::mpjpe(pred, gt);
    row.p_mpjpe = metrics::p_mpjpe(pred, gt);
    row.n_mpjpe = metrics::n_mpjpe(pred, gt);
    row.mpjve = metrics::mpjve(pred, gt);
    row.accel = metrics::accel_error(pred, gt);
    row.blc = metrics::blc(pred, gt, model.skeleton());
    row.distortion = metrics::distortion_ratio(hidden, model.skeleton());
    row.map = metrics::map_retrieval(hidden);
    row.entropy = stats.mean_entropy();
    report.rows.push_back(std::move(row));
  }
  return report;
}

struct DriftRecord {
  int step = 0;
  std::string site;
  double drift = 0;
};

/// Logs the manifold drift at every spatial-attention lift site for each
/// sequence (one forward per step). Values are detached diagnostics; raw and
/// log10 columns are both written.
template <typename T>
std::vector<DriftRecord> driftwatch(const Model<T>& model, const Dataset& data,
                                    const std::string& csv_path = {}) {
  std::vector<DriftRecord> records;
  int step = 0;
  for (const auto& seq : data.sequences) {
    ForwardStats stats;
    (void)model.predict(seq.inputs.template cast<T>(), &stats);
    for (const auto& [site, drift] : stats.site_drift) records.push_back({step, site, drift});
    ++step;
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("driftwatch: cannot open " + csv_path);
    out << "step,site,drift,log10_drift\n";
    for (const auto& r : records) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%.10g\n", r.step, r.site.c_str(), r.drift,
                    r.drift > 0 ? std::log10(r.drift) : -std::numeric_limits<double>::infinity());
      out << buf;
    }
  }
  return records;
}

}  // namespace lpose
