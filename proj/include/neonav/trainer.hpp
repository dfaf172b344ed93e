#ifndef NEONAV_TRAINER_HPP
#define NEONAV_TRAINER_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "neonav/expert.hpp"
#include "neonav/model.hpp"
#include "neonav/nn.hpp"

namespace neonav {

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr = 1e-4;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t eval_every = 0;                // 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_dir;      // empty disables checkpoints
  CheckpointMeta meta;                       // stamped into checkpoints

  void validate() const {
    if (batch_size == 0) throw Error("config", "batch size must be positive");
    if (!(lr > 0.0)) throw Error("config", "learning rate must be positive");
    if (log_every == 0) throw Error("config", "log interval must be positive");
  }
};

struct TrainRecord {
  std::size_t step = 0;  // last step of the interval, 1-based
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double ce = 0.0;
  double acc = 0.0;  // training-batch argmax accuracy of the sampled forward pass
  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::vector<double> step_loss;  // total loss of every step

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,loss,recon,kl,ce,acc\n";
    for (const auto& r : records)
      os << r.step << ',' << r.loss << ',' << r.recon << ',' << r.kl << ',' << r.ce << ',' << r.acc << '\n';
    return os.str();
  }

  /// Mean of step_loss over the `window` steps ending at 1-based step `end`.
  [[nodiscard]] double moving_average(std::size_t end, std::size_t window) const {
    if (end == 0 || end > step_loss.size()) throw Error("range", "moving average outside the log");
    const std::size_t begin = end > window ? end - window : 0;
    return std::accumulate(step_loss.begin() + static_cast<std::ptrdiff_t>(begin),
                           step_loss.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
           static_cast<double>(end - begin);
  }

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// Seeded epoch permutation (Fisher-Yates on a counter-based stream).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng = CounterRng(seed, 0x7368756CULL).split(epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
  return order;
}

/// Continues training `params` in place. Minibatches are drawn from seeded
/// epoch permutations, latent noise for step s comes from its own stream,
/// so (dataset, params, config) determine the result bit for bit.
inline TrainLog train_in_place(NeoNavParams& params, const Dataset& dataset, const TrainConfig& cfg,
                               const std::function<void(const TrainRecord&)>& on_record = {}) {
  cfg.validate();
  if (dataset.samples.empty()) throw Error("config", "cannot train on an empty dataset");
  const ModelConfig& mc = params.config();
  if (dataset.manifest.azimuths != mc.azimuths || dataset.manifest.rays != mc.rays)
    throw Error("config", "dataset sensor layout does not match the model");

  const std::size_t n = dataset.samples.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  TrainLog log;
  log.step_loss.reserve(cfg.steps);
  TrainRecord acc_rec;
  std::size_t acc_steps = 0, acc_samples = 0, acc_correct = 0;

  std::vector<std::size_t> order;
  std::size_t cursor = n;  // forces a fresh permutation on the first step
  std::uint64_t epoch = 0;
  std::vector<const Sample*> picks(bs);
  const CounterRng noise_root(cfg.seed, 0x6E6F6973ULL);
  params.store().zero_grad();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t j = 0; j < bs; ++j) {
      if (cursor == n) {
        order = epoch_order(n, cfg.seed, epoch++);
        cursor = 0;
      }
      picks[j] = &dataset.samples[order[cursor++]];
    }
    const Batch batch = make_batch(picks, mc.azimuths, mc.rays);
    CounterRng noise = noise_root.split(step);
    BatchTrace t;
    try {
      t = loss_batch(params, batch, noise, true);
    } catch (const Error& e) {
      if (e.kind() == "non_finite")
        throw Error("non_finite", "batch " + std::to_string(step) + ": " + e.what());
      throw;
    }
    nn::sgd_step(params.store(), cfg.lr);

    log.step_loss.push_back(t.mean.total);
    acc_rec.loss += t.mean.total;
    acc_rec.recon += t.mean.recon;
    acc_rec.kl += t.mean.kl;
    acc_rec.ce += t.mean.ce;
    acc_correct += t.correct;
    acc_samples += bs;
    ++acc_steps;
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      const double k = static_cast<double>(acc_steps);
      TrainRecord r{step + 1,       acc_rec.loss / k, acc_rec.recon / k, acc_rec.kl / k, acc_rec.ce / k,
                    static_cast<double>(acc_correct) / static_cast<double>(acc_samples)};
      log.records.push_back(r);
      if (on_record) on_record(r);
      acc_rec = {};
      acc_steps = acc_samples = acc_correct = 0;
    }
    if (!cfg.checkpoint_dir.empty() && cfg.eval_every != 0 && (step + 1) % cfg.eval_every == 0) {
      CheckpointMeta meta = cfg.meta;
      meta.steps = step + 1;
      save_model(cfg.checkpoint_dir / ("step_" + std::to_string(step + 1)), params, meta);
    }
  }
  return log;
}

/// Fresh model initialized from `cfg.seed`, trained for `cfg.steps`.
inline std::pair<NeoNavParams, TrainLog> train(const Dataset& dataset, const ModelConfig& model,
                                               const TrainConfig& cfg) {
  NeoNavParams params(model, cfg.seed);
  TrainLog log = train_in_place(params, dataset, cfg);
  return {std::move(params), std::move(log)};
}

/// Fraction of samples whose test-time argmax action equals the expert's,
/// using each sample's stored previous action.
inline double imitation_accuracy(const NeoNavParams& params, const Dataset& dataset, std::size_t chunk = 256) {
  if (dataset.samples.empty()) return 0.0;
  const ModelConfig& mc = params.config();
  std::size_t correct = 0;
  std::vector<const Sample*> picks;
  for (std::size_t begin = 0; begin < dataset.samples.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, dataset.samples.size());
    picks.clear();
    for (std::size_t i = begin; i < end; ++i) picks.push_back(&dataset.samples[i]);
    const Batch batch = make_batch(picks, mc.azimuths, mc.rays);
    const nn::Matrix logits = policy_logits_batch(params, batch);
    for (nn::Index j = 0; j < logits.cols(); ++j) {
      nn::Index best = 0;
      logits.col(j).maxCoeff(&best);
      if (best == batch.labels[static_cast<std::size_t>(j)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.samples.size());
}

/// Mean squared error per scan element between the decoder's prediction at
/// the posterior mean and the stored next front view.
inline double reconstruction_mse(const NeoNavParams& params, const Dataset& dataset) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : dataset.samples) {
    const auto q = infer_posterior(params, s.x, s.g);
    const auto neo = decode_neo(params, q.mu);
    sum += (neo.x_hat - to_vector(s.next_front)).squaredNorm();
    count += s.next_front.values.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace neonav

#endif  // NEONAV_TRAINER_HPP
