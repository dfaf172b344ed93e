#ifndef NEONAV_MODEL_HPP
#define NEONAV_MODEL_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neonav/expert.hpp"
#include "neonav/gridworld.hpp"
#include "neonav/nn.hpp"
#include "neonav/sensor.hpp"

namespace neonav {

/// Full model and the three ablations.
///  - NoGen: no sampling and no KL; z is the posterior mean.
///  - NoMoP: KL against a fixed standard normal instead of the
///    action-conditioned prior.
///  - FrontView: only the front view of the observation is consumed.
enum class Variant { Full, NoGen, NoMoP, FrontView };

inline std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoGen: return "nogen";
    case Variant::NoMoP: return "nomop";
    case Variant::FrontView: return "frontview";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::Full, Variant::NoGen, Variant::NoMoP, Variant::FrontView})
    if (variant_name(v) == s) return v;
  throw Error("config", "unknown model variant '" + std::string(s) + "'");
}

struct ModelConfig {
  int latent = 16;
  int azimuths = kDefaultAzimuths;
  int rays = 32;
  int encoder_hidden = 64;
  int feature = 64;
  int inference_hidden = 128;
  int prior_hidden = 64;
  int decoder_hidden = 64;
  int action_feature = 32;
  int classifier_hidden = 128;
  double alpha = 0.01;
  double beta = 0.0001;
  double gamma = 1.0;
  Variant variant = Variant::Full;
  bool sample_at_test = false;

  [[nodiscard]] bool uses_learned_prior() const noexcept {
    return variant == Variant::Full || variant == Variant::FrontView;
  }
  [[nodiscard]] int consumed_views() const noexcept { return variant == Variant::FrontView ? 1 : azimuths; }

  void validate() const {
    for (int v : {latent, azimuths, rays, encoder_hidden, feature, inference_hidden, prior_hidden, decoder_hidden,
                  action_feature, classifier_hidden})
      if (v <= 0) throw Error("config", "model sizes must be positive");
    if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) throw Error("config", "loss weights must be nonnegative");
  }

  [[nodiscard]] Json to_json() const {
    return {{"latent", latent},
            {"azimuths", azimuths},
            {"rays", rays},
            {"encoder_hidden", encoder_hidden},
            {"feature", feature},
            {"inference_hidden", inference_hidden},
            {"prior_hidden", prior_hidden},
            {"decoder_hidden", decoder_hidden},
            {"action_feature", action_feature},
            {"classifier_hidden", classifier_hidden},
            {"alpha", alpha},
            {"beta", beta},
            {"gamma", gamma},
            {"variant", variant_name(variant)},
            {"sample_at_test", sample_at_test}};
  }

  static ModelConfig from_json(const Json& j) {
    ModelConfig c;
    c.latent = io::field<int>(j, "latent");
    c.azimuths = io::field<int>(j, "azimuths");
    c.rays = io::field<int>(j, "rays");
    c.encoder_hidden = io::field<int>(j, "encoder_hidden");
    c.feature = io::field<int>(j, "feature");
    c.inference_hidden = io::field<int>(j, "inference_hidden");
    c.prior_hidden = io::field<int>(j, "prior_hidden");
    c.decoder_hidden = io::field<int>(j, "decoder_hidden");
    c.action_feature = io::field<int>(j, "action_feature");
    c.classifier_hidden = io::field<int>(j, "classifier_hidden");
    c.alpha = io::field<double>(j, "alpha");
    c.beta = io::field<double>(j, "beta");
    c.gamma = io::field<double>(j, "gamma");
    c.variant = parse_variant(io::field<std::string>(j, "variant"));
    c.sample_at_test = io::field<bool>(j, "sample_at_test");
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// All learnable weights. Subnetworks:
///  encoder         shared scan featurizer (views, target, front view)
///  inference       q(z | x, g): trunk plus mean / log-variance heads
///  prior           p(z | x_front, a): trunk plus heads (learned-prior variants only)
///  decoder         p(x_hat | z): two hidden layers, then a sigmoid scan head
///  action_embed    affine 7 -> action_feature
///  classifier      q(a | x, x_hat, a_prev): four-layer MLP
class NeoNavParams {
 public:
  explicit NeoNavParams(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg), store_(seed) {
    using nn::Activation;
    using nn::Init;
    cfg_.validate();
    const auto F = static_cast<nn::Index>(cfg_.feature);
    encoder = nn::add_mlp(store_, "encoder", {cfg_.rays, cfg_.encoder_hidden, F}, Activation::Relu,
                          Activation::Relu, Init::KaimingUniform);
    inference = nn::add_mlp(store_, "inference", {F * (cfg_.consumed_views() + 1), cfg_.inference_hidden,
                                                  cfg_.inference_hidden},
                            Activation::Relu, Activation::Relu, Init::KaimingUniform);
    mu_head = nn::add_linear(store_, "inference.mu", cfg_.inference_hidden, cfg_.latent, Init::Zero);
    log_var_head = nn::add_linear(store_, "inference.log_var", cfg_.inference_hidden, cfg_.latent, Init::Zero);
    if (cfg_.uses_learned_prior()) {
      prior = nn::add_mlp(store_, "prior", {F + kActionCount, cfg_.prior_hidden}, Activation::Relu,
                          Activation::Relu, Init::KaimingUniform);
      prior_mu = nn::add_linear(store_, "prior.mu", cfg_.prior_hidden, cfg_.latent, Init::Zero);
      prior_log_var = nn::add_linear(store_, "prior.log_var", cfg_.prior_hidden, cfg_.latent, Init::Zero);
    }
    decoder = nn::add_mlp(store_, "decoder", {cfg_.latent, cfg_.decoder_hidden, cfg_.decoder_hidden},
                          Activation::Relu, Activation::Relu, Init::KaimingUniform);
    decoder_out = nn::add_linear(store_, "decoder.out", cfg_.decoder_hidden, cfg_.rays, Init::KaimingUniform);
    action_embed = nn::add_linear(store_, "action_embed", kActionCount, cfg_.action_feature, Init::KaimingUniform);
    classifier = nn::add_mlp(store_, "classifier",
                             {F + cfg_.decoder_hidden + cfg_.action_feature, cfg_.classifier_hidden,
                              cfg_.classifier_hidden, cfg_.classifier_hidden, kActionCount},
                             Activation::Relu, Activation::Identity, Init::Zero);
  }

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] nn::ParamStore& store() noexcept { return store_; }
  [[nodiscard]] const nn::ParamStore& store() const noexcept { return store_; }

  nn::Mlp encoder;
  nn::Mlp inference;
  nn::Linear mu_head, log_var_head;
  nn::Mlp prior;
  nn::Linear prior_mu, prior_log_var;
  nn::Mlp decoder;
  nn::Linear decoder_out;
  nn::Linear action_embed;
  nn::Mlp classifier;

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
};

// ---------------------------------------------------------------------------
// Single-input building blocks
// ---------------------------------------------------------------------------

inline nn::Vector to_vector(const DepthScan& s) {
  return Eigen::Map<const nn::Vector>(s.values.data(), static_cast<nn::Index>(s.values.size()));
}

inline nn::Vector to_vector(const OneHot& a) {
  return Eigen::Map<const nn::Vector>(a.data(), kActionCount);
}

inline void check_scan(const NeoNavParams& m, const DepthScan& s) {
  if (static_cast<int>(s.values.size()) != m.config().rays) throw Error("shape", "scan width does not match model");
}

inline nn::Vector encode_scan(const NeoNavParams& m, const DepthScan& s) {
  check_scan(m, s);
  return nn::mlp_forward(m.store(), m.encoder, to_vector(s));
}

/// q(z | x, g). FrontView consumes views[0] only.
inline nn::DiagGaussian infer_posterior(const NeoNavParams& m, const Observation& x, const DepthScan& g) {
  const int nv = m.config().consumed_views();
  if (static_cast<int>(x.views.size()) < nv) throw Error("shape", "observation has too few views");
  const auto F = static_cast<nn::Index>(m.config().feature);
  nn::Vector in(F * (nv + 1));
  for (int i = 0; i < nv; ++i) in.segment(F * i, F) = encode_scan(m, x.views[static_cast<std::size_t>(i)]);
  in.segment(F * nv, F) = encode_scan(m, g);
  const nn::Matrix h = nn::mlp_forward(m.store(), m.inference, in);
  return {nn::linear_forward(m.store(), m.mu_head, h), nn::linear_forward(m.store(), m.log_var_head, h)};
}

/// p(z | x_front, a); the standard normal for variants without a learned prior.
inline nn::DiagGaussian prior_from_action(const NeoNavParams& m, const DepthScan& x_front, Action a) {
  if (!m.config().uses_learned_prior()) return nn::DiagGaussian::standard(m.config().latent);
  const auto F = static_cast<nn::Index>(m.config().feature);
  nn::Vector in(F + kActionCount);
  in.head(F) = encode_scan(m, x_front);
  in.tail(kActionCount) = to_vector(one_hot(a));
  const nn::Matrix h = nn::mlp_forward(m.store(), m.prior, in);
  return {nn::linear_forward(m.store(), m.prior_mu, h), nn::linear_forward(m.store(), m.prior_log_var, h)};
}

struct NeoOutput {
  nn::Vector x_hat;
  nn::Vector decoder_feature;
};

/// Decoder feature (penultimate activations) and, unless skipped, the
/// predicted next front view.
inline NeoOutput decode_neo(const NeoNavParams& m, const nn::Vector& z, bool with_scan = true) {
  if (z.size() != m.config().latent) throw Error("shape", "latent has wrong dimension");
  NeoOutput out;
  out.decoder_feature = nn::mlp_forward(m.store(), m.decoder, z);
  if (with_scan)
    out.x_hat = nn::activate(nn::Activation::Sigmoid, nn::linear_forward(m.store(), m.decoder_out, out.decoder_feature));
  return out;
}

inline nn::Vector classify_action(const NeoNavParams& m, const nn::Vector& x_front_feature,
                                  const nn::Vector& decoder_feature, const OneHot& prev_action) {
  const auto F = static_cast<nn::Index>(m.config().feature);
  const auto D = static_cast<nn::Index>(m.config().decoder_hidden);
  const auto A = static_cast<nn::Index>(m.config().action_feature);
  if (x_front_feature.size() != F || decoder_feature.size() != D) throw Error("shape", "classifier input mismatch");
  nn::Vector in(F + D + A);
  in.head(F) = x_front_feature;
  in.segment(F, D) = decoder_feature;
  in.tail(A) = nn::linear_forward(m.store(), m.action_embed, to_vector(prev_action));
  return nn::mlp_forward(m.store(), m.classifier, in);
}

/// Test-time policy: posterior mean (or a sample when configured and an rng
/// is supplied), decoder feature only, softmax over the classifier.
inline std::array<double, kActionCount> act(const NeoNavParams& m, const Observation& x, const DepthScan& g,
                                            const OneHot& prev_action, CounterRng* rng = nullptr) {
  const auto q = infer_posterior(m, x, g);
  const nn::Vector z = m.config().sample_at_test && rng ? nn::reparam_sample(q, *rng) : q.mu;
  const auto neo = decode_neo(m, z, false);
  const nn::Vector p = nn::softmax(classify_action(m, encode_scan(m, x.views.front()), neo.decoder_feature, prev_action));
  std::array<double, kActionCount> out{};
  for (int i = 0; i < kActionCount; ++i) out[static_cast<std::size_t>(i)] = p(i);
  return out;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Column-batched inputs; column b is sample b.
struct Batch {
  std::vector<nn::Matrix> views;  // K matrices, rays x B
  nn::Matrix goal;                // rays x B
  nn::Matrix prev;                // 7 x B
  nn::Matrix next_front;          // rays x B
  std::vector<int> labels;

  [[nodiscard]] nn::Index size() const noexcept { return goal.cols(); }
};

inline Batch make_batch(std::span<const Sample* const> samples, int azimuths, int rays) {
  const auto B = static_cast<nn::Index>(samples.size());
  Batch b;
  b.views.assign(static_cast<std::size_t>(azimuths), nn::Matrix(rays, B));
  b.goal.resize(rays, B);
  b.prev.resize(kActionCount, B);
  b.next_front.resize(rays, B);
  b.labels.resize(samples.size());
  for (nn::Index j = 0; j < B; ++j) {
    const Sample& s = *samples[static_cast<std::size_t>(j)];
    if (static_cast<int>(s.x.views.size()) != azimuths) throw Error("shape", "sample has wrong view count");
    for (int k = 0; k < azimuths; ++k) b.views[static_cast<std::size_t>(k)].col(j) = to_vector(s.x.views[static_cast<std::size_t>(k)]);
    b.goal.col(j) = to_vector(s.g);
    b.prev.col(j) = to_vector(s.prev_one_hot());
    b.next_front.col(j) = to_vector(s.next_front);
    b.labels[static_cast<std::size_t>(j)] = action_index(s.gt_action);
  }
  return b;
}

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double ce = 0.0;
};

/// Everything the forward pass produced; column b belongs to sample b.
/// Loss terms are batch means; per-sample terms are kept alongside.
struct BatchTrace {
  nn::Matrix mu, log_var;              // posterior
  nn::Matrix prior_mu, prior_log_var;  // empty for NoGen
  nn::Matrix z;
  nn::Matrix x_hat;
  nn::Matrix decoder_feature;
  nn::Matrix logits;
  std::vector<LossTerms> per_sample;
  LossTerms mean;
  std::size_t correct = 0;  // argmax(logits) == label
};

/// Per-sample view of a batch trace.
struct ForwardTrace {
  nn::DiagGaussian q;
  std::optional<nn::DiagGaussian> p;  // absent for NoGen
  nn::Vector z;
  nn::Vector x_hat;
  nn::Vector decoder_feature;
  nn::Vector logits;
  LossTerms terms;
};

inline ForwardTrace trace_column(const BatchTrace& t, nn::Index j) {
  ForwardTrace f;
  f.q = {t.mu.col(j), t.log_var.col(j)};
  if (t.prior_mu.size() > 0) f.p = nn::DiagGaussian{t.prior_mu.col(j), t.prior_log_var.col(j)};
  f.z = t.z.col(j);
  f.x_hat = t.x_hat.col(j);
  f.decoder_feature = t.decoder_feature.col(j);
  f.logits = t.logits.col(j);
  f.terms = t.per_sample[static_cast<std::size_t>(j)];
  return f;
}

/// total = alpha * recon + beta * kl + gamma * ce averaged over the batch,
/// with recon = 0.5 * |x_hat - next_front|^2 and kl summed over latent
/// dimensions. One latent draw per sample from `rng`; NoGen uses the mean.
/// When `backward` is set, gradients of the batch-mean total are
/// accumulated into the parameter store.
inline BatchTrace loss_batch(NeoNavParams& m, const Batch& batch, CounterRng& rng, bool backward = true) {
  using nn::Activation;
  using nn::Matrix;
  const ModelConfig& cfg = m.config();
  auto& store = m.store();
  const nn::Index B = batch.size();
  const nn::Index F = cfg.feature;
  const int nv = cfg.consumed_views();
  const double inv_b = 1.0 / static_cast<double>(B);

  // Shared encoder over [view_0 | ... | view_{nv-1} | goal].
  Matrix enc_in(cfg.rays, B * (nv + 1));
  for (int i = 0; i < nv; ++i) enc_in.middleCols(B * i, B) = batch.views[static_cast<std::size_t>(i)];
  enc_in.middleCols(B * nv, B) = batch.goal;
  nn::MlpTape enc_tape;
  const Matrix feat = nn::mlp_forward(store, m.encoder, enc_in, &enc_tape);
  const Matrix f_front = feat.leftCols(B);

  // Posterior.
  Matrix inf_in(F * (nv + 1), B);
  for (int i = 0; i <= nv; ++i) inf_in.middleRows(F * i, F) = feat.middleCols(B * i, B);
  nn::MlpTape inf_tape;
  const Matrix h = nn::mlp_forward(store, m.inference, inf_in, &inf_tape);
  BatchTrace t;
  t.mu = nn::linear_forward(store, m.mu_head, h);
  t.log_var = nn::linear_forward(store, m.log_var_head, h);

  // Latent.
  Matrix eps;
  if (cfg.variant == Variant::NoGen) {
    t.z = t.mu;
  } else {
    eps.resize(cfg.latent, B);
    for (nn::Index j = 0; j < B; ++j)
      for (nn::Index i = 0; i < cfg.latent; ++i) eps(i, j) = rng.normal();
    t.z = t.mu + ((0.5 * t.log_var.array()).exp() * eps.array()).matrix();
  }

  // Prior.
  Matrix labels_1h = Matrix::Zero(kActionCount, B);
  for (nn::Index j = 0; j < B; ++j) labels_1h(batch.labels[static_cast<std::size_t>(j)], j) = 1.0;
  nn::MlpTape prior_tape;
  Matrix prior_in, prior_h;
  if (cfg.uses_learned_prior()) {
    prior_in.resize(F + kActionCount, B);
    prior_in.topRows(F) = f_front;
    prior_in.bottomRows(kActionCount) = labels_1h;
    prior_h = nn::mlp_forward(store, m.prior, prior_in, &prior_tape);
    t.prior_mu = nn::linear_forward(store, m.prior_mu, prior_h);
    t.prior_log_var = nn::linear_forward(store, m.prior_log_var, prior_h);
  } else if (cfg.variant == Variant::NoMoP) {
    t.prior_mu = Matrix::Zero(cfg.latent, B);
    t.prior_log_var = Matrix::Zero(cfg.latent, B);
  }

  // Decoder.
  nn::MlpTape dec_tape;
  t.decoder_feature = nn::mlp_forward(store, m.decoder, t.z, &dec_tape);
  t.x_hat = nn::activate(Activation::Sigmoid, nn::linear_forward(store, m.decoder_out, t.decoder_feature));

  // Classifier.
  const Matrix a_emb = nn::linear_forward(store, m.action_embed, batch.prev);
  Matrix cls_in(F + cfg.decoder_hidden + cfg.action_feature, B);
  cls_in.topRows(F) = f_front;
  cls_in.middleRows(F, cfg.decoder_hidden) = t.decoder_feature;
  cls_in.bottomRows(cfg.action_feature) = a_emb;
  nn::MlpTape cls_tape;
  t.logits = nn::mlp_forward(store, m.classifier, cls_in, &cls_tape);

  // Loss terms.
  Matrix d_logits(kActionCount, B);
  Matrix d_mu = Matrix::Zero(cfg.latent, B), d_log_var = Matrix::Zero(cfg.latent, B);
  Matrix d_prior_mu, d_prior_log_var;
  if (cfg.uses_learned_prior()) {
    d_prior_mu.resize(cfg.latent, B);
    d_prior_log_var.resize(cfg.latent, B);
  }
  t.per_sample.resize(static_cast<std::size_t>(B));
  for (nn::Index j = 0; j < B; ++j) {
    LossTerms& term = t.per_sample[static_cast<std::size_t>(j)];
    term.recon = 0.5 * (t.x_hat.col(j) - batch.next_front.col(j)).squaredNorm();
    const auto ce = nn::softmax_cross_entropy(t.logits.col(j), batch.labels[static_cast<std::size_t>(j)]);
    term.ce = ce.loss;
    d_logits.col(j) = cfg.gamma * inv_b * ce.grad;
    nn::Index best = 0;
    t.logits.col(j).maxCoeff(&best);
    if (best == batch.labels[static_cast<std::size_t>(j)]) ++t.correct;
    if (cfg.variant != Variant::NoGen) {
      const auto kl = nn::kl_diag_gaussians({t.mu.col(j), t.log_var.col(j)}, {t.prior_mu.col(j), t.prior_log_var.col(j)});
      term.kl = kl.value;
      d_mu.col(j) = cfg.beta * inv_b * kl.d_mu_q;
      d_log_var.col(j) = cfg.beta * inv_b * kl.d_log_var_q;
      if (cfg.uses_learned_prior()) {
        d_prior_mu.col(j) = cfg.beta * inv_b * kl.d_mu_p;
        d_prior_log_var.col(j) = cfg.beta * inv_b * kl.d_log_var_p;
      }
    }
    term.total = cfg.alpha * term.recon + cfg.beta * term.kl + cfg.gamma * term.ce;
    t.mean.total += term.total * inv_b;
    t.mean.recon += term.recon * inv_b;
    t.mean.kl += term.kl * inv_b;
    t.mean.ce += term.ce * inv_b;
  }
  if (!std::isfinite(t.mean.total)) {
    throw Error("non_finite", "non-finite loss (recon=" + std::to_string(t.mean.recon) + ", kl=" +
                                  std::to_string(t.mean.kl) + ", ce=" + std::to_string(t.mean.ce) + ")");
  }
  if (!backward) return t;

  // Backward: classifier.
  const Matrix d_cls_in = nn::mlp_backward(store, m.classifier, cls_tape, d_logits);
  Matrix d_feat = Matrix::Zero(F, B * (nv + 1));
  d_feat.leftCols(B) += d_cls_in.topRows(F);
  Matrix d_dec_feat = d_cls_in.middleRows(F, cfg.decoder_hidden);
  nn::linear_backward(store, m.action_embed, batch.prev, d_cls_in.bottomRows(cfg.action_feature));

  // Reconstruction through the sigmoid head.
  const Matrix d_x_hat = cfg.alpha * inv_b * (t.x_hat - batch.next_front);
  const Matrix d_out_pre = nn::activate_backward(Activation::Sigmoid, t.x_hat, d_x_hat);
  d_dec_feat += nn::linear_backward(store, m.decoder_out, t.decoder_feature, d_out_pre);
  const Matrix d_z = nn::mlp_backward(store, m.decoder, dec_tape, d_dec_feat);

  // Reparameterization.
  d_mu += d_z;
  if (cfg.variant != Variant::NoGen)
    d_log_var += (d_z.array() * 0.5 * (0.5 * t.log_var.array()).exp() * eps.array()).matrix();

  Matrix d_h = nn::linear_backward(store, m.mu_head, h, d_mu);
  d_h += nn::linear_backward(store, m.log_var_head, h, d_log_var);
  const Matrix d_inf_in = nn::mlp_backward(store, m.inference, inf_tape, d_h);
  for (int i = 0; i <= nv; ++i) d_feat.middleCols(B * i, B) += d_inf_in.middleRows(F * i, F);

  if (cfg.uses_learned_prior()) {
    Matrix d_prior_h = nn::linear_backward(store, m.prior_mu, prior_h, d_prior_mu);
    d_prior_h += nn::linear_backward(store, m.prior_log_var, prior_h, d_prior_log_var);
    const Matrix d_prior_in = nn::mlp_backward(store, m.prior, prior_tape, d_prior_h);
    d_feat.leftCols(B) += d_prior_in.topRows(F);
  }

  nn::mlp_backward(store, m.encoder, enc_tape, d_feat);
  return t;
}

/// Batched test-time logits (posterior mean, no scan head); column b
/// matches act() on sample b up to floating-point summation order.
inline nn::Matrix policy_logits_batch(const NeoNavParams& m, const Batch& batch) {
  const ModelConfig& cfg = m.config();
  const auto& store = m.store();
  const nn::Index B = batch.size();
  const nn::Index F = cfg.feature;
  const int nv = cfg.consumed_views();
  nn::Matrix enc_in(cfg.rays, B * (nv + 1));
  for (int i = 0; i < nv; ++i) enc_in.middleCols(B * i, B) = batch.views[static_cast<std::size_t>(i)];
  enc_in.middleCols(B * nv, B) = batch.goal;
  const nn::Matrix feat = nn::mlp_forward(store, m.encoder, enc_in);
  nn::Matrix inf_in(F * (nv + 1), B);
  for (int i = 0; i <= nv; ++i) inf_in.middleRows(F * i, F) = feat.middleCols(B * i, B);
  const nn::Matrix mu = nn::linear_forward(store, m.mu_head, nn::mlp_forward(store, m.inference, inf_in));
  nn::Matrix cls_in(F + cfg.decoder_hidden + cfg.action_feature, B);
  cls_in.topRows(F) = feat.leftCols(B);
  cls_in.middleRows(F, cfg.decoder_hidden) = nn::mlp_forward(store, m.decoder, mu);
  cls_in.bottomRows(cfg.action_feature) = nn::linear_forward(store, m.action_embed, batch.prev);
  return nn::mlp_forward(store, m.classifier, cls_in);
}

/// Single-sample objective; returns the total and the forward trace.
inline std::pair<double, ForwardTrace> loss(NeoNavParams& m, const Sample& sample, CounterRng& rng,
                                            bool backward = true) {
  const Sample* one[] = {&sample};
  const auto batch = make_batch(one, m.config().azimuths, m.config().rays);
  const auto t = loss_batch(m, batch, rng, backward);
  return {t.mean.total, trace_column(t, 0)};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
};

inline void save_model(const std::filesystem::path& dir, const NeoNavParams& m, const CheckpointMeta& meta) {
  nn::save_checkpoint(dir, m.store(),
                      {{"model", m.config().to_json()},
                       {"config_hash", meta.config_hash},
                       {"dataset_hash", meta.dataset_hash},
                       {"seed", meta.seed},
                       {"steps", meta.steps}});
}

/// Rebuilds the model from the manifest's embedded configuration and
/// restores every parameter.
inline std::pair<NeoNavParams, CheckpointMeta> load_model(const std::filesystem::path& dir) {
  const Json doc = io::read_json(dir / "manifest.json");
  if (!doc.contains("meta")) throw Error("schema", "checkpoint manifest lacks metadata");
  const Json& meta = doc.at("meta");
  NeoNavParams m(ModelConfig::from_json(meta.at("model")));
  nn::load_checkpoint(dir, m.store());
  CheckpointMeta out;
  out.config_hash = io::field<std::string>(meta, "config_hash");
  out.dataset_hash = io::field<std::string>(meta, "dataset_hash");
  out.seed = io::field<std::uint64_t>(meta, "seed");
  out.steps = io::field<std::uint64_t>(meta, "steps");
  return {std::move(m), out};
}

}  // namespace neonav

#endif  // NEONAV_MODEL_HPP
