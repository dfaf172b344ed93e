#ifndef NEONAV_NN_HPP
#define NEONAV_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neonav/io.hpp"
#include "neonav/rng.hpp"

namespace neonav::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dense float64 tensor. Storage is column-major so a rank-2 tensor maps
/// directly onto an Eigen matrix; rank-1 tensors map to a column.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>()), 0.0) {}

  [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] Index rows() const noexcept { return shape_.empty() ? 1 : static_cast<Index>(shape_[0]); }
  [[nodiscard]] Index cols() const noexcept {
    return shape_.size() < 2 ? 1 : static_cast<Index>(size() / shape_[0]);
  }
  [[nodiscard]] Eigen::Map<Matrix> matrix() noexcept { return {data_.data(), rows(), cols()}; }
  [[nodiscard]] Eigen::Map<const Matrix> matrix() const noexcept { return {data_.data(), rows(), cols()}; }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }
  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Named parameters, each paired with a same-shape gradient buffer.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed, 0x696E6974ULL) {}

  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    if (find(name)) throw Error("schema", "duplicate parameter name " + name);
    Tensor value(shape);
    Tensor grad(std::move(shape));
    entries_.push_back({std::move(name), std::move(value), std::move(grad)});
    return entries_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  [[nodiscard]] Tensor& value(std::size_t i) { return entries_.at(i).value; }
  [[nodiscard]] const Tensor& value(std::size_t i) const { return entries_.at(i).value; }
  [[nodiscard]] Tensor& grad(std::size_t i) { return entries_.at(i).grad; }
  [[nodiscard]] const Tensor& grad(std::size_t i) const { return entries_.at(i).grad; }

  [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return std::nullopt;
  }

  [[nodiscard]] std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() noexcept {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  [[nodiscard]] CounterRng& rng() noexcept { return rng_; }

  /// Values only; gradients and RNG state are not compared.
  [[nodiscard]] bool same_values(const ParamStore& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value))
        return false;
    return true;
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
  CounterRng rng_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

enum class Init { KaimingUniform, Zero };
enum class Activation { Identity, Relu, Tanh, Sigmoid };

/// y = W x + b over column batches. Holds parameter indices, not storage,
/// so a copied ParamStore keeps working with the same layer descriptors.
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Index in = 0;
  Index out = 0;
};

inline Linear add_linear(ParamStore& store, const std::string& name, Index in, Index out, Init init) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)});
  l.bias = store.add(name + ".bias", {static_cast<std::size_t>(out)});
  if (init == Init::KaimingUniform) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (auto& w : store.value(l.weight).data()) w = (2.0 * store.rng().uniform() - 1.0) * bound;
  }
  return l;
}

inline Matrix linear_forward(const ParamStore& store, const Linear& l, const Matrix& x) {
  if (x.rows() != l.in) throw Error("shape", "linear input has wrong feature count");
  Matrix y = store.value(l.weight).matrix() * x;
  y.colwise() += store.value(l.bias).matrix().col(0);
  return y;
}

/// Accumulates dW, db and returns dx.
inline Matrix linear_backward(ParamStore& store, const Linear& l, const Matrix& x, const Matrix& dy) {
  if (dy.rows() != l.out || dy.cols() != x.cols()) throw Error("shape", "linear gradient has wrong shape");
  store.grad(l.weight).matrix().noalias() += dy * x.transpose();
  store.grad(l.bias).matrix().col(0) += dy.rowwise().sum();
  return store.value(l.weight).matrix().transpose() * dy;
}

inline Matrix activate(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::Identity: return pre;
    case Activation::Relu: return pre.cwiseMax(0.0);
    case Activation::Tanh: return pre.array().tanh().matrix();
    case Activation::Sigmoid: return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
  }
  return pre;
}

/// Backward through an activation, expressed with its output.
inline Matrix activate_backward(Activation a, const Matrix& post, const Matrix& dy) {
  switch (a) {
    case Activation::Identity: return dy;
    case Activation::Relu: return (post.array() > 0.0).select(dy, 0.0);
    case Activation::Tanh: return (dy.array() * (1.0 - post.array().square())).matrix();
    case Activation::Sigmoid: return (dy.array() * post.array() * (1.0 - post.array())).matrix();
  }
  return dy;
}

inline Matrix relu(const Matrix& x) { return activate(Activation::Relu, x); }
inline Matrix relu_backward(const Matrix& y, const Matrix& dy) { return activate_backward(Activation::Relu, y, dy); }
inline Matrix tanh(const Matrix& x) { return activate(Activation::Tanh, x); }
inline Matrix tanh_backward(const Matrix& y, const Matrix& dy) { return activate_backward(Activation::Tanh, y, dy); }

struct Mlp {
  std::vector<Linear> layers;
  Activation hidden = Activation::Relu;
  Activation output = Activation::Identity;

  [[nodiscard]] Index in() const { return layers.front().in; }
  [[nodiscard]] Index out() const { return layers.back().out; }
};

/// sizes = {in, h1, ..., out}. Hidden layers use Kaiming-uniform; the last
/// layer uses `last_init`.
inline Mlp add_mlp(ParamStore& store, const std::string& name, const std::vector<Index>& sizes, Activation hidden,
                   Activation output, Init last_init) {
  if (sizes.size() < 2) throw Error("shape", "mlp needs at least input and output sizes");
  Mlp m;
  m.hidden = hidden;
  m.output = output;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    m.layers.push_back(add_linear(store, name + ".l" + std::to_string(i), sizes[i], sizes[i + 1],
                                  last ? last_init : Init::KaimingUniform));
  }
  return m;
}

/// Per-layer inputs and activated outputs kept for the backward pass.
struct MlpTape {
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;
};

inline Matrix mlp_forward(const ParamStore& store, const Mlp& m, const Matrix& x, MlpTape* tape = nullptr) {
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const bool last = i + 1 == m.layers.size();
    Matrix y = activate(last ? m.output : m.hidden, linear_forward(store, m.layers[i], h));
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->outputs.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

inline Matrix mlp_backward(ParamStore& store, const Mlp& m, const MlpTape& tape, const Matrix& dy) {
  Matrix g = dy;
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    const bool last = i + 1 == m.layers.size();
    g = activate_backward(last ? m.output : m.hidden, tape.outputs[i], g);
    g = linear_backward(store, m.layers[i], tape.inputs[i], g);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Losses and Gaussians
// ---------------------------------------------------------------------------

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// -log softmax(logits)[label], with d/dlogits = softmax - one_hot(label).
inline LossGrad softmax_cross_entropy(const Vector& logits, Index label) {
  if (label < 0 || label >= logits.size()) throw Error("shape", "label out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  LossGrad out;
  out.loss = lse - logits(label);
  out.grad = (logits.array() - lse).exp().matrix();
  out.grad(label) -= 1.0;
  return out;
}

/// Diagonal Gaussian parameterized by mean and log-variance.
struct DiagGaussian {
  Vector mu;
  Vector log_var;

  static DiagGaussian standard(Index d) { return {Vector::Zero(d), Vector::Zero(d)}; }
  [[nodiscard]] Index dim() const noexcept { return mu.size(); }
};

struct KlGrad {
  double value = 0.0;
  Vector d_mu_q, d_log_var_q, d_mu_p, d_log_var_p;
};

/// KL(q || p) summed over dimensions, with gradients for both arguments.
inline KlGrad kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim()) throw Error("shape", "KL between Gaussians of different dimension");
  const auto var_q = q.log_var.array().exp();
  const auto inv_var_p = (-p.log_var.array()).exp();
  const auto diff = (q.mu - p.mu).array();
  KlGrad out;
  out.value = (0.5 * (p.log_var - q.log_var).array() + 0.5 * (var_q + diff.square()) * inv_var_p - 0.5).sum();
  out.d_mu_q = (diff * inv_var_p).matrix();
  out.d_mu_p = -out.d_mu_q;
  out.d_log_var_q = (0.5 * var_q * inv_var_p - 0.5).matrix();
  out.d_log_var_p = (0.5 - 0.5 * (var_q + diff.square()) * inv_var_p).matrix();
  return out;
}

/// z = mu + exp(log_var / 2) * eps.
inline Vector reparam_with_noise(const DiagGaussian& q, const Vector& eps) {
  return q.mu + ((0.5 * q.log_var.array()).exp() * eps.array()).matrix();
}

inline Vector standard_normal(Index d, CounterRng& rng) {
  Vector eps(d);
  for (Index i = 0; i < d; ++i) eps(i) = rng.normal();
  return eps;
}

inline Vector reparam_sample(const DiagGaussian& q, CounterRng& rng) {
  return reparam_with_noise(q, standard_normal(q.dim(), rng));
}

/// Chain rule through the reparameterization: returns (dmu, dlog_var).
inline std::pair<Vector, Vector> reparam_backward(const DiagGaussian& q, const Vector& eps, const Vector& dz) {
  return {dz, (dz.array() * 0.5 * (0.5 * q.log_var.array()).exp() * eps.array()).matrix()};
}

// ---------------------------------------------------------------------------
// Optimization and verification
// ---------------------------------------------------------------------------

/// theta -= lr * grad for every parameter, then zero the gradients.
inline void sgd_step(ParamStore& store, double lr) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto v = store.value(i).data();
    auto g = store.grad(i).data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * g[j];
  }
  store.zero_grad();
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_abs_analytic = 0.0;
};

/// Central-difference check. `loss_fn` must return the loss and accumulate
/// its analytic gradient into the store; it is called with fresh zeroed
/// gradients each time and must be deterministic (freeze any noise).
/// Relative error is |a - n| / max(|a|, |n|, abs_floor). When
/// `max_coords` is nonzero and smaller than the parameter count, a seeded
/// uniform subsample of coordinates is checked.
inline GradCheckReport grad_check(const std::function<double(ParamStore&)>& loss_fn, ParamStore& store,
                                  double epsilon = 1e-5, std::size_t max_coords = 0, std::uint64_t seed = 0,
                                  double abs_floor = 1e-7) {
  store.zero_grad();
  loss_fn(store);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < store.size(); ++p)
    for (std::size_t j = 0; j < store.value(p).size(); ++j) coords.emplace_back(p, j);
  if (max_coords != 0 && max_coords < coords.size()) {
    CounterRng rng(seed, 0x67636B);
    for (std::size_t i = 0; i < max_coords; ++i) {
      const auto pick = i + static_cast<std::size_t>(rng.below(coords.size() - i));
      std::swap(coords[i], coords[pick]);
    }
    coords.resize(max_coords);
  }
  std::vector<double> analytic(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) analytic[i] = store.grad(coords[i].first)[coords[i].second];

  GradCheckReport report;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    auto [p, j] = coords[i];
    double& theta = store.value(p)[j];
    const double saved = theta;
    theta = saved + epsilon;
    store.zero_grad();
    const double up = loss_fn(store);
    theta = saved - epsilon;
    store.zero_grad();
    const double down = loss_fn(store);
    theta = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
    report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(a));
    if (i == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = store.name(p);
      report.worst_index = j;
      report.analytic = a;
      report.numeric = numeric;
    }
    ++report.coords_checked;
  }
  store.zero_grad();
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

/// Directory layout: manifest.json (names, shapes, blob file names and
/// caller metadata) plus one raw little-endian float64 blob per parameter.
inline void save_checkpoint(const std::filesystem::path& dir, const ParamStore& store, const Json& meta) {
  std::filesystem::create_directories(dir);
  Json params = Json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "p%03zu_", i);
    const std::string file = prefix + store.name(i) + ".f64";
    std::string blob;
    blob.reserve(store.value(i).size() * 8);
    for (double v : store.value(i).data()) io::put_le<double>(blob, v);
    io::write_file(dir / file, blob);
    params.push_back({{"name", store.name(i)}, {"shape", store.value(i).shape()}, {"file", file}});
  }
  io::write_json(dir / "manifest.json", {{"version", kCheckpointFormatVersion}, {"params", params}, {"meta", meta}});
}

/// Restores values into a store with the same layout; returns the metadata.
inline Json load_checkpoint(const std::filesystem::path& dir, ParamStore& store) {
  const Json doc = io::read_json(dir / "manifest.json");
  if (io::field<int>(doc, "version") != kCheckpointFormatVersion)
    throw Error("schema", "unsupported checkpoint version");
  const auto& params = doc.at("params");
  if (!params.is_array() || params.size() != store.size())
    throw Error("schema", "checkpoint parameter count does not match model");
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto name = io::field<std::string>(params[i], "name");
    const auto shape = io::field<std::vector<std::size_t>>(params[i], "shape");
    if (name != store.name(i) || shape != store.value(i).shape())
      throw Error("schema", "checkpoint parameter " + name + " does not match model layout");
    const std::string blob = io::read_file(dir / io::field<std::string>(params[i], "file"));
    if (blob.size() != store.value(i).size() * 8) throw Error("schema", "checkpoint blob size mismatch for " + name);
    io::Reader in(blob);
    for (auto& v : store.value(i).data()) v = in.get<double>();
  }
  store.zero_grad();
  return doc.contains("meta") ? doc.at("meta") : Json::object();
}

}  // namespace neonav::nn

#endif  // NEONAV_NN_HPP
