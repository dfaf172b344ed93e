#ifndef NEONAV_CONFIG_HPP
#define NEONAV_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "neonav/evalharness.hpp"
#include "neonav/expert.hpp"
#include "neonav/io.hpp"
#include "neonav/model.hpp"
#include "neonav/sensor.hpp"
#include "neonav/trainer.hpp"

namespace neonav {

/// Run configuration: a plain-text `key = value` file. '#' starts a
/// comment. Every key has a default; unknown keys and malformed values are
/// rejected. Values are normalized before hashing, so "0.50" and "0.5"
/// produce the same hash.
class RunConfig {
 public:
  enum class Kind { Int, UInt, Real, Bool, Text, UIntList };

  struct Field {
    std::string_view key;
    Kind kind;
    std::string_view fallback;
    std::string_view help;
  };

  // clang-format off
  static constexpr Field kFields[] = {
      {"seed",                     Kind::UInt,     "0",     "master seed for every derived stream"},
      {"scene.width",              Kind::Int,      "12",    "grid width in cells"},
      {"scene.height",             Kind::Int,      "12",    "grid height in cells"},
      {"scene.density",            Kind::Real,     "0.1",   "interior obstacle density in [0, 1)"},
      {"scene.cell_size_m",        Kind::Real,     "0.5",   "meters per cell"},
      {"scene.train_count",        Kind::Int,      "20",    "number of training scenes"},
      {"scene.test_count",         Kind::Int,      "10",    "number of held-out scenes"},
      {"sensor.azimuths",          Kind::Int,      "4",     "views per location (K)"},
      {"sensor.rays",              Kind::Int,      "32",    "rays per view (W)"},
      {"sensor.max_range_cells",   Kind::Real,     "8",     "clipping range in cells"},
      {"dataset.targets_per_scene",Kind::Int,      "15",    "goal poses per training scene"},
      {"dataset.starts_per_target",Kind::Int,      "8",     "expert trajectories per goal"},
      {"model.variant",            Kind::Text,     "full",  "full | nogen | nomop | frontview"},
      {"model.latent",             Kind::Int,      "16",    "latent dimension"},
      {"model.encoder_hidden",     Kind::Int,      "64",    "scan encoder hidden width"},
      {"model.feature",            Kind::Int,      "64",    "scan feature width"},
      {"model.inference_hidden",   Kind::Int,      "128",   "posterior network width"},
      {"model.prior_hidden",       Kind::Int,      "64",    "prior network width"},
      {"model.decoder_hidden",     Kind::Int,      "64",    "decoder width (decoder feature size)"},
      {"model.action_feature",     Kind::Int,      "32",    "previous-action embedding width"},
      {"model.classifier_hidden",  Kind::Int,      "128",   "action classifier width"},
      {"model.alpha",              Kind::Real,     "0.01",  "reconstruction weight"},
      {"model.beta",               Kind::Real,     "0.0001","KL weight"},
      {"model.gamma",              Kind::Real,     "1",     "cross-entropy weight"},
      {"model.sample_at_test",     Kind::Bool,     "false", "sample the latent at test time instead of the mean"},
      {"train.batch_size",         Kind::Int,      "64",    "minibatch size"},
      {"train.lr",                 Kind::Real,     "0.0001","SGD learning rate"},
      {"train.steps",              Kind::Int,      "1000",  "SGD steps"},
      {"train.log_every",          Kind::Int,      "100",   "log interval in steps"},
      {"train.eval_every",         Kind::Int,      "0",     "intermediate checkpoint interval (0 = off)"},
      {"eval.use_stop",            Kind::Bool,     "false", "strict criterion: success only on an explicit stop"},
      {"eval.max_steps",           Kind::Int,      "100",   "step limit per episode"},
      {"eval.goal_radius_m",       Kind::Real,     "1",     "success distance (strict <)"},
      {"eval.goal_angle_deg",      Kind::Real,     "90",    "success heading gap (strict <)"},
      {"eval.episodes",            Kind::Int,      "500",   "evaluation tasks per seed"},
      {"eval.seeds",               Kind::UIntList, "0",     "comma-separated evaluation seeds"},
      {"eval.ratio_lo",            Kind::Real,     "1",     "path/Euclidean ratio band, low end"},
      {"eval.ratio_hi",            Kind::Real,     "1.1",   "path/Euclidean ratio band, high end"},
      {"eval.band_fraction",       Kind::Real,     "0.15",  "minimum fraction of tasks inside the band"},
  };
  // clang-format on

  RunConfig() {
    for (const auto& f : kFields) values_[std::string(f.key)] = normalize(f, f.fallback);
  }

  static RunConfig parse(std::string_view text, std::string_view origin = "<config>") {
    RunConfig cfg;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos)
        throw Error("schema", std::string(origin) + ":" + std::to_string(line_no) + ": expected key = value");
      cfg.set(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))), origin, line_no);
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return parse(io::read_file(path), path.string());
  }

  void set(const std::string& key, const std::string& value, std::string_view origin = "<override>",
           std::size_t line_no = 0) {
    const Field* f = find(key);
    if (!f) {
      throw Error("schema", std::string(origin) + (line_no ? ":" + std::to_string(line_no) : "") +
                                ": unknown key '" + key + "'");
    }
    values_[key] = normalize(*f, value);
  }

  /// Canonical text: every key, sorted, normalized values.
  [[nodiscard]] std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  [[nodiscard]] std::string hash() const { return hex64(fnv1a64(canonical())); }

  /// Hash over everything that determines the dataset: scenes, sensor,
  /// dataset sampling, the goal predicate and the seed.
  [[nodiscard]] std::string dataset_hash() const {
    std::string out;
    for (const auto& [k, v] : values_)
      if (k == "seed" || k.starts_with("scene.") || k.starts_with("sensor.") || k.starts_with("dataset.") ||
          k == "eval.goal_radius_m" || k == "eval.goal_angle_deg")
        out += k + "=" + v + "\n";
    return hex64(fnv1a64(out));
  }

  [[nodiscard]] const std::string& raw(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) throw Error("schema", "unknown key '" + std::string(key) + "'");
    return it->second;
  }

  [[nodiscard]] std::int64_t integer(std::string_view key) const { return std::stoll(raw(key)); }
  [[nodiscard]] std::uint64_t uinteger(std::string_view key) const { return std::stoull(raw(key)); }
  [[nodiscard]] double real(std::string_view key) const { return std::stod(raw(key)); }
  [[nodiscard]] bool boolean(std::string_view key) const { return raw(key) == "true"; }
  [[nodiscard]] std::vector<std::uint64_t> uint_list(std::string_view key) const {
    std::vector<std::uint64_t> out;
    std::string_view s = raw(key);
    while (!s.empty()) {
      const auto comma = s.find(',');
      out.push_back(std::stoull(std::string(s.substr(0, comma))));
      s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
    }
    return out;
  }

  // Typed views -------------------------------------------------------------

  [[nodiscard]] SensorConfig sensor() const {
    SensorConfig s;
    s.azimuths = static_cast<int>(integer("sensor.azimuths"));
    s.rays = static_cast<int>(integer("sensor.rays"));
    s.max_range_cells = real("sensor.max_range_cells");
    if (s.azimuths < 1 || s.rays < 1 || !(s.max_range_cells > 0)) throw Error("config", "invalid sensor settings");
    return s;
  }

  [[nodiscard]] GoalSpec goal() const { return {real("eval.goal_radius_m"), real("eval.goal_angle_deg")}; }

  [[nodiscard]] TaskSampling task_sampling() const {
    TaskSampling t;
    t.ratio_lo = real("eval.ratio_lo");
    t.ratio_hi = real("eval.ratio_hi");
    t.band_fraction = real("eval.band_fraction");
    t.goal = goal();
    t.azimuths = sensor().azimuths;
    return t;
  }

  [[nodiscard]] ModelConfig model() const {
    ModelConfig m;
    m.latent = static_cast<int>(integer("model.latent"));
    m.azimuths = sensor().azimuths;
    m.rays = sensor().rays;
    m.encoder_hidden = static_cast<int>(integer("model.encoder_hidden"));
    m.feature = static_cast<int>(integer("model.feature"));
    m.inference_hidden = static_cast<int>(integer("model.inference_hidden"));
    m.prior_hidden = static_cast<int>(integer("model.prior_hidden"));
    m.decoder_hidden = static_cast<int>(integer("model.decoder_hidden"));
    m.action_feature = static_cast<int>(integer("model.action_feature"));
    m.classifier_hidden = static_cast<int>(integer("model.classifier_hidden"));
    m.alpha = real("model.alpha");
    m.beta = real("model.beta");
    m.gamma = real("model.gamma");
    m.variant = parse_variant(raw("model.variant"));
    m.sample_at_test = boolean("model.sample_at_test");
    m.validate();
    return m;
  }

  [[nodiscard]] TrainConfig train() const {
    TrainConfig t;
    t.batch_size = static_cast<std::size_t>(integer("train.batch_size"));
    t.lr = real("train.lr");
    t.steps = static_cast<std::size_t>(integer("train.steps"));
    t.log_every = static_cast<std::size_t>(integer("train.log_every"));
    t.eval_every = static_cast<std::size_t>(integer("train.eval_every"));
    t.seed = derive_seed("train");
    t.validate();
    return t;
  }

  [[nodiscard]] EvalConfig eval() const {
    EvalConfig e;
    e.use_stop = boolean("eval.use_stop");
    e.max_steps = static_cast<int>(integer("eval.max_steps"));
    e.goal = goal();
    e.seeds = uint_list("eval.seeds");
    e.validate();
    return e;
  }

  /// Independent stream seeds derived from the master seed and a tag.
  [[nodiscard]] std::uint64_t derive_seed(std::string_view tag, std::uint64_t index = 0) const {
    return splitmix64_mix(fnv1a64(tag) ^ splitmix64_mix(uinteger("seed") + 0x9E3779B97F4A7C15ULL * (index + 1)));
  }

  static std::string describe() {
    std::ostringstream os;
    for (const auto& f : kFields) os << f.key << " = " << f.fallback << "    # " << f.help << "\n";
    return os.str();
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  static const Field* find(std::string_view key) {
    for (const auto& f : kFields)
      if (f.key == key) return &f;
    return nullptr;
  }

  template <typename T>
  static T parse_number(const Field& f, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      throw Error("schema", "bad value '" + std::string(v) + "' for " + std::string(f.key));
    return out;
  }

  static std::string normalize(const Field& f, std::string_view v) {
    switch (f.kind) {
      case Kind::Int: return std::to_string(parse_number<std::int64_t>(f, v));
      case Kind::UInt: return std::to_string(parse_number<std::uint64_t>(f, v));
      case Kind::Real: {
        const double d = parse_number<double>(f, v);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", d);
        return buf;
      }
      case Kind::Bool:
        if (v == "true" || v == "1") return "true";
        if (v == "false" || v == "0") return "false";
        throw Error("schema", "bad boolean '" + std::string(v) + "' for " + std::string(f.key));
      case Kind::Text:
        if (v.empty()) throw Error("schema", "empty value for " + std::string(f.key));
        return std::string(v);
      case Kind::UIntList: {
        std::string out;
        std::string_view s = v;
        while (true) {
          const auto comma = s.find(',');
          const auto item = trim(s.substr(0, comma));
          if (!out.empty()) out += ',';
          out += std::to_string(parse_number<std::uint64_t>(f, item));
          if (comma == std::string_view::npos) break;
          s = s.substr(comma + 1);
        }
        return out;
      }
    }
    return std::string(v);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace neonav

#endif  // NEONAV_CONFIG_HPP
