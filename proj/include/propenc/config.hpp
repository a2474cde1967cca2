#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "propenc/binio.hpp"
#include "propenc/encoder.hpp"
#include "propenc/errors.hpp"
#include "propenc/trainer.hpp"

namespace propenc {

// Every tunable of the pipeline in one place. Serialized canonically so a
// single hash identifies the configuration in every artifact's metadata.
struct RunConfig {
  // encoder
  std::uint32_t d_model = 64;
  std::uint32_t n_heads = 2;
  std::uint32_t n_layers = 2;
  std::uint32_t ffn_mult = 4;
  std::uint32_t max_len = 64;
  std::uint32_t d_out = 64;
  std::string pooling = "mask_pooling_only";
  std::uint32_t min_count = 1;
  // alignment
  int window = 3;
  double align_eps = 0.1;
  // pairing
  std::string oracle = "lexical";
  double oracle_threshold = 0.8;
  bool require_positive = true;
  // training
  double lr = 1e-4;
  std::uint32_t epochs = 10;
  std::uint32_t batch_size_sentences = 8;
  double temperature = 0.01;
  double weight_decay = 0.01;
  double val_fraction = 0.1;
  std::uint64_t seed = 42;
  std::uint32_t workers = 1;
  // retrieval
  std::uint32_t over_retrieval = 5;

  EncoderConfig encoder_config(std::uint32_t vocab_size) const {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    c.d_model = d_model;
    c.n_heads = n_heads;
    c.n_layers = n_layers;
    c.ffn_mult = ffn_mult;
    c.max_len = max_len;
    c.d_out = d_out;
    c.pooling = pooling_from_string(pooling);
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.learning_rate = lr;
    c.epochs = epochs;
    c.batch_size_sentences = batch_size_sentences;
    c.temperature = temperature;
    c.weight_decay = weight_decay;
    c.val_fraction = val_fraction;
    c.seed = seed;
    c.workers = workers;
    return c;
  }

  template <typename F>
  void visit_fields(F&& fn) {
    fn("d_model", d_model);
    fn("n_heads", n_heads);
    fn("n_layers", n_layers);
    fn("ffn_mult", ffn_mult);
    fn("max_len", max_len);
    fn("d_out", d_out);
    fn("pooling", pooling);
    fn("min_count", min_count);
    fn("window", window);
    fn("align_eps", align_eps);
    fn("oracle", oracle);
    fn("oracle_threshold", oracle_threshold);
    fn("require_positive", require_positive);
    fn("lr", lr);
    fn("epochs", epochs);
    fn("batch_size_sentences", batch_size_sentences);
    fn("temperature", temperature);
    fn("weight_decay", weight_decay);
    fn("val_fraction", val_fraction);
    fn("seed", seed);
    fn("workers", workers);
    fn("over_retrieval", over_retrieval);
  }

  // Canonical "key = value" rendering, one field per line in declaration
  // order. Doubles print with max_digits10 so the hash sees full precision.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    const_cast<RunConfig*>(this)->visit_fields(
        [&](const char* name, auto& value) {
          using T = std::decay_t<decltype(value)>;
          os << name << " = ";
          if constexpr (std::is_same_v<T, bool>)
            os << (value ? "true" : "false");
          else
            os << value;
          os << '\n';
        });
    return os.str();
  }

  std::string hash() const {
    std::ostringstream os;
    os << std::hex << fnv1a(canonical());
    return os.str();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
inline void parse_value(const std::string& key, const std::string& raw, T& out) {
  using D = std::decay_t<T>;
  if constexpr (std::is_same_v<D, std::string>) {
    out = raw;
  } else if constexpr (std::is_same_v<D, bool>) {
    if (raw == "true" || raw == "1") out = true;
    else if (raw == "false" || raw == "0") out = false;
    else throw DataError("config: boolean expected for " + key);
  } else {
    std::istringstream is(raw);
    D v{};
    is >> v;
    if (is.fail() || !is.eof())
      throw DataError("config: cannot parse value for " + key + ": " + raw);
    out = v;
  }
}

}  // namespace detail

// Apply one "key" / "value" pair; unknown keys are an error.
inline void set_config_field(RunConfig& cfg, const std::string& key,
                             const std::string& value) {
  bool found = false;
  cfg.visit_fields([&](const char* name, auto& field) {
    if (key == name) {
      detail::parse_value(key, value, field);
      found = true;
    }
  });
  if (!found) throw DataError("config: unknown key: " + key);
}

// Plain-text config: one "key = value" per line, '#' starts a comment.
inline RunConfig load_config_file(const std::string& path,
                                  RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    try {
      set_config_field(base, key, value);
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

// PROPENC_SEED wins over both the config file and any CLI flag.
inline void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("PROPENC_SEED")) {
    detail::parse_value("PROPENC_SEED", s, cfg.seed);
  }
}

}  // namespace propenc
