#ifndef PEMI_CONFIG_HPP
#define PEMI_CONFIG_HPP

// Flat key=value run configuration. '#' starts a comment; blank lines are
// ignored; unknown keys are errors. Relative paths resolve against the
// directory holding the config file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pemi/data.hpp"
#include "pemi/encoder.hpp"
#include "pemi/errors.hpp"
#include "pemi/hlr.hpp"
#include "pemi/prompt_template.hpp"
#include "pemi/train.hpp"

namespace pemi {

struct RunPaths {
  std::string hierarchy, train, dev, test, out;
};

struct RunConfig {
  std::string layout{kDefaultLayout};
  EncoderConfig encoder;  // vocab_size comes from the training data
  TrainConfig train;
  Normalization normalization = Normalization::kSoftmax;
  bool warm_start = true;
  std::size_t vocab_min_count = 1;
  RunPaths paths;
  std::size_t synth_n_per_bottom = 200;
  std::size_t synth_vocab_size = 200;
  std::uint64_t synth_seed = 7;
  SyntheticOptions synth;

  // Value of a paths.* key, or a ConfigError naming it.
  const std::string& require_path(const std::string& key) const {
    const std::string* v = key == "paths.hierarchy" ? &paths.hierarchy
                           : key == "paths.train"   ? &paths.train
                           : key == "paths.dev"     ? &paths.dev
                           : key == "paths.test"    ? &paths.test
                           : key == "paths.out"     ? &paths.out
                                                    : nullptr;
    if (v == nullptr) throw ConfigError("unknown path key " + key);
    if (v->empty()) throw ConfigError("config key " + key + " is not set");
    return *v;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !in.eof() || (std::is_unsigned_v<T> && text.find('-') != std::string::npos)) {
    throw ConfigError("config key " + key + ": cannot parse '" + text + "'");
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + text + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {},
                                  const std::string& source = "<config>") {
  RunConfig c;
  auto path_value = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return (p.is_relative() && !base_dir.empty() ? base_dir / p : p).lexically_normal().string();
  };
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size = [](std::size_t& dst) { return Setter([&dst](auto& k, auto& v) { dst = detail::parse_number<std::size_t>(k, v); }); };
  auto u64 = [](std::uint64_t& dst) { return Setter([&dst](auto& k, auto& v) { dst = detail::parse_number<std::uint64_t>(k, v); }); };
  auto real = [](double& dst) { return Setter([&dst](auto& k, auto& v) { dst = detail::parse_number<double>(k, v); }); };
  auto path = [&](std::string& dst) { return Setter([&dst, path_value](auto&, auto& v) { dst = path_value(v); }); };
  const std::map<std::string, Setter> setters{
      {"layout", [&](auto&, auto& v) { c.layout = v; }},
      {"encoder.d_model", size(c.encoder.d_model)},
      {"encoder.n_layers", size(c.encoder.n_layers)},
      {"encoder.n_heads", size(c.encoder.n_heads)},
      {"encoder.d_ff", size(c.encoder.d_ff)},
      {"encoder.max_seq_len", size(c.encoder.max_seq_len)},
      {"encoder.seed", u64(c.encoder.seed)},
      {"encoder.prompt_positions", [&](auto& k, auto& v) { c.encoder.prompt_positions = detail::parse_bool(k, v); }},
      {"encoder.init_std", real(c.encoder.init_std)},
      {"train.lr", real(c.train.lr)},
      {"train.batch", size(c.train.batch_size)},
      {"train.max_epochs", size(c.train.max_epochs)},
      {"train.eval_step", size(c.train.eval_step)},
      {"train.max_steps", size(c.train.max_steps)},
      {"train.seed", u64(c.train.seed)},
      {"train.lambdas",
       [&](auto& k, auto& v) {
         c.train.lambdas.clear();
         std::istringstream items(v);
         std::string item;
         while (std::getline(items, item, ',')) c.train.lambdas.push_back(detail::parse_number<double>(k, detail::trim(item)));
       }},
      {"hlr.normalization", [&](auto&, auto& v) { c.normalization = parse_normalization(v); }},
      {"hlr.warm_start", [&](auto& k, auto& v) { c.warm_start = detail::parse_bool(k, v); }},
      {"vocab.min_count", size(c.vocab_min_count)},
      {"paths.hierarchy", path(c.paths.hierarchy)},
      {"paths.train", path(c.paths.train)},
      {"paths.dev", path(c.paths.dev)},
      {"paths.test", path(c.paths.test)},
      {"paths.out", path(c.paths.out)},
      {"synth.n_per_bottom", size(c.synth_n_per_bottom)},
      {"synth.vocab_size", size(c.synth_vocab_size)},
      {"synth.seed", u64(c.synth_seed)},
      {"synth.signature_size", size(c.synth.signature_size)},
      {"synth.signature_per_arg", size(c.synth.signature_per_arg)},
      {"synth.min_filler", size(c.synth.min_filler)},
      {"synth.max_filler", size(c.synth.max_filler)},
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown config key '" + key + "'");
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  parse_layout(c.layout);
  c.train.validate();
  if (c.encoder.init_std <= 0.0) throw ConfigError(source + ": encoder.init_std must be positive");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_run_config(in, std::filesystem::path(path).parent_path(), path);
}

}  // namespace pemi

#endif  // PEMI_CONFIG_HPP
