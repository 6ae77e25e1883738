#pragma once

#include <cstdint>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aff/network.hpp"
#include "aff/train.hpp"

namespace aff {

// One parsed run description: the model and the training recipe. Defaults
// are the desk-scale micro model and the stock recipe; a config file only
// overrides the keys it names.
struct RunConfig {
  AffNetConfig net = affnet_micro();
  TrainConfig train;
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void bad_value(const std::string& key,
                                   const std::string& value,
                                   const std::string& want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value +
                    "' as " + want);
}

inline long long parse_int(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  char* end = nullptr;
  errno = 0;
  const long long out = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno != 0) {
    bad_value(key, value, "an integer");
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno != 0) {
    bad_value(key, value, "a number");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, value, "a boolean (true/false/1/0)");
}

inline std::vector<Index> parse_index_list(const std::string& key,
                                           const std::string& value) {
  std::vector<Index> out;
  std::string item;
  std::istringstream is(trim(value));
  while (std::getline(is, item, ',')) {
    out.push_back(static_cast<Index>(parse_int(key, item)));
  }
  if (out.empty()) bad_value(key, value, "a comma-separated integer list");
  return out;
}

inline bool apply_net_key(AffNetConfig& c, const std::string& key,
                          const std::string& value) {
  if (key == "stem_channels") {
    c.stem_channels = parse_index_list(key, value);
  } else if (key == "stem_strides") {
    c.stem_strides = parse_index_list(key, value);
  } else if (key == "stage_channels") {
    c.stage_channels = parse_index_list(key, value);
  } else if (key == "stage_blocks") {
    c.stage_blocks = parse_index_list(key, value);
  } else if (key == "mixer") {
    c.mixer = parse_mixer_kind(trim(value));
  } else if (key == "groups") {
    c.groups = static_cast<Index>(parse_int(key, value));
  } else if (key == "mbconv_expansion") {
    c.mbconv_expansion = static_cast<Index>(parse_int(key, value));
  } else if (key == "num_classes") {
    c.num_classes = static_cast<Index>(parse_int(key, value));
  } else if (key == "input_resolution") {
    c.input_resolution = static_cast<Index>(parse_int(key, value));
  } else {
    return false;
  }
  return true;
}

inline bool apply_train_key(TrainConfig& c, const std::string& key,
                            const std::string& value) {
  if (key == "optimizer") {
    c.optimizer = trim(value);
  } else if (key == "schedule") {
    c.schedule = trim(value);
  } else if (key == "base_lr") {
    c.base_lr = parse_real(key, value);
  } else if (key == "min_lr") {
    c.min_lr = parse_real(key, value);
  } else if (key == "weight_decay") {
    c.weight_decay = parse_real(key, value);
  } else if (key == "warmup_steps") {
    c.warmup_steps = static_cast<Index>(parse_int(key, value));
  } else if (key == "total_epochs") {
    c.total_epochs = static_cast<Index>(parse_int(key, value));
  } else if (key == "batch_size") {
    c.batch_size = static_cast<Index>(parse_int(key, value));
  } else if (key == "label_smoothing") {
    c.label_smoothing = parse_real(key, value);
  } else if (key == "seed") {
    c.seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "precision") {
    c.precision = trim(value);
  } else if (key == "augment") {
    c.augment = parse_augment(trim(value));
  } else if (key == "timing") {
    c.timing = parse_bool(key, value);
  } else {
    return false;
  }
  return true;
}

}  // namespace cfgdetail

// Flat key=value text, one pair per line. Keys are exactly the AffNetConfig
// and TrainConfig field names; list fields take comma-separated integers.
// Blank lines and lines starting with '#' are skipped. Unknown or repeated
// keys are errors, never silently ignored.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig out;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  Index lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = cfgdetail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value, got '" + t + "'");
    }
    const std::string key = cfgdetail::trim(t.substr(0, eq));
    const std::string value = t.substr(eq + 1);
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config key '" + key + "' given twice");
    }
    if (!cfgdetail::apply_net_key(out.net, key, value) &&
        !cfgdetail::apply_train_key(out.train, key, value)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return out;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw IoError("cannot read config file '" + path + "'");
  return parse_config_text(ss.str());
}

}  // namespace aff
