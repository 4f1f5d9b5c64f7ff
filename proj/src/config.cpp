#include "resgen/config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "resgen/binary.hpp"

namespace resgen::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument(key + ": expected an unsigned integer, got '" + v + "'");
  return std::size_t(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> put;
};

#define SIZE_FIELD(key, member)                                                                \
  {key, {[](const RunConfig& c) { return std::to_string(c.member); },                          \
         [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); }}}
#define DOUBLE_FIELD(key, member)                                                    \
  {key, {[](const RunConfig& c) { return num(c.member); },                           \
         [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }}}
#define BOOL_FIELD(key, member)                                                          \
  {key, {[](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },    \
         [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      SIZE_FIELD("rvq.depth", rvq.depth),
      SIZE_FIELD("rvq.vocab", rvq.vocab),
      SIZE_FIELD("rvq.epochs", rvq.epochs),
      DOUBLE_FIELD("rvq.assign_scale", rvq.assign_scale),
      SIZE_FIELD("rvq.seed", rvq.seed),
      {"rvq.rule",
       {[](const RunConfig& c) {
          return std::string(c.rvq.rule == rvq::UpdateRule::kNearest ? "nearest" : "probabilistic");
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "nearest") {
            c.rvq.rule = rvq::UpdateRule::kNearest;
          } else if (v == "probabilistic") {
            c.rvq.rule = rvq::UpdateRule::kProbabilistic;
          } else {
            throw std::invalid_argument(k + ": expected nearest or probabilistic, got '" + v + "'");
          }
        }}},

      SIZE_FIELD("model.layers", model.layers),
      SIZE_FIELD("model.width", model.width),
      SIZE_FIELD("model.heads", model.heads),
      SIZE_FIELD("model.components", model.components),
      SIZE_FIELD("model.rank", model.rank),
      BOOL_FIELD("model.positional", model.positional),
      BOOL_FIELD("model.stop_q", model.stop_q),

      SIZE_FIELD("train.steps", train.steps),
      SIZE_FIELD("train.batch", train.batch),
      DOUBLE_FIELD("train.lr", train.lr),
      SIZE_FIELD("train.warmup", train.warmup),
      DOUBLE_FIELD("train.beta1", train.beta1),
      DOUBLE_FIELD("train.beta2", train.beta2),
      DOUBLE_FIELD("train.eps", train.eps),
      DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      DOUBLE_FIELD("train.clip", train.clip),
      DOUBLE_FIELD("train.ema_decay", train.ema_decay),
      DOUBLE_FIELD("train.label_dropout", train.label_dropout),
      SIZE_FIELD("train.seed", train.seed),
      SIZE_FIELD("train.log_every", train.log_every),
      {"train.schedule",
       {[](const RunConfig& c) { return masking::schedule_name(c.train.schedule); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.train.schedule = masking::parse_schedule(v);
        }}},
      {"train.audit_steps",
       {[](const RunConfig& c) {
          std::string s;
          for (std::size_t k = 0; k < c.train.audit_steps.size(); ++k) {
            s += (k ? "," : "") + std::to_string(c.train.audit_steps[k]);
          }
          return s;
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.audit_steps.clear();
          std::stringstream in(v);
          std::string item;
          while (std::getline(in, item, ',')) {
            item = trim(item);
            if (!item.empty()) c.train.audit_steps.push_back(to_size(k, item));
          }
        }}},

      SIZE_FIELD("sample.steps", sample.steps),
      DOUBLE_FIELD("sample.tau", sample.tau),
      DOUBLE_FIELD("sample.top_p", sample.top_p),
      DOUBLE_FIELD("sample.pi_temperature", sample.pi_temperature),
      DOUBLE_FIELD("sample.cfg_start", sample.cfg_start),
      DOUBLE_FIELD("sample.cfg_end", sample.cfg_end),
      SIZE_FIELD("sample.seed", sample.seed),
      {"sample.schedule",
       {[](const RunConfig& c) { return masking::schedule_name(c.sample.schedule); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.sample.schedule = masking::parse_schedule(v);
        }}},
      {"sample.selection",
       {[](const RunConfig& c) { return sampler::selection_name(c.sample.selection); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.sample.selection = sampler::parse_selection(v);
        }}},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& context) {
  KeyValues kv;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(context + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(context + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw std::invalid_argument(context + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) { return parse_key_values(read_file(path), path); }

std::string format_key_values(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("expected key=value, got '" + text + "'");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

void set(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "sample.preset") {
    const auto seed = c.sample.seed;
    c.sample = sampler::preset(value);
    c.sample.seed = seed;
    return;
  }
  const auto& f = fields();
  const auto it = f.find(key);
  if (it == f.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.put(c, key, value);
}

void apply(RunConfig& c, const KeyValues& kv) {
  // Preset first so individual sample keys can refine it.
  if (auto it = kv.find("sample.preset"); it != kv.end()) set(c, it->first, it->second);
  for (const auto& [k, v] : kv) {
    if (k != "sample.preset") set(c, k, v);
  }
}

KeyValues to_key_values(const RunConfig& c) {
  KeyValues kv;
  for (const auto& [k, f] : fields()) kv.emplace(k, f.get(c));
  return kv;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys{"sample.preset"};
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

}  // namespace resgen::config
