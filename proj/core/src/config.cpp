// SPDX-License-Identifier: Apache-2.0
#include "est/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>

#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected a number, got '" + std::string(s) + "'");
  return v;
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::size_t parse_size(std::string_view s) { return static_cast<std::size_t>(parse_uint(s)); }

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

struct SchedulerSpec {
  std::optional<std::string> preset;
  std::optional<double> scale;
  std::optional<std::vector<std::int64_t>> end_steps;
  std::optional<std::vector<Rates>> rates;
};

struct Field {
  std::string_view key;
  std::function<void(TrainConfig&, std::string_view)> parse;
  std::function<std::string(const TrainConfig&)> print;
};

template <class T>
std::string num(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"model.n_layers", [](TrainConfig& c, std::string_view v) { c.model.n_layers = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.n_layers); }},
      {"model.n_heads", [](TrainConfig& c, std::string_view v) { c.model.n_heads = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.n_heads); }},
      {"model.head_dim", [](TrainConfig& c, std::string_view v) { c.model.head_dim = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.head_dim); }},
      {"model.hidden", [](TrainConfig& c, std::string_view v) { c.model.hidden = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.hidden); }},
      {"model.mlp_inner", [](TrainConfig& c, std::string_view v) { c.model.mlp_inner = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.mlp_inner); }},
      {"model.vocab", [](TrainConfig& c, std::string_view v) { c.model.vocab = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.vocab); }},
      {"model.seq_len", [](TrainConfig& c, std::string_view v) { c.model.seq_len = parse_size(v); },
       [](const TrainConfig& c) { return num(c.model.seq_len); }},
      {"train.steps", [](TrainConfig& c, std::string_view v) { c.steps = parse_int(v); },
       [](const TrainConfig& c) { return num(c.steps); }},
      {"train.batch_size", [](TrainConfig& c, std::string_view v) { c.batch_size = parse_size(v); },
       [](const TrainConfig& c) { return num(c.batch_size); }},
      {"train.clip_norm", [](TrainConfig& c, std::string_view v) { c.clip_norm = parse_double(v); },
       [](const TrainConfig& c) { return num(c.clip_norm); }},
      {"train.sampling", [](TrainConfig& c, std::string_view v) { c.sampling = parse_bool(v); },
       [](const TrainConfig& c) { return std::string(c.sampling ? "true" : "false"); }},
      {"optimizer.peak_lr", [](TrainConfig& c, std::string_view v) { c.peak_lr = parse_double(v); },
       [](const TrainConfig& c) { return num(c.peak_lr); }},
      {"optimizer.beta1", [](TrainConfig& c, std::string_view v) { c.optimizer.beta1 = parse_double(v); },
       [](const TrainConfig& c) { return num(c.optimizer.beta1); }},
      {"optimizer.beta2", [](TrainConfig& c, std::string_view v) { c.optimizer.beta2 = parse_double(v); },
       [](const TrainConfig& c) { return num(c.optimizer.beta2); }},
      {"optimizer.eps", [](TrainConfig& c, std::string_view v) { c.optimizer.eps = parse_double(v); },
       [](const TrainConfig& c) { return num(c.optimizer.eps); }},
      {"optimizer.weight_decay", [](TrainConfig& c, std::string_view v) { c.optimizer.weight_decay = parse_double(v); },
       [](const TrainConfig& c) { return num(c.optimizer.weight_decay); }},
      {"lr.warmup_steps", [](TrainConfig& c, std::string_view v) { c.warmup_steps = parse_int(v); },
       [](const TrainConfig& c) { return num(c.warmup_steps); }},
      {"lr.decay", [](TrainConfig& c, std::string_view v) { c.decay = parse_lr_decay(v); },
       [](const TrainConfig& c) { return to_string(c.decay); }},
      {"lr.min_lr", [](TrainConfig& c, std::string_view v) { c.min_lr = parse_double(v); },
       [](const TrainConfig& c) { return num(c.min_lr); }},
      {"seed.seed", [](TrainConfig& c, std::string_view v) { c.seed.seed = parse_uint(v); },
       [](const TrainConfig& c) { return num(c.seed.seed); }},
      {"seed.sampler_stream", [](TrainConfig& c, std::string_view v) { c.seed.sampler_stream = parse_uint(v); },
       [](const TrainConfig& c) { return num(c.seed.sampler_stream); }},
      {"seed.data_stream", [](TrainConfig& c, std::string_view v) { c.seed.data_stream = parse_uint(v); },
       [](const TrainConfig& c) { return num(c.seed.data_stream); }},
      {"seed.algorithm", [](TrainConfig& c, std::string_view v) { c.seed.algorithm = std::string(v); },
       [](const TrainConfig& c) { return c.seed.algorithm; }},
      {"data.train", [](TrainConfig& c, std::string_view v) { c.data.train_path = std::string(v); },
       [](const TrainConfig& c) { return c.data.train_path; }},
      {"data.eval", [](TrainConfig& c, std::string_view v) { c.data.eval_path = std::string(v); },
       [](const TrainConfig& c) { return c.data.eval_path; }},
      {"data.holdout_fraction", [](TrainConfig& c, std::string_view v) { c.data.holdout_fraction = parse_double(v); },
       [](const TrainConfig& c) { return num(c.data.holdout_fraction); }},
      {"checkpoint.interval", [](TrainConfig& c, std::string_view v) { c.checkpoint_interval = parse_int(v); },
       [](const TrainConfig& c) { return num(c.checkpoint_interval); }},
      {"eval.interval", [](TrainConfig& c, std::string_view v) { c.eval_interval = parse_int(v); },
       [](const TrainConfig& c) { return num(c.eval_interval); }},
      {"eval.batches", [](TrainConfig& c, std::string_view v) { c.eval_batches = parse_size(v); },
       [](const TrainConfig& c) { return num(c.eval_batches); }},
      {"cost.backward_multiplier", [](TrainConfig& c, std::string_view v) { c.backward_multiplier = parse_double(v); },
       [](const TrainConfig& c) { return num(c.backward_multiplier); }},
      {"mask.queue_capacity", [](TrainConfig& c, std::string_view v) { c.queue_capacity = parse_size(v); },
       [](const TrainConfig& c) { return num(c.queue_capacity); }},
  };
  return table;
}

std::vector<Rates> parse_rates_list(std::string_view s) {
  std::vector<Rates> out;
  for (auto item : split(s, ',')) {
    auto parts = split(item, '/');
    if (parts.size() != 3) throw ConfigError("rates entries are head/mlp/layer triples, got '" + std::string(item) + "'");
    out.push_back({parse_double(parts[0]), parse_double(parts[1]), parse_double(parts[2])});
  }
  return out;
}

std::string print_rates_list(std::span<const Stage> stages) {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ", ";
    out += format_double(s.rates.head) + "/" + format_double(s.rates.mlp) + "/" + format_double(s.rates.layer);
  }
  return out;
}

std::string print_end_steps(std::span<const Stage> stages) {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ",";
    out += std::to_string(s.end_step);
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<KeyValueEntry> parse_key_values(std::string_view text, std::string_view origin) {
  std::vector<KeyValueEntry> out;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    out.push_back({std::move(key), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> TrainConfig::validate() const {
  model.validate();
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be positive");
  if (!(peak_lr > 0)) throw ConfigError("optimizer.peak_lr must be positive");
  if (min_lr < 0 || min_lr > peak_lr) throw ConfigError("lr.min_lr must lie in [0, optimizer.peak_lr]");
  if (warmup_steps < 0 || warmup_steps > steps) throw ConfigError("lr.warmup_steps must lie in [0, train.steps]");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1)) throw ConfigError("optimizer.beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) throw ConfigError("optimizer.beta2 must lie in [0, 1)");
  if (!(optimizer.eps > 0)) throw ConfigError("optimizer.eps must be positive");
  if (optimizer.weight_decay < 0) throw ConfigError("optimizer.weight_decay must be non-negative");
  if (seed.algorithm != kRngAlgorithm) {
    throw ConfigError("seed.algorithm '" + seed.algorithm + "' is not supported (expected '" + kRngAlgorithm + "')");
  }
  if (seed.sampler_stream == seed.data_stream) throw ConfigError("seed.sampler_stream must differ from seed.data_stream");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint.interval must be >= 0");
  if (eval_interval < 0) throw ConfigError("eval.interval must be >= 0");
  if (eval_batches < 1) throw ConfigError("eval.batches must be >= 1");
  if (backward_multiplier < 0) throw ConfigError("cost.backward_multiplier must be >= 0");
  if (queue_capacity < 1) throw ConfigError("mask.queue_capacity must be >= 1");
  return validate_stages(scheduler.stages(), steps);
}

TrainConfig parse_config(std::string_view text, std::string_view origin, const std::filesystem::path& base_dir) {
  TrainConfig cfg;
  SchedulerSpec sched;
  bool steps_given = false;
  for (const auto& e : parse_key_values(text, origin)) {
    const std::string where = std::string(origin) + ":" + std::to_string(e.line) + ": ";
    try {
      if (e.key == "scheduler.preset") {
        sched.preset = e.value;
      } else if (e.key == "scheduler.scale") {
        sched.scale = parse_double(e.value);
      } else if (e.key == "scheduler.end_steps") {
        std::vector<std::int64_t> steps;
        for (auto s : split(e.value, ',')) steps.push_back(parse_int(s));
        sched.end_steps = std::move(steps);
      } else if (e.key == "scheduler.rates") {
        sched.rates = parse_rates_list(e.value);
      } else {
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == e.key; });
        if (it == table.end()) throw ConfigError("unknown key '" + e.key + "'");
        it->parse(cfg, e.value);
        if (e.key == "train.steps") steps_given = true;
      }
    } catch (const ConfigError& err) {
      throw ConfigError(where + e.key + ": " + err.what());
    }
  }

  const std::string where = std::string(origin) + ": ";
  if (sched.preset) {
    if (sched.end_steps || sched.rates) {
      throw ConfigError(where + "scheduler.preset cannot be combined with scheduler.end_steps/rates");
    }
    cfg.scheduler = SamplingScheduler::preset(*sched.preset, sched.scale.value_or(1.0));
  } else if (sched.end_steps || sched.rates) {
    if (!sched.end_steps || !sched.rates) throw ConfigError(where + "scheduler.end_steps and scheduler.rates go together");
    if (sched.scale) throw ConfigError(where + "scheduler.scale applies to presets only");
    if (sched.end_steps->size() != sched.rates->size()) {
      throw ConfigError(where + "scheduler.end_steps has " + std::to_string(sched.end_steps->size()) +
                        " entries but scheduler.rates has " + std::to_string(sched.rates->size()));
    }
    std::vector<Stage> stages;
    for (std::size_t i = 0; i < sched.end_steps->size(); ++i) stages.push_back({(*sched.end_steps)[i], (*sched.rates)[i]});
    cfg.scheduler = SamplingScheduler(std::move(stages));
  } else {
    if (!steps_given) throw ConfigError(where + "either train.steps or a scheduler is required");
    if (cfg.steps < 1) throw ConfigError(where + "train.steps must be >= 1");
    cfg.scheduler = SamplingScheduler(std::vector<Stage>{Stage{cfg.steps, Rates{}}});
  }
  if (!steps_given) cfg.steps = cfg.scheduler.total_steps();

  if (!base_dir.empty()) {
    auto resolve = [&](std::string& p) {
      if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base_dir / p).lexically_normal().string();
    };
    resolve(cfg.data.train_path);
    resolve(cfg.data.eval_path);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(where + err.what());
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto base = std::filesystem::absolute(path).parent_path();
  return parse_config(text, path.string(), base);
}

std::string serialize_config(const TrainConfig& config) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& f : fields()) {
    entries.emplace_back(std::string(f.key), f.print(config));
    if (f.key == "model.seq_len") {
      entries.emplace_back("scheduler.end_steps", print_end_steps(config.scheduler.stages()));
      entries.emplace_back("scheduler.rates", print_rates_list(config.scheduler.stages()));
    }
  }
  return format_key_values(entries);
}

std::string config_hash(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : serialize_config(config)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EST_NAMESPACE_END
