#include <charconv>
#include <sstream>
#include <string>

#include "xmodal/atomic_file.hpp"
#include "xmodal/error.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::InvalidConfig, "bad value for '" + std::string(key) + "': '" + std::string(value) + "'");
}

template <typename N>
N parse_number(std::string_view key, std::string_view value) {
  N out{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size()) bad_value(key, value);
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

template <typename F>
void for_each_item(std::string_view value, F&& f) {
  std::size_t start = 0;
  while (start <= value.size()) {
    auto comma = value.find(',', start);
    auto item = trim(value.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    f(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error(ErrorCode::InvalidConfig, "batch_size must be at least 2");
  if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be at least 1");
  if (checkpoint_every < 1) throw Error(ErrorCode::InvalidConfig, "checkpoint_every must be at least 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "Adam betas must lie in [0,1)");
  }
  if (!(adam_epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "adam epsilon must be positive");
  projection.validate();
  if (loss == LossKind::m3l) {
    m3l.validate();
  } else {
    patr.validate();
  }
}

void apply_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  if (key == "batch_size") {
    c.batch_size = parse_number<std::size_t>(key, value);
  } else if (key == "epochs") {
    c.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "loss") {
    if (value == "m3l") {
      c.loss = LossKind::m3l;
    } else if (value == "patr") {
      c.loss = LossKind::patr;
    } else {
      bad_value(key, value);
    }
  } else if (key == "rho") {
    c.m3l.rho = parse_number<double>(key, value);
  } else if (key == "alpha1") {
    c.m3l.alpha1 = parse_number<double>(key, value);
  } else if (key == "alpha2") {
    c.m3l.alpha2 = parse_number<double>(key, value);
  } else if (key == "eta") {
    c.patr.eta = parse_number<double>(key, value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
    c.projection.seed = c.seed;
  } else if (key == "checkpoint_path") {
    c.checkpoint_path = std::string(value);
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = parse_number<std::size_t>(key, value);
  } else if (key == "log_every") {
    c.log_every = parse_number<std::size_t>(key, value);
  } else if (key == "learning_rate" || key == "lr") {
    c.learning_rate = parse_number<double>(key, value);
  } else if (key == "beta1") {
    c.beta1 = parse_number<double>(key, value);
  } else if (key == "beta2") {
    c.beta2 = parse_number<double>(key, value);
  } else if (key == "epsilon") {
    c.adam_epsilon = parse_number<double>(key, value);
  } else if (key == "input_dim") {
    c.projection.input_dim = parse_number<std::size_t>(key, value);
  } else if (key == "layer_dims") {
    c.projection.layer_dims.clear();
    for_each_item(value, [&](std::string_view v) { c.projection.layer_dims.push_back(parse_number<std::size_t>(key, v)); });
  } else if (key == "dropout_rates") {
    c.projection.dropout_rates.clear();
    for_each_item(value, [&](std::string_view v) { c.projection.dropout_rates.push_back(parse_number<float>(key, v)); });
  } else if (key == "l2norm_flags") {
    c.projection.l2norm_flags.clear();
    for_each_item(value, [&](std::string_view v) { c.projection.l2norm_flags.push_back(parse_bool(key, v)); });
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown config key '" + std::string(key) + "'");
  }
}

void apply_config_text(TrainConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(TrainConfig& config, const std::filesystem::path& path) {
  apply_config_text(config, read_file(path));
}

}  // namespace xmodal
