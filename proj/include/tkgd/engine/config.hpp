#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tkgd/dpcl.hpp"
#include "tkgd/errors.hpp"

namespace tkgd::engine {

using json = nlohmann::json;

struct TrainConfig {
  std::size_t d_dpcl = 200;
  std::size_t d_diff = 128;
  std::size_t d_hidden = 128;
  std::size_t batch = 64;
  double lr = 0.001;
  std::size_t epochs_stage1 = 30;
  std::size_t epochs_stage2 = 20;
  double alpha = 0.2;
  double lambda = 2.0;
  double tau = 0.1;
  std::size_t steps = 50;  // T
  double mu = 0.25;
  std::size_t chains = 8;  // C
  std::uint64_t seed = 0;
  double distance_sign = 1.0;
  std::string mapping_strategy = "Hyp/Euc";
  bool no_gndiff = false;
  bool no_dpcl = false;
  std::string score_mode = "sum";  // sum | max
  bool route_by_novelty = false;
  // Reverse chains per query during per-epoch validation; 0 uses `chains`.
  std::size_t val_chains = 0;

  std::size_t total_epochs() const { return epochs_stage1 + epochs_stage2; }
  dpcl::MappingStrategy mapping() const { return dpcl::MappingStrategy::parse(mapping_strategy); }
  dpcl::ScoreOptions score_options() const { return {mapping(), distance_sign}; }

  // The equilibrium coefficient after ablation flags.
  double effective_alpha() const {
    if (no_gndiff) return 0.0;
    if (no_dpcl) return 1.0;
    return alpha;
  }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(mu >= 0.0)) throw ConfigError("mu must be non-negative");
    if (d_dpcl == 0 || d_diff == 0 || d_hidden == 0) throw ConfigError("dimensions must be positive");
    if (d_diff % 2 != 0) throw ConfigError("d_diff must be even");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (steps < 2) throw ConfigError("T must be at least 2");
    if (chains == 0) throw ConfigError("C must be positive");
    if (distance_sign != 1.0 && distance_sign != -1.0) throw ConfigError("distance_sign must be +1 or -1");
    if (score_mode != "sum" && score_mode != "max") throw ConfigError("score_mode must be 'sum' or 'max'");
    if (no_gndiff && no_dpcl) throw ConfigError("no_gndiff and no_dpcl cannot both be set");
    mapping();
  }

  json to_json() const {
    return json{{"d_dpcl", d_dpcl},
                {"d_diff", d_diff},
                {"d_hidden", d_hidden},
                {"batch", batch},
                {"lr", lr},
                {"epochs_stage1", epochs_stage1},
                {"epochs_stage2", epochs_stage2},
                {"alpha", alpha},
                {"lambda", lambda},
                {"tau", tau},
                {"T", steps},
                {"mu", mu},
                {"C", chains},
                {"seed", seed},
                {"distance_sign", distance_sign},
                {"mapping_strategy", mapping_strategy},
                {"no_gndiff", no_gndiff},
                {"no_dpcl", no_dpcl},
                {"score_mode", score_mode},
                {"route_by_novelty", route_by_novelty},
                {"val_chains", val_chains}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    for (const auto& [key, value] : j.items()) c.set(key, value.is_string() ? value.get<std::string>() : value.dump());
    c.validate();
    return c;
  }

  // Sets one field from its textual value. Unknown keys are rejected.
  void set(std::string_view key, std::string_view value) {
    const std::string k(key);
    auto fail = [&](const char* what) {
      throw ConfigError("bad value '" + std::string(value) + "' for " + k + ": expected " + what);
    };
    auto as_size = [&](std::size_t& out) {
      unsigned long long v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) fail("a non-negative integer");
      out = static_cast<std::size_t>(v);
    };
    auto as_double = [&](double& out) {
      try {
        std::size_t used = 0;
        out = std::stod(std::string(value), &used);
        if (used != value.size()) fail("a number");
      } catch (const std::logic_error&) {
        fail("a number");
      }
    };
    auto as_bool = [&](bool& out) {
      if (value == "true" || value == "1") out = true;
      else if (value == "false" || value == "0") out = false;
      else fail("true or false");
    };
    if (k == "d_dpcl") as_size(d_dpcl);
    else if (k == "d_diff") as_size(d_diff);
    else if (k == "d_hidden") as_size(d_hidden);
    else if (k == "batch") as_size(batch);
    else if (k == "lr") as_double(lr);
    else if (k == "epochs_stage1") as_size(epochs_stage1);
    else if (k == "epochs_stage2") as_size(epochs_stage2);
    else if (k == "alpha") as_double(alpha);
    else if (k == "lambda") as_double(lambda);
    else if (k == "tau") as_double(tau);
    else if (k == "T") as_size(steps);
    else if (k == "mu") as_double(mu);
    else if (k == "C") as_size(chains);
    else if (k == "seed") {
      std::size_t s = 0;
      as_size(s);
      seed = s;
    } else if (k == "distance_sign") as_double(distance_sign);
    else if (k == "mapping_strategy") mapping_strategy = std::string(value);
    else if (k == "no_gndiff") as_bool(no_gndiff);
    else if (k == "no_dpcl") as_bool(no_dpcl);
    else if (k == "score_mode") score_mode = std::string(value);
    else if (k == "route_by_novelty") as_bool(route_by_novelty);
    else if (k == "val_chains") as_size(val_chains);
    else throw ConfigError("unknown config key '" + k + "'");
  }

  // "key=value" as given on the command line.
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  // `key = value` lines; '#' starts a comment.
  static TrainConfig parse(std::string_view text, const std::string& origin = "<config>") {
    TrainConfig c;
    std::size_t line_no = 0;
    while (!text.empty()) {
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(origin, line_no, "expected 'key = value'");
      try {
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ParseError(origin, line_no, e.what());
      }
    }
    return c;
  }

  static TrainConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path.string());
  }

  // FNV-1a over the canonical JSON form, seed excluded.
  std::uint64_t hash() const {
    json j = to_json();
    j.erase("seed");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::string run_name() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return std::string(buf) + "-s" + std::to_string(seed);
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }
};

// alpha * L_diff + (1 - alpha) * (L_ce + L_sup) with alpha after ablation
// flags; L_sup only counts in the second stage.
inline double joint_loss(const TrainConfig& c, double l_ce, double l_sup, double l_diff, bool second_stage = true) {
  const double a = c.effective_alpha();
  return a * l_diff + (1.0 - a) * (l_ce + (second_stage ? l_sup : 0.0));
}

}  // namespace tkgd::engine
