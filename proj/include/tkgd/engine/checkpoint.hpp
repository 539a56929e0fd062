#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "tkgd/engine/config.hpp"
#include "tkgd/engine/model.hpp"
#include "tkgd/errors.hpp"
#include "tkgd/numkit/adam.hpp"
#include "tkgd/numkit/rng.hpp"

namespace tkgd::engine {

inline constexpr char kCheckpointMagic[4] = {'T', 'K', 'G', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Training progress that is not a tensor.
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  double best_val_mrr = -1.0;
  std::size_t best_epoch = 0;
  double last_loss = 0.0;

  Rng rng() const { return Rng::from_state(rng_key, rng_counter); }

  json to_json() const {
    return json{{"epoch", epoch},           {"rng_key", rng_key},       {"rng_counter", rng_counter},
                {"best_val_mrr", best_val_mrr}, {"best_epoch", best_epoch}, {"last_loss", last_loss}};
  }

  static TrainState from_json(const json& j) {
    TrainState s;
    s.epoch = j.at("epoch").get<std::size_t>();
    s.rng_key = j.at("rng_key").get<std::uint64_t>();
    s.rng_counter = j.at("rng_counter").get<std::uint64_t>();
    s.best_val_mrr = j.at("best_val_mrr").get<double>();
    s.best_epoch = j.at("best_epoch").get<std::size_t>();
    s.last_loss = j.at("last_loss").get<double>();
    return s;
  }
};

struct Checkpoint {
  Model model;
  Adam adam;
  TrainState state;
};

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(std::string_view name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CorruptionError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    return std::string(bytes(n));
  }
  Tensor tensor(std::string& name) {
    name = str();
    const auto rank = u32();
    if (rank > 8) throw CorruptionError("checkpoint record '" + name + "' has implausible rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(u64());
      if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d)
        throw CorruptionError("checkpoint record '" + name + "' is too large");
      n *= d;
    }
    if (n > (in_.size() - pos_) / 8) throw CorruptionError("checkpoint truncated in record '" + name + "'");
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return Tensor(std::move(shape), std::move(v));
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Magic, version, length-prefixed JSON header, then named f64 tensor records:
// every parameter, then Adam moments as adam.m/<name> and adam.v/<name>.
inline std::string encode_checkpoint(const Checkpoint& c) {
  json header;
  header["config"] = c.model.config.to_json();
  header["state"] = c.state.to_json();
  header["layout"] = {{"entities", c.model.denoiser.layout.num_entities},
                      {"relations", c.model.denoiser.layout.num_relations}};
  json steps = json::object();
  for (const auto& [name, st] : c.adam.states()) steps[name] = st.step;
  header["adam_steps"] = std::move(steps);

  std::vector<std::pair<std::string, const Tensor*>> records;
  for (const auto& r : c.model.refs()) records.emplace_back(r.name, r.tensor);
  for (const auto& [name, st] : c.adam.states()) {
    if (st.m.empty()) continue;
    records.emplace_back("adam.m/" + name, &st.m);
    records.emplace_back("adam.v/" + name, &st.v);
  }

  detail::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) w.tensor(name, *t);
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CorruptionError("not a checkpoint (bad magic bytes)");
  r.bytes(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw IncompatibleVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
  json header;
  try {
    header = json::parse(r.str());
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    c.model.config = TrainConfig::from_json(header.at("config"));
    c.state = TrainState::from_json(header.at("state"));
    const corpus::TokenLayout layout{header.at("layout").at("entities").get<std::size_t>(),
                                     header.at("layout").at("relations").get<std::size_t>()};
    c.model.denoiser.layout = layout;
    c.model.denoiser.width = c.model.config.d_diff;
    c.model.denoiser.hidden = c.model.config.d_hidden;
    c.adam = Adam(AdamHyper{c.model.config.lr});
    for (const auto& [name, step] : header.at("adam_steps").items()) {
      auto& st = c.adam.states()[name];
      st.hyper = c.adam.hyper();
      st.step = step.get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header is incomplete: ") + e.what());
  }

  std::map<std::string, Tensor> records;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Tensor t = r.tensor(name);
    records.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw CorruptionError("trailing bytes after the last checkpoint record");

  for (auto& ref : c.model.refs()) {
    auto it = records.find(ref.name);
    if (it == records.end()) throw CorruptionError("checkpoint lacks tensor '" + ref.name + "'");
    *ref.tensor = std::move(it->second);
    records.erase(it);
  }
  for (auto& [name, st] : c.adam.states()) {
    auto m = records.find("adam.m/" + name);
    auto v = records.find("adam.v/" + name);
    if (m == records.end() || v == records.end()) continue;
    st.m = std::move(m->second);
    st.v = std::move(v->second);
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(c);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tkgd::engine
