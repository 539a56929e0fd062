#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/errors.hpp"

namespace tkgd::corpus {

// A prepared dataset directory: id<TAB>name vocabularies, a binary quad
// table and a stats.json summary.
inline constexpr char kBundleMagic[4] = {'T', 'K', 'G', 'Q'};
inline constexpr std::uint32_t kBundleVersion = 1;

inline nlohmann::json bundle_stats(const QuadStore& store) {
  return nlohmann::json{{"entities", store.num_entities()},
                        {"relations", store.num_relations()},
                        {"timestamps", store.num_timestamps()},
                        {"train", store.split(Split::train).size()},
                        {"valid", store.split(Split::valid).size()},
                        {"test", store.split(Split::test).size()},
                        {"valid_start", store.valid_start()},
                        {"test_start", store.test_start()}};
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::string vocab_tsv(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) out += std::to_string(i) + "\t" + names[i] + "\n";
  return out;
}

inline std::vector<std::string> parse_vocab_tsv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> names;
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string row = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++line;
    const auto tab = row.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), line, "expected id<TAB>name");
    if (row.substr(0, tab) != std::to_string(names.size()))
      throw ParseError(path.string(), line, "ids must be dense and ascending");
    names.push_back(row.substr(tab + 1));
  }
  return names;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < 4) throw CorruptionError("quad table truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline void write_bundle(const QuadStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "entities.tsv", detail::vocab_tsv(store.entities().names()));
  detail::write_file(dir / "relations.tsv", detail::vocab_tsv(store.relations().names()));
  detail::write_file(dir / "timestamps.tsv", detail::vocab_tsv(store.timestamps()));
  std::string bin(kBundleMagic, 4);
  detail::put_u32(bin, kBundleVersion);
  const std::uint64_t n = store.quads().size();
  detail::put_u32(bin, static_cast<std::uint32_t>(n & 0xFFFFFFFFu));
  detail::put_u32(bin, static_cast<std::uint32_t>(n >> 32));
  detail::put_u32(bin, store.valid_start());
  detail::put_u32(bin, store.test_start());
  for (const Quad& q : store.quads()) {
    detail::put_u32(bin, q.s);
    detail::put_u32(bin, q.r);
    detail::put_u32(bin, q.o);
    detail::put_u32(bin, q.t);
  }
  detail::write_file(dir / "quads.bin", bin);
  detail::write_file(dir / "stats.json", bundle_stats(store).dump(2) + "\n");
}

inline QuadStore read_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("no prepared dataset at '" + dir.string() + "'");
  auto ents = detail::parse_vocab_tsv(dir / "entities.tsv");
  auto rels = detail::parse_vocab_tsv(dir / "relations.tsv");
  auto times = detail::parse_vocab_tsv(dir / "timestamps.tsv");
  const std::string bin = detail::read_file(dir / "quads.bin");
  if (bin.size() < 4 || std::memcmp(bin.data(), kBundleMagic, 4) != 0)
    throw CorruptionError("'" + (dir / "quads.bin").string() + "' is not a quad table");
  std::size_t pos = 4;
  const auto version = detail::get_u32(bin, pos);
  if (version != kBundleVersion)
    throw IncompatibleVersionError("quad table version " + std::to_string(version) + " is not supported");
  std::uint64_t n = detail::get_u32(bin, pos);
  n |= static_cast<std::uint64_t>(detail::get_u32(bin, pos)) << 32;
  const TimeIndex valid_start = detail::get_u32(bin, pos);
  const TimeIndex test_start = detail::get_u32(bin, pos);
  if ((bin.size() - pos) != n * 16) throw CorruptionError("quad table length does not match its header");
  std::vector<Quad> quads(n);
  for (auto& q : quads) {
    q.s = detail::get_u32(bin, pos);
    q.r = detail::get_u32(bin, pos);
    q.o = detail::get_u32(bin, pos);
    q.t = detail::get_u32(bin, pos);
  }
  return QuadStore(Vocabulary(std::move(ents)), Vocabulary(std::move(rels)), std::move(times), std::move(quads),
                   valid_start, test_start);
}

}  // namespace tkgd::corpus
