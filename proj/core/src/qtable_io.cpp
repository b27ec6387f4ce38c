#include "etm/qtable_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "etm/error.hpp"

namespace etm {

namespace {

class LeWriter {
 public:
  explicit LeWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::kIo, "cannot open for writing: " + path.string());
  }

  void magic(const char (&tag)[5]) { out_.write(tag, 4); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorCode::kIo, "write failed: " + path_.string());
  }

 private:
  void put(std::uint64_t v, int bytes) {
    std::array<char, 8> buf{};
    for (int i = 0; i < bytes; ++i) buf[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf.data(), bytes);
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

class LeReader {
 public:
  explicit LeReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorCode::kIo, "cannot open for reading: " + path.string());
  }

  void expect_magic(const char (&tag)[5]) {
    std::array<char, 4> buf{};
    in_.read(buf.data(), 4);
    if (!in_ || std::memcmp(buf.data(), tag, 4) != 0) {
      throw Error(ErrorCode::kIo, "bad magic in " + path_.string());
    }
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

 private:
  std::uint64_t get(int bytes) {
    std::array<unsigned char, 8> buf{};
    in_.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (!in_) throw Error(ErrorCode::kIo, "truncated file: " + path_.string());
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }

  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void write_qtable(const std::filesystem::path& path, const QTable& table,
                  std::uint32_t arena_width, std::uint32_t n_agents) {
  LeWriter w(path);
  w.magic("ETMQ");
  w.u32(kQTableFormatVersion);
  w.u32(arena_width);
  w.u32(n_agents);
  w.u32(static_cast<std::uint32_t>(table.action_count()));
  w.u64(table.state_count());
  w.f64(table.gamma());
  for (double v : table.values()) w.f64(v);
  w.finish();
}

QTableFile read_qtable(const std::filesystem::path& path) {
  LeReader r(path);
  r.expect_magic("ETMQ");
  if (const auto version = r.u32(); version != kQTableFormatVersion) {
    throw Error(ErrorCode::kIo, "unsupported Q-table version " + std::to_string(version));
  }
  QTableFile file;
  file.arena_width = r.u32();
  file.n_agents = r.u32();
  const std::uint32_t actions = r.u32();
  const std::uint64_t states = r.u64();
  const double gamma = r.f64();
  file.table = QTable(states, actions, gamma);
  for (double& v : file.table.values()) v = r.f64();
  return file;
}

void write_policy(const std::filesystem::path& path, const PolicyTable& policy,
                  std::uint32_t arena_width) {
  LeWriter w(path);
  w.magic("ETMP");
  w.u32(kPolicyFormatVersion);
  w.u32(arena_width);
  w.u32(static_cast<std::uint32_t>(policy.action_counts().size()));
  for (int c : policy.action_counts()) w.u32(static_cast<std::uint32_t>(c));
  w.u64(policy.state_count());
  for (std::uint32_t j : policy.joint()) w.u32(j);
  w.finish();
}

PolicyFile read_policy(const std::filesystem::path& path) {
  LeReader r(path);
  r.expect_magic("ETMP");
  if (const auto version = r.u32(); version != kPolicyFormatVersion) {
    throw Error(ErrorCode::kIo, "unsupported policy version " + std::to_string(version));
  }
  PolicyFile file;
  file.arena_width = r.u32();
  std::vector<int> counts(r.u32());
  for (int& c : counts) c = static_cast<int>(r.u32());
  std::vector<std::uint32_t> joint(r.u64());
  for (auto& j : joint) j = r.u32();
  file.policy = PolicyTable(std::move(joint), std::move(counts));
  return file;
}

}  // namespace etm
