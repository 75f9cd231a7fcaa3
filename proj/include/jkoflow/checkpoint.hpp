#pragma once

// Binary checkpoint container:
//   "JKOFLOW\0" | u32 version | u64 n | n bytes of JSON metadata |
//   f64 payload (per block: t_start, t_end, params; then standardizer mean,
//   scale) | u64 FNV-1a of all preceding bytes
// Integers and doubles are little-endian; doubles are stored bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "jkoflow/datasets.hpp"
#include "jkoflow/flow.hpp"

namespace jko {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'J', 'K', 'O', 'F', 'L', 'O', 'W', '\0'};

inline std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : b_(bytes), end_(end) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > end_ || pos_ > end_ - n) throw IoError("checkpoint: truncated or corrupted (length field out of range)");
  }

  const std::string& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json potential_to_json(const Potential& p) {
  nlohmann::json j;
  j["kind"] = p.conditional() ? "mixture" : "standard";
  if (p.conditional()) {
    nlohmann::json means = nlohmann::json::array();
    for (const Vector& m : p.means) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
    j["means"] = means;
    j["variance"] = p.variance;
  }
  return j;
}

inline Potential potential_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "standard") return Potential::standard();
  if (kind != "mixture") throw ConfigError("potential: unknown kind '" + kind + "' (expected standard or mixture)");
  std::vector<Vector> means;
  for (const auto& m : j.at("means")) {
    const auto v = m.get<std::vector<double>>();
    means.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return Potential::mixture(std::move(means), j.value("variance", 1.0));
}

inline nlohmann::json integrator_to_json(const IntegratorConfig& c) {
  return {{"substeps", c.substeps}, {"divergence", to_string(c.divergence)}, {"n_probes", c.n_probes},
          {"sigma0", c.sigma0}};
}

inline nlohmann::json flow_metadata_json(const FlowNetwork& flow) {
  nlohmann::json j;
  j["arch"] = {{"input_dim", flow.arch.input_dim},
               {"hidden_widths", flow.arch.hidden_widths},
               {"beta", flow.arch.beta},
               {"time_input", flow.arch.time_input}};
  j["n_blocks"] = flow.blocks.size();
  j["has_free_block"] = flow.has_free_block;
  j["param_count"] = param_count(flow.arch);
  j["potential"] = potential_to_json(flow.potential);
  j["integrator"] = integrator_to_json(flow.integrator);
  j["standardizer_fitted_on"] = flow.standardizer.fitted_on;
  j["seed"] = flow.meta.seed;
  j["config_hash"] = flow.meta.config_hash;
  j["terminated"] = flow.meta.terminated;
  return j;
}

inline std::string checkpoint_bytes(const FlowNetwork& flow) {
  flow.validate();
  std::string out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u32(out, kCheckpointVersion);
  const std::string meta = flow_metadata_json(flow).dump();
  detail::put_u64(out, meta.size());
  out += meta;
  for (const auto& b : flow.blocks) {
    detail::put_f64(out, b.interval.t_start);
    detail::put_f64(out, b.interval.t_end);
    for (Eigen::Index i = 0; i < b.params.values.size(); ++i) detail::put_f64(out, b.params.values[i]);
  }
  for (Eigen::Index i = 0; i < flow.standardizer.mean.size(); ++i) detail::put_f64(out, flow.standardizer.mean[i]);
  for (Eigen::Index i = 0; i < flow.standardizer.scale.size(); ++i) detail::put_f64(out, flow.standardizer.scale[i]);
  detail::put_u64(out, fnv1a(out, out.size()));
  return out;
}

inline FlowNetwork flow_from_checkpoint_bytes(const std::string& bytes) {
  if (bytes.size() < 8 + 4 + 8 + 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("checkpoint: not a jkoflow checkpoint (bad magic)");
  }
  detail::Reader head(bytes, bytes.size());
  head.bytes(8);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body_end = bytes.size() - 8;
  detail::Reader tail(bytes, bytes.size());
  tail.bytes(body_end);
  const std::uint64_t stored = tail.u64();
  detail::Reader r(bytes, body_end);
  r.bytes(12);
  const std::uint64_t meta_len = r.u64();
  const std::string meta_text = r.bytes(meta_len);
  if (stored != fnv1a(bytes, body_end)) throw IoError("checkpoint: checksum mismatch (file corrupted)");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: unreadable metadata: ") + e.what());
  }
  FlowNetwork flow;
  try {
    const auto& a = meta.at("arch");
    flow.arch.input_dim = a.at("input_dim").get<int>();
    flow.arch.hidden_widths = a.at("hidden_widths").get<std::vector<int>>();
    flow.arch.beta = a.at("beta").get<double>();
    flow.arch.time_input = a.at("time_input").get<bool>();
    flow.has_free_block = meta.at("has_free_block").get<bool>();
    flow.potential = potential_from_json(meta.at("potential"));
    const auto& ic = meta.at("integrator");
    flow.integrator.substeps = ic.at("substeps").get<int>();
    flow.integrator.divergence = divergence_mode_from_string(ic.at("divergence").get<std::string>());
    flow.integrator.n_probes = ic.at("n_probes").get<int>();
    flow.integrator.sigma0 = ic.at("sigma0").get<double>();
    flow.meta.seed = meta.at("seed").get<std::uint64_t>();
    flow.meta.config_hash = meta.at("config_hash").get<std::string>();
    flow.meta.terminated = meta.at("terminated").get<bool>();
    flow.standardizer.fitted_on = meta.at("standardizer_fitted_on").get<std::size_t>();
    const auto n_blocks = meta.at("n_blocks").get<std::size_t>();
    const auto n_params = meta.at("param_count").get<std::size_t>();
    if (n_params != param_count(flow.arch)) throw IoError("checkpoint: parameter count does not match architecture");
    for (std::size_t k = 0; k < n_blocks; ++k) {
      ResidualVectorField b;
      b.arch = flow.arch;
      b.interval.t_start = r.f64();
      b.interval.t_end = r.f64();
      b.params.values.resize(static_cast<Eigen::Index>(n_params));
      for (std::size_t i = 0; i < n_params; ++i) b.params.values[static_cast<Eigen::Index>(i)] = r.f64();
      flow.blocks.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: invalid metadata: ") + e.what());
  }
  const int d = flow.arch.input_dim;
  flow.standardizer.mean.resize(d);
  flow.standardizer.scale.resize(d);
  for (int i = 0; i < d; ++i) flow.standardizer.mean[i] = r.f64();
  for (int i = 0; i < d; ++i) flow.standardizer.scale[i] = r.f64();
  if (r.pos() != body_end) throw IoError("checkpoint: trailing bytes after payload");
  try {
    flow.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: inconsistent flow: ") + e.what());
  }
  return flow;
}

inline void save_checkpoint(const FlowNetwork& flow, const std::string& path) {
  write_file_atomic(path, checkpoint_bytes(flow));
}

inline FlowNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return flow_from_checkpoint_bytes(bytes);
}

}  // namespace jko
