#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "atres/error.hpp"
#include "atres/io/config.hpp"
#include "atres/model.hpp"
#include "atres/training.hpp"

namespace atres::io {

// Container: "ATRS", u32 version, u32 section count, then per section
// u32 name length, name, u64 payload length, payload. Little-endian.
inline constexpr char kCheckpointMagic[4] = {'A', 'T', 'R', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Provenance {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  double metric = 0.0;
  bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
  Model model;
  Provenance provenance;
  std::optional<AdamState> optimizer;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    buf_.append(reinterpret_cast<const char*>(b), sizeof(U));
  }
  void put_bytes(std::string_view s) { buf_.append(s); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : d_(data) {}

  template <class U>
  U get() {
    need(sizeof(U));
    unsigned char b[sizeof(U)];
    std::memcpy(b, d_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n) throw DataError("checkpoint: truncated data");
  }
  std::string_view d_;
  std::size_t pos_ = 0;
};

inline std::string encode_floats(const std::vector<float>& v) {
  Writer w;
  w.put<std::uint64_t>(v.size());
  for (float x : v) w.put(x);
  return std::move(w.str());
}

inline std::vector<float> decode_floats(Reader& r) {
  const auto n = r.get<std::uint64_t>();
  std::vector<float> v(n);
  for (auto& x : v) x = r.get<float>();
  return v;
}

}  // namespace detail

using Sections = std::vector<std::pair<std::string, std::string>>;

inline std::string encode_sections(const Sections& sections) {
  detail::Writer w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint64_t>(payload.size());
    w.put_bytes(payload);
  }
  return std::move(w.str());
}

inline Sections decode_sections(std::string_view data) {
  detail::Reader r(data);
  if (data.size() < 4 || data.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) {
    throw DataError("checkpoint: bad magic (not an ATRS file)");
  }
  r.get_bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Sections out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    std::string name(r.get_bytes(nlen));
    const auto plen = r.get<std::uint64_t>();
    out.emplace_back(std::move(name), std::string(r.get_bytes(plen)));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return out;
}

inline std::string encode_checkpoint(Model& model, const Provenance& prov, const AdamState* adam = nullptr) {
  Sections s;
  s.emplace_back("config", format_model_config(model.config()));
  {
    detail::Writer w;
    w.put(prov.seed);
    w.put(prov.epoch);
    w.put(prov.metric);
    s.emplace_back("provenance", std::move(w.str()));
  }
  model.visit_parameters([&](const std::string& name, Tensor& t) {
    detail::Writer w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (float x : t.data()) w.put(x);
    s.emplace_back("param/" + name, std::move(w.str()));
  });
  model.visit_buffers([&](const std::string& name, std::vector<double>& b) {
    detail::Writer w;
    w.put<std::uint64_t>(b.size());
    for (double x : b) w.put(x);
    s.emplace_back("buffer/" + name, std::move(w.str()));
  });
  if (adam) {
    detail::Writer w;
    w.put(adam->beta1);
    w.put(adam->beta2);
    w.put(adam->eps);
    w.put(adam->base_lr);
    w.put(adam->step);
    w.put<std::uint64_t>(adam->m.size());
    for (std::size_t i = 0; i < adam->m.size(); ++i) {
      w.put_bytes(detail::encode_floats(adam->m[i]));
      w.put_bytes(detail::encode_floats(adam->v[i]));
    }
    s.emplace_back("adam", std::move(w.str()));
  }
  return encode_sections(s);
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  const Sections sections = decode_sections(data);
  std::map<std::string, std::string_view> by_name;
  for (const auto& [n, p] : sections) {
    if (!by_name.emplace(n, p).second) throw DataError("checkpoint: duplicate section '" + n + "'");
  }
  auto section = [&](const std::string& n) -> std::string_view {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw DataError("checkpoint: missing section '" + n + "'");
    return it->second;
  };

  Checkpoint ck;
  ck.model = Model(parse_model_config(section("config")));
  {
    detail::Reader r(section("provenance"));
    ck.provenance.seed = r.get<std::uint64_t>();
    ck.provenance.epoch = r.get<std::uint64_t>();
    ck.provenance.metric = r.get<double>();
  }
  std::size_t used = 2;
  ck.model.visit_parameters([&](const std::string& name, Tensor& t) {
    detail::Reader r(section("param/" + name));
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t.shape()) {
      throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (auto& x : dst) x = r.get<float>();
    if (!r.done()) throw DataError("checkpoint: parameter '" + name + "' has trailing bytes");
    ++used;
  });
  ck.model.visit_buffers([&](const std::string& name, std::vector<double>& b) {
    detail::Reader r(section("buffer/" + name));
    const auto n = r.get<std::uint64_t>();
    if (n != b.size()) throw DataError("checkpoint: buffer '" + name + "' has wrong length");
    for (auto& x : b) x = r.get<double>();
    ++used;
  });
  if (auto it = by_name.find("adam"); it != by_name.end()) {
    detail::Reader r(it->second);
    AdamState a;
    a.beta1 = r.get<double>();
    a.beta2 = r.get<double>();
    a.eps = r.get<double>();
    a.base_lr = r.get<double>();
    a.step = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      a.m.push_back(detail::decode_floats(r));
      a.v.push_back(detail::decode_floats(r));
    }
    ck.optimizer = std::move(a);
    ++used;
  }
  if (used != sections.size()) throw DataError("checkpoint: unexpected extra sections");
  ck.model.eval();
  return ck;
}

inline void save_checkpoint(const std::string& path, Model& model, const Provenance& prov,
                            const AdamState* adam = nullptr) {
  write_text(path, encode_checkpoint(model, prov, adam));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace atres::io
