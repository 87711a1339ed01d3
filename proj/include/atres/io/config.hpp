#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atres/error.hpp"
#include "atres/model.hpp"
#include "atres/patch.hpp"
#include "atres/stitch.hpp"
#include "atres/training.hpp"

namespace atres::io {

// Flat `key = value` text. '#' starts a comment; blank lines are ignored.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline KeyValues parse_key_values(std::string_view text, const std::string& source = "config") {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw DataError(source + ":" + std::to_string(line_no) + ": empty key");
    for (const auto& [k, v] : kv) {
      if (k == key) throw DataError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class N>
N parse_number(std::string_view s, const std::string& key) {
  N v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw DataError("config: '" + key + "' has invalid value '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  while (true) {
    const auto p = s.find(sep);
    out.emplace_back(trim(s.substr(0, p)));
    if (p == std::string_view::npos) break;
    s = s.substr(p + 1);
  }
  return out;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_sizes(std::string_view s, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) out.push_back(parse_number<std::size_t>(part, key));
  return out;
}

inline std::string format_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "variant = " << variant_name(c.variant) << "\n"
     << "base_width = " << c.base_width << "\n"
     << "depth = " << c.depth << "\n"
     << "in_channels = " << c.in_channels << "\n"
     << "out_channels = " << c.out_channels << "\n"
     << "dropout_rate = " << format_double(c.dropout_rate) << "\n"
     << "patch_size = " << c.patch_size << "\n"
     << "dilation_schedule = " << join_sizes(c.dilation_schedule) << "\n"
     << "init_seed = " << c.init_seed << "\n";
  return os.str();
}

inline ModelConfig parse_model_config(std::string_view text) {
  ModelConfig c;
  for (const auto& [k, v] : parse_key_values(text, "model config")) {
    if (k == "variant") c.variant = parse_variant(v);
    else if (k == "base_width") c.base_width = parse_number<std::size_t>(v, k);
    else if (k == "depth") c.depth = parse_number<std::size_t>(v, k);
    else if (k == "in_channels") c.in_channels = parse_number<std::size_t>(v, k);
    else if (k == "out_channels") c.out_channels = parse_number<std::size_t>(v, k);
    else if (k == "dropout_rate") c.dropout_rate = parse_number<double>(v, k);
    else if (k == "patch_size") c.patch_size = parse_number<std::size_t>(v, k);
    else if (k == "dilation_schedule") c.dilation_schedule = parse_sizes(v, k);
    else if (k == "init_seed") c.init_seed = parse_number<std::uint64_t>(v, k);
    else throw DataError("model config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

// Every tunable of a run. base_width defaults small enough for CPU runs.
struct RunConfig {
  Variant variant = Variant::atresunet;
  std::size_t base_width = 8;
  std::size_t depth = 3;
  std::vector<std::size_t> dilation_schedule{1, 2, 4, 8, 16, 32};
  double dropout_rate = 0.25;
  std::size_t patch_size = 512;
  std::size_t stride = 0;  // 0: patch_size / 2
  double min_tissue = 0.30;
  int white_level = kDefaultWhiteLevel;
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  double dice_smooth = 1.0;
  bool augment = true;
  std::size_t offset = 0;  // 0: patch_size / 2
  std::vector<GeoOp> ensemble_transforms{kAllGeoOps.begin(), kAllGeoOps.end()};
  double threshold = 0.5;
  PadFill padding_fill = PadFill::zero;
  std::uint64_t seed = 0;

  std::size_t effective_stride() const { return stride ? stride : patch_size / 2; }
  std::size_t effective_offset() const { return offset ? offset : patch_size / 2; }

  ModelConfig model_config() const {
    ModelConfig m;
    m.variant = variant;
    m.base_width = base_width;
    m.depth = depth;
    m.dilation_schedule = dilation_schedule;
    m.dropout_rate = dropout_rate;
    m.patch_size = patch_size;
    m.init_seed = seed;
    return m;
  }

  TrainOptions train_options() const {
    TrainOptions t;
    t.model = model_config();
    t.seed = seed;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.lr = lr;
    t.dice_smooth = dice_smooth;
    t.augment = augment;
    t.patches.size = patch_size;
    t.patches.stride = effective_stride();
    t.patches.min_tissue = min_tissue;
    t.patches.white_level = white_level;
    return t;
  }

  StitchOptions stitch_options() const {
    StitchOptions s;
    s.patch_size = patch_size;
    s.offset = effective_offset();
    s.fill = padding_fill;
    s.batch = batch_size;
    return s;
  }

  void validate() const {
    model_config().validate();
    if (patch_size % effective_stride() != 0) throw DataError("config: stride must divide patch_size");
    if (effective_offset() >= patch_size) throw DataError("config: offset must be smaller than patch_size");
    if (!(min_tissue >= 0.0 && min_tissue <= 1.0)) throw DataError("config: min_tissue outside [0, 1]");
    if (!(threshold > 0.0 && threshold < 1.0)) throw DataError("config: threshold outside (0, 1)");
    if (!(lr >= 0.0)) throw DataError("config: lr must be >= 0");
    if (epochs == 0 || batch_size == 0) throw DataError("config: epochs and batch_size must be positive");
    if (ensemble_transforms.empty()) throw DataError("config: ensemble_transforms is empty");
  }
};

inline std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  std::string transforms;
  for (std::size_t i = 0; i < c.ensemble_transforms.size(); ++i)
    transforms += (i ? "," : "") + std::string(geo_op_name(c.ensemble_transforms[i]));
  os << "variant = " << variant_name(c.variant) << "\n"
     << "base_width = " << c.base_width << "\n"
     << "depth = " << c.depth << "\n"
     << "dilation_schedule = " << join_sizes(c.dilation_schedule) << "\n"
     << "dropout_rate = " << format_double(c.dropout_rate) << "\n"
     << "patch_size = " << c.patch_size << "\n"
     << "stride = " << c.effective_stride() << "\n"
     << "min_tissue = " << format_double(c.min_tissue) << "\n"
     << "white_level = " << c.white_level << "\n"
     << "lr = " << format_double(c.lr) << "\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "dice_smooth = " << format_double(c.dice_smooth) << "\n"
     << "augment = " << (c.augment ? "true" : "false") << "\n"
     << "offset = " << c.effective_offset() << "\n"
     << "ensemble_transforms = " << transforms << "\n"
     << "threshold = " << format_double(c.threshold) << "\n"
     << "padding_fill = " << pad_fill_name(c.padding_fill) << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

inline bool parse_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw DataError("config: '" + key + "' expects true or false");
}

// Unknown keys are rejected.
inline RunConfig parse_run_config(std::string_view text, const std::string& source = "config") {
  RunConfig c;
  for (const auto& [k, v] : parse_key_values(text, source)) {
    if (k == "variant") c.variant = parse_variant(v);
    else if (k == "base_width") c.base_width = parse_number<std::size_t>(v, k);
    else if (k == "depth") c.depth = parse_number<std::size_t>(v, k);
    else if (k == "dilation_schedule") c.dilation_schedule = parse_sizes(v, k);
    else if (k == "dropout_rate") c.dropout_rate = parse_number<double>(v, k);
    else if (k == "patch_size") c.patch_size = parse_number<std::size_t>(v, k);
    else if (k == "stride") c.stride = parse_number<std::size_t>(v, k);
    else if (k == "min_tissue") c.min_tissue = parse_number<double>(v, k);
    else if (k == "white_level") c.white_level = parse_number<int>(v, k);
    else if (k == "lr") c.lr = parse_number<double>(v, k);
    else if (k == "epochs") c.epochs = parse_number<std::size_t>(v, k);
    else if (k == "batch_size") c.batch_size = parse_number<std::size_t>(v, k);
    else if (k == "dice_smooth") c.dice_smooth = parse_number<double>(v, k);
    else if (k == "augment") c.augment = parse_bool(v, k);
    else if (k == "offset") c.offset = parse_number<std::size_t>(v, k);
    else if (k == "ensemble_transforms") {
      c.ensemble_transforms.clear();
      for (const auto& t : split(v, ',')) c.ensemble_transforms.push_back(parse_geo_op(t));
    } else if (k == "threshold") c.threshold = parse_number<double>(v, k);
    else if (k == "padding_fill") c.padding_fill = parse_pad_fill(v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(v, k);
    else throw DataError(source + ": unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text(path), path); }

}  // namespace atres::io
