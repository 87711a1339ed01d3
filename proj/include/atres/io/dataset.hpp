#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "atres/error.hpp"
#include "atres/io/config.hpp"
#include "atres/io/png.hpp"
#include "atres/synth.hpp"
#include "atres/training.hpp"

namespace atres::io {

// Manifest: one `image.png mask.png` pair per line, paths relative to the
// manifest's directory. '#' comments.
struct ManifestEntry {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  const std::string text = read_text(path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (const auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = trim(line);
    if (line.empty()) continue;
    const auto sp = line.find_first_of(" \t");
    if (sp == std::string_view::npos) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected '<image> <mask>'");
    }
    ManifestEntry e;
    e.image = base / std::string(trim(line.substr(0, sp)));
    e.mask = base / std::string(trim(line.substr(sp + 1)));
    e.id = e.image.stem().string();
    out.push_back(std::move(e));
  }
  if (out.empty()) throw DataError(path + ": manifest lists no images");
  return out;
}

inline LabeledImage load_entry(const ManifestEntry& e) {
  LabeledImage li;
  li.id = e.id;
  li.image = read_rgb(e.image.string());
  li.mask = read_mask(e.mask.string());
  if (li.mask.width != li.image.width || li.mask.height != li.image.height) {
    throw DataError("mask '" + e.mask.string() + "' does not match image size");
  }
  return li;
}

inline std::vector<LabeledImage> load_dataset(const std::string& manifest) {
  std::vector<LabeledImage> out;
  for (const auto& e : read_manifest(manifest)) out.push_back(load_entry(e));
  return out;
}

// Writes images/, masks/ and manifest.txt under `dir`.
inline void write_synth_dataset(const std::string& dir, std::size_t n, const SynthOptions& opt) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::string manifest = "# synthetic set: n=" + std::to_string(n) + " size=" + std::to_string(opt.size) +
                         " seed=" + std::to_string(opt.seed) + "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledImage li = synth_image(i, opt);
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.png", i);
    write_rgb((fs::path(dir) / "images" / name).string(), li.image);
    write_mask((fs::path(dir) / "masks" / name).string(), li.mask);
    manifest += std::string("images/") + name + " masks/" + name + "\n";
  }
  write_text((fs::path(dir) / "manifest.txt").string(), manifest);
}

}  // namespace atres::io
