#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "modrestore/tensor.hpp"

namespace modrestore {

/// 8-bit PNG <-> Image in [0,1]. Decoding always yields RGB (gray and
/// palette inputs are expanded, alpha is dropped); encoding writes RGB or
/// gray depending on the channel count, quantizing round(v * 255).
Image decode_png(std::string_view bytes);
std::string encode_png(const Image& img);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

struct NamedImage {
  std::string name;  // file stem
  Image image;
};

/// Every *.png in `dir`, sorted by file name.
std::vector<NamedImage> load_png_dir(const std::filesystem::path& dir);

}  // namespace modrestore
