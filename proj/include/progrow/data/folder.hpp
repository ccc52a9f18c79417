#pragma once

#include <png.h>

#include <filesystem>
#include <fstream>

#include "progrow/data/dataset.hpp"

namespace progrow::data {

struct RasterImage {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved HWC as decoded
};

// Binary netpbm (P5 grayscale / P6 RGB, maxval <= 255).
inline RasterImage read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw DataError(path.string() + ": unsupported netpbm variant '" + magic + "'");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    std::size_t v = 0;
    if (!(in >> v)) throw DataError(path.string() + ": malformed netpbm header");
    return v;
  };
  RasterImage img;
  img.channels = magic == "P5" ? 1 : 3;
  img.width = next_int();
  img.height = next_int();
  const auto maxval = next_int();
  if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit netpbm supported");
  in.get();
  img.pixels.resize(img.channels * img.height * img.width);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path.string() + ": truncated pixel data (" + std::to_string(img.pixels.size() - static_cast<std::size_t>(in.gcount())) +
                    " bytes missing)");
  return img;
}

inline RasterImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw DataError(path.string() + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  RasterImage img;
  img.channels = gray ? 1 : 3;
  img.width = image.width;
  img.height = image.height;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(path.string() + ": " + image.message);
  }
  return img;
}

inline RasterImage read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_netpbm(path);
  throw DataError("unsupported image format: " + path.string());
}

// Bilinear resample of an HWC image into planar CHW with `channels` outputs.
// RGB -> gray uses ITU-R BT.601 luma; gray -> RGB replicates.
inline std::vector<std::uint8_t> to_planar(const RasterImage& img, std::size_t channels, std::size_t size) {
  std::vector<std::uint8_t> out(channels * size * size);
  auto sample = [&](std::size_t c, double fy, double fx) {
    const double y = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const double x = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const auto y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
    auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(img.pixels[(yy * img.width + xx) * img.channels + c]); };
    return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) + wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
  };
  const double sy = static_cast<double>(img.height) / static_cast<double>(size);
  const double sx = static_cast<double>(img.width) / static_cast<double>(size);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5, fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        double v;
        if (img.channels == channels) v = sample(c, fy, fx);
        else if (img.channels == 1) v = sample(0, fy, fx);
        else v = 0.299 * sample(0, fy, fx) + 0.587 * sample(1, fy, fx) + 0.114 * sample(2, fy, fx);
        out[(c * size + y) * size + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  return out;
}

struct FolderOptions {
  std::size_t image_size = 96;
  std::size_t channels = 1;
  SplitFractions split;
  std::uint64_t seed = 0;
};

// One subdirectory per class (sorted by name -> label 0..C-1), each holding
// .png / .pgm / .ppm files.
inline DatasetSplit load_labeled_folder(const std::filesystem::path& root, const FolderOptions& opt) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset folder not found: " + root.string());
  if (opt.channels != 1 && opt.channels != 3) throw DataError("folder loader supports 1 or 3 channels");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("no class subdirectories under " + root.string());

  LabeledImages all{opt.channels, opt.image_size, opt.image_size, {}, {}, {}};
  DatasetSplit split;
  std::size_t id = 0;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    split.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto planar = to_planar(read_image(f), opt.channels, opt.image_size);
      all.push(planar.data(), static_cast<int>(c), id++);
    }
  }
  if (all.size() == 0) throw DataError("no images found under " + root.string());
  stratified_split(all, split.class_names.size(), opt.split, opt.seed, split.train, split.val, split.test);
  split.class_counts = count_classes({&split.train, &split.val, &split.test}, split.class_names.size());
  split.normalization = compute_normalization(split.train);
  split.provenance = {{"source", "folder"},
                      {"path", root.string()},
                      {"seed", opt.seed},
                      {"image_size", opt.image_size},
                      {"channels", opt.channels},
                      {"split", {{"val", opt.split.val}, {"test", opt.split.test}}}};
  split.validate();
  return split;
}

}  // namespace progrow::data
