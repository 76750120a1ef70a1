#include "bifuse/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <spdlog/spdlog.h>

#include "bifuse/archive.hpp"
#include "bifuse/config.hpp"
#include "bifuse/nn.hpp"

namespace bifuse {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kImageExt{".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"};

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kImageExt.count(ext) != 0;
}

std::map<std::string, fs::path> list_images(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image(e.path())) out.emplace(e.path().stem().string(), e.path());
  return out;
}

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

FusionTask task_preset(const std::string& name) {
  if (name == "ivif") return {name, 3, 1, ChromaSource::X};
  if (name == "mif") return {name, 1, 3, ChromaSource::Y};
  if (name == "mef") return {name, 3, 3, ChromaSource::Blend};
  if (name == "mff") return {name, 3, 3, ChromaSource::Blend};
  throw ConfigError({"task: unknown task '" + name + "' (ivif|mif|mef|mff)"});
}

Image read_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image " + path.string());
  double full_scale;
  switch (m.depth()) {
    case CV_8U: full_scale = 255.0; break;
    case CV_16U: full_scale = 65535.0; break;
    default: throw IoError("unsupported pixel depth in " + path.string() + " (8 or 16-bit expected)");
  }
  const int ch = m.channels();
  const std::size_t out_ch = ch == 1 ? 1 : 3;
  if (ch != 1 && ch != 3 && ch != 4) throw IoError("unsupported channel count in " + path.string());
  cv::Mat d;
  m.convertTo(d, CV_64F);
  Image img(static_cast<std::size_t>(d.rows), static_cast<std::size_t>(d.cols), out_ch);
  for (int r = 0; r < d.rows; ++r) {
    const double* row = d.ptr<double>(r);
    for (int c = 0; c < d.cols; ++c) {
      const double* px = row + c * ch;
      const auto y = static_cast<std::size_t>(r), x = static_cast<std::size_t>(c);
      if (out_ch == 1) {
        img.at(y, x) = px[0] / full_scale;
      } else {  // OpenCV stores BGR(A)
        img.at(y, x, 0) = px[2] / full_scale;
        img.at(y, x, 1) = px[1] / full_scale;
        img.at(y, x, 2) = px[0] / full_scale;
      }
    }
  }
  return img;
}

void write_png(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_png: 1 or 3 channels required");
  const int type = img.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), type);
  for (std::size_t y = 0; y < img.height; ++y) {
    auto* row = m.ptr<unsigned char>(static_cast<int>(y));
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        // std::nearbyint rounds half to even under the default rounding mode
        const double v = std::nearbyint(std::clamp(img.at(y, x, c), 0.0, 1.0) * 255.0);
        const std::size_t dst = img.channels == 1 ? 0 : 2 - c;
        row[x * img.channels + dst] = static_cast<unsigned char>(v);
      }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image " + path.string());
}

PairDataset PairDataset::load(const fs::path& root, const FusionTask& task, const fs::path& manifest) {
  PairDataset ds;
  ds.task_ = task;
  std::vector<std::tuple<std::string, fs::path, fs::path>> pairs;
  if (!manifest.empty()) {
    std::ifstream f(manifest);
    if (!f) throw IoError("cannot open manifest " + manifest.string());
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string id, a, b;
      if (!(ls >> id >> a >> b)) throw IoError("malformed manifest line: " + line);
      const fs::path pa = root / a, pb = root / b;
      if (!fs::exists(pa) || !fs::exists(pb)) {
        spdlog::warn("dataset: pair '{}' has a missing file, skipped", id);
        ds.skipped_.push_back(id);
        continue;
      }
      pairs.emplace_back(id, pa, pb);
    }
  } else {
    const auto a = list_images(root / "source_a");
    const auto b = list_images(root / "source_b");
    for (const auto& [stem, pa] : a) {
      auto it = b.find(stem);
      if (it == b.end()) {
        spdlog::warn("dataset: {} has no counterpart in source_b, skipped", pa.filename().string());
        ds.skipped_.push_back(pa.filename().string());
        continue;
      }
      pairs.emplace_back(stem, pa, it->second);
    }
    for (const auto& [stem, pb] : b)
      if (!a.count(stem)) {
        spdlog::warn("dataset: {} has no counterpart in source_a, skipped", pb.filename().string());
        ds.skipped_.push_back(pb.filename().string());
      }
  }
  std::sort(pairs.begin(), pairs.end());
  for (const auto& [id, pa, pb] : pairs) {
    PairSample s{id, to_channels(read_image(pa), task.channels_x), to_channels(read_image(pb), task.channels_y)};
    if (!s.x.same_geometry(s.y)) {
      throw ShapeError("dataset: pair '" + id + "' has mismatched sizes " + std::to_string(s.x.height) + "x" +
                       std::to_string(s.x.width) + " vs " + std::to_string(s.y.height) + "x" +
                       std::to_string(s.y.width));
    }
    ds.samples_.push_back(std::move(s));
  }
  if (ds.samples_.empty()) throw IoError("dataset at " + root.string() + " contains no matched pairs");
  return ds;
}

PairDataset PairDataset::from_samples(std::vector<PairSample> samples, FusionTask task) {
  PairDataset ds;
  ds.task_ = std::move(task);
  for (auto& s : samples) {
    if (!s.x.same_geometry(s.y)) throw ShapeError("dataset: pair '" + s.id + "' has mismatched sizes");
    s.x = to_channels(s.x, ds.task_.channels_x);
    s.y = to_channels(s.y, ds.task_.channels_y);
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (samples.empty()) throw IoError("dataset contains no pairs");
  ds.samples_ = std::move(samples);
  return ds;
}

std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t t) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32), 0x6261u};
  return std::mt19937_64(seq);
}

Batch sample_batch(const PairDataset& ds, std::size_t batch_size, std::size_t crop, std::mt19937_64& rng,
                   bool flip) {
  if (batch_size == 0) throw ShapeError("sample_batch: batch_size must be at least 1");
  bool any = false;
  for (std::size_t i = 0; i < ds.size() && !any; ++i) any = ds[i].x.height >= crop && ds[i].x.width >= crop;
  if (!any) throw ShapeError("sample_batch: no image is at least " + std::to_string(crop) + "x" + std::to_string(crop));

  Batch batch;
  batch.reserve(batch_size);
  while (batch.size() < batch_size) {
    const PairSample& s = ds[uniform_index(rng, ds.size())];
    if (s.x.height < crop || s.x.width < crop) continue;
    const std::size_t y0 = uniform_index(rng, s.x.height - crop + 1);
    const std::size_t x0 = uniform_index(rng, s.x.width - crop + 1);
    PairSample c{s.id, bifuse::crop(s.x, y0, x0, crop, crop), bifuse::crop(s.y, y0, x0, crop, crop)};
    if (flip && (rng() & 1u)) {
      c.x = hflip(c.x);
      c.y = hflip(c.y);
    }
    batch.push_back(std::move(c));
  }
  return batch;
}

std::pair<Image, PadRecord> pad_to_patch_multiple(const Image& img, std::size_t patch) {
  if (patch == 0) throw ShapeError("pad_to_patch_multiple: patch must be at least 1");
  PadRecord rec{(patch - img.height % patch) % patch, (patch - img.width % patch) % patch, img.height, img.width};
  if (rec.pad_bottom == 0 && rec.pad_right == 0) return {img, rec};
  Image out(img.height + rec.pad_bottom, img.width + rec.pad_right, img.channels);
  for (std::size_t y = 0; y < out.height; ++y) {
    const std::size_t sy = mirror(static_cast<std::ptrdiff_t>(y), img.height);
    for (std::size_t x = 0; x < out.width; ++x) {
      const std::size_t sx = mirror(static_cast<std::ptrdiff_t>(x), img.width);
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return {out, rec};
}

Image unpad(const Image& img, const PadRecord& r) { return crop(img, 0, 0, r.height, r.width); }

LumaChroma split_luminance_chroma(const Image& rgb) {
  if (rgb.channels != 3) throw ShapeError("split_luminance_chroma: 3-channel input required");
  LumaChroma out{Image(rgb.height, rgb.width, 1), Image(rgb.height, rgb.width, 2)};
  for (std::size_t i = 0; i < rgb.height * rgb.width; ++i) {
    const double r = rgb.data[3 * i], g = rgb.data[3 * i + 1], b = rgb.data[3 * i + 2];
    const double y = kLumaR * r + kLumaG * g + kLumaB * b;
    out.luma.data[i] = y;
    out.chroma.data[2 * i] = 0.5 + (b - y) / (2.0 * (1.0 - kLumaB));
    out.chroma.data[2 * i + 1] = 0.5 + (r - y) / (2.0 * (1.0 - kLumaR));
  }
  return out;
}

Image merge_luminance_chroma(const Image& luma, const Image& chroma) {
  if (luma.channels != 1 || chroma.channels != 2 || !luma.same_geometry(chroma)) {
    throw ShapeError("merge_luminance_chroma: expected 1-channel luma and 2-channel chroma of equal size");
  }
  Image out(luma.height, luma.width, 3);
  for (std::size_t i = 0; i < luma.height * luma.width; ++i) {
    const double y = luma.data[i], cb = chroma.data[2 * i] - 0.5, cr = chroma.data[2 * i + 1] - 0.5;
    const double r = y + 2.0 * (1.0 - kLumaR) * cr;
    const double b = y + 2.0 * (1.0 - kLumaB) * cb;
    out.data[3 * i] = r;
    out.data[3 * i + 1] = (y - kLumaR * r - kLumaB * b) / kLumaG;
    out.data[3 * i + 2] = b;
  }
  return out;
}

Image blend_chroma(const Image& a, const Image& b) {
  Image out(a.height, a.width, 2);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double wa = std::abs(a.data[i] - 0.5), wb = std::abs(b.data[i] - 0.5);
    out.data[i] = wa + wb > 0.0 ? (a.data[i] * wa + b.data[i] * wb) / (wa + wb) : 0.5;
  }
  return out;
}

Image apply_chroma(const Image& fused_luma, const Image& x, const Image& y, ChromaSource source) {
  const bool x_color = x.channels == 3, y_color = y.channels == 3;
  Image chroma;
  if (source == ChromaSource::Blend && x_color && y_color) {
    chroma = blend_chroma(split_luminance_chroma(x).chroma, split_luminance_chroma(y).chroma);
  } else if ((source == ChromaSource::X || source == ChromaSource::Blend) && x_color) {
    chroma = split_luminance_chroma(x).chroma;
  } else if (y_color) {
    chroma = split_luminance_chroma(y).chroma;
  } else {
    return fused_luma;  // both sources gray
  }
  return clamp01(merge_luminance_chroma(fused_luma, chroma));
}

std::vector<PairSample> make_synthetic_pairs(std::size_t count, std::size_t h, std::size_t w, const FusionTask& task,
                                             std::uint64_t seed) {
  std::vector<PairSample> out;
  InitRng rng(seed);
  for (std::size_t n = 0; n < count; ++n) {
    // Shared scene: a smooth illumination field, oriented texture, rectangles
    // visible in both views and warm blobs that only the second view sees.
    const double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3), phase = rng.uniform(0, 6.283);
    const double hue[3] = {rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9)};
    struct Rect { double y0, x0, y1, x1, v; };
    std::vector<Rect> rects(3);
    for (auto& r : rects) {
      r.y0 = rng.uniform(0, static_cast<double>(h)); r.x0 = rng.uniform(0, static_cast<double>(w));
      r.y1 = r.y0 + rng.uniform(4, static_cast<double>(h) / 2); r.x1 = r.x0 + rng.uniform(4, static_cast<double>(w) / 2);
      r.v = rng.uniform(-0.3, 0.3);
    }
    struct Blob { double y, x, s, a; };
    std::vector<Blob> blobs(2);
    for (auto& b : blobs) {
      b.y = rng.uniform(0, static_cast<double>(h)); b.x = rng.uniform(0, static_cast<double>(w));
      b.s = rng.uniform(2, static_cast<double>(std::min(h, w)) / 4 + 2); b.a = rng.uniform(0.4, 0.7);
    }
    Image vis(h, w, 3), ir(h, w, 1);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double yi = static_cast<double>(i), xj = static_cast<double>(j);
        const double light = 0.35 + 0.25 * (yi / static_cast<double>(h)) + 0.1 * std::sin(0.05 * xj + phase);
        const double tex = 0.15 * std::sin(fx * xj + fy * yi + phase);
        double structure = 0.0;
        for (const auto& r : rects)
          if (yi >= r.y0 && yi < r.y1 && xj >= r.x0 && xj < r.x1) structure += r.v;
        double heat = 0.0;
        for (const auto& b : blobs)
          heat += b.a * std::exp(-((yi - b.y) * (yi - b.y) + (xj - b.x) * (xj - b.x)) / (2 * b.s * b.s));
        for (std::size_t c = 0; c < 3; ++c)
          vis.at(i, j, c) = std::clamp((light + tex + structure) * (0.6 + 0.6 * hue[c]), 0.0, 1.0);
        ir.at(i, j) = std::clamp(0.2 + 0.3 * light + 0.5 * structure + heat, 0.0, 1.0);
      }
    char id[32];
    std::snprintf(id, sizeof id, "pair_%03zu", n);
    out.push_back({id, to_channels(vis, task.channels_x), to_channels(ir, task.channels_y)});
  }
  return out;
}

void write_pair_dataset(const fs::path& root, const std::vector<PairSample>& samples) {
  for (const auto& s : samples) {
    write_png(root / "source_a" / (s.id + ".png"), s.x);
    write_png(root / "source_b" / (s.id + ".png"), s.y);
  }
}

}  // namespace bifuse
