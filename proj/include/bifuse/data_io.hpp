#pragma once

// Paired-image ingestion: task presets, image files, random aligned crops,
// patch padding and the luminance/chroma protocol.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bifuse/image.hpp"

namespace bifuse {

enum class ChromaSource { X, Y, Blend };

struct FusionTask {
  std::string name;
  std::size_t channels_x = 3;
  std::size_t channels_y = 1;
  ChromaSource chroma = ChromaSource::X;
};

/// ivif: visible RGB + infrared gray, chroma from visible.
/// mif:  MRI gray + PET/SPECT RGB, chroma from the functional image.
/// mef / mff: two RGB inputs, chroma blended by saturation.
FusionTask task_preset(const std::string& name);

struct PairSample {
  std::string id;
  Image x;
  Image y;
};

using Batch = std::vector<PairSample>;

/// Reads 8/16-bit PNG, BMP, TIFF (and anything else OpenCV decodes) as RGB or
/// gray intensities in [0, 1]. Throws IoError.
Image read_image(const std::filesystem::path& path);
/// 8-bit PNG, values clamped to [0, 1] and quantized round-half-even.
void write_png(const std::filesystem::path& path, const Image& img);

class PairDataset {
 public:
  /// root/source_a and root/source_b matched by file stem, or an explicit
  /// manifest of "id path_a path_b" lines (paths relative to root).
  /// Unmatched files are skipped with a warning and listed in skipped().
  static PairDataset load(const std::filesystem::path& root, const FusionTask& task,
                          const std::filesystem::path& manifest = {});
  static PairDataset from_samples(std::vector<PairSample> samples, FusionTask task);

  std::size_t size() const { return samples_.size(); }
  const PairSample& operator[](std::size_t i) const { return samples_.at(i); }
  const std::vector<std::string>& skipped() const { return skipped_; }
  const FusionTask& task() const { return task_; }

 private:
  FusionTask task_;
  std::vector<PairSample> samples_;  // sorted by id
  std::vector<std::string> skipped_;
};

/// Generator for iteration t; the batch at t depends only on (seed, t).
std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t t);

/// Aligned random crops, sampled with replacement. Images smaller than `crop`
/// are redrawn; a dataset with none large enough throws ShapeError.
Batch sample_batch(const PairDataset& dataset, std::size_t batch_size, std::size_t crop, std::mt19937_64& rng,
                   bool hflip = false);

struct PadRecord {
  std::size_t pad_bottom = 0;
  std::size_t pad_right = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const PadRecord&) const = default;
};

/// Reflect-pad bottom/right up to the next multiple of `patch`.
std::pair<Image, PadRecord> pad_to_patch_multiple(const Image& img, std::size_t patch);
Image unpad(const Image& img, const PadRecord& record);

struct LumaChroma {
  Image luma;    // 1 channel
  Image chroma;  // 2 channels (Cb, Cr), neutral at 0.5
};

/// BT.601 full-range YCbCr.
LumaChroma split_luminance_chroma(const Image& rgb);
Image merge_luminance_chroma(const Image& luma, const Image& chroma);
/// Per-pixel saturation-weighted chroma of two sources.
Image blend_chroma(const Image& a, const Image& b);
/// Colorize a fused luminance according to the task's chroma source.
Image apply_chroma(const Image& fused_luma, const Image& x, const Image& y, ChromaSource source);

/// Procedural paired scenes (textured RGB / gray hot-target style) for smoke
/// runs and tests. Channel counts follow the task.
std::vector<PairSample> make_synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                             const FusionTask& task, std::uint64_t seed);
/// Write samples as root/source_a/<id>.png and root/source_b/<id>.png.
void write_pair_dataset(const std::filesystem::path& root, const std::vector<PairSample>& samples);

}  // namespace bifuse
