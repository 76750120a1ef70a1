#pragma once

// Fusion quality metrics on single-channel luminance images in [0, 1], and
// the per-directory evaluation protocol.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bifuse/config.hpp"
#include "bifuse/image.hpp"

namespace bifuse {

/// A metric value that may be +inf (PSNR of identical images) or undefined
/// (zero-variance correlation). Only finite values enter aggregates.
struct MetricValue {
  enum class Kind { Finite, Infinite, Undefined };
  Kind kind = Kind::Undefined;
  double value = 0.0;

  static MetricValue finite(double v) { return {Kind::Finite, v}; }
  static MetricValue infinite() { return {Kind::Infinite, 0.0}; }
  static MetricValue undefined() { return {}; }
  bool is_finite() const { return kind == Kind::Finite; }
  std::string str() const;
};

/// Histogram mutual information in bits, 256 bins, bin = round(255 v).
double mutual_information(const Image& a, const Image& b);
double mi_fusion(const Image& f, const Image& x, const Image& y);

/// 10 log10(1 / MSE); identical images give the infinite marker.
MetricValue psnr(const Image& a, const Image& b);
/// PSNR of the mean of the two source MSEs.
MetricValue psnr_fusion(const Image& f, const Image& x, const Image& y);

/// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(const Image& a, const Image& b);
/// Mean of the defined correlations with each source.
MetricValue cc_fusion(const Image& f, const Image& x, const Image& y);

/// Mean SSIM over valid Gaussian windows (no autograd).
double ssim_index(const Image& a, const Image& b, std::size_t window = 11, double sigma = 1.5);

/// Pixel-domain multi-scale VIF of `distorted` against `reference`. Local
/// statistics use same-size Gaussian filtering with symmetric boundaries.
/// Scales whose image would fall below 2x2 are skipped with a warning.
double vif(const Image& reference, const Image& distorted, const VifOptions& opt = {});
double vif_fusion(const Image& f, const Image& x, const Image& y, const VifOptions& opt = {});

double qabf(const Image& f, const Image& x, const Image& y, const QabfOptions& opt = {});
/// Throws ShapeError when the image is smaller than the window.
double qy(const Image& f, const Image& x, const Image& y, const QyOptions& opt = {});

inline const std::vector<std::string>& all_metric_names() {
  static const std::vector<std::string> names{"mi", "vif", "qabf", "qy", "cc", "psnr", "ssim"};
  return names;
}

/// Selected metrics of one triple; keys from all_metric_names(). "ssim" is
/// the mean of SSIM(f, x) and SSIM(f, y).
std::map<std::string, MetricValue> evaluate_triple(const Image& f, const Image& x, const Image& y,
                                                   const std::vector<std::string>& metrics,
                                                   const MetricOptions& opt = {});

struct MetricAggregate {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;     // finite values
  std::size_t excluded = 0;  // infinite or undefined
};

struct MetricReport {
  std::vector<std::string> metrics;
  std::vector<std::string> sample_ids;
  std::vector<std::map<std::string, MetricValue>> per_sample;
  std::map<std::string, MetricAggregate> aggregate;
  std::vector<std::string> unmatched;

  void recompute_aggregates();
  /// Tab-separated rows plus a "# aggregate" block.
  std::string to_tsv() const;
};

/// Evaluates every fused image whose stem has a counterpart in both source
/// directories. Unmatched files are listed in the report. Throws IoError when
/// nothing matches.
MetricReport evaluate_dataset(const std::filesystem::path& fused_dir, const std::filesystem::path& source_a_dir,
                              const std::filesystem::path& source_b_dir, const std::vector<std::string>& metrics,
                              const MetricOptions& opt = {});

/// Box plot (median, quartiles, 1.5 IQR whiskers, mean marker) of one
/// metric across reports, e.g. one report per method.
std::string box_plot_svg(const std::string& metric, const std::vector<std::string>& labels,
                         const std::vector<const MetricReport*>& reports);

}  // namespace bifuse
