#include "bifuse/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "bifuse/archive.hpp"
#include "bifuse/data_io.hpp"
#include "bifuse/losses.hpp"

namespace bifuse {

namespace fs = std::filesystem;

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(std::size_t h_, std::size_t w_, double fill = 0.0) : h(h_), w(w_), v(h_ * w_, fill) {}
  double& operator()(std::size_t y, std::size_t x) { return v[y * w + x]; }
  double operator()(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

Plane plane_of(const Image& img, double scale = 1.0) {
  Image l = luminance(img);
  Plane p(l.height, l.width);
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = l.data[i] * scale;
  return p;
}

void check_triple(const Image& f, const Image& x, const Image& y, const char* what) {
  if (!f.same_geometry(x) || !f.same_geometry(y)) throw ShapeError(std::string(what) + ": image sizes differ");
}

Plane mul(const Plane& a, const Plane& b) {
  Plane o(a.h, a.w);
  for (std::size_t i = 0; i < o.v.size(); ++i) o.v[i] = a.v[i] * b.v[i];
  return o;
}

Plane filter_valid(const Plane& p, const std::vector<double>& k, std::size_t n) {
  Plane o(p.h - n + 1, p.w - n + 1);
  for (std::size_t y = 0; y < o.h; ++y)
    for (std::size_t x = 0; x < o.w; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s += k[i * n + j] * p(y + i, x + j);
      o(y, x) = s;
    }
  return o;
}

std::size_t symmetric_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

// Odd n, output the size of the input; out-of-range taps mirror about the edge
// with the edge sample repeated.
Plane filter_same_symmetric(const Plane& p, const std::vector<double>& k, std::size_t n) {
  Plane o(p.h, p.w);
  const auto half = static_cast<std::ptrdiff_t>(n / 2);
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t sy = symmetric_index(static_cast<std::ptrdiff_t>(y + i) - half, p.h);
        for (std::size_t j = 0; j < n; ++j)
          s += k[i * n + j] * p(sy, symmetric_index(static_cast<std::ptrdiff_t>(x + j) - half, p.w));
      }
      o(y, x) = s;
    }
  return o;
}

constexpr double kSobelZero = 1e-12;  // responses below this are rounding residue

// 3x3 correlation; out-of-range samples take the nearest edge value.
Plane filter3_edge(const Plane& p, const std::array<double, 9>& k) {
  Plane o(p.h, p.w);
  const auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < p.w; ++x) {
      double s = 0.0;
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j)
          s += k[static_cast<std::size_t>((i + 1) * 3 + (j + 1))] *
               p(clampi(static_cast<std::ptrdiff_t>(y) + i, p.h), clampi(static_cast<std::ptrdiff_t>(x) + j, p.w));
      o(y, x) = s;
    }
  return o;
}

struct WindowStats {
  Plane mu_a, mu_b, var_a, var_b, cov;
};

WindowStats window_stats(const Plane& a, const Plane& b, std::size_t n, double sigma) {
  const auto k = gaussian_window(n, sigma);
  WindowStats s{filter_valid(a, k, n), filter_valid(b, k, n), filter_valid(mul(a, a), k, n),
                filter_valid(mul(b, b), k, n), filter_valid(mul(a, b), k, n)};
  for (std::size_t i = 0; i < s.mu_a.v.size(); ++i) {
    s.var_a.v[i] -= s.mu_a.v[i] * s.mu_a.v[i];
    s.var_b.v[i] -= s.mu_b.v[i] * s.mu_b.v[i];
    s.cov.v[i] -= s.mu_a.v[i] * s.mu_b.v[i];
  }
  return s;
}

Plane ssim_map(const WindowStats& s) {
  Plane o(s.mu_a.h, s.mu_a.w);
  for (std::size_t i = 0; i < o.v.size(); ++i) {
    const double ma = s.mu_a.v[i], mb = s.mu_b.v[i];
    o.v[i] = ((2.0 * ma * mb + kC1) * (2.0 * s.cov.v[i] + kC2)) /
             ((ma * ma + mb * mb + kC1) * (s.var_a.v[i] + s.var_b.v[i] + kC2));
  }
  return o;
}

double mean_of(const Plane& p) {
  double s = 0.0;
  for (double v : p.v) s += v;
  return s / static_cast<double>(p.v.size());
}

std::optional<double> vif_planes(Plane ref, Plane dist, const VifOptions& opt) {
  constexpr double kTiny = 1e-10;
  double num = 0.0, den = 0.0;
  for (std::size_t scale = 1; scale <= opt.scales; ++scale) {
    const std::size_t n = (std::size_t{1} << (opt.scales - scale + 1)) + 1;
    const auto k = gaussian_window(n, static_cast<double>(n) / 5.0);
    if (scale > 1) {
      if (ref.h < 4 || ref.w < 4) {
        spdlog::warn("vif: image too small for scale {} of {}, using {} scale(s)", scale, opt.scales, scale - 1);
        break;
      }
      ref = filter_same_symmetric(ref, k, n);
      dist = filter_same_symmetric(dist, k, n);
      Plane r2((ref.h + 1) / 2, (ref.w + 1) / 2), d2(r2.h, r2.w);
      for (std::size_t y = 0; y < r2.h; ++y)
        for (std::size_t x = 0; x < r2.w; ++x) {
          r2(y, x) = ref(2 * y, 2 * x);
          d2(y, x) = dist(2 * y, 2 * x);
        }
      ref = std::move(r2);
      dist = std::move(d2);
    }
    const Plane mu1 = filter_same_symmetric(ref, k, n), mu2 = filter_same_symmetric(dist, k, n);
    const Plane e11 = filter_same_symmetric(mul(ref, ref), k, n);
    const Plane e22 = filter_same_symmetric(mul(dist, dist), k, n);
    const Plane e12 = filter_same_symmetric(mul(ref, dist), k, n);
    for (std::size_t i = 0; i < mu1.v.size(); ++i) {
      double s1 = std::max(0.0, e11.v[i] - mu1.v[i] * mu1.v[i]);
      const double s2 = std::max(0.0, e22.v[i] - mu2.v[i] * mu2.v[i]);
      const double s12 = e12.v[i] - mu1.v[i] * mu2.v[i];
      // Unregularized ratio (s1 >= kTiny here) so a distortion-free channel
      // gives g = 1, sv = 0 and a term of exactly 1.
      double g = s1 < kTiny ? 0.0 : s12 / s1;
      double sv = s2 - g * s12;
      if (s1 < kTiny) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kTiny) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      sv = std::max(sv, 0.0);
      num += std::log10(1.0 + g * g * s1 / (sv + opt.sigma_nsq));
      den += std::log10(1.0 + s1 / opt.sigma_nsq);
    }
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace

std::string MetricValue::str() const {
  switch (kind) {
    case Kind::Finite: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.10g", value);
      return buf;
    }
    case Kind::Infinite: return "inf";
    case Kind::Undefined: break;
  }
  return "undefined";
}

double mutual_information(const Image& a_img, const Image& b_img) {
  if (!a_img.same_geometry(b_img)) throw ShapeError("mutual_information: image sizes differ");
  const Plane a = plane_of(a_img), b = plane_of(b_img);
  auto bin = [](double v) { return static_cast<std::size_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  std::vector<double> joint(256 * 256, 0.0), pa(256, 0.0), pb(256, 0.0);
  const double inv = 1.0 / static_cast<double>(a.v.size());
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const std::size_t ia = bin(a.v[i]), ib = bin(b.v[i]);
    joint[ia * 256 + ib] += inv;
    pa[ia] += inv;
    pb[ib] += inv;
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < 256; ++i)
    for (std::size_t j = 0; j < 256; ++j) {
      const double p = joint[i * 256 + j];
      if (p > 0.0) mi += p * std::log2(p / (pa[i] * pb[j]));
    }
  return std::max(mi, 0.0);
}

double mi_fusion(const Image& f, const Image& x, const Image& y) {
  check_triple(f, x, y, "mi");
  return mutual_information(f, x) + mutual_information(f, y);
}

MetricValue psnr(const Image& a_img, const Image& b_img) {
  if (!a_img.same_geometry(b_img)) throw ShapeError("psnr: image sizes differ");
  const Plane a = plane_of(a_img), b = plane_of(b_img);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) mse += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
  mse /= static_cast<double>(a.v.size());
  if (mse == 0.0) return MetricValue::infinite();
  return MetricValue::finite(10.0 * std::log10(1.0 / mse));
}

MetricValue psnr_fusion(const Image& f_img, const Image& x_img, const Image& y_img) {
  check_triple(f_img, x_img, y_img, "psnr");
  const Plane f = plane_of(f_img), x = plane_of(x_img), y = plane_of(y_img);
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < f.v.size(); ++i) {
    sx += (f.v[i] - x.v[i]) * (f.v[i] - x.v[i]);
    sy += (f.v[i] - y.v[i]) * (f.v[i] - y.v[i]);
  }
  const double mse = (sx + sy) / (2.0 * static_cast<double>(f.v.size()));
  if (mse == 0.0) return MetricValue::infinite();
  return MetricValue::finite(10.0 * std::log10(1.0 / mse));
}

std::optional<double> pearson(const Image& a_img, const Image& b_img) {
  if (!a_img.same_geometry(b_img)) throw ShapeError("pearson: image sizes differ");
  const Plane a = plane_of(a_img), b = plane_of(b_img);
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double da = a.v[i] - ma, db = b.v[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const auto constant = [](const Plane& p) {
    return std::all_of(p.v.begin(), p.v.end(), [&](double v) { return v == p.v.front(); });
  };
  if (constant(a) || constant(b) || saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

MetricValue cc_fusion(const Image& f, const Image& x, const Image& y) {
  check_triple(f, x, y, "cc");
  const auto rx = pearson(f, x), ry = pearson(f, y);
  if (rx && ry) return MetricValue::finite((*rx + *ry) / 2.0);
  if (rx) return MetricValue::finite(*rx);
  if (ry) return MetricValue::finite(*ry);
  return MetricValue::undefined();
}

double ssim_index(const Image& a_img, const Image& b_img, std::size_t window, double sigma) {
  if (!a_img.same_geometry(b_img)) throw ShapeError("ssim: image sizes differ");
  if (a_img.height < window || a_img.width < window) throw ShapeError("ssim: image smaller than the window");
  return mean_of(ssim_map(window_stats(plane_of(a_img), plane_of(b_img), window, sigma)));
}

double vif(const Image& reference, const Image& distorted, const VifOptions& opt) {
  if (!reference.same_geometry(distorted)) throw ShapeError("vif: image sizes differ");
  const auto v = vif_planes(plane_of(reference, 255.0), plane_of(distorted, 255.0), opt);
  return v ? *v : std::numeric_limits<double>::quiet_NaN();
}

double vif_fusion(const Image& f, const Image& x, const Image& y, const VifOptions& opt) {
  check_triple(f, x, y, "vif");
  return vif(x, f, opt) + vif(y, f, opt);
}

double qabf(const Image& f_img, const Image& x_img, const Image& y_img, const QabfOptions& o) {
  check_triple(f_img, x_img, y_img, "qabf");
  static constexpr std::array<double, 9> kH1{1, 2, 1, 0, 0, 0, -1, -2, -1};
  static constexpr std::array<double, 9> kH3{-1, 0, 1, -2, 0, 2, -1, 0, 1};
  struct Edges { Plane g, a; };
  auto edges = [](const Image& img) {
    const Plane p = plane_of(img);
    Plane sx = filter3_edge(p, kH3), sy = filter3_edge(p, kH1);
    Edges e{Plane(p.h, p.w), Plane(p.h, p.w)};
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      if (std::abs(sx.v[i]) < kSobelZero) sx.v[i] = 0.0;
      if (std::abs(sy.v[i]) < kSobelZero) sy.v[i] = 0.0;
      e.g.v[i] = std::sqrt(sx.v[i] * sx.v[i] + sy.v[i] * sy.v[i]);
      if (sx.v[i] != 0.0) e.a.v[i] = std::atan(sy.v[i] / sx.v[i]);
      else e.a.v[i] = sy.v[i] > 0.0 ? std::numbers::pi / 2 : (sy.v[i] < 0.0 ? -std::numbers::pi / 2 : 0.0);
    }
    return e;
  };
  const Edges ef = edges(f_img), ex = edges(x_img), ey = edges(y_img);
  auto preservation = [&](const Edges& s, std::size_t i) {
    const double gs = s.g.v[i], gf = ef.g.v[i];
    double g;
    if (gs == 0.0 || gf == 0.0) g = 0.0;
    else if (gs > gf) g = gf / gs;
    else g = gs / gf;
    const double a = 1.0 - std::abs(s.a.v[i] - ef.a.v[i]) / (std::numbers::pi / 2);
    const double qg = o.tg / (1.0 + std::exp(o.kg * (g - o.dg)));
    const double qa = o.ta / (1.0 + std::exp(o.ka * (a - o.da)));
    return qg * qa;
  };
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ef.g.v.size(); ++i) {
    const double wx = std::pow(ex.g.v[i], o.weight_exponent), wy = std::pow(ey.g.v[i], o.weight_exponent);
    num += preservation(ex, i) * wx + preservation(ey, i) * wy;
    den += wx + wy;
  }
  return den > 0.0 ? num / den : 0.0;
}

double qy(const Image& f_img, const Image& x_img, const Image& y_img, const QyOptions& o) {
  check_triple(f_img, x_img, y_img, "qy");
  if (f_img.height < o.window || f_img.width < o.window) {
    throw ShapeError("qy: image " + std::to_string(f_img.height) + "x" + std::to_string(f_img.width) +
                     " is smaller than the " + std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
  }
  const Plane f = plane_of(f_img), x = plane_of(x_img), y = plane_of(y_img);
  const WindowStats sxy = window_stats(x, y, o.window, o.sigma);
  const Plane mxy = ssim_map(sxy);
  const Plane mxf = ssim_map(window_stats(x, f, o.window, o.sigma));
  const Plane myf = ssim_map(window_stats(y, f, o.window, o.sigma));
  double total = 0.0;
  for (std::size_t i = 0; i < mxy.v.size(); ++i) {
    if (mxy.v[i] >= o.threshold) {
      const double d = sxy.var_a.v[i] + sxy.var_b.v[i];
      const double lambda = d == 0.0 ? 0.5 : sxy.var_a.v[i] / d;
      total += lambda * mxf.v[i] + (1.0 - lambda) * myf.v[i];
    } else {
      total += std::max(mxf.v[i], myf.v[i]);
    }
  }
  return total / static_cast<double>(mxy.v.size());
}

std::map<std::string, MetricValue> evaluate_triple(const Image& f_in, const Image& x_in, const Image& y_in,
                                                   const std::vector<std::string>& metrics,
                                                   const MetricOptions& opt) {
  const Image f = luminance(f_in), x = luminance(x_in), y = luminance(y_in);
  check_triple(f, x, y, "evaluate");
  auto finite_or_undefined = [](double v) {
    return std::isfinite(v) ? MetricValue::finite(v) : MetricValue::undefined();
  };
  std::map<std::string, MetricValue> out;
  for (const auto& m : metrics) {
    if (m == "mi") out[m] = MetricValue::finite(mi_fusion(f, x, y));
    else if (m == "vif") out[m] = finite_or_undefined(vif_fusion(f, x, y, opt.vif));
    else if (m == "qabf") out[m] = MetricValue::finite(qabf(f, x, y, opt.qabf));
    else if (m == "qy") out[m] = MetricValue::finite(qy(f, x, y, opt.qy));
    else if (m == "cc") out[m] = cc_fusion(f, x, y);
    else if (m == "psnr") out[m] = psnr_fusion(f, x, y);
    else if (m == "ssim") out[m] = MetricValue::finite((ssim_index(f, x) + ssim_index(f, y)) / 2.0);
    else throw std::invalid_argument("unknown metric '" + m + "'");
  }
  return out;
}

void MetricReport::recompute_aggregates() {
  aggregate.clear();
  for (const auto& m : metrics) {
    std::vector<double> vals;
    MetricAggregate agg;
    for (const auto& row : per_sample) {
      const auto it = row.find(m);
      if (it != row.end() && it->second.is_finite()) vals.push_back(it->second.value);
      else ++agg.excluded;
    }
    agg.count = vals.size();
    if (vals.empty()) {
      agg.mean = agg.median = std::numeric_limits<double>::quiet_NaN();
    } else {
      double s = 0.0;
      for (double v : vals) s += v;
      agg.mean = s / static_cast<double>(vals.size());
      std::sort(vals.begin(), vals.end());
      const std::size_t n = vals.size();
      agg.median = n % 2 ? vals[n / 2] : (vals[n / 2 - 1] + vals[n / 2]) / 2.0;
    }
    if (agg.excluded) spdlog::warn("{}: {} non-finite value(s) excluded from aggregates", m, agg.excluded);
    aggregate[m] = agg;
  }
}

std::string MetricReport::to_tsv() const {
  std::ostringstream os;
  os << "sample";
  for (const auto& m : metrics) os << '\t' << m;
  os << '\n';
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    os << sample_ids[i];
    for (const auto& m : metrics) os << '\t' << per_sample[i].at(m).str();
    os << '\n';
  }
  os << "# aggregate\n# metric\tmean\tmedian\tcount\texcluded\n";
  for (const auto& m : metrics) {
    const auto& a = aggregate.at(m);
    auto fmt = [&](double v) {
      return a.count ? MetricValue::finite(v).str() : MetricValue::undefined().str();
    };
    os << "# " << m << '\t' << fmt(a.mean) << '\t' << fmt(a.median) << '\t' << a.count << '\t' << a.excluded << '\n';
  }
  for (const auto& u : unmatched) os << "# unmatched\t" << u << '\n';
  return os.str();
}

MetricReport evaluate_dataset(const fs::path& fused_dir, const fs::path& a_dir, const fs::path& b_dir,
                              const std::vector<std::string>& metrics, const MetricOptions& opt) {
  auto stems = [](const fs::path& dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) out.emplace(e.path().stem().string(), e.path());
    return out;
  };
  const auto fused = stems(fused_dir), a = stems(a_dir), b = stems(b_dir);
  MetricReport report;
  report.metrics = metrics;
  for (const auto& [stem, path] : fused) {
    const auto ia = a.find(stem), ib = b.find(stem);
    if (ia == a.end() || ib == b.end()) {
      report.unmatched.push_back(path.filename().string());
      continue;
    }
    report.sample_ids.push_back(stem);
    report.per_sample.push_back(
        evaluate_triple(read_image(path), read_image(ia->second), read_image(ib->second), metrics, opt));
  }
  std::set<std::string> seen;
  for (const auto& id : report.sample_ids) seen.insert(id);
  for (const auto* src : {&a, &b})
    for (const auto& [stem, path] : *src)
      if (!seen.count(stem) && !fused.count(stem)) report.unmatched.push_back(path.string());
  if (report.per_sample.empty()) throw IoError("evaluate: no fused image has counterparts in both source directories");
  for (const auto& u : report.unmatched) spdlog::warn("evaluate: unmatched {}", u);
  report.recompute_aggregates();
  return report;
}

std::string box_plot_svg(const std::string& metric, const std::vector<std::string>& labels,
                         const std::vector<const MetricReport*>& reports) {
  struct Box { double lo, q1, med, q3, hi, mean; };
  auto quantile = [](const std::vector<double>& s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < s.size() ? s[i] * (1 - frac) + s[i + 1] * frac : s[i];
  };
  std::vector<std::optional<Box>> boxes;
  double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
  for (const auto* r : reports) {
    std::vector<double> v;
    for (const auto& row : r->per_sample) {
      const auto it = row.find(metric);
      if (it != row.end() && it->second.is_finite()) v.push_back(it->second.value);
    }
    if (v.empty()) {
      boxes.emplace_back();
      continue;
    }
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    Box b{0, quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), 0, s / static_cast<double>(v.size())};
    const double iqr = b.q3 - b.q1;
    b.lo = *std::find_if(v.begin(), v.end(), [&](double x) { return x >= b.q1 - 1.5 * iqr; });
    b.hi = *std::find_if(v.rbegin(), v.rend(), [&](double x) { return x <= b.q3 + 1.5 * iqr; });
    vmin = std::min(vmin, v.front());
    vmax = std::max(vmax, v.back());
    boxes.push_back(b);
  }
  if (!(vmax > vmin)) {
    vmin = std::isfinite(vmin) ? vmin - 0.5 : 0.0;
    vmax = vmin + 1.0;
  }
  const double width = 80.0 * static_cast<double>(std::max<std::size_t>(reports.size(), 1)) + 80.0;
  const double top = 30.0, bottom = 250.0;
  auto ypos = [&](double v) { return bottom - (v - vmin) / (vmax - vmin) * (bottom - top); };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"300\">\n"
     << "<text x=\"10\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">" << metric << "</text>\n"
     << "<text x=\"4\" y=\"" << top << "\" font-size=\"10\">" << vmax << "</text>\n"
     << "<text x=\"4\" y=\"" << bottom << "\" font-size=\"10\">" << vmin << "</text>\n";
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double cx = 80.0 + 80.0 * static_cast<double>(i);
    os << "<text x=\"" << cx - 30 << "\" y=\"280\" font-size=\"11\">" << labels.at(i) << "</text>\n";
    if (!boxes[i]) continue;
    const Box& b = *boxes[i];
    os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << ypos(b.lo) << "\" y2=\"" << ypos(b.hi)
       << "\" stroke=\"black\"/>\n"
       << "<rect x=\"" << cx - 20 << "\" y=\"" << ypos(b.q3) << "\" width=\"40\" height=\""
       << ypos(b.q1) - ypos(b.q3) << "\" fill=\"#9cc3e6\" stroke=\"black\"/>\n"
       << "<line x1=\"" << cx - 20 << "\" x2=\"" << cx + 20 << "\" y1=\"" << ypos(b.med) << "\" y2=\""
       << ypos(b.med) << "\" stroke=\"black\" stroke-width=\"2\"/>\n"
       << "<circle cx=\"" << cx << "\" cy=\"" << ypos(b.mean) << "\" r=\"3\" fill=\"red\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace bifuse
