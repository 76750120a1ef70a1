#include "bifuse/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

namespace bifuse {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& p : v) s += (s.empty() ? "" : "; ") + p;
  return s;
}

const std::vector<std::string> kTasks{"ivif", "mif", "mef", "mff"};

// Field-by-field reader that collects every problem instead of stopping at the first.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path, std::vector<std::string>& problems)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(path_ + ": expected an object");
  }
  ~FieldReader() {
    if (!obj_.is_object()) return;
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) problems_.push_back(key(k) + ": unknown field");
  }

  template <class T>
  void get(const char* name, T& out) {
    seen_.insert(name);
    if (!obj_.is_object() || !obj_.contains(name)) return;
    const json& v = obj_.at(name);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true/false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        if (!v.is_array()) throw std::invalid_argument("expected an array of non-negative integers");
        for (const auto& e : v)
          if (!e.is_number_unsigned()) throw std::invalid_argument("expected an array of non-negative integers");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      problems_.push_back(key(name) + ": " + e.what());
    }
  }

  const json& child(const char* name) {
    seen_.insert(name);
    static const json empty = json::object();
    if (!obj_.is_object() || !obj_.contains(name)) return empty;
    return obj_.at(name);
  }
  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration: " + join(problems)), problems_(std::move(problems)) {}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Bilevel: return "bilevel";
    case TrainMode::Joint: return "joint";
    case TrainMode::FusionOnly: return "fusion_only";
  }
  return "?";
}

json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["task"] = c.task;
  j["variant"] = c.variant;
  j["seed"] = c.seed;
  j["encoder"] = {{"depth", c.encoder.depth},
                  {"patch_size", c.encoder.patch_size},
                  {"embed_dim", c.encoder.embed_dim},
                  {"heads", c.encoder.heads},
                  {"mlp_ratio", c.encoder.mlp_ratio},
                  {"tap_layers", c.encoder.tap_layers},
                  {"weight_file", c.encoder.weight_file},
                  {"seed", c.encoder.seed},
                  {"separate_instances", c.encoder.separate_instances},
                  {"trainable", c.encoder.trainable}};
  j["adapter"] = {{"enabled", c.adapter.enabled},
                  {"width", c.adapter.width},
                  {"upsample", c.adapter.upsample},
                  {"shared", c.adapter.shared}};
  j["fusion"] = {{"blocks", c.fusion.blocks}, {"heads", c.fusion.heads}, {"mlp_ratio", c.fusion.mlp_ratio}};
  j["reconstruction"] = {{"enabled", c.reconstruction.enabled},
                         {"blocks", c.reconstruction.blocks},
                         {"heads", c.reconstruction.heads},
                         {"mlp_ratio", c.reconstruction.mlp_ratio}};
  j["loss"] = {{"intensity", c.loss.intensity},
               {"gradient", c.loss.gradient},
               {"ssim", c.loss.ssim},
               {"ssim_window", c.loss.ssim_window},
               {"ssim_sigma", c.loss.ssim_sigma}};
  j["bilevel"] = {{"mode", to_string(c.bilevel.mode)},
                  {"optimizer", c.bilevel.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                  {"inner_lr", c.bilevel.eta_inner},
                  {"outer_lr", c.bilevel.eta_outer},
                  {"ema_alpha", c.bilevel.ema_alpha},
                  {"decay_rate", c.bilevel.decay_rate},
                  {"decay_every", c.bilevel.decay_every},
                  {"beta1", c.bilevel.beta1},
                  {"beta2", c.bilevel.beta2},
                  {"adam_eps", c.bilevel.adam_eps},
                  {"strict_lr_order", c.bilevel.strict_lr_order}};
  j["data"] = {{"root", c.data.root},
               {"manifest", c.data.manifest},
               {"batch_size", c.data.batch_size},
               {"crop", c.data.crop},
               {"hflip", c.data.hflip}};
  j["train"] = {{"iterations", c.train.iterations}, {"checkpoint_every", c.train.checkpoint_every}};
  const auto& m = c.metrics;
  j["metrics"] = {{"qabf", {{"tg", m.qabf.tg}, {"kg", m.qabf.kg}, {"dg", m.qabf.dg}, {"ta", m.qabf.ta},
                            {"ka", m.qabf.ka}, {"da", m.qabf.da}, {"weight_exponent", m.qabf.weight_exponent}}},
                  {"qy", {{"window", m.qy.window}, {"sigma", m.qy.sigma}, {"threshold", m.qy.threshold}}},
                  {"vif", {{"scales", m.vif.scales}, {"sigma_nsq", m.vif.sigma_nsq}}}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  std::vector<std::string> problems;
  {
    FieldReader r(j, "", problems);
    r.get("schema_version", c.schema_version);
    r.get("task", c.task);
    r.get("variant", c.variant);
    r.get("seed", c.seed);
    {
      FieldReader e(r.child("encoder"), "encoder", problems);
      e.get("depth", c.encoder.depth);
      e.get("patch_size", c.encoder.patch_size);
      e.get("embed_dim", c.encoder.embed_dim);
      e.get("heads", c.encoder.heads);
      e.get("mlp_ratio", c.encoder.mlp_ratio);
      e.get("tap_layers", c.encoder.tap_layers);
      e.get("weight_file", c.encoder.weight_file);
      e.get("seed", c.encoder.seed);
      e.get("separate_instances", c.encoder.separate_instances);
      e.get("trainable", c.encoder.trainable);
    }
    {
      FieldReader a(r.child("adapter"), "adapter", problems);
      a.get("enabled", c.adapter.enabled);
      a.get("width", c.adapter.width);
      a.get("upsample", c.adapter.upsample);
      a.get("shared", c.adapter.shared);
    }
    {
      FieldReader f(r.child("fusion"), "fusion", problems);
      f.get("blocks", c.fusion.blocks);
      f.get("heads", c.fusion.heads);
      f.get("mlp_ratio", c.fusion.mlp_ratio);
    }
    {
      FieldReader f(r.child("reconstruction"), "reconstruction", problems);
      f.get("enabled", c.reconstruction.enabled);
      f.get("blocks", c.reconstruction.blocks);
      f.get("heads", c.reconstruction.heads);
      f.get("mlp_ratio", c.reconstruction.mlp_ratio);
    }
    {
      FieldReader l(r.child("loss"), "loss", problems);
      l.get("intensity", c.loss.intensity);
      l.get("gradient", c.loss.gradient);
      l.get("ssim", c.loss.ssim);
      l.get("ssim_window", c.loss.ssim_window);
      l.get("ssim_sigma", c.loss.ssim_sigma);
    }
    {
      FieldReader b(r.child("bilevel"), "bilevel", problems);
      std::string mode = to_string(c.bilevel.mode);
      std::string opt = "adam";
      b.get("mode", mode);
      b.get("optimizer", opt);
      if (mode == "bilevel") c.bilevel.mode = TrainMode::Bilevel;
      else if (mode == "joint") c.bilevel.mode = TrainMode::Joint;
      else if (mode == "fusion_only") c.bilevel.mode = TrainMode::FusionOnly;
      else problems.push_back("bilevel.mode: unknown mode '" + mode + "' (bilevel|joint|fusion_only)");
      if (opt == "adam") c.bilevel.optimizer = OptimizerKind::Adam;
      else if (opt == "sgd") c.bilevel.optimizer = OptimizerKind::Sgd;
      else problems.push_back("bilevel.optimizer: unknown optimizer '" + opt + "' (adam|sgd)");
      b.get("inner_lr", c.bilevel.eta_inner);
      b.get("outer_lr", c.bilevel.eta_outer);
      b.get("ema_alpha", c.bilevel.ema_alpha);
      b.get("decay_rate", c.bilevel.decay_rate);
      b.get("decay_every", c.bilevel.decay_every);
      b.get("beta1", c.bilevel.beta1);
      b.get("beta2", c.bilevel.beta2);
      b.get("adam_eps", c.bilevel.adam_eps);
      b.get("strict_lr_order", c.bilevel.strict_lr_order);
    }
    {
      FieldReader d(r.child("data"), "data", problems);
      d.get("root", c.data.root);
      d.get("manifest", c.data.manifest);
      d.get("batch_size", c.data.batch_size);
      d.get("crop", c.data.crop);
      d.get("hflip", c.data.hflip);
    }
    {
      FieldReader t(r.child("train"), "train", problems);
      t.get("iterations", c.train.iterations);
      t.get("checkpoint_every", c.train.checkpoint_every);
    }
    {
      FieldReader m(r.child("metrics"), "metrics", problems);
      {
        FieldReader q(m.child("qabf"), "metrics.qabf", problems);
        q.get("tg", c.metrics.qabf.tg);
        q.get("kg", c.metrics.qabf.kg);
        q.get("dg", c.metrics.qabf.dg);
        q.get("ta", c.metrics.qabf.ta);
        q.get("ka", c.metrics.qabf.ka);
        q.get("da", c.metrics.qabf.da);
        q.get("weight_exponent", c.metrics.qabf.weight_exponent);
      }
      {
        FieldReader q(m.child("qy"), "metrics.qy", problems);
        q.get("window", c.metrics.qy.window);
        q.get("sigma", c.metrics.qy.sigma);
        q.get("threshold", c.metrics.qy.threshold);
      }
      {
        FieldReader v(m.child("vif"), "metrics.vif", problems);
        v.get("scales", c.metrics.vif.scales);
        v.get("sigma_nsq", c.metrics.vif.sigma_nsq);
      }
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

void validate(const RunConfig& c) {
  std::vector<std::string> p;
  if (c.schema_version != kSchemaVersion) {
    p.push_back("schema_version: " + std::to_string(c.schema_version) + " is not supported (expected " +
                std::to_string(kSchemaVersion) + ")");
  }
  if (std::find(kTasks.begin(), kTasks.end(), c.task) == kTasks.end()) {
    p.push_back("task: unknown task '" + c.task + "' (ivif|mif|mef|mff)");
  }
  if (c.variant != "full" && std::find(variant_names().begin(), variant_names().end(), c.variant) == variant_names().end()) {
    p.push_back("variant: unknown variant '" + c.variant + "'");
  }

  const auto& e = c.encoder;
  if (e.depth == 0) p.push_back("encoder.depth: must be at least 1");
  if (e.patch_size == 0) p.push_back("encoder.patch_size: must be at least 1");
  if (e.heads == 0 || e.embed_dim % e.heads != 0) p.push_back("encoder.heads: must divide encoder.embed_dim");
  if (e.mlp_ratio == 0) p.push_back("encoder.mlp_ratio: must be at least 1");
  if (e.tap_layers.size() != 4) p.push_back("encoder.tap_layers: exactly 4 layers are required");
  for (std::size_t i = 0; i < e.tap_layers.size(); ++i) {
    if (e.tap_layers[i] >= e.depth) {
      p.push_back("encoder.tap_layers: layer " + std::to_string(e.tap_layers[i]) + " >= depth " +
                  std::to_string(e.depth));
    }
    if (i > 0 && e.tap_layers[i] <= e.tap_layers[i - 1]) p.push_back("encoder.tap_layers: must be strictly increasing");
  }

  if (c.adapter.upsample.size() != 3) p.push_back("adapter.upsample: one factor per stage (3 stages) required");
  for (auto f : c.adapter.upsample)
    if (f == 0) p.push_back("adapter.upsample: factors must be positive");
  if (c.adapter.width == 0) p.push_back("adapter.width: must be positive");
  if (!c.adapter.enabled && c.adapter.width != e.embed_dim) {
    p.push_back("adapter.width: must equal encoder.embed_dim when the adapter is disabled");
  }
  if (c.fusion.blocks == 0) p.push_back("fusion.blocks: must be at least 1");
  if (c.fusion.heads == 0 || c.adapter.width % c.fusion.heads != 0) p.push_back("fusion.heads: must divide adapter.width");
  if (c.fusion.mlp_ratio == 0) p.push_back("fusion.mlp_ratio: must be at least 1");
  if (c.reconstruction.heads == 0 || c.adapter.width % c.reconstruction.heads != 0) {
    p.push_back("reconstruction.heads: must divide adapter.width");
  }
  if (c.reconstruction.mlp_ratio == 0) p.push_back("reconstruction.mlp_ratio: must be at least 1");

  if (c.loss.intensity < 0 || c.loss.gradient < 0 || c.loss.ssim < 0) p.push_back("loss: weights must be non-negative");
  if (c.loss.ssim_window == 0 || c.loss.ssim_window % 2 == 0) p.push_back("loss.ssim_window: must be odd");
  if (c.loss.ssim_sigma <= 0) p.push_back("loss.ssim_sigma: must be positive");

  const auto& b = c.bilevel;
  if (!(b.eta_inner > 0) || !(b.eta_outer > 0)) p.push_back("bilevel: learning rates must be positive");
  if (!(b.eta_inner > b.eta_outer)) {
    const std::string msg = "bilevel.inner_lr (" + std::to_string(b.eta_inner) + ") must exceed bilevel.outer_lr (" +
                            std::to_string(b.eta_outer) + ")";
    if (b.strict_lr_order) p.push_back(msg);
    else spdlog::warn("{}", msg);
  }
  if (!(b.ema_alpha >= 0.0 && b.ema_alpha < 1.0)) p.push_back("bilevel.ema_alpha: must lie in [0, 1)");
  if (!(b.decay_rate > 0.0 && b.decay_rate <= 1.0)) p.push_back("bilevel.decay_rate: must lie in (0, 1]");
  if (b.decay_every == 0) p.push_back("bilevel.decay_every: must be positive");
  if (!(b.beta1 >= 0 && b.beta1 < 1) || !(b.beta2 >= 0 && b.beta2 < 1)) p.push_back("bilevel.beta1/beta2: must lie in [0, 1)");
  if (b.mode == TrainMode::Bilevel && !c.reconstruction.enabled) {
    p.push_back("bilevel.mode: bilevel training needs the reconstruction branches (use fusion_only)");
  }

  const auto& m = c.metrics;
  if (m.qy.window == 0 || m.qy.window % 2 == 0) p.push_back("metrics.qy.window: must be odd");
  if (m.qy.sigma <= 0) p.push_back("metrics.qy.sigma: must be positive");
  if (m.vif.scales == 0 || m.vif.scales > 6) p.push_back("metrics.vif.scales: must lie in [1, 6]");
  if (m.vif.sigma_nsq <= 0) p.push_back("metrics.vif.sigma_nsq: must be positive");

  if (c.data.batch_size == 0) p.push_back("data.batch_size: must be at least 1");
  if (c.data.crop == 0 || (e.patch_size && c.data.crop % e.patch_size != 0)) {
    p.push_back("data.crop: must be a positive multiple of encoder.patch_size");
  }
  if (c.train.checkpoint_every == 0) p.push_back("train.checkpoint_every: must be positive");
  if (!p.empty()) throw ConfigError(p);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError({"override '" + assignment + "': expected key=value"});
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError({"override '" + assignment + "': empty key segment"});
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  json j = to_json(RunConfig{});
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw ConfigError({"config: cannot open '" + config_path + "'"});
    try {
      j.merge_patch(json::parse(f));
    } catch (const json::parse_error& e) {
      throw ConfigError({"config: " + std::string(e.what())});
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = config_from_json(j);
  validate(c);
  return c;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v{"no_adapter", "no_pretrained_encoder", "no_reconstruction", "no_bilevel"};
  return v;
}

RunConfig apply_variant(RunConfig c, const std::string& variant) {
  if (variant == "full") {
    c.variant = variant;
  } else if (variant == "no_adapter") {
    c.adapter.enabled = false;
    c.adapter.width = c.encoder.embed_dim;
  } else if (variant == "no_pretrained_encoder") {
    c.encoder.depth = 4;
    c.encoder.tap_layers = {0, 1, 2, 3};
    c.encoder.trainable = true;
    c.encoder.weight_file.clear();
  } else if (variant == "no_reconstruction") {
    c.reconstruction.enabled = false;
    c.bilevel.mode = TrainMode::FusionOnly;
  } else if (variant == "no_bilevel") {
    c.bilevel.mode = TrainMode::Joint;
  } else {
    throw ConfigError({"variant: unknown ablation variant '" + variant +
                       "' (no_adapter|no_pretrained_encoder|no_reconstruction|no_bilevel)"});
  }
  c.variant = variant;
  return c;
}

}  // namespace bifuse
