#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "cloak/crafter.hpp"
#include "cloak/dataset.hpp"
#include "cloak/purify.hpp"
#include "cloak/trainer.hpp"

namespace cloak {

constexpr const char* kVersion = "0.1.0";

// Whole-lab configuration, serialized as a human-readable key = value file.
// Rational literals like 11/255 are accepted for real-valued keys.
struct LabConfig {
  int resolution = 32;
  std::uint64_t seed = 0;

  int t_steps = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int sampler_steps = 20;

  int pretrain_steps = 300;
  int class_images = 24;
  int prior_count = 16;

  TrainConfig train;               // lr, lambda, batch_size (steps unused here)
  int victim_steps = 1000;
  std::string victim_setting = "stand";  // stand | trans

  CraftConfig craft;

  bool transform_gaussian = true;
  int transform_kernel = 7;
  double transform_sigma = 0.0;  // 0 = derived from kernel size
  double transform_hflip_p = 0.5;
  double transform_crop_fraction = 0.9;

  TvmConfig tvm;
  int jpeg_quality = 75;
  int sr_scale = 4;

  int eval_samples = 16;
  int eval_passes = 16;

  std::string dataset_kind = "blobs";
  int dataset_count = 8;
  std::string dataset_dir;  // when set, ingest PNGs instead of synthesizing

  void validate() const {
    if (resolution < 8 || resolution % 2 != 0)
      throw ConfigError("config: resolution must be even and >= 8");
    if (victim_setting != "stand" && victim_setting != "trans")
      throw ConfigError("config: victim.setting must be stand or trans");
    if (victim_steps < 0) throw ConfigError("config: victim.steps must be >= 0");
    if (sampler_steps < 1 || sampler_steps > t_steps)
      throw ConfigError("config: sampler.steps must be in [1, t_steps]");
    if (eval_samples < 4) throw ConfigError("config: eval.samples must be >= 4");
    train.validate();
    craft.validate();
    tvm.validate();
    if (jpeg_quality < 1 || jpeg_quality > 100) throw ConfigError("config: jpeg.quality");
    if (sr_scale < 2) throw ConfigError("config: sr.scale");
    if (dataset_count < 2) throw ConfigError("config: dataset.count must be >= 2");
    make_schedule(t_steps, beta_min, beta_max);  // throws on bad range
  }

  // The transformation distribution for the Trans. setting and for
  // EOT-enabled crafting.
  TransformSpec pipeline_transform() const {
    TransformSpec t;
    t.gaussian.enabled = transform_gaussian;
    t.gaussian.kernel_size = transform_kernel;
    t.gaussian.sigma = transform_sigma;
    t.hflip_p = transform_hflip_p;
    t.crop_fraction = transform_crop_fraction;
    t.resize_h = t.resize_w = resolution;
    return t;
  }

  TransformSpec victim_transform() const {
    return victim_setting == "trans" ? pipeline_transform() : TransformSpec::identity();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& raw) {
  const std::string s = trim(raw);
  const auto slash = s.find('/');
  try {
    if (slash != std::string::npos) {
      const double num = std::stod(s.substr(0, slash));
      const double den = std::stod(s.substr(slash + 1));
      if (den == 0.0) throw ConfigError("config: division by zero in " + s);
      return num / den;
    }
    return std::stod(s);
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value '" + s + "'");
  }
}

inline long long parse_int(const std::string& raw) {
  try {
    return std::stoll(trim(raw));
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value '" + raw + "'");
  }
}

inline bool parse_bool(const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: bad boolean value '" + s + "'");
}

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void apply_config_value(LabConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_real;
  if (key == "resolution") c.resolution = static_cast<int>(parse_int(value));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value));
  else if (key == "schedule.t_steps") c.t_steps = static_cast<int>(parse_int(value));
  else if (key == "schedule.beta_min") c.beta_min = parse_real(value);
  else if (key == "schedule.beta_max") c.beta_max = parse_real(value);
  else if (key == "sampler.steps") c.sampler_steps = static_cast<int>(parse_int(value));
  else if (key == "base.pretrain_steps") c.pretrain_steps = static_cast<int>(parse_int(value));
  else if (key == "base.class_images") c.class_images = static_cast<int>(parse_int(value));
  else if (key == "prior.count") c.prior_count = static_cast<int>(parse_int(value));
  else if (key == "train.lr") c.train.lr = parse_real(value);
  else if (key == "train.lambda") c.train.lambda = parse_real(value);
  else if (key == "train.batch_size") c.train.batch_size = static_cast<int>(parse_int(value));
  else if (key == "victim.steps") c.victim_steps = static_cast<int>(parse_int(value));
  else if (key == "victim.setting") c.victim_setting = detail::trim(value);
  else if (key == "craft.radius") c.craft.radius = parse_real(value);
  else if (key == "craft.alpha") c.craft.alpha = parse_real(value);
  else if (key == "craft.pgd_steps") c.craft.pgd_steps = static_cast<int>(parse_int(value));
  else if (key == "craft.outer_loops") c.craft.outer_loops = static_cast<int>(parse_int(value));
  else if (key == "craft.pool_size") c.craft.pool_size = static_cast<int>(parse_int(value));
  else if (key == "craft.surrogate_batch") c.craft.surrogate_batch = static_cast<int>(parse_int(value));
  else if (key == "craft.unroll_steps") c.craft.unroll_steps = static_cast<int>(parse_int(value));
  else if (key == "craft.eot_samples") c.craft.eot_samples = static_cast<int>(parse_int(value));
  else if (key == "craft.n_max") c.craft.n_max = static_cast<int>(parse_int(value));
  else if (key == "craft.advance_surrogates") c.craft.advance_surrogates = parse_bool(value);
  else if (key == "transform.gaussian") c.transform_gaussian = parse_bool(value);
  else if (key == "transform.kernel_size") c.transform_kernel = static_cast<int>(parse_int(value));
  else if (key == "transform.sigma") c.transform_sigma = parse_real(value);
  else if (key == "transform.hflip_p") c.transform_hflip_p = parse_real(value);
  else if (key == "transform.crop_fraction") c.transform_crop_fraction = parse_real(value);
  else if (key == "tvm.dropout_p") c.tvm.dropout_p = parse_real(value);
  else if (key == "tvm.lambda_tv") c.tvm.lambda_tv = parse_real(value);
  else if (key == "tvm.max_iters") c.tvm.max_iters = static_cast<int>(parse_int(value));
  else if (key == "tvm.work_resolution") c.tvm.work_resolution = static_cast<int>(parse_int(value));
  else if (key == "jpeg.quality") c.jpeg_quality = static_cast<int>(parse_int(value));
  else if (key == "sr.scale") c.sr_scale = static_cast<int>(parse_int(value));
  else if (key == "eval.samples") c.eval_samples = static_cast<int>(parse_int(value));
  else if (key == "eval.passes") c.eval_passes = static_cast<int>(parse_int(value));
  else if (key == "dataset.kind") c.dataset_kind = detail::trim(value);
  else if (key == "dataset.count") c.dataset_count = static_cast<int>(parse_int(value));
  else if (key == "dataset.dir") c.dataset_dir = detail::trim(value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline LabConfig parse_config_text(const std::string& text) {
  LabConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    apply_config_value(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return c;
}

inline LabConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical echo; parse_config_text(config_echo(c)) reproduces c exactly.
inline std::string config_echo(const LabConfig& c) {
  using detail::fmt_real;
  std::ostringstream os;
  os << "resolution = " << c.resolution << "\n";
  os << "seed = " << c.seed << "\n";
  os << "schedule.t_steps = " << c.t_steps << "\n";
  os << "schedule.beta_min = " << fmt_real(c.beta_min) << "\n";
  os << "schedule.beta_max = " << fmt_real(c.beta_max) << "\n";
  os << "sampler.steps = " << c.sampler_steps << "\n";
  os << "base.pretrain_steps = " << c.pretrain_steps << "\n";
  os << "base.class_images = " << c.class_images << "\n";
  os << "prior.count = " << c.prior_count << "\n";
  os << "train.lr = " << fmt_real(c.train.lr) << "\n";
  os << "train.lambda = " << fmt_real(c.train.lambda) << "\n";
  os << "train.batch_size = " << c.train.batch_size << "\n";
  os << "victim.steps = " << c.victim_steps << "\n";
  os << "victim.setting = " << c.victim_setting << "\n";
  os << "craft.radius = " << fmt_real(c.craft.radius) << "\n";
  os << "craft.alpha = " << fmt_real(c.craft.alpha) << "\n";
  os << "craft.pgd_steps = " << c.craft.pgd_steps << "\n";
  os << "craft.outer_loops = " << c.craft.outer_loops << "\n";
  os << "craft.pool_size = " << c.craft.pool_size << "\n";
  os << "craft.surrogate_batch = " << c.craft.surrogate_batch << "\n";
  os << "craft.unroll_steps = " << c.craft.unroll_steps << "\n";
  os << "craft.eot_samples = " << c.craft.eot_samples << "\n";
  os << "craft.n_max = " << c.craft.n_max << "\n";
  os << "craft.advance_surrogates = " << (c.craft.advance_surrogates ? "true" : "false") << "\n";
  os << "transform.gaussian = " << (c.transform_gaussian ? "true" : "false") << "\n";
  os << "transform.kernel_size = " << c.transform_kernel << "\n";
  os << "transform.sigma = " << fmt_real(c.transform_sigma) << "\n";
  os << "transform.hflip_p = " << fmt_real(c.transform_hflip_p) << "\n";
  os << "transform.crop_fraction = " << fmt_real(c.transform_crop_fraction) << "\n";
  os << "tvm.dropout_p = " << fmt_real(c.tvm.dropout_p) << "\n";
  os << "tvm.lambda_tv = " << fmt_real(c.tvm.lambda_tv) << "\n";
  os << "tvm.max_iters = " << c.tvm.max_iters << "\n";
  os << "tvm.work_resolution = " << c.tvm.work_resolution << "\n";
  os << "jpeg.quality = " << c.jpeg_quality << "\n";
  os << "sr.scale = " << c.sr_scale << "\n";
  os << "eval.samples = " << c.eval_samples << "\n";
  os << "eval.passes = " << c.eval_passes << "\n";
  os << "dataset.kind = " << c.dataset_kind << "\n";
  os << "dataset.count = " << c.dataset_count << "\n";
  if (!c.dataset_dir.empty()) os << "dataset.dir = " << c.dataset_dir << "\n";
  return os.str();
}

}  // namespace cloak
