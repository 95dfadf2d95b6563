#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cloak/config.hpp"
#include "cloak/crafter.hpp"
#include "cloak/metrics.hpp"
#include "cloak/png_io.hpp"

namespace cloak {

namespace detail {

// Per-phase stream salts keep the phases independent under one master seed.
constexpr std::uint64_t kSaltBase = 0xb45e5eedULL;
constexpr std::uint64_t kSaltPrior = 0x9e1051a7ULL;
constexpr std::uint64_t kSaltPool = 0x9001b001ULL;
constexpr std::uint64_t kSaltCraft = 0xc4a54e11ULL;
constexpr std::uint64_t kSaltVictim = 0x71c71c71ULL;
constexpr std::uint64_t kSaltEval = 0xe7a1e7a1ULL;
constexpr std::uint64_t kSaltPurify = 0x9f12f1edULL;

inline RandomStream phase_stream(std::uint64_t seed, std::uint64_t salt) {
  return RandomStream(seed * 1000000007ULL + salt);
}

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string digest_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("digest: cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
  return hex64(h);
}

inline std::string digest_values(const std::vector<double>& v) {
  return hex64(fnv1a(v.data(), v.size() * sizeof(double)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared per-run assets: pre-trained base model, schedule, prior set,
// instance dataset. Everything is a pure function of the config.

struct BaseAssets {
  NoiseSchedule sched;
  DenoiserModel base;        // the released, class-pretrained model
  PriorSet prior;
  InstanceDataset dataset;
};

inline BaseAssets prepare_assets(const LabConfig& cfg) {
  cfg.validate();
  BaseAssets a;
  a.sched = make_schedule(cfg.t_steps, cfg.beta_min, cfg.beta_max);

  const SynthKind kind = synth_kind_from_string(cfg.dataset_kind);

  // base model: random init, then conditioned pre-training on a generic
  // procedural set (the stand-in for a pre-trained backbone). The class
  // token sees the broad class; the instance token sees one held-out
  // subject so the conditioning pathway carries real signal before any
  // fine-tuning rebinds it.
  ArchDesc arch;
  arch.resolution = cfg.resolution;
  RandomStream base_rng = detail::phase_stream(cfg.seed, detail::kSaltBase);
  a.base = DenoiserModel(arch, base_rng);
  if (cfg.pretrain_steps > 0) {
    ImageBatch class_set = synth_class_set(kind, cfg.class_images, cfg.resolution, cfg.seed);
    InstanceDataset pretrain_subject =
        synth_dataset(kind, 8, cfg.resolution, cfg.seed ^ 0xf00dULL);
    std::vector<Tensor> mixed;
    std::vector<int> mixed_ids;
    for (int i = 0; i < class_set.count(); ++i) {
      mixed.push_back(class_set.image(i).detach());
      mixed_ids.push_back(kCondClass);
    }
    for (int i = 0; i < pretrain_subject.protect_set.count(); ++i) {
      mixed.push_back(pretrain_subject.protect_set.image(i).detach());
      mixed_ids.push_back(kCondInstance);
    }
    ImageBatch pretrain_set(stack_outer(mixed), std::move(mixed_ids));
    TrainConfig pre = cfg.train;
    pre.lambda = 0.0;  // plain conditioned denoising
    train_steps(a.base, pretrain_set, TransformSpec::identity(), PriorSet{}, pre, a.sched,
                cfg.pretrain_steps, base_rng);
  }

  RandomStream prior_rng = detail::phase_stream(cfg.seed, detail::kSaltPrior);
  a.prior = make_prior_set(a.base, a.sched, cfg.sampler_steps, cfg.prior_count, prior_rng);

  if (!cfg.dataset_dir.empty())
    a.dataset = ingest(cfg.dataset_dir, cfg.resolution, cfg.seed);
  else
    a.dataset = synth_dataset(kind, cfg.dataset_count, cfg.resolution, cfg.seed);
  return a;
}

// ---------------------------------------------------------------------------
// Crafting variants (the ablation grid axes)

enum class CraftVariant { neither, meta_only, eot_only, full };

inline const char* variant_name(CraftVariant v) {
  switch (v) {
    case CraftVariant::neither: return "neither";
    case CraftVariant::meta_only: return "meta_only";
    case CraftVariant::eot_only: return "eot_only";
    case CraftVariant::full: return "full";
  }
  return "?";
}

inline bool variant_meta(CraftVariant v) {
  return v == CraftVariant::meta_only || v == CraftVariant::full;
}
inline bool variant_eot(CraftVariant v) {
  return v == CraftVariant::eot_only || v == CraftVariant::full;
}

// The staggered pool a variant crafts against; EOT-off variants train their
// surrogates without the transformation pipeline.
inline SurrogatePool build_variant_pool(const BaseAssets& a, const LabConfig& cfg, bool with_eot) {
  const TransformSpec t = with_eot ? cfg.pipeline_transform() : TransformSpec::identity();
  RandomStream rng = detail::phase_stream(cfg.seed, detail::kSaltPool ^ (with_eot ? 1 : 0));
  return build_staggered_pool(a.base, a.dataset.protect_set, t, a.prior, cfg.craft.pool_size,
                              cfg.craft.n_max, cfg.train, a.sched, rng);
}

// Craft a poison for one grid cell. Meta-off cells use a single frozen
// surrogate (the pool's fully trained snapshot) with no unrolling or
// advancement.
inline CraftResult craft_variant(CraftVariant v, const BaseAssets& a, const LabConfig& cfg,
                                 const SurrogatePool& pool) {
  const TransformSpec t =
      variant_eot(v) ? cfg.pipeline_transform() : TransformSpec::identity();
  CraftConfig ccfg = cfg.craft;
  RandomStream rng = detail::phase_stream(cfg.seed, detail::kSaltCraft ^ static_cast<std::uint64_t>(v));
  if (variant_meta(v))
    return craft(a.dataset.protect_set, pool, t, a.prior, ccfg, cfg.train, a.sched, rng);

  SurrogatePool frozen;
  frozen.snapshots.push_back(pool.snapshots.back().clone());
  frozen.trained_steps.push_back(pool.trained_steps.back());
  frozen.rng_digests.push_back(pool.rng_digests.back());
  frozen.n_max = pool.n_max;
  frozen.clean_anchor = pool.clean_anchor.clone();
  ccfg.pool_size = 1;
  ccfg.surrogate_batch = 1;
  ccfg.unroll_steps = 0;
  ccfg.advance_surrogates = false;
  return craft(a.dataset.protect_set, frozen, t, a.prior, ccfg, cfg.train, a.sched, rng);
}

// Fine-tune a victim on a training set under the configured setting and
// score it against the dataset references.
inline DenoiserModel train_victim(const BaseAssets& a, const LabConfig& cfg,
                                  const ImageBatch& train_set) {
  TrainConfig vcfg = cfg.train;
  vcfg.steps = cfg.victim_steps;
  RandomStream rng = detail::phase_stream(cfg.seed, detail::kSaltVictim);
  return victim_finetune(a.base, train_set, cfg.victim_transform(), a.prior, vcfg, a.sched, rng);
}

inline MetricsRecord score_victim(const BaseAssets& a, const LabConfig& cfg,
                                  const DenoiserModel& victim) {
  RandomStream rng = detail::phase_stream(cfg.seed, detail::kSaltEval);
  return evaluate_victim(victim, a.dataset, a.sched, cfg.eval_samples, cfg.sampler_steps,
                         cfg.eval_passes, rng);
}

// ---------------------------------------------------------------------------
// Run manifests: line-oriented, deterministic (timing lives in a sidecar).

struct ManifestWriter {
  std::ostringstream os;

  explicit ManifestWriter(const std::string& phase, const LabConfig& cfg) {
    os << "cloak.manifest.v1\n";
    os << "phase=" << phase << "\n";
    os << "version=" << kVersion << "\n";
    os << "seed=" << cfg.seed << "\n";
    os << "config.begin\n" << config_echo(cfg) << "config.end\n";
  }

  void kv(const std::string& key, const std::string& value) {
    os << key << "=" << value << "\n";
  }
  void kv(const std::string& key, double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    os << key << "=" << buf << "\n";
  }
  void line(const std::string& l) { os << l << "\n"; }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("manifest: cannot write " + path.string());
    f << os.str();
  }
};

// Extract the config echo embedded in a manifest.
inline LabConfig config_from_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path);
  std::string line, cfg_text;
  bool in_cfg = false;
  while (std::getline(is, line)) {
    if (line == "config.begin") {
      in_cfg = true;
      continue;
    }
    if (line == "config.end") in_cfg = false;
    if (in_cfg) cfg_text += line + "\n";
  }
  if (cfg_text.empty()) throw IoError("manifest: no config echo in " + path);
  return parse_config_text(cfg_text);
}

inline std::map<std::string, std::vector<std::string>> manifest_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path);
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  bool in_cfg = false;
  while (std::getline(is, line)) {
    if (line == "config.begin") in_cfg = true;
    if (line == "config.end") {
      in_cfg = false;
      continue;
    }
    if (in_cfg) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)].push_back(line.substr(eq + 1));
  }
  return out;
}

inline void write_metrics(ManifestWriter& mw, const std::string& prefix,
                          const MetricsRecord& rec) {
  if (!rec.all_finite()) throw NumericError("metrics: non-finite value in " + prefix);
  mw.kv(prefix + ".victim_denoise_loss_ref", rec.victim_denoise_loss_ref);
  mw.kv(prefix + ".sample_fidelity", rec.sample_fidelity);
  mw.kv(prefix + ".sample_sharpness", rec.sample_sharpness);
  mw.kv(prefix + ".perturbation_linf", rec.perturbation_linf);
  mw.kv(prefix + ".perturbation_l2", rec.perturbation_l2);
  auto join = [](const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ",";
      os << v[i];
    }
    return os.str();
  };
  mw.kv(prefix + ".ref_loss_values", join(rec.ref_loss_values));
  mw.kv(prefix + ".fidelity_values", join(rec.fidelity_values));
}

inline MetricsRecord metrics_from_manifest(const std::map<std::string, std::vector<std::string>>& kv,
                                           const std::string& prefix) {
  MetricsRecord r;
  auto want = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(prefix + "." + k);
    if (it == kv.end() || it->second.empty())
      throw IoError("manifest: missing metric " + prefix + "." + k);
    return it->second.front();
  };
  r.victim_denoise_loss_ref = std::stod(want("victim_denoise_loss_ref"));
  r.sample_fidelity = std::stod(want("sample_fidelity"));
  r.sample_sharpness = std::stod(want("sample_sharpness"));
  r.perturbation_linf = std::stod(want("perturbation_linf"));
  r.perturbation_l2 = std::stod(want("perturbation_l2"));
  auto split = [](const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string f;
    while (std::getline(is, f, ','))
      if (!f.empty()) out.push_back(std::stod(f));
    return out;
  };
  r.ref_loss_values = split(want("ref_loss_values"));
  r.fidelity_values = split(want("fidelity_values"));
  return r;
}

// ---------------------------------------------------------------------------
// Phase runners used by the CLI. Each writes its outputs plus a manifest
// into out_dir; reruns with the same config and seed are byte-identical.

namespace detail {
inline void ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

// Run directories are never overwritten; a phase refuses to clobber an
// existing manifest. Replays go to a fresh directory (or remove the old
// one) and reproduce the same bytes.
inline void ensure_fresh_phase(const std::string& dir, const std::string& manifest_name) {
  ensure_dir(dir);
  const auto path = std::filesystem::path(dir) / manifest_name;
  if (std::filesystem::exists(path))
    throw IoError("refusing to overwrite existing run: " + path.string());
}

inline std::string poison_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "poison_%03d.png", i);
  return buf;
}
}  // namespace detail

inline void run_craft_phase(const LabConfig& cfg, const std::string& out_dir) {
  detail::ensure_fresh_phase(out_dir, "craft.manifest");
  BaseAssets assets = prepare_assets(cfg);
  SurrogatePool pool = build_variant_pool(assets, cfg, /*with_eot=*/true);
  save_pool((std::filesystem::path(out_dir) / "pool").string(), pool, assets.sched, cfg.seed);
  CraftResult result = craft_variant(CraftVariant::full, assets, cfg, pool);

  ManifestWriter mw("craft", cfg);
  mw.kv("dataset.instance", assets.dataset.instance_id);
  mw.kv("dataset.digest", detail::digest_values(assets.dataset.protect_set.images.values()));
  for (const CraftLoopRecord& r : result.trace) {
    std::ostringstream line;
    line.precision(17);
    line << "loop i=" << r.loop << " l_adv=" << r.l_adv << " linf=" << r.stats.linf
         << " l2=" << r.stats.l2;
    if (!r.transform_draws.empty()) line << " draws=" << r.transform_draws;
    mw.line(line.str());
  }
  const PerturbationStats final_stats = result.poison.stats();
  mw.kv("poison.linf", final_stats.linf);
  mw.kv("poison.l2", final_stats.l2);

  namespace fs = std::filesystem;
  for (int i = 0; i < result.poison.current.count(); ++i) {
    const std::string name = detail::poison_name(i);
    const std::string path = (fs::path(out_dir) / name).string();
    write_png(path, result.poison.current.image(i).detach());
    mw.kv("output." + name, detail::digest_file(path));
  }
  mw.save(fs::path(out_dir) / "craft.manifest");
}

// training set resolution for the victim: a poison directory or the clean
// protect set
inline ImageBatch victim_train_set(const BaseAssets& assets, const LabConfig& cfg,
                                   const std::string& poison_dir) {
  if (poison_dir.empty()) return assets.dataset.protect_set.clone();
  namespace fs = std::filesystem;
  if (!fs::is_directory(poison_dir))
    throw IoError("train-victim: not a directory: " + poison_dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(poison_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("train-victim: no PNG images in " + poison_dir);
  NoGradGuard ng;
  std::vector<Tensor> imgs;
  for (const std::string& f : files) {
    Tensor img = read_png(f);
    if (img.dim(1) != cfg.resolution || img.dim(2) != cfg.resolution)
      img = resize_bilinear(img, cfg.resolution, cfg.resolution);
    imgs.push_back(img);
  }
  return ImageBatch::uniform_cond(stack_outer(imgs), kCondInstance);
}

inline void run_train_victim_phase(const LabConfig& cfg, const std::string& poison_dir,
                                   const std::string& out_dir) {
  detail::ensure_fresh_phase(out_dir, "train.manifest");
  BaseAssets assets = prepare_assets(cfg);
  ImageBatch train_set = victim_train_set(assets, cfg, poison_dir);
  DenoiserModel victim = train_victim(assets, cfg, train_set);

  namespace fs = std::filesystem;
  const std::string ckpt = (fs::path(out_dir) / "victim.ckpt").string();
  save_model_file(ckpt, victim, assets.sched, cfg.seed);

  ManifestWriter mw("train-victim", cfg);
  mw.kv("victim.setting", cfg.victim_setting);
  mw.kv("victim.steps", std::to_string(cfg.victim_steps));
  mw.kv("train_set.source", poison_dir.empty() ? std::string("clean") : poison_dir);
  mw.kv("train_set.digest", detail::digest_values(train_set.images.values()));
  mw.kv("output.victim.ckpt", detail::digest_file(ckpt));
  mw.save(fs::path(out_dir) / "train.manifest");
}

inline void run_purify_phase(const LabConfig& cfg, const std::string& method,
                             const std::string& in_dir, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(in_dir)) throw IoError("purify: not a directory: " + in_dir);
  detail::ensure_fresh_phase(out_dir, "purify.manifest");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("purify: no PNG images in " + in_dir);

  ManifestWriter mw("purify", cfg);
  mw.kv("purify.method", method);
  RandomStream rng = detail::phase_stream(cfg.seed, detail::kSaltPurify);
  for (const std::string& f : files) {
    Tensor img = read_png(f);
    Tensor out;
    std::string extra;
    if (method == "tvm") {
      TvmResult res = tvm_purify(img, cfg.tvm, rng);
      out = res.image;
      std::ostringstream tr;
      tr.precision(17);
      for (std::size_t i = 0; i < res.objective_trace.size(); ++i) {
        if (i) tr << ",";
        tr << res.objective_trace[i];
      }
      extra = " converged=" + std::string(res.converged ? "1" : "0") + " trace=" + tr.str();
    } else if (method == "jpeg") {
      out = jpeg_purify(img, cfg.jpeg_quality);
      extra = " quality=" + std::to_string(cfg.jpeg_quality);
    } else if (method == "sr") {
      out = sr_purify(img, cfg.sr_scale);
      extra = " scale=" + std::to_string(cfg.sr_scale);
    } else {
      throw ConfigError("purify: unknown method " + method);
    }
    const std::string name = fs::path(f).filename().string();
    const std::string dst = (fs::path(out_dir) / name).string();
    write_png(dst, out);
    char psnr_buf[32];
    std::snprintf(psnr_buf, sizeof(psnr_buf), "%.6f", psnr(img, out));
    mw.line("image " + name + " psnr=" + std::string(psnr_buf) + extra);
    mw.kv("output." + name, detail::digest_file(dst));
  }
  mw.save(fs::path(out_dir) / "purify.manifest");
}

inline void run_evaluate_phase(const LabConfig& cfg, const std::string& victim_ckpt,
                               const std::string& out_dir) {
  detail::ensure_fresh_phase(out_dir, "evaluate.manifest");
  BaseAssets assets = prepare_assets(cfg);
  LoadedModel loaded = load_model_file(victim_ckpt);
  MetricsRecord rec = score_victim(assets, cfg, loaded.model);

  ManifestWriter mw("evaluate", cfg);
  mw.kv("victim.ckpt", victim_ckpt);
  mw.kv("victim.ckpt.digest", detail::digest_file(victim_ckpt));
  write_metrics(mw, "metric", rec);
  mw.save(std::filesystem::path(out_dir) / "evaluate.manifest");
}

// The four-cell grid, Trans.-setting victims, records in row order:
// (neither), (meta only), (eot only), (full).
inline std::vector<MetricsRecord> ablation_grid(const BaseAssets& assets, const LabConfig& cfg) {
  LabConfig grid_cfg = cfg;
  grid_cfg.victim_setting = "trans";
  SurrogatePool pool_eot = build_variant_pool(assets, grid_cfg, true);
  SurrogatePool pool_id = build_variant_pool(assets, grid_cfg, false);

  std::vector<MetricsRecord> records;
  for (CraftVariant v : {CraftVariant::neither, CraftVariant::meta_only, CraftVariant::eot_only,
                         CraftVariant::full}) {
    const SurrogatePool& pool = variant_eot(v) ? pool_eot : pool_id;
    CraftResult crafted = craft_variant(v, assets, grid_cfg, pool);
    DenoiserModel victim = train_victim(assets, grid_cfg, crafted.poison.current);
    MetricsRecord rec = score_victim(assets, grid_cfg, victim);
    const PerturbationStats stats = crafted.poison.stats();
    rec.perturbation_linf = stats.linf;
    rec.perturbation_l2 = stats.l2;
    records.push_back(std::move(rec));
  }
  return records;
}

inline void run_ablate_phase(const LabConfig& cfg, const std::string& out_dir) {
  detail::ensure_fresh_phase(out_dir, "ablate.manifest");
  BaseAssets assets = prepare_assets(cfg);
  std::vector<MetricsRecord> records = ablation_grid(assets, cfg);

  ManifestWriter mw("ablate", cfg);
  const char* names[] = {"neither", "meta_only", "eot_only", "full"};
  MetricTable table;
  table.columns = {"victim_denoise_loss_ref", "sample_fidelity", "sample_sharpness"};
  for (int i = 0; i < 4; ++i) {
    write_metrics(mw, std::string("cell.") + names[i], records[static_cast<std::size_t>(i)]);
    const MetricsRecord& r = records[static_cast<std::size_t>(i)];
    table.row_labels.push_back(names[i]);
    table.cells.push_back({mean_std(r.ref_loss_values),
                           mean_std(r.fidelity_values),
                           {r.sample_sharpness, 0.0}});
  }
  namespace fs = std::filesystem;
  {
    std::ofstream txt(fs::path(out_dir) / "ablation.txt", std::ios::binary);
    txt << render_text(table);
    std::ofstream csv(fs::path(out_dir) / "ablation.csv", std::ios::binary);
    csv << render_csv(table);
  }
  mw.kv("output.ablation.csv", detail::digest_file((fs::path(out_dir) / "ablation.csv").string()));
  mw.save(fs::path(out_dir) / "ablate.manifest");
}

// Aggregate evaluate/ablate manifests into one comparison table.
inline MetricTable report_from_manifests(const std::vector<std::string>& manifest_paths) {
  if (manifest_paths.empty()) throw ConfigError("report: need at least one manifest");
  MetricTable table;
  table.columns = {"victim_denoise_loss_ref", "sample_fidelity"};
  int expected_resolution = -1;
  for (const std::string& path : manifest_paths) {
    const LabConfig cfg = config_from_manifest(path);
    if (expected_resolution < 0) expected_resolution = cfg.resolution;
    if (cfg.resolution != expected_resolution)
      throw ConfigError("report: mixed working resolutions across manifests");
    auto kv = manifest_values(path);
    std::vector<std::pair<std::string, std::string>> prefixes;
    if (kv.count("metric.victim_denoise_loss_ref"))
      prefixes.emplace_back("metric", std::filesystem::path(path).parent_path().filename().string());
    for (const char* cell : {"neither", "meta_only", "eot_only", "full"})
      if (kv.count(std::string("cell.") + cell + ".victim_denoise_loss_ref"))
        prefixes.emplace_back(std::string("cell.") + cell, cell);
    for (const auto& [prefix, label] : prefixes) {
      MetricsRecord r = metrics_from_manifest(kv, prefix);
      table.row_labels.push_back(label.empty() ? prefix : label);
      table.cells.push_back({mean_std(r.ref_loss_values), mean_std(r.fidelity_values)});
    }
  }
  if (table.row_labels.empty()) throw ConfigError("report: no metric records found");
  return table;
}

inline void run_report_phase(const std::vector<std::string>& manifests,
                             const std::string& out_dir) {
  detail::ensure_dir(out_dir);
  MetricTable table = report_from_manifests(manifests);
  namespace fs = std::filesystem;
  std::ofstream txt(fs::path(out_dir) / "report.txt", std::ios::binary);
  txt << "metric proxies: victim_denoise_loss_ref (higher = stronger poisoning), "
         "sample_fidelity (higher = worse identity match)\n";
  txt << render_text(table);
  std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::binary);
  csv << render_csv(table);
}

}  // namespace cloak
