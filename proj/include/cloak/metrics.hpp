#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cloak/dataset.hpp"
#include "cloak/diffusion.hpp"

namespace cloak {

// Self-contained proxies for the usual learned quality metrics: the victim's
// denoising loss on held-out references (higher = worse personalization),
// nearest-reference pixel MSE of its samples (higher = worse identity), and
// a gradient-energy sharpness score.
struct MetricsRecord {
  double victim_denoise_loss_ref = 0.0;
  double sample_fidelity = 0.0;
  double sample_sharpness = 0.0;
  double perturbation_linf = 0.0;
  double perturbation_l2 = 0.0;
  std::vector<double> ref_loss_values;  // one per (pass, reference image)
  std::vector<double> fidelity_values;  // one per sample

  bool all_finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    if (!(ok(victim_denoise_loss_ref) && ok(sample_fidelity) && ok(sample_sharpness) &&
          ok(perturbation_linf) && ok(perturbation_l2)))
      return false;
    for (double v : ref_loss_values)
      if (!ok(v)) return false;
    for (double v : fidelity_values)
      if (!ok(v)) return false;
    return true;
  }
};

namespace detail {

inline double gradient_energy(const Tensor& img) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  double acc = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    const double* p = img.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x + 1 < w; ++x) {
        const double dh = p[y * w + x + 1] - p[y * w + x];
        const double dv = p[(y + 1) * w + x] - p[y * w + x];
        acc += std::sqrt(dh * dh + dv * dv);
      }
  }
  return acc / (static_cast<double>(c) * (h - 1) * (w - 1));
}

}  // namespace detail

// Score a trained victim: reference-set denoising loss (eval_passes
// independent draws per image) and sample-based fidelity/sharpness from
// n_samples instance-conditioned generations.
inline MetricsRecord evaluate_victim(const DenoiserModel& victim, const InstanceDataset& ds,
                                     const NoiseSchedule& sched, int n_samples,
                                     int sampler_steps, int eval_passes, RandomStream& rng) {
  if (n_samples < 4) throw ConfigError("evaluate_victim: n_samples must be >= 4");
  if (eval_passes < 1) throw ConfigError("evaluate_victim: eval_passes must be >= 1");
  NoGradGuard ng;
  MetricsRecord rec;

  const ImageBatch& refs = ds.reference_set;
  for (int pass = 0; pass < eval_passes; ++pass)
    for (int i = 0; i < refs.count(); ++i) {
      ImageBatch one = refs.subset({i});
      rec.ref_loss_values.push_back(
          denoise_loss(one, victim, sched, rng, kCondInstance).item());
    }
  double acc = 0.0;
  for (double v : rec.ref_loss_values) acc += v;
  rec.victim_denoise_loss_ref = acc / static_cast<double>(rec.ref_loss_values.size());

  ImageBatch samples = sample(victim, kCondInstance, sched, sampler_steps, n_samples, rng);
  double fid_acc = 0.0, sharp_acc = 0.0;
  for (int s = 0; s < samples.count(); ++s) {
    Tensor img = samples.image(s);
    double best = INFINITY;
    for (int i = 0; i < refs.count(); ++i)
      best = std::min(best, mse(img, refs.image(i)).item());
    rec.fidelity_values.push_back(best);
    fid_acc += best;
    sharp_acc += detail::gradient_energy(img);
  }
  rec.sample_fidelity = fid_acc / samples.count();
  rec.sample_sharpness = sharp_acc / samples.count();
  return rec;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test (two-sided, paired)

namespace detail {

// Exact tail probabilities of W+ over all sign assignments, with midranks
// doubled so every achievable statistic is an integer.
inline double wilcoxon_exact_p(const std::vector<long long>& ranks2, long long w2) {
  long long total = 0;
  for (long long r : ranks2) total += r;
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long long reach = 0;
  for (long long r : ranks2) {
    reach += r;
    for (long long s = reach; s >= r; --s)
      count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
  }
  const double denom = std::pow(2.0, static_cast<double>(ranks2.size()));
  double lo = 0.0, hi = 0.0;
  for (long long s = 0; s <= total; ++s) {
    if (s <= w2) lo += count[static_cast<std::size_t>(s)];
    if (s >= w2) hi += count[static_cast<std::size_t>(s)];
  }
  const double p = 2.0 * std::min(lo, hi) / denom;
  return std::min(1.0, p);
}

}  // namespace detail

// Zero differences are dropped and ties mid-ranked; exact enumeration up to
// 25 effective pairs, normal approximation with continuity and tie
// corrections above.
inline double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("wilcoxon: length mismatch");
  if (a.size() < 5) throw ConfigError("wilcoxon: need at least 5 pairs");

  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.empty()) return 1.0;
  const int m = static_cast<int>(diff.size());

  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return std::abs(diff[static_cast<std::size_t>(x)]) < std::abs(diff[static_cast<std::size_t>(y)]);
  });

  // midranks, doubled to stay integral
  std::vector<long long> rank2(static_cast<std::size_t>(m));
  std::vector<long long> tie_sizes;
  int i = 0;
  while (i < m) {
    int j = i;
    while (j + 1 < m && std::abs(diff[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])]) ==
                            std::abs(diff[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]))
      ++j;
    const long long r2 = (i + 1) + (j + 1);  // 2 * average rank
    for (int k = i; k <= j; ++k) rank2[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = r2;
    if (j > i) tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }

  long long w2_plus = 0;
  for (int k = 0; k < m; ++k)
    if (diff[static_cast<std::size_t>(k)] > 0.0) w2_plus += rank2[static_cast<std::size_t>(k)];

  if (m <= 25) return detail::wilcoxon_exact_p(rank2, w2_plus);

  const double w_plus = w2_plus / 2.0;
  const double mu = m * (m + 1) / 4.0;
  double var = m * (m + 1) * (2.0 * m + 1) / 24.0;
  for (long long t : tie_sizes) var -= static_cast<double>(t * t * t - t) / 48.0;
  if (var <= 0.0) return 1.0;
  double z = w_plus - mu;
  z += z > 0 ? -0.5 : (z < 0 ? 0.5 : 0.0);  // continuity correction
  z /= std::sqrt(var);
  return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

// ---------------------------------------------------------------------------
// Aggregation tables (mean and population std per metric)

struct MetricTable {
  std::vector<std::string> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<std::pair<double, double>>> cells;  // (mean, std)
};

inline std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mu = 0.0;
  for (double v : values) mu += v;
  mu /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  var /= static_cast<double>(values.size());
  return {mu, std::sqrt(var)};
}

inline std::string render_text(const MetricTable& t) {
  std::ostringstream os;
  std::size_t label_w = 8;
  for (const auto& r : t.row_labels) label_w = std::max(label_w, r.size() + 2);
  os << std::string(label_w, ' ');
  for (const auto& c : t.columns) {
    std::ostringstream cell;
    cell << c;
    os << "  " << cell.str() << std::string(cell.str().size() < 22 ? 22 - cell.str().size() : 1, ' ');
  }
  os << "\n";
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    os << t.row_labels[r] << std::string(label_w - t.row_labels[r].size(), ' ');
    for (const auto& [mu, sd] : t.cells[r]) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "  %10.6f ± %-9.6f", mu, sd);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

inline std::string render_csv(const MetricTable& t) {
  std::ostringstream os;
  os << "variant";
  for (const auto& c : t.columns) os << "," << c << "_mean," << c << "_std";
  os << "\n";
  os.precision(17);
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    os << t.row_labels[r];
    for (const auto& [mu, sd] : t.cells[r]) os << "," << mu << "," << sd;
    os << "\n";
  }
  return os.str();
}

inline MetricTable parse_csv(const std::string& text) {
  MetricTable t;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw IoError("parse_csv: empty input");
  {
    std::istringstream hs(line);
    std::string field;
    std::getline(hs, field, ',');  // "variant"
    std::vector<std::string> raw;
    while (std::getline(hs, field, ',')) raw.push_back(field);
    if (raw.size() % 2 != 0) throw IoError("parse_csv: odd header count");
    for (std::size_t i = 0; i < raw.size(); i += 2) {
      std::string name = raw[i];
      if (name.size() > 5 && name.substr(name.size() - 5) == "_mean")
        name = name.substr(0, name.size() - 5);
      t.columns.push_back(name);
    }
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    t.row_labels.push_back(field);
    std::vector<std::pair<double, double>> row;
    while (std::getline(ls, field, ',')) {
      const double mu = std::stod(field);
      if (!std::getline(ls, field, ',')) throw IoError("parse_csv: dangling mean");
      row.emplace_back(mu, std::stod(field));
    }
    if (row.size() != t.columns.size()) throw IoError("parse_csv: ragged row");
    t.cells.push_back(std::move(row));
  }
  return t;
}

}  // namespace cloak
