#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cloak/schedule.hpp"
#include "cloak/tensor.hpp"

namespace cloak {

// Conditioning slots: one plays the instance token, one the class noun.
constexpr int kCondInstance = 0;
constexpr int kCondClass = 1;

struct ArchDesc {
  int in_channels = 3;
  int hidden1 = 16;
  int hidden2 = 32;
  int embed_dim = 16;
  int cond_count = 2;
  int resolution = 32;  // must be even (stride-2 bottleneck)

  bool operator==(const ArchDesc&) const = default;
};

// Small convolutional encoder/decoder that predicts the clean image from a
// noised one. Time and conditioning embeddings are projected to the
// bottleneck width and broadcast-added over its spatial grid.
class DenoiserModel {
 public:
  DenoiserModel() = default;

  DenoiserModel(const ArchDesc& arch, RandomStream& rng) : arch_(arch) {
    const int c = arch.in_channels, h1 = arch.hidden1, h2 = arch.hidden2;
    const int e = arch.embed_dim;
    conv1_w_ = he_init({h1, c, 3, 3}, c * 9, rng);
    conv1_b_ = Tensor::zeros({h1}, true);
    conv2_w_ = he_init({h2, h1, 3, 3}, h1 * 9, rng);
    conv2_b_ = Tensor::zeros({h2}, true);
    time_proj_ = he_init({h2, e}, e, rng);
    cond_proj_ = he_init({h2, e}, e, rng);
    conv3_w_ = he_init({h1, h2, 3, 3}, h2 * 9, rng);
    conv3_b_ = Tensor::zeros({h1}, true);
    conv4_w_ = he_init({c, h1, 3, 3}, h1 * 9, rng);
    conv4_b_ = Tensor::zeros({c}, true);
    std::vector<double> table(static_cast<std::size_t>(arch.cond_count * e));
    for (double& v : table) v = 0.1 * rng.normal();
    cond_table_ = Tensor::from_data({arch.cond_count, e}, std::move(table), true);
  }

  const ArchDesc& arch() const { return arch_; }

  // x-prediction forward pass on one [C,H,W] image.
  Tensor forward(const Tensor& z, int t, int cond_id) const {
    if (cond_id < 0 || cond_id >= arch_.cond_count)
      throw ConfigError("forward: cond_id out of range");
    const int h2 = arch_.hidden2;
    Tensor a1 = relu(add(conv2d(z, conv1_w_, 1, 1), reshape(conv1_b_, {arch_.hidden1, 1, 1})));
    Tensor a2 = relu(add(conv2d(a1, conv2_w_, 2, 1), reshape(conv2_b_, {h2, 1, 1})));

    Tensor emb = add(matmul(time_proj_, time_embedding(t)),
                     matmul(cond_proj_, reshape(select_outer(cond_table_, cond_id),
                                                {arch_.embed_dim, 1})));
    a2 = add(a2, reshape(emb, {h2, 1, 1}));

    Tensor a3 = relu(add(conv2d(upsample_nearest2x(a2), conv3_w_, 1, 1),
                         reshape(conv3_b_, {arch_.hidden1, 1, 1})));
    return add(conv2d(a3, conv4_w_, 1, 1), reshape(conv4_b_, {arch_.in_channels, 1, 1}));
  }

  std::vector<Tensor*> params() {
    return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_, &time_proj_, &cond_proj_,
            &conv3_w_, &conv3_b_, &conv4_w_, &conv4_b_, &cond_table_};
  }

  std::vector<std::pair<std::string, const Tensor*>> named_params() const {
    return {{"conv1_w", &conv1_w_}, {"conv1_b", &conv1_b_},
            {"conv2_w", &conv2_w_}, {"conv2_b", &conv2_b_},
            {"time_proj", &time_proj_}, {"cond_proj", &cond_proj_},
            {"conv3_w", &conv3_w_}, {"conv3_b", &conv3_b_},
            {"conv4_w", &conv4_w_}, {"conv4_b", &conv4_b_},
            {"cond_table", &cond_table_}};
  }

  // Deep copy; mutating the clone never touches the original.
  DenoiserModel clone() const {
    DenoiserModel m;
    m.arch_ = arch_;
    m.conv1_w_ = conv1_w_.clone(true);
    m.conv1_b_ = conv1_b_.clone(true);
    m.conv2_w_ = conv2_w_.clone(true);
    m.conv2_b_ = conv2_b_.clone(true);
    m.time_proj_ = time_proj_.clone(true);
    m.cond_proj_ = cond_proj_.clone(true);
    m.conv3_w_ = conv3_w_.clone(true);
    m.conv3_b_ = conv3_b_.clone(true);
    m.conv4_w_ = conv4_w_.clone(true);
    m.conv4_b_ = conv4_b_.clone(true);
    m.cond_table_ = cond_table_.clone(true);
    return m;
  }

  bool same_values(const DenoiserModel& other) const {
    auto a = named_params();
    auto b = other.named_params();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].second->values() != b[i].second->values()) return false;
    return true;
  }

 private:
  static Tensor he_init(Shape shape, int fan_in, RandomStream& rng) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = std_dev * rng.normal();
    return Tensor::from_data(std::move(shape), std::move(v), true);
  }

  // Sinusoidal embedding of the integer timestep, shaped [embed_dim, 1].
  Tensor time_embedding(int t) const {
    const int e = arch_.embed_dim;
    std::vector<double> v(static_cast<std::size_t>(e));
    const int half = e / 2;
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      v[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
      v[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return Tensor::from_data({e, 1}, std::move(v));
  }

  ArchDesc arch_;
  Tensor conv1_w_, conv1_b_;
  Tensor conv2_w_, conv2_b_;
  Tensor time_proj_, cond_proj_;
  Tensor conv3_w_, conv3_b_;
  Tensor conv4_w_, conv4_b_;
  Tensor cond_table_;
};

// ---------------------------------------------------------------------------
// Checkpoint file: header (arch, schedule params, seed) + named tensors.

namespace detail {
constexpr char kModelMagic[8] = {'C', 'L', 'K', 'M', 'O', 'D', 'L', '1'};

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint: truncated");
  return v;
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint: truncated");
  return v;
}
}  // namespace detail

inline void save_model(std::ostream& os, const DenoiserModel& model,
                       const NoiseSchedule& sched, std::uint64_t seed) {
  os.write(detail::kModelMagic, sizeof(detail::kModelMagic));
  const ArchDesc& a = model.arch();
  detail::write_u32(os, static_cast<std::uint32_t>(a.in_channels));
  detail::write_u32(os, static_cast<std::uint32_t>(a.hidden1));
  detail::write_u32(os, static_cast<std::uint32_t>(a.hidden2));
  detail::write_u32(os, static_cast<std::uint32_t>(a.embed_dim));
  detail::write_u32(os, static_cast<std::uint32_t>(a.cond_count));
  detail::write_u32(os, static_cast<std::uint32_t>(a.resolution));
  detail::write_u32(os, static_cast<std::uint32_t>(sched.t_steps));
  detail::write_f64(os, sched.beta_min);
  detail::write_f64(os, sched.beta_max);
  os.write(reinterpret_cast<const char*>(&seed), sizeof(seed));
  const auto named = model.named_params();
  detail::write_u32(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, *tensor);
  }
  if (!os) throw IoError("save_model: stream failure");
}

struct LoadedModel {
  DenoiserModel model;
  NoiseSchedule sched;
  std::uint64_t seed = 0;
};

inline LoadedModel load_model(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kModelMagic, sizeof(magic)) != 0)
    throw IoError("load_model: bad magic");
  ArchDesc a;
  a.in_channels = static_cast<int>(detail::read_u32(is));
  a.hidden1 = static_cast<int>(detail::read_u32(is));
  a.hidden2 = static_cast<int>(detail::read_u32(is));
  a.embed_dim = static_cast<int>(detail::read_u32(is));
  a.cond_count = static_cast<int>(detail::read_u32(is));
  a.resolution = static_cast<int>(detail::read_u32(is));
  const int t_steps = static_cast<int>(detail::read_u32(is));
  const double beta_min = detail::read_f64(is);
  const double beta_max = detail::read_f64(is);
  std::uint64_t seed = 0;
  is.read(reinterpret_cast<char*>(&seed), sizeof(seed));

  RandomStream scratch(0);
  LoadedModel out{DenoiserModel(a, scratch), make_schedule(t_steps, beta_min, beta_max), seed};
  const std::uint32_t n = detail::read_u32(is);
  auto params = out.model.params();
  auto named = out.model.named_params();
  if (n != named.size()) throw IoError("load_model: parameter count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = detail::read_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    Tensor t = read_tensor(is);
    bool placed = false;
    for (std::size_t j = 0; j < named.size(); ++j) {
      if (named[j].first == name) {
        if (t.shape() != named[j].second->shape())
          throw IoError("load_model: shape mismatch for " + name);
        params[j]->values() = t.values();
        placed = true;
        break;
      }
    }
    if (!placed) throw IoError("load_model: unknown parameter " + name);
  }
  return out;
}

inline void save_model_file(const std::string& path, const DenoiserModel& model,
                            const NoiseSchedule& sched, std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_model_file: cannot open " + path);
  save_model(os, model, sched, seed);
}

inline LoadedModel load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_model_file: cannot open " + path);
  return load_model(is);
}

}  // namespace cloak
