#include "pedsense/nn/module.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pedsense/error.hpp"

namespace pedsense::nn {
namespace {

constexpr uint32_t kMagic = 0x4b435350;  // "PSCK"
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v & 0xff),
                  static_cast<uint8_t>((v >> 8) & 0xff),
                  static_cast<uint8_t>((v >> 16) & 0xff),
                  static_cast<uint8_t>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

Tensor ParamStore::add(const std::string& name, Shape shape, Init init,
                       int fan_in, int fan_out, std::mt19937_64& rng) {
  for (const auto& p : params_) {
    if (p.name == name) {
      throw_input("nn.duplicate_param", "parameter " + name + " already exists");
    }
  }
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  double bound = 0.0;
  switch (init) {
    case Init::zeros:
      break;
    case Init::kaiming_uniform:
      bound = std::sqrt(6.0 / fan_in);
      break;
    case Init::xavier_uniform:
      bound = std::sqrt(6.0 / (fan_in + fan_out));
      break;
  }
  if (bound > 0.0) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = dist(rng);
  }
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  std::mt19937_64 rng(0);
  return add(name, std::move(shape), Init::zeros, 1, 1, rng);
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape,
                                double value) {
  Tensor t = add_zeros(name, std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Parameter& ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw_input("nn.unknown_param", "no parameter named " + name);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot_values() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor.data());
  return out;
}

void ParamStore::restore_values(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) {
    throw_input("nn.snapshot_mismatch", "snapshot size mismatch");
  }
  for (size_t i = 0; i < values.size(); ++i) {
    params_[i].tensor.data() = values[i];
  }
}

SgdOptimizer::SgdOptimizer(ParamStore& store, double learning_rate,
                           double momentum)
    : store_(store), learning_rate_(learning_rate), momentum_(momentum) {
  if (learning_rate <= 0.0 || momentum < 0.0 || momentum >= 1.0) {
    throw_input("sgd.bad_config", "need lr > 0 and momentum in [0,1)");
  }
  for (const auto& p : store.params()) {
    velocity_.emplace_back(p.tensor.size(), 0.0);
  }
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < store_.params().size(); ++i) {
    auto& t = store_.params()[i].tensor;
    auto& v = velocity_[i];
    for (int j = 0; j < t.size(); ++j) {
      v[j] = momentum_ * v[j] + t.grad()[j];
      t.data()[j] -= learning_rate_ * v[j];
    }
  }
}

void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw_input("checkpoint.write", "cannot open " + path);
  put_u32(f, kMagic);
  put_u32(f, kVersion);
  put_u32(f, static_cast<uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    put_u32(f, static_cast<uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(f, static_cast<uint32_t>(p.tensor.shape().size()));
    for (int d : p.tensor.shape()) put_u32(f, static_cast<uint32_t>(d));
    for (double v : p.tensor.data()) {
      float fv = static_cast<float>(v);
      f.write(reinterpret_cast<const char*>(&fv), 4);
    }
  }
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_input("checkpoint.open", "cannot open " + path);
  if (get_u32(f) != kMagic) throw_input("checkpoint.bad_magic", path);
  if (get_u32(f) != kVersion) throw_input("checkpoint.bad_version", path);
  const uint32_t count = get_u32(f);
  if (count != store.params().size()) {
    throw_input("checkpoint.param_mismatch",
                "checkpoint has " + std::to_string(count) + " parameters");
  }
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t rank = get_u32(f);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(f));
    Parameter& p = store.find(name);
    if (p.tensor.shape() != shape) {
      throw_input("checkpoint.shape_mismatch", "parameter " + name);
    }
    for (auto& v : p.tensor.data()) {
      float fv;
      f.read(reinterpret_cast<char*>(&fv), 4);
      v = static_cast<double>(fv);
    }
    if (!f) throw_input("checkpoint.truncated", path);
  }
}

GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           ParamStore& store, double tolerance,
                           int max_entries_per_tensor, double h) {
  store.zero_grad();
  Tensor loss = forward();
  loss.backward();

  GradCheckReport report;
  for (auto& p : store.params()) {
    const int n = p.tensor.size();
    // Deterministic stride subsampling for large tensors.
    const int stride = std::max(1, n / max_entries_per_tensor);
    for (int i = 0; i < n; i += stride) {
      const double saved = p.tensor.data()[i];
      p.tensor.data()[i] = saved + h;
      const double up = forward().item();
      p.tensor.data()[i] = saved - h;
      const double down = forward().item();
      p.tensor.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.tensor.grad()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max(1.0, std::abs(analytic));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.entries_checked;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace pedsense::nn
