#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pedsense/nn/tensor.hpp"

namespace pedsense::nn {

struct Parameter {
  std::string name;
  Tensor tensor;
};

enum class Init { zeros, kaiming_uniform, xavier_uniform };

// Owns a model's named parameters; names must be unique.
class ParamStore {
 public:
  // fan_in/fan_out drive the init bounds; pass the natural values for the
  // layer the tensor feeds.
  Tensor add(const std::string& name, Shape shape, Init init, int fan_in,
             int fan_out, std::mt19937_64& rng);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& find(const std::string& name);

  void zero_grad();
  // Deep copy of all parameter values (for best-checkpoint retention).
  std::vector<std::vector<double>> snapshot_values() const;
  void restore_values(const std::vector<std::vector<double>>& values);

 private:
  std::vector<Parameter> params_;
};

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.9;  // per-epoch multiplier
  int batch_size = 16;
  int epochs = 20;
  uint64_t seed = 1;
};

// v <- momentum * v + g;  w <- w - lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(ParamStore& store, double learning_rate, double momentum);
  void step();
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  double learning_rate() const { return learning_rate_; }

 private:
  ParamStore& store_;
  double learning_rate_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

// Binary little-endian checkpoint: magic 'PSCK', version, parameter count,
// then per parameter (name length, name, rank, dims, float32 data).
void save_checkpoint(const std::string& path, const ParamStore& store);
void load_checkpoint(const std::string& path, ParamStore& store);

struct GradCheckReport {
  double max_rel_error = 0.0;
  int entries_checked = 0;
  bool passed = false;
};

// Central finite differences at h = 1e-5 against analytic gradients from one
// backward pass of `forward()`. Large tensors are subsampled deterministically.
GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           ParamStore& store, double tolerance,
                           int max_entries_per_tensor = 24, double h = 1e-5);

}  // namespace pedsense::nn
