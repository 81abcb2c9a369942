#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pedsense/audio.hpp"
#include "pedsense/melspec.hpp"
#include "pedsense/nn/module.hpp"
#include "pedsense/nn/ops.hpp"

namespace pedsense {

// Six conv stages over the mel patch, batch-free channel normalization and
// relu between them, global average pool, projection to the embedding.
// Channel widths default to a desk-scale plan; the stage count and the 128-d
// embedding are fixed.
struct ConvEncoderConfig {
  std::vector<int> channels{8, 8, 16, 16, 32, 32};
  int kernel = 3;
  std::vector<int> pool_after{1, 2, 3, 4};  // 1-based stage indices
  int embedding_dim = 128;
  int in_frames = 98;
  int in_bands = 64;
};

struct AggregatorConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 128;
  int ffn_dim = 256;
  int context_seconds = 10;
  bool positional_encoding = true;
};

struct DetectorOutput {
  std::vector<double> probabilities;
  std::vector<int64_t> timestamps;
};

struct Prediction {
  std::vector<int> labels;
  std::vector<double> probabilities;
  std::vector<int64_t> timestamps;
};

// Per-second mel patch -> conv encoder -> 128-d embedding -> transformer
// aggregation over the clip -> per-second pedestrian probability.
class DetectorModel {
 public:
  DetectorModel(ConvEncoderConfig encoder, AggregatorConfig aggregator,
                uint64_t seed);

  nn::ParamStore& params() { return params_; }
  const ConvEncoderConfig& encoder_config() const { return encoder_; }
  const AggregatorConfig& aggregator_config() const { return aggregator_; }

  // patches [N, 1, F, M] -> embeddings [N, embedding_dim]
  nn::Tensor encode(const nn::Tensor& patches);
  // embeddings [T, D] -> contextualized [T, D]; 1 <= T <= context_seconds
  nn::Tensor aggregate(const nn::Tensor& embeddings);
  // context [T, D] -> probabilities [T, 1]
  nn::Tensor classify(const nn::Tensor& context);
  // One window end to end: patches [T, 1, F, M] -> probabilities [T, 1].
  nn::Tensor forward_window(const nn::Tensor& patches);

  std::vector<double> encode_second(const MelPatch& patch);

  // Clip at the working rate; processed in context-sized windows.
  DetectorOutput run(const AudioClip& clip, const FrontendConfig& frontend = {});
  DetectorOutput run(const MelSequence& sequence);
  Prediction predict(const AudioClip& clip, double threshold = 0.5,
                     const FrontendConfig& frontend = {});

 private:
  ConvEncoderConfig encoder_;
  AggregatorConfig aggregator_;
  nn::ParamStore params_;
};

// Converts a MelSequence slice into a [T, 1, F, M] tensor.
nn::Tensor patches_to_tensor(const MelSequence& seq, size_t begin, size_t end);

}  // namespace pedsense
