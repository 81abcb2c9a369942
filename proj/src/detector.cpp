#include "pedsense/detector.hpp"

#include <cmath>

#include "pedsense/error.hpp"

namespace pedsense {

using nn::Tensor;

namespace {

Tensor sinusoidal_encoding(int t_len, int dim) {
  Tensor pe = Tensor::zeros({t_len, dim});
  for (int t = 0; t < t_len; ++t) {
    for (int i = 0; i < dim / 2; ++i) {
      const double rate = std::pow(10000.0, 2.0 * i / dim);
      pe.data()[t * dim + 2 * i] = std::sin(t / rate);
      pe.data()[t * dim + 2 * i + 1] = std::cos(t / rate);
    }
  }
  return pe;
}

}  // namespace

DetectorModel::DetectorModel(ConvEncoderConfig encoder,
                             AggregatorConfig aggregator, uint64_t seed)
    : encoder_(std::move(encoder)), aggregator_(aggregator) {
  if (encoder_.channels.size() != 6) {
    throw_input("detector.bad_config", "encoder must have six conv stages");
  }
  if (encoder_.embedding_dim != 128 || aggregator_.model_dim != 128) {
    throw_input("detector.bad_config", "embedding dimension must be 128");
  }
  if (aggregator_.model_dim % aggregator_.heads != 0) {
    throw_input("detector.bad_config", "model_dim must be divisible by heads");
  }
  std::mt19937_64 rng(seed);
  const int k = encoder_.kernel;
  int c_in = 1;
  for (size_t s = 0; s < encoder_.channels.size(); ++s) {
    const int c_out = encoder_.channels[s];
    const std::string prefix = "enc.conv" + std::to_string(s + 1);
    params_.add(prefix + ".w", {c_out, c_in, k, k}, nn::Init::kaiming_uniform,
                c_in * k * k, c_out, rng);
    params_.add_zeros(prefix + ".b", {c_out});
    params_.add_constant(prefix + ".gain", {c_out}, 1.0);
    params_.add_zeros(prefix + ".shift", {c_out});
    c_in = c_out;
  }
  params_.add("enc.proj.w", {c_in, encoder_.embedding_dim},
              nn::Init::xavier_uniform, c_in, encoder_.embedding_dim, rng);
  params_.add_zeros("enc.proj.b", {encoder_.embedding_dim});

  const int d = aggregator_.model_dim;
  for (int l = 0; l < aggregator_.layers; ++l) {
    const std::string prefix = "agg.layer" + std::to_string(l + 1);
    for (const char* name : {".wq", ".wk", ".wv", ".wo"}) {
      params_.add(prefix + name, {d, d}, nn::Init::xavier_uniform, d, d, rng);
    }
    params_.add_constant(prefix + ".ln1.gain", {d}, 1.0);
    params_.add_zeros(prefix + ".ln1.shift", {d});
    params_.add_constant(prefix + ".ln2.gain", {d}, 1.0);
    params_.add_zeros(prefix + ".ln2.shift", {d});
    params_.add(prefix + ".ffn1.w", {d, aggregator_.ffn_dim},
                nn::Init::kaiming_uniform, d, aggregator_.ffn_dim, rng);
    params_.add_zeros(prefix + ".ffn1.b", {aggregator_.ffn_dim});
    params_.add(prefix + ".ffn2.w", {aggregator_.ffn_dim, d},
                nn::Init::xavier_uniform, aggregator_.ffn_dim, d, rng);
    params_.add_zeros(prefix + ".ffn2.b", {d});
  }
  params_.add_constant("agg.input.gain", {d}, 1.0);
  params_.add_zeros("agg.input.shift", {d});
  params_.add_constant("agg.final.gain", {d}, 1.0);
  params_.add_zeros("agg.final.shift", {d});
  params_.add("cls.w", {d, 1}, nn::Init::xavier_uniform, d, 1, rng);
  params_.add_zeros("cls.b", {1});
}

Tensor DetectorModel::encode(const Tensor& patches) {
  if (patches.shape().size() != 4 || patches.shape()[1] != 1 ||
      patches.shape()[2] != encoder_.in_frames ||
      patches.shape()[3] != encoder_.in_bands) {
    throw_input("detector.shape_mismatch",
                "expected [N,1," + std::to_string(encoder_.in_frames) + "," +
                    std::to_string(encoder_.in_bands) + "], got " +
                    nn::shape_str(patches.shape()));
  }
  Tensor x = patches;
  const int pad = encoder_.kernel / 2;
  for (size_t s = 0; s < encoder_.channels.size(); ++s) {
    const std::string prefix = "enc.conv" + std::to_string(s + 1);
    x = nn::conv2d(x, params_.find(prefix + ".w").tensor,
                   params_.find(prefix + ".b").tensor, 1, pad);
    // The last stage feeds the global pool unnormalized so per-second energy
    // differences reach the embedding.
    if (s + 1 < encoder_.channels.size()) {
      x = nn::channel_norm(x, params_.find(prefix + ".gain").tensor,
                           params_.find(prefix + ".shift").tensor);
    }
    x = nn::relu(x);
    const int stage = static_cast<int>(s) + 1;
    for (int p : encoder_.pool_after) {
      if (p == stage) x = nn::maxpool2d(x, 2, 2);
    }
  }
  Tensor pooled = nn::global_avg_pool(x);
  return nn::linear(pooled, params_.find("enc.proj.w").tensor,
                    params_.find("enc.proj.b").tensor);
}

Tensor DetectorModel::aggregate(const Tensor& embeddings) {
  if (embeddings.shape().size() != 2 ||
      embeddings.shape()[1] != aggregator_.model_dim) {
    throw_input("detector.shape_mismatch",
                "aggregate expects [T," + std::to_string(aggregator_.model_dim) +
                    "]");
  }
  const int t_len = embeddings.shape()[0];
  if (t_len < 1 || t_len > aggregator_.context_seconds) {
    throw_input("detector.context_exceeded",
                "T=" + std::to_string(t_len) + " outside [1," +
                    std::to_string(aggregator_.context_seconds) + "]");
  }
  const int d = aggregator_.model_dim;
  const int heads = aggregator_.heads;
  const int dh = d / heads;

  // Bring the embeddings to unit scale so they are not drowned by the
  // positional encoding or the residual additions.
  Tensor x = nn::layer_norm(embeddings,
                            params_.find("agg.input.gain").tensor,
                            params_.find("agg.input.shift").tensor);
  if (aggregator_.positional_encoding) {
    x = nn::add(x, sinusoidal_encoding(t_len, d));
  }
  for (int l = 0; l < aggregator_.layers; ++l) {
    const std::string prefix = "agg.layer" + std::to_string(l + 1);
    // Pre-norm attention block.
    Tensor normed = nn::layer_norm(x, params_.find(prefix + ".ln1.gain").tensor,
                                   params_.find(prefix + ".ln1.shift").tensor);
    Tensor q = nn::matmul(normed, params_.find(prefix + ".wq").tensor);
    Tensor k = nn::matmul(normed, params_.find(prefix + ".wk").tensor);
    Tensor v = nn::matmul(normed, params_.find(prefix + ".wv").tensor);
    std::vector<Tensor> head_outputs;
    for (int h = 0; h < heads; ++h) {
      Tensor qh = nn::slice_cols(q, h * dh, (h + 1) * dh);
      Tensor kh = nn::slice_cols(k, h * dh, (h + 1) * dh);
      Tensor vh = nn::slice_cols(v, h * dh, (h + 1) * dh);
      Tensor scores = nn::scale(nn::matmul_nt(qh, kh), 1.0 / std::sqrt(dh));
      Tensor weights = nn::softmax_rows(scores);  // no causal mask
      head_outputs.push_back(nn::matmul(weights, vh));
    }
    Tensor attn = nn::matmul(nn::concat_cols(head_outputs),
                             params_.find(prefix + ".wo").tensor);
    x = nn::add(x, attn);
    // Pre-norm feed-forward block.
    Tensor normed2 = nn::layer_norm(x, params_.find(prefix + ".ln2.gain").tensor,
                                    params_.find(prefix + ".ln2.shift").tensor);
    Tensor hidden = nn::relu(nn::linear(normed2,
                                        params_.find(prefix + ".ffn1.w").tensor,
                                        params_.find(prefix + ".ffn1.b").tensor));
    Tensor ffn = nn::linear(hidden, params_.find(prefix + ".ffn2.w").tensor,
                            params_.find(prefix + ".ffn2.b").tensor);
    x = nn::add(x, ffn);
  }
  return nn::layer_norm(x, params_.find("agg.final.gain").tensor,
                        params_.find("agg.final.shift").tensor);
}

Tensor DetectorModel::classify(const Tensor& context) {
  Tensor logits = nn::linear(context, params_.find("cls.w").tensor,
                             params_.find("cls.b").tensor);
  return nn::sigmoid(logits);
}

Tensor DetectorModel::forward_window(const Tensor& patches) {
  return classify(aggregate(encode(patches)));
}

std::vector<double> DetectorModel::encode_second(const MelPatch& patch) {
  Tensor x = Tensor::from_data({1, 1, patch.frames, patch.bands}, patch.values);
  return encode(x).data();
}

nn::Tensor patches_to_tensor(const MelSequence& seq, size_t begin, size_t end) {
  if (begin >= end || end > seq.patches.size()) {
    throw_input("detector.shape_mismatch", "bad patch range");
  }
  const int f = seq.patches[begin].frames;
  const int m = seq.patches[begin].bands;
  const int n = static_cast<int>(end - begin);
  Tensor out = Tensor::zeros({n, 1, f, m});
  for (size_t i = begin; i < end; ++i) {
    std::copy(seq.patches[i].values.begin(), seq.patches[i].values.end(),
              out.data().begin() + static_cast<size_t>(i - begin) * f * m);
  }
  return out;
}

DetectorOutput DetectorModel::run(const MelSequence& sequence) {
  DetectorOutput out;
  const size_t total = sequence.patches.size();
  const size_t window = static_cast<size_t>(aggregator_.context_seconds);
  for (size_t begin = 0; begin < total; begin += window) {
    const size_t end = std::min(total, begin + window);
    Tensor probs = forward_window(patches_to_tensor(sequence, begin, end));
    for (int i = 0; i < probs.size(); ++i) {
      out.probabilities.push_back(probs.data()[i]);
      out.timestamps.push_back(sequence.timestamps.empty()
                                   ? static_cast<int64_t>(begin + i)
                                   : sequence.timestamps[begin + i]);
    }
  }
  return out;
}

DetectorOutput DetectorModel::run(const AudioClip& clip,
                                  const FrontendConfig& frontend) {
  return run(clip_to_sequence(clip, frontend));
}

Prediction DetectorModel::predict(const AudioClip& clip, double threshold,
                                  const FrontendConfig& frontend) {
  DetectorOutput out = run(clip, frontend);
  Prediction pred;
  pred.probabilities = out.probabilities;
  pred.timestamps = out.timestamps;
  pred.labels.reserve(out.probabilities.size());
  for (double p : out.probabilities) {
    pred.labels.push_back(p >= threshold ? 1 : 0);
  }
  return pred;
}

}  // namespace pedsense
