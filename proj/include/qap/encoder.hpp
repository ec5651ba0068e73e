#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qap/autodiff.hpp"
#include "qap/corpus.hpp"
#include "qap/numerics.hpp"

namespace qap {

struct EncoderConfig {
  int d = 64;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_width = 256;
  int max_positions = 512;
  double dropout_rate = 0.1;
  int vocab_size = 0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gain, ln1_bias;
  Matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Matrix ln2_gain, ln2_bias;
};

struct EncoderParams {
  EncoderConfig config;
  Matrix token_embedding;     // vocab_size x d
  Matrix position_embedding;  // max_positions x d
  std::vector<LayerParams> layers;
  Matrix final_ln_gain, final_ln_bias;

  // Deterministic enumeration of every trainable tensor.
  std::vector<ParamRef> param_refs();
  std::uint64_t checksum() const;
};

// layers()[0] is the embedding sum; layers()[n] for n >= 1 is the residual
// stream after block n, with the final layer norm folded into the last one.
struct LayerRepresentations {
  std::vector<Matrix> layers;

  int n_layers() const { return static_cast<int>(layers.size()) - 1; }
  const Matrix& final_layer() const { return layers.back(); }
};

enum class Mode { train, eval };

// Scaled-normal init (std 0.02), zero biases, unit layer-norm gains.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

// Tape-side handle to one registration of the encoder parameters.
struct EncoderTapeParams {
  Tape::Id token_embedding, position_embedding;
  struct Layer {
    Tape::Id wq, bq, wk, bk, wv, bv, wo, bo;
    Tape::Id ln1_gain, ln1_bias;
    Tape::Id ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tape::Id ln2_gain, ln2_bias;
  };
  std::vector<Layer> layers;
  Tape::Id final_ln_gain, final_ln_bias;
  std::vector<Tape::Id> ordered;  // aligned with EncoderParams::param_refs()
};

EncoderTapeParams register_encoder(Tape& tape, const EncoderParams& params);

// Forward pass on the tape. Returns the final-layer node; optionally all
// per-layer nodes (embedding first). rng is required in train mode when
// dropout_rate > 0.
Tape::Id encode_on_tape(Tape& tape, const EncoderConfig& config,
                        const EncoderTapeParams& p, const TokenSequence& tokens,
                        Mode mode, std::mt19937_64* rng,
                        std::vector<Tape::Id>* all_layers = nullptr,
                        LayerNormProbe* probe = nullptr);

// Convenience eval/train forward returning concrete matrices.
LayerRepresentations encode(const EncoderParams& params,
                            const TokenSequence& tokens,
                            Mode mode = Mode::eval, std::uint64_t seed = 0,
                            LayerNormProbe* probe = nullptr);

// Checkpoint container shared by all models: magic, version, model kind,
// config block, named little-endian f64 tensors, trailing FNV checksum.
enum class ModelKind : std::uint8_t { encoder = 0, teacher = 1, student = 2 };

void write_checkpoint(const std::string& path, ModelKind kind,
                      const EncoderConfig& config,
                      const std::vector<std::pair<std::string, const Matrix*>>&
                          tensors);

struct CheckpointData {
  ModelKind kind;
  EncoderConfig config;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const;
};

CheckpointData read_checkpoint(const std::string& path);

void save_encoder_checkpoint(const EncoderParams& params,
                             const std::string& path);
EncoderParams load_encoder_checkpoint(const std::string& path,
                                      int expected_vocab_size = -1);

// Helpers shared with the model modules.
std::vector<std::pair<std::string, const Matrix*>> encoder_tensor_list(
    const EncoderParams& params);
EncoderParams encoder_from_checkpoint(const CheckpointData& data);

}  // namespace qap
