#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embedpipe/graph.hpp"
#include "embedpipe/params.hpp"

namespace embedpipe {

enum class Pooling { kMax, kBos };
std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);

struct ModelDims {
  std::size_t hidden = 64;  // H, per recurrent direction
  std::size_t embed = 64;   // D, sentence embedding size
};

enum class InputKind { kTokens, kFrames };
std::string_view to_string(InputKind k);

struct EncoderOutput {
  Var states;  // [T*B, D], time-major (row t*B + b)
  Var pooled;  // [B, D]
  std::size_t steps = 0;
  std::size_t batch = 0;
};

/// Token or frame sequence encoder: input layer, one bidirectional GRU layer,
/// one position-wise ReLU layer and a linear projection to D, pooled to a
/// single D-vector. Frame encoders project F-dim frames through tanh(xW+b)
/// instead of an embedding table and always pool with MAX.
///
/// Token inputs are used as given; callers wrap sentences with BOS/EOS.
class Encoder {
 public:
  Encoder() = default;
  static Encoder for_tokens(std::size_t vocab_size, ModelDims dims, Pooling pooling, std::uint64_t seed);
  static Encoder for_frames(std::size_t frame_dim, ModelDims dims, std::uint64_t seed);

  InputKind input_kind() const { return kind_; }
  /// Vocabulary size for token encoders, frame dimension F for frame encoders.
  std::size_t input_dim() const { return input_dim_; }
  const ModelDims& dims() const { return dims_; }
  Pooling pooling() const { return pooling_; }

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Batched forward over token sequences (each non-empty, ids < V).
  EncoderOutput forward(Graph& g, std::span<const std::vector<int>> seqs, bool track) const;
  /// Batched forward over frame sequences, each a [T_b, F] tensor.
  EncoderOutput forward(Graph& g, std::span<const Tensor> frames, bool track) const;

  /// Pooled embeddings [B, D] without recording gradients.
  Tensor embed(std::span<const std::vector<int>> seqs) const;
  Tensor embed(std::span<const Tensor> frames) const;

  /// Parameter count implied by the architecture.
  static std::size_t expected_parameter_count(InputKind kind, std::size_t input_dim, ModelDims dims);

 private:
  Encoder(InputKind kind, std::size_t input_dim, ModelDims dims, Pooling pooling);
  EncoderOutput trunk(Graph& g, Var inputs, std::span<const std::size_t> lengths, std::size_t steps,
                      bool track) const;

  InputKind kind_ = InputKind::kTokens;
  std::size_t input_dim_ = 0;
  ModelDims dims_;
  Pooling pooling_ = Pooling::kMax;
  ParameterStore params_;
};

/// Result of encoding one sequence.
struct Encoded {
  Tensor states;                  // [T, D]
  std::vector<double> embedding;  // D
};

Encoded encode(std::span<const int> tokens, const Encoder& encoder);
std::vector<double> encode_frames(const Tensor& frames, const Encoder& encoder);

struct TeacherForced {
  Tensor logits;  // [T-1, V]
  double loss = 0.0;
};

struct Decoded {
  std::vector<int> tokens;  // no BOS/EOS/PAD
  bool truncated = false;   // max_len reached before EOS
  double score = 0.0;       // length-normalized log-probability
};

/// Autoregressive GRU decoder whose only view of the input is one D-vector,
/// held in a single-slot attention memory. With one slot the attention
/// weight is identically 1, so the read-out is the value projection
/// c = tanh(e W_v + b_v); c feeds every step's input gates and the output
/// layer. The initial hidden state is zero.
class Decoder {
 public:
  Decoder() = default;
  static Decoder create(std::size_t vocab_size, ModelDims dims, std::uint64_t seed);

  std::size_t vocab_size() const { return vocab_size_; }
  const ModelDims& dims() const { return dims_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Mean token cross-entropy (PAD excluded) of `targets` given
  /// `embeddings` [B, D]. Each target must start with BOS and end with EOS.
  Var loss(Graph& g, Var embeddings, std::span<const std::vector<int>> targets, bool track) const;
  /// Logits [(T-1)*B, V] time-major plus the flattened next-token targets.
  Var logits(Graph& g, Var embeddings, std::span<const std::vector<int>> targets, bool track,
             std::vector<int>* next_tokens) const;

  TeacherForced teacher_forced(std::span<const double> embedding, std::span<const int> target) const;
  /// Greedy decoding of each row of `embeddings` [B, D]. Rows are decoded
  /// independently; batching does not change any result.
  std::vector<Decoded> greedy(const Tensor& embeddings, std::size_t max_len) const;
  Decoded greedy(std::span<const double> embedding, std::size_t max_len) const;
  Decoded beam(std::span<const double> embedding, std::size_t beam, std::size_t max_len) const;
  /// Length-normalized log-probability of emitting `tokens`, followed by EOS
  /// when `with_eos`. This is the score beam search ranks by.
  double score(std::span<const double> embedding, std::span<const int> tokens, bool with_eos) const;

  static std::size_t expected_parameter_count(std::size_t vocab_size, ModelDims dims);

 private:
  Decoder(std::size_t vocab_size, ModelDims dims);
  void check_embedding_width(std::size_t width) const;

  std::size_t vocab_size_ = 0;
  ModelDims dims_;
  ParameterStore params_;
};

/// Decoder over acoustic units; unit k has id k + Vocabulary::kReserved.
using UnitDecoder = Decoder;

std::vector<double> row(const Tensor& m, std::size_t r);
Tensor stack_rows(std::span<const std::vector<double>> rows);

}  // namespace embedpipe
