#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "embedpipe/models.hpp"
#include "embedpipe/space.hpp"
#include "json.hpp"

namespace embedpipe {

using Sequences = std::vector<std::vector<int>>;

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double clip_norm = 5.0;
  std::size_t patience = 5;        // validations without improvement before stopping
  std::size_t validate_every = 1;  // epochs
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Raised when a module declared frozen would be, or was, modified.
class FreezeViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Snapshot of a module's parameter bytes; verify() throws if they changed.
class FreezeGuard {
 public:
  FreezeGuard(std::string name, const ParameterStore& params);
  void verify() const;
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  const ParameterStore* params_;
  std::vector<std::vector<double>> bytes_;
};

struct CurvePoint {
  std::size_t step = 0;
  std::string split;  // "train" (epoch mean) or "valid"
  double loss = 0.0;
  double metric = 0.0;
};

struct TrainingLog {
  std::vector<CurvePoint> curve;
  /// Per-step tag of what the batch trained on (e.g. "raw", "bitext:L1",
  /// "transcription", "translation").
  std::vector<std::string> batch_tags;
  /// Every data stream that fed the run, as "role:modality:lang".
  std::vector<std::string> data_flow;
  double initial_valid = 0.0;
  double best_valid = 0.0;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  /// Set when validation never improved on the initial model.
  bool failed = false;
  std::vector<std::string> frozen_checked;

  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json summary() const;
};

/// Pooled embeddings [N, D] of every sequence, batched internally.
Tensor embed_all(const Encoder& encoder, const Sequences& seqs, std::size_t batch = 64);
Tensor embed_all(const Encoder& encoder, const std::vector<Tensor>& frames, std::size_t batch = 32);

/// Joint auto-encoder training of a pivot encoder and a scratch decoder.
/// The encoder becomes the frozen teacher everything else aligns to.
TrainingLog train_teacher(Encoder& encoder, Decoder& decoder, const Sequences& train, const Sequences& valid,
                          const TrainConfig& config);

enum class DecoderVariant { kAe, kAeNoise, kAeBitext };
std::string_view to_string(DecoderVariant v);
DecoderVariant parse_decoder_variant(std::string_view s);

struct DecoderObjective {
  DecoderVariant variant = DecoderVariant::kAe;
  NoiseSpec noise;                // kAeNoise
  double noise_probability = 1.0; // share of training embeddings perturbed (kAeNoise)
  std::string bitext_lang;        // kAeBitext
  double mix_ratio = 0.5;         // kAeBitext: share of steps drawn from the bitext

  void validate() const;
  nlohmann::json to_json() const;
  static DecoderObjective from_json(const nlohmann::json& j);
};

/// Pivot id sequences for auto-encoding and (optionally) a bitext whose
/// source side is in another language and whose target side is pivot.
struct DecoderData {
  Sequences raw_train, raw_valid;
  Sequences bitext_src_train, bitext_tgt_train;
  Sequences bitext_src_valid, bitext_tgt_valid;
};

/// Trains `decoder` on embeddings from frozen encoders keyed by language;
/// `pivot_lang` must be present, and so must the bitext language for
/// kAeBitext. Every step runs the same number of steps per epoch
/// (one pass over raw_train); with kAeBitext, step i draws from the bitext
/// when ceil((i + 1) r) > ceil(i r), so r = 0.5 gives even steps bitext.
TrainingLog train_decoder(Decoder& decoder, const DecoderObjective& objective,
                          const std::map<std::string, const Encoder*>& frozen, const std::string& pivot_lang,
                          const DecoderData& data, const TrainConfig& config);

enum class DistillLoss { kMse, kCosine };
std::string_view to_string(DistillLoss l);
DistillLoss parse_distill_loss(std::string_view s);

/// Aligned student-language / pivot sequences.
struct BitextData {
  std::string lang;
  Sequences src_train, pivot_train;
  Sequences src_valid, pivot_valid;
};

/// Fits student(src) to teacher(pivot). Validation metric: mean squared L2
/// distance between student and teacher embeddings.
TrainingLog train_student(Encoder& student, const Encoder& teacher, const BitextData& data, DistillLoss loss,
                          const TrainConfig& config);

/// Fine-tunes a distilled student through a frozen decoder's cross-entropy
/// on pivot targets. `student_provenance` must come from train_student.
TrainingLog ce_finetune_student(Encoder& student, const nlohmann::json& student_provenance, const Decoder& decoder,
                                const BitextData& data, const TrainConfig& config);

enum class TeacherMode { kTranscription, kTranslation, kBoth };
std::string_view to_string(TeacherMode m);
TeacherMode parse_teacher_mode(std::string_view s);

struct SpeechData {
  std::string lang;
  std::vector<Tensor> frames_train, frames_valid;
  Sequences transcripts_train, transcripts_valid;    // ids in the spoken language
  Sequences translations_train, translations_valid;  // pivot ids
};

struct SpeechTeachers {
  const Encoder* transcript = nullptr;   // text encoder of the spoken language
  const Encoder* translation = nullptr;  // pivot teacher
};

/// Fits a frame encoder to text embeddings chosen by `mode`. kBoth targets
/// transcripts on even steps and translations on odd steps.
TrainingLog train_speech_student(Encoder& student, const SpeechTeachers& teachers, const SpeechData& data,
                                 TeacherMode mode, const TrainConfig& config);

/// Either frames (frame-encoder source) or token sequences (text source),
/// with normalized unit targets (ids 0..K-1).
struct UnitData {
  std::string lang;
  std::vector<Tensor> frames_train, frames_valid;
  Sequences text_train, text_valid;
  std::vector<std::vector<int>> units_train, units_valid;
};

/// Unit ids 0..K-1 to decoder ids with BOS/EOS.
std::vector<int> unit_target(const std::vector<int>& units);
/// Decoder ids back to unit ids 0..K-1 (reserved ids dropped).
std::vector<int> units_from_ids(const std::vector<int>& ids);

/// Trains a unit decoder on embeddings of a frozen source encoder. Targets
/// with consecutive duplicate units are rejected.
TrainingLog train_unit_decoder(Decoder& decoder, const Encoder& source, const UnitData& data,
                               const TrainConfig& config);

/// Teacher-forced next-token accuracy (PAD excluded) of `decoder` on the
/// given embeddings [N, D] and targets.
double token_accuracy(const Decoder& decoder, const Tensor& embeddings, const Sequences& targets,
                      std::size_t batch = 64);

}  // namespace embedpipe
