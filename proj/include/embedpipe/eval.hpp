#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "embedpipe/corpora.hpp"
#include "embedpipe/models.hpp"
#include "embedpipe/vocab.hpp"
#include "json.hpp"

namespace embedpipe {

// ---------------------------------------------------------------------------
// BLEU

struct BleuReport {
  double bleu = 0.0;                   // 0..100
  std::array<double, 4> precisions{};  // p1 raw, p2..p4 add-one smoothed
  double bp = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  std::size_t pairs = 0;
  bool empty_hypotheses = false;  // total hypothesis length 0: BLEU 0, BP 0
  std::string strategy = "greedy";
};

/// Corpus BLEU-4, uniform weights, one reference per hypothesis. Clipped
/// n-gram matches; p1 unsmoothed, p2..p4 as (m + 1) / (t + 1); brevity
/// penalty exp(1 - r/c) when c < r.
BleuReport bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references);
nlohmann::json to_json(const BleuReport& r);

struct LengthBucket {
  std::size_t lo = 1;
  std::size_t hi = 0;  // 0: unbounded
  bool contains(std::size_t n) const { return n >= lo && (hi == 0 || n <= hi); }
  std::string label() const;
};

/// [1-10, 11-20, 21-35, 36+]
const std::vector<LengthBucket>& default_length_buckets();

struct BucketReport {
  LengthBucket bucket;
  std::size_t pairs = 0;
  std::optional<BleuReport> report;  // empty when no pair falls in the bucket
};

/// Buckets pairs by reference length. Buckets must be ordered, start at 1
/// and leave no gaps, and the last one must be unbounded.
std::vector<BucketReport> bleu_by_length(std::span<const Sentence> hypotheses, std::span<const Sentence> references,
                                         const std::vector<LengthBucket>& buckets = default_length_buckets());
nlohmann::json to_json(const std::vector<BucketReport>& r);

// ---------------------------------------------------------------------------
// Vocoder

class VocoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// unit id -> pivot token, injective over all K units.
class VocoderTable {
 public:
  VocoderTable() = default;
  explicit VocoderTable(std::vector<std::string> unit_to_token);

  /// Maps every centroid to the pivot token whose frame prototype is nearest.
  static VocoderTable build(const UnitCodebook& codebook, const FrameSynthesizer& synth, const std::string& lang,
                            std::span<const std::string> tokens);

  std::size_t size() const { return table_.size(); }
  const std::string& token(int unit) const;
  /// Units must be normalized; unknown units raise VocoderError.
  Sentence vocode(std::span<const int> units) const;

  nlohmann::json to_json() const;
  static VocoderTable from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> table_;
};

/// BLEU of vocoded unit hypotheses against pivot references. The vocoder
/// plus an identity transcriber stands in for speech synthesis and ASR.
/// Hypotheses are normalized first, as the unit normalizer would on
/// generated speech.
BleuReport eval_speech_output(std::span<const std::vector<int>> unit_hypotheses, std::span<const Sentence> references,
                              const VocoderTable& table);

// ---------------------------------------------------------------------------
// Registry and composition

class RegistryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModuleKind { kEncoder, kDecoder, kUnitDecoder };
std::string_view to_string(ModuleKind k);
ModuleKind parse_module_kind(std::string_view s);

/// Index entry of one checkpoint. `input` names what an encoder reads
/// ("text:L1", "speech:L1"); `output` what a decoder writes ("text:L0",
/// "units:L0"); `seen_inputs` lists every encoder input stream whose
/// embeddings entered the module's training.
struct RegistryEntry {
  std::string id;
  ModuleKind kind = ModuleKind::kEncoder;
  std::filesystem::path path;  // relative to the registry root
  std::string input;
  std::string output;
  std::size_t dim = 0;
  std::set<std::string> seen_inputs;
  std::vector<std::string> vocab;  // token encoders and text decoders
  nlohmann::json meta;
};

nlohmann::json to_json(const RegistryEntry& e);
RegistryEntry registry_entry_from_json(const nlohmann::json& j);

class Registry {
 public:
  explicit Registry(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  /// Throws RegistryError on a duplicate id.
  void add(RegistryEntry entry);
  bool has(const std::string& id) const;
  const RegistryEntry& get(const std::string& id) const;
  const std::map<std::string, RegistryEntry>& entries() const { return entries_; }

  void save() const;  // writes <root>/registry.json
  static Registry load(const std::filesystem::path& root);

 private:
  std::filesystem::path root_;
  std::map<std::string, RegistryEntry> entries_;
};

/// A loaded encoder and decoder pair.
struct Pipeline {
  std::string encoder_id;
  std::string decoder_id;
  Encoder encoder;
  Decoder decoder;
  Vocabulary input_vocab;   // token encoders
  Vocabulary output_vocab;  // text decoders
  bool unit_output = false;
  /// True when the encoder's input stream never entered decoder training.
  bool zero_shot = false;
  std::size_t max_len = 80;
};

/// Pure function of provenance records.
bool is_zero_shot(const RegistryEntry& encoder, const RegistryEntry& decoder);

Pipeline compose(const std::string& encoder_id, const std::string& decoder_id, const Registry& registry);
Pipeline compose(const RegistryEntry& enc_entry, Encoder encoder, const RegistryEntry& dec_entry, Decoder decoder);

/// decode_greedy(encode(input)). Text decoders return tokens; unit decoders
/// return unit ids rendered as decimal strings.
std::vector<Sentence> translate(const Pipeline& p, std::span<const Sentence> inputs);
std::vector<Sentence> translate(const Pipeline& p, std::span<const Tensor> frames);
/// Unit decoders only: raw unit ids (0..K-1) per input.
std::vector<std::vector<int>> translate_units(const Pipeline& p, std::span<const Tensor> frames);

// ---------------------------------------------------------------------------
// Reports

/// One evaluated (encoder, decoder) pair.
struct PairReport {
  std::string name;
  std::string src;       // encoder input, e.g. "speech:L1"
  std::string tgt;       // decoder output, e.g. "text:L0"
  std::string modality;  // "T2T", "S2T", "S2S", ...
  bool zero_shot = false;
  BleuReport bleu;
  std::vector<BucketReport> by_length;
};

nlohmann::json to_json(const PairReport& r);
/// {pairs: {name: {...}}, config_hash, seed}
nlohmann::json report_json(const std::vector<PairReport>& pairs, const std::string& config_hash, std::uint64_t seed);
/// One row per pair with the flat fields.
std::string report_csv(const std::vector<PairReport>& pairs, const std::string& config_hash, std::uint64_t seed);

}  // namespace embedpipe
