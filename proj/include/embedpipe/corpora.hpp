#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "embedpipe/tensor.hpp"
#include "embedpipe/vocab.hpp"
#include "json.hpp"

namespace embedpipe {

using Sentence = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Pivot grammar

/// Probabilistic template grammar over the 64-token pivot vocabulary:
///   sentence = clause (conj clause)*
///   clause   = NP verb [NP] [prep NP]
///   NP       = det [adj] noun
/// Adjacent tokens always come from different word classes, so no sentence
/// repeats a token back to back.
struct GrammarConfig {
  double clause_continue = 0.45;
  double adjective = 0.5;
  double object = 0.6;
  double prepositional = 0.4;
  std::size_t max_len = 40;
};

/// The pivot content vocabulary (64 tokens, grouped by word class).
std::vector<std::string> pivot_tokens();
std::vector<Sentence> gen_base_corpus(std::uint64_t seed, std::size_t n, const GrammarConfig& grammar = {});

// ---------------------------------------------------------------------------
// Synthetic languages

enum class TransformKind { kPermute, kReverseWindow, kAffix, kSplit };
std::string_view to_string(TransformKind k);
TransformKind parse_transform(std::string_view s);

struct TransformStep {
  TransformKind kind = TransformKind::kPermute;
  std::size_t window = 0;  // kReverseWindow
  double fraction = 0.0;   // kAffix, kSplit: share of the vocabulary affected
};

/// A deterministic, sentence-wise invertible rewrite of pivot sentences.
/// Steps apply in order: permute renames every token, reverse_window
/// reverses consecutive chunks, affix appends a marker after selected tokens,
/// split replaces selected tokens by a stem and a suffix token.
class LanguageSpec {
 public:
  LanguageSpec() = default;
  /// Builds the step tables. Throws std::invalid_argument for specs that
  /// would not be invertible.
  LanguageSpec(std::string id, std::vector<TransformStep> steps, std::uint64_t seed);

  const std::string& id() const { return id_; }
  const std::vector<TransformStep>& steps() const { return steps_; }
  std::uint64_t seed() const { return seed_; }
  bool is_identity() const { return steps_.empty(); }

  Sentence apply(const Sentence& pivot) const;
  Sentence invert(const Sentence& sentence) const;
  /// Tokens the language can produce, in a fixed order.
  const std::vector<std::string>& tokens() const { return tokens_; }
  Vocabulary vocabulary() const { return Vocabulary(tokens_); }

  nlohmann::json to_json() const;
  static LanguageSpec from_json(const nlohmann::json& j);

 private:
  struct Table {
    std::map<std::string, std::string> forward;   // permute: old -> new; split: token -> stem
    std::map<std::string, std::string> backward;  // inverse of forward
    std::map<std::string, std::string> suffix;    // split: token -> suffix token
    std::string marker;                           // affix marker
  };

  std::string id_;
  std::vector<TransformStep> steps_;
  std::uint64_t seed_ = 0;
  std::vector<Table> tables_;
  std::vector<std::string> tokens_;
};

// ---------------------------------------------------------------------------
// Frames

struct FrameConfig {
  std::size_t dim = 16;
  double sigma = 0.1;
  std::size_t min_repeat = 2;
  std::size_t max_repeat = 5;
};

/// Renders sentences as frame sequences: every token becomes k frames
/// (k uniform in [min_repeat, max_repeat]), each the token's fixed prototype
/// plus Gaussian jitter. Prototypes are N(0, I) draws keyed by
/// (prototype seed, language, token).
class FrameSynthesizer {
 public:
  FrameSynthesizer(FrameConfig config, std::uint64_t prototype_seed);
  const FrameConfig& config() const { return config_; }

  std::vector<double> prototype(std::string_view lang, std::string_view token) const;
  /// [T, F] frames of `sentence`; `seed` drives repeat counts and jitter.
  Tensor synth(const Sentence& sentence, std::string_view lang, std::uint64_t seed) const;
  /// Token among `candidates` whose prototype is closest to `frame` (ties: first).
  const std::string& nearest_token(std::span<const double> frame, std::string_view lang,
                                   std::span<const std::string> candidates) const;

 private:
  FrameConfig config_;
  std::uint64_t prototype_seed_;
};

// ---------------------------------------------------------------------------
// Units

class UnitCodebook {
 public:
  UnitCodebook() = default;
  explicit UnitCodebook(Tensor centroids);

  /// k-means with seeded greedy k-means++ initialisation on the rows of
  /// `frames`; the lowest-inertia run out of `restarts` is kept.
  static UnitCodebook fit(const Tensor& frames, std::size_t k, std::size_t iterations, std::uint64_t seed,
                          std::size_t restarts = 4);

  std::size_t size() const { return centroids_.rows(); }
  std::size_t dim() const { return centroids_.cols(); }
  const Tensor& centroids() const { return centroids_; }
  /// Nearest centroid; ties go to the lowest index.
  int assign(std::span<const double> frame) const;

  nlohmann::json to_json() const;
  static UnitCodebook from_json(const nlohmann::json& j);

 private:
  Tensor centroids_;
};

std::vector<int> extract_units(const Tensor& frames, const UnitCodebook& codebook);
/// Collapses runs of equal consecutive units.
std::vector<int> normalize_units(std::span<const int> units);
bool is_normalized(std::span<const int> units);

// ---------------------------------------------------------------------------
// Corpora

enum class Split { kTrain, kValid, kTest };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Record {
  std::string id;
  std::map<std::string, Sentence> text;
  std::map<std::string, Tensor> frames;            // [T, F] per language
  std::map<std::string, std::vector<int>> units;   // normalized unit ids per language
};

struct ParallelCorpus {
  Split split = Split::kTrain;
  std::vector<std::string> languages;
  std::vector<Record> records;

  const Record& at(std::string_view id) const;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON object per line:
///   {"id":..., "split":..., "text":{lang:[tokens]}, "frames":{lang:[[...]]}, "units":{lang:[...]}}
/// frames and units are omitted when empty.
void save_corpus(const std::filesystem::path& path, const ParallelCorpus& corpus);
/// Every record must carry text for each of `languages`.
ParallelCorpus load_corpus(const std::filesystem::path& path, std::span<const std::string> languages);
std::string record_to_line(const Record& r, Split split);
std::uint64_t corpus_hash(const ParallelCorpus& corpus);
/// Throws CorpusError naming the first id shared by two corpora.
void check_disjoint(std::span<const ParallelCorpus* const> corpora);

}  // namespace embedpipe
