#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "embedpipe/corpora.hpp"
#include "embedpipe/eval.hpp"
#include "embedpipe/models.hpp"
#include "embedpipe/space.hpp"
#include "embedpipe/training.hpp"
#include "json.hpp"

namespace embedpipe {

/// Invalid or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A prerequisite artifact is missing (CLI exit code 1).
class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Budgets {
  std::size_t raw = 2000;     // pivot-only training sentences
  std::size_t valid = 150;
  std::size_t test = 1000;
  std::size_t speech = 600;   // utterances with frames in the pivot and spoken language
  std::map<std::string, std::size_t> bitext;  // per non-pivot language
};

struct TrainPlan {
  TrainConfig teacher;
  TrainConfig student;
  TrainConfig finetune;
  TrainConfig decoder;
  TrainConfig speech;
  TrainConfig unit_decoder;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "runs/experiment";
  std::string pivot = "L0";
  /// Step lists and base seeds; per run, a language's seed is derived from
  /// the run seed and this base seed.
  std::vector<LanguageSpec> languages;
  std::string speech_lang = "L1";
  Budgets budgets;
  GrammarConfig grammar;
  ModelDims dims;
  FrameConfig frames;
  std::size_t units = 64;
  std::size_t kmeans_iterations = 20;
  std::size_t kmeans_restarts = 4;
  NoiseSpec noise;  // seed is derived per run
  double noise_probability = 1.0;
  std::vector<DecoderVariant> decoders{DecoderVariant::kAe, DecoderVariant::kAeNoise, DecoderVariant::kAeBitext};
  std::string bitext_lang = "L1";
  double mix_ratio = 0.5;
  std::vector<TeacherMode> teacher_modes{TeacherMode::kTranscription, TeacherMode::kTranslation};
  DistillLoss student_loss = DistillLoss::kMse;
  Pooling pooling = Pooling::kMax;
  bool ce_finetune = false;
  TrainPlan train;
  std::size_t max_decode_len = 60;

  /// Throws ConfigError describing the first problem found.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON form, as 16 hex digits.
  std::string hash() const;
  const LanguageSpec& language(const std::string& id) const;
};

/// Reads and validates a config file. EMBEDPIPE_OUT, when set, replaces
/// output_dir.
ExperimentConfig load_config(const std::filesystem::path& path);

enum class UnitSource { kRaw, kTranscripts };
std::string_view to_string(UnitSource s);
UnitSource parse_unit_source(std::string_view s);

/// Module ids used in every run's registry.
namespace ids {
std::string teacher(const std::string& pivot);
std::string student(const std::string& lang);
std::string finetuned(const std::string& lang);
std::string decoder(DecoderVariant v);
std::string speech(const std::string& lang, TeacherMode m);
std::string unit_decoder(UnitSource s);
}  // namespace ids

/// One seed of an experiment, rooted at <output_dir>/seed-<seed>. Every
/// stage reads its inputs from disk (corpora, registry), trains, writes a
/// checkpoint plus curve CSV, and records the module in the registry.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::uint64_t seed);

  const ExperimentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path data_dir() const { return root_ / "data"; }

  /// Languages with the run-specific seeds.
  std::vector<LanguageSpec> languages() const;
  const LanguageSpec& language(const std::string& id) const;
  FrameSynthesizer synthesizer() const;

  void gen_data();
  void train_teacher();
  void train_student(const std::string& lang);
  void finetune_student(const std::string& lang);
  void train_decoder(DecoderVariant variant);
  void train_speech_student(const std::string& lang, TeacherMode mode);
  void train_unit_decoder(UnitSource source);

  PairReport compose_eval(const std::string& encoder_id, const std::string& decoder_id, Split split);
  /// {trained: {lang: stats}, untrained: {lang: stats}} on the test split.
  nlohmann::json report_distances();

  /// Every stage in dependency order, every evaluation, and the seed's
  /// report (also written to <root>/report.json).
  nlohmann::json run_all();

  Registry registry() const;

 private:
  const ParallelCorpus& corpus(const std::string& name);
  void require_module(const std::string& id) const;
  void register_module(RegistryEntry entry, const TrainingLog& log);
  nlohmann::json meta(const std::string& id, const std::string& procedure, const TrainConfig& tc,
                      const nlohmann::json& extra) const;
  TrainConfig train_config(const TrainConfig& base, const std::string& id) const;
  std::uint64_t module_seed(const std::string& id) const;

  ExperimentConfig config_;
  std::uint64_t seed_;
  std::filesystem::path root_;
  std::vector<LanguageSpec> languages_;
  nlohmann::json timings_ = nlohmann::json::object();
  std::map<std::string, TrainingLog> logs_;
  std::map<std::string, ParallelCorpus> corpora_;
};

/// Runs every seed (up to `jobs` at a time) and writes the consolidated
/// report.json / report.csv under the output directory. On failure a FAILED
/// marker with the error is left in the output directory and the exception
/// is rethrown.
nlohmann::json run_paper_suite(const ExperimentConfig& config, std::size_t jobs = 1);

/// The consolidated report of a finished suite, as written to disk.
nlohmann::json load_report(const std::filesystem::path& output_dir);

}  // namespace embedpipe
