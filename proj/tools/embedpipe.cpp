// Command-line driver. Exit codes: 0 success, 1 runtime failure or missing
// prerequisite, 2 usage, configuration or unknown module id. Errors are one
// line on stderr: "error: <category>: <message>".

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "embedpipe/checkpoint.hpp"
#include "embedpipe/experiment.hpp"
#include "embedpipe/util.hpp"

namespace {

using embedpipe::Experiment;
using embedpipe::ExperimentConfig;
using nlohmann::json;

int fail(const std::string& category, const std::string& message, int code) {
  std::string flat = message;
  for (auto& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: " << category << ": " << flat << "\n";
  return code;
}

void print_module(const Experiment& exp, const std::string& id) {
  const embedpipe::Registry reg = exp.registry();
  const auto& e = reg.get(id);
  json out = {{"id", id}, {"kind", embedpipe::to_string(e.kind)}, {"path", (exp.root() / e.path).string()}};
  if (e.meta.contains("summary")) out["summary"] = e.meta.at("summary");
  std::cout << out.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  embedpipe::tune_allocator();
  CLI::App app{"Shared sentence-embedding pipeline: data generation, training, composition and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "Run seed (default: first seed in the config)")
        ->each([&](const std::string&) { seed_given = true; });
  };

  auto* gen = app.add_subcommand("gen-data", "Generate languages, corpora, unit codebook and vocoder table");
  add_common(gen);

  auto* teacher = app.add_subcommand("train-teacher", "Train the pivot encoder");
  add_common(teacher);

  std::string lang, loss, pooling;
  auto* student = app.add_subcommand("train-student", "Distil a text encoder for one language");
  add_common(student);
  student->add_option("--lang", lang, "Student language")->required();
  student->add_option("--loss", loss, "MSE or COSINE")->check(CLI::IsMember({"MSE", "COSINE"}));
  student->add_option("--pooling", pooling, "max or bos")->check(CLI::IsMember({"max", "bos"}));

  auto* finetune = app.add_subcommand("finetune-student", "Cross-entropy fine-tuning of a distilled student");
  add_common(finetune);
  finetune->add_option("--lang", lang, "Student language")->required();

  std::string objective, target_lang;
  auto* decoder = app.add_subcommand("train-decoder", "Train a pivot decoder on frozen embeddings");
  add_common(decoder);
  decoder->add_option("--objective", objective, "AE, AE_NOISE or AE_BITEXT")
      ->required()
      ->check(CLI::IsMember({"AE", "AE_NOISE", "AE_BITEXT"}));
  decoder->add_option("--target-lang", target_lang, "Bitext language for AE_BITEXT");

  std::string teacher_mode;
  auto* speech = app.add_subcommand("train-speech-student", "Distil a speech encoder for one language");
  add_common(speech);
  speech->add_option("--lang", lang, "Spoken language")->required();
  speech->add_option("--teacher-mode", teacher_mode, "TRANSCRIPTION, TRANSLATION or BOTH")
      ->required()
      ->check(CLI::IsMember({"TRANSCRIPTION", "TRANSLATION", "BOTH"}));

  std::string source;
  auto* units = app.add_subcommand("train-unit-decoder", "Train a pivot speech-unit decoder");
  add_common(units);
  units->add_option("--source", source, "raw (speech encoder) or transcripts (text teacher)")
      ->required()
      ->check(CLI::IsMember({"raw", "transcripts"}));

  std::string encoder_id, decoder_id, split = "test";
  auto* eval = app.add_subcommand("compose-eval", "Compose an encoder with a decoder and score BLEU");
  add_common(eval);
  eval->add_option("--encoder", encoder_id, "Encoder module id")->required();
  eval->add_option("--decoder", decoder_id, "Decoder module id")->required();
  eval->add_option("--split", split, "valid or test")->check(CLI::IsMember({"valid", "test"}));

  auto* distances = app.add_subcommand("report-distances", "Student-to-teacher embedding distances");
  add_common(distances);

  std::size_t jobs = 1;
  auto* suite = app.add_subcommand("run-paper-suite", "Run every stage and evaluation for all seeds");
  add_common(suite);
  suite->add_option("--jobs", jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    ExperimentConfig config = embedpipe::load_config(config_path);
    if (!loss.empty()) config.student_loss = embedpipe::parse_distill_loss(loss);
    if (!pooling.empty()) config.pooling = embedpipe::parse_pooling(pooling);
    if (!target_lang.empty()) config.bitext_lang = target_lang;
    config.validate();

    if (suite->parsed()) {
      if (seed_given) config.seeds = {seed};
      json report = embedpipe::run_paper_suite(config, jobs);
      std::cout << json{{"report", (config.output_dir / "report.json").string()},
                        {"config_hash", report.at("config_hash")},
                        {"seeds", report.at("seeds")}}
                       .dump()
                << "\n";
      return 0;
    }

    if (!seed_given) seed = config.seeds.front();
    Experiment exp(config, seed);
    if (gen->parsed()) {
      exp.gen_data();
      std::cout << json{{"data", exp.data_dir().string()}}.dump() << "\n";
    } else if (teacher->parsed()) {
      exp.train_teacher();
      print_module(exp, embedpipe::ids::teacher(config.pivot));
    } else if (student->parsed()) {
      exp.train_student(lang);
      print_module(exp, embedpipe::ids::student(lang));
    } else if (finetune->parsed()) {
      exp.finetune_student(lang);
      print_module(exp, embedpipe::ids::finetuned(lang));
    } else if (decoder->parsed()) {
      auto v = embedpipe::parse_decoder_variant(objective);
      exp.train_decoder(v);
      print_module(exp, embedpipe::ids::decoder(v));
    } else if (speech->parsed()) {
      auto m = embedpipe::parse_teacher_mode(teacher_mode);
      exp.train_speech_student(lang, m);
      print_module(exp, embedpipe::ids::speech(lang, m));
    } else if (units->parsed()) {
      auto s = embedpipe::parse_unit_source(source);
      exp.train_unit_decoder(s);
      print_module(exp, embedpipe::ids::unit_decoder(s));
    } else if (eval->parsed()) {
      auto r = exp.compose_eval(encoder_id, decoder_id, embedpipe::parse_split(split));
      std::cout << embedpipe::to_json(r).dump() << "\n";
    } else if (distances->parsed()) {
      std::cout << exp.report_distances().dump() << "\n";
    }
    return 0;
  } catch (const embedpipe::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const embedpipe::RegistryError& e) {
    return fail("registry", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return fail("config", e.what(), 2);
  } catch (const embedpipe::PrerequisiteError& e) {
    return fail("prerequisite", e.what(), 1);
  } catch (const embedpipe::CheckpointError& e) {
    return fail("checkpoint", e.what(), 1);
  } catch (const embedpipe::CorpusError& e) {
    return fail("corpus", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
}
