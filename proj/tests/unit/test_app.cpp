#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "embedpipe/checkpoint.hpp"
#include "embedpipe/experiment.hpp"

using namespace embedpipe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kMini = fs::path(EMBEDPIPE_TEST_DATA) / "mini.json";

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "embedpipe_test_app" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json mini_json() { return json::parse(slurp(kMini)); }

ExperimentConfig mini(const fs::path& out) {
  ExperimentConfig c = ExperimentConfig::from_json(mini_json());
  c.output_dir = out;
  return c;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path() / "embedpipe_test_app";
  fs::create_directories(dir);
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(EMBEDPIPE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config parsing is strict and round-trips") {
  ExperimentConfig c = ExperimentConfig::from_json(mini_json());
  CHECK(c.languages.size() == 3);
  CHECK(c.budgets.bitext.at("L2") == 8);
  CHECK(c.ce_finetune);
  CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());

  json j = mini_json();
  j["budgets"]["rwa"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = mini_json();
  j["train"]["teacher"]["epoch"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = mini_json();
  j["train"]["teacher"]["epochs"] = 0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = mini_json();
  j["speech_lang"] = "L0";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = mini_json();
  j["budgets"]["bitext"].erase("L2");
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = mini_json();
  j["languages"][0]["steps"] = json::array({{{"kind", "permute"}}});
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = mini_json();
  j["decoders"] = {"AE", "AE_TURBO"};
  CHECK_THROWS(ExperimentConfig::from_json(j));
}

TEST_CASE("config hash ignores the output directory only") {
  ExperimentConfig a = mini("/tmp/a"), b = mini("/tmp/b");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.noise.alpha = 0.5;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("EMBEDPIPE_OUT overrides the output directory") {
  setenv("EMBEDPIPE_OUT", "/tmp/elsewhere", 1);
  CHECK(load_config(kMini).output_dir == fs::path("/tmp/elsewhere"));
  unsetenv("EMBEDPIPE_OUT");
  CHECK(load_config(kMini).output_dir == fs::path("runs/mini"));
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("module ids") {
  CHECK(ids::teacher("L0") == "teacher-L0");
  CHECK(ids::decoder(DecoderVariant::kAeNoise) == "decoder-AE_NOISE");
  CHECK(ids::speech("L1", TeacherMode::kBoth) == "speech-L1-BOTH");
  CHECK(ids::unit_decoder(UnitSource::kTranscripts) == "unitdec-transcripts");
  CHECK_THROWS_AS(parse_unit_source("frames"), std::invalid_argument);
}

TEST_CASE("stages check prerequisites") {
  Experiment exp(mini(scratch("prereq")), 7);
  CHECK_THROWS_AS(exp.train_teacher(), PrerequisiteError);
  exp.gen_data();
  CHECK_THROWS_AS(exp.train_student("L1"), PrerequisiteError);
  CHECK_THROWS_AS(exp.train_unit_decoder(UnitSource::kRaw), PrerequisiteError);
  CHECK_THROWS_AS(exp.compose_eval("teacher-L0", "decoder-AE", Split::kTest), RegistryError);
  exp.train_teacher();
  CHECK_THROWS_AS(exp.train_speech_student("L1", TeacherMode::kTranscription), PrerequisiteError);
  CHECK_NOTHROW(exp.train_speech_student("L1", TeacherMode::kTranslation));
  CHECK_THROWS_AS(exp.train_decoder(DecoderVariant::kAeBitext), PrerequisiteError);
  CHECK_THROWS_AS(exp.train_student("L0"), ConfigError);
}

TEST_CASE("generated data: disjoint splits, normalized units, injective vocoder") {
  Experiment exp(mini(scratch("data")), 7);
  exp.gen_data();
  const json manifest = json::parse(slurp(exp.data_dir() / "manifest.json"));
  CHECK(manifest.at("train_raw").at("records") == 48);
  CHECK(manifest.at("train_bitext_L2").at("records") == 8);
  std::vector<ParallelCorpus> all;
  for (const auto& [name, m] : manifest.items()) {
    all.push_back(load_corpus(exp.data_dir() / (name + ".jsonl"), m.at("languages").get<std::vector<std::string>>()));
  }
  std::vector<const ParallelCorpus*> ptrs;
  for (const auto& c : all) ptrs.push_back(&c);
  CHECK_NOTHROW(check_disjoint(ptrs));
  const ParallelCorpus test = load_corpus(exp.data_dir() / "test.jsonl", std::vector<std::string>{"L0", "L1", "L2"});
  for (const auto& r : test.records) {
    CHECK(is_normalized(r.units.at("L0")));
    CHECK(r.frames.at("L1").rows() >= 2 * r.text.at("L1").size());
    CHECK(exp.language("L1").invert(r.text.at("L1")) == r.text.at("L0"));
  }
  VocoderTable v = VocoderTable::from_json(json::parse(slurp(exp.data_dir() / "vocoder.json")));
  CHECK(v.size() == 64);
  // A different run seed gives different languages and data.
  Experiment other(mini(scratch("data2")), 8);
  CHECK(other.language("L1").apply({"d0", "n0", "v0"}) != exp.language("L1").apply({"d0", "n0", "v0"}));
}

TEST_CASE("full mini run: provenance, zero-shot flags, audits and byte-identical reruns") {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  json ra = run_paper_suite(mini(a), 1);
  json rb = run_paper_suite(mini(b), 1);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
  CHECK(slurp(a / "report.csv") == slurp(b / "report.csv"));
  for (const auto& entry : fs::directory_iterator(a / "seed-7" / "modules")) {
    CHECK(slurp(entry.path()) == slurp(b / "seed-7" / "modules" / entry.path().filename()));
  }
  CHECK(load_report(a) == ra);

  const json& run = ra.at("runs").at("7");
  const json& pairs = run.at("pairs");
  CHECK(pairs.at("teacher-L0|decoder-AE").at("zero_shot") == false);
  CHECK(pairs.at("student-L1|decoder-AE").at("zero_shot") == true);
  CHECK(pairs.at("student-L1|decoder-AE_BITEXT").at("zero_shot") == false);
  CHECK(pairs.at("student-L2|decoder-AE_BITEXT").at("zero_shot") == true);
  CHECK(pairs.at("speech-L1-TRANSCRIPTION|decoder-AE").at("modality") == "S2T");
  CHECK(pairs.at("speech-L1-TRANSCRIPTION|unitdec-raw").at("modality") == "S2S");
  CHECK(pairs.at("speech-L1-TRANSCRIPTION|unitdec-raw").at("zero_shot") == true);
  CHECK(pairs.at("speech-L0-TRANSCRIPTION|unitdec-raw").at("zero_shot") == false);
  CHECK(pairs.contains("student-ce-L1|decoder-AE"));

  const json& flow = run.at("data_flow").at("unitdec-raw");
  for (const auto& f : flow) CHECK(f.get<std::string>().rfind("target:text", 0) == std::string::npos);
  for (const auto& [id, checked] : run.at("frozen_checked").items()) {
    if (id != "teacher-L0") CHECK_FALSE(checked.empty());
  }
  CHECK(run.at("batch_tags").at("decoder-AE_BITEXT").at("bitext:L1") ==
        run.at("batch_tags").at("decoder-AE_BITEXT").at("raw"));

  Registry reg = Registry::load(a / "seed-7");
  CHECK(reg.get("decoder-AE_BITEXT").seen_inputs == std::set<std::string>{"text:L0", "text:L1"});
  CHECK(reg.get("unitdec-raw").seen_inputs == std::set<std::string>{"speech:L0"});
  Checkpoint ck = load_checkpoint(a / "seed-7" / reg.get("student-L1").path);
  CHECK(ck.meta.at("procedure") == "train_student");
  CHECK(ck.meta.at("config_hash") == mini(a).hash());
  CHECK(ck.meta.contains("train"));

  // A failing suite leaves a marker and load_report refuses it.
  ExperimentConfig broken = mini(scratch("broken"));
  broken.budgets.speech = 1;  // too few frames to fit 64 units
  CHECK_THROWS(run_paper_suite(broken, 1));
  CHECK(fs::exists(broken.output_dir / "FAILED"));
  CHECK_THROWS_AS(load_report(broken.output_dir), PrerequisiteError);
}

TEST_CASE("seeds run concurrently give the same report as sequentially") {
  ExperimentConfig c = mini(scratch("seq"));
  c.seeds = {7, 8};
  run_paper_suite(c, 1);
  ExperimentConfig p = mini(scratch("par"));
  p.seeds = {7, 8};
  run_paper_suite(p, 2);
  CHECK(slurp(c.output_dir / "report.json") == slurp(p.output_dir / "report.json"));
}

TEST_CASE("command line: exit codes and single-line errors") {
  const fs::path out = scratch("cli");
  const std::string cfg = "--config " + kMini.string();
  setenv("EMBEDPIPE_OUT", out.c_str(), 1);

  CliResult r = cli("");
  CHECK(r.code == 2);
  r = cli("frobnicate");
  CHECK(r.code == 2);
  r = cli("train-decoder " + cfg + " --objective AE_TURBO");
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: usage:", 0) == 0);
  r = cli("train-teacher --config /nonexistent.json");
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: config:", 0) == 0);

  r = cli("train-teacher " + cfg);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: prerequisite:", 0) == 0);
  CHECK(lines(r.err) == 1);

  CHECK(cli("gen-data " + cfg).code == 0);
  r = cli("train-teacher " + cfg);
  CHECK(r.code == 0);
  CHECK(json::parse(r.out).at("id") == "teacher-L0");
  CHECK(cli("train-student " + cfg + " --lang L1 --loss COSINE").code == 0);
  CHECK(cli("train-decoder " + cfg + " --objective AE_BITEXT --target-lang L1").code == 0);

  r = cli("compose-eval " + cfg + " --encoder student-L1 --decoder decoder-nope");
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: registry:", 0) == 0);
  CHECK(lines(r.err) == 1);
  r = cli("compose-eval " + cfg + " --encoder decoder-AE_BITEXT --decoder student-L1");
  CHECK(r.code == 2);

  r = cli("compose-eval " + cfg + " --encoder student-L1 --decoder decoder-AE_BITEXT --split valid");
  CHECK(r.code == 0);
  json pr = json::parse(r.out);
  CHECK(pr.at("zero_shot") == false);
  CHECK(pr.at("src") == "text:L1");

  r = cli("report-distances " + cfg);
  CHECK(r.code == 0);
  CHECK(json::parse(r.out).at("trained").contains("L1"));
  unsetenv("EMBEDPIPE_OUT");
}
