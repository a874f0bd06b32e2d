#include <cstdlib>
#include <fstream>
#include <set>

#include "embedpipe/experiment.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
T get(const json& j, const char* key, const T& fallback, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

json train_to_json(const TrainPlan& t) {
  return {{"teacher", t.teacher.to_json()}, {"student", t.student.to_json()},
          {"finetune", t.finetune.to_json()}, {"decoder", t.decoder.to_json()},
          {"speech", t.speech.to_json()},   {"unit_decoder", t.unit_decoder.to_json()}};
}

TrainConfig train_from_json(const json& j, const char* key, const TrainConfig& fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  check_keys(*it, std::string("train.") + key, {"epochs", "batch_size", "lr", "clip_norm", "patience", "validate_every", "seed"});
  try {
    return TrainConfig::from_json(*it);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("train.") + key + ": " + e.what());
  }
}

}  // namespace

const LanguageSpec& ExperimentConfig::language(const std::string& id) const {
  for (const auto& l : languages) {
    if (l.id() == id) return l;
  }
  throw ConfigError("unknown language '" + id + "'");
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (name.empty()) fail("name must not be empty");
  if (seeds.empty()) fail("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be unique");
  if (output_dir.empty()) fail("output_dir must not be empty");
  std::set<std::string> langs;
  for (const auto& l : languages) {
    if (!langs.insert(l.id()).second) fail("duplicate language '" + l.id() + "'");
  }
  if (!langs.count(pivot)) fail("pivot language '" + pivot + "' is not declared");
  if (!language(pivot).is_identity()) fail("pivot language must have no transform steps");
  if (langs.size() < 2) fail("at least one non-pivot language is required");
  if (!langs.count(speech_lang) || speech_lang == pivot) fail("speech_lang must be a declared non-pivot language");
  for (const auto& l : languages) {
    if (l.id() == pivot) continue;
    auto it = budgets.bitext.find(l.id());
    if (it == budgets.bitext.end() || it->second == 0) fail("budgets.bitext." + l.id() + " must be positive");
  }
  for (const auto& [lang, n] : budgets.bitext) {
    if (!langs.count(lang) || lang == pivot) fail("budgets.bitext: '" + lang + "' is not a non-pivot language");
  }
  if (budgets.raw == 0 || budgets.valid == 0 || budgets.test == 0 || budgets.speech == 0) {
    fail("budgets.raw, valid, test and speech must be positive");
  }
  auto prob = [&](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) fail(std::string(what) + " must be in [0, 1]");
  };
  prob(grammar.clause_continue, "grammar.clause_continue");
  prob(grammar.adjective, "grammar.adjective");
  prob(grammar.object, "grammar.object");
  prob(grammar.prepositional, "grammar.prepositional");
  if (grammar.clause_continue >= 1.0) fail("grammar.clause_continue must be below 1");
  if (grammar.max_len < 3) fail("grammar.max_len must be at least 3");
  if (dims.hidden == 0 || dims.embed == 0) fail("dims.hidden and dims.embed must be positive");
  if (frames.dim == 0) fail("dims.frame_dim must be positive");
  if (frames.min_repeat < 2 || frames.min_repeat > frames.max_repeat) fail("frames: need 2 <= min_repeat <= max_repeat");
  if (frames.sigma < 0.0) fail("frames.sigma must be non-negative");
  if (units < 2 || units + Vocabulary::kReserved > Vocabulary::kMaxSize) fail("dims.units out of range");
  if (kmeans_iterations == 0 || kmeans_restarts == 0) fail("kmeans.iterations and restarts must be positive");
  if (noise.alpha < 0.0) fail("noise.alpha must be non-negative");
  prob(noise_probability, "noise.probability");
  if (decoders.empty()) fail("decoders must not be empty");
  if (std::set<DecoderVariant>(decoders.begin(), decoders.end()).size() != decoders.size()) fail("decoders must be unique");
  if (!langs.count(bitext_lang) || bitext_lang == pivot) fail("bitext_lang must be a declared non-pivot language");
  if (!(mix_ratio > 0.0 && mix_ratio <= 1.0)) fail("mix_ratio must be in (0, 1]");
  if (teacher_modes.empty()) fail("teacher_modes must not be empty");
  if (std::set<TeacherMode>(teacher_modes.begin(), teacher_modes.end()).size() != teacher_modes.size()) {
    fail("teacher_modes must be unique");
  }
  if (max_decode_len == 0) fail("max_decode_len must be positive");
  for (const TrainConfig* t : {&train.teacher, &train.student, &train.finetune, &train.decoder, &train.speech,
                               &train.unit_decoder}) {
    try {
      t->validate();
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
}

json ExperimentConfig::to_json() const {
  json langs = json::array();
  for (const auto& l : languages) langs.push_back(l.to_json());
  json decs = json::array();
  for (auto d : decoders) decs.push_back(std::string(embedpipe::to_string(d)));
  json modes = json::array();
  for (auto m : teacher_modes) modes.push_back(std::string(embedpipe::to_string(m)));
  return {
      {"name", name},
      {"seeds", seeds},
      {"output_dir", output_dir.generic_string()},
      {"pivot", pivot},
      {"languages", langs},
      {"speech_lang", speech_lang},
      {"budgets",
       {{"raw", budgets.raw}, {"valid", budgets.valid}, {"test", budgets.test}, {"speech", budgets.speech},
        {"bitext", budgets.bitext}}},
      {"grammar",
       {{"clause_continue", grammar.clause_continue},
        {"adjective", grammar.adjective},
        {"object", grammar.object},
        {"prepositional", grammar.prepositional},
        {"max_len", grammar.max_len}}},
      {"dims", {{"hidden", dims.hidden}, {"embed", dims.embed}, {"frame_dim", frames.dim}, {"units", units}}},
      {"frames", {{"sigma", frames.sigma}, {"min_repeat", frames.min_repeat}, {"max_repeat", frames.max_repeat}}},
      {"kmeans", {{"iterations", kmeans_iterations}, {"restarts", kmeans_restarts}}},
      {"noise", {{"alpha", noise.alpha}, {"mode", std::string(embedpipe::to_string(noise.mode))}, {"probability", noise_probability}}},
      {"decoders", decs},
      {"bitext_lang", bitext_lang},
      {"mix_ratio", mix_ratio},
      {"teacher_modes", modes},
      {"student",
       {{"loss", std::string(embedpipe::to_string(student_loss))},
        {"pooling", std::string(embedpipe::to_string(pooling))},
        {"ce_finetune", ce_finetune}}},
      {"train", train_to_json(train)},
      {"max_decode_len", max_decode_len},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "config",
             {"name", "seeds", "output_dir", "pivot", "languages", "speech_lang", "budgets", "grammar", "dims", "frames",
              "kmeans", "noise", "decoders", "bitext_lang", "mix_ratio", "teacher_modes", "student", "train",
              "max_decode_len"});
  ExperimentConfig c;
  c.name = get(j, "name", c.name, "config");
  c.seeds = get(j, "seeds", c.seeds, "config");
  c.output_dir = get(j, "output_dir", c.output_dir.generic_string(), "config");
  c.pivot = get(j, "pivot", c.pivot, "config");
  if (!j.contains("languages")) throw ConfigError("config: languages are required");
  for (const auto& l : j.at("languages")) {
    check_keys(l, "languages[]", {"id", "seed", "steps"});
    try {
      c.languages.push_back(LanguageSpec::from_json(l));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("languages: ") + e.what());
    }
  }
  c.speech_lang = get(j, "speech_lang", c.speech_lang, "config");
  if (auto it = j.find("budgets"); it != j.end()) {
    check_keys(*it, "budgets", {"raw", "valid", "test", "speech", "bitext"});
    c.budgets.raw = get(*it, "raw", c.budgets.raw, "budgets");
    c.budgets.valid = get(*it, "valid", c.budgets.valid, "budgets");
    c.budgets.test = get(*it, "test", c.budgets.test, "budgets");
    c.budgets.speech = get(*it, "speech", c.budgets.speech, "budgets");
    c.budgets.bitext = get(*it, "bitext", c.budgets.bitext, "budgets");
  }
  if (auto it = j.find("grammar"); it != j.end()) {
    check_keys(*it, "grammar", {"clause_continue", "adjective", "object", "prepositional", "max_len"});
    c.grammar.clause_continue = get(*it, "clause_continue", c.grammar.clause_continue, "grammar");
    c.grammar.adjective = get(*it, "adjective", c.grammar.adjective, "grammar");
    c.grammar.object = get(*it, "object", c.grammar.object, "grammar");
    c.grammar.prepositional = get(*it, "prepositional", c.grammar.prepositional, "grammar");
    c.grammar.max_len = get(*it, "max_len", c.grammar.max_len, "grammar");
  }
  if (auto it = j.find("dims"); it != j.end()) {
    check_keys(*it, "dims", {"hidden", "embed", "frame_dim", "units"});
    c.dims.hidden = get(*it, "hidden", c.dims.hidden, "dims");
    c.dims.embed = get(*it, "embed", c.dims.embed, "dims");
    c.frames.dim = get(*it, "frame_dim", c.frames.dim, "dims");
    c.units = get(*it, "units", c.units, "dims");
  }
  if (auto it = j.find("frames"); it != j.end()) {
    check_keys(*it, "frames", {"sigma", "min_repeat", "max_repeat"});
    c.frames.sigma = get(*it, "sigma", c.frames.sigma, "frames");
    c.frames.min_repeat = get(*it, "min_repeat", c.frames.min_repeat, "frames");
    c.frames.max_repeat = get(*it, "max_repeat", c.frames.max_repeat, "frames");
  }
  if (auto it = j.find("kmeans"); it != j.end()) {
    check_keys(*it, "kmeans", {"iterations", "restarts"});
    c.kmeans_iterations = get(*it, "iterations", c.kmeans_iterations, "kmeans");
    c.kmeans_restarts = get(*it, "restarts", c.kmeans_restarts, "kmeans");
  }
  try {
    if (auto it = j.find("noise"); it != j.end()) {
      check_keys(*it, "noise", {"alpha", "mode", "probability"});
      c.noise.alpha = get(*it, "alpha", c.noise.alpha, "noise");
      c.noise.mode = parse_noise_mode(get(*it, "mode", std::string("per_dim_std"), "noise"));
      c.noise_probability = get(*it, "probability", c.noise_probability, "noise");
    }
    if (auto it = j.find("decoders"); it != j.end()) {
      c.decoders.clear();
      for (const auto& d : *it) c.decoders.push_back(parse_decoder_variant(d.get<std::string>()));
    }
    if (auto it = j.find("teacher_modes"); it != j.end()) {
      c.teacher_modes.clear();
      for (const auto& m : *it) c.teacher_modes.push_back(parse_teacher_mode(m.get<std::string>()));
    }
    if (auto it = j.find("student"); it != j.end()) {
      check_keys(*it, "student", {"loss", "pooling", "ce_finetune"});
      c.student_loss = parse_distill_loss(get(*it, "loss", std::string("MSE"), "student"));
      c.pooling = parse_pooling(get(*it, "pooling", std::string("max"), "student"));
      c.ce_finetune = get(*it, "ce_finetune", c.ce_finetune, "student");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  c.bitext_lang = get(j, "bitext_lang", c.bitext_lang, "config");
  c.mix_ratio = get(j, "mix_ratio", c.mix_ratio, "config");
  if (auto it = j.find("train"); it != j.end()) {
    check_keys(*it, "train", {"teacher", "student", "finetune", "decoder", "speech", "unit_decoder"});
    c.train.teacher = train_from_json(*it, "teacher", c.train.teacher);
    c.train.student = train_from_json(*it, "student", c.train.student);
    c.train.finetune = train_from_json(*it, "finetune", c.train.finetune);
    c.train.decoder = train_from_json(*it, "decoder", c.train.decoder);
    c.train.speech = train_from_json(*it, "speech", c.train.speech);
    c.train.unit_decoder = train_from_json(*it, "unit_decoder", c.train.unit_decoder);
  }
  c.max_decode_len = get(j, "max_decode_len", c.max_decode_len, "config");
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");  // where results go does not change them
  return hex64(fnv1a64(j.dump()));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  if (const char* out = std::getenv("EMBEDPIPE_OUT"); out != nullptr && *out != '\0') c.output_dir = out;
  return c;
}

std::string_view to_string(UnitSource s) { return s == UnitSource::kRaw ? "raw" : "transcripts"; }

UnitSource parse_unit_source(std::string_view s) {
  if (s == "raw") return UnitSource::kRaw;
  if (s == "transcripts") return UnitSource::kTranscripts;
  throw std::invalid_argument("unknown unit-decoder source '" + std::string(s) + "' (expected raw or transcripts)");
}

namespace ids {
std::string teacher(const std::string& pivot) { return "teacher-" + pivot; }
std::string student(const std::string& lang) { return "student-" + lang; }
std::string finetuned(const std::string& lang) { return "student-ce-" + lang; }
std::string decoder(DecoderVariant v) { return "decoder-" + std::string(to_string(v)); }
std::string speech(const std::string& lang, TeacherMode m) { return "speech-" + lang + "-" + std::string(to_string(m)); }
std::string unit_decoder(UnitSource s) { return "unitdec-" + std::string(to_string(s)); }
}  // namespace ids

}  // namespace embedpipe
