#include "embedpipe/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <future>
#include <sstream>

#include "embedpipe/checkpoint.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRaw = "train_raw";
constexpr const char* kSpeech = "train_speech";

std::string bitext_name(const std::string& lang) { return "train_bitext_" + lang; }

std::string split_name(Split s) { return s == Split::kTest ? "test" : s == Split::kValid ? "valid" : std::string(kRaw); }

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PrerequisiteError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Sequences ids_of(const ParallelCorpus& c, const std::string& lang, const Vocabulary& vocab) {
  Sequences out;
  out.reserve(c.records.size());
  for (const auto& r : c.records) out.push_back(with_markers(vocab.encode(r.text.at(lang))));
  return out;
}

std::vector<Tensor> frames_of(const ParallelCorpus& c, const std::string& lang) {
  std::vector<Tensor> out;
  out.reserve(c.records.size());
  for (const auto& r : c.records) {
    auto it = r.frames.find(lang);
    if (it == r.frames.end()) throw PrerequisiteError("record " + r.id + " has no " + lang + " frames");
    out.push_back(it->second);
  }
  return out;
}

std::vector<std::vector<int>> units_of(const ParallelCorpus& c, const std::string& lang) {
  std::vector<std::vector<int>> out;
  out.reserve(c.records.size());
  for (const auto& r : c.records) {
    auto it = r.units.find(lang);
    if (it == r.units.end()) throw PrerequisiteError("record " + r.id + " has no " + lang + " units");
    out.push_back(it->second);
  }
  return out;
}

std::vector<Sentence> text_of(const ParallelCorpus& c, const std::string& lang) {
  std::vector<Sentence> out;
  out.reserve(c.records.size());
  for (const auto& r : c.records) out.push_back(r.text.at(lang));
  return out;
}

// "text:L1" -> {"text", "L1"}
std::pair<std::string, std::string> split_stream(const std::string& s) {
  auto colon = s.find(':');
  if (colon == std::string::npos) throw RegistryError("malformed stream '" + s + "'");
  return {s.substr(0, colon), s.substr(colon + 1)};
}

std::vector<std::string> vocab_tokens(const Vocabulary& v) {
  auto content = v.content();
  return {content.begin(), content.end()};
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace

Experiment::Experiment(ExperimentConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), root_(config_.output_dir / ("seed-" + std::to_string(seed))) {
  config_.validate();
  for (const auto& l : config_.languages) {
    languages_.emplace_back(l.id(), l.steps(), derive_seed(seed_, fnv1a64("language"), l.seed()));
  }
}

std::vector<LanguageSpec> Experiment::languages() const { return languages_; }

const LanguageSpec& Experiment::language(const std::string& id) const {
  for (const auto& l : languages_) {
    if (l.id() == id) return l;
  }
  throw ConfigError("unknown language '" + id + "'");
}

FrameSynthesizer Experiment::synthesizer() const {
  return FrameSynthesizer(config_.frames, derive_seed(seed_, fnv1a64("prototypes")));
}

std::uint64_t Experiment::module_seed(const std::string& id) const { return derive_seed(seed_, fnv1a64(id)); }

TrainConfig Experiment::train_config(const TrainConfig& base, const std::string& id) const {
  TrainConfig tc = base;
  tc.seed = derive_seed(seed_, fnv1a64(id + "/train"));
  return tc;
}

Registry Experiment::registry() const {
  if (!fs::exists(root_ / "registry.json")) return Registry(root_);
  return Registry::load(root_);
}

void Experiment::require_module(const std::string& id) const {
  if (!registry().has(id)) throw PrerequisiteError("module '" + id + "' has not been trained");
}

json Experiment::meta(const std::string& id, const std::string& procedure, const TrainConfig& tc,
                      const json& extra) const {
  json m = {{"id", id},
            {"procedure", procedure},
            {"config_hash", config_.hash()},
            {"run_seed", seed_},
            {"train", tc.to_json()}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  return m;
}

void Experiment::register_module(RegistryEntry entry, const TrainingLog& log) {
  log.write_csv(root_ / "curves" / (entry.id + ".csv"));
  Registry reg = registry();
  if (reg.has(entry.id)) {
    // Retraining replaces the entry.
    Registry fresh(root_);
    for (const auto& [id, e] : reg.entries()) {
      if (id != entry.id) fresh.add(e);
    }
    reg = std::move(fresh);
  }
  logs_[entry.id] = log;
  reg.add(std::move(entry));
  reg.save();
}

const ParallelCorpus& Experiment::corpus(const std::string& name) {
  auto it = corpora_.find(name);
  if (it != corpora_.end()) return it->second;
  json manifest = read_json(data_dir() / "manifest.json");
  if (!manifest.contains(name)) throw PrerequisiteError("corpus '" + name + "' was not generated");
  auto langs = manifest.at(name).at("languages").get<std::vector<std::string>>();
  ParallelCorpus c = load_corpus(data_dir() / (name + ".jsonl"), langs);
  return corpora_.emplace(name, std::move(c)).first->second;
}

// ---------------------------------------------------------------------------
// Data

void Experiment::gen_data() {
  Stopwatch sw;
  const auto& b = config_.budgets;
  std::vector<std::string> others;
  for (const auto& l : languages_) {
    if (l.id() != config_.pivot) others.push_back(l.id());
  }
  std::size_t total = b.raw + b.speech + b.valid + b.test;
  for (const auto& lang : others) total += b.bitext.at(lang);
  auto base = gen_base_corpus(derive_seed(seed_, fnv1a64("corpus")), total, config_.grammar);

  FrameSynthesizer synth = synthesizer();
  const std::string& pivot = config_.pivot;
  const std::string& spoken = config_.speech_lang;
  std::size_t next = 0;

  auto make = [&](Split split, const std::string& prefix, std::size_t n, const std::vector<std::string>& text_langs,
                  bool frames) {
    ParallelCorpus c;
    c.split = split;
    c.languages = text_langs;
    for (std::size_t i = 0; i < n; ++i) {
      const Sentence& s = base[next++];
      Record r;
      r.id = prefix + "-" + std::to_string(i);
      for (const auto& lang : text_langs) r.text[lang] = language(lang).apply(s);
      if (frames) {
        for (const auto& lang : {pivot, spoken}) {
          r.frames[lang] = synth.synth(r.text.at(lang), lang, derive_seed(seed_, fnv1a64(lang), fnv1a64(r.id)));
        }
      }
      c.records.push_back(std::move(r));
    }
    return c;
  };

  std::vector<std::string> all_langs;
  for (const auto& l : languages_) all_langs.push_back(l.id());

  std::map<std::string, ParallelCorpus> out;
  out[kRaw] = make(Split::kTrain, "raw", b.raw, {pivot}, false);
  for (const auto& lang : others) out[bitext_name(lang)] = make(Split::kTrain, "bt-" + lang, b.bitext.at(lang), {pivot, lang}, false);
  out[kSpeech] = make(Split::kTrain, "sp", b.speech, {pivot, spoken}, true);
  out["valid"] = make(Split::kValid, "valid", b.valid, all_langs, true);
  out["test"] = make(Split::kTest, "test", b.test, all_langs, true);

  // Units come from a codebook fit on the pivot training speech only.
  std::vector<std::vector<double>> rows;
  for (const auto& r : out[kSpeech].records) {
    const Tensor& f = r.frames.at(pivot);
    for (std::size_t t = 0; t < f.rows(); ++t) rows.push_back(row(f, t));
  }
  UnitCodebook codebook = UnitCodebook::fit(stack_rows(rows), config_.units, config_.kmeans_iterations,
                                            derive_seed(seed_, fnv1a64("codebook")), config_.kmeans_restarts);
  for (const char* name : {kSpeech, "valid", "test"}) {
    for (auto& r : out[name].records) r.units[pivot] = normalize_units(extract_units(r.frames.at(pivot), codebook));
  }
  auto tokens = pivot_tokens();
  VocoderTable vocoder = VocoderTable::build(codebook, synth, pivot, tokens);

  std::vector<const ParallelCorpus*> ptrs;
  for (const auto& [name, c] : out) ptrs.push_back(&c);
  check_disjoint(ptrs);

  fs::create_directories(data_dir());
  json manifest = json::object();
  for (const auto& [name, c] : out) {
    save_corpus(data_dir() / (name + ".jsonl"), c);
    manifest[name] = {{"languages", c.languages}, {"records", c.records.size()}, {"hash", hex64(corpus_hash(c))}};
  }
  write_text(data_dir() / "manifest.json", manifest.dump(1) + "\n");
  write_text(data_dir() / "codebook.json", codebook.to_json().dump() + "\n");
  write_text(data_dir() / "vocoder.json", vocoder.to_json().dump(1) + "\n");
  json langs = json::array();
  for (const auto& l : languages_) langs.push_back(l.to_json());
  write_text(data_dir() / "languages.json", langs.dump(1) + "\n");
  corpora_ = std::move(out);
  timings_["gen_data"] = sw.seconds();
}

// ---------------------------------------------------------------------------
// Training stages

void Experiment::train_teacher() {
  Stopwatch sw;
  const std::string id = ids::teacher(config_.pivot);
  const auto& raw = corpus(kRaw);
  const auto& valid = corpus("valid");
  Vocabulary vocab = language(config_.pivot).vocabulary();
  TrainConfig tc = train_config(config_.train.teacher, id);
  Encoder enc = Encoder::for_tokens(vocab.size(), config_.dims, config_.pooling, module_seed(id));
  Decoder dec = Decoder::create(vocab.size(), config_.dims, module_seed(id + "/decoder"));
  TrainingLog log = embedpipe::train_teacher(enc, dec, ids_of(raw, config_.pivot, vocab),
                                             ids_of(valid, config_.pivot, vocab), tc);
  fs::path rel = fs::path("modules") / (id + ".ckpt");
  fs::create_directories(root_ / "modules");
  save_encoder(root_ / rel, enc, meta(id, "train_teacher", tc, {{"summary", log.summary()}}));

  RegistryEntry e;
  e.id = id;
  e.kind = ModuleKind::kEncoder;
  e.path = rel;
  e.input = "text:" + config_.pivot;
  e.dim = config_.dims.embed;
  e.vocab = vocab_tokens(vocab);
  e.meta = {{"procedure", "train_teacher"}, {"summary", log.summary()}};
  register_module(std::move(e), log);
  timings_[id] = sw.seconds();
}

void Experiment::train_student(const std::string& lang) {
  Stopwatch sw;
  if (lang == config_.pivot) throw ConfigError("the pivot language has no student");
  const std::string id = ids::student(lang);
  const std::string teacher_id = ids::teacher(config_.pivot);
  require_module(teacher_id);
  Registry reg = registry();
  Encoder teacher = encoder_from(load_checkpoint(root_ / reg.get(teacher_id).path));

  const auto& train = corpus(bitext_name(lang));
  const auto& valid = corpus("valid");
  Vocabulary src_vocab = language(lang).vocabulary();
  Vocabulary pivot_vocab = language(config_.pivot).vocabulary();
  BitextData data{lang,
                  ids_of(train, lang, src_vocab),
                  ids_of(train, config_.pivot, pivot_vocab),
                  ids_of(valid, lang, src_vocab),
                  ids_of(valid, config_.pivot, pivot_vocab)};
  TrainConfig tc = train_config(config_.train.student, id);
  Encoder student = Encoder::for_tokens(src_vocab.size(), config_.dims, config_.pooling, module_seed(id));
  TrainingLog log = embedpipe::train_student(student, teacher, data, config_.student_loss, tc);

  json extra = {{"teacher", teacher_id}, {"loss", to_string(config_.student_loss)}, {"summary", log.summary()}};
  fs::path rel = fs::path("modules") / (id + ".ckpt");
  fs::create_directories(root_ / "modules");
  save_encoder(root_ / rel, student, meta(id, "train_student", tc, extra));

  RegistryEntry e;
  e.id = id;
  e.kind = ModuleKind::kEncoder;
  e.path = rel;
  e.input = "text:" + lang;
  e.dim = config_.dims.embed;
  e.vocab = vocab_tokens(src_vocab);
  e.meta = meta(id, "train_student", tc, extra);
  register_module(std::move(e), log);
  timings_[id] = sw.seconds();
}

void Experiment::finetune_student(const std::string& lang) {
  Stopwatch sw;
  const std::string id = ids::finetuned(lang);
  const std::string student_id = ids::student(lang);
  const std::string decoder_id = ids::decoder(DecoderVariant::kAe);
  require_module(student_id);
  require_module(decoder_id);
  Registry reg = registry();
  Checkpoint sc = load_checkpoint(root_ / reg.get(student_id).path);
  Encoder student = encoder_from(sc);
  Decoder dec = decoder_from(load_checkpoint(root_ / reg.get(decoder_id).path));

  const auto& train = corpus(bitext_name(lang));
  const auto& valid = corpus("valid");
  Vocabulary src_vocab = language(lang).vocabulary();
  Vocabulary pivot_vocab = language(config_.pivot).vocabulary();
  BitextData data{lang,
                  ids_of(train, lang, src_vocab),
                  ids_of(train, config_.pivot, pivot_vocab),
                  ids_of(valid, lang, src_vocab),
                  ids_of(valid, config_.pivot, pivot_vocab)};
  TrainConfig tc = train_config(config_.train.finetune, id);
  TrainingLog log = ce_finetune_student(student, sc.meta, dec, data, tc);

  json extra = {{"student", student_id}, {"decoder", decoder_id}, {"summary", log.summary()}};
  fs::path rel = fs::path("modules") / (id + ".ckpt");
  save_encoder(root_ / rel, student, meta(id, "ce_finetune_student", tc, extra));

  RegistryEntry e;
  e.id = id;
  e.kind = ModuleKind::kEncoder;
  e.path = rel;
  e.input = "text:" + lang;
  e.dim = config_.dims.embed;
  e.vocab = vocab_tokens(src_vocab);
  e.meta = meta(id, "ce_finetune_student", tc, extra);
  register_module(std::move(e), log);
  timings_[id] = sw.seconds();
}

void Experiment::train_decoder(DecoderVariant variant) {
  Stopwatch sw;
  const std::string id = ids::decoder(variant);
  const std::string teacher_id = ids::teacher(config_.pivot);
  require_module(teacher_id);
  Registry reg = registry();
  Encoder teacher = encoder_from(load_checkpoint(root_ / reg.get(teacher_id).path));
  Vocabulary pivot_vocab = language(config_.pivot).vocabulary();

  DecoderObjective obj;
  obj.variant = variant;
  obj.noise = config_.noise;
  obj.noise.seed = derive_seed(seed_, fnv1a64("noise"));
  obj.noise_probability = config_.noise_probability;
  obj.mix_ratio = config_.mix_ratio;

  DecoderData data;
  data.raw_train = ids_of(corpus(kRaw), config_.pivot, pivot_vocab);
  data.raw_valid = ids_of(corpus("valid"), config_.pivot, pivot_vocab);
  std::map<std::string, const Encoder*> frozen{{config_.pivot, &teacher}};
  std::set<std::string> seen{"text:" + config_.pivot};
  Encoder student;
  json extra = {{"teacher", teacher_id}};
  if (variant == DecoderVariant::kAeBitext) {
    const std::string& lang = config_.bitext_lang;
    const std::string student_id = ids::student(lang);
    require_module(student_id);
    student = encoder_from(load_checkpoint(root_ / reg.get(student_id).path));
    frozen[lang] = &student;
    obj.bitext_lang = lang;
    Vocabulary src_vocab = language(lang).vocabulary();
    const auto& bt = corpus(bitext_name(lang));
    const auto& valid = corpus("valid");
    data.bitext_src_train = ids_of(bt, lang, src_vocab);
    data.bitext_tgt_train = ids_of(bt, config_.pivot, pivot_vocab);
    data.bitext_src_valid = ids_of(valid, lang, src_vocab);
    data.bitext_tgt_valid = ids_of(valid, config_.pivot, pivot_vocab);
    seen.insert("text:" + lang);
    extra["student"] = student_id;
  }
  TrainConfig tc = train_config(config_.train.decoder, id);
  Decoder dec = Decoder::create(pivot_vocab.size(), config_.dims, module_seed(id));
  TrainingLog log = embedpipe::train_decoder(dec, obj, frozen, config_.pivot, data, tc);

  extra["objective"] = obj.to_json();
  extra["summary"] = log.summary();
  fs::path rel = fs::path("modules") / (id + ".ckpt");
  save_decoder(root_ / rel, dec, meta(id, "train_decoder", tc, extra));

  RegistryEntry e;
  e.id = id;
  e.kind = ModuleKind::kDecoder;
  e.path = rel;
  e.output = "text:" + config_.pivot;
  e.dim = config_.dims.embed;
  e.seen_inputs = seen;
  e.vocab = vocab_tokens(pivot_vocab);
  e.meta = meta(id, "train_decoder", tc, extra);
  register_module(std::move(e), log);
  timings_[id] = sw.seconds();
}

void Experiment::train_speech_student(const std::string& lang, TeacherMode mode) {
  Stopwatch sw;
  const std::string id = ids::speech(lang, mode);
  const std::string teacher_id = ids::teacher(config_.pivot);
  const std::string transcript_id = lang == config_.pivot ? teacher_id : ids::student(lang);
  if (lang != config_.pivot && lang != config_.speech_lang) {
    throw ConfigError("no speech is generated for language '" + lang + "'");
  }
  const bool needs_transcript = mode != TeacherMode::kTranslation;
  const bool needs_translation = mode != TeacherMode::kTranscription;
  Registry reg = registry();
  Encoder transcript, translation;
  SpeechTeachers teachers;
  json extra = json::object();
  if (needs_transcript) {
    require_module(transcript_id);
    transcript = encoder_from(load_checkpoint(root_ / reg.get(transcript_id).path));
    teachers.transcript = &transcript;
    extra["transcript_teacher"] = transcript_id;
  }
  if (needs_translation) {
    require_module(teacher_id);
    translation = encoder_from(load_checkpoint(root_ / reg.get(teacher_id).path));
    teachers.translation = &translation;
    extra["translation_teacher"] = teacher_id;
  }

  const auto& train = corpus(kSpeech);
  const auto& valid = corpus("valid");
  Vocabulary vocab = language(lang).vocabulary();
  Vocabulary pivot_vocab = language(config_.pivot).vocabulary();
  SpeechData data;
  data.lang = lang;
  data.frames_train = frames_of(train, lang);
  data.frames_valid = frames_of(valid, lang);
  data.transcripts_train = ids_of(train, lang, vocab);
  data.transcripts_valid = ids_of(valid, lang, vocab);
  data.translations_train = ids_of(train, config_.pivot, pivot_vocab);
  data.translations_valid = ids_of(valid, config_.pivot, pivot_vocab);

  TrainConfig tc = train_config(config_.train.speech, id);
  Encoder student = Encoder::for_frames(config_.frames.dim, config_.dims, module_seed(id));
  TrainingLog log = embedpipe::train_speech_student(student, teachers, data, mode, tc);

  extra["mode"] = to_string(mode);
  extra["summary"] = log.summary();
  fs::path rel = fs::path("modules") / (id + ".ckpt");
  save_encoder(root_ / rel, student, meta(id, "train_speech_student", tc, extra));

  RegistryEntry e;
  e.id = id;
  e.kind = ModuleKind::kEncoder;
  e.path = rel;
  e.input = "speech:" + lang;
  e.dim = config_.dims.embed;
  e.meta = meta(id, "train_speech_student", tc, extra);
  register_module(std::move(e), log);
  timings_[id] = sw.seconds();
}

void Experiment::train_unit_decoder(UnitSource source) {
  Stopwatch sw;
  const std::string id = ids::unit_decoder(source);
  const std::string& pivot = config_.pivot;
  const std::string source_id =
      source == UnitSource::kRaw ? ids::speech(pivot, TeacherMode::kTranscription) : ids::teacher(pivot);
  require_module(source_id);
  Registry reg = registry();
  Encoder enc = encoder_from(load_checkpoint(root_ / reg.get(source_id).path));

  const auto& train = corpus(kSpeech);
  const auto& valid = corpus("valid");
  UnitData data;
  data.lang = pivot;
  if (source == UnitSource::kRaw) {
    data.frames_train = frames_of(train, pivot);
    data.frames_valid = frames_of(valid, pivot);
  } else {
    Vocabulary vocab = language(pivot).vocabulary();
    data.text_train = ids_of(train, pivot, vocab);
    data.text_valid = ids_of(valid, pivot, vocab);
  }
  data.units_train = units_of(train, pivot);
  data.units_valid = units_of(valid, pivot);

  TrainConfig tc = train_config(config_.train.unit_decoder, id);
  Decoder dec = Decoder::create(config_.units + Vocabulary::kReserved, config_.dims, module_seed(id));
  TrainingLog log = embedpipe::train_unit_decoder(dec, enc, data, tc);

  json extra = {{"source", to_string(source)}, {"source_encoder", source_id}, {"summary", log.summary()}};
  fs::path rel = fs::path("modules") / (id + ".ckpt");
  save_decoder(root_ / rel, dec, meta(id, "train_unit_decoder", tc, extra));

  RegistryEntry e;
  e.id = id;
  e.kind = ModuleKind::kUnitDecoder;
  e.path = rel;
  e.output = "units:" + pivot;
  e.dim = config_.dims.embed;
  e.seen_inputs = {reg.get(source_id).input};
  e.meta = meta(id, "train_unit_decoder", tc, extra);
  register_module(std::move(e), log);
  timings_[id] = sw.seconds();
}

// ---------------------------------------------------------------------------
// Evaluation

PairReport Experiment::compose_eval(const std::string& encoder_id, const std::string& decoder_id, Split split) {
  Registry reg = registry();
  Pipeline p = compose(encoder_id, decoder_id, reg);
  p.max_len = config_.max_decode_len;
  const auto& c = corpus(split_name(split));
  auto [in_mod, in_lang] = split_stream(reg.get(encoder_id).input);
  auto [out_mod, out_lang] = split_stream(reg.get(decoder_id).output);

  std::vector<Sentence> hyps;
  if (in_mod == "speech") {
    auto frames = frames_of(c, in_lang);
    hyps = translate(p, frames);
  } else {
    hyps = translate(p, text_of(c, in_lang));
  }
  auto refs = text_of(c, out_lang);

  PairReport r;
  r.name = encoder_id + "|" + decoder_id;
  r.src = reg.get(encoder_id).input;
  r.tgt = reg.get(decoder_id).output;
  r.modality = std::string(in_mod == "speech" ? "S" : "T") + "2" + (out_mod == "units" ? "S" : "T");
  r.zero_shot = p.zero_shot;

  std::vector<Sentence> scored;
  if (p.unit_output) {
    VocoderTable vocoder = VocoderTable::from_json(read_json(data_dir() / "vocoder.json"));
    std::vector<std::vector<int>> units;
    units.reserve(hyps.size());
    for (const auto& h : hyps) {
      std::vector<int> u;
      for (const auto& t : h) u.push_back(std::stoi(t));
      units.push_back(std::move(u));
    }
    r.bleu = eval_speech_output(units, refs, vocoder);
    for (const auto& u : units) scored.push_back(vocoder.vocode(normalize_units(u)));
  } else {
    r.bleu = bleu(hyps, refs);
    scored = hyps;
  }
  r.by_length = bleu_by_length(scored, refs);

  std::ostringstream out;
  for (const auto& s : scored) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << "\n";
  }
  write_text(root_ / "outputs" / (split_name(split) + "." + encoder_id + "." + decoder_id + ".txt"), out.str());
  return r;
}

json Experiment::report_distances() {
  const std::string teacher_id = ids::teacher(config_.pivot);
  require_module(teacher_id);
  Registry reg = registry();
  Encoder teacher = encoder_from(load_checkpoint(root_ / reg.get(teacher_id).path));
  const auto& test = corpus("test");
  Vocabulary pivot_vocab = language(config_.pivot).vocabulary();
  Tensor target = embed_all(teacher, ids_of(test, config_.pivot, pivot_vocab));

  std::map<std::string, DistanceStats> trained, untrained;
  for (const auto& l : languages_) {
    if (l.id() == config_.pivot) continue;
    const std::string id = ids::student(l.id());
    if (!reg.has(id)) continue;
    Vocabulary vocab = l.vocabulary();
    auto src = ids_of(test, l.id(), vocab);
    Encoder student = encoder_from(load_checkpoint(root_ / reg.get(id).path));
    // The untrained reference is the student's own initialisation.
    Encoder fresh = Encoder::for_tokens(vocab.size(), config_.dims, config_.pooling, module_seed(id));
    trained[l.id()] = distance_stats(rowwise_l2sq(embed_all(student, src), target));
    untrained[l.id()] = distance_stats(rowwise_l2sq(embed_all(fresh, src), target));
  }
  // Expected squared distortion of the decoder-training noise on the same
  // teacher embeddings, for comparison with the student distances.
  double distortion = 0.0;
  for (std::size_t r = 0; r < target.rows(); ++r) {
    distortion += expected_distortion(target.data().subspan(r * target.cols(), target.cols()), config_.noise.alpha,
                                      config_.noise.mode);
  }
  distortion /= static_cast<double>(std::max<std::size_t>(1, target.rows()));
  json out = {{"trained", distance_report_json(trained)},
              {"untrained", distance_report_json(untrained)},
              {"noise", {{"alpha", config_.noise.alpha}, {"expected_mean_l2sq", distortion}}}};
  write_text(root_ / "distances.json", out.dump(1) + "\n");
  return out;
}

json Experiment::run_all() {
  Stopwatch total;
  const std::string& pivot = config_.pivot;
  const std::string& spoken = config_.speech_lang;
  std::vector<std::string> others;
  for (const auto& l : languages_) {
    if (l.id() != pivot) others.push_back(l.id());
  }

  gen_data();
  train_teacher();
  for (const auto& lang : others) train_student(lang);
  for (auto v : config_.decoders) train_decoder(v);
  if (config_.ce_finetune) {
    if (!registry().has(ids::decoder(DecoderVariant::kAe))) train_decoder(DecoderVariant::kAe);
    for (const auto& lang : others) finetune_student(lang);
  }
  for (auto m : config_.teacher_modes) train_speech_student(spoken, m);
  train_speech_student(pivot, TeacherMode::kTranscription);
  train_unit_decoder(UnitSource::kRaw);
  train_unit_decoder(UnitSource::kTranscripts);

  Stopwatch eval_sw;
  std::vector<PairReport> pairs;
  for (auto v : config_.decoders) {
    const std::string dec = ids::decoder(v);
    pairs.push_back(compose_eval(ids::teacher(pivot), dec, Split::kTest));
    for (const auto& lang : others) pairs.push_back(compose_eval(ids::student(lang), dec, Split::kTest));
    if (config_.ce_finetune) {
      for (const auto& lang : others) pairs.push_back(compose_eval(ids::finetuned(lang), dec, Split::kTest));
    }
    for (auto m : config_.teacher_modes) pairs.push_back(compose_eval(ids::speech(spoken, m), dec, Split::kTest));
  }
  for (auto s : {UnitSource::kRaw, UnitSource::kTranscripts}) {
    const std::string dec = ids::unit_decoder(s);
    for (auto m : config_.teacher_modes) pairs.push_back(compose_eval(ids::speech(spoken, m), dec, Split::kTest));
    pairs.push_back(compose_eval(ids::speech(pivot, TeacherMode::kTranscription), dec, Split::kTest));
    pairs.push_back(compose_eval(ids::teacher(pivot), dec, Split::kTest));
    for (const auto& lang : others) pairs.push_back(compose_eval(ids::student(lang), dec, Split::kTest));
  }
  json distances = report_distances();
  timings_["evaluation"] = eval_sw.seconds();

  json report = report_json(pairs, config_.hash(), seed_);
  report["distances"] = distances;
  json training = json::object();
  json flows = json::object();
  json frozen = json::object();
  json tags = json::object();
  for (const auto& [id, log] : logs_) {
    training[id] = log.summary();
    flows[id] = log.data_flow;
    frozen[id] = log.frozen_checked;
    std::map<std::string, std::size_t> counts;
    for (const auto& t : log.batch_tags) ++counts[t];
    tags[id] = counts;
  }
  report["training"] = training;
  report["data_flow"] = flows;
  report["frozen_checked"] = frozen;
  report["batch_tags"] = tags;
  json manifest = read_json(data_dir() / "manifest.json");
  json hashes = json::object();
  for (const auto& [name, m] : manifest.items()) hashes[name] = m.at("hash");
  report["corpus_hashes"] = hashes;
  write_text(root_ / "report.json", report.dump(1) + "\n");
  write_text(root_ / "report.csv", report_csv(pairs, config_.hash(), seed_));

  timings_["total"] = total.seconds();
  write_text(root_ / "timing.json", timings_.dump(1) + "\n");
  return report;
}

// ---------------------------------------------------------------------------
// Suite

json run_paper_suite(const ExperimentConfig& config, std::size_t jobs) {
  config.validate();
  const fs::path failed = config.output_dir / "FAILED";
  fs::create_directories(config.output_dir);
  fs::remove(failed);
  try {
    jobs = std::max<std::size_t>(1, jobs);
    std::vector<json> reports(config.seeds.size());
    for (std::size_t start = 0; start < config.seeds.size(); start += jobs) {
      std::vector<std::future<json>> running;
      for (std::size_t i = start; i < std::min(start + jobs, config.seeds.size()); ++i) {
        running.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async,
                                     [&config, seed = config.seeds[i]] { return Experiment(config, seed).run_all(); }));
      }
      for (std::size_t i = 0; i < running.size(); ++i) reports[start + i] = running[i].get();
    }

    json cfg = config.to_json();
    cfg.erase("output_dir");
    json suite = {{"config_hash", config.hash()}, {"config", cfg}, {"seeds", config.seeds}, {"runs", json::object()}};
    std::string csv;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const std::string key = std::to_string(config.seeds[i]);
      suite["runs"][key] = reports[i];
      std::ifstream in(config.output_dir / ("seed-" + key) / "report.csv");
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (!header || csv.empty()) csv += line + "\n";
        header = false;
      }
    }
    write_text(config.output_dir / "report.json", suite.dump(1) + "\n");
    write_text(config.output_dir / "report.csv", csv);
    return suite;
  } catch (const std::exception& e) {
    write_text(failed, std::string(e.what()) + "\n");
    throw;
  }
}

json load_report(const fs::path& output_dir) {
  if (fs::exists(output_dir / "FAILED")) {
    std::ifstream in(output_dir / "FAILED");
    std::string msg;
    std::getline(in, msg);
    throw PrerequisiteError("suite failed: " + msg);
  }
  return read_json(output_dir / "report.json");
}

}  // namespace embedpipe
