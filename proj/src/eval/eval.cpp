#include "embedpipe/eval.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "embedpipe/checkpoint.hpp"

namespace embedpipe {

namespace {

using Gram = std::vector<std::string_view>;

std::map<Gram, std::size_t> count_ngrams(const Sentence& s, std::size_t n) {
  std::map<Gram, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out[Gram(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))]++;
  return out;
}

}  // namespace

BleuReport bleu(std::span<const Sentence> hyps, std::span<const Sentence> refs) {
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) +
                                " references");
  }
  BleuReport r;
  r.pairs = hyps.size();
  std::array<std::size_t, 4> match{}, total{};
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    r.hyp_len += hyps[i].size();
    r.ref_len += refs[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = count_ngrams(hyps[i], n);
      const auto ref = count_ngrams(refs[i], n);
      for (const auto& [g, c] : h) {
        auto it = ref.find(g);
        if (it != ref.end()) match[n - 1] += std::min(c, it->second);
      }
      if (hyps[i].size() >= n) total[n - 1] += hyps[i].size() - n + 1;
    }
  }
  r.precisions[0] = total[0] ? double(match[0]) / double(total[0]) : 0.0;
  for (std::size_t n = 1; n < 4; ++n) r.precisions[n] = double(match[n] + 1) / double(total[n] + 1);
  if (r.hyp_len == 0) {
    r.empty_hypotheses = true;
    r.bp = 0.0;
    r.bleu = 0.0;
    return r;
  }
  r.bp = r.hyp_len >= r.ref_len ? 1.0 : std::exp(1.0 - double(r.ref_len) / double(r.hyp_len));
  double log_sum = 0.0;
  for (double p : r.precisions) {
    if (p == 0.0) return r;
    log_sum += std::log(p);
  }
  r.bleu = 100.0 * r.bp * std::exp(log_sum / 4.0);
  return r;
}

nlohmann::json to_json(const BleuReport& r) {
  return {{"bleu", r.bleu},       {"precisions", r.precisions}, {"bp", r.bp},
          {"hyp_len", r.hyp_len}, {"ref_len", r.ref_len},       {"pairs", r.pairs},
          {"empty_hypotheses", r.empty_hypotheses}, {"strategy", r.strategy}};
}

std::string LengthBucket::label() const {
  return std::to_string(lo) + (hi == 0 ? "+" : "-" + std::to_string(hi));
}

const std::vector<LengthBucket>& default_length_buckets() {
  static const std::vector<LengthBucket> b{{1, 10}, {11, 20}, {21, 35}, {36, 0}};
  return b;
}

std::vector<BucketReport> bleu_by_length(std::span<const Sentence> hyps, std::span<const Sentence> refs,
                                         const std::vector<LengthBucket>& buckets) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("bleu_by_length: hypothesis/reference count mismatch");
  if (buckets.empty() || buckets.front().lo != 1 || buckets.back().hi != 0) {
    throw std::invalid_argument("bleu_by_length: buckets must start at 1 and end unbounded");
  }
  for (std::size_t b = 0; b + 1 < buckets.size(); ++b) {
    if (buckets[b].hi == 0 || buckets[b].hi < buckets[b].lo || buckets[b + 1].lo != buckets[b].hi + 1) {
      throw std::invalid_argument("bleu_by_length: buckets must partition the lengths");
    }
  }
  std::vector<BucketReport> out;
  for (const LengthBucket& bucket : buckets) {
    std::vector<Sentence> h, r;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (bucket.contains(refs[i].size())) {
        h.push_back(hyps[i]);
        r.push_back(refs[i]);
      }
    }
    BucketReport br{bucket, h.size(), std::nullopt};
    if (!h.empty()) br.report = bleu(h, r);
    out.push_back(std::move(br));
  }
  return out;
}

nlohmann::json to_json(const std::vector<BucketReport>& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const BucketReport& b : r) {
    j[b.bucket.label()] = b.report ? nlohmann::json{{"pairs", b.pairs}, {"bleu", b.report->bleu}}
                                   : nlohmann::json{{"pairs", 0}, {"bleu", nullptr}};
  }
  return j;
}

VocoderTable::VocoderTable(std::vector<std::string> unit_to_token) : table_(std::move(unit_to_token)) {
  std::map<std::string, std::size_t> seen;
  for (std::size_t u = 0; u < table_.size(); ++u) {
    auto [it, fresh] = seen.emplace(table_[u], u);
    if (!fresh) {
      throw VocoderError("vocoder table is not injective: units " + std::to_string(it->second) + " and " +
                         std::to_string(u) + " both map to '" + table_[u] + "'");
    }
  }
}

VocoderTable VocoderTable::build(const UnitCodebook& codebook, const FrameSynthesizer& synth, const std::string& lang,
                                 std::span<const std::string> tokens) {
  std::vector<std::string> table;
  for (std::size_t k = 0; k < codebook.size(); ++k) {
    table.push_back(synth.nearest_token(codebook.centroids().data().subspan(k * codebook.dim(), codebook.dim()), lang, tokens));
  }
  return VocoderTable(std::move(table));
}

const std::string& VocoderTable::token(int unit) const {
  if (unit < 0 || static_cast<std::size_t>(unit) >= table_.size()) {
    throw VocoderError("unknown unit " + std::to_string(unit));
  }
  return table_[static_cast<std::size_t>(unit)];
}

Sentence VocoderTable::vocode(std::span<const int> units) const {
  if (!is_normalized(units)) throw VocoderError("vocode: units must be normalized (consecutive duplicates found)");
  Sentence out;
  out.reserve(units.size());
  for (int u : units) out.push_back(token(u));
  return out;
}

nlohmann::json VocoderTable::to_json() const { return {{"units", table_}}; }

VocoderTable VocoderTable::from_json(const nlohmann::json& j) {
  return VocoderTable(j.at("units").get<std::vector<std::string>>());
}

BleuReport eval_speech_output(std::span<const std::vector<int>> unit_hyps, std::span<const Sentence> refs,
                              const VocoderTable& table) {
  std::vector<Sentence> hyps;
  hyps.reserve(unit_hyps.size());
  for (const auto& u : unit_hyps) hyps.push_back(table.vocode(normalize_units(u)));
  return bleu(hyps, refs);
}

std::string_view to_string(ModuleKind k) {
  switch (k) {
    case ModuleKind::kEncoder: return "encoder";
    case ModuleKind::kDecoder: return "decoder";
    case ModuleKind::kUnitDecoder: return "unit_decoder";
  }
  return "encoder";
}

ModuleKind parse_module_kind(std::string_view s) {
  if (s == "encoder") return ModuleKind::kEncoder;
  if (s == "decoder") return ModuleKind::kDecoder;
  if (s == "unit_decoder") return ModuleKind::kUnitDecoder;
  throw std::invalid_argument("unknown module kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const RegistryEntry& e) {
  return {{"id", e.id},         {"kind", std::string(to_string(e.kind))},
          {"path", e.path.generic_string()}, {"input", e.input},
          {"output", e.output}, {"dim", e.dim},
          {"seen_inputs", e.seen_inputs}, {"vocab", e.vocab},
          {"meta", e.meta}};
}

RegistryEntry registry_entry_from_json(const nlohmann::json& j) {
  RegistryEntry e;
  e.id = j.at("id").get<std::string>();
  e.kind = parse_module_kind(j.at("kind").get<std::string>());
  e.path = j.at("path").get<std::string>();
  e.input = j.value("input", std::string());
  e.output = j.value("output", std::string());
  e.dim = j.at("dim").get<std::size_t>();
  e.seen_inputs = j.value("seen_inputs", std::set<std::string>());
  e.vocab = j.value("vocab", std::vector<std::string>());
  e.meta = j.value("meta", nlohmann::json::object());
  return e;
}

Registry::Registry(std::filesystem::path root) : root_(std::move(root)) {}

void Registry::add(RegistryEntry entry) {
  if (entry.id.empty()) throw RegistryError("registry: empty id");
  if (entry.kind == ModuleKind::kEncoder ? entry.input.empty() : entry.output.empty()) {
    throw RegistryError("registry: entry '" + entry.id + "' lacks provenance");
  }
  const std::string id = entry.id;
  if (!entries_.emplace(id, std::move(entry)).second) throw RegistryError("registry: duplicate id '" + id + "'");
}

bool Registry::has(const std::string& id) const { return entries_.count(id) != 0; }

const RegistryEntry& Registry::get(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw RegistryError("unknown module id '" + id + "'");
  return it->second;
}

void Registry::save() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [id, e] : entries_) j.push_back(to_json(e));
  std::filesystem::create_directories(root_);
  std::ofstream out(root_ / "registry.json", std::ios::trunc);
  if (!out) throw RegistryError("cannot write " + (root_ / "registry.json").string());
  out << nlohmann::json{{"modules", j}}.dump(1) << '\n';
}

Registry Registry::load(const std::filesystem::path& root) {
  std::ifstream in(root / "registry.json");
  if (!in) throw RegistryError("no registry index at " + (root / "registry.json").string());
  Registry r(root);
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& e : j.at("modules")) r.add(registry_entry_from_json(e));
  } catch (const nlohmann::json::exception& e) {
    throw RegistryError(std::string("malformed registry index: ") + e.what());
  }
  return r;
}

bool is_zero_shot(const RegistryEntry& encoder, const RegistryEntry& decoder) {
  return decoder.seen_inputs.count(encoder.input) == 0;
}

Pipeline compose(const RegistryEntry& enc_entry, Encoder encoder, const RegistryEntry& dec_entry, Decoder decoder) {
  if (enc_entry.kind != ModuleKind::kEncoder) throw RegistryError("'" + enc_entry.id + "' is not an encoder");
  if (dec_entry.kind == ModuleKind::kEncoder) throw RegistryError("'" + dec_entry.id + "' is not a decoder");
  if (encoder.dims().embed != decoder.dims().embed) {
    throw std::invalid_argument("compose: encoder '" + enc_entry.id + "' emits D=" + std::to_string(encoder.dims().embed) +
                                " but decoder '" + dec_entry.id + "' expects D=" + std::to_string(decoder.dims().embed));
  }
  Pipeline p;
  p.encoder_id = enc_entry.id;
  p.decoder_id = dec_entry.id;
  p.unit_output = dec_entry.kind == ModuleKind::kUnitDecoder;
  if (encoder.input_kind() == InputKind::kTokens) p.input_vocab = Vocabulary(enc_entry.vocab);
  if (!p.unit_output) p.output_vocab = Vocabulary(dec_entry.vocab);
  p.zero_shot = is_zero_shot(enc_entry, dec_entry);
  p.encoder = std::move(encoder);
  p.decoder = std::move(decoder);
  return p;
}

Pipeline compose(const std::string& encoder_id, const std::string& decoder_id, const Registry& registry) {
  const RegistryEntry& e = registry.get(encoder_id);
  const RegistryEntry& d = registry.get(decoder_id);
  if (e.kind != ModuleKind::kEncoder) throw RegistryError("'" + e.id + "' is not an encoder");
  if (d.kind == ModuleKind::kEncoder) throw RegistryError("'" + d.id + "' is not a decoder");
  if (e.dim != d.dim) {
    throw std::invalid_argument("compose: encoder '" + e.id + "' emits D=" + std::to_string(e.dim) + " but decoder '" +
                                d.id + "' expects D=" + std::to_string(d.dim));
  }
  return compose(e, encoder_from(load_checkpoint(registry.root() / e.path)), d,
                 decoder_from(load_checkpoint(registry.root() / d.path)));
}

namespace {

std::vector<Sentence> render(const Pipeline& p, const std::vector<Decoded>& out) {
  std::vector<Sentence> res;
  res.reserve(out.size());
  for (const Decoded& d : out) {
    if (p.unit_output) {
      Sentence s;
      for (int id : d.tokens) {
        if (id >= Vocabulary::kReserved) s.push_back(std::to_string(id - Vocabulary::kReserved));
      }
      res.push_back(std::move(s));
    } else {
      res.push_back(p.output_vocab.decode(d.tokens));
    }
  }
  return res;
}

std::vector<Decoded> decode_rows(const Pipeline& p, const Tensor& emb) { return p.decoder.greedy(emb, p.max_len); }

template <class Input, class EncodeBatch>
std::vector<Decoded> run_batched(std::span<const Input> inputs, EncodeBatch encode_batch, const Pipeline& p) {
  std::vector<Decoded> out;
  out.reserve(inputs.size());
  const std::size_t batch = 64;
  for (std::size_t b = 0; b < inputs.size(); b += batch) {
    const auto part = inputs.subspan(b, std::min(batch, inputs.size() - b));
    const Tensor emb = encode_batch(part);
    for (Decoded& d : decode_rows(p, emb)) out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

std::vector<Sentence> translate(const Pipeline& p, std::span<const Sentence> inputs) {
  if (p.encoder.input_kind() != InputKind::kTokens) throw std::invalid_argument("translate: encoder expects frames");
  auto encode_batch = [&](std::span<const Sentence> part) {
    std::vector<std::vector<int>> ids;
    for (const Sentence& s : part) ids.push_back(with_markers(p.input_vocab.encode(s)));
    return p.encoder.embed(ids);
  };
  return render(p, run_batched(inputs, encode_batch, p));
}

std::vector<Sentence> translate(const Pipeline& p, std::span<const Tensor> frames) {
  if (p.encoder.input_kind() != InputKind::kFrames) throw std::invalid_argument("translate: encoder expects tokens");
  auto encode_batch = [&](std::span<const Tensor> part) { return p.encoder.embed(part); };
  return render(p, run_batched(frames, encode_batch, p));
}

std::vector<std::vector<int>> translate_units(const Pipeline& p, std::span<const Tensor> frames) {
  if (!p.unit_output) throw std::invalid_argument("translate_units: decoder does not emit units");
  if (p.encoder.input_kind() != InputKind::kFrames) throw std::invalid_argument("translate_units: encoder expects tokens");
  auto encode_batch = [&](std::span<const Tensor> part) { return p.encoder.embed(part); };
  std::vector<std::vector<int>> out;
  for (const Decoded& d : run_batched(frames, encode_batch, p)) {
    std::vector<int> u;
    for (int id : d.tokens) {
      if (id >= Vocabulary::kReserved) u.push_back(id - Vocabulary::kReserved);
    }
    out.push_back(std::move(u));
  }
  return out;
}

nlohmann::json to_json(const PairReport& r) {
  const nlohmann::json b = to_json(r.bleu);
  return {{"src", r.src},
          {"tgt", r.tgt},
          {"modality", r.modality},
          {"zero_shot", r.zero_shot},
          {"bleu", r.bleu.bleu},
          {"precisions", r.bleu.precisions},
          {"bp", r.bleu.bp},
          {"hyp_len", r.bleu.hyp_len},
          {"ref_len", r.bleu.ref_len},
          {"strategy", r.bleu.strategy},
          {"by_length", to_json(r.by_length)}};
}

nlohmann::json report_json(const std::vector<PairReport>& pairs, const std::string& config_hash, std::uint64_t seed) {
  nlohmann::json p = nlohmann::json::object();
  for (const PairReport& r : pairs) p[r.name] = to_json(r);
  return {{"pairs", p}, {"config_hash", config_hash}, {"seed", seed}};
}

std::string report_csv(const std::vector<PairReport>& pairs, const std::string& config_hash, std::uint64_t seed) {
  std::ostringstream out;
  out.precision(17);
  out << "name,src,tgt,modality,zero_shot,bleu,p1,p2,p3,p4,bp,hyp_len,ref_len";
  for (const LengthBucket& b : default_length_buckets()) out << ",bleu_" << b.label();
  out << ",config_hash,seed\n";
  for (const PairReport& r : pairs) {
    out << r.name << ',' << r.src << ',' << r.tgt << ',' << r.modality << ',' << (r.zero_shot ? "true" : "false") << ','
        << r.bleu.bleu;
    for (double p : r.bleu.precisions) out << ',' << p;
    out << ',' << r.bleu.bp << ',' << r.bleu.hyp_len << ',' << r.bleu.ref_len;
    for (const LengthBucket& b : default_length_buckets()) {
      out << ',';
      for (const BucketReport& br : r.by_length) {
        if (br.bucket.lo == b.lo && br.report) out << br.report->bleu;
      }
    }
    out << ',' << config_hash << ',' << seed << '\n';
  }
  return out.str();
}

}  // namespace embedpipe
