#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "embedpipe/checkpoint.hpp"
#include "embedpipe/eval.hpp"

using namespace embedpipe;

namespace {

nlohmann::json load_cases() {
  std::ifstream in(std::string(EMBEDPIPE_TEST_DATA) + "/bleu_cases.json");
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  return j;
}

std::vector<Sentence> sentences(const nlohmann::json& j) { return j.get<std::vector<Sentence>>(); }

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "embedpipe_test_eval" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("BLEU matches the scripted reference on 100 mini-corpora") {
  const nlohmann::json cases = load_cases();
  REQUIRE(cases["random"].size() == 100);
  for (const auto& c : cases["random"]) {
    const BleuReport r = bleu(sentences(c["hyps"]), sentences(c["refs"]));
    CHECK(std::abs(r.bleu - c["bleu"].get<double>()) <= 1e-9);
    CHECK(std::abs(r.bp - c["bp"].get<double>()) <= 1e-12);
    for (int n = 0; n < 4; ++n) CHECK(std::abs(r.precisions[n] - c["precisions"][n].get<double>()) <= 1e-12);
  }
  const auto& f = cases["fixed"];
  CHECK(std::abs(bleu(sentences(f["hyps"]), sentences(f["refs"])).bleu - f["bleu"].get<double>()) <= 1e-9);
}

TEST_CASE("BLEU identities and degenerate cases") {
  const std::vector<Sentence> refs{{"a", "b", "c"}, {"d", "e"}, {"f"}};
  const BleuReport same = bleu(refs, refs);
  CHECK(same.bleu == 100.0);
  CHECK(same.bp == 1.0);
  const std::vector<Sentence> empty(3);
  const BleuReport zero = bleu(empty, refs);
  CHECK(zero.bleu == 0.0);
  CHECK(zero.bp == 0.0);
  CHECK(zero.empty_hypotheses);
  CHECK_THROWS(bleu(std::vector<Sentence>(2), refs));
  const std::vector<Sentence> hyps{{"a", "b", "x"}, {"d", "e"}, {"g"}};
  const std::vector<Sentence> hyps_rev{{"g"}, {"d", "e"}, {"a", "b", "x"}};
  const std::vector<Sentence> refs_rev{{"f"}, {"d", "e"}, {"a", "b", "c"}};
  CHECK(bleu(hyps, refs).bleu == doctest::Approx(bleu(hyps_rev, refs_rev).bleu).epsilon(1e-15));
  std::mt19937_64 rng(8);
  std::vector<Sentence> grow;
  double last = -1.0;
  for (int i = 0; i < 30; ++i) {
    Sentence s;
    for (int k = 0; k < 1 + int(rng() % 12); ++k) s.push_back("w" + std::to_string(rng() % 5));
    grow.push_back(s);
    const double b = bleu(grow, grow).bleu;
    CHECK(b == 100.0);
    CHECK(b >= last);
    last = b;
  }
}

TEST_CASE("bleu_by_length partitions pairs by reference length") {
  std::vector<Sentence> refs, hyps;
  for (int i = 0; i < 7; ++i) refs.push_back(Sentence(5, "t" + std::to_string(i)));
  const auto only = bleu_by_length(refs, refs);
  REQUIRE(only.size() == 4);
  CHECK(only[0].report.has_value());
  CHECK(only[0].pairs == 7);
  for (int b = 1; b < 4; ++b) CHECK_FALSE(only[b].report.has_value());
  std::mt19937_64 rng(3);
  refs.clear();
  for (int i = 0; i < 200; ++i) {
    Sentence s(1 + rng() % 45, "x");
    refs.push_back(s);
    hyps.push_back(Sentence(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2 + 1)));
  }
  const auto by = bleu_by_length(hyps, refs);
  std::size_t total = 0;
  for (const auto& b : by) total += b.pairs;
  CHECK(total == 200);
  const nlohmann::json j = to_json(by);
  CHECK(j.contains("36+"));
  CHECK_THROWS(bleu_by_length(hyps, refs, {{1, 10}, {12, 0}}));
  CHECK_THROWS(bleu_by_length(hyps, refs, {{1, 10}}));
}

TEST_CASE("vocoder lookup, preconditions and injectivity") {
  VocoderTable t({"d0", "n1", "v2", "a3", "p4", "c5"});
  const std::vector<int> u{3, 5};
  CHECK(t.vocode(u) == Sentence{"a3", "c5"});
  CHECK_THROWS_AS(t.vocode(std::vector<int>{3, 3}), VocoderError);
  CHECK_THROWS_AS(t.vocode(std::vector<int>{9}), VocoderError);
  CHECK_THROWS_AS(VocoderTable({"a", "b", "a"}), VocoderError);
  CHECK(VocoderTable::from_json(t.to_json()).vocode(u) == t.vocode(u));
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> seq;
    for (int k = 0; k < 10; ++k) seq.push_back(int((trial * 7 + k * 3) % 6));
    const auto n = normalize_units(seq);
    CHECK(t.vocode(n).size() == n.size());
  }
}

TEST_CASE("vocoding units of noiseless frames recovers the transcript") {
  FrameSynthesizer fs({16, 0.0, 2, 5}, 17);
  const auto tokens = pivot_tokens();
  // Centroids are the prototypes in a scrambled order.
  std::vector<std::size_t> order(tokens.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = (i * 37) % order.size();
  Tensor c(Shape{tokens.size(), 16});
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto p = fs.prototype("L0", tokens[order[k]]);
    std::copy(p.begin(), p.end(), c.data().begin() + static_cast<std::ptrdiff_t>(k * 16));
  }
  const UnitCodebook cb(c);
  const VocoderTable table = VocoderTable::build(cb, fs, "L0", tokens);
  for (std::size_t k = 0; k < order.size(); ++k) CHECK(table.token(int(k)) == tokens[order[k]]);
  std::vector<std::vector<int>> unit_hyps;
  std::vector<Sentence> refs;
  for (const auto& s : gen_base_corpus(4, 100)) {
    const auto units = normalize_units(extract_units(fs.synth(s, "L0", 3), cb));
    CHECK(table.vocode(units) == s);
    unit_hyps.push_back(units);
    refs.push_back(s);
  }
  CHECK(eval_speech_output(unit_hyps, refs, table).bleu == 100.0);
  CHECK(eval_speech_output(std::vector<std::vector<int>>(refs.size()), refs, table).bleu == 0.0);
}

TEST_CASE("registry provenance, persistence and composition") {
  const auto root = temp_dir("registry");
  const ModelDims dims{8, 6};
  const Encoder enc = Encoder::for_tokens(12, dims, Pooling::kMax, 1);
  const Decoder dec = Decoder::create(12, dims, 2);
  const Decoder wide = Decoder::create(12, {8, 10}, 3);
  save_encoder(root / "enc.ckpt", enc, {});
  save_decoder(root / "dec.ckpt", dec, {});
  save_decoder(root / "wide.ckpt", wide, {});
  std::vector<std::string> vocab;
  for (int i = 0; i < 8; ++i) vocab.push_back("w" + std::to_string(i));

  Registry reg(root);
  reg.add({"enc-L2", ModuleKind::kEncoder, "enc.ckpt", "text:L2", "", 6, {}, vocab, {}});
  reg.add({"dec-AE", ModuleKind::kDecoder, "dec.ckpt", "", "text:L0", 6, {"text:L0"}, vocab, {}});
  reg.add({"dec-wide", ModuleKind::kDecoder, "wide.ckpt", "", "text:L0", 10, {"text:L0", "text:L2"}, vocab, {}});
  CHECK_THROWS_AS(reg.add({"enc-L2", ModuleKind::kEncoder, "x", "text:L2", "", 6, {}, {}, {}}), RegistryError);
  reg.save();

  const Registry back = Registry::load(root);
  CHECK(back.entries().size() == 3);
  const Pipeline p = compose("enc-L2", "dec-AE", back);
  CHECK(p.zero_shot);
  CHECK_FALSE(is_zero_shot(back.get("enc-L2"), back.get("dec-wide")));
  CHECK_THROWS_WITH(compose("enc-L2", "dec-wide", back), doctest::Contains("D="));
  CHECK_THROWS_WITH_AS(compose("nope", "dec-AE", back), doctest::Contains("nope"), RegistryError);
  CHECK_THROWS_AS(compose("dec-AE", "enc-L2", back), RegistryError);

  const std::vector<Sentence> in{{"w1", "w2"}, {"w3"}, {"w0", "w5", "w7", "w1"}};
  const auto out1 = translate(p, in);
  const auto out2 = translate(p, in);
  CHECK(out1 == out2);
  CHECK(out1.size() == 3);
  for (const auto& s : out1) CHECK(s.size() <= p.max_len);
}

TEST_CASE("report JSON and CSV") {
  PairReport r;
  r.name = "L2->L0/AE";
  r.src = "text:L2";
  r.tgt = "text:L0";
  r.modality = "T2T";
  r.zero_shot = true;
  const std::vector<Sentence> refs{{"a", "b"}};
  r.bleu = bleu(refs, refs);
  r.by_length = bleu_by_length(refs, refs);
  const nlohmann::json j = report_json({r}, "abc", 7);
  CHECK(j["pairs"]["L2->L0/AE"]["zero_shot"] == true);
  CHECK(j["pairs"]["L2->L0/AE"]["bleu"] == 100.0);
  CHECK(j["pairs"]["L2->L0/AE"]["by_length"]["11-20"]["bleu"].is_null());
  CHECK(j["config_hash"] == "abc");
  const std::string csv = report_csv({r}, "abc", 7);
  CHECK(csv.find("L2->L0/AE,text:L2,text:L0,T2T,true,100") != std::string::npos);
}
