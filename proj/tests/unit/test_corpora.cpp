#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "embedpipe/corpora.hpp"

using namespace embedpipe;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "embedpipe_test_corpora";
  std::filesystem::create_directories(dir);
  return dir / name;
}

LanguageSpec l1_spec() {
  return LanguageSpec("L1", {{TransformKind::kPermute}, {TransformKind::kReverseWindow, 3}}, 11);
}

LanguageSpec l2_spec() {
  return LanguageSpec("L2",
                      {{TransformKind::kPermute},
                       {TransformKind::kReverseWindow, 4},
                       {TransformKind::kAffix, 0, 0.25},
                       {TransformKind::kSplit, 0, 0.25}},
                      12);
}

std::size_t bucket_of(std::size_t len) {
  if (len <= 10) return 0;
  if (len <= 20) return 1;
  if (len <= 35) return 2;
  return 3;
}

}  // namespace

TEST_CASE("base corpus is deterministic and stays in the pivot vocabulary") {
  const auto a = gen_base_corpus(5, 1000), b = gen_base_corpus(5, 1000);
  CHECK(a == b);
  CHECK(a.size() == 1000);
  CHECK(gen_base_corpus(6, 1000) != a);
  const auto vocab = pivot_tokens();
  CHECK(vocab.size() == 64);
  const std::set<std::string> in_vocab(vocab.begin(), vocab.end());
  CHECK(in_vocab.size() == 64);
  for (const auto& s : a) {
    CHECK(s.size() >= 3);
    CHECK(s.size() <= 40);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(in_vocab.count(s[i]) == 1);
      if (i > 0) CHECK(s[i] != s[i - 1]);
    }
  }
  // A prefix of a larger corpus is the smaller corpus.
  const auto longer = gen_base_corpus(5, 1200);
  CHECK(std::equal(a.begin(), a.end(), longer.begin()));
  CHECK_THROWS(gen_base_corpus(5, 0));
}

TEST_CASE("length buckets each hold at least 50 of 5000 sentences") {
  std::array<std::size_t, 4> counts{};
  for (const auto& s : gen_base_corpus(2024, 5000)) counts[bucket_of(s.size())]++;
  for (std::size_t c : counts) CHECK(c >= 50);
}

TEST_CASE("identity language leaves sentences unchanged") {
  LanguageSpec l0("L0", {}, 1);
  CHECK(l0.is_identity());
  for (const auto& s : gen_base_corpus(1, 200)) {
    CHECK(l0.apply(s) == s);
    CHECK(l0.invert(s) == s);
  }
  CHECK(l0.tokens() == pivot_tokens());
}

TEST_CASE("transforms round-trip exactly over a full corpus") {
  const auto corpus = gen_base_corpus(77, 3000);
  std::vector<LanguageSpec> specs{
      LanguageSpec("P", {{TransformKind::kPermute}}, 3),
      LanguageSpec("R", {{TransformKind::kReverseWindow, 5}}, 3),
      LanguageSpec("PA", {{TransformKind::kPermute}, {TransformKind::kAffix, 0, 0.5}}, 4),
      LanguageSpec("S", {{TransformKind::kSplit, 0, 1.0}}, 4),
      l1_spec(),
      l2_spec(),
  };
  for (const auto& spec : specs) {
    const std::set<std::string> vocab(spec.tokens().begin(), spec.tokens().end());
    CHECK(vocab.size() == spec.tokens().size());
    for (const auto& s : corpus) {
      const Sentence t = spec.apply(s);
      for (const auto& w : t) REQUIRE(vocab.count(w) == 1);
      REQUIRE(spec.invert(t) == s);
    }
  }
}

TEST_CASE("language transforms change the surface form") {
  const Sentence s{"d0", "a1", "n2", "v3", "d1", "n4"};
  const LanguageSpec rev("R", {{TransformKind::kReverseWindow, 4}}, 0);
  CHECK(rev.apply(s) == Sentence{"v3", "n2", "a1", "d0", "n4", "d1"});
  const LanguageSpec l1 = l1_spec(), l2 = l2_spec();
  const Sentence t1 = l1.apply(s), t2 = l2.apply(s);
  CHECK(t1.size() == s.size());
  CHECK(t2.size() > s.size());
  for (const auto& w : t1) CHECK(w.rfind("l1.", 0) == 0);
  CHECK(l1.tokens().size() == 64);
  CHECK(l2.tokens().size() > 64);
  CHECK(l2.vocabulary().size() == l2.tokens().size() + Vocabulary::kReserved);
}

TEST_CASE("language spec rejects bad steps and survives JSON") {
  CHECK_THROWS(LanguageSpec("", {}, 0));
  CHECK_THROWS(LanguageSpec("X", {{TransformKind::kReverseWindow, 0}}, 0));
  CHECK_THROWS(LanguageSpec("X", {{TransformKind::kAffix, 0, 0.0}}, 0));
  CHECK_THROWS(LanguageSpec("X", {{TransformKind::kSplit, 0, 1.5}}, 0));
  CHECK_THROWS(parse_transform("shuffle"));
  const LanguageSpec l2 = l2_spec();
  const LanguageSpec back = LanguageSpec::from_json(l2.to_json());
  CHECK(back.tokens() == l2.tokens());
  for (const auto& s : gen_base_corpus(3, 100)) CHECK(back.apply(s) == l2.apply(s));
  CHECK_THROWS(l2.invert(Sentence{"not-a-token"}));
}

TEST_CASE("frame synthesis bounds and determinism") {
  FrameSynthesizer fs({}, 9);
  const Sentence s{"d0", "n1", "v2"};
  const Tensor f = fs.synth(s, "L0", 42);
  CHECK(f.cols() == 16);
  CHECK(f.rows() >= 6);
  CHECK(f.rows() <= 15);
  CHECK(f.all_finite());
  CHECK(fs.synth(s, "L0", 42).values() == f.values());
  CHECK(fs.synth(s, "L0", 43).values() != f.values());
  CHECK(fs.prototype("L0", "d0") != fs.prototype("L1", "d0"));
  for (const auto& sent : gen_base_corpus(8, 200)) {
    CHECK(fs.synth(sent, "L0", 1).rows() >= 2 * sent.size());
    CHECK(fs.synth(sent, "L0", 1).rows() <= 5 * sent.size());
  }
}

TEST_CASE("noiseless frames with k=2 duplicate the prototypes") {
  FrameSynthesizer fs({16, 0.0, 2, 2}, 9);
  const Sentence s{"d3", "a0", "n7"};
  const Tensor f = fs.synth(s, "L0", 1);
  REQUIRE(f.rows() == 6);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto p = fs.prototype("L0", s[t / 2]);
    for (std::size_t j = 0; j < 16; ++j) CHECK(f.at(t, j) == p[j]);
  }
}

TEST_CASE("nearest-prototype decoding of noiseless frames recovers the tokens") {
  FrameSynthesizer fs({16, 0.0, 2, 5}, 21);
  const auto vocab = pivot_tokens();
  for (const auto& s : gen_base_corpus(13, 100)) {
    const Tensor f = fs.synth(s, "L0", 99);
    Sentence decoded;
    for (std::size_t t = 0; t < f.rows(); ++t) {
      // Brute-force nearest neighbour, independent of nearest_token.
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < vocab.size(); ++v) {
        const auto p = fs.prototype("L0", vocab[v]);
        double d = 0.0;
        for (std::size_t j = 0; j < 16; ++j) d += (f.at(t, j) - p[j]) * (f.at(t, j) - p[j]);
        if (d < best_d) {
          best_d = d;
          best = v;
        }
      }
      CHECK(fs.nearest_token(f.data().subspan(t * 16, 16), "L0", vocab) == vocab[best]);
      if (decoded.empty() || decoded.back() != vocab[best]) decoded.push_back(vocab[best]);
    }
    CHECK(decoded == s);
  }
}

TEST_CASE("units: definitional example and normalization") {
  Tensor c(Shape{6, 2});
  for (std::size_t k = 0; k < 6; ++k) {
    c.at(k, 0) = double(k);
    c.at(k, 1) = -double(k);
  }
  UnitCodebook cb(c);
  Tensor f(Shape{3, 2}, std::vector<double>{3, -3, 3, -3, 5, -5});
  const auto units = extract_units(f, cb);
  CHECK(units == std::vector<int>{3, 3, 5});
  CHECK(normalize_units(units) == std::vector<int>{3, 5});
  CHECK(is_normalized(normalize_units(units)));
  CHECK_FALSE(is_normalized(units));
  CHECK(normalize_units(normalize_units(units)) == normalize_units(units));
  CHECK_THROWS_AS(extract_units(Tensor(Shape{2, 3}), cb), ShapeError);
  // Equidistant between centroids 1 and 2: lowest index wins.
  const std::vector<double> mid{1.5, -1.5};
  CHECK(cb.assign(mid) == 1);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(0, 7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> seq(1 + trial % 20);
    for (int& x : seq) x = u(rng);
    const auto n = normalize_units(seq);
    CHECK(!n.empty());
    CHECK(is_normalized(n));
    CHECK(n.front() == seq.front());
    CHECK(n.back() == seq.back());
  }
}

TEST_CASE("unit assignment matches exhaustive nearest-centroid search") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor c(Shape{8, 16});
  for (double& v : c.data()) v = n(rng);
  UnitCodebook cb(c);
  Tensor f(Shape{500, 16});
  for (double& v : f.data()) v = n(rng);
  const auto units = extract_units(f, cb);
  for (std::size_t t = 0; t < 500; ++t) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 8; ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < 16; ++j) d += (f.at(t, j) - c.at(k, j)) * (f.at(t, j) - c.at(k, j));
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    CHECK(units[t] == best);
  }
}

TEST_CASE("k-means on pivot frames finds one centroid per token") {
  FrameSynthesizer fs({}, 3);
  const auto corpus = gen_base_corpus(40, 600);
  std::vector<double> all;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Tensor f = fs.synth(corpus[i], "L0", i);
    all.insert(all.end(), f.values().begin(), f.values().end());
    rows += f.rows();
  }
  const Tensor frames(Shape{rows, 16}, std::move(all));
  const UnitCodebook cb = UnitCodebook::fit(frames, 64, 20, 7);
  CHECK(cb.size() == 64);
  const UnitCodebook again = UnitCodebook::fit(frames, 64, 20, 7);
  CHECK(again.centroids().values() == cb.centroids().values());
  std::set<int> hit;
  for (const auto& tok : pivot_tokens()) hit.insert(cb.assign(fs.prototype("L0", tok)));
  CHECK(hit.size() == 64);
  const UnitCodebook back = UnitCodebook::from_json(cb.to_json());
  CHECK(back.centroids().values() == cb.centroids().values());
  // Units of a sentence, once normalized, have one entry per token.
  const Tensor f = fs.synth(corpus[0], "L0", 1234);
  CHECK(normalize_units(extract_units(f, cb)).size() == corpus[0].size());
}

TEST_CASE("corpus save/load round trip") {
  const LanguageSpec l1 = l1_spec();
  FrameSynthesizer fs({}, 5);
  ParallelCorpus c;
  c.split = Split::kValid;
  c.languages = {"L0", "L1"};
  const auto base = gen_base_corpus(2, 30);
  for (std::size_t i = 0; i < base.size(); ++i) {
    Record r;
    r.id = "v" + std::to_string(i);
    r.text["L0"] = base[i];
    r.text["L1"] = l1.apply(base[i]);
    if (i % 3 == 0) {
      r.frames["L1"] = fs.synth(r.text["L1"], "L1", i);
      r.units["L0"] = {4, 9, 4, 1};
    }
    c.records.push_back(std::move(r));
  }
  const auto path = temp_path("rt.jsonl");
  save_corpus(path, c);
  const std::vector<std::string> langs{"L0", "L1"};
  const ParallelCorpus back = load_corpus(path, langs);
  CHECK(back.split == Split::kValid);
  REQUIRE(back.records.size() == c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    CHECK(back.records[i].id == c.records[i].id);
    CHECK(back.records[i].text == c.records[i].text);
    CHECK(back.records[i].units == c.records[i].units);
    REQUIRE(back.records[i].frames.size() == c.records[i].frames.size());
    for (const auto& [lang, t] : c.records[i].frames) {
      const Tensor& u = back.records[i].frames.at(lang);
      REQUIRE(u.shape() == t.shape());
      for (std::size_t j = 0; j < t.size(); ++j) CHECK(std::abs(u[j] - t[j]) <= 1e-9);
    }
  }
  CHECK(corpus_hash(back) == corpus_hash(c));
  const auto path2 = temp_path("rt2.jsonl");
  save_corpus(path2, back);
  std::ifstream a(path), b(path2);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(&back.at("v3") == &back.records[3]);
  CHECK_THROWS_AS(back.at("nope"), CorpusError);
}

TEST_CASE("corpus load errors name the line and the record") {
  const auto path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"a","split":"train","text":{"L0":["d0"],"L1":["x"]}})" << '\n';
    out << R"({"id":"b","split":"train","text":{"L0":["d0"]}})" << '\n';
  }
  const std::vector<std::string> langs{"L0", "L1"};
  try {
    load_corpus(path, langs);
    FAIL("expected an error");
  } catch (const CorpusError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find("'b'") != std::string::npos);
    CHECK(msg.find("L1") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << R"({"id":"a","split":"train","text":{"L0":["d0"]}})" << '\n' << "{not json" << '\n';
  }
  const std::vector<std::string> l0{"L0"};
  try {
    load_corpus(path, l0);
    FAIL("expected an error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(load_corpus(temp_path("missing.jsonl"), l0), CorpusError);
}

TEST_CASE("splits are disjoint by id") {
  ParallelCorpus train, test;
  train.split = Split::kTrain;
  test.split = Split::kTest;
  train.records.push_back({"x1", {{"L0", {"d0"}}}, {}, {}});
  test.records.push_back({"y1", {{"L0", {"d0"}}}, {}, {}});
  const ParallelCorpus* ok[] = {&train, &test};
  CHECK_NOTHROW(check_disjoint(ok));
  test.records.push_back({"x1", {{"L0", {"d1"}}}, {}, {}});
  CHECK_THROWS_WITH_AS(check_disjoint(ok), doctest::Contains("x1"), CorpusError);
}

TEST_CASE("10k-record corpus loads in under 2 s") {
  const LanguageSpec l1 = l1_spec();
  ParallelCorpus c;
  c.languages = {"L0", "L1"};
  const auto base = gen_base_corpus(100, 10000);
  for (std::size_t i = 0; i < base.size(); ++i) {
    c.records.push_back({"t" + std::to_string(i), {{"L0", base[i]}, {"L1", l1.apply(base[i])}}, {}, {}});
  }
  const auto path = temp_path("big.jsonl");
  save_corpus(path, c);
  const std::vector<std::string> langs{"L0", "L1"};
  const auto t0 = std::chrono::steady_clock::now();
  const ParallelCorpus back = load_corpus(path, langs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("10k records loaded in " << secs << " s");
  CHECK(back.records.size() == 10000);
  CHECK(secs < 2.0);
}
