#include <fstream>
#include <set>
#include <sstream>

#include "embedpipe/corpora.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

const Record& ParallelCorpus::at(std::string_view id) const {
  for (const Record& r : records) {
    if (r.id == id) return r;
  }
  throw CorpusError("no record with id '" + std::string(id) + "'");
}

std::string record_to_line(const Record& r, Split split) {
  nlohmann::json j;
  j["id"] = r.id;
  j["split"] = std::string(to_string(split));
  j["text"] = r.text;
  if (!r.frames.empty()) {
    nlohmann::json frames = nlohmann::json::object();
    for (const auto& [lang, t] : r.frames) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < t.rows(); ++i) {
        auto row = t.data().subspan(i * t.cols(), t.cols());
        rows.push_back(std::vector<double>(row.begin(), row.end()));
      }
      frames[lang] = std::move(rows);
    }
    j["frames"] = std::move(frames);
  }
  if (!r.units.empty()) j["units"] = r.units;
  return j.dump();
}

void save_corpus(const std::filesystem::path& path, const ParallelCorpus& corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write corpus " + path.string());
  for (const Record& r : corpus.records) out << record_to_line(r, corpus.split) << '\n';
  if (!out) throw CorpusError("failed writing corpus " + path.string());
}

namespace {

Record parse_record(const nlohmann::json& j, std::span<const std::string> languages, Split& split) {
  Record r;
  r.id = j.at("id").get<std::string>();
  split = parse_split(j.at("split").get<std::string>());
  r.text = j.at("text").get<std::map<std::string, Sentence>>();
  for (const auto& lang : languages) {
    if (!r.text.count(lang)) throw CorpusError("record '" + r.id + "' is missing language " + lang);
  }
  if (auto it = j.find("frames"); it != j.end()) {
    for (const auto& [lang, rows] : it->items()) {
      if (rows.empty()) throw CorpusError("record '" + r.id + "' has empty frames for " + lang);
      const std::size_t f = rows[0].size();
      std::vector<double> data;
      data.reserve(rows.size() * f);
      for (const auto& row : rows) {
        if (row.size() != f) throw CorpusError("record '" + r.id + "' has ragged frames for " + lang);
        for (const auto& v : row) data.push_back(v.get<double>());
      }
      r.frames.emplace(lang, Tensor(Shape{rows.size(), f}, std::move(data)));
    }
  }
  if (auto it = j.find("units"); it != j.end()) r.units = it->get<std::map<std::string, std::vector<int>>>();
  return r;
}

}  // namespace

ParallelCorpus load_corpus(const std::filesystem::path& path, std::span<const std::string> languages) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus " + path.string());
  ParallelCorpus corpus;
  corpus.languages.assign(languages.begin(), languages.end());
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    Split split{};
    Record r;
    try {
      r = parse_record(nlohmann::json::parse(line), languages, split);
    } catch (const CorpusError& e) {
      throw CorpusError(where + e.what());
    } catch (const std::exception& e) {
      throw CorpusError(where + "malformed record: " + e.what());
    }
    if (first) {
      corpus.split = split;
      first = false;
    } else if (split != corpus.split) {
      throw CorpusError(where + "record '" + r.id + "' belongs to split " + std::string(to_string(split)));
    }
    if (!seen.insert(r.id).second) throw CorpusError(where + "duplicate id '" + r.id + "'");
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

std::uint64_t corpus_hash(const ParallelCorpus& corpus) {
  Fnv1a h;
  for (const Record& r : corpus.records) {
    h.update(record_to_line(r, corpus.split));
    h.update("\n");
  }
  return h.value();
}

void check_disjoint(std::span<const ParallelCorpus* const> corpora) {
  std::map<std::string, Split> owner;
  for (const ParallelCorpus* c : corpora) {
    for (const Record& r : c->records) {
      auto [it, fresh] = owner.emplace(r.id, c->split);
      if (!fresh) {
        throw CorpusError("id '" + r.id + "' appears in both " + std::string(to_string(it->second)) + " and " +
                          std::string(to_string(c->split)));
      }
    }
  }
}

}  // namespace embedpipe
