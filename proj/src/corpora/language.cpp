#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include "embedpipe/corpora.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

namespace {

const std::vector<std::string>& word_class(int c) {
  static const std::vector<std::vector<std::string>> classes = [] {
    const std::pair<const char*, int> spec[] = {{"d", 4}, {"a", 12}, {"n", 20}, {"v", 14}, {"p", 8}, {"c", 6}};
    std::vector<std::vector<std::string>> out;
    for (auto [prefix, count] : spec) {
      std::vector<std::string> words;
      for (int i = 0; i < count; ++i) words.push_back(prefix + std::to_string(i));
      out.push_back(std::move(words));
    }
    return out;
  }();
  return classes[static_cast<std::size_t>(c)];
}

enum WordClass { kDet, kAdj, kNoun, kVerb, kPrep, kConj };

template <class R>
const std::string& pick(R& rng, WordClass c) {
  const auto& words = word_class(c);
  std::uniform_int_distribution<std::size_t> d(0, words.size() - 1);
  return words[d(rng)];
}

template <class R>
void noun_phrase(R& rng, const GrammarConfig& g, Sentence& out) {
  std::bernoulli_distribution adj(g.adjective);
  out.push_back(pick(rng, kDet));
  if (adj(rng)) out.push_back(pick(rng, kAdj));
  out.push_back(pick(rng, kNoun));
}

template <class R>
Sentence clause(R& rng, const GrammarConfig& g) {
  std::bernoulli_distribution obj(g.object), pp(g.prepositional);
  Sentence s;
  noun_phrase(rng, g, s);
  s.push_back(pick(rng, kVerb));
  if (obj(rng)) noun_phrase(rng, g, s);
  if (pp(rng)) {
    s.push_back(pick(rng, kPrep));
    noun_phrase(rng, g, s);
  }
  return s;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::vector<std::string> pivot_tokens() {
  std::vector<std::string> out;
  for (int c = kDet; c <= kConj; ++c) {
    const auto& w = word_class(c);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

std::vector<Sentence> gen_base_corpus(std::uint64_t seed, std::size_t n, const GrammarConfig& g) {
  if (n == 0) throw std::invalid_argument("gen_base_corpus: n must be at least 1");
  if (g.max_len < 3) throw std::invalid_argument("gen_base_corpus: max_len below the shortest clause");
  std::vector<Sentence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SplitMix64 rng(derive_seed(seed, 0x6772616d, i));
    std::bernoulli_distribution more(g.clause_continue);
    Sentence s;
    do {
      s = clause(rng, g);
    } while (s.size() > g.max_len);
    while (more(rng)) {
      Sentence next = clause(rng, g);
      if (s.size() + 1 + next.size() > g.max_len) break;
      s.push_back(pick(rng, kConj));
      s.insert(s.end(), next.begin(), next.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string_view to_string(TransformKind k) {
  switch (k) {
    case TransformKind::kPermute: return "permute";
    case TransformKind::kReverseWindow: return "reverse_window";
    case TransformKind::kAffix: return "affix";
    case TransformKind::kSplit: return "split";
  }
  return "permute";
}

TransformKind parse_transform(std::string_view s) {
  if (s == "permute") return TransformKind::kPermute;
  if (s == "reverse_window") return TransformKind::kReverseWindow;
  if (s == "affix") return TransformKind::kAffix;
  if (s == "split") return TransformKind::kSplit;
  throw std::invalid_argument("unknown transform '" + std::string(s) + "'");
}

LanguageSpec::LanguageSpec(std::string id, std::vector<TransformStep> steps, std::uint64_t seed)
    : id_(std::move(id)), steps_(std::move(steps)), seed_(seed), tokens_(pivot_tokens()) {
  if (id_.empty()) throw std::invalid_argument("language id must not be empty");
  const std::string prefix = lower(id_);
  for (std::size_t si = 0; si < steps_.size(); ++si) {
    const TransformStep& step = steps_[si];
    Table t;
    Rng rng = make_rng(seed_, si + 1);
    const std::string tag = prefix + "." + std::to_string(si);
    switch (step.kind) {
      case TransformKind::kPermute: {
        std::vector<std::size_t> perm(tokens_.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::string> renamed(tokens_.size());
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
          renamed[perm[i]] = tag + "w" + std::to_string(perm[i]);
          t.forward[tokens_[i]] = renamed[perm[i]];
          t.backward[renamed[perm[i]]] = tokens_[i];
        }
        tokens_ = std::move(renamed);
        break;
      }
      case TransformKind::kReverseWindow:
        if (step.window == 0) throw std::invalid_argument(id_ + ": reverse_window needs window >= 1");
        break;
      case TransformKind::kAffix:
      case TransformKind::kSplit: {
        if (!(step.fraction > 0.0 && step.fraction <= 1.0)) {
          throw std::invalid_argument(id_ + ": " + std::string(to_string(step.kind)) + " fraction must be in (0, 1]");
        }
        std::vector<std::string> pool = tokens_;
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(std::max<std::size_t>(1, static_cast<std::size_t>(step.fraction * double(tokens_.size()) + 0.5)));
        std::set<std::string> existing(tokens_.begin(), tokens_.end());
        if (step.kind == TransformKind::kAffix) {
          t.marker = tag + "m";
          if (existing.count(t.marker)) throw std::invalid_argument(id_ + ": affix marker collides with a token");
          for (const auto& w : pool) t.forward[w] = w;
          tokens_.push_back(t.marker);
        } else {
          const std::size_t n_suffix = 3;
          std::vector<std::string> suffixes;
          for (std::size_t k = 0; k < n_suffix; ++k) suffixes.push_back(tag + "s" + std::to_string(k));
          std::uniform_int_distribution<std::size_t> which(0, n_suffix - 1);
          std::sort(pool.begin(), pool.end());
          for (const auto& w : pool) {
            const std::string stem = w + "+";
            if (existing.count(stem)) throw std::invalid_argument(id_ + ": split stem collides with a token");
            t.forward[w] = stem;
            t.backward[stem] = w;
            t.suffix[w] = suffixes[which(rng)];
          }
          std::vector<std::string> next;
          for (const auto& w : tokens_) {
            if (!t.forward.count(w)) next.push_back(w);
          }
          for (const auto& w : pool) next.push_back(t.forward[w]);
          next.insert(next.end(), suffixes.begin(), suffixes.end());
          tokens_ = std::move(next);
        }
        break;
      }
    }
    tables_.push_back(std::move(t));
  }
}

Sentence LanguageSpec::apply(const Sentence& pivot) const {
  Sentence s = pivot;
  for (std::size_t si = 0; si < steps_.size(); ++si) {
    const TransformStep& step = steps_[si];
    const Table& t = tables_[si];
    Sentence next;
    next.reserve(s.size() * 2);
    switch (step.kind) {
      case TransformKind::kPermute:
        for (const auto& w : s) {
          auto it = t.forward.find(w);
          if (it == t.forward.end()) throw std::invalid_argument(id_ + ": token '" + w + "' outside the pivot vocabulary");
          next.push_back(it->second);
        }
        break;
      case TransformKind::kReverseWindow:
        next = s;
        for (std::size_t b = 0; b < next.size(); b += step.window) {
          std::reverse(next.begin() + static_cast<std::ptrdiff_t>(b),
                       next.begin() + static_cast<std::ptrdiff_t>(std::min(next.size(), b + step.window)));
        }
        break;
      case TransformKind::kAffix:
        for (const auto& w : s) {
          next.push_back(w);
          if (t.forward.count(w)) next.push_back(t.marker);
        }
        break;
      case TransformKind::kSplit:
        for (const auto& w : s) {
          auto it = t.forward.find(w);
          if (it == t.forward.end()) {
            next.push_back(w);
          } else {
            next.push_back(it->second);
            next.push_back(t.suffix.at(w));
          }
        }
        break;
    }
    s = std::move(next);
  }
  return s;
}

Sentence LanguageSpec::invert(const Sentence& sentence) const {
  Sentence s = sentence;
  for (std::size_t si = steps_.size(); si-- > 0;) {
    const TransformStep& step = steps_[si];
    const Table& t = tables_[si];
    Sentence prev;
    prev.reserve(s.size());
    switch (step.kind) {
      case TransformKind::kPermute:
        for (const auto& w : s) {
          auto it = t.backward.find(w);
          if (it == t.backward.end()) throw std::invalid_argument(id_ + ": cannot invert token '" + w + "'");
          prev.push_back(it->second);
        }
        break;
      case TransformKind::kReverseWindow:
        prev = s;
        for (std::size_t b = 0; b < prev.size(); b += step.window) {
          std::reverse(prev.begin() + static_cast<std::ptrdiff_t>(b),
                       prev.begin() + static_cast<std::ptrdiff_t>(std::min(prev.size(), b + step.window)));
        }
        break;
      case TransformKind::kAffix:
        for (const auto& w : s) {
          if (w != t.marker) prev.push_back(w);
        }
        break;
      case TransformKind::kSplit:
        for (std::size_t i = 0; i < s.size(); ++i) {
          auto it = t.backward.find(s[i]);
          if (it == t.backward.end()) {
            prev.push_back(s[i]);
            continue;
          }
          if (i + 1 >= s.size() || s[i + 1] != t.suffix.at(it->second)) {
            throw std::invalid_argument(id_ + ": stem '" + s[i] + "' without its suffix");
          }
          prev.push_back(it->second);
          ++i;
        }
        break;
    }
    s = std::move(prev);
  }
  return s;
}

nlohmann::json LanguageSpec::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const TransformStep& s : steps_) {
    nlohmann::json j{{"kind", std::string(to_string(s.kind))}};
    if (s.kind == TransformKind::kReverseWindow) j["window"] = s.window;
    if (s.kind == TransformKind::kAffix || s.kind == TransformKind::kSplit) j["fraction"] = s.fraction;
    steps.push_back(j);
  }
  return {{"id", id_}, {"seed", seed_}, {"steps", steps}};
}

LanguageSpec LanguageSpec::from_json(const nlohmann::json& j) {
  std::vector<TransformStep> steps;
  for (const auto& s : j.at("steps")) {
    TransformStep step;
    step.kind = parse_transform(s.at("kind").get<std::string>());
    if (step.kind == TransformKind::kReverseWindow) step.window = s.at("window").get<std::size_t>();
    if (step.kind == TransformKind::kAffix || step.kind == TransformKind::kSplit) {
      step.fraction = s.at("fraction").get<double>();
    }
    steps.push_back(step);
  }
  return LanguageSpec(j.at("id").get<std::string>(), std::move(steps), j.value("seed", std::uint64_t{0}));
}

}  // namespace embedpipe
