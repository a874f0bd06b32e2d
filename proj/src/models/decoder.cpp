#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "embedpipe/models.hpp"
#include "embedpipe/vocab.hpp"

namespace embedpipe {

namespace {

void init_param(ParameterStore& store, std::string name, Shape shape, std::uint64_t seed, double limit,
                bool normal = false) {
  Rng rng = make_rng(seed, fnv1a64(name));
  Tensor& t = store.add(std::move(name), shape);
  if (limit == 0.0) return;
  if (normal) {
    fill_normal(t, rng, limit);
  } else {
    fill_uniform(t, rng, limit);
  }
}

// Parameters bound once per graph, plus the per-batch context terms.
struct Bound {
  Var embed, wx, wh, bx, bh, out_h, out_b;
  Var ctx_gates;  // [B, 3H]
  Var ctx_out;    // [B, V]
};

Bound bind_all(Graph& g, const ParameterStore& ps, Var embeddings, bool track) {
  auto p = [&](std::string_view name) { return ParameterStore::bind(g, ps.get(name), track); };
  Bound b;
  b.embed = p("embed");
  b.wx = p("gru.wx");
  b.wh = p("gru.wh");
  b.bx = p("gru.bx");
  b.bh = p("gru.bh");
  b.out_h = p("out.wh");
  b.out_b = p("out.b");
  Var ctx = tanh(add(matmul(embeddings, p("att.wv")), p("att.bv")));
  b.ctx_gates = matmul(ctx, p("gru.wc"));
  b.ctx_out = matmul(ctx, p("out.wc"));
  return b;
}

// Highest log-probability among emit-able ids (everything but PAD and BOS);
// ties go to the lowest id.
int best_token(std::span<const double> logp) {
  int best = Vocabulary::kEos;
  for (std::size_t v = Vocabulary::kEos + 1; v < logp.size(); ++v) {
    if (logp[v] > logp[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
  }
  return best;
}

}  // namespace

Decoder::Decoder(std::size_t vocab_size, ModelDims dims) : vocab_size_(vocab_size), dims_(dims) {
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kReserved) || dims.hidden == 0 || dims.embed == 0) {
    throw std::invalid_argument("decoder: vocabulary must hold content tokens and dimensions must be positive");
  }
}

Decoder Decoder::create(std::size_t vocab_size, ModelDims dims, std::uint64_t seed) {
  Decoder dec(vocab_size, dims);
  const std::size_t h = dims.hidden, d = dims.embed, v = vocab_size;
  auto& ps = dec.params_;
  init_param(ps, "embed", Shape{v, h}, seed, 0.5, true);
  init_param(ps, "att.wv", Shape{d, h}, seed, std::sqrt(6.0 / double(d + h)));
  init_param(ps, "att.bv", Shape{h}, seed, 0.0);
  init_param(ps, "gru.wx", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
  init_param(ps, "gru.wc", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
  init_param(ps, "gru.wh", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
  init_param(ps, "gru.bx", Shape{3 * h}, seed, 0.0);
  init_param(ps, "gru.bh", Shape{3 * h}, seed, 0.0);
  init_param(ps, "out.wh", Shape{h, v}, seed, std::sqrt(6.0 / double(h + v)));
  init_param(ps, "out.wc", Shape{h, v}, seed, std::sqrt(6.0 / double(h + v)));
  init_param(ps, "out.b", Shape{v}, seed, 0.0);
  ps.set_trainable(true);
  return dec;
}

std::size_t Decoder::expected_parameter_count(std::size_t vocab_size, ModelDims dims) {
  const std::size_t h = dims.hidden, d = dims.embed, v = vocab_size;
  return v * h + (d * h + h) + 3 * (h * 3 * h) + 2 * 3 * h + 2 * h * v + v;
}

void Decoder::check_embedding_width(std::size_t width) const {
  if (width != dims_.embed) {
    throw ShapeError("decoder", {Shape{width}, Shape{dims_.embed}}, "embedding width differs from decoder D");
  }
}

Var Decoder::logits(Graph& g, Var embeddings, std::span<const std::vector<int>> targets, bool track,
                    std::vector<int>* next_tokens) const {
  const Shape& es = embeddings.shape();
  if (es.rank() != 2 || es[0] != targets.size()) {
    throw ShapeError("decoder", {es, Shape{targets.size()}}, "one embedding row per target expected");
  }
  check_embedding_width(es[1]);
  std::size_t steps = 0;
  for (const auto& t : targets) {
    if (t.size() < 2 || t.front() != Vocabulary::kBos || t.back() != Vocabulary::kEos) {
      throw std::invalid_argument("decoder: target must start with BOS and end with EOS");
    }
    for (int id : t) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) {
        throw std::out_of_range("decoder: target id " + std::to_string(id) + " outside vocabulary");
      }
    }
    steps = std::max(steps, t.size() - 1);
  }
  const std::size_t batch = targets.size();
  std::vector<int> inputs(steps * batch, Vocabulary::kPad);
  std::vector<int> next(steps * batch, Vocabulary::kPad);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t + 1 < targets[b].size(); ++t) {
      inputs[t * batch + b] = targets[b][t];
      next[t * batch + b] = targets[b][t + 1];
    }
  }

  Bound p = bind_all(g, params_, embeddings, track);
  Var gx = add(add(matmul(embedding(p.embed, inputs), p.wx), tile_rows(p.ctx_gates, steps)), p.bx);
  Var state = g.constant(Tensor(Shape{batch, dims_.hidden}));
  std::vector<Var> outs;
  outs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    state = gru_cell(slice_rows(gx, t * batch, batch), add(matmul(state, p.wh), p.bh), state);
    outs.push_back(state);
  }
  Var hs = steps == 1 ? outs[0] : concat_rows(outs);
  if (next_tokens) *next_tokens = std::move(next);
  return add(add(matmul(hs, p.out_h), tile_rows(p.ctx_out, steps)), p.out_b);
}

Var Decoder::loss(Graph& g, Var embeddings, std::span<const std::vector<int>> targets, bool track) const {
  std::vector<int> next;
  Var l = logits(g, embeddings, targets, track, &next);
  return cross_entropy(l, next, Vocabulary::kPad);
}

TeacherForced Decoder::teacher_forced(std::span<const double> embedding, std::span<const int> target) const {
  Graph g;
  Var e = g.constant(Tensor(Shape{1, embedding.size()}, std::vector<double>(embedding.begin(), embedding.end())));
  std::vector<std::vector<int>> batch{std::vector<int>(target.begin(), target.end())};
  std::vector<int> next;
  Var l = logits(g, e, batch, false, &next);
  return {l.value(), cross_entropy(l, next, Vocabulary::kPad).value().item()};
}

std::vector<Decoded> Decoder::greedy(const Tensor& embeddings, std::size_t max_len) const {
  if (max_len == 0) throw std::invalid_argument("decode: max_len must be at least 1");
  if (embeddings.shape().rank() != 2) throw ShapeError("decode_greedy", {embeddings.shape()}, "expected [B,D]");
  check_embedding_width(embeddings.cols());
  const std::size_t batch = embeddings.rows();
  Graph g;
  Bound p = bind_all(g, params_, g.constant(embeddings), false);
  std::vector<Decoded> out(batch);
  std::vector<double> logp_sum(batch, 0.0);
  std::vector<bool> done(batch, false);
  std::vector<int> prev(batch, Vocabulary::kBos);
  Var state = g.constant(Tensor(Shape{batch, dims_.hidden}));
  std::size_t remaining = batch;
  for (std::size_t step = 0; step < max_len && remaining > 0; ++step) {
    Var gx = add(add(matmul(embedding(p.embed, prev), p.wx), p.ctx_gates), p.bx);
    state = gru_cell(gx, add(matmul(state, p.wh), p.bh), state);
    const Tensor& lp = log_softmax(add(add(matmul(state, p.out_h), p.ctx_out), p.out_b)).value();
    for (std::size_t b = 0; b < batch; ++b) {
      if (done[b]) continue;
      auto row_lp = lp.data().subspan(b * vocab_size_, vocab_size_);
      const int tok = best_token(row_lp);
      logp_sum[b] += row_lp[static_cast<std::size_t>(tok)];
      prev[b] = tok;
      if (tok == Vocabulary::kEos) {
        done[b] = true;
        --remaining;
        out[b].score = logp_sum[b] / static_cast<double>(out[b].tokens.size() + 1);
      } else {
        out[b].tokens.push_back(tok);
      }
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (!done[b]) {
      out[b].truncated = true;
      out[b].score = logp_sum[b] / static_cast<double>(out[b].tokens.size());
    }
  }
  return out;
}

Decoded Decoder::greedy(std::span<const double> embedding, std::size_t max_len) const {
  Tensor e(Shape{1, embedding.size()}, std::vector<double>(embedding.begin(), embedding.end()));
  return greedy(e, max_len).front();
}

Decoded Decoder::beam(std::span<const double> emb, std::size_t beam, std::size_t max_len) const {
  if (beam == 0) throw std::invalid_argument("decode: beam must be at least 1");
  Decoded greedy_result = greedy(emb, max_len);
  if (beam == 1) return greedy_result;

  struct Hyp {
    std::vector<int> tokens;
    double logp = 0.0;
  };
  Graph g;
  Tensor e(Shape{1, emb.size()}, std::vector<double>(emb.begin(), emb.end()));
  Bound p = bind_all(g, params_, g.constant(std::move(e)), false);
  std::vector<Hyp> live{Hyp{}};
  Var state = g.constant(Tensor(Shape{1, dims_.hidden}));
  std::vector<Decoded> finished;

  struct Cand {
    double total;
    std::size_t hyp;
    int token;
  };
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    const std::size_t n = live.size();
    std::vector<int> prev(n);
    for (std::size_t i = 0; i < n; ++i) prev[i] = live[i].tokens.empty() ? Vocabulary::kBos : live[i].tokens.back();
    Var gx = add(add(matmul(embedding(p.embed, prev), p.wx), tile_rows(p.ctx_gates, n)), p.bx);
    state = gru_cell(gx, add(matmul(state, p.wh), p.bh), state);
    const Tensor& lp = log_softmax(add(add(matmul(state, p.out_h), tile_rows(p.ctx_out, n)), p.out_b)).value();

    std::vector<Cand> cands;
    cands.reserve(n * vocab_size_);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t v = Vocabulary::kEos; v < vocab_size_; ++v) {
        cands.push_back({live[i].logp + lp.at(i, v), i, static_cast<int>(v)});
      }
    }
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.total != b.total) return a.total > b.total;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hyp> next_live;
    std::vector<std::size_t> parents;
    for (std::size_t c = 0; c < keep; ++c) {
      const Cand& cd = cands[c];
      const Hyp& h = live[cd.hyp];
      if (cd.token == Vocabulary::kEos) {
        finished.push_back({h.tokens, false, cd.total / static_cast<double>(h.tokens.size() + 1)});
        continue;
      }
      Hyp nh{h.tokens, cd.total};
      nh.tokens.push_back(cd.token);
      if (step + 1 == max_len) {
        finished.push_back({nh.tokens, true, nh.logp / static_cast<double>(nh.tokens.size())});
        continue;
      }
      next_live.push_back(std::move(nh));
      parents.push_back(cd.hyp);
    }
    if (next_live.empty()) break;
    // Reorder hidden states to follow the surviving hypotheses.
    std::vector<Var> picked;
    for (std::size_t r : parents) picked.push_back(slice_rows(state, r, 1));
    state = picked.size() == 1 ? picked[0] : concat_rows(picked);
    live = std::move(next_live);
  }

  Decoded best = greedy_result;
  for (const Decoded& d : finished) {
    if (d.score > best.score) best = d;
  }
  return best;
}

double Decoder::score(std::span<const double> embedding, std::span<const int> tokens, bool with_eos) const {
  std::vector<int> target = with_markers(tokens);
  TeacherForced tf = teacher_forced(embedding, target);
  const std::size_t count = tokens.size() + (with_eos ? 1 : 0);
  if (count == 0) return -std::numeric_limits<double>::infinity();
  double total = 0.0;
  Graph g;
  const Tensor& lp = log_softmax(g.constant(tf.logits)).value();
  for (std::size_t t = 0; t < count; ++t) total += lp.at(t, static_cast<std::size_t>(target[t + 1]));
  return total / static_cast<double>(count);
}

}  // namespace embedpipe
