#include <cmath>
#include <stdexcept>
#include <string>

#include "embedpipe/models.hpp"
#include "embedpipe/vocab.hpp"

namespace embedpipe {

std::string_view to_string(Pooling p) { return p == Pooling::kMax ? "max" : "bos"; }

Pooling parse_pooling(std::string_view s) {
  if (s == "max" || s == "MAX") return Pooling::kMax;
  if (s == "bos" || s == "BOS") return Pooling::kBos;
  throw std::invalid_argument("unknown pooling '" + std::string(s) + "' (expected max|bos)");
}

std::string_view to_string(InputKind k) { return k == InputKind::kTokens ? "tokens" : "frames"; }

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

}  // namespace

Encoder::Encoder(InputKind kind, std::size_t input_dim, ModelDims dims, Pooling pooling)
    : kind_(kind), input_dim_(input_dim), dims_(dims), pooling_(pooling) {
  if (input_dim == 0 || dims.hidden == 0 || dims.embed == 0) {
    throw std::invalid_argument("encoder: dimensions must be positive");
  }
}

Encoder Encoder::for_tokens(std::size_t vocab_size, ModelDims dims, Pooling pooling, std::uint64_t seed) {
  Encoder e(InputKind::kTokens, vocab_size, dims, pooling);
  const std::size_t h = dims.hidden;
  init_param(e.params_, "embed", Shape{vocab_size, h}, seed, 0.5, true);
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = dir;
    init_param(e.params_, p + ".wx", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
    init_param(e.params_, p + ".wh", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
    init_param(e.params_, p + ".bx", Shape{3 * h}, seed, 0.0);
    init_param(e.params_, p + ".bh", Shape{3 * h}, seed, 0.0);
  }
  init_param(e.params_, "ff.w", Shape{2 * h, h}, seed, std::sqrt(6.0 / double(2 * h + h)));
  init_param(e.params_, "ff.b", Shape{h}, seed, 0.0);
  init_param(e.params_, "out.w", Shape{h, dims.embed}, seed, std::sqrt(6.0 / double(h + dims.embed)));
  init_param(e.params_, "out.b", Shape{dims.embed}, seed, 0.0);
  e.params_.set_trainable(true);
  return e;
}

Encoder Encoder::for_frames(std::size_t frame_dim, ModelDims dims, std::uint64_t seed) {
  Encoder e(InputKind::kFrames, frame_dim, dims, Pooling::kMax);
  const std::size_t h = dims.hidden;
  init_param(e.params_, "in.w", Shape{frame_dim, h}, seed, std::sqrt(6.0 / double(frame_dim + h)));
  init_param(e.params_, "in.b", Shape{h}, seed, 0.0);
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = dir;
    init_param(e.params_, p + ".wx", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
    init_param(e.params_, p + ".wh", Shape{h, 3 * h}, seed, 1.0 / std::sqrt(double(h)));
    init_param(e.params_, p + ".bx", Shape{3 * h}, seed, 0.0);
    init_param(e.params_, p + ".bh", Shape{3 * h}, seed, 0.0);
  }
  init_param(e.params_, "ff.w", Shape{2 * h, h}, seed, std::sqrt(6.0 / double(2 * h + h)));
  init_param(e.params_, "ff.b", Shape{h}, seed, 0.0);
  init_param(e.params_, "out.w", Shape{h, dims.embed}, seed, std::sqrt(6.0 / double(h + dims.embed)));
  init_param(e.params_, "out.b", Shape{dims.embed}, seed, 0.0);
  e.params_.set_trainable(true);
  return e;
}

std::size_t Encoder::expected_parameter_count(InputKind kind, std::size_t input_dim, ModelDims dims) {
  const std::size_t h = dims.hidden, d = dims.embed;
  const std::size_t input = kind == InputKind::kTokens ? input_dim * h : input_dim * h + h;
  const std::size_t gru = 2 * (2 * h * 3 * h + 2 * 3 * h);
  return input + gru + (2 * h * h + h) + (h * d + d);
}

EncoderOutput Encoder::trunk(Graph& g, Var x, std::span<const std::size_t> lengths, std::size_t steps,
                             bool track) const {
  const std::size_t batch = lengths.size();
  const std::size_t h = dims_.hidden;
  auto p = [&](std::string_view name) { return ParameterStore::bind(g, params_.get(name), track); };

  std::vector<std::vector<std::uint8_t>> masks(steps, std::vector<std::uint8_t>(batch, 0));
  std::vector<bool> full(steps, true);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      masks[t][b] = t < lengths[b];
      if (!masks[t][b]) full[t] = false;
    }
  }

  Var dirs[2];
  for (int d = 0; d < 2; ++d) {
    const std::string pre = d == 0 ? "fwd" : "bwd";
    Var gx = add(matmul(x, p(pre + ".wx")), p(pre + ".bx"));
    Var wh = p(pre + ".wh");
    Var bh = p(pre + ".bh");
    Var state = g.constant(Tensor(Shape{batch, h}));
    std::vector<Var> outs(steps);
    for (std::size_t i = 0; i < steps; ++i) {
      const std::size_t t = d == 0 ? i : steps - 1 - i;
      Var next = gru_cell(slice_rows(gx, t * batch, batch), add(matmul(state, wh), bh), state);
      state = full[t] ? next : select_rows(next, state, masks[t]);
      outs[t] = state;
    }
    dirs[d] = steps == 1 ? outs[0] : concat_rows(outs);
  }
  Var both = concat_cols(dirs);
  Var hidden = relu(add(matmul(both, p("ff.w")), p("ff.b")));
  EncoderOutput out;
  out.states = add(matmul(hidden, p("out.w")), p("out.b"));
  out.steps = steps;
  out.batch = batch;
  if (pooling_ == Pooling::kMax) {
    out.pooled = temporal_max_pool(out.states, batch, lengths);
  } else {
    // Combined (forward and backward) output at position 0.
    out.pooled = slice_rows(out.states, 0, batch);
  }
  return out;
}

EncoderOutput Encoder::forward(Graph& g, std::span<const std::vector<int>> seqs, bool track) const {
  if (kind_ != InputKind::kTokens) throw std::invalid_argument("encoder: frame encoder given token input");
  if (seqs.empty()) throw std::invalid_argument("encoder: empty batch");
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) {
    if (s.empty()) throw std::invalid_argument("encoder: empty sequence");
    for (int id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= input_dim_) {
        throw std::out_of_range("encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(input_dim_));
      }
    }
    lengths.push_back(s.size());
    steps = std::max(steps, s.size());
  }
  const std::size_t batch = seqs.size();
  std::vector<int> ids(steps * batch, Vocabulary::kPad);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seqs[b].size(); ++t) ids[t * batch + b] = seqs[b][t];
  }
  Var x = embedding(ParameterStore::bind(g, params_.get("embed"), track), ids);
  return trunk(g, x, lengths, steps, track);
}

EncoderOutput Encoder::forward(Graph& g, std::span<const Tensor> frames, bool track) const {
  if (kind_ != InputKind::kFrames) throw std::invalid_argument("encoder: token encoder given frame input");
  if (frames.empty()) throw std::invalid_argument("encoder: empty batch");
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
  for (const Tensor& f : frames) {
    if (f.shape().rank() != 2 || f.cols() != input_dim_) {
      throw ShapeError("encode_frames", {f.shape()}, "expected [T," + std::to_string(input_dim_) + "] frames");
    }
    lengths.push_back(f.rows());
    steps = std::max(steps, f.rows());
  }
  const std::size_t batch = frames.size();
  Tensor packed(Shape{steps * batch, input_dim_});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < frames[b].rows(); ++t) {
      for (std::size_t j = 0; j < input_dim_; ++j) packed.at(t * batch + b, j) = frames[b].at(t, j);
    }
  }
  auto p = [&](std::string_view name) { return ParameterStore::bind(g, params_.get(name), track); };
  Var x = tanh(add(matmul(g.constant(std::move(packed)), p("in.w")), p("in.b")));
  return trunk(g, x, lengths, steps, track);
}

Tensor Encoder::embed(std::span<const std::vector<int>> seqs) const {
  Graph g;
  return forward(g, seqs, false).pooled.value();
}

Tensor Encoder::embed(std::span<const Tensor> frames) const {
  Graph g;
  return forward(g, frames, false).pooled.value();
}

Encoded encode(std::span<const int> tokens, const Encoder& encoder) {
  Graph g;
  std::vector<std::vector<int>> batch{std::vector<int>(tokens.begin(), tokens.end())};
  EncoderOutput out = encoder.forward(g, batch, false);
  return {out.states.value(), row(out.pooled.value(), 0)};
}

std::vector<double> encode_frames(const Tensor& frames, const Encoder& encoder) {
  Graph g;
  EncoderOutput out = encoder.forward(g, std::span<const Tensor>(&frames, 1), false);
  return row(out.pooled.value(), 0);
}

std::vector<double> row(const Tensor& m, std::size_t r) {
  const std::size_t c = m.cols();
  auto d = m.data().subspan(r * c, c);
  return {d.begin(), d.end()};
}

Tensor stack_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const std::size_t c = rows[0].size();
  Tensor t(Shape{rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != c) throw ShapeError("stack_rows", {Shape{c}, Shape{rows[r].size()}}, "ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), t.data().begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  return t;
}

}  // namespace embedpipe
