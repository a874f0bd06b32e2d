#include "embedpipe/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>

#include "embedpipe/corpora.hpp"
#include "embedpipe/graph.hpp"
#include "embedpipe/optim.hpp"
#include "embedpipe/util.hpp"
#include "embedpipe/vocab.hpp"

namespace embedpipe {

void TrainConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("train config: ") + name + " must be positive");
  };
  positive("epochs", double(epochs));
  positive("batch_size", double(batch_size));
  positive("lr", lr);
  positive("clip_norm", clip_norm);
  positive("patience", double(patience));
  positive("validate_every", double(validate_every));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_size", batch_size},         {"lr", lr},   {"clip_norm", clip_norm},
          {"patience", patience}, {"validate_every", validate_every}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.patience = j.value("patience", c.patience);
  c.validate_every = j.value("validate_every", c.validate_every);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

FreezeGuard::FreezeGuard(std::string name, const ParameterStore& params) : name_(std::move(name)), params_(&params) {
  for (const auto& e : params.entries()) bytes_.push_back(e.tensor.values());
}

void FreezeGuard::verify() const {
  const auto& entries = params_->entries();
  if (entries.size() != bytes_.size()) throw FreezeViolation(name_ + ": parameter list changed");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].tensor.values() != bytes_[i]) {
      throw FreezeViolation(name_ + ": frozen parameter '" + entries[i].name + "' was modified");
    }
  }
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "step,split,loss,metric\n";
  for (const CurvePoint& p : curve) out << p.step << ',' << p.split << ',' << p.loss << ',' << p.metric << '\n';
}

nlohmann::json TrainingLog::summary() const {
  return {{"initial_valid", initial_valid}, {"best_valid", best_valid}, {"best_metric", best_metric},
          {"best_epoch", best_epoch},       {"epochs_run", epochs_run}, {"steps", steps},
          {"failed", failed},               {"data_flow", data_flow},   {"frozen_checked", frozen_checked}};
}

namespace {

using Batches = std::vector<std::vector<std::size_t>>;

/// Shuffles, sorts windows of 8 batches by length to limit padding, then
/// shuffles the batch order.
Batches make_batches(const std::vector<std::size_t>& lengths, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(lengths.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t window = batch * 8;
  for (std::size_t b = 0; b < idx.size(); b += window) {
    auto first = idx.begin() + static_cast<std::ptrdiff_t>(b);
    auto last = idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + window));
    std::stable_sort(first, last, [&](std::size_t x, std::size_t y) { return lengths[x] < lengths[y]; });
  }
  Batches out;
  for (std::size_t b = 0; b < idx.size(); b += batch) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + batch)));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Endless stream of batches over one dataset, reshuffled on every pass.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> lengths, std::size_t batch, std::uint64_t seed)
      : lengths_(std::move(lengths)), batch_(batch), seed_(seed) {}
  const std::vector<std::size_t>& next() {
    if (pos_ == current_.size()) {
      Rng rng = make_rng(seed_, pass_++);
      current_ = make_batches(lengths_, batch_, rng);
      pos_ = 0;
    }
    return current_[pos_++];
  }
  std::size_t batches_per_pass() const { return (lengths_.size() + batch_ - 1) / batch_; }

 private:
  std::vector<std::size_t> lengths_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  Batches current_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> seq_lengths(const Sequences& s) {
  std::vector<std::size_t> out;
  for (const auto& x : s) out.push_back(x.size());
  return out;
}

std::vector<std::size_t> frame_lengths(const std::vector<Tensor>& f) {
  std::vector<std::size_t> out;
  for (const auto& x : f) out.push_back(x.rows());
  return out;
}

template <class T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  const std::size_t d = m.cols();
  Tensor out(Shape{idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_aligned(std::size_t a, std::size_t b, const std::string& what) {
  require(a == b, what + ": " + std::to_string(a) + " vs " + std::to_string(b) + " items");
}

std::vector<Tensor*> trainable(ParameterStore& p) {
  p.set_trainable(true);
  return p.tensors();
}

struct Snapshot {
  std::vector<std::vector<double>> values;
  explicit Snapshot(const std::vector<Tensor*>& params) {
    for (const Tensor* t : params) values.push_back(t->values());
  }
  void restore(const std::vector<Tensor*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) std::copy(values[i].begin(), values[i].end(), params[i]->data().begin());
  }
};

struct ValidResult {
  double loss = 0.0;
  double metric = 0.0;
};

using StepFn = std::function<Var(Graph&, std::size_t step)>;
using ValidFn = std::function<ValidResult()>;

/// Shared optimisation loop: Adam with global-norm clipping, validation
/// every `validate_every` epochs, early stopping after `patience`
/// validations without a strict improvement, restore of the best
/// parameters, and float32 rounding of the result.
void run_training(std::vector<Tensor*> params, std::size_t steps_per_epoch, const StepFn& step, const ValidFn& valid,
                  const TrainConfig& cfg, TrainingLog& log) {
  cfg.validate();
  OptimizerState opt(AdamConfig{cfg.lr}, params);
  ValidResult v0 = valid();
  log.initial_valid = v0.loss;
  log.best_valid = v0.loss;
  log.best_metric = v0.metric;
  log.curve.push_back({0, "valid", v0.loss, v0.metric});
  Snapshot best(params);
  std::size_t bad = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      zero_grads(params);
      Graph g;
      Var loss = step(g, log.steps);
      total += g.value(loss).item();
      g.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam_step(params, opt);
      ++log.steps;
    }
    log.epochs_run = epoch;
    log.curve.push_back({log.steps, "train", total / double(steps_per_epoch), 0.0});
    if (epoch % cfg.validate_every != 0 && epoch != cfg.epochs) continue;
    ValidResult v = valid();
    log.curve.push_back({log.steps, "valid", v.loss, v.metric});
    if (v.loss < log.best_valid) {
      log.best_valid = v.loss;
      log.best_metric = v.metric;
      log.best_epoch = epoch;
      best = Snapshot(params);
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  best.restore(params);
  for (Tensor* t : params) {
    t->drop_grad();
    for (double& x : t->data()) x = static_cast<double>(static_cast<float>(x));
  }
  log.failed = !(log.best_valid < log.initial_valid);
}

/// Token-weighted mean cross-entropy and next-token accuracy of a decoder.
ValidResult decoder_eval(const Decoder& decoder, const Tensor& embeddings, const Sequences& targets,
                         std::size_t batch) {
  double nll = 0.0;
  std::size_t correct = 0, count = 0;
  for (std::size_t b = 0; b < targets.size(); b += batch) {
    const std::size_t n = std::min(batch, targets.size() - b);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), b);
    Graph g;
    std::vector<int> next;
    const auto tgt = gather(targets, idx);
    Var lg = decoder.logits(g, g.constant(gather_rows(embeddings, idx)), tgt, false, &next);
    const Tensor& l = g.value(lg);
    const std::size_t v = l.cols();
    for (std::size_t r = 0; r < next.size(); ++r) {
      if (next[r] == Vocabulary::kPad) continue;
      const double* row = l.data().data() + r * v;
      double mx = row[0];
      std::size_t arg = 0;
      for (std::size_t c = 1; c < v; ++c) {
        if (row[c] > mx) {
          mx = row[c];
          arg = c;
        }
      }
      double z = 0.0;
      for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
      nll += mx + std::log(z) - row[next[r]];
      correct += arg == static_cast<std::size_t>(next[r]);
      ++count;
    }
  }
  return {nll / double(count), double(correct) / double(count)};
}

/// Mean distillation loss and mean squared L2 distance between rows.
ValidResult distill_eval(const Tensor& student, const Tensor& target, DistillLoss loss) {
  const std::size_t d = student.cols();
  double l = 0.0, dist = 0.0;
  for (std::size_t r = 0; r < student.rows(); ++r) {
    auto a = student.data().subspan(r * d, d), b = target.data().subspan(r * d, d);
    const double sq = squared_l2(a, b);
    dist += sq;
    l += loss == DistillLoss::kMse ? sq / double(d) : cosine_loss(a, b);
  }
  return {l / double(student.rows()), dist / double(student.rows())};
}

Var distill_loss(Var pred, Var target, DistillLoss loss) {
  return loss == DistillLoss::kMse ? mse(pred, target) : cosine_loss(pred, target);
}

void check_normalized_units(const std::vector<std::vector<int>>& units, const char* split) {
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].empty()) throw std::invalid_argument(std::string("unit targets: empty sequence in ") + split);
    if (!is_normalized(units[i])) {
      throw std::invalid_argument(std::string("unit targets: ") + split + " item " + std::to_string(i) +
                                  " has consecutive duplicate units; normalize first");
    }
  }
}

}  // namespace

Tensor embed_all(const Encoder& encoder, const Sequences& seqs, std::size_t batch) {
  require(!seqs.empty(), "embed_all: no sequences");
  Tensor out(Shape{seqs.size(), encoder.dims().embed});
  const std::size_t d = encoder.dims().embed;
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return seqs[a].size() < seqs[b].size(); });
  for (std::size_t b = 0; b < order.size(); b += batch) {
    std::span<const std::size_t> idx(order.data() + b, std::min(batch, order.size() - b));
    const Tensor e = encoder.embed(gather(seqs, idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(e.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                  out.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d));
    }
  }
  return out;
}

Tensor embed_all(const Encoder& encoder, const std::vector<Tensor>& frames, std::size_t batch) {
  require(!frames.empty(), "embed_all: no frame sequences");
  Tensor out(Shape{frames.size(), encoder.dims().embed});
  const std::size_t d = encoder.dims().embed;
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frames[a].rows() < frames[b].rows(); });
  for (std::size_t b = 0; b < order.size(); b += batch) {
    std::span<const std::size_t> idx(order.data() + b, std::min(batch, order.size() - b));
    const Tensor e = encoder.embed(gather(frames, idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(e.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                  out.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d));
    }
  }
  return out;
}

double token_accuracy(const Decoder& decoder, const Tensor& embeddings, const Sequences& targets, std::size_t batch) {
  return decoder_eval(decoder, embeddings, targets, batch).metric;
}

TrainingLog train_teacher(Encoder& encoder, Decoder& decoder, const Sequences& train, const Sequences& valid,
                          const TrainConfig& config) {
  require(!train.empty() && !valid.empty(), "train_teacher: empty train or valid set");
  TrainingLog log;
  log.data_flow = {"input:text:pivot", "target:text:pivot"};
  std::vector<Tensor*> params = trainable(encoder.params());
  for (Tensor* t : trainable(decoder.params())) params.push_back(t);
  BatchStream stream(seq_lengths(train), config.batch_size, derive_seed(config.seed, 0x7465));
  const std::size_t steps = stream.batches_per_pass();
  run_training(
      params, steps,
      [&](Graph& g, std::size_t) {
        const auto batch = gather(train, stream.next());
        EncoderOutput out = encoder.forward(g, batch, true);
        return decoder.loss(g, out.pooled, batch, true);
      },
      [&] { return decoder_eval(decoder, embed_all(encoder, valid), valid, 64); }, config, log);
  return log;
}

std::string_view to_string(DecoderVariant v) {
  switch (v) {
    case DecoderVariant::kAe: return "AE";
    case DecoderVariant::kAeNoise: return "AE_NOISE";
    case DecoderVariant::kAeBitext: return "AE_BITEXT";
  }
  return "AE";
}

DecoderVariant parse_decoder_variant(std::string_view s) {
  if (s == "AE") return DecoderVariant::kAe;
  if (s == "AE_NOISE") return DecoderVariant::kAeNoise;
  if (s == "AE_BITEXT") return DecoderVariant::kAeBitext;
  throw std::invalid_argument("unknown decoder objective '" + std::string(s) + "'");
}

void DecoderObjective::validate() const {
  if (variant == DecoderVariant::kAeNoise) {
    require(noise.alpha >= 0.0, "AE_NOISE: alpha must be non-negative");
    require(noise_probability >= 0.0 && noise_probability <= 1.0, "AE_NOISE: noise_probability must be in [0, 1]");
  }
  if (variant == DecoderVariant::kAeBitext) {
    require(!bitext_lang.empty(), "AE_BITEXT: bitext_lang is required");
    require(mix_ratio > 0.0 && mix_ratio <= 1.0, "AE_BITEXT: mix_ratio must be in (0, 1]");
  }
}

nlohmann::json DecoderObjective::to_json() const {
  nlohmann::json j{{"variant", std::string(to_string(variant))}};
  if (variant == DecoderVariant::kAeNoise) {
    j["noise"] = {{"alpha", noise.alpha}, {"mode", std::string(to_string(noise.mode))}, {"seed", noise.seed}};
    j["noise_probability"] = noise_probability;
  }
  if (variant == DecoderVariant::kAeBitext) {
    j["bitext_lang"] = bitext_lang;
    j["mix_ratio"] = mix_ratio;
  }
  return j;
}

DecoderObjective DecoderObjective::from_json(const nlohmann::json& j) {
  DecoderObjective o;
  o.variant = parse_decoder_variant(j.at("variant").get<std::string>());
  if (auto it = j.find("noise"); it != j.end()) {
    o.noise.alpha = it->value("alpha", o.noise.alpha);
    o.noise.mode = parse_noise_mode(it->value("mode", std::string("per_dim_std")));
    o.noise.seed = it->value("seed", o.noise.seed);
  }
  o.noise_probability = j.value("noise_probability", o.noise_probability);
  o.bitext_lang = j.value("bitext_lang", std::string());
  o.mix_ratio = j.value("mix_ratio", o.mix_ratio);
  o.validate();
  return o;
}

TrainingLog train_decoder(Decoder& decoder, const DecoderObjective& objective,
                          const std::map<std::string, const Encoder*>& frozen, const std::string& pivot_lang,
                          const DecoderData& data, const TrainConfig& config) {
  objective.validate();
  auto find = [&](const std::string& lang) -> const Encoder& {
    auto it = frozen.find(lang);
    if (it == frozen.end() || it->second == nullptr) {
      throw std::invalid_argument("train_decoder: no frozen encoder for language '" + lang + "'");
    }
    return *it->second;
  };
  const Encoder& pivot = find(pivot_lang);
  require(!data.raw_train.empty() && !data.raw_valid.empty(), "train_decoder: pivot data is empty");
  const bool bitext = objective.variant == DecoderVariant::kAeBitext;
  const Encoder* source = nullptr;
  if (bitext) {
    source = &find(objective.bitext_lang);
    require(!data.bitext_src_train.empty(), "train_decoder: AE_BITEXT needs bitext data for " + objective.bitext_lang);
    require_aligned(data.bitext_src_train.size(), data.bitext_tgt_train.size(), "train_decoder: bitext train");
    require_aligned(data.bitext_src_valid.size(), data.bitext_tgt_valid.size(), "train_decoder: bitext valid");
  }
  std::vector<FreezeGuard> guards;
  for (const auto& [lang, enc] : frozen) {
    if (&enc->params() == &decoder.params()) throw FreezeViolation("train_decoder: decoder aliases a frozen encoder");
    guards.emplace_back("encoder:" + lang, enc->params());
  }

  TrainingLog log;
  log.data_flow = {"input:text:" + pivot_lang, "target:text:" + pivot_lang};
  if (bitext) {
    log.data_flow.push_back("input:text:" + objective.bitext_lang);
  }

  // Encoders are frozen, so their embeddings are computed once.
  const Tensor raw_emb = embed_all(pivot, data.raw_train);
  const Tensor raw_valid_emb = embed_all(pivot, data.raw_valid);
  Tensor bt_emb, bt_valid_emb;
  if (bitext) {
    bt_emb = embed_all(*source, data.bitext_src_train);
    if (!data.bitext_src_valid.empty()) bt_valid_emb = embed_all(*source, data.bitext_src_valid);
  }

  std::vector<Tensor*> params = trainable(decoder.params());
  BatchStream raw(seq_lengths(data.raw_train), config.batch_size, derive_seed(config.seed, 0x6465));
  std::optional<BatchStream> bt;
  if (bitext) bt.emplace(seq_lengths(data.bitext_tgt_train), config.batch_size, derive_seed(config.seed, 0x6274));
  const std::size_t steps = raw.batches_per_pass();
  const std::size_t n_raw = data.raw_train.size();

  run_training(
      params, steps,
      [&](Graph& g, std::size_t step) {
        const double r = objective.mix_ratio;
        if (bitext && std::ceil(double(step + 1) * r) > std::ceil(double(step) * r)) {
          const auto& idx = bt->next();
          log.batch_tags.push_back("bitext:" + objective.bitext_lang);
          return decoder.loss(g, g.constant(gather_rows(bt_emb, idx)), gather(data.bitext_tgt_train, idx), true);
        }
        const auto& idx = raw.next();
        log.batch_tags.push_back("raw");
        Tensor emb = gather_rows(raw_emb, idx);
        if (objective.variant == DecoderVariant::kAeNoise) {
          const std::uint64_t epoch = step / steps;
          for (std::size_t r2 = 0; r2 < idx.size(); ++r2) {
            const std::uint64_t stream = epoch * n_raw + idx[r2];
            if (objective.noise_probability < 1.0) {
              SplitMix64 coin(derive_seed(objective.noise.seed, 0x636f696e, stream));
              if (std::uniform_real_distribution<double>(0.0, 1.0)(coin) >= objective.noise_probability) continue;
            }
            auto row = emb.data().subspan(r2 * emb.cols(), emb.cols());
            const auto p = perturb(row, objective.noise, stream);
            std::copy(p.begin(), p.end(), row.begin());
          }
        }
        return decoder.loss(g, g.constant(std::move(emb)), gather(data.raw_train, idx), true);
      },
      [&] {
        ValidResult v = decoder_eval(decoder, raw_valid_emb, data.raw_valid, 64);
        if (bitext && !data.bitext_src_valid.empty()) {
          const ValidResult b = decoder_eval(decoder, bt_valid_emb, data.bitext_tgt_valid, 64);
          v = {(v.loss + b.loss) / 2.0, (v.metric + b.metric) / 2.0};
        }
        return v;
      },
      config, log);
  for (const FreezeGuard& guard : guards) {
    guard.verify();
    log.frozen_checked.push_back(guard.name());
  }
  return log;
}

std::string_view to_string(DistillLoss l) { return l == DistillLoss::kMse ? "MSE" : "COSINE"; }

DistillLoss parse_distill_loss(std::string_view s) {
  if (s == "MSE") return DistillLoss::kMse;
  if (s == "COSINE") return DistillLoss::kCosine;
  throw std::invalid_argument("unknown distillation loss '" + std::string(s) + "'");
}

TrainingLog train_student(Encoder& student, const Encoder& teacher, const BitextData& data, DistillLoss loss,
                          const TrainConfig& config) {
  if (&student.params() == &teacher.params()) throw FreezeViolation("train_student: student is the frozen teacher");
  require(!data.src_train.empty() && !data.src_valid.empty(), "train_student: empty bitext for " + data.lang);
  require_aligned(data.src_train.size(), data.pivot_train.size(), "train_student: train bitext");
  require_aligned(data.src_valid.size(), data.pivot_valid.size(), "train_student: valid bitext");
  require(student.dims().embed == teacher.dims().embed, "train_student: student and teacher embedding sizes differ");
  FreezeGuard guard("teacher", teacher.params());
  TrainingLog log;
  log.data_flow = {"input:text:" + data.lang, "target:embedding:pivot"};
  const Tensor target = embed_all(teacher, data.pivot_train);
  const Tensor target_valid = embed_all(teacher, data.pivot_valid);
  std::vector<Tensor*> params = trainable(student.params());
  BatchStream stream(seq_lengths(data.src_train), config.batch_size, derive_seed(config.seed, 0x7374));
  run_training(
      params, stream.batches_per_pass(),
      [&](Graph& g, std::size_t) {
        const auto& idx = stream.next();
        EncoderOutput out = student.forward(g, gather(data.src_train, idx), true);
        return distill_loss(out.pooled, g.constant(gather_rows(target, idx)), loss);
      },
      [&] { return distill_eval(embed_all(student, data.src_valid), target_valid, loss); }, config, log);
  guard.verify();
  log.frozen_checked.push_back(guard.name());
  return log;
}

TrainingLog ce_finetune_student(Encoder& student, const nlohmann::json& student_provenance, const Decoder& decoder,
                                const BitextData& data, const TrainConfig& config) {
  if (student_provenance.value("procedure", std::string()) != "train_student") {
    throw std::invalid_argument("ce_finetune_student: the student must be initialised by distillation (train_student)");
  }
  require(!data.src_train.empty() && !data.src_valid.empty(), "ce_finetune_student: empty bitext for " + data.lang);
  require_aligned(data.src_train.size(), data.pivot_train.size(), "ce_finetune_student: train bitext");
  require_aligned(data.src_valid.size(), data.pivot_valid.size(), "ce_finetune_student: valid bitext");
  FreezeGuard guard("decoder", decoder.params());
  TrainingLog log;
  log.data_flow = {"input:text:" + data.lang, "target:text:pivot"};
  std::vector<Tensor*> params = trainable(student.params());
  BatchStream stream(seq_lengths(data.src_train), config.batch_size, derive_seed(config.seed, 0x6365));
  run_training(
      params, stream.batches_per_pass(),
      [&](Graph& g, std::size_t) {
        const auto& idx = stream.next();
        EncoderOutput out = student.forward(g, gather(data.src_train, idx), true);
        return decoder.loss(g, out.pooled, gather(data.pivot_train, idx), false);
      },
      [&] { return decoder_eval(decoder, embed_all(student, data.src_valid), data.pivot_valid, 64); }, config, log);
  guard.verify();
  log.frozen_checked.push_back(guard.name());
  return log;
}

std::string_view to_string(TeacherMode m) {
  switch (m) {
    case TeacherMode::kTranscription: return "TRANSCRIPTION";
    case TeacherMode::kTranslation: return "TRANSLATION";
    case TeacherMode::kBoth: return "BOTH";
  }
  return "TRANSCRIPTION";
}

TeacherMode parse_teacher_mode(std::string_view s) {
  if (s == "TRANSCRIPTION") return TeacherMode::kTranscription;
  if (s == "TRANSLATION") return TeacherMode::kTranslation;
  if (s == "BOTH") return TeacherMode::kBoth;
  throw std::invalid_argument("unknown teacher mode '" + std::string(s) + "'");
}

TrainingLog train_speech_student(Encoder& student, const SpeechTeachers& teachers, const SpeechData& data,
                                 TeacherMode mode, const TrainConfig& config) {
  const bool use_transcript = mode != TeacherMode::kTranslation;
  const bool use_translation = mode != TeacherMode::kTranscription;
  if (use_transcript && teachers.transcript == nullptr) {
    throw std::invalid_argument(std::string(to_string(mode)) + " mode requires the text student of " + data.lang);
  }
  if (use_translation && teachers.translation == nullptr) {
    throw std::invalid_argument(std::string(to_string(mode)) + " mode requires the pivot teacher encoder");
  }
  require(student.input_kind() == InputKind::kFrames, "train_speech_student: student must be a frame encoder");
  require(!data.frames_train.empty() && !data.frames_valid.empty(), "train_speech_student: no frames for " + data.lang);
  std::vector<FreezeGuard> guards;
  Tensor tr, tr_valid, tl, tl_valid;
  TrainingLog log;
  log.data_flow = {"input:speech:" + data.lang};
  if (use_transcript) {
    require_aligned(data.frames_train.size(), data.transcripts_train.size(), "train_speech_student: transcripts");
    require_aligned(data.frames_valid.size(), data.transcripts_valid.size(), "train_speech_student: valid transcripts");
    guards.emplace_back("transcript-encoder", teachers.transcript->params());
    tr = embed_all(*teachers.transcript, data.transcripts_train);
    tr_valid = embed_all(*teachers.transcript, data.transcripts_valid);
    log.data_flow.push_back("target:embedding:transcript");
  }
  if (use_translation) {
    require_aligned(data.frames_train.size(), data.translations_train.size(), "train_speech_student: translations");
    require_aligned(data.frames_valid.size(), data.translations_valid.size(), "train_speech_student: valid translations");
    if (!use_transcript || teachers.translation != teachers.transcript) {
      guards.emplace_back("pivot-teacher", teachers.translation->params());
    }
    tl = embed_all(*teachers.translation, data.translations_train);
    tl_valid = embed_all(*teachers.translation, data.translations_valid);
    log.data_flow.push_back("target:embedding:translation");
  }
  if ((teachers.transcript && &teachers.transcript->params() == &student.params()) ||
      (teachers.translation && &teachers.translation->params() == &student.params())) {
    throw FreezeViolation("train_speech_student: student aliases a frozen teacher");
  }
  std::vector<Tensor*> params = trainable(student.params());
  BatchStream stream(frame_lengths(data.frames_train), config.batch_size, derive_seed(config.seed, 0x7370));
  run_training(
      params, stream.batches_per_pass(),
      [&](Graph& g, std::size_t step) {
        const auto& idx = stream.next();
        const bool transcript = mode == TeacherMode::kTranscription || (mode == TeacherMode::kBoth && step % 2 == 0);
        log.batch_tags.push_back(transcript ? "transcription" : "translation");
        EncoderOutput out = student.forward(g, gather(data.frames_train, idx), true);
        return mse(out.pooled, g.constant(gather_rows(transcript ? tr : tl, idx)));
      },
      [&] {
        const Tensor e = embed_all(student, data.frames_valid);
        if (mode == TeacherMode::kTranscription) return distill_eval(e, tr_valid, DistillLoss::kMse);
        if (mode == TeacherMode::kTranslation) return distill_eval(e, tl_valid, DistillLoss::kMse);
        const ValidResult a = distill_eval(e, tr_valid, DistillLoss::kMse);
        const ValidResult b = distill_eval(e, tl_valid, DistillLoss::kMse);
        return ValidResult{(a.loss + b.loss) / 2.0, (a.metric + b.metric) / 2.0};
      },
      config, log);
  for (const FreezeGuard& guard : guards) {
    guard.verify();
    log.frozen_checked.push_back(guard.name());
  }
  return log;
}

std::vector<int> unit_target(const std::vector<int>& units) {
  std::vector<int> out;
  out.reserve(units.size() + 2);
  out.push_back(Vocabulary::kBos);
  for (int u : units) {
    if (u < 0) throw std::invalid_argument("unit_target: negative unit id");
    out.push_back(u + Vocabulary::kReserved);
  }
  out.push_back(Vocabulary::kEos);
  return out;
}

std::vector<int> units_from_ids(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id >= Vocabulary::kReserved) out.push_back(id - Vocabulary::kReserved);
  }
  return out;
}

TrainingLog train_unit_decoder(Decoder& decoder, const Encoder& source, const UnitData& data,
                               const TrainConfig& config) {
  check_normalized_units(data.units_train, "train");
  check_normalized_units(data.units_valid, "valid");
  const bool frames = source.input_kind() == InputKind::kFrames;
  TrainingLog log;
  Tensor emb, emb_valid;
  if (frames) {
    require_aligned(data.frames_train.size(), data.units_train.size(), "train_unit_decoder: frames");
    require_aligned(data.frames_valid.size(), data.units_valid.size(), "train_unit_decoder: valid frames");
    emb = embed_all(source, data.frames_train);
    emb_valid = embed_all(source, data.frames_valid);
    log.data_flow = {"input:speech:" + data.lang, "target:units:" + data.lang};
  } else {
    require_aligned(data.text_train.size(), data.units_train.size(), "train_unit_decoder: transcripts");
    require_aligned(data.text_valid.size(), data.units_valid.size(), "train_unit_decoder: valid transcripts");
    emb = embed_all(source, data.text_train);
    emb_valid = embed_all(source, data.text_valid);
    log.data_flow = {"input:text:" + data.lang, "target:units:" + data.lang};
  }
  FreezeGuard guard("source-encoder", source.params());
  Sequences targets, targets_valid;
  for (const auto& u : data.units_train) targets.push_back(unit_target(u));
  for (const auto& u : data.units_valid) targets_valid.push_back(unit_target(u));
  for (const auto& t : targets) {
    for (int id : t) require(id < static_cast<int>(decoder.vocab_size()), "train_unit_decoder: unit id beyond decoder vocabulary");
  }
  std::vector<Tensor*> params = trainable(decoder.params());
  BatchStream stream(seq_lengths(targets), config.batch_size, derive_seed(config.seed, 0x756e));
  run_training(
      params, stream.batches_per_pass(),
      [&](Graph& g, std::size_t) {
        const auto& idx = stream.next();
        return decoder.loss(g, g.constant(gather_rows(emb, idx)), gather(targets, idx), true);
      },
      [&] { return decoder_eval(decoder, emb_valid, targets_valid, 64); }, config, log);
  guard.verify();
  log.frozen_checked.push_back(guard.name());
  return log;
}

}  // namespace embedpipe
