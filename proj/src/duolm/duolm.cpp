// Copyright 2026 The s2st-desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "s2st/duolm/duolm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "s2st/io/container.hpp"

namespace s2st::duolm {

using nlohmann::json;
using namespace s2st::num;

namespace {

constexpr double kMaskedLogit = -1e9;

}  // namespace

void DuoLmConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) throw ConfigError("duolm.d_model: must be divisible by heads");
  if (n_shared == 0) throw ConfigError("duolm.n_shared: must be >= 1");
  if (n_post == 0) throw ConfigError("duolm.n_post: must be >= 1");
  if (ff_dim == 0) throw ConfigError("duolm.ff_dim: must be positive");
  if (text_content == 0) throw ConfigError("duolm.text_content: must be positive");
  if (codebook == 0) throw ConfigError("duolm.codebook: must be positive");
  if (!(audio_loss_weight >= 0.0)) throw ConfigError("duolm.audio_loss_weight: must be non-negative");
  if (lora_rank == 0) throw ConfigError("duolm.lora_rank: must be positive");
  if (!(lora_alpha > 0.0)) throw ConfigError("duolm.lora_alpha: must be positive");
  if (max_positions == 0) throw ConfigError("duolm.max_positions: must be positive");
}

void to_json(json& j, const DuoLmConfig& c) {
  j = json{{"d_model", c.d_model},
           {"n_shared", c.n_shared},
           {"n_post", c.n_post},
           {"heads", c.heads},
           {"ff_dim", c.ff_dim},
           {"text_content", c.text_content},
           {"codebook", c.codebook},
           {"delay", c.delay},
           {"audio_loss_weight", c.audio_loss_weight},
           {"lora_rank", c.lora_rank},
           {"lora_alpha", c.lora_alpha},
           {"max_positions", c.max_positions}};
}

void from_json(const json& j, DuoLmConfig& c) {
  const json defaults = c;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("duolm." + key + ": unknown field");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("duolm.") + key + ": wrong type");
    }
  };
  get("d_model", c.d_model);
  get("n_shared", c.n_shared);
  get("n_post", c.n_post);
  get("heads", c.heads);
  get("ff_dim", c.ff_dim);
  get("text_content", c.text_content);
  get("codebook", c.codebook);
  get("delay", c.delay);
  get("audio_loss_weight", c.audio_loss_weight);
  get("lora_rank", c.lora_rank);
  get("lora_alpha", c.lora_alpha);
  get("max_positions", c.max_positions);
}

JointSequence build_joint_sequence(std::span<const int> text, std::span<const int> audio, std::size_t delay,
                                   const TextVocab& tv, const AudioVocab& av) {
  if (text.empty()) throw std::invalid_argument("joint sequence: empty text stream");
  if (audio.empty()) throw std::invalid_argument("joint sequence: empty audio stream");
  if (text.back() != tv.eos()) throw std::invalid_argument("joint sequence: text stream does not end with EOS");
  if (audio.back() != av.eos()) throw std::invalid_argument("joint sequence: audio stream does not end with EOS");
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    if (!tv.is_content(text[i])) {
      throw std::invalid_argument("joint sequence: text position " + std::to_string(i) + " holds non-content id " +
                                  std::to_string(text[i]));
    }
  }
  for (std::size_t i = 0; i + 1 < audio.size(); ++i) {
    if (!av.is_content(audio[i])) {
      throw std::invalid_argument("joint sequence: audio position " + std::to_string(i) + " holds non-content id " +
                                  std::to_string(audio[i]));
    }
  }
  const std::size_t S = std::max(text.size(), audio.size() + delay);
  JointSequence seq;
  seq.text.assign(S, tv.pad());
  seq.audio.assign(S, av.pad());
  std::copy(text.begin(), text.end(), seq.text.begin());
  std::copy(audio.begin(), audio.end(), seq.audio.begin() + static_cast<std::ptrdiff_t>(delay));
  return seq;
}

std::string stage_name(Stage s) { return s == Stage::Base ? "base" : "s2st"; }

Stage parse_stage(const std::string& s) {
  if (s == "base") return Stage::Base;
  if (s == "s2st") return Stage::S2st;
  throw std::invalid_argument("duolm: unknown stage '" + s + "'");
}

bool is_adaptation_param(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  auto ends = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return starts("lm.audio_post.") || starts("lm.audio_head.") || starts("lm.speech_out.") || ends(".lora_a") ||
         ends(".lora_b");
}

DuoLm::DuoLm(const DuoLmConfig& lm, const frontend::FrontendConfig& fe, Stage stage, std::uint64_t seed)
    : cfg_(lm), fe_cfg_(fe), stage_(stage) {
  cfg_.validate();
  fe_cfg_.validate();
  if (fe_cfg_.lm_dim != cfg_.d_model) {
    throw ConfigError("frontend.lm_dim: " + std::to_string(fe_cfg_.lm_dim) + " does not match duolm.d_model " +
                      std::to_string(cfg_.d_model));
  }
  // Separate streams keep base-path initialization independent of the stage.
  Rng fe_rng(Rng::derive(seed, 1));
  frontend_ = frontend::Frontend(fe_cfg_, params_, fe_rng);

  Rng rng(Rng::derive(seed, 2));
  const std::size_t d = cfg_.d_model;
  const TextVocab tv = cfg_.text_vocab();
  Tensor te = init::normal(rng, {tv.size(), d}, 0.5);
  std::fill_n(te.mutable_values().begin() + static_cast<std::ptrdiff_t>(tv.pad()) * static_cast<std::ptrdiff_t>(d),
              d, 0.0);
  text_embed_ = params_.add("lm.text_embed", te);
  positions_ = params_.add("lm.positions", init::normal(rng, {cfg_.max_positions, d}, 0.1));
  const nn::BlockConfig bc{d, cfg_.heads, cfg_.ff_dim};
  for (std::size_t i = 0; i < cfg_.n_shared; ++i) shared_.emplace_back(params_, "lm.shared" + std::to_string(i), bc, rng);
  for (std::size_t i = 0; i < cfg_.n_post; ++i) {
    text_post_.emplace_back(params_, "lm.text_post.block" + std::to_string(i), bc, rng);
  }
  text_norm_ = nn::LayerNorm(params_, "lm.text_post.norm", d);
  text_head_ = nn::Linear(params_, "lm.text_head", d, tv.size(), rng);

  if (stage_ == Stage::S2st) {
    Rng arng(Rng::derive(seed, 3));
    speech_out_ = nn::Linear(params_, "lm.speech_out", d, d, arng);
    for (std::size_t i = 0; i < cfg_.n_post; ++i) {
      audio_post_.emplace_back(params_, "lm.audio_post.block" + std::to_string(i), bc, arng);
    }
    audio_norm_ = nn::LayerNorm(params_, "lm.audio_post.norm", d);
    const AudioVocab av = cfg_.audio_vocab();
    Tensor table = init::normal(arng, {av.size(), d}, 1.0 / std::sqrt(static_cast<double>(d)));
    std::fill_n(table.mutable_values().begin() + static_cast<std::ptrdiff_t>(av.pad()) * static_cast<std::ptrdiff_t>(d),
                d, 0.0);
    audio_table_ = params_.add("lm.audio_head.weight", table);
    Rng lrng(Rng::derive(seed, 4));
    for (auto& b : shared_) b.attach_lora(params_, cfg_.lora_rank, cfg_.lora_alpha, lrng);
    for (auto& b : text_post_) b.attach_lora(params_, cfg_.lora_rank, cfg_.lora_alpha, lrng);
  }
  apply_freezing_policy();
}

void DuoLm::apply_freezing_policy(bool train_frontend) {
  if (stage_ == Stage::S2st) {
    params_.set_trainable(is_adaptation_param);
  } else {
    params_.set_trainable([&](const std::string& name) {
      return name.rfind("lm.", 0) == 0 || (train_frontend && frontend::is_frontend_param(name));
    });
  }
}

Tensor DuoLm::text_embedding(std::span<const int> ids) const { return embedding(text_embed_, ids); }

Tensor DuoLm::audio_embedding(std::span<const int> ids) const {
  if (stage_ != Stage::S2st) throw std::logic_error("duolm: base model has no audio stream");
  return embedding(audio_table_, ids);
}

Tensor DuoLm::fuse(std::span<const int> text, std::span<const int> audio) const {
  if (stage_ == Stage::Base) return text_embedding(text);
  if (text.size() != audio.size()) throw ShapeError("fuse: text and audio id counts differ");
  return scale(add(text_embedding(text), audio_embedding(audio)), fuse_factor_);
}

Tensor DuoLm::step_inputs(const JointSequence& seq) const {
  const TextVocab tv = cfg_.text_vocab();
  std::vector<int> t{tv.bos()};
  t.insert(t.end(), seq.text.begin(), seq.text.end() - 1);
  if (stage_ == Stage::Base) return text_embedding(t);
  const AudioVocab av = cfg_.audio_vocab();
  std::vector<int> a{av.bos()};
  a.insert(a.end(), seq.audio.begin(), seq.audio.end() - 1);
  return fuse(t, a);
}

Tensor DuoLm::prefix(std::span<const int> instruction, const Tensor& speech) const {
  std::vector<Tensor> parts;
  if (!instruction.empty()) parts.push_back(text_embedding(instruction));
  if (speech.defined()) {
    if (speech.dim() != 2 || speech.cols() != cfg_.d_model) {
      throw ShapeError("duolm.prefix: speech rows " + shape_str(speech.shape()) + " vs d_model " +
                       std::to_string(cfg_.d_model));
    }
    parts.push_back(speech);
  }
  if (parts.empty()) return Tensor();
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

Tensor DuoLm::add_positions(const Tensor& x, std::span<const std::size_t> lengths, std::size_t offset) const {
  std::vector<int> pos;
  pos.reserve(x.rows());
  for (auto len : lengths) {
    if (offset + len > cfg_.max_positions) {
      throw std::invalid_argument("duolm: sequence of " + std::to_string(offset + len) + " rows exceeds max_positions " +
                                  std::to_string(cfg_.max_positions));
    }
    for (std::size_t i = 0; i < len; ++i) pos.push_back(static_cast<int>(offset + i));
  }
  return add(x, embedding(positions_, pos));
}

Logits DuoLm::forward_packed(const Tensor& x, std::span<const std::size_t> lengths,
                             std::span<const std::size_t> head_rows) const {
  if (!x.defined() || x.rows() == 0) throw std::invalid_argument("duolm.forward: empty prefix");
  if (x.cols() != cfg_.d_model) throw ShapeError("duolm.forward: input " + shape_str(x.shape()) + " vs d_model");
  if (std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) != x.rows()) {
    throw ShapeError("duolm.forward: lengths do not cover input " + shape_str(x.shape()));
  }
  Tensor h = add_positions(x, lengths, 0);
  for (const auto& b : shared_) h = b.forward(h, lengths);
  Logits out;
  Tensor t = h;
  for (const auto& b : text_post_) t = b.forward(t, lengths);
  out.text = text_head_.forward(gather_rows(text_norm_.forward(t), head_rows));
  if (stage_ == Stage::S2st) {
    Tensor a = speech_out_.forward(h);
    for (const auto& b : audio_post_) a = b.forward(a, lengths);
    out.audio = matmul_nt(gather_rows(audio_norm_.forward(a), head_rows), audio_table_);
  }
  return out;
}

Logits DuoLm::forward_step(const Tensor& inputs, std::size_t first_step) const {
  if (!inputs.defined() || inputs.rows() == 0) throw std::invalid_argument("duolm.forward_step: empty prefix");
  if (first_step >= inputs.rows()) throw std::invalid_argument("duolm.forward_step: no step rows");
  std::vector<std::size_t> rows(inputs.rows() - first_step);
  std::iota(rows.begin(), rows.end(), first_step);
  const std::size_t len = inputs.rows();
  return forward_packed(inputs, std::span(&len, 1), rows);
}

DuoLm::Cache DuoLm::new_cache() const {
  Cache c;
  c.shared.resize(shared_.size());
  c.text_post.resize(text_post_.size());
  c.audio_post.resize(audio_post_.size());
  return c;
}

Logits DuoLm::extend(const Tensor& rows, Cache& cache) const {
  const std::size_t n = rows.rows();
  Tensor h = add_positions(rows, std::span(&n, 1), cache.length());
  for (std::size_t i = 0; i < shared_.size(); ++i) h = shared_[i].step(h, cache.shared[i]);
  Logits out;
  Tensor t = h;
  for (std::size_t i = 0; i < text_post_.size(); ++i) t = text_post_[i].step(t, cache.text_post[i]);
  out.text = text_head_.forward(text_norm_.forward(t));
  if (stage_ == Stage::S2st) {
    Tensor a = speech_out_.forward(h);
    for (std::size_t i = 0; i < audio_post_.size(); ++i) a = audio_post_[i].step(a, cache.audio_post[i]);
    out.audio = matmul_nt(audio_norm_.forward(a), audio_table_);
  }
  return out;
}

json DuoLm::config_json() const {
  return json{{"stage", stage_name(stage_)}, {"duolm", cfg_}, {"frontend", fe_cfg_}};
}

void DuoLm::save(const std::filesystem::path& dir, std::uint64_t step) const {
  io::save_container(dir, io::container_from_store(params_, kCheckpointKind, step, config_json()));
}

DuoLm DuoLm::load(const std::filesystem::path& dir) {
  const io::Container c = io::load_container(dir, kCheckpointKind);
  DuoLm model(c.config.at("duolm").get<DuoLmConfig>(), c.config.at("frontend").get<frontend::FrontendConfig>(),
              parse_stage(c.config.at("stage").get<std::string>()), 0);
  io::restore_store(model.params_, c);
  return model;
}

void DuoLm::load_base(const std::filesystem::path& dir) {
  const io::Container c = io::load_container(dir, kCheckpointKind);
  if (c.config.value("stage", "") != "base") throw io::FormatError("duolm: " + dir.string() + " is not a base checkpoint");
  const json mine = config_json();
  if (c.config.at("frontend") != mine.at("frontend")) throw io::FormatError("duolm: base frontend config differs");
  json base_lm = c.config.at("duolm"), my_lm = mine.at("duolm");
  for (const char* key : {"d_model", "n_shared", "n_post", "heads", "ff_dim", "text_content", "max_positions"}) {
    if (base_lm.at(key) != my_lm.at(key)) {
      throw io::FormatError(std::string("duolm: base checkpoint differs in ") + key);
    }
  }
  io::restore_subset(params_, c);
}

std::vector<std::uint8_t> invalid_text_outputs(const TextVocab& tv) {
  std::vector<std::uint8_t> m(tv.size(), 1);
  for (std::size_t i = 0; i < tv.content; ++i) m[i] = 0;
  m[static_cast<std::size_t>(tv.eos())] = 0;
  return m;
}

std::vector<std::uint8_t> invalid_audio_outputs(const AudioVocab& av) {
  std::vector<std::uint8_t> m(av.size(), 1);
  for (std::size_t i = 0; i < av.codebook; ++i) m[i] = 0;
  m[static_cast<std::size_t>(av.eos())] = 0;
  return m;
}

namespace {

Tensor mask_columns(const Tensor& logits, const std::vector<std::uint8_t>& column_mask) {
  std::vector<std::uint8_t> full(logits.size());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::copy(column_mask.begin(), column_mask.end(), full.begin() + static_cast<std::ptrdiff_t>(r * logits.cols()));
  }
  return masked_fill(logits, full, kMaskedLogit);
}

}  // namespace

LossGraph compute_loss(const DuoLm& model, const std::vector<Example>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const DuoLmConfig& cfg = model.config();
  const TextVocab tv = cfg.text_vocab();
  const AudioVocab av = cfg.audio_vocab();
  const bool s2st = model.stage() == Stage::S2st;

  std::vector<Tensor> parts;
  std::vector<std::size_t> lengths, head_rows;
  std::vector<int> text_targets, audio_targets;
  std::size_t at = 0;
  for (const auto& ex : batch) {
    if (ex.text.empty() || (s2st && ex.audio.empty())) throw std::invalid_argument("train_step: length-0 sequence");
    JointSequence seq;
    if (s2st) {
      seq = build_joint_sequence(ex.text, ex.audio, cfg.delay, tv, av);
    } else {
      seq.text = ex.text;
      if (seq.text.back() != tv.eos()) throw std::invalid_argument("train_step: text does not end with EOS");
    }
    Tensor pre = model.prefix(ex.instruction, ex.speech);
    const std::size_t p = pre.defined() ? pre.rows() : 0;
    if (pre.defined()) parts.push_back(pre);
    parts.push_back(model.step_inputs(seq));
    lengths.push_back(p + seq.length());
    for (std::size_t s = 0; s < seq.length(); ++s) head_rows.push_back(at + p + s);
    at += p + seq.length();
    text_targets.insert(text_targets.end(), seq.text.begin(), seq.text.end());
    audio_targets.insert(audio_targets.end(), seq.audio.begin(), seq.audio.end());
  }
  Tensor x = parts.size() == 1 ? parts[0] : concat(parts, 0);
  Logits logits = model.forward_packed(x, lengths, head_rows);
  LossGraph g;
  g.text_loss = cross_entropy(mask_columns(logits.text, invalid_text_outputs(tv)), text_targets, tv.pad());
  if (s2st) {
    g.audio_loss = cross_entropy(mask_columns(logits.audio, invalid_audio_outputs(av)), audio_targets, av.pad());
    g.total = add(g.text_loss, scale(g.audio_loss, cfg.audio_loss_weight));
  } else {
    g.total = g.text_loss;
  }
  return g;
}

Trainer::Trainer(DuoLm& model, const AdamWConfig& opt) : model_(model), opt_(model.params().trainable(), opt) {}

StepLosses Trainer::step(const std::vector<Example>& batch) {
  LossGraph g = compute_loss(model_, batch);
  opt_.zero_grad();
  backward(g.total);
  opt_.step();
  ++steps_;
  StepLosses out;
  out.text = g.text_loss.item();
  out.audio = g.audio_loss.defined() ? g.audio_loss.item() : 0.0;
  out.total = g.total.item();
  return out;
}

namespace {

int pick(std::span<const double> logits, const std::vector<std::uint8_t>& invalid, const GenerateOptions& opts,
         Rng& rng) {
  if (opts.greedy) {
    int best = -1;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (invalid[i]) continue;
      if (best < 0 || logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
  }
  if (!(opts.temperature > 0.0)) throw std::invalid_argument("generate: temperature must be positive");
  double mx = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!invalid[i]) mx = std::max(mx, logits[i] / opts.temperature);
  }
  std::vector<double> w(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!invalid[i]) total += (w[i] = std::exp(logits[i] / opts.temperature - mx));
  }
  double u = rng.uniform() * total;
  int last = -1;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (invalid[i]) continue;
    last = static_cast<int>(i);
    if ((u -= w[i]) < 0.0) return last;
  }
  return last;
}

// Runs the decoding loop; step_fn(prefix rows or next input) returns the
// logits row pair for the newest position.
template <typename StepFn>
Generation decode_loop(const DuoLm& model, StepFn&& step_fn, const GenerateOptions& opts) {
  const DuoLmConfig& cfg = model.config();
  const TextVocab tv = cfg.text_vocab();
  const AudioVocab av = cfg.audio_vocab();
  const bool s2st = model.stage() == Stage::S2st;
  const auto bad_text = invalid_text_outputs(tv);
  const auto bad_audio = invalid_audio_outputs(av);
  Rng rng(opts.seed);
  Generation gen;
  gen.truncated = true;
  bool text_done = false;
  std::vector<int> next_text{tv.bos()}, next_audio{av.bos()};
  for (std::size_t s = 0; s < opts.max_steps; ++s) {
    NoGradGuard no_grad;
    Tensor in = s2st ? model.fuse(next_text, next_audio) : model.text_embedding(next_text);
    const Logits lg = step_fn(in, s);
    const std::size_t last = lg.text.rows() - 1;
    int t = tv.pad();
    if (!text_done) {
      t = pick(lg.text.values().subspan(last * lg.text.cols(), lg.text.cols()), bad_text, opts, rng);
      text_done = t == tv.eos();
      if (tv.is_content(t)) gen.text.push_back(t);
    }
    gen.raw_text.push_back(t);
    if (!s2st) {
      if (text_done) {
        gen.truncated = false;
        break;
      }
      next_text = {t};
      continue;
    }
    int a = av.pad();
    if (s >= cfg.delay) a = pick(lg.audio.values().subspan(last * lg.audio.cols(), lg.audio.cols()), bad_audio, opts, rng);
    gen.raw_audio.push_back(a);
    if (av.is_content(a)) {
      gen.audio.push_back(a);
      if (opts.on_audio_token) opts.on_audio_token(a);
    }
    if (a == av.eos()) {
      gen.truncated = false;
      break;
    }
    next_text = {t};
    next_audio = {a};
  }
  return gen;
}

}  // namespace

Generation generate(const DuoLm& model, const Tensor& speech, std::span<const int> instruction,
                    const GenerateOptions& opts) {
  NoGradGuard no_grad;
  DuoLm::Cache cache = model.new_cache();
  const Tensor pre = model.prefix(instruction, speech);
  auto step = [&](const Tensor& in, std::size_t s) {
    if (s == 0 && pre.defined()) return model.extend(concat({pre, in}, 0), cache);
    return model.extend(in, cache);
  };
  return decode_loop(model, step, opts);
}

Generation generate_uncached(const DuoLm& model, const Tensor& speech, std::span<const int> instruction,
                             const GenerateOptions& opts) {
  NoGradGuard no_grad;
  Tensor seq = model.prefix(instruction, speech);
  auto step = [&](const Tensor& in, std::size_t) {
    seq = seq.defined() ? concat({seq, in}, 0) : in;
    return model.forward_step(seq, seq.rows() - 1);
  };
  return decode_loop(model, step, opts);
}

}  // namespace s2st::duolm
