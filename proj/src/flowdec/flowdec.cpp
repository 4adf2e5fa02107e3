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

#include "s2st/flowdec/flowdec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "s2st/config_json.hpp"
#include "s2st/io/container.hpp"

namespace s2st::flowdec {

using namespace s2st::num;
using nlohmann::json;

void FlowConfig::validate() const {
  if (chunk_size == 0) throw ConfigError("flow.chunk_size: must be at least 1");
  if (frames_per_token == 0) throw ConfigError("flow.frames_per_token: must be at least 1");
  if (n_mels == 0) throw ConfigError("flow.n_mels: must be positive");
  if (ode_steps == 0) throw ConfigError("flow.ode_steps: must be at least 1");
  if (cond_dim == 0 || hidden == 0) throw ConfigError("flow.cond_dim/hidden: must be positive");
  if (n_tokens == 0) throw ConfigError("flow.n_tokens: must be positive");
  if (n_speakers == 0) throw ConfigError("flow.n_speakers: must be positive");
  if (sample_rate == 0) throw ConfigError("flow.sample_rate: must be positive");
  if (2.0 * bin_frequency(n_mels - 1) >= static_cast<double>(sample_rate)) {
    throw ConfigError("flow.n_mels: top bin at " + std::to_string(bin_frequency(n_mels - 1)) +
                      " Hz is above the Nyquist frequency of " + std::to_string(sample_rate) + " Hz");
  }
}

std::size_t FlowConfig::input_dim() const {
  return n_mels + cond_dim + 3 + frames_per_token + cond_dim + lookback_frames * n_mels;
}

void to_json(json& j, const FlowConfig& c) {
  j = json{{"chunk_size", c.chunk_size}, {"frames_per_token", c.frames_per_token},
           {"n_mels", c.n_mels},         {"ode_steps", c.ode_steps},
           {"lookback_frames", c.lookback_frames}, {"cond_dim", c.cond_dim},
           {"hidden", c.hidden},         {"n_tokens", c.n_tokens},
           {"n_speakers", c.n_speakers}, {"sample_rate", c.sample_rate}};
}

void from_json(const json& j, FlowConfig& c) {
  const FieldReader get(j, json(c), "flow");
  get("chunk_size", c.chunk_size);
  get("frames_per_token", c.frames_per_token);
  get("n_mels", c.n_mels);
  get("ode_steps", c.ode_steps);
  get("lookback_frames", c.lookback_frames);
  get("cond_dim", c.cond_dim);
  get("hidden", c.hidden);
  get("n_tokens", c.n_tokens);
  get("n_speakers", c.n_speakers);
  get("sample_rate", c.sample_rate);
}

std::vector<std::vector<int>> chunk_tokens(std::span<const int> tokens, std::size_t chunk_size) {
  if (tokens.empty()) throw std::invalid_argument("chunk_tokens: empty token list");
  if (chunk_size == 0) throw std::invalid_argument("chunk_tokens: chunk size must be positive");
  std::vector<std::vector<int>> chunks;
  for (std::size_t at = 0; at < tokens.size(); at += chunk_size) {
    const auto n = std::min(chunk_size, tokens.size() - at);
    chunks.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(at),
                        tokens.begin() + static_cast<std::ptrdiff_t>(at + n));
  }
  return chunks;
}

SpeakerPrompt make_speaker_prompt(const FlowConfig& cfg, int id, std::uint64_t seed) {
  if (id < 0) throw std::invalid_argument("speaker prompt: negative speaker id");
  Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(id)));
  SpeakerPrompt p;
  p.id = id;
  p.embedding.resize(cfg.cond_dim);
  for (auto& v : p.embedding) v = rng.normal();
  return p;
}

std::vector<double> lookback_window(const FlowConfig& cfg, std::span<const double> history_frames) {
  const std::size_t width = cfg.lookback_frames * cfg.n_mels;
  std::vector<double> out(width, 0.0);
  const std::size_t take = std::min(width, history_frames.size());
  std::copy(history_frames.end() - static_cast<std::ptrdiff_t>(take), history_frames.end(),
            out.end() - static_cast<std::ptrdiff_t>(take));
  return out;
}

Tensor cfm_loss_at(const CfmExample& ex, const Tensor& x0, double t, const VelocityFn& v) {
  if (x0.shape() != ex.x1.shape()) {
    throw ShapeError("cfm_loss: x0 " + shape_str(x0.shape()) + " vs x1 " + shape_str(ex.x1.shape()));
  }
  const Tensor x1 = ex.x1.detach();
  const Tensor xt = add(scale(x0, 1.0 - t), scale(x1, t));
  const Tensor target = sub(x1, x0);
  const Tensor pred = v(xt, t, ex.cond);
  if (pred.shape() != target.shape()) {
    throw ShapeError("cfm_loss: velocity " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  return mse(pred, target);
}

Tensor cfm_loss(std::span<const CfmExample> batch, Rng& rng, const VelocityFn& v) {
  if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
  std::size_t entries = 0;
  for (const auto& ex : batch) entries += ex.x1.size();
  Tensor total;
  for (const auto& ex : batch) {
    const double t = rng.uniform();
    std::vector<double> noise(ex.x1.size());
    for (auto& z : noise) z = rng.normal();
    const Tensor x0 = Tensor::from(ex.x1.shape(), std::move(noise));
    const Tensor part = scale(cfm_loss_at(ex, x0, t, v), static_cast<double>(ex.x1.size()) / entries);
    total = total.defined() ? add(total, part) : part;
  }
  return total;
}

Tensor cfm_sample(const ChunkCond& cond, std::size_t rows, std::size_t n_mels, Rng& rng, std::size_t steps,
                  const VelocityFn& v) {
  if (steps == 0) throw std::invalid_argument("cfm_sample: need at least one step");
  NoGradGuard no_grad;
  std::vector<double> x(rows * n_mels);
  for (auto& z : x) z = rng.normal();
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const Tensor vel = v(Tensor::from({rows, n_mels}, x), static_cast<double>(k) * dt, cond);
    if (vel.size() != x.size()) throw ShapeError("cfm_sample: velocity " + shape_str(vel.shape()));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * vel.at(i);
  }
  return Tensor::from({rows, n_mels}, std::move(x));
}

FlowModel::FlowModel(const FlowConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  token_embed_ = params_.add("flow.token_embed", init::normal(rng, {cfg_.n_tokens, cfg_.cond_dim}, 1.0));
  in_ = nn::Linear(params_, "flow.in", cfg_.input_dim(), cfg_.hidden, rng);
  mid_ = nn::Linear(params_, "flow.mid", cfg_.hidden, cfg_.hidden, rng);
  out_ = nn::Linear(params_, "flow.out", cfg_.hidden, cfg_.n_mels, rng, true, 0.5 / std::sqrt(double(cfg_.hidden)));
  std::vector<double> prompts;
  for (std::size_t id = 0; id < cfg_.n_speakers; ++id) {
    const auto p = make_speaker_prompt(cfg_, static_cast<int>(id), Rng::derive(seed, 1));
    prompts.insert(prompts.end(), p.embedding.begin(), p.embedding.end());
  }
  prompts_ = params_.add("flow.speaker_prompts", Tensor::from({cfg_.n_speakers, cfg_.cond_dim}, std::move(prompts)));
  prompts_.set_requires_grad(false);
}

SpeakerPrompt FlowModel::speaker(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= cfg_.n_speakers) {
    throw std::out_of_range("flow: unknown speaker " + std::to_string(id));
  }
  const auto row = prompts_.values().subspan(static_cast<std::size_t>(id) * cfg_.cond_dim, cfg_.cond_dim);
  return {id, std::vector<double>(row.begin(), row.end())};
}

Tensor FlowModel::velocity(const Tensor& x_t, double t, const ChunkCond& cond) const {
  const std::size_t fpt = cfg_.frames_per_token;
  const std::size_t rows = cond.tokens.size() * fpt;
  if (x_t.dim() != 2 || x_t.rows() != rows || x_t.cols() != cfg_.n_mels) {
    throw ShapeError("flow velocity: x_t " + shape_str(x_t.shape()) + " for " + std::to_string(cond.tokens.size()) +
                     " tokens");
  }
  if (cond.speaker.size() != cfg_.cond_dim) throw ShapeError("flow velocity: speaker prompt width");
  if (cond.lookback.size() != cfg_.lookback_frames * cfg_.n_mels) throw ShapeError("flow velocity: lookback width");
  std::vector<int> row_tokens;
  for (int tok : cond.tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= cfg_.n_tokens) {
      throw std::out_of_range("flow velocity: token id " + std::to_string(tok) + " outside the codebook");
    }
    row_tokens.insert(row_tokens.end(), fpt, tok);
  }
  // Constant columns: t features, slot one-hot, speaker, lookback.
  const double angle = 2.0 * std::numbers::pi * t;
  const std::size_t width = 3 + fpt + cfg_.cond_dim + cond.lookback.size();
  std::vector<double> fixed(rows * width, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = fixed.data() + r * width;
    row[0] = t;
    row[1] = std::sin(angle);
    row[2] = std::cos(angle);
    row[3 + r % fpt] = 1.0;
    std::copy(cond.speaker.begin(), cond.speaker.end(), row + 3 + fpt);
    std::copy(cond.lookback.begin(), cond.lookback.end(), row + 3 + fpt + cfg_.cond_dim);
  }
  const Tensor x = concat({x_t, embedding(token_embed_, row_tokens), Tensor::from({rows, width}, std::move(fixed))}, 1);
  return out_.forward(silu(mid_.forward(silu(in_.forward(x)))));
}

VelocityFn FlowModel::field() const {
  return [this](const Tensor& x, double t, const ChunkCond& c) { return velocity(x, t, c); };
}

void FlowModel::save(const std::filesystem::path& dir, std::uint64_t step) const {
  io::save_container(dir, io::container_from_store(params_, kFlowKind, step, json(cfg_)));
}

FlowModel FlowModel::load(const std::filesystem::path& dir) {
  const io::Container c = io::load_container(dir, kFlowKind);
  FlowModel m(c.config.get<FlowConfig>(), 0);
  io::restore_store(m.params_, c);
  return m;
}

MelChunk synthesize_chunk(const FlowModel& model, std::span<const int> tokens, std::size_t chunk_index,
                          const SpeakerPrompt& speaker, std::span<const double> history, std::uint64_t utterance_seed) {
  const FlowConfig& cfg = model.config();
  ChunkCond cond{{tokens.begin(), tokens.end()}, speaker.embedding, lookback_window(cfg, history)};
  Rng rng(Rng::derive(utterance_seed, chunk_index));
  const std::size_t rows = tokens.size() * cfg.frames_per_token;
  const Tensor mel = cfm_sample(cond, rows, cfg.n_mels, rng, cfg.ode_steps, model.field());
  return {chunk_index, rows, std::vector<double>(mel.values().begin(), mel.values().end())};
}

std::vector<double> synthesize_offline(const FlowModel& model, std::span<const int> tokens,
                                       const SpeakerPrompt& speaker, std::uint64_t utterance_seed) {
  std::vector<double> frames;
  const auto chunks = chunk_tokens(tokens, model.config().chunk_size);
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    const MelChunk c = synthesize_chunk(model, chunks[k], k, speaker, frames, utterance_seed);
    frames.insert(frames.end(), c.values.begin(), c.values.end());
  }
  return frames;
}

StreamSynthesizer::StreamSynthesizer(const FlowModel& model, SpeakerPrompt speaker, std::uint64_t utterance_seed,
                                     ChunkSink sink)
    : model_(model), speaker_(std::move(speaker)), seed_(utterance_seed), sink_(std::move(sink)) {
  worker_ = std::thread([this] { run(); });
}

StreamSynthesizer::~StreamSynthesizer() {
  if (finished_) return;
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void StreamSynthesizer::push(int token) {
  if (finished_) throw std::logic_error("stream synthesizer: push after finish");
  if (token < 0 || static_cast<std::size_t>(token) >= model_.config().n_tokens) {
    throw std::out_of_range("stream synthesizer: token id " + std::to_string(token) + " outside the codebook");
  }
  pending_.push_back(token);
  if (pending_.size() == model_.config().chunk_size) enqueue(std::exchange(pending_, {}));
}

void StreamSynthesizer::enqueue(std::vector<int> chunk) {
  {
    std::lock_guard lock(mu_);
    queue_.emplace_back(next_index_++, std::move(chunk));
  }
  cv_.notify_one();
}

std::vector<double> StreamSynthesizer::finish() {
  if (finished_) throw std::logic_error("stream synthesizer: finish called twice");
  if (!pending_.empty()) enqueue(std::exchange(pending_, {}));
  if (next_index_ == 0) throw std::invalid_argument("stream synthesizer: empty token stream");
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
  worker_.join();
  finished_ = true;
  if (error_) std::rethrow_exception(error_);
  return std::move(frames_);
}

void StreamSynthesizer::run() {
  for (;;) {
    std::pair<std::size_t, std::vector<int>> item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return !queue_.empty() || closed_; });
      if (queue_.empty()) return;
      item = std::move(queue_.front());
      queue_.pop_front();
    }
    if (error_) continue;
    try {
      const MelChunk c = synthesize_chunk(model_, item.second, item.first, speaker_, frames_, seed_);
      frames_.insert(frames_.end(), c.values.begin(), c.values.end());
      if (sink_) sink_(c);
    } catch (...) {
      error_ = std::current_exception();
    }
  }
}

std::vector<double> synthesize_stream(const FlowModel& model, std::span<const int> tokens,
                                      const SpeakerPrompt& speaker, std::uint64_t utterance_seed,
                                      const StreamSynthesizer::ChunkSink& sink) {
  StreamSynthesizer stream(model, speaker, utterance_seed, sink);
  for (int t : tokens) stream.push(t);
  return stream.finish();
}

std::vector<double> MelTable::render(std::span<const int> tokens, int speaker) const {
  if (speaker < 0 || static_cast<std::size_t>(speaker) * n_mels >= speaker_shift.size()) {
    throw std::out_of_range("mel table: unknown speaker " + std::to_string(speaker));
  }
  const double* shift = speaker_shift.data() + static_cast<std::size_t>(speaker) * n_mels;
  std::vector<double> out;
  out.reserve(tokens.size() * frames_per_token * n_mels);
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= n_tokens) {
      throw std::out_of_range("mel table: token id " + std::to_string(tok));
    }
    const double* p = patterns.data() + static_cast<std::size_t>(tok) * frames_per_token * n_mels;
    for (std::size_t i = 0; i < frames_per_token * n_mels; ++i) out.push_back(p[i] + shift[i % n_mels]);
  }
  return out;
}

MelTable make_mel_table(const FlowConfig& cfg, std::size_t n_speakers, std::uint64_t seed) {
  if (n_speakers == 0) throw std::invalid_argument("mel table: need at least one speaker");
  Rng rng(seed);
  MelTable t{cfg.n_tokens, cfg.frames_per_token, cfg.n_mels, {}, {}};
  t.patterns.resize(cfg.n_tokens * cfg.frames_per_token * cfg.n_mels);
  for (auto& v : t.patterns) v = -5.0 + 4.0 * rng.uniform();
  t.speaker_shift.assign(n_speakers * cfg.n_mels, 0.0);
  for (std::size_t i = cfg.n_mels; i < t.speaker_shift.size(); ++i) t.speaker_shift[i] = 0.5 * rng.normal();
  return t;
}

std::vector<CfmExample> chunk_examples(const FlowConfig& cfg, std::span<const int> tokens,
                                       std::span<const double> target_frames, const SpeakerPrompt& speaker) {
  const std::size_t per_token = cfg.frames_per_token * cfg.n_mels;
  if (target_frames.size() != tokens.size() * per_token) {
    throw ShapeError("chunk_examples: " + std::to_string(target_frames.size()) + " mel values for " +
                     std::to_string(tokens.size()) + " tokens");
  }
  std::vector<CfmExample> out;
  std::size_t at = 0;
  for (auto& chunk : chunk_tokens(tokens, cfg.chunk_size)) {
    const std::size_t n = chunk.size() * per_token;
    CfmExample ex;
    ex.x1 = Tensor::from({chunk.size() * cfg.frames_per_token, cfg.n_mels},
                         std::vector<double>(target_frames.begin() + static_cast<std::ptrdiff_t>(at),
                                             target_frames.begin() + static_cast<std::ptrdiff_t>(at + n)));
    ex.cond = {std::move(chunk), speaker.embedding, lookback_window(cfg, target_frames.first(at))};
    out.push_back(std::move(ex));
    at += n;
  }
  return out;
}

double bin_frequency(std::size_t bin) { return 200.0 + 300.0 * static_cast<double>(bin); }

std::vector<double> pseudo_vocoder(std::span<const double> mel, std::size_t n_mels, std::size_t sample_rate) {
  if (mel.empty()) throw std::invalid_argument("pseudo_vocoder: empty mel");
  if (n_mels == 0 || mel.size() % n_mels != 0) throw ShapeError("pseudo_vocoder: mel size not a multiple of n_mels");
  if (sample_rate == 0 || 2.0 * bin_frequency(n_mels - 1) >= static_cast<double>(sample_rate)) {
    throw std::invalid_argument("pseudo_vocoder: bins exceed the Nyquist frequency");
  }
  for (double v : mel) {
    if (std::isnan(v) || v == INFINITY) throw std::invalid_argument("pseudo_vocoder: non-finite mel value");
  }
  const std::size_t frames = mel.size() / n_mels;
  std::vector<double> out(kHop * (frames - 1) + kWindow, 0.0);
  std::vector<double> window(kWindow);
  for (std::size_t n = 0; n < kWindow; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / kWindow);
  }
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b < n_mels; ++b) {
      const double m = mel[f * n_mels + b];
      if (m <= kMelFloor) continue;
      const double amp = std::exp(m);
      const auto freq = static_cast<std::uint64_t>(bin_frequency(b));
      for (std::size_t n = 0; n < kWindow; ++n) {
        const std::uint64_t s = f * kHop + n;
        // Integer phase reduction keeps the argument small and exact.
        const double phase = 2.0 * std::numbers::pi * static_cast<double>((freq * s) % sample_rate) /
                             static_cast<double>(sample_rate);
        out[s] += window[n] * amp * std::sin(phase);
      }
    }
  }
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : out) v *= kPeak / peak;
  }
  return out;
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}
void put_u16(std::ofstream& out, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}
std::uint32_t get_u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24); }
std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

void write_wav(const std::filesystem::path& path, std::span<const double> samples, std::size_t sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : samples) {
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<double> read_wav(const std::filesystem::path& path, std::size_t* sample_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error(path.string() + ": not a RIFF/WAVE file");
  }
  if (get_u16(bytes.data() + 20) != 1 || get_u16(bytes.data() + 22) != 1 || get_u16(bytes.data() + 34) != 16) {
    throw std::runtime_error(path.string() + ": expected mono 16-bit PCM");
  }
  if (sample_rate) *sample_rate = get_u32(bytes.data() + 24);
  const std::uint32_t n = get_u32(bytes.data() + 40);
  if (bytes.size() < 44 + std::size_t(n)) throw std::runtime_error(path.string() + ": truncated data chunk");
  std::vector<double> out(n / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::int16_t>(get_u16(bytes.data() + 44 + 2 * i)) / 32767.0;
  }
  return out;
}

}  // namespace s2st::flowdec
