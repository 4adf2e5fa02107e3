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

#include "s2st/pipeline/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "s2st/config_json.hpp"
#include "s2st/io/container.hpp"

namespace s2st::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using num::Tensor;

// ---- configuration -------------------------------------------------------------

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

void RunConfig::validate() const {
  require(!output_dir.empty(), "output_dir: must not be empty");
  data.validate();
  tokenizer.validate();
  frontend.validate();
  duolm.validate();
  flow.validate();
  require(train.batch_size > 0, "train.batch_size: must be positive");
  require(train.warmup_lr >= 0.0 && train.base_lr >= 0.0 && train.s2st_lr >= 0.0 && train.flow_lr >= 0.0,
          "train: learning rates must be non-negative");
  require(train.weight_decay >= 0.0, "train.weight_decay: must be non-negative");
  require(train.final_lr_fraction >= 0.0 && train.final_lr_fraction <= 1.0,
          "train.final_lr_fraction: must lie in [0, 1]");
  require(decode.max_steps > 0, "decode.max_steps: must be positive");
  require(decode.greedy || decode.temperature > 0.0, "decode.temperature: must be positive when sampling");

  // Cross-section agreement.
  require(frontend.feat_dim == data.feat_dim, "frontend.feat_dim: must equal data.feat_dim");
  require(tokenizer.feat_dim == data.feat_dim, "tokenizer.feat_dim: must equal data.feat_dim");
  require(tokenizer.classes == data.text_vocab, "tokenizer.classes: must equal data.text_vocab");
  require(frontend.lm_dim == duolm.d_model, "frontend.lm_dim: must equal duolm.d_model");
  require(duolm.text_content == data.text_vocab, "duolm.text_content: must equal data.text_vocab");
  require(duolm.codebook == data.codebook_size, "duolm.codebook: must equal data.codebook_size");
  require(tokenizer.fsq.codebook_size() == data.codebook_size,
          "tokenizer.levels: FSQ codebook size must equal data.codebook_size");
  require(duolm.audio_vocab().size() > data.codebook_size, "duolm: audio vocabulary must contain the codebook");
  require(flow.n_tokens == data.codebook_size, "flow.n_tokens: must equal data.codebook_size");
  require(flow.n_speakers == data.n_speakers, "flow.n_speakers: must equal data.n_speakers");
  require(data.min_len * data.frames_per_token >= frontend::min_input_length(frontend),
          "data.min_len: shortest utterance is below the frontend's minimum input length");

  // Longest sequences must fit the position tables.
  const std::size_t frames = data.max_len * data.frames_per_token;
  const std::size_t speech = frontend::subsampled_length(frontend, frames);
  require(speech <= frontend.max_positions, "frontend.max_positions: shorter than the longest encoded utterance");
  const std::size_t steps = std::max(data.max_len + 1, data.max_len * data.expand_max + 1 + duolm.delay);
  require(1 + speech + steps <= duolm.max_positions, "duolm.max_positions: shorter than the longest training sequence");
  require(1 + speech + decode.max_steps <= duolm.max_positions,
          "decode.max_steps: generation would exceed duolm.max_positions");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"warmup_epochs", c.warmup_epochs}, {"warmup_lr", c.warmup_lr},
           {"base_epochs", c.base_epochs},     {"base_lr", c.base_lr},
           {"s2st_epochs", c.s2st_epochs},     {"s2st_lr", c.s2st_lr},
           {"weight_decay", c.weight_decay},   {"final_lr_fraction", c.final_lr_fraction},
           {"batch_size", c.batch_size},       {"flow_epochs", c.flow_epochs},
           {"flow_lr", c.flow_lr}};
}

void from_json(const json& j, TrainConfig& c) {
  const FieldReader get(j, json(c), "train");
  get("warmup_epochs", c.warmup_epochs);
  get("warmup_lr", c.warmup_lr);
  get("base_epochs", c.base_epochs);
  get("base_lr", c.base_lr);
  get("s2st_epochs", c.s2st_epochs);
  get("s2st_lr", c.s2st_lr);
  get("weight_decay", c.weight_decay);
  get("final_lr_fraction", c.final_lr_fraction);
  get("batch_size", c.batch_size);
  get("flow_epochs", c.flow_epochs);
  get("flow_lr", c.flow_lr);
}

void to_json(json& j, const DecodeConfig& c) {
  j = json{{"max_steps", c.max_steps}, {"greedy", c.greedy}, {"temperature", c.temperature}};
}

void from_json(const json& j, DecodeConfig& c) {
  const FieldReader get(j, json(c), "decode");
  get("max_steps", c.max_steps);
  get("greedy", c.greedy);
  get("temperature", c.temperature);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"seed", c.seed},         {"output_dir", c.output_dir}, {"data", c.data},
           {"tokenizer", c.tokenizer}, {"frontend", c.frontend}, {"duolm", c.duolm},
           {"flow", c.flow},         {"train", c.train},           {"decode", c.decode}};
}

void from_json(const json& j, RunConfig& c) {
  const FieldReader get(j, json(c), "config");
  get("seed", c.seed);
  get("output_dir", c.output_dir);
  get("data", c.data);
  get("tokenizer", c.tokenizer);
  get("frontend", c.frontend);
  get("duolm", c.duolm);
  get("flow", c.flow);
  get("train", c.train);
  get("decode", c.decode);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return j.get<RunConfig>();
}

std::uint64_t stage_seed(const RunConfig& cfg, Stream s) {
  return num::Rng::derive(cfg.seed, static_cast<std::uint64_t>(s));
}

void write_loss_csv(const fs::path& path, const std::vector<LossRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::fprintf(f, "step,text_loss,audio_loss,total\n");
  for (const auto& r : rows) {
    std::fprintf(f, "%llu,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.text, r.audio, r.total);
  }
  std::fclose(f);
}

double scheduled_lr(double lr, double final_fraction, std::uint64_t step, std::uint64_t total) {
  if (total <= 1) return lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total - 1);
  return lr * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// ---- stages ----------------------------------------------------------------------

namespace {

struct Corpus {
  data::CorpusInfo info;
  data::Manifest train;
};

// Loads a split and checks the corpus was generated with this data config.
Corpus open_corpus(const RunConfig& cfg, const fs::path& data_dir) {
  Corpus c{data::load_corpus_info(data_dir), data::load_manifest(data_dir / "train.jsonl")};
  if (json(c.info.config) != json(cfg.data)) {
    throw ConfigError("data: corpus at " + data_dir.string() + " was generated with a different data config");
  }
  if (c.train.config_hash != c.info.config_hash) {
    throw std::runtime_error("data: train manifest does not belong to " + (data_dir / "corpus.json").string());
  }
  return c;
}

std::vector<Tensor> encode_speech(const frontend::Frontend& fe, const data::Manifest& m, data::FeatureStore& feats) {
  num::NoGradGuard no_grad;
  std::vector<Tensor> out;
  out.reserve(m.items.size());
  for (const auto& u : m.items) out.push_back(fe.forward(feats.get(u)).detach());
  return out;
}

std::vector<duolm::Example> make_examples(const duolm::DuoLmConfig& cfg, const data::Manifest& m,
                                          const std::vector<Tensor>& speech) {
  const TextVocab tv = cfg.text_vocab();
  const AudioVocab av = cfg.audio_vocab();
  std::vector<duolm::Example> out;
  for (std::size_t i = 0; i < m.items.size(); ++i) {
    const auto& u = m.items[i];
    duolm::Example ex;
    ex.speech = speech[i];
    ex.instruction = {tv.instruction()};
    ex.text = u.tgt_text;
    ex.text.push_back(tv.eos());
    ex.audio = u.tgt_speech;
    ex.audio.push_back(av.eos());
    out.push_back(std::move(ex));
  }
  return out;
}

// Shuffled mini-batch epochs with a cosine learning-rate schedule.
template <class StepFn>
std::vector<LossRow> run_epochs(std::size_t n_items, std::size_t epochs, std::size_t batch_size, double lr,
                                double final_fraction, std::uint64_t seed, const std::string& stage,
                                const Progress& progress, StepFn&& step) {
  if (n_items == 0) throw std::invalid_argument(stage + ": empty training set");
  const std::size_t per_epoch = ceil_div(n_items, batch_size);
  const std::uint64_t total = epochs * per_epoch;
  num::Rng rng(seed);
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), 0);
  std::vector<LossRow> rows;
  std::uint64_t at = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(std::span(order));
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n_items, (b + 1) * batch_size));
      LossRow row = step(std::vector<std::size_t>(first, last), scheduled_lr(lr, final_fraction, at, total));
      row.step = ++at;
      if (progress) progress(stage, at, total, row.total);
      rows.push_back(row);
    }
  }
  return rows;
}

LossRow train_lm_step(duolm::Trainer& trainer, const std::vector<duolm::Example>& examples,
                      const std::vector<std::size_t>& idx, double lr) {
  std::vector<duolm::Example> batch;
  for (auto i : idx) batch.push_back(examples[i]);
  trainer.set_lr(lr);
  const auto l = trainer.step(batch);
  return {0, l.text, l.audio, l.total};
}

}  // namespace

data::CorpusInfo gen_data(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  return data::gen_corpus(cfg.data, cfg.seed, out);
}

fsq::TrainResult train_tokenizer(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out) {
  cfg.validate();
  const Corpus corpus = open_corpus(cfg, data_dir);
  data::FeatureStore feats(corpus.train.root, cfg.data.frame_rate_hz);
  fsq::Tokenizer tok(cfg.tokenizer, stage_seed(cfg, Stream::Tokenizer));
  const auto res = fsq::train_tokenizer(tok, corpus.train, feats, cfg.data.frames_per_token,
                                        num::Rng::derive(stage_seed(cfg, Stream::Tokenizer), 1));
  tok.save(out);
  std::FILE* f = std::fopen((out / "accuracy.csv").c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + (out / "accuracy.csv").string());
  std::fprintf(f, "epoch,mean_loss,first_loss,last_loss,accuracy\n");
  for (const auto& e : res.epochs) {
    std::fprintf(f, "%zu,%.9g,%.9g,%.9g,%.6f\n", e.epoch, e.mean_loss, e.first_loss, e.last_loss, e.accuracy);
  }
  std::fclose(f);
  return res;
}

std::vector<LossRow> pretrain_base(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out,
                                   const Progress& progress) {
  cfg.validate();
  const Corpus corpus = open_corpus(cfg, data_dir);
  data::FeatureStore feats(corpus.train.root, cfg.data.frame_rate_hz);
  duolm::DuoLm model(cfg.duolm, cfg.frontend, duolm::Stage::Base, stage_seed(cfg, Stream::BaseModel));

  // Frame-classification warm-up; the head lives outside the model store.
  num::ParamStore head_store;
  num::Rng head_rng(stage_seed(cfg, Stream::Warmup));
  model.frontend().attach_warmup_head(head_store, cfg.data.text_vocab, head_rng);
  model.apply_freezing_policy(true);
  const auto warm = frontend::warmup(model.frontend(), model.params(), corpus.train, feats, cfg.data.frames_per_token,
                                     cfg.train.warmup_epochs, cfg.train.batch_size, cfg.train.warmup_lr,
                                     num::Rng::derive(stage_seed(cfg, Stream::Warmup), 1));
  model.apply_freezing_policy(false);

  const auto examples = make_examples(cfg.duolm, corpus.train, encode_speech(model.frontend(), corpus.train, feats));
  num::AdamWConfig oc;
  oc.lr = cfg.train.base_lr;
  oc.weight_decay = cfg.train.weight_decay;
  duolm::Trainer trainer(model, oc);
  const auto rows = run_epochs(examples.size(), cfg.train.base_epochs, cfg.train.batch_size, cfg.train.base_lr,
                               cfg.train.final_lr_fraction, stage_seed(cfg, Stream::BaseBatches), "pretrain-base",
                               progress, [&](const std::vector<std::size_t>& idx, double lr) {
                                 return train_lm_step(trainer, examples, idx, lr);
                               });
  model.save(out, trainer.steps());
  write_loss_csv(out / kLossFile, rows);
  std::FILE* f = std::fopen((out / "warmup.csv").c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + (out / "warmup.csv").string());
  std::fprintf(f, "epoch,mean_loss,accuracy\n");
  for (const auto& w : warm) std::fprintf(f, "%zu,%.9g,%.6f\n", w.epoch, w.mean_loss, w.accuracy);
  std::fclose(f);
  return rows;
}

std::vector<LossRow> train_s2st(const RunConfig& cfg, const fs::path& base, const fs::path& data_dir,
                                const fs::path& out, const Progress& progress) {
  cfg.validate();
  const Corpus corpus = open_corpus(cfg, data_dir);
  data::FeatureStore feats(corpus.train.root, cfg.data.frame_rate_hz);
  duolm::DuoLm model(cfg.duolm, cfg.frontend, duolm::Stage::S2st, stage_seed(cfg, Stream::S2stModel));
  model.load_base(base);
  model.apply_freezing_policy();
  const auto examples = make_examples(cfg.duolm, corpus.train, encode_speech(model.frontend(), corpus.train, feats));
  num::AdamWConfig oc;
  oc.lr = cfg.train.s2st_lr;
  oc.weight_decay = cfg.train.weight_decay;
  duolm::Trainer trainer(model, oc);
  const auto rows = run_epochs(examples.size(), cfg.train.s2st_epochs, cfg.train.batch_size, cfg.train.s2st_lr,
                               cfg.train.final_lr_fraction, stage_seed(cfg, Stream::S2stBatches), "train-s2st",
                               progress, [&](const std::vector<std::size_t>& idx, double lr) {
                                 return train_lm_step(trainer, examples, idx, lr);
                               });
  model.save(out, trainer.steps());
  write_loss_csv(out / kLossFile, rows);
  return rows;
}

std::vector<LossRow> train_flow(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out,
                                const Progress& progress) {
  cfg.validate();
  const Corpus corpus = open_corpus(cfg, data_dir);
  flowdec::FlowModel model(cfg.flow, stage_seed(cfg, Stream::FlowModel));
  const auto table = flowdec::make_mel_table(cfg.flow, cfg.data.n_speakers, num::Rng::derive(cfg.seed, 0x6d656c));
  std::vector<flowdec::CfmExample> chunks;
  for (const auto& u : corpus.train.items) {
    const auto ex = flowdec::chunk_examples(cfg.flow, u.tgt_speech, table.render(u.tgt_speech, u.speaker),
                                            model.speaker(u.speaker));
    chunks.insert(chunks.end(), ex.begin(), ex.end());
  }
  num::AdamWConfig oc;
  oc.lr = cfg.train.flow_lr;
  oc.weight_decay = cfg.train.weight_decay;
  num::AdamW opt(model.params().trainable(), oc);
  num::Rng noise(num::Rng::derive(stage_seed(cfg, Stream::FlowTrain), 1));
  const auto rows = run_epochs(
      chunks.size(), cfg.train.flow_epochs, 2 * cfg.train.batch_size, cfg.train.flow_lr, cfg.train.final_lr_fraction,
      stage_seed(cfg, Stream::FlowTrain), "train-flow", progress, [&](const std::vector<std::size_t>& idx, double lr) {
        std::vector<flowdec::CfmExample> batch;
        for (auto i : idx) batch.push_back(chunks[i]);
        Tensor loss = flowdec::cfm_loss(batch, noise, model.field());
        opt.set_lr(lr);
        opt.zero_grad();
        num::backward(loss);
        opt.step();
        return LossRow{0, 0.0, loss.item(), loss.item()};
      });
  model.save(out, rows.size());
  write_loss_csv(out / kLossFile, rows);
  return rows;
}

std::vector<eval::Prediction> translate(const fs::path& model_dir, const fs::path& flow_dir,
                                        const fs::path& manifest_path, const fs::path& out,
                                        const TranslateOptions& opts) {
  const duolm::DuoLm model = duolm::DuoLm::load(model_dir);
  if (model.stage() != duolm::Stage::S2st) {
    throw ConfigError("translate: " + model_dir.string() + " is a base checkpoint; train-s2st output is required");
  }
  std::optional<flowdec::FlowModel> flow;
  if (opts.wav) {
    if (flow_dir.empty()) throw ConfigError("translate: --wav needs a flow checkpoint");
    flow.emplace(flowdec::FlowModel::load(flow_dir));
    if (flow->config().n_tokens != model.config().codebook) {
      throw ConfigError("translate: flow checkpoint codebook does not match the model");
    }
  }
  const data::Manifest manifest = data::load_manifest(manifest_path);
  data::FeatureStore feats(manifest.root);
  const TextVocab tv = model.config().text_vocab();
  fs::create_directories(out);
  if (opts.wav) fs::create_directories(out / "wav");

  duolm::GenerateOptions gen_opts;
  gen_opts.max_steps = opts.decode.max_steps;
  gen_opts.greedy = opts.decode.greedy;
  gen_opts.temperature = opts.decode.temperature;
  io::Container mel_dump;
  mel_dump.kind = flowdec::kMelKind;
  std::vector<eval::Prediction> preds;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    const auto& u = manifest.items[i];
    Tensor speech;
    {
      num::NoGradGuard no_grad;
      speech = model.frontend().forward(feats.get(u));
    }
    gen_opts.seed = num::Rng::derive(opts.seed, 2 * i);
    std::optional<flowdec::StreamSynthesizer> stream;
    if (flow) {
      // Audio ids flow into chunk synthesis while decoding continues.
      stream.emplace(*flow, flow->speaker(u.speaker), num::Rng::derive(opts.seed, 2 * i + 1));
      gen_opts.on_audio_token = [&](int a) { stream->push(a); };
    }
    const duolm::Generation g = duolm::generate(model, speech, std::vector<int>{tv.instruction()}, gen_opts);
    preds.push_back({u.id, g.text, g.audio, g.truncated});
    if (flow) {
      std::vector<double> mel;
      if (!g.audio.empty()) mel = stream->finish();
      const std::size_t n_mels = flow->config().n_mels;
      const auto samples = mel.empty() ? std::vector<double>{} : flowdec::pseudo_vocoder(mel, n_mels, flow->config().sample_rate);
      flowdec::write_wav(out / "wav" / (u.id + ".wav"), samples, flow->config().sample_rate);
      const std::size_t frames = mel.size() / n_mels;
      mel_dump.add(u.id, {frames, n_mels}, std::move(mel));
    }
  }
  eval::write_predictions(out / kPredictionsFile, preds);
  if (flow) io::save_container(out / "mel", mel_dump);
  return preds;
}

eval::EvalReport evaluate(const fs::path& pred, const fs::path& ref_manifest, const fs::path& out) {
  const auto preds = eval::load_predictions(pred / kPredictionsFile);
  const data::Manifest manifest = data::load_manifest(ref_manifest);
  const data::CorpusInfo info = data::load_corpus_info(manifest.root);
  const eval::Transcriber transcribe(info.rules.expansion, TextVocab{info.config.text_vocab}.unk());
  const eval::EvalReport report = eval::evaluate(preds, manifest, transcribe);
  fs::create_directories(out);
  eval::write_report(out, report);
  return report;
}

}  // namespace s2st::pipeline
