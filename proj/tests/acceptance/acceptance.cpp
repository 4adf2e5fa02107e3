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

// Acceptance runner: one PASS/FAIL line per criterion.
//
//   s2st_acceptance [--only 1,4,7] [--workdir DIR] [--keep]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "s2st/data/corpus.hpp"
#include "s2st/duolm/duolm.hpp"
#include "s2st/eval/metrics.hpp"
#include "s2st/flowdec/flowdec.hpp"
#include "s2st/fsq/fsq.hpp"
#include "s2st/pipeline/pipeline.hpp"
#include "s2st/verify/suites.hpp"
#include "support/duolm_fixtures.hpp"
#include "support/eval_fixtures.hpp"
#include "support/flow_fixtures.hpp"
#include "support/pipeline_fixtures.hpp"
#include "support/test_util.hpp"

namespace fs = std::filesystem;
using namespace s2st;
using namespace s2st::num;
using s2st::testing::bit_equal;
using s2st::testing::read_file;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed check without stopping the criterion.
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

duolm::DuoLm toy_model(duolm::Stage stage, std::uint64_t seed, std::size_t delay = 2) {
  auto lm = s2st::testing::toy_lm();
  lm.delay = delay;
  return duolm::DuoLm(lm, s2st::testing::toy_frontend(lm.d_model), stage, seed);
}

// ---- 1 ----

Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& s : verify::suites()) {
    if (s.name != "grad-check") continue;
    const auto r = s.run();
    o.check(r.passed, "grad-check");
    o.note(r.detail);
  }
  const double secs = seconds_since(t0);
  o.check(secs < 120.0, "runtime under 2 min");
  o.note(fmt("%.1f s", secs));
  return o;
}

// ---- 2 ----

Outcome fsq_exactness() {
  Outcome o;
  std::size_t codes = 0;
  for (const std::vector<int>& levels : {std::vector<int>{3, 3}, {5, 3}, {5, 5, 5}}) {
    const fsq::FsqConfig cfg{levels};
    std::set<std::vector<int>> seen;
    for (int id = 0; id < static_cast<int>(cfg.codebook_size()); ++id) {
      const auto code = fsq::token_to_code(cfg, id);
      bool in_range = code.size() == cfg.dims();
      for (std::size_t j = 0; in_range && j < code.size(); ++j) in_range = std::abs(code[j]) <= cfg.half(j);
      o.check(in_range, "code range of id " + std::to_string(id));
      o.check(fsq::code_to_token(cfg, code) == id, "id round trip " + std::to_string(id));
      seen.insert(code);
      // Quantizing a code's center returns the code, and quantizing again is a no-op.
      const auto center = fsq::center_latent(cfg, code);
      const auto q = fsq::quantize(cfg, center);
      o.check(q.code == code && q.id == id, "center of id " + std::to_string(id));
      const Tensor zq = fsq::quantize_ste(cfg, Tensor::from({1, cfg.dims()}, center));
      bool same = true;
      for (std::size_t j = 0; j < cfg.dims(); ++j) same = same && zq.at(0, j) == static_cast<double>(code[j]);
      o.check(same, "ste value at center of id " + std::to_string(id));
      ++codes;
    }
    o.check(seen.size() == cfg.codebook_size(), "distinct codes");
  }

  // STE: gradient equals the one from substituting the identity for rounding.
  const fsq::FsqConfig cfg{{5, 5, 5}};
  Rng rng(8);
  const Tensor w = init::normal(rng, {3, 4}, 1.0);
  const Tensor z0 = init::normal(rng, {6, 3}, 1.0);
  Tensor za = z0.clone_leaf(true);
  backward(sum(silu(matmul(fsq::quantize_ste(cfg, za), w))));
  Tensor zb = z0.clone_leaf(true);
  const Tensor bounded = fsq::bound(cfg, zb);
  Tensor offset;
  {
    NoGradGuard ng;
    std::vector<double> r(bounded.values().begin(), bounded.values().end());
    for (auto& v : r) v = std::round(v);
    offset = sub(Tensor::from(bounded.shape(), r), bounded.detach());
  }
  backward(sum(silu(matmul(add(bounded, offset), w))));
  o.check(bit_equal(za.grad(), zb.grad()), "STE gradient");
  o.note(std::to_string(codes) + " codes, STE gradient bit-equal");
  return o;
}

// ---- 3 ----

Outcome delay_mechanics() {
  Outcome o;
  for (const auto& s : verify::suites()) {
    if (s.name != "delay-alignment") continue;
    const auto r = s.run();
    o.check(r.passed, "alignment property");
    o.note(r.detail);
  }
  // Audio logits for the token aligned with text position i are produced at
  // step i + D and must depend on text inputs at steps <= i + D only.
  std::size_t probes = 0;
  for (std::size_t delay : {0u, 1u, 2u, 5u}) {
    duolm::DuoLm m = toy_model(duolm::Stage::S2st, 3 + delay, delay);
    const auto tv = m.config().text_vocab();
    const auto av = m.config().audio_vocab();
    const std::size_t d = m.config().d_model;
    const std::vector<int> text = {1, 3, 0, 2, tv.eos()};
    const std::vector<int> audio = {5, 1, 4, 2, av.eos()};
    const auto seq = duolm::build_joint_sequence(text, audio, delay, tv, av);
    std::vector<int> in_t{tv.bos()}, in_a{av.bos()};
    in_t.insert(in_t.end(), seq.text.begin(), seq.text.end() - 1);
    in_a.insert(in_a.end(), seq.audio.begin(), seq.audio.end() - 1);
    const std::size_t steps = seq.length();
    Tensor text_rows = m.text_embedding(in_t).detach().clone_leaf(true);
    const Tensor audio_rows = m.audio_embedding(in_a).detach();
    for (std::size_t i = 0; i + delay < steps; ++i) {
      const std::size_t row = i + delay;
      text_rows.zero_grad();
      const Tensor x = scale(add(text_rows, audio_rows), duolm::kFuseFactor);
      const duolm::Logits lg = m.forward_step(x, 0);
      Rng probe(100 + i);
      backward(sum(mul(slice_rows(lg.audio, row, 1), init::normal(probe, {1, lg.audio.cols()}, 1.0))));
      for (std::size_t j = 0; j < steps; ++j) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += std::abs(text_rows.grad()[j * d + k]);
        const std::string where = "D=" + std::to_string(delay) + " i=" + std::to_string(i) + " j=" + std::to_string(j);
        if (j <= row) {
          o.check(norm > 0.0, "dependence " + where);
        } else {
          o.check(norm == 0.0, "exact zero " + where);
        }
        ++probes;
      }
    }
  }
  o.note(std::to_string(probes) + " Jacobian blocks");
  return o;
}

// ---- 4 ----

bool expected_trainable(const std::string& name) {
  return name.starts_with("lm.audio_post.") || name == "lm.audio_head.weight" || name.starts_with("lm.speech_out.") ||
         name.ends_with(".lora_a") || name.ends_with(".lora_b");
}

Outcome freezing_policy() {
  Outcome o;
  duolm::DuoLm m = toy_model(duolm::Stage::S2st, 4);
  Rng rng(5);
  std::vector<duolm::Example> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(s2st::testing::random_example(rng, m.config(), 2 + i));
  const auto before = m.params().snapshot();
  duolm::Trainer trainer(m, AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
  for (int s = 0; s < 100; ++s) trainer.step(batch);
  const auto after = m.params().snapshot();
  std::size_t moved = 0, frozen = 0;
  for (const auto& [name, v] : before) {
    const auto& w = after.at(name);
    const bool changed = v.size() != w.size() || std::memcmp(v.data(), w.data(), v.size() * sizeof(double)) != 0;
    o.check(changed == expected_trainable(name), name + (changed ? " changed" : " unchanged"));
    (changed ? moved : frozen) += 1;
  }
  o.note(std::to_string(moved) + " tensors changed, " + std::to_string(frozen) + " byte-identical");
  return o;
}

// ---- 5 ----

Outcome lora_laws() {
  Outcome o;
  // A fresh adapter (B = 0) on a loaded base reproduces the adapter-free base.
  const fs::path dir = fs::temp_directory_path() / "s2st-acceptance-lora";
  fs::remove_all(dir);
  duolm::DuoLm base = toy_model(duolm::Stage::Base, 11);
  Rng jitter(12);
  for (const auto& name : base.params().names()) {
    if (name == "lm.text_embed") continue;
    for (auto& v : base.params().get(name).mutable_values()) v += 0.05 * jitter.normal();
  }
  base.save(dir, 0);
  duolm::DuoLm adapted = toy_model(duolm::Stage::S2st, 99);
  adapted.load_base(dir);
  fs::remove_all(dir);
  adapted.set_fuse_factor(1.0);
  const auto tv = adapted.config().text_vocab();
  const auto av = adapted.config().audio_vocab();
  Rng rng(13);
  std::size_t checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor speech = s2st::testing::random_speech(rng, 2 + rng.below(4), adapted.config().d_model);
    const std::vector<int> instr = {tv.instruction()};
    std::vector<int> text_in = {tv.bos()};
    for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) text_in.push_back(static_cast<int>(rng.below(5)));
    const std::vector<int> pads(text_in.size(), av.pad());
    const Tensor xb = concat({base.prefix(instr, speech), base.text_embedding(text_in)}, 0);
    const Tensor xs = concat({adapted.prefix(instr, speech), adapted.fuse(text_in, pads)}, 0);
    const auto lb = base.forward_step(xb, 0), ls = adapted.forward_step(xs, 0);
    o.check(bit_equal(lb.text.values(), ls.text.values()), "B=0 text logits trial " + std::to_string(trial));
    ++checked;
  }
  // Per-layer law on a bare linear map.
  ParamStore store;
  nn::Linear lin(store, "probe", 16, 12, rng);
  lin.attach_lora(store, 4, 8.0, rng);
  const Tensor x = init::normal(rng, {5, 16}, 1.0);
  o.check(bit_equal(lin.forward(x).values(), add(matmul(x, lin.weight()), lin.bias()).values()), "B=0 linear");

  for (auto& v : store.get("probe.lora_b").mutable_values()) v = rng.normal();
  const Tensor merged = lin.merged_weight();
  double worst = 0.0;
  for (int p = 0; p < 100; ++p) {
    const Tensor probe = init::normal(rng, {1, 16}, 1.0);
    const Tensor a = lin.forward(probe), b = add(matmul(probe, merged), lin.bias());
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  }
  o.check(worst < 1e-9, "merged forward");
  o.note(std::to_string(checked) + " model probes bit-equal, merged max diff " + fmt("%.2e", worst));
  return o;
}

// ---- 6 ----

Outcome streaming() {
  Outcome o;
  flowdec::FlowConfig cfg;
  cfg.chunk_size = 10;
  cfg.n_mels = 8;
  cfg.hidden = 32;
  cfg.n_tokens = 20;
  const flowdec::FlowModel model(cfg, 21);
  Rng rng(22);
  std::set<std::size_t> chunk_counts;
  for (int u = 0; u < 50; ++u) {
    const std::size_t chunks = 1 + static_cast<std::size_t>(u) % 8;
    const std::size_t n = (chunks - 1) * cfg.chunk_size + 1 + rng.below(cfg.chunk_size);
    std::vector<int> tokens(n);
    for (auto& t : tokens) t = static_cast<int>(rng.below(cfg.n_tokens));
    const auto speaker = model.speaker(0);
    const std::uint64_t seed = rng.below(1u << 30);
    std::vector<std::size_t> order;
    const auto streamed = flowdec::synthesize_stream(model, tokens, speaker, seed,
                                                     [&](const flowdec::MelChunk& c) { order.push_back(c.chunk_index); });
    const auto offline = flowdec::synthesize_offline(model, tokens, speaker, seed);
    o.check(bit_equal(streamed, offline), "utterance " + std::to_string(u) + " bit-equal");
    bool in_order = order.size() == chunks;
    for (std::size_t k = 0; in_order && k < order.size(); ++k) in_order = order[k] == k;
    o.check(in_order, "utterance " + std::to_string(u) + " chunk order");
    chunk_counts.insert(chunks);
  }
  o.note("50 utterances, " + std::to_string(chunk_counts.size()) + " distinct chunk counts, C=10");
  return o;
}

// ---- 7 and 11 ----

struct Runs {
  fs::path root;
  pipeline::RunConfig cfg;
  std::optional<s2st::testing::PipelineRun> first, second;

  const s2st::testing::PipelineRun& get(int which) {
    auto& slot = which == 0 ? first : second;
    if (!slot) {
      const fs::path dir = root / (which == 0 ? "run_a" : "run_b");
      fs::remove_all(dir);
      slot = s2st::testing::run_pipeline(cfg, dir);
    }
    return *slot;
  }
};

Outcome end_to_end(Runs& runs) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& run = runs.get(0);
  const auto& r = run.report;
  o.check(runs.cfg.data.n_train >= 2000, "train split size");
  o.check(run.train_cpu_seconds <= 1800.0, "training CPU time");
  o.check(r.bleu >= 90.0, "bleu >= 90");
  o.check(r.asr_bleu >= 85.0, "asr_bleu >= 85");
  o.check(r.align_wer <= 0.05, "align_wer <= 0.05");

  // The inverse rules recover every test reference: the ceiling is 100.
  const fs::path data = runs.root / "run_a" / "data";
  const auto info = data::load_corpus_info(data);
  const auto test = data::load_manifest(data / "test.jsonl");
  data::FeatureStore feats(test.root, runs.cfg.data.frame_rate_hz);
  std::vector<eval::Tokens> hyps, refs;
  for (const auto& u : test.items) {
    hyps.push_back(data::oracle_translate(info, feats.get(u), u.speaker));
    refs.push_back(u.tgt_text);
  }
  const double ceiling = eval::bleu(hyps, refs);
  o.check(ceiling == 100.0, "rule-decoder ceiling");
  o.note("bleu " + fmt("%.2f", r.bleu) + ", asr_bleu " + fmt("%.2f", r.asr_bleu) + ", align_wer " +
         fmt("%.4f", r.align_wer) + ", ceiling " + fmt("%.1f", ceiling) + ", n_train " +
         std::to_string(runs.cfg.data.n_train) + ", training " + fmt("%.0f s CPU", run.train_cpu_seconds) +
         ", wall " + fmt("%.0f s", seconds_since(t0)));
  return o;
}

Outcome determinism(Runs& runs) {
  Outcome o;
  const std::string a = read_file(runs.get(0).report_json);
  const std::string b = read_file(runs.get(1).report_json);
  o.check(!a.empty(), "report.json written");
  o.check(a == b, "report.json byte-identical");
  o.note(std::to_string(a.size()) + " bytes, identical " + (a == b ? "yes" : "no"));
  return o;
}

// ---- 8 ----

Outcome overfit() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "s2st-acceptance-overfit";
  fs::remove_all(dir);
  const auto cfg = s2st::testing::toy_lm();
  const auto fe = s2st::testing::toy_frontend(cfg.d_model);
  Rng rng(71);
  std::vector<duolm::Example> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(s2st::testing::random_example(rng, cfg, 3));
  {
    duolm::DuoLm base(cfg, fe, duolm::Stage::Base, 70);
    duolm::Trainer t(base, AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
    for (int s = 0; s < 200; ++s) t.step(batch);
    base.save(dir, 200);
  }
  duolm::DuoLm m(cfg, fe, duolm::Stage::S2st, 72);
  m.load_base(dir);
  fs::remove_all(dir);
  duolm::Trainer t(m, AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
  duolm::StepLosses last;
  for (int s = 0; s < 200; ++s) last = t.step(batch);
  o.check(last.total < 0.05, "total loss < 0.05");
  std::size_t exact = 0;
  for (const auto& ex : batch) {
    duolm::GenerateOptions opts;
    opts.max_steps = 40;
    const auto g = duolm::generate(m, ex.speech, ex.instruction, opts);
    const bool ok = g.text == std::vector<int>(ex.text.begin(), ex.text.end() - 1) &&
                    g.audio == std::vector<int>(ex.audio.begin(), ex.audio.end() - 1) && !g.truncated;
    exact += ok;
  }
  o.check(exact == batch.size(), "greedy reproduction");
  o.note("loss " + fmt("%.5f", last.total) + ", " + std::to_string(exact) + "/" + std::to_string(batch.size()) +
         " reproduced");
  return o;
}

// ---- 9 ----

Outcome cfm_sanity() {
  Outcome o;
  const auto pm = s2st::testing::point_mass_experiment();
  o.check(pm.max_mean_error < 0.1, "sample mean within 0.1");
  o.check(pm.max_std < 0.2, "per-entry std < 0.2");

  const auto cfg = s2st::testing::small_flow();
  flowdec::ChunkCond cond{{0}, std::vector<double>(cfg.cond_dim, 0.0),
                          std::vector<double>(cfg.lookback_frames * cfg.n_mels, 0.0)};
  Rng t(10);
  const Tensor x1 = init::normal(t, {2, cfg.n_mels}, 2.0);
  double worst = 0.0;
  for (std::size_t steps : {1u, 10u, 64u}) {
    Rng draw(11), copy(11);
    const Tensor x0 = init::normal(copy, {2, cfg.n_mels}, 1.0);
    const Tensor out = flowdec::cfm_sample(cond, 2, cfg.n_mels, draw, steps,
                                           [&](const Tensor&, double, const flowdec::ChunkCond&) { return sub(x1, x0); });
    for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out.at(i) - x1.at(i)));
  }
  o.check(worst <= 1e-12, "oracle field reaches x1");
  o.note("mean err " + fmt("%.4f", pm.max_mean_error) + ", std " + fmt("%.4f", pm.max_std) + ", oracle max diff " +
         fmt("%.1e", worst));
  return o;
}

// ---- 10 ----

Outcome metric_oracles() {
  Outcome o;
  const double closed = 100.0 * std::pow(4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0, 0.25);
  const double got = eval::bleu({{0, 1, 2, 3, 4}}, {{0, 1, 2, 3}});
  o.check(std::abs(got - closed) <= 1e-6, "BLEU fixture");
  o.check(std::abs(closed - 66.87) < 5e-3, "closed form near 66.87");

  using T = eval::Tokens;
  o.check(eval::wer(T{0, 1, 2}, T{0, 1, 2}) == 0.0, "wer identical");
  o.check(eval::wer(T{0, 9, 2}, T{0, 1, 2}) == 1.0 / 3.0, "wer substitution");
  o.check(eval::wer(T{0}, T{0, 1}) == 0.5, "wer deletion");
  o.check(eval::wer(T{5, 0, 1}, T{0, 1}) == 0.5, "wer insertion");
  o.check(eval::wer(T{}, T{0, 1}) == 1.0, "wer empty hypothesis");
  o.check(eval::edit_distance(T{1, 2, 3, 4}, T{2, 3, 4, 5}) == 2, "edit distance shift");

  const auto f = s2st::testing::two_utterance_fixture();
  const auto r = eval::evaluate(f.preds, f.refs, eval::Transcriber(f.table, f.unk));
  o.check(std::abs(r.bleu - f.bleu) <= 1e-9, "fixture bleu");
  o.check(std::abs(r.asr_bleu - f.asr_bleu) <= 1e-9, "fixture asr_bleu");
  o.check(r.align_wer == f.align_wer, "fixture align_wer");
  o.check(r.truncated == f.truncated && r.rows.size() == 2, "fixture counts");
  for (std::size_t i = 0; i < r.rows.size() && i < 2; ++i) {
    o.check(std::abs(r.rows[i].bleu_sent - f.row_bleu[i]) <= 1e-9 && r.rows[i].wer == f.row_wer[i],
            "fixture row " + std::to_string(i));
  }
  o.note("BLEU " + fmt("%.6f", got) + ", fixture bleu " + fmt("%.4f", r.bleu) + " asr_bleu " +
         fmt("%.4f", r.asr_bleu) + " align_wer " + fmt("%.3f", r.align_wer));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2st acceptance criteria"};
  std::vector<int> only;
  std::string workdir;
  bool keep = false;
  app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_option("--workdir", workdir, "directory for pipeline runs");
  app.add_flag("--keep", keep, "keep pipeline outputs");
  CLI11_PARSE(app, argc, argv);

  Runs runs;
  runs.root = workdir.empty() ? fs::temp_directory_path() / "s2st-acceptance" : fs::path(workdir);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradients},
      {"FSQ exactness", fsq_exactness},
      {"delay mechanics", delay_mechanics},
      {"freezing policy", freezing_policy},
      {"LoRA laws", lora_laws},
      {"streaming equivalence", streaming},
      {"synthetic end-to-end quality", [&] { return end_to_end(runs); }},
      {"overfit oracle", overfit},
      {"CFM sanity", cfm_sanity},
      {"metric oracles", metric_oracles},
      {"determinism", [&] { return determinism(runs); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::printf("criterion %2d %-30s %s  [%.1f s] %s\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL",
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(runs.root);
  return failures == 0 ? 0 : 1;
}
