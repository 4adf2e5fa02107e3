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

#include "s2st/verify/suites.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "s2st/duolm/duolm.hpp"
#include "s2st/flowdec/flowdec.hpp"
#include "s2st/fsq/fsq.hpp"
#include "s2st/numerics/gradcheck.hpp"

namespace s2st::verify {

using namespace s2st::num;

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

duolm::DuoLmConfig toy_lm() {
  duolm::DuoLmConfig c;
  c.d_model = 8;
  c.n_shared = 2;
  c.n_post = 1;
  c.heads = 2;
  c.ff_dim = 16;
  c.text_content = 5;
  c.codebook = 6;
  c.delay = 2;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  c.max_positions = 48;
  return c;
}

frontend::FrontendConfig toy_frontend(std::size_t lm_dim) {
  frontend::FrontendConfig f;
  f.feat_dim = 4;
  f.enc_dim = 8;
  f.heads = 2;
  f.ff_dim = 8;
  f.encoder_blocks = 1;
  f.adapter_hidden = 8;
  f.lm_dim = lm_dim;
  return f;
}

duolm::Example toy_example(Rng& rng, const duolm::DuoLmConfig& cfg, std::size_t speech_rows) {
  duolm::Example ex;
  ex.speech = init::normal(rng, {speech_rows, cfg.d_model}, 1.0);
  ex.instruction = {cfg.text_vocab().instruction()};
  const std::size_t nt = 1 + rng.below(3), na = 1 + rng.below(5);
  for (std::size_t i = 0; i < nt; ++i) ex.text.push_back(static_cast<int>(rng.below(cfg.text_content)));
  ex.text.push_back(cfg.text_vocab().eos());
  for (std::size_t i = 0; i < na; ++i) ex.audio.push_back(static_cast<int>(rng.below(cfg.codebook)));
  ex.audio.push_back(cfg.audio_vocab().eos());
  return ex;
}

void randomize_lora(duolm::DuoLm& m, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& name : m.params().names()) {
    if (name.ends_with(".lora_b")) {
      for (auto& v : m.params().get(name).mutable_values()) v = 0.3 * rng.normal();
    }
  }
}

// sum(w * t) with a fixed random w of t's shape.
Tensor weighted(const Tensor& t) {
  Rng rng(99);
  return sum(mul(t, init::normal(rng, t.shape(), 1.0)));
}

using Primitive = std::pair<std::string, std::pair<ScalarFn, std::vector<Tensor>>>;

// Every differentiable primitive; round_ste is covered by the FSQ suite.
std::vector<Primitive> primitives(Rng& rng) {
  const Tensor a = init::normal(rng, {3, 4}, 1.0), b = init::normal(rng, {4, 5}, 1.0);
  const Tensor c = init::normal(rng, {3, 4}, 1.0), row = init::normal(rng, {4}, 1.0);
  const Tensor g = init::normal(rng, {4}, 1.0), be = init::normal(rng, {4}, 1.0);
  const Tensor e = init::normal(rng, {6, 4}, 1.0), w = init::normal(rng, {3, 4}, 1.0);
  const Tensor q = init::normal(rng, {5, 4}, 1.0), k = init::normal(rng, {5, 4}, 1.0), v = init::normal(rng, {5, 4}, 1.0);
  static const std::vector<int> targets{1, -1, 3};
  static const std::vector<int> ids{2, 0, 5, 2};
  static const std::vector<std::size_t> rows{4, 1, 1};
  static const std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0};
  static const kernels::AttnSegment segs[2] = {{0, 2, 0, 2}, {2, 3, 2, 3}};
  auto one = [](auto f) { return ScalarFn([f](std::span<const Tensor> x) { return weighted(f(x)); }); };
  return {
      {"matmul", {one([](auto x) { return matmul(x[0], x[1]); }), {a, b}}},
      {"matmul_nt", {one([](auto x) { return matmul_nt(x[0], x[1]); }), {a, c}}},
      {"add", {one([](auto x) { return add(x[0], x[1]); }), {a, c}}},
      {"add_row", {one([](auto x) { return add(x[0], x[1]); }), {a, row}}},
      {"sub", {one([](auto x) { return sub(x[0], x[1]); }), {a, c}}},
      {"mul", {one([](auto x) { return mul(x[0], x[1]); }), {a, c}}},
      {"mul_row", {one([](auto x) { return mul(x[0], x[1]); }), {a, row}}},
      {"scale", {one([](auto x) { return scale(x[0], -1.7); }), {a}}},
      {"add_scalar", {one([](auto x) { return add_scalar(x[0], 0.3); }), {a}}},
      {"silu", {one([](auto x) { return silu(x[0]); }), {a}}},
      {"tanh", {one([](auto x) { return tanh(x[0]); }), {a}}},
      {"layer_norm", {one([](auto x) { return layer_norm(x[0], x[1], x[2]); }), {a, g, be}}},
      {"softmax", {one([](auto x) { return softmax(x[0]); }), {a}}},
      {"log_softmax", {one([](auto x) { return log_softmax(x[0]); }), {a}}},
      {"cross_entropy", {[](std::span<const Tensor> x) { return cross_entropy(x[0], targets); }, {a}}},
      {"mse", {[](std::span<const Tensor> x) { return mse(x[0], x[1]); }, {a, c}}},
      {"embedding", {one([](auto x) { return embedding(x[0], ids); }), {e}}},
      {"gather_rows", {one([](auto x) { return gather_rows(x[0], rows); }), {e}}},
      {"concat0", {one([](auto x) { return concat({x[0], x[1]}, 0); }), {a, c}}},
      {"concat1", {one([](auto x) { return concat({x[0], x[1]}, 1); }), {a, c}}},
      {"slice_rows", {one([](auto x) { return slice_rows(x[0], 1, 2); }), {a}}},
      {"slice_cols", {one([](auto x) { return slice_cols(x[0], 1, 2); }), {a}}},
      {"transpose", {one([](auto x) { return transpose(x[0]); }), {a}}},
      {"reshape", {one([](auto x) { return reshape(x[0], {2, 6}); }), {a}}},
      {"sum", {[](std::span<const Tensor> x) { return sum(mul(x[0], x[0])); }, {a}}},
      {"mean_all", {[](std::span<const Tensor> x) { return mean_all(x[0]); }, {a}}},
      {"mean0", {one([](auto x) { return mean(x[0], 0); }), {a}}},
      {"mean1", {one([](auto x) { return mean(x[0], 1); }), {a}}},
      {"masked_fill", {one([](auto x) { return masked_fill(x[0], mask, -5.0); }), {a}}},
      {"attention_causal", {one([](auto x) { return attention(x[0], x[1], x[2], 2, segs, true); }), {q, k, v}}},
      {"attention_full", {one([](auto x) { return attention(x[0], x[1], x[2], 2, segs, false); }), {q, k, v}}},
      {"unfold1d", {one([](auto x) { return unfold1d(x[0], 3, 2, 1); }), {e}}},
      {"depthwise_conv1d", {one([](auto x) { return depthwise_conv1d(x[0], x[1]); }), {e, w}}},
  };
}

SuiteResult grad_suite() {
  Rng rng(1);
  const auto prims = primitives(rng);
  double worst_prim = 0.0;
  std::string worst_name;
  for (const auto& [name, p] : prims) {
    const double e = grad_check(p.first, p.second, 1e-6);
    if (e > worst_prim) worst_prim = e, worst_name = name;
  }

  const auto cfg = toy_lm();
  duolm::DuoLm m(cfg, toy_frontend(cfg.d_model), duolm::Stage::S2st, 3);
  randomize_lora(m, 4);
  std::vector<duolm::Example> batch{toy_example(rng, cfg, 2), toy_example(rng, cfg, 3)};
  std::vector<Tensor> lm_params;
  for (const auto& name : m.params().names()) {
    if (name.starts_with("lm.")) lm_params.push_back(m.params().get(name));
  }
  const double lm_err =
      grad_check([&](std::span<const Tensor>) { return duolm::compute_loss(m, batch).total; }, lm_params, 1e-5);

  flowdec::FlowConfig fc;
  fc.chunk_size = 2;
  fc.n_mels = 3;
  fc.lookback_frames = 2;
  fc.cond_dim = 3;
  fc.hidden = 8;
  fc.n_tokens = 4;
  flowdec::FlowModel flow(fc, 5);
  std::vector<flowdec::CfmExample> chunks{{init::normal(rng, {4, 3}, 1.0),
                                           {{1, 3}, std::vector<double>(3, 0.2), std::vector<double>(6, -0.1)}}};
  const double cfm_err = grad_check(
      [&](std::span<const Tensor>) {
        Rng fixed(6);
        return flowdec::cfm_loss(chunks, fixed, flow.field());
      },
      flow.params().trainable(), 1e-5);
  const bool ok = worst_prim < 1e-5 && lm_err < 1e-4 && cfm_err < 1e-4;
  return {"grad-check", ok,
          std::to_string(prims.size()) + " primitives max " + fmt("%.2e", worst_prim) + (worst_name.empty() ? "" : " (" + worst_name + ")") +
              ", duolm toy " + fmt("%.2e", lm_err) + ", cfm " + fmt("%.2e", cfm_err)};
}

SuiteResult fsq_suite() {
  std::size_t checked = 0;
  for (const std::vector<int>& levels : {std::vector<int>{3, 3}, {5, 3}, {5, 5, 5}}) {
    const fsq::FsqConfig cfg{levels};
    for (int id = 0; id < static_cast<int>(cfg.codebook_size()); ++id) {
      const auto code = fsq::token_to_code(cfg, id);
      if (fsq::code_to_token(cfg, code) != id) return {"fsq-bijection", false, "id " + std::to_string(id)};
      if (fsq::quantize(cfg, fsq::center_latent(cfg, code)).id != id) return {"fsq-bijection", false, "center of id " + std::to_string(id)};
      ++checked;
    }
  }
  return {"fsq-bijection", true, std::to_string(checked) + " codes"};
}

SuiteResult delay_suite() {
  Rng rng(7);
  const TextVocab tv{5};
  const AudioVocab av{6};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = rng.below(6);
    std::vector<int> text, audio;
    for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) text.push_back(static_cast<int>(rng.below(5)));
    for (std::size_t i = 0, n = 1 + rng.below(12); i < n; ++i) audio.push_back(static_cast<int>(rng.below(6)));
    text.push_back(tv.eos());
    audio.push_back(av.eos());
    const auto seq = duolm::build_joint_sequence(text, audio, d, tv, av);
    const std::size_t len = std::max(text.size(), audio.size() + d);
    bool ok = seq.text.size() == len && seq.audio.size() == len;
    for (std::size_t s = 0; ok && s < len; ++s) {
      ok = seq.text[s] == (s < text.size() ? text[s] : tv.pad()) &&
           seq.audio[s] == (s >= d && s - d < audio.size() ? audio[s - d] : av.pad());
    }
    if (!ok) return {"delay-alignment", false, "trial " + std::to_string(trial)};
  }
  return {"delay-alignment", true, "500 random pairs"};
}

SuiteResult streaming_suite() {
  flowdec::FlowConfig cfg;
  cfg.chunk_size = 10;
  cfg.n_mels = 8;
  cfg.hidden = 32;
  cfg.n_tokens = 20;
  const flowdec::FlowModel model(cfg, 8);
  Rng rng(9);
  for (int u = 0; u < 20; ++u) {
    std::vector<int> tokens(1 + rng.below(80));
    for (auto& t : tokens) t = static_cast<int>(rng.below(cfg.n_tokens));
    const auto speaker = model.speaker(0);
    if (!same_bits(flowdec::synthesize_stream(model, tokens, speaker, u), flowdec::synthesize_offline(model, tokens, speaker, u))) {
      return {"streaming-equivalence", false, "utterance " + std::to_string(u)};
    }
  }
  return {"streaming-equivalence", true, "20 utterances bit-equal"};
}

SuiteResult lora_suite() {
  ParamStore store;
  Rng rng(10);
  nn::Linear lin(store, "probe", 6, 5, rng);
  const Tensor x = init::normal(rng, {9, 6}, 1.0);
  const Tensor plain = lin.forward(x);
  lin.attach_lora(store, 2, 4.0, rng);
  if (!same_bits(plain.values(), lin.forward(x).values())) return {"lora-identity", false, "B = 0 changed outputs"};
  for (auto& v : store.get("probe.lora_b").mutable_values()) v = rng.normal();
  const Tensor merged = lin.merged_weight();
  double worst = 0.0;
  for (int p = 0; p < 100; ++p) {
    const Tensor probe = init::normal(rng, {1, 6}, 1.0);
    const Tensor y = lin.forward(probe), z = add(matmul(probe, merged), lin.bias());
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y.at(i) - z.at(i)));
  }
  return {"lora-identity", worst < 1e-9, "merge max diff " + fmt("%.2e", worst)};
}

SuiteResult freeze_suite() {
  const auto cfg = toy_lm();
  duolm::DuoLm m(cfg, toy_frontend(cfg.d_model), duolm::Stage::S2st, 11);
  Rng rng(12);
  std::vector<duolm::Example> batch{toy_example(rng, cfg, 2), toy_example(rng, cfg, 3)};
  const auto before = m.params().snapshot();
  AdamWConfig oc;
  oc.lr = 1e-2;
  duolm::Trainer t(m, oc);
  for (int s = 0; s < 3; ++s) t.step(batch);
  const auto after = m.params().snapshot();
  std::size_t changed = 0;
  for (const auto& [name, v] : before) {
    const bool moved = !same_bits(v, after.at(name));
    if (moved != duolm::is_adaptation_param(name)) {
      return {"freeze-policy", false, name + (moved ? " changed" : " did not train")};
    }
    changed += moved;
  }
  return {"freeze-policy", true, std::to_string(changed) + " adaptation tensors moved"};
}

}  // namespace

std::vector<Suite> suites() {
  return {{"grad-check", grad_suite},           {"fsq-bijection", fsq_suite},
          {"delay-alignment", delay_suite},     {"streaming-equivalence", streaming_suite},
          {"lora-identity", lora_suite},        {"freeze-policy", freeze_suite}};
}

std::vector<SuiteResult> run_all(const std::function<void(const SuiteResult&)>& on_result) {
  std::vector<SuiteResult> out;
  for (const auto& s : suites()) {
    SuiteResult r;
    try {
      r = s.run();
    } catch (const std::exception& e) {
      r = {s.name, false, std::string("exception: ") + e.what()};
    }
    if (on_result) on_result(r);
    out.push_back(r);
  }
  return out;
}

}  // namespace s2st::verify
