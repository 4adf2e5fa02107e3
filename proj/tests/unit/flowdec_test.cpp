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

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "s2st/flowdec/flowdec.hpp"
#include "s2st/numerics/gradcheck.hpp"
#include "support/flow_fixtures.hpp"
#include "support/test_util.hpp"

using namespace s2st::flowdec;
using namespace s2st::num;
using s2st::testing::bit_equal;
using s2st::testing::small_flow;
using s2st::testing::TempDir;

namespace {

std::vector<int> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng.below(vocab));
  return t;
}

ChunkCond zero_cond(const FlowConfig& cfg, std::vector<int> tokens) {
  return {std::move(tokens), std::vector<double>(cfg.cond_dim, 0.0),
          std::vector<double>(cfg.lookback_frames * cfg.n_mels, 0.0)};
}

}  // namespace

// ---- chunking ----

TEST(ChunkTokens, SizesAndRoundTrip) {
  std::vector<int> t25(25), t10(10);
  for (int i = 0; i < 25; ++i) t25[i] = i;
  const auto c = chunk_tokens(t25, 10);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].size(), 10u);
  EXPECT_EQ(c[1].size(), 10u);
  EXPECT_EQ(c[2].size(), 5u);
  EXPECT_EQ(chunk_tokens(t10, 10).size(), 1u);
  EXPECT_THROW(chunk_tokens(std::vector<int>{}, 10), std::invalid_argument);
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto tokens = random_tokens(rng, 1 + rng.below(200), 125);
    const auto chunks = chunk_tokens(tokens, 10);
    std::vector<int> joined;
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      if (k + 1 < chunks.size()) {
        EXPECT_EQ(chunks[k].size(), 10u);
      }
      EXPECT_GE(chunks[k].size(), 1u);
      joined.insert(joined.end(), chunks[k].begin(), chunks[k].end());
    }
    EXPECT_EQ(joined, tokens);
    EXPECT_EQ(chunks.size(), (tokens.size() + 9) / 10);
  }
}

TEST(Config, DefaultsAndValidation) {
  FlowConfig c;
  EXPECT_EQ(c.chunk_size, 10u);
  EXPECT_NO_THROW(c.validate());
  c.chunk_size = 0;
  EXPECT_THROW(c.validate(), s2st::ConfigError);
  c = FlowConfig{};
  c.n_mels = 40;  // top bin 11900 Hz is above Nyquist at 16 kHz
  EXPECT_THROW(c.validate(), s2st::ConfigError);
  EXPECT_THROW(nlohmann::json({{"chunk", 3}}).get<FlowConfig>(), s2st::ConfigError);
  const FlowConfig back = nlohmann::json(FlowConfig{}).get<FlowConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(FlowConfig{}));
}

// ---- flow matching ----

TEST(Cfm, PathArithmetic) {
  const FlowConfig cfg = small_flow();
  CfmExample ex{Tensor::from({1, 2}, {2.0, 2.0}), zero_cond(cfg, {0})};
  std::vector<double> seen_x;
  double seen_t = -1.0;
  const VelocityFn spy = [&](const Tensor& x, double t, const ChunkCond&) {
    seen_x.assign(x.values().begin(), x.values().end());
    seen_t = t;
    return Tensor::from({1, 2}, {2.0, 2.0});
  };
  const Tensor loss = cfm_loss_at(ex, Tensor::zeros({1, 2}), 0.5, spy);
  EXPECT_EQ(seen_t, 0.5);
  EXPECT_EQ(seen_x, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(loss.item(), 0.0);  // the spy returned exactly x1 - x0
}

TEST(Cfm, OracleVelocityGivesZeroLoss) {
  const FlowConfig cfg = small_flow();
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    CfmExample ex{init::normal(rng, {4, cfg.n_mels}, 1.0), zero_cond(cfg, {1, 2})};
    const Tensor x0 = init::normal(rng, {4, cfg.n_mels}, 1.0);
    const VelocityFn oracle = [&](const Tensor&, double, const ChunkCond&) { return sub(ex.x1, x0); };
    EXPECT_EQ(cfm_loss_at(ex, x0, rng.uniform(), oracle).item(), 0.0);
  }
  CfmExample bad{Tensor::zeros({2, 3}), zero_cond(cfg, {0})};
  const VelocityFn zero = [](const Tensor& x, double, const ChunkCond&) { return scale(x, 0.0); };
  EXPECT_THROW(cfm_loss_at(bad, Tensor::zeros({2, 4}), 0.3, zero), ShapeError);
  const VelocityFn wrong = [](const Tensor&, double, const ChunkCond&) { return Tensor::zeros({1, 1}); };
  EXPECT_THROW(cfm_loss_at(bad, Tensor::zeros({2, 3}), 0.3, wrong), ShapeError);
}

TEST(Cfm, GradCheckThroughVelocityNetwork) {
  const FlowConfig cfg = small_flow();
  FlowModel model(cfg, 3);
  Rng rng(4);
  std::vector<CfmExample> batch;
  batch.push_back({init::normal(rng, {6, cfg.n_mels}, 1.0),
                   {{1, 2, 3}, std::vector<double>(cfg.cond_dim, 0.3), std::vector<double>(8, -0.2)}});
  batch.push_back({init::normal(rng, {2, cfg.n_mels}, 1.0), zero_cond(cfg, {6})});
  auto fn = [&](std::span<const Tensor>) {
    Rng fixed(5);  // same t and x0 for every evaluation
    return cfm_loss(batch, fixed, model.field());
  };
  const auto res = grad_check_detailed(fn, model.params().trainable(), 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Cfm, EulerOnSimpleFields) {
  const FlowConfig cfg = small_flow();
  const ChunkCond cond = zero_cond(cfg, {0, 1});
  for (std::size_t steps : {1u, 3u, 10u, 64u}) {
    Rng a(9), b(9);
    const Tensor x0 = init::normal(b, {4, cfg.n_mels}, 1.0);
    const Tensor z = cfm_sample(cond, 4, cfg.n_mels, a, steps,
                                [](const Tensor& x, double, const ChunkCond&) { return scale(x, 0.0); });
    EXPECT_TRUE(bit_equal(z.values(), x0.values()));
    Rng c(9);
    const Tensor k = cfm_sample(cond, 4, cfg.n_mels, c, steps, [](const Tensor& x, double, const ChunkCond&) {
      return Tensor::full(x.shape(), 1.25);
    });
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k.at(i), x0.at(i) + 1.25, 1e-12);
  }
  EXPECT_THROW(cfm_sample(cond, 4, cfg.n_mels, *std::make_unique<Rng>(1), 0,
                          [](const Tensor& x, double, const ChunkCond&) { return x; }),
               std::invalid_argument);
}

TEST(Cfm, OracleFieldIntegratesToTarget) {
  const FlowConfig cfg = small_flow();
  const ChunkCond cond = zero_cond(cfg, {0});
  Rng t(10);
  const Tensor x1 = init::normal(t, {2, cfg.n_mels}, 2.0);
  for (std::size_t steps : {1u, 10u}) {
    Rng draw(11), copy(11);
    const Tensor x0 = init::normal(copy, {2, cfg.n_mels}, 1.0);
    const Tensor out = cfm_sample(cond, 2, cfg.n_mels, draw, steps,
                                  [&](const Tensor&, double, const ChunkCond&) { return sub(x1, x0); });
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out.at(i), x1.at(i), 1e-12) << steps;
  }
}

TEST(Cfm, PointMassTraining) {
  const auto res = s2st::testing::point_mass_experiment();
  std::printf("point mass: loss %.5f mean err %.4f std %.4f\n", res.final_loss, res.max_mean_error, res.max_std);
  EXPECT_LT(res.max_mean_error, 0.1);
  EXPECT_LT(res.max_std, 0.2);
}

// ---- streaming ----

TEST(Stream, MatchesOfflineAndEmitsInOrder) {
  const FlowConfig cfg = small_flow();
  FlowModel model(cfg, 12);
  Rng rng(13);
  for (int u = 0; u < 50; ++u) {
    const std::size_t chunks = 1 + rng.below(8);
    const std::size_t n = (chunks - 1) * cfg.chunk_size + 1 + rng.below(cfg.chunk_size);
    const auto tokens = random_tokens(rng, n, cfg.n_tokens);
    const auto speaker = make_speaker_prompt(cfg, static_cast<int>(rng.below(3)), 14);
    const std::uint64_t seed = rng.below(1000000);
    std::vector<std::size_t> order;
    const auto streamed = synthesize_stream(model, tokens, speaker, seed, [&](const MelChunk& c) {
      order.push_back(c.chunk_index);
      const std::size_t expect = order.size() < chunks ? cfg.chunk_frames() : (n - (chunks - 1) * cfg.chunk_size) * 2;
      EXPECT_EQ(c.frames, expect);
    });
    const auto offline = synthesize_offline(model, tokens, speaker, seed);
    EXPECT_TRUE(bit_equal(streamed, offline)) << "utterance " << u;
    ASSERT_EQ(order.size(), chunks);
    for (std::size_t k = 0; k < order.size(); ++k) EXPECT_EQ(order[k], k);
    EXPECT_EQ(offline.size(), n * cfg.frames_per_token * cfg.n_mels);
  }
}

TEST(Stream, FirstChunkSeesZeroHistory) {
  const FlowConfig cfg = small_flow();
  const auto w = lookback_window(cfg, {});
  EXPECT_EQ(w, std::vector<double>(cfg.lookback_frames * cfg.n_mels, 0.0));
  std::vector<double> one_frame(cfg.n_mels, 7.0);
  const auto w1 = lookback_window(cfg, one_frame);
  for (std::size_t i = 0; i < w1.size(); ++i) EXPECT_EQ(w1[i], i < cfg.n_mels ? 0.0 : 7.0);
  FlowModel model(cfg, 15);
  const auto speaker = make_speaker_prompt(cfg, 0, 1);
  const std::vector<int> toks{1, 2};
  const MelChunk a = synthesize_chunk(model, toks, 0, speaker, {}, 3);
  const MelChunk b = synthesize_chunk(model, toks, 0, speaker, std::vector<double>(cfg.n_mels * 9, 0.0), 3);
  EXPECT_TRUE(bit_equal(a.values, b.values));
}

TEST(Stream, CausalityUnderLaterPerturbation) {
  const FlowConfig cfg = small_flow();
  FlowModel model(cfg, 16);
  Rng rng(17);
  const auto speaker = make_speaker_prompt(cfg, 1, 2);
  for (int trial = 0; trial < 10; ++trial) {
    auto tokens = random_tokens(rng, 4 * cfg.chunk_size + 2, cfg.n_tokens);
    const auto before = synthesize_offline(model, tokens, speaker, 5);
    const std::size_t j = 1 + rng.below(4);
    for (std::size_t i = j * cfg.chunk_size; i < tokens.size(); ++i) {
      tokens[i] = static_cast<int>((tokens[i] + 1 + rng.below(cfg.n_tokens - 1)) % cfg.n_tokens);
    }
    const auto after = synthesize_offline(model, tokens, speaker, 5);
    const std::size_t keep = j * cfg.chunk_frames() * cfg.n_mels;
    EXPECT_TRUE(bit_equal(std::span(before).first(keep), std::span(after).first(keep)));
    EXPECT_FALSE(bit_equal(std::span(before).subspan(keep, cfg.n_mels), std::span(after).subspan(keep, cfg.n_mels)));
  }
}

TEST(Stream, InvalidTokensAndDeterminism) {
  const FlowConfig cfg = small_flow();
  FlowModel model(cfg, 18);
  const auto speaker = make_speaker_prompt(cfg, 0, 1);
  EXPECT_THROW(synthesize_stream(model, std::vector<int>{1, 99}, speaker, 1), std::out_of_range);
  EXPECT_THROW(synthesize_stream(model, std::vector<int>{-1}, speaker, 1), std::out_of_range);
  EXPECT_THROW(synthesize_offline(model, std::vector<int>{7}, speaker, 1), std::out_of_range);
  EXPECT_THROW(synthesize_stream(model, std::vector<int>{}, speaker, 1), std::invalid_argument);
  const std::vector<int> toks{0, 1, 2, 3, 4};
  EXPECT_TRUE(bit_equal(synthesize_stream(model, toks, speaker, 9), synthesize_stream(model, toks, speaker, 9)));
  EXPECT_FALSE(bit_equal(synthesize_stream(model, toks, speaker, 9), synthesize_stream(model, toks, speaker, 10)));
}

// ---- targets and checkpoint ----

TEST(MelTable, RenderAndTeacherForcedChunks) {
  FlowConfig cfg = small_flow();
  const MelTable table = make_mel_table(cfg, 2, 3);
  const std::vector<int> toks{2, 0, 2, 5};
  const auto m0 = table.render(toks, 0);
  const auto m1 = table.render(toks, 1);
  ASSERT_EQ(m0.size(), toks.size() * cfg.frames_per_token * cfg.n_mels);
  for (std::size_t i = 0; i < cfg.frames_per_token * cfg.n_mels; ++i) {
    EXPECT_EQ(m0[i], table.patterns[2 * cfg.frames_per_token * cfg.n_mels + i]);
    EXPECT_EQ(m0[i], m0[2 * cfg.frames_per_token * cfg.n_mels + i]);
    EXPECT_NEAR(m1[i] - m0[i], table.speaker_shift[cfg.n_mels + i % cfg.n_mels], 1e-12);
  }
  EXPECT_THROW(table.render(toks, 2), std::out_of_range);
  const auto speaker = make_speaker_prompt(cfg, 0, 1);
  const auto ex = chunk_examples(cfg, toks, m0, speaker);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].cond.lookback, std::vector<double>(cfg.lookback_frames * cfg.n_mels, 0.0));
  const std::size_t tail = cfg.lookback_frames * cfg.n_mels;
  const std::size_t first = cfg.chunk_frames() * cfg.n_mels;
  EXPECT_EQ(ex[1].cond.lookback, std::vector<double>(m0.begin() + first - tail, m0.begin() + first));
  EXPECT_EQ(ex[1].x1.rows(), cfg.frames_per_token);
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir("flow");
  const FlowConfig cfg = small_flow();
  FlowModel a(cfg, 19);
  a.save(dir.path(), 3);
  const FlowModel b = FlowModel::load(dir.path());
  const auto speaker = make_speaker_prompt(cfg, 0, 1);
  const std::vector<int> toks{3, 1, 4, 1, 5};
  EXPECT_TRUE(bit_equal(synthesize_offline(a, toks, speaker, 2), synthesize_offline(b, toks, speaker, 2)));
  EXPECT_EQ(a.speaker(0).embedding, b.speaker(0).embedding);
  EXPECT_EQ(a.params().trainable_names().size() + 1, a.params().names().size());
  EXPECT_THROW(a.speaker(1), std::out_of_range);
}

// ---- pseudo-vocoder ----

TEST(Vocoder, SilenceLengthAndPeak) {
  const std::size_t n_mels = 16;
  for (std::size_t frames : {1u, 2u, 7u}) {
    std::vector<double> floor(frames * n_mels, kMelFloor);
    floor[0] = -INFINITY;
    const auto s = pseudo_vocoder(floor, n_mels, 16000);
    EXPECT_EQ(s.size(), kHop * (frames - 1) + kWindow);
    for (double v : s) EXPECT_EQ(v, 0.0);
  }
  Rng rng(20);
  std::vector<double> mel(9 * n_mels);
  for (auto& v : mel) v = -3.0 + rng.normal();
  const auto s = pseudo_vocoder(mel, n_mels, 16000);
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, kPeak, 1e-15);
  EXPECT_TRUE(bit_equal(s, pseudo_vocoder(mel, n_mels, 16000)));
  EXPECT_THROW(pseudo_vocoder({}, n_mels, 16000), std::invalid_argument);
  EXPECT_THROW(pseudo_vocoder(std::vector<double>(5, 0.0), n_mels, 16000), ShapeError);
  mel[3] = NAN;
  EXPECT_THROW(pseudo_vocoder(mel, n_mels, 16000), std::invalid_argument);
}

TEST(Vocoder, SingleBinPeakFrequency) {
  const std::size_t n_mels = 16, frames = 20, sr = 16000;
  for (std::size_t bin : {0u, 3u, 9u, 15u}) {
    std::vector<double> mel(frames * n_mels, kMelFloor);
    for (std::size_t f = 0; f < frames; ++f) mel[f * n_mels + bin] = -1.0;
    const auto s = pseudo_vocoder(mel, n_mels, sr);
    // Naive DFT magnitude over the positive half spectrum.
    const std::size_t n = s.size();
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t k = 1; k < n / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += s[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / n);
      }
      if (std::abs(acc) > best_mag) {
        best_mag = std::abs(acc);
        best = k;
      }
    }
    const double resolution = static_cast<double>(sr) / n;
    EXPECT_NEAR(best * resolution, 200.0 + 300.0 * bin, resolution) << "bin " << bin;
  }
}

TEST(Wav, RoundTripAndHeader) {
  TempDir dir("wav");
  const std::vector<double> samples{0.0, 0.5, -0.5, 0.99, -0.99, 1.5};
  write_wav(dir.path() / "a.wav", samples, 16000);
  const std::string bytes = s2st::testing::read_file(dir.path() / "a.wav");
  ASSERT_EQ(bytes.size(), 44 + 2 * samples.size());
  EXPECT_EQ(bytes.substr(0, 4), "RIFF");
  EXPECT_EQ(bytes.substr(8, 8), "WAVEfmt ");
  EXPECT_EQ(bytes.substr(36, 4), "data");
  std::size_t sr = 0;
  const auto back = read_wav(dir.path() / "a.wav", &sr);
  EXPECT_EQ(sr, 16000u);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) EXPECT_NEAR(back[i], samples[i], 1.0 / 32767);
  EXPECT_EQ(back.back(), 1.0);  // clipped
}
