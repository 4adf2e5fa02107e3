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

// s2st: command-line driver for data generation, training, translation,
// evaluation and the invariant suites.
//
// Exit codes: 0 success, 1 usage, configuration or input error,
// 2 invariant-suite failure (verify).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "s2st/io/container.hpp"
#include "s2st/pipeline/pipeline.hpp"
#include "s2st/verify/suites.hpp"

namespace fs = std::filesystem;
using namespace s2st;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitSuiteFailure = 2;

// Relative output paths resolve under $S2ST_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& out) {
  const fs::path p(out);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("S2ST_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

pipeline::RunConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
  pipeline::RunConfig cfg = path.empty() ? pipeline::RunConfig{} : pipeline::load_run_config(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

pipeline::Progress progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& stage, std::uint64_t step, std::uint64_t total, double loss) {
    if (step % 100 == 0 || step == total) {
      std::fprintf(stderr, "[%s] step %llu/%llu loss %.5f\n", stage.c_str(), static_cast<unsigned long long>(step),
                   static_cast<unsigned long long>(total), loss);
    }
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale direct speech-to-speech translation pipeline"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the default configuration as JSON and exit");

  std::string config_path, data_dir, out, base, model, flow, input, pred, ref;
  std::optional<std::uint64_t> seed;
  bool wav = false, quiet = false;
  std::optional<std::size_t> max_steps;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  add_config(gen);
  gen->add_option("--out", out, "Corpus directory")->required();

  auto* tok = app.add_subcommand("train-tokenizer", "Train the FSQ speech tokenizer");
  add_config(tok);
  tok->add_option("--data", data_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  tok->add_option("--out", out, "Checkpoint directory")->required();

  auto* pre = app.add_subcommand("pretrain-base", "Train the speech-to-text base model");
  add_config(pre);
  pre->add_option("--data", data_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", out, "Checkpoint directory")->required();
  pre->add_flag("--quiet", quiet, "No progress output");

  auto* s2st_cmd = app.add_subcommand("train-s2st", "Adapt the base model to joint text/speech output");
  add_config(s2st_cmd);
  s2st_cmd->add_option("--base", base, "Base checkpoint")->required()->check(CLI::ExistingDirectory);
  s2st_cmd->add_option("--data", data_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  s2st_cmd->add_option("--out", out, "Checkpoint directory")->required();
  s2st_cmd->add_flag("--quiet", quiet, "No progress output");

  auto* flow_cmd = app.add_subcommand("train-flow", "Train the streaming flow-matching speech decoder");
  add_config(flow_cmd);
  flow_cmd->add_option("--data", data_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  flow_cmd->add_option("--out", out, "Checkpoint directory")->required();
  flow_cmd->add_flag("--quiet", quiet, "No progress output");

  auto* tr = app.add_subcommand("translate", "Translate a manifest");
  add_config(tr);
  tr->add_option("--model", model, "Adapted checkpoint")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--flow", flow, "Flow decoder checkpoint")->check(CLI::ExistingDirectory);
  tr->add_option("--input", input, "Manifest to translate")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--max-steps", max_steps, "Decoding step limit (overrides the config)");
  tr->add_flag("--wav", wav, "Also synthesize WAV files");

  auto* ev = app.add_subcommand("eval", "Score predictions");
  ev->add_option("--pred", pred, "Directory holding predictions.jsonl")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--ref", ref, "Reference manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "Report directory")->required();

  auto* ver = app.add_subcommand("verify", "Run the invariant suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (print_config) {
      std::cout << nlohmann::json(pipeline::RunConfig{}).dump(2) << '\n';
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return kExitUsage;
    }
    if (gen->parsed()) {
      const auto cfg = resolve_config(config_path, seed);
      const auto info = pipeline::gen_data(cfg, output_path(out));
      std::printf("corpus %s written to %s\n", info.config_hash.c_str(), output_path(out).c_str());
    } else if (tok->parsed()) {
      const auto cfg = resolve_config(config_path, seed);
      const auto res = pipeline::train_tokenizer(cfg, data_dir, output_path(out));
      std::printf("tokenizer frame accuracy %.4f\n", res.final_accuracy);
    } else if (pre->parsed()) {
      const auto cfg = resolve_config(config_path, seed);
      const auto rows = pipeline::pretrain_base(cfg, data_dir, output_path(out), progress_printer(quiet));
      std::printf("base model: %zu steps, final loss %.5f\n", rows.size(), rows.empty() ? 0.0 : rows.back().total);
    } else if (s2st_cmd->parsed()) {
      const auto cfg = resolve_config(config_path, seed);
      const auto rows = pipeline::train_s2st(cfg, base, data_dir, output_path(out), progress_printer(quiet));
      std::printf("s2st model: %zu steps, final loss %.5f\n", rows.size(), rows.empty() ? 0.0 : rows.back().total);
    } else if (flow_cmd->parsed()) {
      const auto cfg = resolve_config(config_path, seed);
      const auto rows = pipeline::train_flow(cfg, data_dir, output_path(out), progress_printer(quiet));
      std::printf("flow decoder: %zu steps, final loss %.5f\n", rows.size(), rows.empty() ? 0.0 : rows.back().total);
    } else if (tr->parsed()) {
      const auto cfg = resolve_config(config_path, seed);
      pipeline::TranslateOptions opts;
      opts.decode = cfg.decode;
      if (max_steps) opts.decode.max_steps = *max_steps;
      opts.wav = wav;
      opts.seed = cfg.seed;
      const auto preds = pipeline::translate(model, flow, input, output_path(out), opts);
      std::printf("translated %zu utterances\n", preds.size());
    } else if (ev->parsed()) {
      const auto r = pipeline::evaluate(pred, ref, output_path(out));
      std::printf("bleu %.2f asr_bleu %.2f align_wer %.4f (%zu utterances, %zu truncated)\n", r.bleu, r.asr_bleu,
                  r.align_wer, r.n_utterances, r.truncated);
    } else if (ver->parsed()) {
      bool ok = true;
      verify::run_all([&](const verify::SuiteResult& r) {
        std::printf("%-22s %s  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.detail.c_str());
        std::fflush(stdout);
        ok = ok && r.passed;
      });
      return ok ? kExitOk : kExitSuiteFailure;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitOk;
}
