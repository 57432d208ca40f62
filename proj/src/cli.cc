// Copyright 2026 The QVI Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qvi/cli.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qvi/config.h"
#include "qvi/data.h"
#include "qvi/error.h"
#include "qvi/gradcheck_suite.h"
#include "qvi/model.h"
#include "qvi/text.h"
#include "qvi/train.h"
#include "qvi/version.h"

namespace qvi {
namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::vector<std::string> sets;
};

void AddCommon(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Run configuration file (INI)")
      ->check(CLI::ExistingFile);
  f.seed_opt = cmd->add_option("--seed", f.seed, "Shorthand for --set train.seed=N");
  cmd->add_option("--set", f.sets,
                  "Override one setting, section.key=value (repeatable)")
      ->take_all()
      ->allow_extra_args(false);
}

RunSpec LoadSpec(const CommonFlags& f) {
  std::vector<std::string> overrides = f.sets;
  if (f.seed_opt->count()) overrides.push_back("train.seed=" + std::to_string(f.seed));
  return f.config.empty() ? ParseRunSpec("", overrides)
                          : LoadRunSpec(f.config, overrides);
}

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

fs::path MakeRunDir(const RunSpec& spec, const std::string& command) {
  const char* env = std::getenv("QVI_OUT_DIR");
  fs::path root = env && *env ? fs::path(env) : fs::path(spec.output.dir);
  const std::string name =
      spec.output.name.empty() ? command + "-" + ConfigHash(spec) : spec.output.name;
  fs::path dir = root / name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create run directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void WriteRunFiles(const fs::path& dir, const RunSpec& spec,
                   const std::string& command) {
  OpenOut(dir / "config.ini") << CanonicalConfig(spec);
  std::ofstream repro = OpenOut(dir / "repro.txt");
  repro << "command = " << command << "\n"
        << "config_hash = " << ConfigHash(spec) << "\n"
        << "seed = " << spec.train.seed << "\n"
        << "data_seed = " << spec.data_seed() << "\n"
        << "build = " << BuildId() << "\n";
}

// Writes each line to the run log and echoes it to `out`.
class RunLog {
 public:
  RunLog(const fs::path& path, std::ostream& out) : file_(OpenOut(path)), out_(out) {}
  void operator()(const std::string& line) {
    file_ << line << "\n";
    file_.flush();
    out_ << line << "\n";
  }

 private:
  std::ofstream file_;
  std::ostream& out_;
};

std::string Fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---- commands --------------------------------------------------------------

int CmdTrain(const CommonFlags& flags, std::ostream& out) {
  RunSpec spec = LoadSpec(flags);
  LoadedData data = PrepareData(spec);
  const fs::path dir = MakeRunDir(spec, "train");
  WriteRunFiles(dir, spec, "train");
  RunLog log(dir / "train.log", out);
  log("run directory: " + dir.string());
  log("model: " + std::string(ToString(spec.model.kind)) + ", value_fn " +
      std::string(ToString(spec.model.attention.value_fn)) + ", " +
      std::to_string(data.train.size()) + " train / " +
      std::to_string(data.val.size()) + " val examples");
  Model model(spec.model, spec.train.seed);
  RunResult result;
  try {
    result = Fit(model, data.train, data.val, spec.train, std::ref(log));
  } catch (const NonFiniteError& e) {
    log(std::string("aborted: ") + e.what());
    throw;
  }
  {
    std::ofstream metrics = OpenOut(dir / "metrics.tsv");
    WriteMetricsTable(metrics, {AblationRun{spec.model.attention.value_fn,
                                            spec.train.seed, result}});
  }
  {
    std::ofstream ck = OpenOut(dir / "checkpoint.qvi");
    WriteCheckpoint(ck, model, data.vocab ? &*data.vocab : nullptr);
  }
  log("best epoch " + std::to_string(result.best_epoch) + ": accuracy " +
      Fixed(result.best_accuracy) + ", macro_f1 " + Fixed(result.best_macro_f1) +
      (result.early_stopped ? " (early stop)" : ""));
  return kExitOk;
}

Dataset LoadEvalData(const std::string& path, const Checkpoint& ck) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  std::string first;
  std::getline(in, first);
  in.clear();
  in.seekg(0);
  if (first.rfind("# qvi-synth", 0) == 0) return ReadSynthDataset(in);
  if (first.rfind("# qvi-tokens", 0) == 0) return ReadTokenDataset(in);
  if (!ck.vocab) {
    throw DataError("'" + path +
                    "' is a text corpus but the checkpoint carries no vocabulary");
  }
  CorpusOptions opts;
  opts.max_len = ck.config.max_len;
  opts.num_classes = ck.config.num_classes;
  return ParseTsvCorpus(in, &*ck.vocab, opts).dataset;
}

int CmdEval(const std::string& checkpoint_path, const std::string& data_path,
            std::size_t batch_size, std::ostream& out) {
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + checkpoint_path + "'");
  Checkpoint ck = ReadCheckpoint(in);
  Model model = RestoreModel(ck);
  Dataset ds = LoadEvalData(data_path, ck);
  for (const Example& e : ds.examples) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= ck.config.num_classes) {
      throw DataError("label " + std::to_string(e.label) +
                      " is outside the model's " +
                      std::to_string(ck.config.num_classes) + " classes");
    }
  }
  ds.num_classes = ck.config.num_classes;
  Metrics m = Evaluate(model, ds, batch_size);
  out << "examples\t" << ds.size() << "\n"
      << "accuracy\t" << Fixed(m.accuracy, 6) << "\n"
      << "macro_f1\t" << Fixed(m.macro_f1, 6) << "\n"
      << "loss\t" << Fixed(m.loss, 6) << "\n";
  return kExitOk;
}

int CmdGradcheck(const std::string& scope, std::uint64_t seed, bool inject_fault,
                 std::ostream& out) {
  GradcheckOptions opts;
  if (inject_fault) opts.analytic_bias = 1e-3;
  GradcheckSuiteResult r = RunGradcheckSuite(ParseGradcheckScope(scope), seed, opts);
  char line[160];
  for (const GradcheckCase& c : r.cases) {
    std::snprintf(line, sizeof(line), "%-48s %.3e  %s\n", c.name.c_str(),
                  c.report.max_rel_error, c.passed ? "ok" : "FAIL");
    out << line;
  }
  std::size_t failed = 0;
  for (const GradcheckCase& c : r.cases) failed += !c.passed;
  std::snprintf(line, sizeof(line),
                "%zu cases, %zu failed, max relative error %.3e (tolerance %.0e)\n",
                r.cases.size(), failed, r.max_rel_error(), kGradcheckTolerance);
  out << line;
  return r.passed() ? kExitOk : kExitFailure;
}

int CmdAblate(const CommonFlags& flags, std::ostream& out) {
  RunSpec spec = LoadSpec(flags);
  LoadedData data = PrepareData(spec);
  const fs::path dir = MakeRunDir(spec, "ablate");
  WriteRunFiles(dir, spec, "ablate");
  RunLog log(dir / "train.log", out);
  log("run directory: " + dir.string());
  AblationSpec as;
  as.model = spec.model;
  as.train = spec.train;
  as.variants = spec.ablation.variants;
  as.seeds = spec.ablation.seeds;
  as.threads = spec.ablation.threads;
  AblationResult result;
  try {
    result = RunAblation(as, data.train, data.val, std::ref(log));
  } catch (const NonFiniteError& e) {
    log(std::string("aborted: ") + e.what());
    throw;
  }
  {
    std::ofstream metrics = OpenOut(dir / "metrics.tsv");
    WriteMetricsTable(metrics, result.runs);
  }
  std::ostringstream table;
  WriteAblationTable(table, result.rows);
  OpenOut(dir / "ablation.tsv") << table.str();
  out << table.str();
  return kExitOk;
}

int CmdSynth(const CommonFlags& flags, const std::string& task,
             std::optional<std::size_t> n, const std::string& out_path,
             std::ostream& out) {
  std::vector<std::string> extra;
  if (!task.empty()) extra.push_back("data.source=" + task);
  if (n) extra.push_back("data.n_train=" + std::to_string(*n));
  CommonFlags f = flags;
  f.sets.insert(f.sets.end(), extra.begin(), extra.end());
  RunSpec spec = LoadSpec(f);
  const DataSpec& d = spec.data;
  const std::uint64_t seed = spec.data_seed();
  std::ostringstream buf;
  switch (d.source) {
    case DataSource::kGatedRetrieval:
      WriteSynthDataset(buf, GenGatedRetrieval(d.n_train, d.length, d.dim, seed),
                        {"gated_retrieval", seed});
      break;
    case DataSource::kTokenRetrieval: {
      Dataset ds;
      try {
        ds = GenTokenRetrieval(d.n_train, d.length, d.vocab_size, seed, d.num_classes);
      } catch (const ContractError& e) {
        throw ConfigError("data.vocab_size", e.what());
      }
      WriteTokenDataset(buf, ds, d.vocab_size, {"token_retrieval", seed});
      break;
    }
    default:
      throw ConfigError("data.source", "synth needs gated_retrieval or token_retrieval");
  }
  if (out_path == "-") {
    out << buf.str();
  } else {
    OpenOut(out_path) << buf.str();
  }
  return kExitOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Query-value interaction attention: training and verification", "qvi"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");
  app.footer(
      "Exit codes: 0 ok, 1 runtime or gradient check failure, 2 bad config "
      "or usage, 3 non-finite value during training.\n"
      "QVI_OUT_DIR overrides output.dir as the root of run directories.");

  CommonFlags train_flags, ablate_flags, synth_flags;
  CLI::App* train = app.add_subcommand("train", "Train one model and write a run directory");
  AddCommon(train, train_flags);

  std::string checkpoint, data_path;
  std::size_t eval_batch = 256;
  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.qvi from a train run")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", data_path,
                   "Dataset: a qvi-synth or qvi-tokens dump, or a label<TAB>text corpus")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--batch-size", eval_batch, "Evaluation batch size")
      ->check(CLI::PositiveNumber);

  std::string scope = "all";
  std::uint64_t gc_seed = 1;
  bool inject_fault = false;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gradcheck->add_option("--scope", scope, "ops, attention, models or all")
      ->check(CLI::IsMember({"ops", "attention", "models", "all"}));
  gradcheck->add_option("--seed", gc_seed, "Seed for the random inputs");
  gradcheck->add_flag("--inject-fault", inject_fault,
                      "Perturb one analytic gradient entry per case (must fail)");

  CLI::App* ablate =
      app.add_subcommand("ablate", "Train every [ablation] variant x seed and tabulate");
  AddCommon(ablate, ablate_flags);

  std::string task, synth_out;
  std::size_t synth_n = 0;
  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic dataset dump");
  AddCommon(synth, synth_flags);
  synth->add_option("--task", task, "gated_retrieval or token_retrieval (data.source)")
      ->check(CLI::IsMember({"gated_retrieval", "token_retrieval"}));
  CLI::Option* n_opt = synth->add_option("--n", synth_n, "Number of examples (data.n_train)");
  synth->add_option("--out", synth_out, "Output path, '-' for stdout")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return CmdTrain(train_flags, out);
    if (*eval) return CmdEval(checkpoint, data_path, eval_batch, out);
    if (*gradcheck) return CmdGradcheck(scope, gc_seed, inject_fault, out);
    if (*ablate) return CmdAblate(ablate_flags, out);
    if (*synth) {
      return CmdSynth(synth_flags, task,
                      n_opt->count() ? std::optional<std::size_t>(synth_n) : std::nullopt,
                      synth_out, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NonFiniteError& e) {
    err << "non-finite value: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace qvi
