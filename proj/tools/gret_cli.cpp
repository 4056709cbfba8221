// SPDX-License-Identifier: Apache-2.0
//
// gret: train, evaluate and analyse GRET models on synthetic tasks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "gret/checkpoint.hpp"
#include "gret/config.hpp"
#include "gret/decode.hpp"
#include "gret/experiments.hpp"
#include "gret/metrics.hpp"
#include "gret/param_count.hpp"
#include "gret/probe.hpp"

namespace fs = std::filesystem;
using namespace gret;

namespace {

constexpr int kUsage = 2;
constexpr int kConfig = 3;
constexpr int kRuntime = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::size_t> steps;
  std::optional<std::string> flags;
  std::optional<std::size_t> capsules;
  std::optional<std::size_t> routing_iters;
  std::optional<std::size_t> beam;
  std::string out;
  std::string init;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "model and training seed");
  app->add_option("--task", c.task, "copy, reverse or toy-translate");
  app->add_option("--steps", c.steps, "optimizer steps");
  app->add_option("--flags", c.flags, "comma list of capsule,aggregate,gate (or none)");
  app->add_option("--capsules", c.capsules, "number of capsules K");
  app->add_option("--routing-iters", c.routing_iters, "routing iterations r");
  app->add_option("--beam", c.beam, "beam size");
  app->add_option("--out", c.out, "run directory (default runs/<subcommand>)");
  app->add_option("--init", c.init, "checkpoint to start from / to evaluate");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(out);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

void apply(experiments::RunSpec& spec, const std::string& key, const std::string& v) {
  if (spec.model.set(key, v) || spec.task.set(key, v)) return;
  if (key == "steps") spec.steps = to_size(key, v);
  else if (key == "batch_size") spec.batch_size = to_size(key, v);
  else if (key == "lr_scale") spec.lr_scale = to_double(key, v);
  else if (key == "log_every") spec.log_every = std::max<std::size_t>(1, to_size(key, v));
  else if (key == "checkpoint_every") spec.checkpoint_every = to_size(key, v);
  else if (key == "beam") spec.decode.beam = to_size(key, v);
  else if (key == "alpha") spec.decode.alpha = to_double(key, v);
  else if (key == "max_len") spec.decode.max_len = to_size(key, v);
  else if (key == "init") spec.init = v;
  else throw ConfigError(key, "unknown config key");
}

experiments::RunSpec resolve(const Common& c, const std::string& sub, bool reuse_run_config) {
  experiments::RunSpec spec;
  spec.experiment = sub;
  spec.out_dir = c.out.empty() ? (fs::path("runs") / sub).string() : c.out;
  if (sub == "length-buckets") spec.task.max_len = 20;

  std::string config_path = c.config;
  if (config_path.empty() && reuse_run_config && fs::exists(fs::path(spec.out_dir) / "config.txt")) {
    config_path = (fs::path(spec.out_dir) / "config.txt").string();
  }
  if (!config_path.empty()) {
    for (const auto& [k, v] : load_key_values(config_path)) apply(spec, k, v);
  }
  if (c.seed) spec.model.seed = *c.seed;
  if (c.task) spec.task.kind = task::parse_kind(*c.task);
  if (c.steps) spec.steps = *c.steps;
  if (c.flags) spec.model.flags = GretFlags::parse(*c.flags);
  if (c.capsules) spec.model.capsules = *c.capsules;
  if (c.routing_iters) spec.model.routing_iters = *c.routing_iters;
  if (c.beam) spec.decode.beam = *c.beam;
  if (!c.init.empty()) spec.init = c.init;
  spec.experiment = sub;
  if (spec.decode.beam == 0) throw ConfigError("beam", "must be at least 1");
  spec.model.vocab = spec.task.vocab;
  spec.model.validate();
  spec.task.validate();
  return spec;
}

void write_snapshot(const experiments::RunSpec& spec, const std::string& name) {
  fs::create_directories(spec.out_dir);
  std::ofstream(fs::path(spec.out_dir) / name) << experiments::snapshot(spec);
}

std::string metrics_path(const experiments::RunSpec& spec) {
  fs::create_directories(spec.out_dir);
  return (fs::path(spec.out_dir) / "metrics.csv").string();
}

// Model for evaluation: --init if given, else <out>/checkpoint.bin.
std::unique_ptr<GretModel> load_model(const experiments::RunSpec& spec) {
  const std::string path =
      spec.init.empty() ? (fs::path(spec.out_dir) / "checkpoint.bin").string() : spec.init;
  auto model = std::make_unique<GretModel>(spec.model);
  train::Adam adam;
  checkpoint::load(path, *model, adam);
  return model;
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t n) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(first + i);
  return out;
}

std::string join(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  return s;
}

int cmd_train(const Common& c) {
  auto spec = resolve(c, "train", false);
  metrics::CsvLog log(metrics_path(spec));
  auto run = experiments::train_run(spec, &log);
  const auto valid = task::generate(spec.task, task::Split::kValid);
  const double loss = valid.empty() ? 0.0 : train::evaluate_loss(*run.model, valid);
  log.write({"train", experiments::config_hash(run.model->config()), "valid", "loss", loss, 0});
  std::printf("trained %zu steps, final loss %s, valid loss %s\n", spec.steps,
              metrics::format_value(run.losses.back()).c_str(), metrics::format_value(loss).c_str());
  return 0;
}

int cmd_eval(const Common& c) {
  auto spec = resolve(c, "eval", true);
  write_snapshot(spec, "eval.config.txt");
  auto model = load_model(spec);
  metrics::CsvLog log(metrics_path(spec));
  const auto hash = experiments::config_hash(model->config());
  for (auto split : {task::Split::kValid, task::Split::kTest}) {
    const auto data = task::generate(spec.task, split);
    if (data.empty()) continue;
    const auto ev = experiments::evaluate(*model, data, spec.decode);
    const std::string name = split == task::Split::kTest ? "test" : "valid";
    log.write({"eval", hash, name, "bleu", ev.bleu, 0});
    log.write({"eval", hash, name, "exact_match", ev.exact_match, 0});
    log.write({"eval", hash, name, "loss", ev.loss, 0});
    std::printf("%s: bleu %s exact_match %s loss %s\n", name.c_str(),
                metrics::format_value(ev.bleu).c_str(), metrics::format_value(ev.exact_match).c_str(),
                metrics::format_value(ev.loss).c_str());
  }
  return 0;
}

int cmd_decode(const Common& c, const std::string& input) {
  auto spec = resolve(c, "decode", true);
  write_snapshot(spec, "decode.config.txt");
  auto model = load_model(spec);
  std::vector<std::vector<int>> sources;
  if (input.empty()) {
    for (const auto& ex : task::generate(spec.task, task::Split::kTest)) sources.push_back(ex.source);
  } else {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open '" + input + "'");
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::vector<int> ids;
      for (int id; ls >> id;) ids.push_back(id);
      if (ids.empty()) continue;
      if (ids.back() != tokens::kEos) ids.push_back(tokens::kEos);
      sources.push_back(ids);
    }
  }
  const auto hyps = decode::decode_corpus(*model, sources, spec.decode);
  std::ofstream out(fs::path(spec.out_dir) / "decoded.txt");
  double mean_score = 0.0;
  for (const auto& h : hyps) {
    const auto line = join(decode::strip_eos(h.tokens));
    out << line << "\n";
    std::printf("%s\n", line.c_str());
    mean_score += h.score / static_cast<double>(hyps.size());
  }
  metrics::CsvLog log(metrics_path(spec));
  const auto hash = experiments::config_hash(model->config());
  log.write({"decode", hash, input.empty() ? "test" : "input", "sequences", static_cast<double>(hyps.size()), 0});
  log.write({"decode", hash, input.empty() ? "test" : "input", "mean_score", mean_score, 0});
  return 0;
}

int cmd_probe(const Common& c, const std::string& pooling, const std::vector<std::size_t>& top_k,
              std::size_t probe_steps) {
  auto spec = resolve(c, "probe", true);
  write_snapshot(spec, "probe.config.txt");
  auto model = load_model(spec);
  const auto corpus = task::gen_task(spec.task);
  probe::ProbeOptions opts;
  opts.top_k = top_k;
  opts.steps = probe_steps;
  opts.seed = spec.model.seed;
  std::vector<probe::Pooling> poolings;
  if (pooling == "all") {
    poolings = {probe::Pooling::kGlobal, probe::Pooling::kAverage, probe::Pooling::kLast};
  } else {
    poolings = {probe::parse_pooling(pooling)};
  }
  metrics::CsvLog log(metrics_path(spec));
  const auto hash = experiments::config_hash(model->config());
  for (auto p : poolings) {
    const auto prec = probe::probe_train_eval(*model, corpus, p, opts);
    for (std::size_t i = 0; i < top_k.size(); ++i) {
      log.write({"probe/" + probe::to_string(p), hash, "test", "precision@" + std::to_string(top_k[i]), prec[i], 0});
      std::printf("%s precision@%zu %s\n", probe::to_string(p).c_str(), top_k[i],
                  metrics::format_value(prec[i]).c_str());
    }
  }
  return 0;
}

int cmd_ablate(const Common& c, std::size_t seeds) {
  auto spec = resolve(c, "ablate", false);
  write_snapshot(spec, "ablate.config.txt");
  metrics::CsvLog log(metrics_path(spec));
  const auto rows = experiments::ablate(spec, seed_list(spec.model.seed, seeds), &log);
  std::ofstream summary(fs::path(spec.out_dir) / "ablation.csv");
  summary << "flags,config_hash,params,bleu,relative_speed\n";
  for (const auto& r : rows) {
    const std::string name = "ablate/" + r.flags.str();
    log.write({name, r.config_hash, "test", "bleu", r.bleu, 0});
    log.write({name, r.config_hash, "test", "params", static_cast<double>(r.params), 0});
    log.write({name, r.config_hash, "test", "relative_speed", r.relative_speed, 0});
    summary << metrics::csv_field(r.flags.str()) << "," << r.config_hash << "," << r.params << ","
            << metrics::format_value(r.bleu) << "," << metrics::format_value(r.relative_speed) << "\n";
    std::printf("%-24s params %zu bleu %s speed %s\n", r.flags.str().c_str(), r.params,
                metrics::format_value(r.bleu).c_str(), metrics::format_value(r.relative_speed).c_str());
  }
  return 0;
}

int cmd_sweep(const Common& c, std::size_t seeds, const std::vector<std::size_t>& ks,
              const std::vector<std::size_t>& rs) {
  auto spec = resolve(c, "sweep-capsules", false);
  if (!spec.model.flags.capsule) spec.model.flags.capsule = true;
  write_snapshot(spec, "sweep-capsules.config.txt");
  metrics::CsvLog log(metrics_path(spec));
  const auto cells = experiments::sweep_capsules(spec, ks, rs, seed_list(spec.model.seed, seeds), &log);
  std::ofstream summary(fs::path(spec.out_dir) / "sweep.csv");
  summary << "capsules,routing_iters,bleu\n";
  for (const auto& cell : cells) {
    summary << cell.capsules << "," << cell.iterations << "," << metrics::format_value(cell.bleu) << "\n";
    std::printf("K=%zu r=%zu bleu %s\n", cell.capsules, cell.iterations, metrics::format_value(cell.bleu).c_str());
  }
  return 0;
}

int cmd_length_buckets(const Common& c) {
  auto spec = resolve(c, "length-buckets", false);
  write_snapshot(spec, "length-buckets.config.txt");
  metrics::CsvLog log(metrics_path(spec));
  std::unique_ptr<GretModel> model;
  if (!spec.init.empty()) {
    model = load_model(spec);
  } else {
    model = std::move(experiments::train_run(spec, &log).model);
  }
  const auto test = task::generate(spec.task, task::Split::kTest);
  const auto hash = experiments::config_hash(model->config());
  for (const auto& b : experiments::length_buckets(*model, test, spec.decode)) {
    const std::string bin = std::to_string(b.lo) + "-" + std::to_string(b.hi);
    log.write({"length-buckets", hash, bin, "count", static_cast<double>(b.count), 0});
    if (b.count == 0) continue;
    log.write({"length-buckets", hash, bin, "bleu", b.bleu, 0});
    log.write({"length-buckets", hash, bin, "exact_match", b.exact_match, 0});
    std::printf("[%s] n=%zu bleu %s exact_match %s\n", bin.c_str(), b.count,
                metrics::format_value(b.bleu).c_str(), metrics::format_value(b.exact_match).c_str());
  }
  return 0;
}

int cmd_param_count(const Common& c, bool breakdown) {
  auto spec = resolve(c, "param-count", false);
  write_snapshot(spec, "param-count.config.txt");
  const auto counts = param_count(spec.model);
  std::printf("%zu\n", counts.total);
  if (breakdown) {
    for (const auto& [m, n] : counts.modules) std::printf("  %-8s %zu\n", m.c_str(), n);
  }
  metrics::CsvLog log(metrics_path(spec));
  const auto hash = experiments::config_hash(spec.model);
  log.write({"param-count", hash, "total", "params", static_cast<double>(counts.total), 0});
  for (const auto& [m, n] : counts.modules) {
    log.write({"param-count", hash, m, "params", static_cast<double>(n), 0});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRET: global representation Transformer on synthetic tasks", "gret"};
  app.require_subcommand(1);

  std::map<std::string, Common> common;
  auto sub = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, common[name]);
    return s;
  };

  auto* train = sub("train", "train a model and write checkpoint.bin");
  auto* eval = sub("eval", "BLEU and exact match of a checkpoint");
  auto* dec = sub("decode", "decode the test split or an id file");
  std::string input;
  dec->add_option("--input", input, "one sequence of token ids per line")->check(CLI::ExistingFile);
  auto* prb = sub("probe", "bag-of-words probe of frozen sentence states");
  std::string pooling = "all";
  std::vector<std::size_t> top_k{5, 10, 20};
  std::size_t probe_steps = 1500;
  prb->add_option("--pooling", pooling, "global, average, last or all");
  prb->add_option("--top-k", top_k, "precision cut-offs")->delimiter(',');
  prb->add_option("--probe-steps", probe_steps, "predictor training steps");
  auto* abl = sub("ablate", "8-row flag grid: BLEU, parameter count, relative speed");
  std::size_t seeds = 1;
  abl->add_option("--seeds", seeds, "number of consecutive seeds per cell")->check(CLI::PositiveNumber);
  auto* swp = sub("sweep-capsules", "grid over capsule count and routing iterations");
  std::size_t sweep_seeds = 1;
  std::vector<std::size_t> ks{4, 8, 16, 32}, rs{1, 2, 3, 4, 5};
  swp->add_option("--seeds", sweep_seeds, "number of consecutive seeds per cell")->check(CLI::PositiveNumber);
  swp->add_option("--ks", ks, "capsule counts")->delimiter(',');
  swp->add_option("--rs", rs, "routing iterations")->delimiter(',');
  auto* lb = sub("length-buckets", "evaluation grouped by source length");
  auto* pc = sub("param-count", "scalar parameter count of a config");
  bool breakdown = false;
  pc->add_flag("--breakdown", breakdown, "per-module counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*train) return cmd_train(common["train"]);
    if (*eval) return cmd_eval(common["eval"]);
    if (*dec) return cmd_decode(common["decode"], input);
    if (*prb) return cmd_probe(common["probe"], pooling, top_k, probe_steps);
    if (*abl) return cmd_ablate(common["ablate"], seeds);
    if (*swp) return cmd_sweep(common["sweep-capsules"], sweep_seeds, ks, rs);
    if (*lb) return cmd_length_buckets(common["length-buckets"]);
    if (*pc) return cmd_param_count(common["param-count"], breakdown);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
