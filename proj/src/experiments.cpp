// SPDX-License-Identifier: Apache-2.0

#include "gret/experiments.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gret/checkpoint.hpp"
#include "gret/param_count.hpp"

namespace gret::experiments {
namespace fs = std::filesystem;

std::string config_hash(const ModelConfig& cfg) {
  return to_hex(cfg.architecture_fingerprint()).substr(0, 16);
}

std::string snapshot(const RunSpec& spec) {
  std::ostringstream os;
  os << "# experiment " << spec.experiment << "\n";
  for (const auto& [k, v] : spec.model.fields()) os << k << " = " << v << "\n";
  for (const auto& [k, v] : spec.task.fields()) os << k << " = " << v << "\n";
  os << "steps = " << spec.steps << "\n"
     << "batch_size = " << spec.batch_size << "\n"
     << "lr_scale = " << format_double(spec.lr_scale) << "\n"
     << "beam = " << spec.decode.beam << "\n"
     << "alpha = " << format_double(spec.decode.alpha) << "\n"
     << "max_len = " << spec.decode.max_len << "\n";
  if (!spec.init.empty()) os << "init = " << spec.init << "\n";
  return os.str();
}

TrainedRun train_run(const RunSpec& spec, metrics::CsvLog* log) {
  auto cfg = spec.model;
  cfg.vocab = spec.task.vocab;
  TrainedRun run;
  run.model = std::make_unique<GretModel>(cfg);
  if (!spec.init.empty()) checkpoint::load_init(spec.init, *run.model);
  if (!spec.out_dir.empty()) {
    fs::create_directories(spec.out_dir);
    std::ofstream(fs::path(spec.out_dir) / "config.txt") << snapshot(spec);
  }
  const auto corpus = task::generate(spec.task, task::Split::kTrain);
  const std::string hash = config_hash(cfg);

  train::TrainOptions opts;
  opts.steps = spec.steps;
  opts.batch_size = spec.batch_size;
  opts.lr_scale = spec.lr_scale;
  opts.on_step = [&](std::size_t step, double loss) {
    if (log && (step % spec.log_every == 0 || step == spec.steps)) {
      log->write({spec.experiment, hash, std::to_string(step), "train_loss", loss, 0});
    }
  };
  if (!spec.out_dir.empty() && spec.checkpoint_every) {
    opts.checkpoint_every = spec.checkpoint_every;
    opts.on_checkpoint = [&](std::size_t step) {
      checkpoint::save((fs::path(spec.out_dir) / ("step-" + std::to_string(step) + ".bin")).string(),
                       *run.model, run.adam);
    };
  }
  run.losses = train::train(*run.model, run.adam, corpus, opts);
  if (!spec.out_dir.empty()) {
    checkpoint::save((fs::path(spec.out_dir) / "checkpoint.bin").string(), *run.model, run.adam);
  }
  return run;
}

std::vector<std::vector<int>> references(std::span<const task::Example> data) {
  std::vector<std::vector<int>> out;
  for (const auto& ex : data) out.emplace_back(ex.target.begin() + 1, ex.target.end() - 1);
  return out;
}

EvalResult evaluate(const GretModel& model, std::span<const task::Example> data,
                    const decode::DecodeOptions& opts, bool timed) {
  std::vector<std::vector<int>> sources;
  for (const auto& ex : data) sources.push_back(ex.source);
  const auto t0 = std::chrono::steady_clock::now();
  const auto hyps = timed ? decode::serial::decode_corpus(model, sources, opts)
                          : decode::decode_corpus(model, sources, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EvalResult r;
  std::size_t generated = 0;
  for (const auto& h : hyps) {
    generated += h.tokens.size();
    r.outputs.push_back(decode::strip_eos(h.tokens));
  }
  const auto refs = references(data);
  r.bleu = metrics::bleu(r.outputs, refs);
  r.exact_match = metrics::exact_match(r.outputs, refs);
  r.loss = train::evaluate_loss(model, data);
  r.tokens_per_second = secs > 0 ? static_cast<double>(generated) / secs : 0.0;
  return r;
}

std::vector<GretFlags> ablation_grid() {
  return {GretFlags{false, false, false}, GretFlags{true, false, false}, GretFlags{true, true, false},
          GretFlags{true, false, true},   GretFlags{false, true, false}, GretFlags{false, true, true},
          GretFlags{false, false, true},  GretFlags{true, true, true}};
}

namespace {

std::string cell_dir(const RunSpec& base, const std::string& name) {
  return base.out_dir.empty() ? "" : (fs::path(base.out_dir) / name).string();
}

}  // namespace

std::vector<AblationRow> ablate(const RunSpec& base, const std::vector<std::uint64_t>& seeds,
                                metrics::CsvLog* log) {
  if (seeds.empty()) throw ContractError("ablate: no seeds");
  const auto test = task::generate(base.task, task::Split::kTest);
  std::vector<AblationRow> rows;
  double base_speed = 0.0;
  for (const auto& flags : ablation_grid()) {
    AblationRow row;
    row.flags = flags;
    double speed = 0.0;
    for (auto seed : seeds) {
      RunSpec spec = base;
      spec.experiment = "ablate";
      spec.model.flags = flags;
      spec.model.seed = seed;
      spec.out_dir = cell_dir(base, flags.str() + "-seed" + std::to_string(seed));
      auto run = train_run(spec, nullptr);
      const auto ev = evaluate(*run.model, test, spec.decode, true);
      row.config_hash = config_hash(run.model->config());
      row.params = run.model->params().scalar_count();
      row.bleu += ev.bleu / static_cast<double>(seeds.size());
      speed += ev.tokens_per_second / static_cast<double>(seeds.size());
      if (log) log->write({"ablate/" + flags.str(), row.config_hash, "seed" + std::to_string(seed), "bleu", ev.bleu, 0});
    }
    if (rows.empty()) base_speed = speed;
    row.relative_speed = base_speed > 0 ? speed / base_speed : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepCell> sweep_capsules(const RunSpec& base, const std::vector<std::size_t>& ks,
                                      const std::vector<std::size_t>& rs,
                                      const std::vector<std::uint64_t>& seeds,
                                      metrics::CsvLog* log) {
  if (seeds.empty()) throw ContractError("sweep-capsules: no seeds");
  const auto test = task::generate(base.task, task::Split::kTest);
  std::vector<SweepCell> cells;
  for (auto k : ks) {
    for (auto r : rs) {
      SweepCell cell{k, r, 0.0};
      for (auto seed : seeds) {
        RunSpec spec = base;
        spec.experiment = "sweep";
        spec.model.capsules = k;
        spec.model.routing_iters = r;
        spec.model.seed = seed;
        spec.out_dir = cell_dir(base, "K" + std::to_string(k) + "-r" + std::to_string(r) + "-seed" +
                                          std::to_string(seed));
        auto run = train_run(spec, nullptr);
        const auto ev = evaluate(*run.model, test, spec.decode);
        cell.bleu += ev.bleu / static_cast<double>(seeds.size());
        if (log) {
          log->write({"sweep/K" + std::to_string(k) + "/r" + std::to_string(r),
                      config_hash(run.model->config()), "seed" + std::to_string(seed), "bleu", ev.bleu, 0});
        }
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<LengthBucket> default_buckets() { return {{2, 5}, {6, 10}, {11, 15}, {16, 20}}; }

std::vector<LengthBucket> length_buckets(const GretModel& model,
                                         std::span<const task::Example> data,
                                         const decode::DecodeOptions& opts,
                                         std::vector<LengthBucket> buckets) {
  for (auto& b : buckets) {
    std::vector<task::Example> members;
    for (const auto& ex : data) {
      if (ex.content_length() >= b.lo && ex.content_length() <= b.hi) members.push_back(ex);
    }
    b.count = members.size();
    if (members.empty()) continue;
    const auto ev = evaluate(model, members, opts);
    b.bleu = ev.bleu;
    b.exact_match = ev.exact_match;
  }
  return buckets;
}

}  // namespace gret::experiments
