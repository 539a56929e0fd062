#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tkgd/tkgd.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tkgd;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file of key = value lines");
    cmd->add_option("--set", sets, "Override one config key (key=value, repeatable)");
    cmd->add_option("--seed", seed, "Random seed");
  }

  engine::TrainConfig resolve() const {
    engine::TrainConfig c = config_path.empty() ? engine::TrainConfig{} : engine::TrainConfig::load(config_path);
    for (const auto& s : sets) c.apply_override(s);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::vector<evaluate::Stratum> parse_strata(const std::vector<std::string>& names) {
  std::vector<evaluate::Stratum> out;
  for (const auto& n : names) {
    const auto s = evaluate::parse_stratum(n);
    if (s != evaluate::Stratum::all && std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

corpus::Split parse_split(const std::string& s) {
  if (s == "train") return corpus::Split::train;
  if (s == "valid") return corpus::Split::valid;
  if (s == "test") return corpus::Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, valid or test)");
}

json epoch_json(const engine::EpochMetrics& m) {
  json j = m.to_json();
  j.erase("wall_seconds");  // keeps the metrics log reproducible
  return j;
}

void report_epoch(const std::string& label, const engine::EpochMetrics& m, std::size_t total) {
  std::fprintf(stderr, "[%s] epoch %zu/%zu stage %zu loss %.6f", label.c_str(), m.epoch, total, m.stage, m.loss_total);
  if (!std::isnan(m.val_mrr)) std::fprintf(stderr, " val_mrr %.4f", m.val_mrr);
  std::fprintf(stderr, " (%.1fs)\n", m.wall_seconds);
}

// ---- prepare

int cmd_prepare(const std::vector<std::string>& inputs, const std::string& out) {
  corpus::QuadStore store;
  if (inputs.size() == 1 && fs::is_directory(inputs[0])) {
    const fs::path d = inputs[0];
    store = corpus::load_quads(d / "train.txt", d / "valid.txt", d / "test.txt");
  } else if (inputs.size() == 1) {
    store = corpus::load_quads(inputs[0]);
  } else if (inputs.size() == 3) {
    store = corpus::load_quads(inputs[0], inputs[1], inputs[2]);
  } else {
    throw ConfigError("prepare takes one file, one directory or three files (train, valid, test)");
  }
  corpus::write_bundle(store, out);
  std::cout << corpus::bundle_stats(store).dump(2) << "\n";
  return 0;
}

// ---- train

int cmd_train(const ConfigFlags& flags, const std::string& data, const std::string& out, bool resume,
              std::optional<std::size_t> max_epochs) {
  const auto config = flags.resolve();
  const auto store = corpus::read_bundle(data);
  const fs::path run = fs::path(out) / config.run_name();
  fs::create_directories(run);
  const fs::path last = run / "last.ckpt", best = run / "best.ckpt", log = run / "metrics.jsonl";

  std::optional<engine::Trainer> trainer;
  std::vector<std::string> log_lines;
  if (resume && fs::exists(last)) {
    auto ckpt = engine::load_checkpoint(last);
    if (ckpt.model.config.hash() != config.hash() || ckpt.model.config.seed != config.seed)
      throw ConfigError("checkpoint in '" + run.string() + "' was written with a different config");
    std::optional<engine::Model> best_model;
    if (fs::exists(best)) best_model = engine::load_checkpoint(best).model;
    const std::size_t done = ckpt.state.epoch;
    trainer.emplace(store, std::move(ckpt), std::move(best_model));
    std::ifstream in(log);
    for (std::string line; log_lines.size() < done && std::getline(in, line);) log_lines.push_back(line);
    std::fprintf(stderr, "resuming %s at epoch %zu\n", run.string().c_str(), done);
  } else {
    trainer.emplace(store, config);
  }
  write_text(run / "config.json", config.to_json().dump(2) + "\n");

  auto flush_log = [&] {
    std::string text;
    for (const auto& l : log_lines) text += l + "\n";
    write_text(log, text);
  };
  flush_log();
  const std::size_t total = config.total_epochs();
  trainer->run(
      [&](const engine::EpochMetrics& m, const engine::Trainer& t) {
        report_epoch("train", m, total);
        log_lines.push_back(epoch_json(m).dump());
        flush_log();
        engine::save_checkpoint(t.checkpoint(), last);
        if (t.checkpoint().state.best_epoch == m.epoch || std::isnan(m.val_mrr)) {
          engine::Checkpoint b = t.checkpoint();
          b.model = t.best_model();
          engine::save_checkpoint(b, best);
        }
      },
      max_epochs.value_or(SIZE_MAX));
  if (!fs::exists(best)) {
    engine::Checkpoint b = trainer->checkpoint();
    b.model = trainer->best_model();
    engine::save_checkpoint(b, best);
  }
  std::cout << run.string() << "\n";
  return 0;
}

// ---- eval

struct EvalFlags {
  std::string data, checkpoint, split = "test", component = "combined", out;
  std::vector<std::string> strata;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains;
  bool per_query = false;
};

std::vector<evaluate::Component> parse_components(const std::string& s) {
  using evaluate::Component;
  if (s == "combined" || s == "full") return {Component::combined};
  if (s == "diffusion" || s == "gndiff") return {Component::diffusion};
  if (s == "dpcl") return {Component::dpcl};
  if (s == "all") return {Component::combined, Component::diffusion, Component::dpcl};
  throw ConfigError("unknown component '" + s + "' (expected combined, diffusion, dpcl or all)");
}

int cmd_eval(const EvalFlags& f) {
  if (!fs::exists(f.checkpoint)) throw DataError("checkpoint '" + f.checkpoint + "' does not exist");
  const auto ckpt = engine::load_checkpoint(f.checkpoint);
  const auto store = corpus::read_bundle(f.data);
  if (ckpt.model.dpcl.num_entities() != store.num_entities() ||
      ckpt.model.dpcl.num_relations() != store.num_relations())
    throw DataError("checkpoint vocabulary does not match the dataset");
  const corpus::PeriodicIndex index(store, ckpt.model.config.lambda);
  const auto entropy = corpus::TokenEntropy::from_store(store);
  const evaluate::Evaluator ev(ckpt.model, store, index, entropy);
  const auto split = parse_split(f.split);
  const auto strata = parse_strata(f.strata);

  json reports = json::array();
  std::vector<evaluate::TableRow> rows;
  for (auto component : parse_components(f.component)) {
    evaluate::EvalOptions opts;
    opts.component = component;
    opts.seed = f.seed.value_or(ckpt.model.config.seed);
    opts.chains = f.chains;
    for (const auto& rep : ev.evaluate_split(split, strata, opts)) {
      reports.push_back(rep.to_json(f.per_query));
      rows.push_back({std::string(evaluate::component_name(component)) + " [" + evaluate::stratum_name(rep.stratum) + "]",
                      rep.metrics});
    }
  }
  const fs::path out = f.out.empty() ? fs::path(f.checkpoint).parent_path() : fs::path(f.out);
  const json doc{{"checkpoint", f.checkpoint}, {"split", f.split}, {"reports", reports}};
  write_text(out / ("eval-" + f.split + ".json"), doc.dump(2) + "\n");
  std::cout << evaluate::format_table(rows);
  return 0;
}

// ---- ablate / sweep

int cmd_ablate(const ConfigFlags& flags, const std::string& data, const std::string& out,
               const std::vector<std::string>& strata_names, const std::string& split_name) {
  const auto config = flags.resolve();
  const auto store = corpus::read_bundle(data);
  const auto strata = parse_strata(strata_names);
  const auto rows = evaluate::ablation_table(config, store, parse_split(split_name), strata,
                                             [&](const std::string& label, const engine::EpochMetrics& m) {
                                               report_epoch(label, m, config.total_epochs());
                                             });
  json doc = json::array();
  std::string text;
  for (std::size_t k = 0; k < rows.front().reports.size(); ++k) {
    std::vector<evaluate::TableRow> table;
    for (const auto& r : rows) table.push_back({r.label, r.reports[k].metrics});
    text += std::string("stratum: ") + evaluate::stratum_name(rows.front().reports[k].stratum) + "\n";
    text += evaluate::format_table(table) + "\n";
  }
  for (const auto& r : rows) {
    json reps = json::array();
    for (const auto& rep : r.reports) reps.push_back(rep.to_json());
    doc.push_back({{"label", r.label}, {"config", r.config.to_json()}, {"reports", reps}});
  }
  const fs::path run = fs::path(out) / config.run_name();
  write_text(run / "ablate.json", doc.dump(2) + "\n");
  write_text(run / "ablate.txt", text);
  std::cout << text;
  return 0;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& data, const std::string& out, const std::string& param,
              const std::string& split_name) {
  const auto config = flags.resolve();
  evaluate::sweep_grid(param);  // rejects unknown parameters before loading data
  const auto store = corpus::read_bundle(data);
  const auto rows = evaluate::sweep(config, store, param, parse_split(split_name),
                                    [&](const std::string& label, const engine::EpochMetrics& m) {
                                      report_epoch(param + "=" + label, m, config.total_epochs());
                                    });
  std::ostringstream csv;
  csv << param << ",mrr,hits@1,hits@3,hits@10\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics();
    char line[160];
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f\n", r.label.c_str(), m.mrr, m.hits1, m.hits3, m.hits10);
    csv << line;
  }
  const fs::path run = fs::path(out) / config.run_name();
  write_text(run / ("sweep-" + param + ".csv"), csv.str());
  std::cout << csv.str();
  return 0;
}

// ---- extract-new

int cmd_extract_new(const std::string& data, const std::string& out) {
  const auto store = corpus::read_bundle(data);
  const auto fresh = corpus::extract_new_events(store);
  corpus::write_bundle(fresh, out);
  json j;
  for (auto s : {corpus::Split::train, corpus::Split::valid, corpus::Split::test})
    j[corpus::split_name(s)] = {{"all", store.split(s).size()}, {"new", fresh.split(s).size()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---- export-embeddings

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string near_matches(const corpus::Vocabulary& vocab, const std::string& name) {
  std::vector<std::pair<std::size_t, std::string>> scored;
  for (const auto& n : vocab.names()) scored.emplace_back(edit_distance(name, n), n);
  std::sort(scored.begin(), scored.end());
  std::string out;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, scored.size()); ++i) out += (i ? ", " : "") + scored[i].second;
  return out;
}

int cmd_export(const std::string& checkpoint, const std::string& data, const std::vector<std::string>& entities,
               const std::string& out) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint '" + checkpoint + "' does not exist");
  const auto ckpt = engine::load_checkpoint(checkpoint);
  const auto store = corpus::read_bundle(data);
  const auto& vocab = store.entities();
  if (ckpt.model.dpcl.num_entities() != vocab.size()) throw DataError("checkpoint vocabulary does not match the dataset");
  std::vector<std::string> names = entities;
  if (names.empty()) names = vocab.names();
  const Tensor& table = ckpt.model.dpcl.entity;
  std::ostringstream csv;
  csv << "entity,space";
  for (std::size_t k = 0; k < table.cols(); ++k) csv << ",x" << k + 1;
  csv << "\n";
  char buf[32];
  for (const auto& name : names) {
    if (!vocab.contains(name))
      throw DataError("unknown entity '" + name + "'; near matches: " + near_matches(vocab, name));
    const auto row = table.row(vocab.id_of(name));
    const std::vector<double> raw(row.begin(), row.end());
    const auto ball = geometry::project_to_ball(raw);
    for (const auto& [space, v] : {std::pair<const char*, const std::vector<double>*>{"euclidean", &raw},
                                   std::pair<const char*, const std::vector<double>*>{"poincare", &ball}}) {
      csv << name << "," << space;
      for (double x : *v) {
        std::snprintf(buf, sizeof buf, ",%.17g", x);
        csv << buf;
      }
      csv << "\n";
    }
  }
  if (out.empty()) std::cout << csv.str();
  else write_text(out, csv.str());
  return 0;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  return kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal knowledge graph link prediction with dual-domain contrastive learning and graph diffusion"};
  app.require_subcommand(1);

  std::vector<std::string> prep_inputs;
  std::string prep_out;
  auto* prepare = app.add_subcommand("prepare", "Encode quad files into a dataset bundle");
  prepare->add_option("inputs", prep_inputs, "One file, a directory with train/valid/test.txt, or three files")
      ->required();
  prepare->add_option("--out", prep_out, "Bundle directory")->required();

  ConfigFlags train_flags;
  std::string train_data, train_out = "runs";
  bool train_resume = false;
  std::optional<std::size_t> train_max_epochs;
  auto* train = app.add_subcommand("train", "Train a model");
  train_flags.attach(train);
  train->add_option("--data", train_data, "Dataset bundle")->required();
  train->add_option("--out", train_out, "Parent of the run directory");
  train->add_flag("--resume", train_resume, "Continue from the run directory's last checkpoint");
  train->add_option("--max-epochs", train_max_epochs, "Stop after this many epochs in this invocation");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", ef.data, "Dataset bundle")->required();
  eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", ef.split, "train, valid or test");
  eval->add_option("--strata", ef.strata, "Extra strata: all, new, periodic (repeatable)");
  eval->add_option("--component", ef.component, "combined, diffusion, dpcl or all");
  eval->add_option("--seed", ef.seed, "Seed for diffusion chains (default: the training seed)");
  eval->add_option("--chains", ef.chains, "Reverse chains per query (default: C)");
  eval->add_option("--out", ef.out, "Report directory (default: the checkpoint's directory)");
  eval->add_flag("--per-query", ef.per_query, "Include per-query ranks in the JSON report");

  ConfigFlags ablate_flags;
  std::string ablate_data, ablate_out = "runs", ablate_split = "test";
  std::vector<std::string> ablate_strata;
  auto* ablate = app.add_subcommand("ablate", "Ablations and mapping strategies");
  ablate_flags.attach(ablate);
  ablate->add_option("--data", ablate_data, "Dataset bundle")->required();
  ablate->add_option("--out", ablate_out, "Parent of the run directory");
  ablate->add_option("--strata", ablate_strata, "Extra strata: new, periodic (repeatable)");
  ablate->add_option("--split", ablate_split, "Evaluated split");

  ConfigFlags sweep_flags;
  std::string sweep_data, sweep_out = "runs", sweep_param, sweep_split = "test";
  auto* sweep = app.add_subcommand("sweep", "Sweep alpha or lambda");
  sweep_flags.attach(sweep);
  sweep->add_option("--data", sweep_data, "Dataset bundle")->required();
  sweep->add_option("--out", sweep_out, "Parent of the run directory");
  sweep->add_option("--param", sweep_param, "alpha or lambda")->required();
  sweep->add_option("--split", sweep_split, "Evaluated split");

  std::string xn_data, xn_out;
  auto* extract = app.add_subcommand("extract-new", "Keep only first occurrences of each triple");
  extract->add_option("--data", xn_data, "Dataset bundle")->required();
  extract->add_option("--out", xn_out, "Output bundle directory")->required();

  std::string ex_ckpt, ex_data, ex_out;
  std::vector<std::string> ex_entities;
  auto* exportcmd = app.add_subcommand("export-embeddings", "Write entity coordinates in both spaces as CSV");
  exportcmd->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  exportcmd->add_option("--data", ex_data, "Dataset bundle")->required();
  exportcmd->add_option("--entity", ex_entities, "Entity name (repeatable; default: all)");
  exportcmd->add_option("--out", ex_out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(prep_inputs, prep_out);
    if (*train) return cmd_train(train_flags, train_data, train_out, train_resume, train_max_epochs);
    if (*eval) return cmd_eval(ef);
    if (*ablate) return cmd_ablate(ablate_flags, ablate_data, ablate_out, ablate_strata, ablate_split);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_data, sweep_out, sweep_param, sweep_split);
    if (*extract) return cmd_extract_new(xn_data, xn_out);
    if (*exportcmd) return cmd_export(ex_ckpt, ex_data, ex_entities, ex_out);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << e.kind() << ": " << msg << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
