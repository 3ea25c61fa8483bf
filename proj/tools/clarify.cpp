// Command-line front end: dataset generation and import, training,
// evaluation and the HTTP session service.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "clarify/checkpoint.hpp"
#include "clarify/corpus/dataset.hpp"
#include "clarify/corpus/synthetic.hpp"
#include "clarify/evaluation.hpp"
#include "clarify/gateway.hpp"
#include "clarify/training.hpp"

namespace fs = std::filesystem;
using namespace clarify;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct DataGenOptions {
  std::size_t scenes = 0;
  double ambiguity_rate = 0.0;
  std::uint64_t seed = 0;
  fs::path out;
  double validation_fraction = 0.1;
  std::optional<std::size_t> validation_scenes;
  std::size_t min_objects = 6;
  std::size_t max_objects = 10;
};

int gen_data(const DataGenOptions& o) {
  SyntheticConfig cfg;
  cfg.scene_count = o.scenes;
  cfg.ambiguity_rate = o.ambiguity_rate;
  cfg.min_objects = o.min_objects;
  cfg.max_objects = o.max_objects;
  double fraction = o.validation_fraction;
  if (o.validation_scenes) {
    if (*o.validation_scenes == 0 || *o.validation_scenes >= o.scenes) {
      throw ConfigError("--validation-scenes must lie in [1, scenes - 1]");
    }
    fraction = static_cast<double>(*o.validation_scenes) / static_cast<double>(o.scenes);
  }
  auto split = split_dataset(generate_synthetic_dataset(cfg, o.seed), fraction, o.seed);
  save_dataset(o.out, split);
  std::cout << "wrote " << split.train.size() << " train and " << split.validation.size() << " validation scenes to "
            << o.out.string() << "\n";
  return 0;
}

struct ImportOptions {
  fs::path from, out;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

int import_data(const ImportOptions& o) {
  ImportResult r = import_external(o.from);
  const auto& st = r.stats;
  std::cout << "records " << st.records << ", scenes " << st.scenes << ", skipped records " << st.skipped_records
            << ", dropped objects " << st.dropped_objects << ", dropped instructions " << st.dropped_instructions << "\n";
  if (r.scenes.empty()) throw InputError("no usable scenes under '" + o.from.string() + "'");
  if (r.scenes.size() == 1) {
    save_dataset(o.out, DatasetSplit{std::move(r.scenes), {}});
  } else {
    save_dataset(o.out, split_dataset(std::move(r.scenes), o.validation_fraction, o.seed));
  }
  std::cout << "wrote " << o.out.string() << "\n";
  return 0;
}

struct TrainOptions {
  fs::path data, config, out, log;
  std::optional<std::uint64_t> seed;
  std::size_t progress_every = 100;
};

int train_model(const TrainOptions& o) {
  TrainingConfig cfg = o.config.empty() ? TrainingConfig::desk() : training_config_from_json(read_json_file(o.config));
  if (o.seed) cfg.seed = *o.seed;
  const auto scenes = load_dataset(o.data, "train");
  if (scenes.empty()) throw InputError("no training scenes in '" + o.data.string() + "'");
  std::cerr << "training on " << scenes.size() << " scenes for " << cfg.iterations << " iterations\n";
  double margin_avg = 0, dest_avg = 0;
  TrainResult result = train(scenes, cfg, [&](const LogRecord& r) {
    margin_avg += r.margin_loss;
    dest_avg += r.dest_loss;
    if (o.progress_every && r.iteration % o.progress_every == 0) {
      std::cerr << "iter " << r.iteration << "  margin " << margin_avg / o.progress_every << "  dest "
                << dest_avg / o.progress_every << "  lr " << r.lr << "\n";
      margin_avg = dest_avg = 0;
    }
  });
  const bool objectness =
      cfg.train_objectness && std::all_of(scenes.begin(), scenes.end(), [](const Scene& s) { return s.image != nullptr; });
  save_checkpoint(o.out, result.model,
                  {{"training", to_json(cfg)},
                   {"objectness_trained", objectness},
                   {"train_scenes", scenes.size()}});
  if (!o.log.empty()) {
    std::ofstream log(o.log);
    if (!log) throw IoError("cannot write '" + o.log.string() + "'");
    write_training_log(log, result.log);
  }
  std::cout << "saved " << o.out.string() << " after " << result.seconds << " s\n";
  return 0;
}

struct EvalOptions {
  fs::path data, ckpt, report;
  std::string split = "validation";
  bool simulate = false;
  bool single = false;
  double m_obj = 0.1, m_box = 0.1;
};

int eval_model(const EvalOptions& o) {
  const LoadedCheckpoint ck = load_checkpoint(o.ckpt);
  const auto scenes = load_dataset(o.data, o.split);
  if (scenes.empty()) throw InputError("no '" + o.split + "' scenes in '" + o.data.string() + "'");
  SimulationConfig sim;
  sim.m_obj = o.m_obj;
  sim.m_box = o.m_box;
  sim.simulate_clarification = o.simulate;
  sim.max_clarifications = o.single ? 1 : 2;
  EvalReport report = run_simulated_clarification(scenes, ck.model, sim).report;
  const bool has_images = std::all_of(scenes.begin(), scenes.end(), [](const Scene& s) { return s.image != nullptr; });
  if (ck.manifest.value("objectness_trained", false) && has_images) {
    report.detection_ap = detection_average_precision(scenes, ck.model.objectness());
  }
  fs::create_directories(o.report);
  write_text(o.report / "report.json", emit_report(report, ReportFormat::Json));
  write_text(o.report / "report.csv", emit_report(report, ReportFormat::Csv));
  std::cout << emit_report(report, ReportFormat::Table);
  return 0;
}

struct ServeOptions {
  fs::path ckpt, scenes;
  std::string host = "127.0.0.1";
  int port = 8080;
  double idle_minutes = 30.0;
  double m_obj = 0.1, m_box = 0.1;
  std::uint64_t seed = 0;
};

std::atomic<httplib::Server*> g_server{nullptr};

void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

int serve(const ServeOptions& o) {
  auto model = std::make_shared<const GroundingModel>(load_checkpoint(o.ckpt).model);
  std::vector<Scene> scenes = o.scenes.empty() ? std::vector<Scene>{} : load_scene_directory(o.scenes);
  GatewayConfig cfg;
  cfg.dialogue.m_obj = o.m_obj;
  cfg.dialogue.m_box = o.m_box;
  cfg.seed = o.seed;
  if (!(o.idle_minutes > 0)) throw ConfigError("--idle-timeout must be positive");
  cfg.idle_timeout = std::chrono::milliseconds(static_cast<long long>(o.idle_minutes * 60000.0));
  Gateway gateway(model, std::move(scenes), cfg);

  httplib::Server server;
  gateway.mount(server);
  const int port = resolve_port(o.port);
  const int bound = port == 0 ? server.bind_to_any_port(o.host) : (server.bind_to_port(o.host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + o.host + ":" + std::to_string(port));
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cout << "listening on http://" << o.host << ":" << bound << std::endl;
  const bool ok = server.listen_after_bind();
  g_server = nullptr;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded pick-and-place instructions with clarification dialogue"};
  app.require_subcommand(1);

  DataGenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--ambiguity-rate", gen.ambiguity_rate, "Probability an instruction is made ambiguous")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  auto* frac = gen_cmd->add_option("--validation-fraction", gen.validation_fraction, "Share of validation scenes");
  gen_cmd->add_option("--validation-scenes", gen.validation_scenes, "Exact number of validation scenes")->excludes(frac);
  gen_cmd->add_option("--min-objects", gen.min_objects, "Fewest objects per scene");
  gen_cmd->add_option("--max-objects", gen.max_objects, "Most objects per scene");

  ImportOptions imp;
  auto* imp_cmd = app.add_subcommand("import", "Convert external annotations into a dataset");
  imp_cmd->add_option("--from", imp.from, "Annotation root")->required();
  imp_cmd->add_option("--out", imp.out, "Output directory")->required();
  imp_cmd->add_option("--validation-fraction", imp.validation_fraction, "Share of validation scenes");
  imp_cmd->add_option("--seed", imp.seed, "Random seed for the split");

  TrainOptions tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a model on the train split");
  tr_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  tr_cmd->add_option("--config", tr.config, "Training config (JSON); without it the desk recipe is used");
  tr_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  tr_cmd->add_option("--log", tr.log, "Training log (JSON lines)");
  tr_cmd->add_option("--seed", tr.seed, "Overrides the config seed");
  tr_cmd->add_option("--progress-every", tr.progress_every, "Iterations between progress lines (0 = quiet)");

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  ev_cmd->add_option("--report", ev.report, "Report directory")->required();
  ev_cmd->add_option("--split", ev.split, "Split to evaluate");
  ev_cmd->add_flag("--simulate-clarification", ev.simulate, "Answer clarification questions from annotations");
  ev_cmd->add_flag("--single-clarification", ev.single, "Allow one clarification instead of two");
  ev_cmd->add_option("--m-obj", ev.m_obj, "Object ambiguity margin")->check(CLI::NonNegativeNumber);
  ev_cmd->add_option("--m-box", ev.m_box, "Box ambiguity margin")->check(CLI::NonNegativeNumber);

  ServeOptions sv;
  auto* sv_cmd = app.add_subcommand("serve", "Run the HTTP session service");
  sv_cmd->add_option("--ckpt", sv.ckpt, "Checkpoint path")->required();
  sv_cmd->add_option("--scenes", sv.scenes, "Scene directory");
  sv_cmd->add_option("--host", sv.host, "Bind address");
  sv_cmd->add_option("--port", sv.port, "Port (0 picks a free one; CLARIFY_PORT overrides)")->check(CLI::Range(0, 65535));
  sv_cmd->add_option("--idle-timeout", sv.idle_minutes, "Session idle expiry in minutes");
  sv_cmd->add_option("--m-obj", sv.m_obj, "Object ambiguity margin")->check(CLI::NonNegativeNumber);
  sv_cmd->add_option("--m-box", sv.m_box, "Box ambiguity margin")->check(CLI::NonNegativeNumber);
  sv_cmd->add_option("--seed", sv.seed, "Seed for session ids and default synthetic scenes");
  sv_cmd->set_config("--config", "", "Optional INI/TOML file with the options above");

  auto* schema_cmd = app.add_subcommand("schema", "Print the API response schema");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen_cmd) return gen_data(gen);
    if (*imp_cmd) return import_data(imp);
    if (*tr_cmd) return train_model(tr);
    if (*ev_cmd) return eval_model(ev);
    if (*sv_cmd) return serve(sv);
    if (*schema_cmd) {
      std::cout << nlohmann::json::parse(kApiSchema).dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
