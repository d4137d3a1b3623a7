// cfdbench: batch command surface for the benchmark pipeline.
//
// Verbs: gen, ingest, split, train, eval, rollout, profile, report.
// Exit codes: 0 success, 1 pipeline failure (module error text on stderr),
// 2 usage error. Config-file values (JSON) are overridden by explicit flags.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "cfdbench/bench.hpp"
#include "cfdbench/flowgen.hpp"

using json = nlohmann::json;
using namespace cfdbench;

namespace {

using operators::D;

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not readable: " + path);
  json j;
  f >> j;
  return j;
}

// Flag precedence: an explicitly passed CLI option beats the config file,
// which beats the built-in default.
template <typename T>
void apply(const CLI::App& app, const std::string& flag, const json& cfg,
           const std::string& key, T& out) {
  if (app.count(flag) > 0) return;  // explicit flag wins, already parsed into out
  if (cfg.contains(key)) out = cfg.at(key).get<T>();
}

void run_parallel(std::size_t n_items, std::size_t workers,
                  const std::function<void(std::size_t)>& work) {
  workers = std::max<std::size_t>(1, std::min(workers, n_items ? n_items : 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n_items; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n_items; i = next++) {
        try {
          work(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (first_error.empty()) first_error = e.what();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (!first_error.empty()) throw ContractError(first_error);
}

std::vector<std::string> case_dirs(const std::filesystem::path& root) {
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

flowgen::SolverConfig solver_from_config(const json& cfg) {
  flowgen::SolverConfig sc;
  if (cfg.contains("nx")) sc.nx = cfg["nx"].get<std::size_t>();
  if (cfg.contains("ny")) sc.ny = cfg["ny"].get<std::size_t>();
  if (cfg.contains("frames")) sc.frames = cfg["frames"].get<std::size_t>();
  if (cfg.contains("residual_target")) sc.residual_target = cfg["residual_target"].get<double>();
  if (cfg.contains("divergence_tol")) sc.divergence_tol = cfg["divergence_tol"].get<double>();
  if (cfg.contains("max_reynolds")) sc.max_reynolds = cfg["max_reynolds"].get<double>();
  return sc;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

int cmd_gen(const std::string& problem, const std::string& subsets_csv,
            const std::string& out, std::size_t workers, const json& cfg,
            const CLI::App& sub, std::size_t nx, std::size_t ny, std::size_t frames) {
  auto sc = solver_from_config(cfg);
  if (sub.count("--nx")) sc.nx = nx;
  if (sub.count("--ny")) sc.ny = ny;
  if (sub.count("--frames")) sc.frames = frames;
  sc.validate();

  const auto prob = flowgen::parse_problem(problem);
  std::vector<flowgen::OperatingParams> cases;
  std::stringstream ss(subsets_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "all") {
      for (const char* s : {"bc", "prop", "geo"}) {
        auto part = flowgen::enumerate_cases(prob, flowgen::parse_subset(s));
        cases.insert(cases.end(), part.begin(), part.end());
      }
    } else {
      auto part = flowgen::enumerate_cases(prob, flowgen::parse_subset(tok));
      cases.insert(cases.end(), part.begin(), part.end());
    }
  }
  if (cases.empty()) throw ConfigError("gen: no cases selected");

  std::filesystem::create_directories(out);
  std::atomic<std::size_t> done{0};
  std::mutex log_mu;
  run_parallel(cases.size(), workers, [&](std::size_t i) {
    auto rec = flowgen::solve_case(cases[i], sc);
    datakit::write_container(rec, std::filesystem::path(out) / rec.meta.case_id);
    const auto d = ++done;
    std::lock_guard<std::mutex> lk(log_mu);
    std::cerr << "[gen] " << rec.meta.case_id << " (" << d << "/" << cases.size() << ")\n";
  });
  std::cout << "generated " << cases.size() << " cases under " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ingest: per-case subdirectories of --in, each holding case.json plus one
// scatter CSV per frame (frame_0000.csv, ... with header x,y,<channels...>).
// Points are binned to the target grid, empty cells filled inward.
// ---------------------------------------------------------------------------

datakit::CaseRecord ingest_case(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "case.json");
  if (!mf) throw LoadError("ingest: missing case.json in " + dir.string());
  json j;
  mf >> j;
  datakit::CaseMeta meta;
  meta.problem = j.at("problem").get<std::string>();
  meta.subset = j.at("subset").get<std::string>();
  meta.case_id = j.at("case_id").get<std::string>();
  meta.dt = j.at("dt").get<double>();
  meta.extents_m = {j.at("extents_m")[0].get<double>(), j.at("extents_m")[1].get<double>()};
  meta.resolution = {j.at("resolution")[0].get<std::size_t>(),
                     j.at("resolution")[1].get<std::size_t>()};
  meta.channels = j.at("channels").get<std::vector<std::string>>();
  for (const auto& [k, v] : j.at("params").items()) meta.params[k] = v.get<double>();

  const std::size_t h = meta.resolution[0], w = meta.resolution[1];
  datakit::CaseRecord rec;
  rec.meta = meta;
  rec.mask.assign(h * w, 1);

  std::vector<std::filesystem::path> frame_files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".csv") frame_files.push_back(e.path());
  std::sort(frame_files.begin(), frame_files.end());
  if (frame_files.size() < 2) throw EmptyInputError("ingest: need >= 2 frame files");

  for (const auto& file : frame_files) {
    std::ifstream f(file);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::vector<datakit::ScatterPoint>> per_chan(meta.channels.size());
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string cell;
      std::vector<double> vals;
      while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
      if (vals.size() != 2 + meta.channels.size())
        throw LoadError("ingest: bad column count in " + file.string());
      for (std::size_t c = 0; c < meta.channels.size(); ++c)
        per_chan[c].push_back({vals[0], vals[1], vals[2 + c]});
    }
    for (std::size_t c = 0; c < meta.channels.size(); ++c) {
      auto grid = datakit::interpolate_to_grid(per_chan[c], meta.extents_m[1],
                                               meta.extents_m[0], h, w);
      datakit::fill_empty_cells(grid);
      for (double v : grid.v) rec.frames.push_back(float(v));
    }
  }
  rec.validate();
  return rec;
}

int cmd_ingest(const std::string& in, const std::string& out, std::size_t workers) {
  auto ids = case_dirs(in);
  if (ids.empty()) throw EmptyInputError("ingest: no case directories under " + in);
  std::filesystem::create_directories(out);
  run_parallel(ids.size(), workers, [&](std::size_t i) {
    auto rec = ingest_case(std::filesystem::path(in) / ids[i]);
    datakit::write_container(rec, std::filesystem::path(out) / rec.meta.case_id);
  });
  std::cout << "ingested " << ids.size() << " cases under " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// split / train / eval / rollout / profile / report
// ---------------------------------------------------------------------------

int cmd_split(const std::string& data, const std::string& out, std::uint64_t seed) {
  auto ids = case_dirs(data);
  auto split = datakit::split_cases(ids, seed);
  json j{{"seed", seed},
         {"train", split.train},
         {"val", split.val},
         {"test", split.test}};
  std::filesystem::create_directories(std::filesystem::path(out).parent_path().empty()
                                          ? "."
                                          : std::filesystem::path(out).parent_path());
  std::ofstream f(out);
  f << j.dump(2) << "\n";
  std::cout << "split " << ids.size() << " cases -> " << split.train.size() << "/"
            << split.val.size() << "/" << split.test.size() << " (" << out << ")\n";
  return 0;
}

trainer::TrainConfig train_config(const json& cfg, const CLI::App& sub, double lr,
                                  std::size_t epochs, std::uint64_t seed) {
  trainer::TrainConfig tc;
  if (cfg.contains("base_lr")) tc.base_lr = cfg["base_lr"].get<double>();
  if (cfg.contains("epochs")) tc.epochs = cfg["epochs"].get<std::size_t>();
  if (cfg.contains("batch")) tc.batch = cfg["batch"].get<std::size_t>();
  if (cfg.contains("decay")) tc.decay = cfg["decay"].get<double>();
  if (cfg.contains("decay_period")) tc.decay_period = cfg["decay_period"].get<std::size_t>();
  if (cfg.contains("k")) tc.k = cfg["k"].get<std::size_t>();
  if (cfg.contains("seed")) tc.seed = cfg["seed"].get<std::uint64_t>();
  if (cfg.contains("early_stop")) tc.early_stop = cfg["early_stop"].get<std::size_t>();
  if (sub.count("--lr")) tc.base_lr = lr;
  if (sub.count("--epochs")) tc.epochs = epochs;
  if (sub.count("--seed")) tc.seed = seed;
  tc.validate();
  return tc;
}

int cmd_train(const std::string& data, const std::string& model, const std::string& out,
              const trainer::TrainConfig& tc, std::uint64_t seed) {
  auto ds = trainer::load_dataset(data, seed);
  auto m = operators::build_model(operators::default_spec(operators::parse_kind(model)));
  std::cerr << "[train] " << model << ": " << operators::count_params(m) << " parameters, "
            << ds.split.train.size() << " train cases\n";
  auto state = trainer::train(m, ds, tc, out);
  if (!state.history.empty())
    std::cout << "best epoch " << state.best_epoch << " val NMSE " << state.best_val << "\n";
  return 0;
}

const std::vector<std::string>& pick_split(const trainer::Dataset& ds, const std::string& name) {
  if (name == "train") return ds.split.train;
  if (name == "val") return ds.split.val;
  if (name == "test") return ds.split.test;
  throw ConfigError("unknown split: " + name);
}

void append_rows(std::vector<bench::ResultRow>& rows, const std::string& model,
                 const trainer::Dataset& ds, const std::string& split_name,
                 const bench::Metrics& m) {
  const std::string prob = ds.cases.empty() ? "" : ds.cases.front().meta.problem;
  const std::string sub = ds.cases.empty() ? "" : ds.cases.front().meta.subset;
  rows.push_back({model, prob, sub, split_name, "mse", 0, m.mse});
  rows.push_back({model, prob, sub, split_name, "nmse", 0, m.nmse});
  rows.push_back({model, prob, sub, split_name, "mae", 0, m.mae});
}

int cmd_eval(const std::string& data, const std::string& model_ckpt, const std::string& out,
             const std::string& split_name, std::uint64_t seed, std::size_t workers) {
  auto ds = trainer::load_dataset(data, seed);
  auto m = operators::load_checkpoint(model_ckpt);
  const auto& ids = pick_split(ds, split_name);
  if (ids.empty()) throw EmptyInputError("eval: split '" + split_name + "' is empty");

  std::vector<bench::Metrics> per_case(ids.size());
  run_parallel(ids.size(), workers, [&](std::size_t i) {
    auto local = m;  // inference-only copy shares weights; no mutation occurs
    per_case[i] = bench::eval_single_step(local, ds, {ids[i]}, 1000, seed);
  });
  auto pooled = bench::average_metrics(per_case);
  auto ident = bench::eval_identity(ds, ids);

  std::vector<bench::ResultRow> rows;
  append_rows(rows, operators::kind_name(m.spec.kind), ds, split_name, pooled);
  append_rows(rows, "identity", ds, split_name, ident);
  bench::emit_report(rows, out);
  std::cout << operators::kind_name(m.spec.kind) << " NMSE " << pooled.nmse
            << " | identity NMSE " << ident.nmse << " (" << out << "/results.csv)\n";
  return 0;
}

int cmd_rollout(const std::string& data, const std::string& model_ckpt, const std::string& out,
                const std::string& split_name, std::size_t steps, std::uint64_t seed,
                std::size_t workers) {
  auto ds = trainer::load_dataset(data, seed);
  auto m = operators::load_checkpoint(model_ckpt);
  const auto& ids = pick_split(ds, split_name);
  if (ids.empty()) throw EmptyInputError("rollout: split '" + split_name + "' is empty");

  std::vector<bench::RolloutCurve> curves(ids.size());
  run_parallel(ids.size(), workers, [&](std::size_t i) {
    auto local = m;
    curves[i] = bench::rollout(local, ds, ds.find(ids[i]), steps);
  });
  std::vector<bench::ResultRow> rows;
  for (const auto& c : curves) {
    const auto& meta = ds.find(c.case_id).meta;
    auto r = bench::rows_from_curve(c, meta.problem, meta.subset, split_name);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  bench::emit_report(rows, out);
  std::cout << "rollout curves for " << ids.size() << " cases written to " << out << "\n";
  return 0;
}

int cmd_profile(const std::string& data, const std::string& model_ckpt, const std::string& out,
                std::uint64_t seed) {
  auto ds = trainer::load_dataset(data, seed);
  auto m = operators::load_checkpoint(model_ckpt);
  auto prof = bench::profile(m, ds);
  json j{{"model", operators::kind_name(m.spec.kind)},
         {"parameters", prof.parameters},
         {"train_step_ms", prof.train_step_ms},
         {"inference_ms", prof.inference_ms},
         {"peak_rss_bytes", prof.peak_rss_bytes}};
  std::filesystem::create_directories(out);
  std::ofstream f(std::filesystem::path(out) / "profile.json");
  f << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<bench::ResultRow> rows;
  for (const auto& path : inputs) {
    std::ifstream f(path);
    if (!f) throw LoadError("report: cannot read " + path);
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      bench::ResultRow r;
      std::string step, value;
      std::getline(ls, r.model, ',');
      std::getline(ls, r.problem, ',');
      std::getline(ls, r.subset, ',');
      std::getline(ls, r.split, ',');
      std::getline(ls, r.metric, ',');
      std::getline(ls, step, ',');
      std::getline(ls, value, ',');
      r.step = std::stoull(step);
      r.value = std::stod(value);
      rows.push_back(r);
    }
  }
  bench::emit_report(rows, out);
  std::cout << "merged " << rows.size() << " rows into " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CFD surrogate benchmark pipeline"};
  app.require_subcommand(1);

  std::string problem, subsets = "all", out, data, model, in_dir, split_name = "test";
  std::string config_path;
  std::vector<std::string> report_inputs;
  std::size_t workers = 1, epochs = 100, steps = 20, nx = 64, ny = 64, frames = 20;
  std::uint64_t seed = 0;
  double lr = 1e-3;

  auto* gen = app.add_subcommand("gen", "generate solver cases");
  gen->add_option("--problem", problem)->required();
  gen->add_option("--subset,--subsets", subsets, "comma list or 'all'");
  gen->add_option("--out", out)->required();
  gen->add_option("--workers", workers);
  gen->add_option("--config", config_path);
  gen->add_option("--nx", nx);
  gen->add_option("--ny", ny);
  gen->add_option("--frames", frames);

  auto* ingest = app.add_subcommand("ingest", "grid externally supplied scatter data");
  ingest->add_option("--in", in_dir)->required();
  ingest->add_option("--out", out)->required();
  ingest->add_option("--workers", workers);

  auto* split = app.add_subcommand("split", "write the case-level 8:1:1 split");
  split->add_option("--data", data)->required();
  split->add_option("--out", out)->required();
  split->add_option("--seed", seed);

  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--data", data)->required();
  train->add_option("--model", model)->required();
  train->add_option("--out", out)->required();
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--seed", seed);
  train->add_option("--config", config_path);

  auto* eval = app.add_subcommand("eval", "single-step evaluation vs identity baseline");
  eval->add_option("--data", data)->required();
  eval->add_option("--model", model, "checkpoint directory")->required();
  eval->add_option("--out", out)->required();
  eval->add_option("--split", split_name);
  eval->add_option("--seed", seed);
  eval->add_option("--workers", workers);

  auto* rollout = app.add_subcommand("rollout", "autoregressive rollout curves");
  rollout->add_option("--data", data)->required();
  rollout->add_option("--model", model, "checkpoint directory")->required();
  rollout->add_option("--out", out)->required();
  rollout->add_option("--split", split_name);
  rollout->add_option("--steps", steps);
  rollout->add_option("--seed", seed);
  rollout->add_option("--workers", workers);

  auto* profile = app.add_subcommand("profile", "parameter/latency/memory profile");
  profile->add_option("--data", data)->required();
  profile->add_option("--model", model, "checkpoint directory")->required();
  profile->add_option("--out", out)->required();
  profile->add_option("--seed", seed);

  auto* report = app.add_subcommand("report", "merge results.csv files and plot");
  report->add_option("--in", report_inputs, "results.csv files")->required();
  report->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (*gen) {
      return cmd_gen(problem, subsets, out, workers, load_config(config_path), *gen, nx, ny,
                     frames);
    }
    if (*ingest) return cmd_ingest(in_dir, out, workers);
    if (*split) return cmd_split(data, out, seed);
    if (*train) {
      const auto cfg = load_config(config_path);
      return cmd_train(data, model, out, train_config(cfg, *train, lr, epochs, seed), seed);
    }
    if (*eval) return cmd_eval(data, model, out, split_name, seed, workers);
    if (*rollout) return cmd_rollout(data, model, out, split_name, steps, seed, workers);
    if (*profile) return cmd_profile(data, model, out, seed);
    if (*report) return cmd_report(report_inputs, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
