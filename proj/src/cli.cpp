#include "pvae/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pvae/binary_io.hpp"
#include "pvae/checkpoint.hpp"
#include "pvae/csv.hpp"
#include "pvae/experiment.hpp"

namespace pvae {

namespace fs = std::filesystem;

std::vector<Eigen::Index> ascending_order(const Vector& keys) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(keys.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return keys(a) < keys(b); });
  return order;
}

GrayImage render_dictionary_grid(const Matrix& phi, const std::vector<Eigen::Index>& order, int tile_height,
                                 int tile_width, int columns) {
  if (tile_height < 1 || tile_width < 1 || static_cast<Eigen::Index>(tile_height) * tile_width != phi.rows()) {
    throw ConfigError("export-dict: tile " + std::to_string(tile_height) + "x" + std::to_string(tile_width) +
                      " does not match basis length " + std::to_string(phi.rows()));
  }
  if (columns < 1) throw ConfigError("export-dict: columns must be positive");
  const int tiles = static_cast<int>(order.size());
  const int rows = std::max(1, (tiles + columns - 1) / columns);
  GrayImage img = GrayImage::Zero(rows * (tile_height + 1) + 1, columns * (tile_width + 1) + 1);
  for (int t = 0; t < tiles; ++t) {
    const Eigen::Index col = order[static_cast<std::size_t>(t)];
    if (col < 0 || col >= phi.cols()) throw ShapeError("export-dict: order index out of range");
    const auto v = phi.col(col);
    const double lo = v.minCoeff();
    const double hi = v.maxCoeff();
    const int top = (t / columns) * (tile_height + 1) + 1;
    const int left = (t % columns) * (tile_width + 1) + 1;
    for (int i = 0; i < tile_height; ++i) {
      for (int j = 0; j < tile_width; ++j) {
        const double x = v(i * tile_width + j);
        const double level = hi > lo ? std::round(255.0 * (x - lo) / (hi - lo)) : 128.0;
        img(top + i, left + j) = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
      }
    }
  }
  return img;
}

namespace {

struct Common {
  std::string config_path;
  std::string seeds;
  int jobs = 0;
  std::string out;
  std::string data_root;
};

struct Context {
  RunConfig cfg;
  std::string data_root;
};


Context context(const Common& c) {
  Context ctx;
  if (!c.config_path.empty()) ctx.cfg = load_config(c.config_path);
  if (!c.seeds.empty()) ctx.cfg.run.seeds = parse_seed_list(c.seeds);
  if (c.jobs > 0) ctx.cfg.run.jobs = c.jobs;
  if (!c.out.empty()) ctx.cfg.run.out_dir = c.out;
  ctx.cfg.validate();
  ctx.data_root = c.data_root.empty() ? default_data_root() : c.data_root;
  return ctx;
}

void add_common(CLI::App* cmd, Common& c, bool with_seeds) {
  cmd->add_option("--config", c.config_path, "Run configuration (INI, or JSON by extension)");
  if (with_seeds) {
    cmd->add_option("--seeds,--seed", c.seeds, "Seed list, e.g. 0,1,2 or 0-4 (overrides run.seeds)");
    cmd->add_option("--jobs", c.jobs, "Concurrent runs (overrides run.jobs)");
  }
  cmd->add_option("--out", c.out, "Output directory (overrides run.out_dir)");
  cmd->add_option("--data-root", c.data_root, "Root for relative data paths (default $PVAE_DATA_DIR)");
}

std::string run_id(const RunConfig& cfg, GradMode mode, double beta, std::uint64_t seed) {
  std::ostringstream s;
  s << to_string(cfg.model.family) << '-' << to_string(cfg.model.encoder) << '-' << to_string(mode) << "-b" << beta
    << "-s" << seed;
  return s.str();
}

const std::vector<std::string> kSummaryHeader = {
    "run_id", "family",     "encoder",  "grad_mode", "beta",   "seed",          "epochs",
    "best_epoch", "initial_val_nelbo", "val_nelbo", "val_mse", "val_kl", "active_fraction", "lifetime_sparsity"};

std::vector<std::string> summary_row(const RunConfig& cfg, const RunOutcome& o) {
  return {run_id(cfg, o.mode, o.beta, o.seed),
          std::string(to_string(cfg.model.family)),
          std::string(to_string(cfg.model.encoder)),
          std::string(to_string(o.mode)),
          csv_number(o.beta),
          std::to_string(o.seed),
          std::to_string(cfg.train.epochs),
          std::to_string(o.result.best_epoch),
          csv_number(o.result.initial_val_nelbo),
          csv_number(o.val.total),
          csv_number(o.val.recon),
          csv_number(o.val.kl),
          csv_number(o.active.active_fraction),
          csv_number(o.sparsity)};
}

std::string mode_dir_name(GradMode m) { return std::string(to_string(m)); }

std::string beta_dir_name(double beta) {
  std::ostringstream s;
  s << "beta_" << beta;
  return s.str();
}

struct Job {
  GradMode mode;
  double beta;
  std::uint64_t seed;
  fs::path dir;
};

std::vector<RunOutcome> run_jobs(const Context& ctx, const Datasets& data, const std::vector<Job>& jobs, bool resume,
                                 std::ostream& err) {
  std::vector<RunOutcome> outcomes(jobs.size());
  std::mutex log_lock;
  parallel_for(jobs.size(), ctx.cfg.run.jobs, [&](std::size_t i) {
    const Job& j = jobs[i];
    outcomes[i] = run_training(ctx.cfg, data, RunRequest{j.seed, j.mode, j.beta, j.dir.string(), resume});
    const std::lock_guard guard(log_lock);
    err << run_id(ctx.cfg, j.mode, j.beta, j.seed) << ": val_nelbo " << outcomes[i].val.total << " (best epoch "
        << outcomes[i].result.best_epoch << ")\n";
  });
  return outcomes;
}

void write_run_config(const Context& ctx) {
  fs::create_directories(ctx.cfg.run.out_dir);
  bin::write_file((fs::path(ctx.cfg.run.out_dir) / "config.ini").string(), render_config(ctx.cfg));
}

int cmd_prep(const Common& c, std::ostream& out) {
  const Context ctx = context(c);
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  const fs::path dir(ctx.cfg.run.out_dir);
  fs::create_directories(dir);
  export_patch_archive((dir / "train.pvlb").string(), data.train);
  export_patch_archive((dir / "val.pvlb").string(), data.val);
  // Checksums are those of the written payloads.
  const auto train_ck = import_patch_archive((dir / "train.pvlb").string()).meta.checksum;
  const auto val_ck = import_patch_archive((dir / "val.pvlb").string()).meta.checksum;

  nlohmann::ordered_json report;
  report["source"] = ctx.cfg.data.source;
  report["train_n"] = data.train.size();
  report["val_n"] = data.val.size();
  report["dim"] = data.train.dim();
  report["train_checksum"] = train_ck;
  report["val_checksum"] = val_ck;
  report["dropped_patches"] = data.dropped_patches;
  if (data.whitening) {
    report["whitening_epsilon"] = data.whitening->epsilon;
    report["whitening_condition_number"] = data.whitening_condition;
    report["preprocessing"] = data.train.meta.preprocessing;
  }
  bin::write_file((dir / "prep_report.json").string(), report.dump(2) + "\n");
  out << report.dump(2) << "\n";
  return 0;
}

int cmd_train(const Common& c, bool resume, std::ostream& out, std::ostream& err) {
  const Context ctx = context(c);
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  write_run_config(ctx);
  std::vector<Job> jobs;
  for (const auto seed : ctx.cfg.run.seeds) {
    jobs.push_back({ctx.cfg.model.mode, ctx.cfg.model.beta, seed,
                    fs::path(ctx.cfg.run.out_dir) / mode_dir_name(ctx.cfg.model.mode) / ("seed_" + std::to_string(seed))});
  }
  const auto outcomes = run_jobs(ctx, data, jobs, resume, err);
  CsvTable summary(kSummaryHeader);
  for (const auto& o : outcomes) summary.add(summary_row(ctx.cfg, o));
  summary.write((fs::path(ctx.cfg.run.out_dir) / "summary.csv").string());
  out << summary.aligned();
  return 0;
}

int cmd_compare(const Common& c, std::ostream& out, std::ostream& err) {
  const Context ctx = context(c);
  if (ctx.cfg.run.compare_modes.empty()) throw ConfigError("run.compare_modes is empty");
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  write_run_config(ctx);
  std::vector<Job> jobs;
  for (const auto mode : ctx.cfg.run.compare_modes) {
    for (const auto seed : ctx.cfg.run.seeds) {
      jobs.push_back({mode, ctx.cfg.model.beta, seed,
                      fs::path(ctx.cfg.run.out_dir) / mode_dir_name(mode) / ("seed_" + std::to_string(seed))});
    }
  }
  const auto outcomes = run_jobs(ctx, data, jobs, false, err);
  CsvTable summary(kSummaryHeader);
  std::vector<LossSample> losses;
  for (const auto& o : outcomes) {
    summary.add(summary_row(ctx.cfg, o));
    losses.push_back({std::string(to_string(o.mode)), static_cast<int>(o.seed), o.val.total});
  }
  summary.write((fs::path(ctx.cfg.run.out_dir) / "summary.csv").string());

  CsvTable table({"method", "mean_drop_pct", "ci99_pct", "seeds", "drops_pct"});
  for (const auto& row : percent_drop(losses)) {
    std::string drops;
    for (std::size_t i = 0; i < row.drops.size(); ++i) drops += (i ? ";" : "") + csv_number(row.drops[i]);
    table.add({row.method, csv_number(row.mean), csv_number(row.ci99), std::to_string(row.drops.size()), drops});
  }
  table.write((fs::path(ctx.cfg.run.out_dir) / "percent_drop.csv").string());
  bin::write_file((fs::path(ctx.cfg.run.out_dir) / "percent_drop.txt").string(), table.aligned());
  out << table.aligned();
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& checkpoints, const std::string& metric_list,
             const std::string& csv_path, std::ostream& out) {
  const Context ctx = context(c);
  if (checkpoints.empty()) throw ConfigError("eval: at least one --checkpoint is required");
  std::vector<std::string> metrics;
  {
    std::stringstream in(metric_list);
    std::string m;
    while (std::getline(in, m, ',')) {
      static const std::vector<std::string> known = {"nelbo", "mse", "kl", "sparsity", "active", "knn", "shatter"};
      if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("eval: unknown metric '" + m + "'");
      metrics.push_back(m);
    }
  }
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  CsvTable table({"run_id", "metric", "value", "ci"});
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != ArchiveKind::kVae) throw ConfigError(path + ": not a model checkpoint");
    const LinearVae& model = ck.model;
    if (model.input_dim() != data.val.dim()) {
      throw ShapeError(path + ": model input dimension " + std::to_string(model.input_dim()) +
                       " does not match data dimension " + std::to_string(data.val.dim()));
    }
    // <mode>/seed_<s>/<name> for training outputs, fewer parts for loose files.
    const fs::path parent = fs::path(path).parent_path();
    std::string id = fs::path(path).stem().string();
    if (!parent.filename().empty()) id = parent.filename().string() + "/" + id;
    if (!parent.parent_path().filename().empty()) id = parent.parent_path().filename().string() + "/" + id;
    const LossReport rep = evaluate_exact(model, data.val.samples);
    for (const auto& m : metrics) {
      if (m == "nelbo") {
        table.add({id, m, csv_number(rep.total), ""});
      } else if (m == "mse") {
        table.add({id, m, csv_number(rep.recon), ""});
      } else if (m == "kl") {
        table.add({id, m, csv_number(rep.kl), ""});
      } else if (m == "sparsity") {
        table.add({id, m, csv_number(mean_lifetime_sparsity(model, data.val.samples, 0)), ""});
      } else if (m == "active") {
        table.add({id, m, csv_number(dead_neuron_fraction(rep.per_latent_kl).active_fraction), ""});
      } else if (m == "knn") {
        for (const auto& k : knn_grid(model, data.val, {200, 1000, 5000}, 5, 0)) {
          table.add({id, "knn@" + std::to_string(k.n_labeled), csv_number(k.mean), csv_number(k.ci99)});
        }
      } else if (m == "shatter") {
        table.add({id, m, csv_number(shattering_halves(model, data.val).mean_accuracy), ""});
      }
    }
  }
  if (csv_path.empty()) {
    out << table.str();
  } else {
    table.write(csv_path);
    out << table.aligned();
  }
  return 0;
}

int cmd_sc_train(const Common& c, std::ostream& out, std::ostream& err) {
  const Context ctx = context(c);
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  write_run_config(ctx);
  const SparseSpec& sp = ctx.cfg.sparse;
  const auto& seeds = ctx.cfg.run.seeds;
  CsvTable summary({"seed", "solver", "val_objective", "val_mse", "val_sparsity"});
  std::vector<std::vector<std::string>> rows(seeds.size());
  std::mutex log_lock;
  parallel_for(seeds.size(), ctx.cfg.run.jobs, [&](std::size_t i) {
    DictLearnConfig dl;
    dl.inference = sp.inference();
    dl.solver = sp.solver;
    dl.epochs = sp.epochs;
    dl.batch_size = sp.batch_size;
    dl.learning_rate = sp.lr;
    RngStream rng(seeds[i], kInitStream);
    const Dictionary dict = dict_learn(data.train.samples, sp.atoms, dl, rng);
    const fs::path dir = fs::path(ctx.cfg.run.out_dir) / ("seed_" + std::to_string(seeds[i]));
    fs::create_directories(dir);
    save_dictionary((dir / "dictionary.ckpt").string(), dict.phi());

    SparseCodeConfig inf = sp.inference();
    if (inf.schedule) inf.beta = inf.schedule->at(std::max(sp.epochs - 1, 0));
    const Matrix z = sp.solver == Solver::kIsta ? ista_infer(data.val.samples, dict.phi(), inf)
                                                : lca_infer(data.val.samples, dict.phi(), inf);
    const double n = static_cast<double>(data.val.size());
    rows[i] = {std::to_string(seeds[i]), sp.solver == Solver::kIsta ? "ista" : "lca",
               csv_number(sparse_objective(data.val.samples, dict.phi(), z, inf.beta) / n),
               csv_number((data.val.samples - z * dict.phi().transpose()).squaredNorm() / n),
               csv_number(lifetime_sparsity(z).mean())};
    const std::lock_guard guard(log_lock);
    err << "sc seed " << seeds[i] << ": val objective " << rows[i][2] << "\n";
  });
  for (auto& r : rows) summary.add(std::move(r));
  summary.write((fs::path(ctx.cfg.run.out_dir) / "sc_summary.csv").string());
  out << summary.aligned();
  return 0;
}

int cmd_sc_infer(const Common& c, const std::string& dictionary, std::ostream& out) {
  const Context ctx = context(c);
  if (dictionary.empty()) throw ConfigError("sc-infer: --dictionary is required");
  const Matrix phi = load_dictionary(dictionary);
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  if (phi.rows() != data.val.dim()) {
    throw ShapeError(dictionary + ": basis length " + std::to_string(phi.rows()) + " does not match data dimension " +
                     std::to_string(data.val.dim()));
  }
  SparseCodeConfig inf = ctx.cfg.sparse.inference();
  inf.schedule.reset();
  CsvTable table({"beta", "mse", "lifetime_sparsity", "mean_l0"});
  for (const auto& p : lca_on_fixed_dictionary(phi, data.val.samples, ctx.cfg.sparse.betas, inf)) {
    table.add({csv_number(p.beta), csv_number(p.mse), csv_number(p.sparsity), csv_number(p.l0)});
  }
  fs::create_directories(ctx.cfg.run.out_dir);
  table.write((fs::path(ctx.cfg.run.out_dir) / "lca_fixed_dictionary.csv").string());
  out << table.aligned();
  return 0;
}

int cmd_export_dict(const Common& c, const std::string& checkpoint, const std::string& image_path, int columns,
                    int tile_w, int tile_h, std::ostream& out) {
  if (checkpoint.empty() || image_path.empty()) throw ConfigError("export-dict: --checkpoint and --image are required");
  if (fs::path(image_path).extension() != ".pgm") {
    throw ConfigError("export-dict: only binary PGM output (.pgm) is supported");
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Matrix& phi = ck.kind == ArchiveKind::kVae ? ck.model.params.phi : ck.dictionary;
  const Eigen::Index m = phi.rows();
  if (tile_w <= 0 && tile_h <= 0) {
    const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
    if (static_cast<Eigen::Index>(side) * side != m) {
      throw ConfigError("export-dict: basis length " + std::to_string(m) +
                        " is not square; pass --tile-width and --tile-height");
    }
    tile_w = tile_h = side;
  } else if (tile_w <= 0 || tile_h <= 0) {
    throw ConfigError("export-dict: pass both --tile-width and --tile-height");
  }

  // Ascending per-latent KL needs data; without a config, keep index order.
  Vector keys = Vector::Zero(phi.cols());
  if (ck.kind == ArchiveKind::kVae && !c.config_path.empty()) {
    const Context ctx = context(c);
    const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
    keys = evaluate_exact(ck.model, data.val.samples).per_latent_kl;
  }
  if (columns <= 0) columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(phi.cols()))));
  const GrayImage img = render_dictionary_grid(phi, ascending_order(keys), tile_h, tile_w, columns);
  if (const auto parent = fs::path(image_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_pgm(image_path, img);
  out << "wrote " << image_path << " (" << img.cols() << "x" << img.rows() << ", " << phi.cols() << " tiles)\n";
  return 0;
}

int cmd_sweep(const Common& c, std::ostream& out, std::ostream& err) {
  const Context ctx = context(c);
  const Datasets data = load_datasets(ctx.cfg.data, ctx.data_root);
  write_run_config(ctx);
  std::vector<Job> jobs;
  for (const double beta : ctx.cfg.run.betas) {
    for (const auto seed : ctx.cfg.run.seeds) {
      jobs.push_back({ctx.cfg.model.mode, beta, seed,
                      fs::path(ctx.cfg.run.out_dir) / beta_dir_name(beta) / ("seed_" + std::to_string(seed))});
    }
  }
  const auto outcomes = run_jobs(ctx, data, jobs, false, err);
  CsvTable rows(kSummaryHeader);
  for (const auto& o : outcomes) rows.add(summary_row(ctx.cfg, o));
  rows.write((fs::path(ctx.cfg.run.out_dir) / "sweep.csv").string());

  CsvTable means({"beta", "seeds", "val_mse", "lifetime_sparsity", "val_nelbo"});
  for (const double beta : ctx.cfg.run.betas) {
    double mse = 0.0;
    double sparsity = 0.0;
    double nelbo = 0.0;
    int n = 0;
    for (const auto& o : outcomes) {
      if (o.beta != beta) continue;
      mse += o.final_val.recon;
      sparsity += o.final_sparsity;
      nelbo += o.final_val.total;
      ++n;
    }
    means.add({csv_number(beta), std::to_string(n), csv_number(mse / n), csv_number(sparsity / n),
               csv_number(nelbo / n)});
  }
  means.write((fs::path(ctx.cfg.run.out_dir) / "sweep_mean.csv").string());
  out << means.aligned();
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Poisson VAE and sparse-coding laboratory"};
  app.require_subcommand(1);
  Common common;

  auto* prep = app.add_subcommand("prep", "Build PVLB caches and a preprocessing report");
  add_common(prep, common, false);

  bool resume_flag = false;
  auto* train_cmd = app.add_subcommand("train", "Train one model per seed");
  add_common(train_cmd, common, true);
  train_cmd->add_flag("--resume", resume_flag, "Continue from last.ckpt where present");

  auto* compare = app.add_subcommand("compare-grads", "Train every gradient mode and report percent drops");
  add_common(compare, common, true);

  std::vector<std::string> checkpoints;
  std::string metric_list = "nelbo,mse,sparsity,active";
  std::string csv_path;
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on the validation split");
  add_common(eval, common, false);
  eval->add_option("--checkpoint", checkpoints, "Model checkpoint (repeatable)");
  eval->add_option("--metrics", metric_list, "nelbo,mse,kl,sparsity,active,knn,shatter");
  eval->add_option("--csv", csv_path, "Write rows here instead of stdout");

  auto* sc_train = app.add_subcommand("sc-train", "Dictionary learning with ISTA or LCA");
  add_common(sc_train, common, true);

  std::string dictionary;
  auto* sc_infer = app.add_subcommand("sc-infer", "LCA inference on a fixed dictionary over sparse.betas");
  add_common(sc_infer, common, false);
  sc_infer->add_option("--dictionary", dictionary, "Dictionary or model checkpoint");

  std::string export_ckpt;
  std::string image_path;
  int columns = 0;
  int tile_w = 0;
  int tile_h = 0;
  auto* export_dict = app.add_subcommand("export-dict", "Render dictionary columns as a PGM grid");
  add_common(export_dict, common, false);
  export_dict->add_option("--checkpoint", export_ckpt, "Model or dictionary checkpoint");
  export_dict->add_option("--image", image_path, "Output .pgm path");
  export_dict->add_option("--columns", columns, "Tiles per row (default ceil(sqrt(K)))");
  export_dict->add_option("--tile-width", tile_w, "Tile width for non-square inputs");
  export_dict->add_option("--tile-height", tile_h, "Tile height for non-square inputs");

  auto* sweep = app.add_subcommand("sweep", "Train over run.betas x seeds");
  add_common(sweep, common, true);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*prep) return cmd_prep(common, out);
    if (*train_cmd) return cmd_train(common, resume_flag, out, err);
    if (*compare) return cmd_compare(common, out, err);
    if (*eval) return cmd_eval(common, checkpoints, metric_list, csv_path, out);
    if (*sc_train) return cmd_sc_train(common, out, err);
    if (*sc_infer) return cmd_sc_infer(common, dictionary, out);
    if (*export_dict) return cmd_export_dict(common, export_ckpt, image_path, columns, tile_w, tile_h, out);
    if (*sweep) return cmd_sweep(common, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pvae
