#include "pvae/train.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pvae/binary_io.hpp"

namespace pvae {

namespace {

// Stream ids under the run seed. Model initialization lives outside train().
constexpr std::uint64_t kShuffleStream = 101;
constexpr std::uint64_t kSampleStream = 102;

std::vector<Matrix*> tensors(VaeParams& p) {
  std::vector<Matrix*> out;
  p.for_each([&](const char*, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> tensors(const VaeParams& p) {
  std::vector<const Matrix*> out;
  p.for_each([&](const char*, const Matrix& m) { out.push_back(&m); });
  return out;
}

}  // namespace

std::string_view to_string(TemperatureShape s) { return s == TemperatureShape::kLinear ? "linear" : "exponential"; }

TemperatureShape parse_temperature_shape(std::string_view s) {
  if (s == "linear" || s == "lin") return TemperatureShape::kLinear;
  if (s == "exponential" || s == "exp") return TemperatureShape::kExponential;
  throw ConfigError("unknown temperature schedule '" + std::string(s) + "'");
}

void Schedules::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("learning rate must be positive");
  if (total_epochs < 0) throw ConfigError("epoch count must be nonnegative");
  if (!(t_final > 0.0) || t_start < t_final) throw ConfigError("temperatures need t_start >= t_final > 0");
  if (!(kl_ramp >= 0.0 && kl_ramp <= 1.0)) throw ConfigError("kl_ramp must lie in [0, 1]");
  if (hard_forward_after && *hard_forward_after < 0) throw ConfigError("hard_forward_after must be nonnegative");
}

double cosine_lr(double epoch, double total, double lr0) {
  if (total <= 0.0) return lr0;
  const double t = std::clamp(epoch / total, 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double temperature_at(double epoch, const Schedules& s) {
  const double span = 0.5 * s.total_epochs;
  const double t = span > 0.0 ? std::clamp(epoch / span, 0.0, 1.0) : 1.0;
  if (s.t_shape == TemperatureShape::kLinear) return s.t_start + (s.t_final - s.t_start) * t;
  return s.t_start * std::pow(s.t_final / s.t_start, t);
}

double forward_temperature_at(double epoch, const Schedules& s) {
  if (s.hard_forward_after && epoch >= *s.hard_forward_after) return 0.0;
  return temperature_at(epoch, s);
}

double kl_weight_at(double epoch, const Schedules& s, double beta) {
  const double span = s.kl_ramp * s.total_epochs;
  if (span <= 0.0) return beta;
  return beta * std::clamp(epoch / span, 0.0, 1.0);
}

AdaMaxState make_adamax(const VaeParams& like) {
  AdaMaxState s;
  s.m = like.zeros_like();
  s.u = like.zeros_like();
  return s;
}

void adamax_step(AdaMaxState& state, VaeParams& params, const VaeParams& grads, double lr) {
  const auto p = tensors(params);
  const auto g = tensors(grads);
  const auto m = tensors(state.m);
  const auto u = tensors(state.u);
  if (g.size() != p.size() || m.size() != p.size() || u.size() != p.size()) {
    throw ShapeError("adamax_step: parameter lists differ");
  }
  ++state.step;
  const double step = lr / (1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]->rows() != p[i]->rows() || g[i]->cols() != p[i]->cols()) {
      throw ShapeError("adamax_step: gradient shape mismatch");
    }
    m[i]->array() = state.beta1 * m[i]->array() + (1.0 - state.beta1) * g[i]->array();
    u[i]->array() = (state.beta2 * u[i]->array()).max(g[i]->array().abs());
    p[i]->array() -= step * m[i]->array() / (u[i]->array() + state.eps);
  }
}

std::string metrics_csv_header() { return "epoch,lr,temperature,beta_eff,train_loss,val_nelbo,val_mse,val_kl\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream s;
  s.precision(10);
  s << m.epoch << ',' << m.lr << ',' << m.temperature << ',' << m.beta_eff << ',' << m.train_loss << ','
    << m.val_nelbo << ',' << m.val_mse << ',' << m.val_kl << '\n';
  return s.str();
}

namespace {

Matrix log_to_matrix(const std::vector<EpochMetrics>& log) {
  Matrix out(static_cast<Eigen::Index>(log.size()), 8);
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& e = log[i];
    out.row(static_cast<Eigen::Index>(i)) << e.epoch, e.lr, e.temperature, e.beta_eff, e.train_loss, e.val_nelbo,
        e.val_mse, e.val_kl;
  }
  return out;
}

std::vector<EpochMetrics> log_from_matrix(const Matrix& m) {
  std::vector<EpochMetrics> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out.push_back({static_cast<int>(m(i, 0)), m(i, 1), m(i, 2), m(i, 3), m(i, 4), m(i, 5), m(i, 6), m(i, 7)});
  }
  return out;
}

struct Progress {
  int next_epoch = 0;
  double best_val = 0.0;
  int best_epoch = -1;
  double initial_val = 0.0;
};

std::vector<NamedTensor> state_tensors(const AdaMaxState& opt, const Progress& p, const std::vector<EpochMetrics>& log) {
  std::vector<NamedTensor> out;
  opt.m.for_each([&](const char* name, const Matrix& v) { out.push_back({std::string("adamax/m/") + name, v}); });
  opt.u.for_each([&](const char* name, const Matrix& v) { out.push_back({std::string("adamax/u/") + name, v}); });
  Matrix counters(1, 5);
  counters << static_cast<double>(opt.step), p.next_epoch, p.best_val, p.best_epoch, p.initial_val;
  out.push_back({"train/counters", counters});
  out.push_back({"train/log", log_to_matrix(log)});
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) { bin::write_file(path.string(), text); }

TrainResult run(LinearVae model, AdaMaxState opt, Progress progress, LinearVae best, std::vector<EpochMetrics> log,
                const Matrix& train_x, const Matrix& val_x, const TrainConfig& cfg) {
  const Schedules& s = cfg.schedules;
  s.validate();
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (cfg.n_samples < 1) throw ConfigError("n_samples must be positive");
  if (train_x.cols() != model.input_dim() || val_x.cols() != model.input_dim()) {
    throw ShapeError("train: data dimension " + std::to_string(train_x.cols()) + " vs model input " +
                     std::to_string(model.input_dim()));
  }
  if (train_x.rows() == 0) throw DataError("train: empty training split");

  namespace fs = std::filesystem;
  const bool persist = !cfg.out_dir.empty();
  if (persist) fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);

  const Eigen::Index n = train_x.rows();
  const Eigen::Index batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const RngStream shuffle_root(cfg.seed, kShuffleStream);
  const RngStream sample_root(cfg.seed, kSampleStream);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  Matrix batch;

  for (int epoch = progress.next_epoch; epoch < s.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle);
    const RngStream epoch_samples = sample_root.split(static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    for (Eigen::Index b = 0; b < batches; ++b) {
      const Eigen::Index start = b * cfg.batch_size;
      const Eigen::Index size = std::min(cfg.batch_size, n - start);
      batch.resize(size, train_x.cols());
      for (Eigen::Index i = 0; i < size; ++i) batch.row(i) = train_x.row(order[static_cast<std::size_t>(start + i)]);

      const double t = epoch + static_cast<double>(b) / static_cast<double>(batches);
      StepOptions opts;
      opts.mode = model.mode;
      opts.kl_weight = kl_weight_at(t, s, model.beta);
      opts.n_samples = cfg.n_samples;
      opts.temperature = forward_temperature_at(t, s);
      opts.backward_temperature = temperature_at(t, s);
      RngStream rng = epoch_samples.split(static_cast<std::uint64_t>(b));
      LossAndGrad step;
      std::string failure;
      try {
        step = loss_and_grad(model, batch, opts, &rng);
        if (!std::isfinite(step.grad.squared_norm())) failure = "non-finite gradient";
      } catch (const NumericalError& e) {
        failure = e.what();
      }
      if (!failure.empty()) {
        std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
        if (persist) {
          save_checkpoint((dir / "abort.ckpt").string(), model, state_tensors(opt, progress, log));
          where += "; snapshot in " + (dir / "abort.ckpt").string();
        }
        throw NumericalError("training aborted at " + where + ": " + failure);
      }
      loss_sum += step.report.total * static_cast<double>(size);
      adamax_step(opt, model.params, step.grad, cosine_lr(t, s.total_epochs, s.lr0));
    }

    const LossReport val = evaluate_exact(model, val_x);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = cosine_lr(epoch, s.total_epochs, s.lr0);
    m.temperature = forward_temperature_at(epoch, s);
    m.beta_eff = kl_weight_at(epoch, s, model.beta);
    m.train_loss = loss_sum / static_cast<double>(n);
    m.val_nelbo = val.total;
    m.val_mse = val.recon;
    m.val_kl = val.kl;
    log.push_back(m);

    if (val.total < progress.best_val) {
      progress.best_val = val.total;
      progress.best_epoch = epoch;
      best = model;
      if (persist) save_checkpoint((dir / "best.ckpt").string(), best);
    }
    progress.next_epoch = epoch + 1;
    if (persist) {
      save_checkpoint((dir / "last.ckpt").string(), model, state_tensors(opt, progress, log));
      std::string csv = metrics_csv_header();
      for (const auto& e : log) csv += metrics_csv_row(e);
      write_text(dir / "metrics.csv", csv);
    }
    if (cfg.on_epoch) cfg.on_epoch(m);
  }

  TrainResult out;
  out.final_model = std::move(model);
  out.best_model = std::move(best);
  out.initial_val_nelbo = progress.initial_val;
  out.best_val_nelbo = progress.best_val;
  out.best_epoch = progress.best_epoch;
  out.log = std::move(log);
  return out;
}

}  // namespace

std::vector<NamedTensor> training_state_tensors(const AdaMaxState& opt, int next_epoch, double best_val,
                                                int best_epoch, double initial_val) {
  return state_tensors(opt, Progress{next_epoch, best_val, best_epoch, initial_val}, {});
}

TrainResult train(LinearVae model, const Matrix& train_x, const Matrix& val_x, const TrainConfig& cfg) {
  if (val_x.cols() != model.input_dim()) throw ShapeError("train: validation dimension mismatch");
  Progress progress;
  progress.initial_val = evaluate_exact(model, val_x).total;
  progress.best_val = progress.initial_val;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    save_checkpoint((std::filesystem::path(cfg.out_dir) / "best.ckpt").string(), model);
  }
  AdaMaxState opt = make_adamax(model.params);
  LinearVae best = model;
  return run(std::move(model), std::move(opt), progress, std::move(best), {}, train_x, val_x, cfg);
}

TrainResult resume(const Checkpoint& last, const LinearVae& best, const Matrix& train_x, const Matrix& val_x,
                   const TrainConfig& cfg) {
  if (last.kind != ArchiveKind::kVae) throw StateError("resume: not a model checkpoint");
  const NamedTensor* counters = last.find_extra("train/counters");
  const NamedTensor* log = last.find_extra("train/log");
  if (!counters || !log || counters->value.size() != 5) throw StateError("resume: checkpoint has no training state");

  AdaMaxState opt = make_adamax(last.model.params);
  const auto restore = [&](const char* prefix, VaeParams& target) {
    target.for_each([&](const char* name, Matrix& v) {
      const NamedTensor* t = last.find_extra(std::string(prefix) + name);
      if (!t || t->value.rows() != v.rows() || t->value.cols() != v.cols()) {
        throw StateError(std::string("resume: missing optimizer tensor ") + prefix + name);
      }
      v = t->value;
    });
  };
  restore("adamax/m/", opt.m);
  restore("adamax/u/", opt.u);
  const Matrix& c = counters->value;
  opt.step = static_cast<std::int64_t>(c(0, 0));
  Progress progress{static_cast<int>(c(0, 1)), c(0, 2), static_cast<int>(c(0, 3)), c(0, 4)};
  return run(last.model, std::move(opt), progress, best, log_from_matrix(log->value), train_x, val_x, cfg);
}

}  // namespace pvae
