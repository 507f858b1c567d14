#include "pvae/experiment.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

namespace pvae {

#ifndef PVAE_DEFAULT_DATA_DIR
#define PVAE_DEFAULT_DATA_DIR "data"
#endif

std::string default_data_root() {
  if (const char* env = std::getenv("PVAE_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return PVAE_DEFAULT_DATA_DIR;
}

std::string resolve_data_path(const std::string& path, const std::string& root) {
  const std::filesystem::path p(path);
  if (p.is_absolute() || root.empty()) return path;
  return (std::filesystem::path(root) / p).string();
}

namespace {

DatasetSplit limit(DatasetSplit s, std::int64_t count) { return count > 0 ? s.head(count) : s; }

}  // namespace

Datasets load_datasets(const DataSpec& spec, const std::string& data_root) {
  Datasets out;
  if (spec.source == "mnist") {
    const std::string dir = resolve_data_path(spec.mnist_dir, data_root);
    const auto file = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
    out.train = limit(load_mnist_idx(file("train-images-idx3-ubyte"), file("train-labels-idx1-ubyte")),
                      spec.train_count);
    out.val = limit(load_mnist_idx(file("t10k-images-idx3-ubyte"), file("t10k-labels-idx1-ubyte")), spec.val_count);
  } else if (spec.source == "cache") {
    out.train = limit(import_patch_archive(resolve_data_path(spec.train_cache, data_root)), spec.train_count);
    out.val = limit(import_patch_archive(resolve_data_path(spec.val_cache, data_root)), spec.val_count);
  } else if (spec.source == "patches") {
    const auto images = load_image_directory(resolve_data_path(spec.image_dir, data_root));
    PatchOptions opts;
    opts.patch_size = spec.patch_size;
    opts.count = spec.train_count;
    RngStream train_rng(spec.seed, 1);
    PatchExtraction tr = extract_whitened_patches(images, opts, train_rng);
    opts.count = spec.val_count;
    RngStream val_rng(spec.seed, 2);
    PatchExtraction va = extract_whitened_patches(images, opts, val_rng, &tr.transform);
    if (va.split.meta.preprocessing != tr.split.meta.preprocessing) {
      throw DataError("validation patches were not whitened with the training transform");
    }
    out.train = std::move(tr.split);
    out.val = std::move(va.split);
    out.whitening = std::move(tr.transform);
    out.dropped_patches = tr.dropped + va.dropped;
    out.whitening_condition = tr.condition_number;
  } else if (spec.source == "synthetic") {
    const Eigen::Index n_train = spec.train_count > 0 ? spec.train_count : 10000;
    const Eigen::Index n_val = spec.val_count > 0 ? spec.val_count : 2000;
    RngStream rng(spec.seed, 3);
    SyntheticSparse s =
        synth_sparse_dataset(spec.synth_dim, spec.synth_atoms, spec.synth_active, n_train + n_val, spec.synth_noise, rng);
    out.train = s.split.head(n_train);
    out.val = DatasetSplit{s.split.samples.bottomRows(n_val), std::nullopt, s.split.meta};
    out.true_dictionary = std::move(s.dictionary);
  } else {
    throw ConfigError("unknown data source '" + spec.source + "'");
  }
  if (out.train.dim() != out.val.dim()) throw DataError("train and validation dimensions differ");
  return out;
}

LinearVae initial_model(const ModelSpec& spec, Eigen::Index input_dim, std::uint64_t seed, GradMode mode,
                        double beta) {
  RngStream rng(seed, kInitStream);
  return make_vae(spec.family, EncoderSpec{spec.encoder, spec.hidden}, input_dim, spec.latents, beta, mode, rng);
}

double mean_lifetime_sparsity(const LinearVae& model, const Matrix& x, std::uint64_t seed) {
  RngStream rng(seed, kEvalStream);
  return lifetime_sparsity(posterior_sample(model, x, rng)).mean();
}

RunOutcome run_training(const RunConfig& cfg, const Datasets& data, const RunRequest& req) {
  TrainConfig tc;
  tc.schedules = cfg.train.schedules();
  tc.batch_size = cfg.train.batch_size;
  tc.n_samples = cfg.train.n_samples;
  tc.seed = req.seed;
  tc.out_dir = req.out_dir;

  RunOutcome out;
  out.seed = req.seed;
  out.mode = req.mode;
  out.beta = req.beta;
  out.out_dir = req.out_dir;
  const auto last = std::filesystem::path(req.out_dir) / "last.ckpt";
  const auto best = std::filesystem::path(req.out_dir) / "best.ckpt";
  if (req.resume && !req.out_dir.empty() && std::filesystem::exists(last) && std::filesystem::exists(best)) {
    out.result = resume(load_checkpoint(last.string()), load_checkpoint(best.string()).model, data.train.samples,
                        data.val.samples, tc);
  } else {
    out.result = train(initial_model(cfg.model, data.train.dim(), req.seed, req.mode, req.beta), data.train.samples,
                       data.val.samples, tc);
  }
  out.val = evaluate_exact(out.result.best_model, data.val.samples);
  out.active = dead_neuron_fraction(out.val.per_latent_kl);
  out.sparsity = mean_lifetime_sparsity(out.result.best_model, data.val.samples, req.seed);
  out.final_val = evaluate_exact(out.result.final_model, data.val.samples);
  out.final_sparsity = mean_lifetime_sparsity(out.result.final_model, data.val.samples, req.seed);
  return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex lock;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          const std::lock_guard guard(lock);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

RepresentationSet representation_set(const LinearVae& model, const DatasetSplit& split) {
  if (!split.labels) throw DataError(split.meta.source + ": representation metrics need labels");
  RepresentationSet out;
  out.features = representation(model, split.samples);
  out.labels = *split.labels;
  out.kind = model.family == Family::kPoisson ? FeatureKind::kLogDeltaRate : FeatureKind::kPosteriorMean;
  return out;
}

namespace {

std::pair<RepresentationSet, RepresentationSet> halves(const LinearVae& model, const DatasetSplit& split) {
  const RepresentationSet all = representation_set(model, split);
  const Eigen::Index half = all.features.rows() / 2;
  RepresentationSet a{all.features.topRows(half), all.labels.head(half), all.kind};
  RepresentationSet b{all.features.bottomRows(all.features.rows() - half),
                      all.labels.tail(all.features.rows() - half), all.kind};
  return {std::move(a), std::move(b)};
}

}  // namespace

std::vector<KnnSummary> knn_grid(const LinearVae& model, const DatasetSplit& split,
                                 const std::vector<Eigen::Index>& sizes, int repeats, std::uint64_t seed, int k) {
  const auto [pool, test] = halves(model, split);
  std::vector<KnnSummary> out;
  for (const Eigen::Index n : sizes) {
    if (n > pool.features.rows()) continue;
    std::vector<double> acc;
    for (int r = 0; r < repeats; ++r) {
      RngStream rng(seed, 300 + static_cast<std::uint64_t>(n) * 64 + static_cast<std::uint64_t>(r));
      acc.push_back(knn_accuracy(pool, test, k, n, rng));
    }
    KnnSummary s;
    s.n_labeled = n;
    for (const double a : acc) s.mean += a / static_cast<double>(acc.size());
    s.ci99 = t_interval_halfwidth(acc, 0.99);
    out.push_back(s);
  }
  return out;
}

ShatteringResult shattering_halves(const LinearVae& model, const DatasetSplit& split) {
  const auto [train, test] = halves(model, split);
  return shattering_dim(train, test);
}

}  // namespace pvae
