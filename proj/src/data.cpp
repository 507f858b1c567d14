#include "pvae/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "pvae/binary_io.hpp"

namespace pvae {

void DatasetSplit::validate() const {
  if (!samples.allFinite()) throw DataError(meta.source + ": non-finite sample value");
  if (labels && labels->size() != samples.rows()) {
    throw DataError(meta.source + ": " + std::to_string(labels->size()) + " labels for " +
                    std::to_string(samples.rows()) + " samples");
  }
}

DatasetSplit DatasetSplit::head(Eigen::Index n) const {
  n = std::min(n, size());
  DatasetSplit out{samples.topRows(n), std::nullopt, meta};
  if (labels) out.labels = labels->head(n);
  return out;
}

namespace {

std::uint32_t read_be32(bin::Reader& r) {
  const auto bytes = r.get_bytes(4);
  std::uint32_t v = 0;
  for (const unsigned char c : bytes) v = (v << 8) | c;
  return v;
}

}  // namespace

DatasetSplit load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const std::string image_bytes = bin::read_file(images_path);
  const std::string label_bytes = bin::read_file(labels_path);

  bin::Reader images(image_bytes, images_path);
  if (const auto magic = read_be32(images); magic != 0x00000803) {
    throw DataError(images_path + ": bad IDX image magic " + std::to_string(magic));
  }
  const std::uint32_t n = read_be32(images);
  const std::uint32_t rows = read_be32(images);
  const std::uint32_t cols = read_be32(images);

  bin::Reader labels(label_bytes, labels_path);
  if (const auto magic = read_be32(labels); magic != 0x00000801) {
    throw DataError(labels_path + ": bad IDX label magic " + std::to_string(magic));
  }
  const std::uint32_t n_labels = read_be32(labels);
  if (n_labels != n) {
    throw DataError(images_path + " holds " + std::to_string(n) + " images but " + labels_path + " holds " +
                    std::to_string(n_labels) + " labels");
  }

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  const auto pixels = images.get_bytes(static_cast<std::size_t>(n) * dim);
  const auto raw_labels = labels.get_bytes(n);

  DatasetSplit out;
  out.samples.resize(n, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    out.samples.data()[i] = static_cast<unsigned char>(pixels[i]) / 255.0;
  }
  IntVector y(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    y(i) = static_cast<unsigned char>(raw_labels[i]);
    if (y(i) > 9) throw DataError(labels_path + ": label " + std::to_string(y(i)) + " at index " + std::to_string(i));
  }
  out.labels = std::move(y);
  out.meta.source = "mnist:" + std::filesystem::path(images_path).filename().string();
  out.meta.preprocessing = "scale[0,1]";
  out.meta.checksum = bin::fnv1a64(pixels, bin::fnv1a64(raw_labels));
  return out;
}

Matrix read_pgm(const std::string& path) {
  const std::string bytes = bin::read_file(path);
  std::size_t pos = 0;
  const auto token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw DataError(path + ": truncated PGM header");
    return bytes.substr(start, pos - start);
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw DataError(path + ": not a PGM file (magic " + magic + ")");
  const auto number = [&]() {
    const std::string t = token();
    try {
      return std::stol(t);
    } catch (const std::exception&) {
      throw DataError(path + ": bad PGM header field '" + t + "'");
    }
  };
  const long width = number();
  const long height = number();
  const long maxval = number();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) throw DataError(path + ": bad PGM dimensions");

  Matrix img(height, width);
  if (magic == "P2") {
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(number()) / maxval;
    return img;
  }
  ++pos;  // single whitespace after maxval
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(img.size()) * bpp;
  if (bytes.size() < pos + need) {
    throw DataError(path + ": truncated, needed bytes [" + std::to_string(pos) + ", " + std::to_string(pos + need) +
                    ") but file has " + std::to_string(bytes.size()));
  }
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos + static_cast<std::size_t>(i) * bpp);
    const unsigned v = bpp == 2 ? (static_cast<unsigned>(p[0]) << 8) | p[1] : p[0];
    img.data()[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

void write_pgm(const std::string& path,
               const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& pixels) {
  std::string out = "P5\n" + std::to_string(pixels.cols()) + " " + std::to_string(pixels.rows()) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), static_cast<std::size_t>(pixels.size()));
  bin::write_file(path, out);
}

std::vector<Matrix> load_image_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError(dir + ": no .pgm images");
  std::vector<Matrix> images;
  for (const auto& f : files) images.push_back(read_pgm(f.string()));
  return images;
}

Matrix WhiteningTransform::apply(const Matrix& centered_patches) const {
  if (centered_patches.cols() != mean.size()) throw ShapeError("WhiteningTransform::apply: dimension mismatch");
  return (centered_patches.rowwise() - mean.transpose()) * whitening;
}

Matrix WhiteningTransform::invert(const Matrix& whitened) const {
  if (whitened.cols() != mean.size()) throw ShapeError("WhiteningTransform::invert: dimension mismatch");
  return (whitened * unwhitening).rowwise() + mean.transpose();
}

std::string WhiteningTransform::descriptor() const {
  std::ostringstream s;
  s.precision(17);
  s << "zca(eps=" << epsilon << ",m=" << mean.size() << ",fp=" << std::hex
    << bin::fnv1a64(std::string_view(reinterpret_cast<const char*>(whitening.data()),
                                     static_cast<std::size_t>(whitening.size()) * sizeof(double)))
    << std::dec << ");" << contrast;
  return s.str();
}

Matrix sample_normalized_patches(const std::vector<Matrix>& images, const PatchOptions& opts, RngStream& rng,
                                 Eigen::Index* dropped) {
  const int p = opts.patch_size;
  if (p < 2) throw ConfigError("patch size must be at least 2");
  if (images.empty()) throw DataError("patch extraction: no images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rows() < p || images[i].cols() < p) {
      throw DataError("patch extraction: image " + std::to_string(i) + " is smaller than the patch size");
    }
  }
  const Eigen::Index dim = static_cast<Eigen::Index>(p) * p;
  Matrix out(opts.count, dim);
  Eigen::Index filled = 0;
  Eigen::Index rejected = 0;
  const Eigen::Index max_attempts = 20 * opts.count + 1000;
  while (filled < opts.count) {
    if (filled + rejected >= max_attempts) throw DataError("patch extraction: too many constant patches");
    const Matrix& img = images[static_cast<std::size_t>(rng.next_u64() % images.size())];
    const auto r = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(img.rows() - p + 1));
    const auto c = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(img.cols() - p + 1));
    Eigen::RowVectorXd patch(dim);
    for (int i = 0; i < p; ++i) patch.segment(i * p, p) = img.row(r + i).segment(c, p);
    patch.array() -= patch.mean();
    const double sd = std::sqrt(patch.squaredNorm() / static_cast<double>(dim));
    if (sd < 1e-8) {
      ++rejected;
      continue;
    }
    out.row(filled++) = patch / std::max(sd, opts.contrast_floor);
  }
  if (dropped) *dropped = rejected;
  return out;
}

WhiteningTransform fit_whitening(const Matrix& patches, double epsilon_scale, std::string contrast) {
  if (patches.rows() < 2) throw DataError("fit_whitening: need at least two patches");
  WhiteningTransform t;
  t.mean = patches.colwise().mean().transpose();
  const Matrix centered = patches.rowwise() - t.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(patches.rows());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector lambda = eig.eigenvalues().cwiseMax(0.0);
  t.epsilon = epsilon_scale * lambda.mean();
  if (!(t.epsilon > 0.0)) throw DataError("fit_whitening: degenerate covariance");
  const Vector reg = lambda.array() + t.epsilon;
  const Matrix& u = eig.eigenvectors();
  t.whitening = u * reg.cwiseSqrt().cwiseInverse().asDiagonal() * u.transpose();
  t.unwhitening = u * reg.cwiseSqrt().asDiagonal() * u.transpose();
  t.contrast = std::move(contrast);
  return t;
}

PatchExtraction extract_whitened_patches(const std::vector<Matrix>& images, const PatchOptions& opts, RngStream& rng,
                                         const WhiteningTransform* fitted) {
  PatchExtraction out;
  const Matrix patches = sample_normalized_patches(images, opts, rng, &out.dropped);
  std::ostringstream contrast;
  contrast << "center+std(floor=" << opts.contrast_floor << ")";
  out.transform = fitted ? *fitted : fit_whitening(patches, opts.epsilon_scale, contrast.str());
  if (fitted && fitted->mean.size() != patches.cols()) throw ShapeError("whitening transform dimension mismatch");

  const Eigen::SelfAdjointEigenSolver<Matrix> eig(out.transform.unwhitening);
  out.condition_number = std::pow(eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff(), 2);

  out.split.samples = out.transform.apply(patches);
  out.split.meta.source = "patches";
  out.split.meta.patch_size = opts.patch_size;
  out.split.meta.preprocessing = out.transform.descriptor();
  out.split.validate();
  return out;
}

namespace {

constexpr char kArchiveMagic[4] = {'P', 'V', 'L', 'B'};
constexpr std::uint16_t kArchiveVersion = 1;

std::string archive_metadata(const DatasetSplit& s) {
  nlohmann::ordered_json j;
  j["source"] = s.meta.source;
  j["patch_size"] = s.meta.patch_size;
  j["preprocessing"] = s.meta.preprocessing;
  j["n"] = s.size();
  j["m"] = s.dim();
  return j.dump();
}

}  // namespace

std::string serialize_patch_archive(const DatasetSplit& split) {
  split.validate();
  bin::Writer payload;
  for (Eigen::Index i = 0; i < split.samples.size(); ++i) payload.put(static_cast<float>(split.samples.data()[i]));
  if (split.labels) {
    for (Eigen::Index i = 0; i < split.labels->size(); ++i) payload.put(static_cast<std::int32_t>((*split.labels)(i)));
  }
  const std::string meta = archive_metadata(split);

  bin::Writer w;
  w.put_bytes(std::string_view(kArchiveMagic, 4));
  w.put(kArchiveVersion);
  w.put(static_cast<std::uint16_t>(split.labels ? 1 : 0));
  w.put(static_cast<std::uint64_t>(split.size()));
  w.put(static_cast<std::uint64_t>(split.dim()));
  w.put(static_cast<std::uint64_t>(split.meta.patch_size));
  w.put(static_cast<std::uint64_t>(meta.size()));
  w.put_bytes(meta);
  w.put_bytes(payload.bytes());
  w.put(bin::fnv1a64(payload.bytes()));
  return w.bytes();
}

void export_patch_archive(const std::string& path, const DatasetSplit& split) {
  bin::write_file(path, serialize_patch_archive(split));
}

DatasetSplit parse_patch_archive(std::string_view bytes, const std::string& source) {
  bin::Reader r(bytes, source);
  if (r.get_bytes(4) != std::string_view(kArchiveMagic, 4)) throw DataError(source + ": not a PVLB archive");
  if (const auto v = r.get<std::uint16_t>(); v != kArchiveVersion) {
    throw DataError(source + ": unsupported PVLB version " + std::to_string(v));
  }
  const auto flags = r.get<std::uint16_t>();
  if (flags & ~1u) throw DataError(source + ": unknown PVLB flags");
  const auto n = r.get<std::uint64_t>();
  const auto m = r.get<std::uint64_t>();
  const auto patch = r.get<std::uint64_t>();
  const auto meta_len = r.get<std::uint64_t>();
  if (n > (1ULL << 40) || m > (1ULL << 24) || meta_len > (1ULL << 24)) throw DataError(source + ": implausible header");
  const auto meta_text = r.get_bytes(meta_len);
  const std::size_t payload_start = r.position();
  const std::size_t payload_len = n * m * sizeof(float) + ((flags & 1u) ? n * sizeof(std::int32_t) : 0);
  const auto payload = r.get_bytes(payload_len);
  const auto stored = r.get<std::uint64_t>();
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes after checksum");
  const auto computed = bin::fnv1a64(payload);
  if (stored != computed) throw DataError(source + ": checksum mismatch");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": bad metadata: " + e.what());
  }
  if (meta.value("n", std::uint64_t{0}) != n || meta.value("m", std::uint64_t{0}) != m ||
      meta.value("patch_size", std::uint64_t{0}) != patch) {
    throw DataError(source + ": metadata disagrees with header shape");
  }
  if (patch != 0 && patch * patch != m) throw DataError(source + ": patch size does not match sample dimension");

  DatasetSplit out;
  out.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  bin::Reader p(bytes.substr(payload_start, payload_len), source);
  for (Eigen::Index i = 0; i < out.samples.size(); ++i) out.samples.data()[i] = p.get<float>();
  if (flags & 1u) {
    IntVector y(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = p.get<std::int32_t>();
    out.labels = std::move(y);
  }
  out.meta.source = meta.value("source", std::string{});
  out.meta.patch_size = static_cast<int>(patch);
  out.meta.preprocessing = meta.value("preprocessing", std::string{});
  out.meta.checksum = computed;
  out.validate();
  return out;
}

DatasetSplit import_patch_archive(const std::string& path) { return parse_patch_archive(bin::read_file(path), path); }

SyntheticSparse synth_sparse_dataset(Eigen::Index input_dim, Eigen::Index atoms, Eigen::Index k_active,
                                     Eigen::Index n, double noise_sigma, RngStream& rng) {
  if (k_active < 0 || k_active > atoms) throw ConfigError("synth_sparse_dataset: k_active must be <= atoms");
  if (noise_sigma < 0.0) throw ConfigError("synth_sparse_dataset: negative noise");
  SyntheticSparse out;
  out.dictionary = random_matrix(input_dim, atoms, rng, [](RngStream& r) { return r.normal(); });
  out.dictionary.colwise().normalize();
  out.codes = Matrix::Zero(n, atoms);
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(atoms));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::iota(pool.begin(), pool.end(), 0);
    for (Eigen::Index j = 0; j < k_active; ++j) {
      const auto pick = static_cast<std::size_t>(j) +
                        static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(atoms - j));
      std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
      out.codes(i, pool[static_cast<std::size_t>(j)]) = rng.exponential(1.0);
    }
  }
  out.split.samples = out.codes * out.dictionary.transpose();
  if (noise_sigma > 0.0) {
    out.split.samples += noise_sigma * random_matrix(n, input_dim, rng, [](RngStream& r) { return r.normal(); });
  }
  out.split.meta.source = "synthetic";
  out.split.meta.preprocessing = "sparse(k=" + std::to_string(k_active) + ")";
  return out;
}

}  // namespace pvae
