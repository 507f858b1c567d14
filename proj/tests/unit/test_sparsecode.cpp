#include <doctest.h>

#include <cmath>
#include <set>

#include "pvae/data.hpp"
#include "pvae/sparsecode.hpp"

using namespace pvae;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  RngStream rng(seed, 0);
  return random_matrix(r, c, rng, [](RngStream& g) { return g.normal(); });
}

Matrix unit_columns(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Matrix m = gaussian(r, c, seed);
  m.colwise().normalize();
  return m;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) m(0, i++) = d;
  return m;
}

}  // namespace

TEST_CASE("dictionary normalizes columns") {
  Matrix phi = gaussian(6, 4, 1) * 3.0;
  const Dictionary d(phi);
  CHECK((d.phi().colwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK(d.column_norms()(0) == doctest::Approx(phi.col(0).norm()));
  phi.col(2).setZero();
  CHECK_THROWS_AS(Dictionary{phi}, DomainError);
  RngStream rng(2, 0);
  const Dictionary redrawn(phi, &rng);
  CHECK(redrawn.phi().col(2).norm() == doctest::Approx(1.0));
}

TEST_CASE("beta schedule") {
  const BetaSchedule s{0.05, 0.7, 0.1, 5};
  CHECK(s.at(0) == 0.05);
  CHECK(s.at(4) == 0.05);
  CHECK(s.at(5) == doctest::Approx(0.15));
  CHECK(s.at(500) == 0.7);
  const BetaSchedule flat{0.1, 0.1, 0.0, 5};
  CHECK(flat.at(99) == 0.1);
}

TEST_CASE("ISTA fixed points") {
  SparseCodeConfig cfg;
  cfg.n_iters = 2000;
  cfg.tolerance = 1e-14;
  const Matrix phi = unit_columns(5, 7, 3);
  CHECK(ista_infer(Matrix::Zero(3, 5), phi, cfg).isZero(0.0));

  cfg.beta = 0.0;
  const Matrix x = gaussian(4, 3, 4);
  CHECK((ista_infer(x, Matrix::Identity(3, 3), cfg) - x).cwiseAbs().maxCoeff() <= 1e-9);

  cfg.beta = 0.5;
  CHECK(ista_infer(row({1.0}), Matrix::Identity(1, 1), cfg)(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ista_infer(row({-1.0, 0.2}), Matrix::Identity(2, 2), cfg).isApprox(row({-0.5, 0.0})));
}

TEST_CASE("LCA fixed points") {
  SparseCodeConfig cfg;
  cfg.n_iters = 5000;
  cfg.tolerance = 1e-12;
  const Matrix phi = unit_columns(5, 7, 5);
  CHECK(lca_infer(Matrix::Zero(2, 5), phi, cfg).isZero(0.0));

  cfg.beta = 0.3;
  cfg.lca_threshold = Threshold::kSoft;
  const Matrix x = gaussian(6, 4, 6);
  const Matrix ista = ista_infer(x, Matrix::Identity(4, 4), cfg);
  const Matrix lca = lca_infer(x, Matrix::Identity(4, 4), cfg);
  CHECK((ista - lca).cwiseAbs().maxCoeff() <= 1e-6);

  cfg.nonnegative = true;
  CHECK((ista_infer(x, Matrix::Identity(4, 4), cfg) - lca_infer(x, Matrix::Identity(4, 4), cfg)).cwiseAbs().maxCoeff() <=
        1e-6);
}

TEST_CASE("larger beta gives sparser LCA codes") {
  const Matrix phi = unit_columns(16, 32, 7);
  const Matrix x = gaussian(20, 16, 8);
  for (Threshold t : {Threshold::kHard, Threshold::kSoft}) {
    SparseCodeConfig cfg;
    cfg.lca_threshold = t;
    cfg.n_iters = 1000;
    double prev = 1e18;
    for (double beta : {0.01, 0.05, 0.1, 0.3, 0.6, 1.0, 3.0, 50.0}) {
      cfg.beta = beta;
      const double l0 = (lca_infer(x, phi, cfg).array() != 0.0).cast<double>().sum();
      CHECK(l0 <= prev);
      prev = l0;
    }
    CHECK(prev == 0.0);
  }
}

TEST_CASE("nonnegative inference never emits negative codes") {
  const Matrix phi = unit_columns(10, 20, 9);
  const Matrix x = gaussian(30, 10, 10);
  SparseCodeConfig cfg;
  cfg.nonnegative = true;
  cfg.beta = 0.05;
  CHECK((ista_infer(x, phi, cfg).array() >= 0.0).all());
  CHECK((lca_infer(x, phi, cfg).array() >= 0.0).all());
}

TEST_CASE("ISTA objective is nonincreasing") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix phi = unit_columns(12, 24, 100 + seed);
    const Matrix x = gaussian(5, 12, 200 + seed);
    SparseCodeConfig cfg;
    cfg.beta = 0.02 + 0.05 * static_cast<double>(seed % 5);
    cfg.nonnegative = seed % 2 == 1;
    cfg.n_iters = 300;
    cfg.tolerance = 0.0;
    InferenceTrace trace;
    const Matrix z = ista_infer(x, phi, cfg, &trace);
    REQUIRE(trace.objective.size() >= 2);
    CHECK(trace.objective.front() == doctest::Approx(0.5 * x.squaredNorm()));
    CHECK(trace.objective.back() == doctest::Approx(sparse_objective(x, phi, z, cfg.beta)));
    for (std::size_t i = 1; i < trace.objective.size(); ++i) {
      CHECK(trace.objective[i] <= trace.objective[i - 1] * (1 + 1e-14));
    }
  }
}

TEST_CASE("oversized ISTA step is detected") {
  const Matrix phi = unit_columns(8, 16, 11);
  SparseCodeConfig cfg;
  cfg.beta = 0.01;
  cfg.step_size = 10.0 / lipschitz_constant(phi);
  CHECK_THROWS_AS(ista_infer(gaussian(3, 8, 12), phi, cfg), StepSizeError);
  cfg.step_size = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("Lipschitz constant by power iteration") {
  const Matrix phi = gaussian(9, 6, 13);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(phi.transpose() * phi);
  CHECK(lipschitz_constant(phi, 1000) == doctest::Approx(eig.eigenvalues().maxCoeff()).epsilon(1e-8));
}

TEST_CASE("dictionary learning keeps unit columns") {
  RngStream data_rng(14, 0);
  const auto synth = synth_sparse_dataset(12, 10, 2, 600, 0.01, data_rng);
  for (Solver s : {Solver::kIsta, Solver::kLca}) {
    DictLearnConfig cfg;
    cfg.solver = s;
    cfg.epochs = 4;
    cfg.batch_size = 64;
    cfg.inference.beta = 0.05;
    cfg.inference.n_iters = 100;
    cfg.inference.schedule = BetaSchedule{0.02, 0.1, 0.02, 1};
    int calls = 0;
    cfg.on_epoch = [&](int, const Dictionary& d) {
      ++calls;
      CHECK((d.phi().colwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-9);
    };
    RngStream rng(15, 0);
    const Dictionary d = dict_learn(synth.split.samples, 10, cfg, rng);
    CHECK(calls == 4);
    CHECK(d.atoms() == 10);
  }
}

TEST_CASE("unpenalized dictionary learning approaches the principal subspace") {
  // Data with a decaying spectrum; K < M so the rank-K truncation is not trivial.
  const Eigen::Index m = 10, k = 4, n = 2000;
  Vector scales(m);
  scales << 1.0, 0.9, 0.8, 0.7, 0.25, 0.2, 0.15, 0.1, 0.05, 0.02;
  const Matrix rot = Eigen::HouseholderQR<Matrix>(gaussian(m, m, 16)).householderQ();
  const Matrix data = gaussian(n, m, 17) * scales.asDiagonal() * rot.transpose();

  const Eigen::JacobiSVD<Matrix> svd(data);
  const double truncation = svd.singularValues().tail(m - k).squaredNorm() / static_cast<double>(n);

  DictLearnConfig cfg;
  cfg.inference.beta = 0.0;
  cfg.inference.n_iters = 500;
  cfg.inference.tolerance = 1e-9;
  cfg.epochs = 40;
  cfg.batch_size = 100;
  cfg.learning_rate = 0.1;
  RngStream rng(18, 0);
  const Dictionary d = dict_learn(data, k, cfg, rng);
  const Matrix z = ista_infer(data, d.phi(), cfg.inference);
  const double mse = (data - z * d.phi().transpose()).squaredNorm() / static_cast<double>(n);
  CHECK(mse <= 1.1 * truncation);
}

TEST_CASE("fixed-dictionary rate-distortion sweep") {
  const Matrix phi = unit_columns(10, 20, 19);
  const Matrix x = gaussian(200, 10, 20);
  SparseCodeConfig cfg;
  cfg.n_iters = 400;
  cfg.nonnegative = false;
  cfg.lca_threshold = Threshold::kSoft;
  const std::vector<double> betas = {1e-4, 0.05, 0.2, 0.5, 1.0, 100.0};
  const auto pts = lca_on_fixed_dictionary(phi, x, betas, cfg);
  REQUIRE(pts.size() == betas.size());
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].mse >= pts[i - 1].mse - 1e-9);
    CHECK(pts[i].l0 <= pts[i - 1].l0);
  }
  CHECK(pts.front().mse < 1e-2);
  CHECK(pts.back().l0 == 0.0);
  CHECK(pts.back().mse == doctest::Approx(x.rowwise().squaredNorm().mean()).epsilon(1e-12));
  CHECK(pts.back().sparsity == doctest::Approx(1.0));
}

TEST_CASE("default hyperparameter grid") {
  const auto grid = default_sparse_grid();
  CHECK(grid.size() == 54);
  std::set<double> lrs;
  std::set<int> iters;
  for (const auto& g : grid) {
    lrs.insert(g.learning_rate);
    iters.insert(g.n_iters);
  }
  CHECK(lrs == std::set<double>{1e-3, 1e-2, 1e-1});
  CHECK(iters == std::set<int>{100, 500, 900});
}

TEST_CASE("synthetic sparse data") {
  RngStream rng(21, 0);
  const auto s = synth_sparse_dataset(8, 5, 1, 50, 0.0, rng);
  CHECK((s.dictionary.colwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-12);
  for (Eigen::Index i = 0; i < 50; ++i) {
    Eigen::Index atom = 0;
    CHECK((s.codes.row(i).array() != 0).count() == 1);
    s.codes.row(i).maxCoeff(&atom);
    const Vector expected = s.codes(i, atom) * s.dictionary.col(atom);
    CHECK((s.split.samples.row(i).transpose() - expected).norm() <= 1e-12);
  }
  RngStream again(21, 0);
  CHECK(synth_sparse_dataset(8, 5, 1, 50, 0.0, again).split.samples == s.split.samples);
  RngStream bad(1, 0);
  CHECK_THROWS(synth_sparse_dataset(8, 5, 6, 10, 0.0, bad));
}
