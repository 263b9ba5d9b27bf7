#pragma once

/// Descriptor embeddings: PCA reduction, diagonal-covariance GMM training,
/// Fisher vectors (mean-gradient blocks), and the point-indexed triplet that
/// decomposes a Fisher vector into per-descriptor contributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qbiv/binary_io.hpp"
#include "qbiv/core.hpp"
#include "qbiv/kmeans.hpp"

namespace qbiv {

inline constexpr double kVarianceFloor = 1e-6;

/// Local descriptors of one image or frame: N rows of dimension d.
struct DescriptorSet {
  std::string source_id;
  Matrix vectors;

  DescriptorSet() = default;
  DescriptorSet(std::string id, Matrix v) : source_id(std::move(id)), vectors(std::move(v)) {}
  DescriptorSet(std::string id, std::size_t dim) : source_id(std::move(id)), vectors(0, dim) {}

  std::size_t size() const noexcept { return vectors.rows(); }
  std::size_t dim() const noexcept { return vectors.cols(); }
  bool empty() const noexcept { return vectors.rows() == 0; }
  std::span<const double> operator[](std::size_t i) const { return vectors.row(i); }

  void check_finite() const {
    if (!all_finite(vectors.data())) throw Error(Errc::non_finite, "descriptor set " + source_id + " has non-finite entries");
  }
};

// QIVD: magic, version u32, count u64, dim u32, float32 rows.
inline void write_descriptors(std::ostream& out, const DescriptorSet& set) {
  BinaryWriter w(out);
  w.magic("QIVD");
  w.u32(kFormatVersion);
  w.u64(set.size());
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (double v : set.vectors.data()) w.f32(v);
}

inline DescriptorSet read_descriptors(std::istream& in, std::string source_id = {}) {
  BinaryReader r(in);
  r.expect_magic("QIVD");
  r.expect_version();
  const std::uint64_t count = r.u64();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw Error(Errc::format, "descriptor dimension is zero");
  Matrix m(count, dim);
  for (double& v : m.data()) v = r.f32();
  DescriptorSet set(std::move(source_id), std::move(m));
  set.check_finite();
  return set;
}

inline DescriptorSet load_descriptors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open descriptor file " + path.string());
  return read_descriptors(in, path.string());
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  std::vector<double> mean;  // d_in
  Matrix basis;              // d_out x d_in, orthonormal rows

  std::size_t d_in() const noexcept { return basis.cols(); }
  std::size_t d_out() const noexcept { return basis.rows(); }

  bool operator==(const PcaModel&) const = default;
};

inline std::size_t common_dimension(std::span<const DescriptorSet> corpus) {
  std::size_t dim = 0;
  for (const auto& s : corpus) {
    if (dim == 0) dim = s.dim();
    if (s.dim() != dim) throw Error(Errc::dimension_mismatch, "descriptor sets disagree on dimension");
  }
  return dim;
}

inline Matrix stack_descriptors(std::span<const DescriptorSet> corpus) {
  const std::size_t dim = common_dimension(corpus);
  std::size_t total = 0;
  for (const auto& s : corpus) total += s.size();
  Matrix out(0, dim);
  out.data().reserve(total * dim);
  for (const auto& s : corpus) {
    s.check_finite();
    for (std::size_t i = 0; i < s.size(); ++i) out.append_row(s[i]);
  }
  return out;
}

/// Top-`d_out` principal directions of the pooled corpus. Each basis row is
/// sign-normalized so its largest-magnitude entry is positive.
inline PcaModel fit_pca(std::span<const DescriptorSet> corpus, std::size_t d_out) {
  const Matrix x = stack_descriptors(corpus);
  const std::size_t d_in = x.cols();
  if (d_out == 0) throw Error(Errc::invalid_argument, "d_out must be positive");
  if (d_in < d_out) throw Error(Errc::dimension_mismatch, "d_out exceeds input dimension");
  if (x.rows() < d_out) throw Error(Errc::insufficient_data, "fewer descriptors than d_out");

  const double n = static_cast<double>(x.rows());
  std::vector<double> mean(d_in, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < d_in; ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= n;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d_in), static_cast<Eigen::Index>(d_in));
  Eigen::VectorXd c(static_cast<Eigen::Index>(d_in));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < d_in; ++j) c[static_cast<Eigen::Index>(j)] = r[j] - mean[j];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(c);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= n;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(Errc::non_finite, "PCA eigendecomposition failed");
  const Eigen::MatrixXd& vecs = solver.eigenvectors();  // ascending eigenvalues

  PcaModel model{std::move(mean), Matrix(d_out, d_in)};
  for (std::size_t k = 0; k < d_out; ++k) {
    const auto col = static_cast<Eigen::Index>(d_in - 1 - k);
    Eigen::Index arg = 0;
    vecs.col(col).cwiseAbs().maxCoeff(&arg);
    const double sign = vecs(arg, col) < 0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d_in; ++j) model.basis(k, j) = sign * vecs(static_cast<Eigen::Index>(j), col);
  }
  return model;
}

inline void apply_pca_into(const PcaModel& model, std::span<const double> x, std::span<double> out) {
  for (std::size_t k = 0; k < model.d_out(); ++k) {
    auto b = model.basis.row(k);
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += b[j] * (x[j] - model.mean[j]);
    out[k] = s;
  }
}

inline DescriptorSet apply_pca(const PcaModel& model, const DescriptorSet& set) {
  if (set.dim() != model.d_in()) {
    throw Error(Errc::dimension_mismatch, "descriptor dimension " + std::to_string(set.dim()) +
                                              " does not match PCA input " + std::to_string(model.d_in()));
  }
  DescriptorSet out(set.source_id, Matrix(set.size(), model.d_out()));
  for (std::size_t i = 0; i < set.size(); ++i) apply_pca_into(model, set[i], out.vectors.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Diagonal GMM

class DiagonalGmm {
 public:
  DiagonalGmm() = default;

  /// Validates the parameters. `weight_tolerance` bounds |sum(w) - 1|;
  /// variances below the floor are raised to it.
  DiagonalGmm(std::vector<double> weights, Matrix means, Matrix variances, double weight_tolerance = 1e-9)
      : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    const std::size_t k = weights_.size();
    if (k == 0) throw Error(Errc::invalid_argument, "GMM needs at least one component");
    if (means_.rows() != k || variances_.rows() != k || means_.cols() != variances_.cols() || means_.cols() == 0) {
      throw Error(Errc::dimension_mismatch, "GMM parameter shapes disagree");
    }
    double sum = 0.0;
    for (double w : weights_) {
      if (!(w > 0.0) || !std::isfinite(w)) throw Error(Errc::invalid_argument, "GMM weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > weight_tolerance) throw Error(Errc::invalid_argument, "GMM weights do not sum to 1");
    if (!all_finite(means_.data()) || !all_finite(variances_.data())) {
      throw Error(Errc::non_finite, "GMM parameters must be finite");
    }
    for (double& v : variances_.data()) v = std::max(v, kVarianceFloor);
    precompute();
  }

  std::size_t components() const noexcept { return weights_.size(); }
  std::size_t dim() const noexcept { return means_.cols(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const Matrix& means() const noexcept { return means_; }
  const Matrix& variances() const noexcept { return variances_; }
  std::span<const double> inv_std(std::size_t k) const { return inv_std_.row(k); }
  double inv_sqrt_weight(std::size_t k) const { return inv_sqrt_weight_[k]; }

  /// log w_k + log N(x; mu_k, sigma_k^2) for every k.
  void log_joint(std::span<const double> x, std::span<double> out) const {
    const std::size_t d = dim();
    for (std::size_t k = 0; k < components(); ++k) {
      auto mu = means_.row(k);
      auto is = inv_std_.row(k);
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double z = (x[j] - mu[j]) * is[j];
        q += z * z;
      }
      out[k] = log_const_[k] - 0.5 * q;
    }
  }

  bool operator==(const DiagonalGmm& o) const {
    return weights_ == o.weights_ && means_ == o.means_ && variances_ == o.variances_;
  }

 private:
  void precompute() {
    const std::size_t k = components();
    const std::size_t d = dim();
    log_const_.assign(k, 0.0);
    inv_sqrt_weight_.assign(k, 0.0);
    inv_std_ = Matrix(k, d);
    for (std::size_t c = 0; c < k; ++c) {
      double lc = std::log(weights_[c]);
      for (std::size_t j = 0; j < d; ++j) {
        const double v = variances_(c, j);
        lc -= 0.5 * std::log(2.0 * std::numbers::pi * v);
        inv_std_(c, j) = 1.0 / std::sqrt(v);
      }
      log_const_[c] = lc;
      inv_sqrt_weight_[c] = 1.0 / std::sqrt(weights_[c]);
    }
  }

  std::vector<double> weights_;
  Matrix means_;
  Matrix variances_;
  std::vector<double> log_const_;
  std::vector<double> inv_sqrt_weight_;
  Matrix inv_std_;
};

/// In-place log-sum-exp normalization; returns the log normalizer.
inline double softmax_inplace(std::span<double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - top);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return top + std::log(sum);
}

/// Soft-assignment probabilities gamma_x(k).
inline std::vector<double> posteriors(const DiagonalGmm& gmm, std::span<const double> x) {
  if (x.size() != gmm.dim()) throw Error(Errc::dimension_mismatch, "point dimension does not match GMM");
  std::vector<double> g(gmm.components());
  gmm.log_joint(x, g);
  softmax_inplace(g);
  return g;
}

struct GmmTrace {
  std::vector<double> mean_log_likelihood;   // one entry per E-step
  std::vector<std::size_t> reseeded_at;      // E-step indices followed by a component re-seed
  bool converged = false;
};

struct GmmFit {
  DiagonalGmm model;
  GmmTrace trace;
};

/// EM for a diagonal GMM, initialized from K-means++ seeds. Deterministic for
/// a fixed (corpus order, K, seed).
inline GmmFit fit_gmm_traced(std::span<const DescriptorSet> corpus, std::size_t components, std::uint64_t seed,
                             std::size_t max_iters, double tol) {
  if (components == 0) throw Error(Errc::invalid_argument, "K must be at least 1");
  const Matrix x = stack_descriptors(corpus);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n < components) throw Error(Errc::insufficient_data, "fewer descriptors than Gaussians");

  const double nd = static_cast<double>(n);
  std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) global_mean[j] += x(i, j);
  }
  for (double& m : global_mean) m /= nd;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double t = x(i, j) - global_mean[j];
      global_var[j] += t * t;
    }
  }
  for (double& v : global_var) v = std::max(v / nd, kVarianceFloor);

  CounterRng rng(seed, 0x474D4D);
  const auto seeds = kmeanspp_seed(x, components, rng);
  std::vector<double> w(components, 1.0 / static_cast<double>(components));
  Matrix mu(components, d), var(components, d);
  for (std::size_t k = 0; k < components; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      mu(k, j) = x(seeds[k], j);
      var(k, j) = global_var[j];
    }
  }

  GmmTrace trace;
  std::vector<double> gamma(components);
  std::vector<double> nk(components);
  std::vector<double> point_ll(n);
  Matrix s1(components, d), s2(components, d);
  double prev = -std::numeric_limits<double>::infinity();

  for (std::size_t it = 0; it < max_iters; ++it) {
    const DiagonalGmm current(w, mu, var, 1e-6);
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(s1.data().begin(), s1.data().end(), 0.0);
    std::fill(s2.data().begin(), s2.data().end(), 0.0);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row(i);
      current.log_joint(xi, gamma);
      point_ll[i] = softmax_inplace(gamma);
      ll += point_ll[i];
      for (std::size_t k = 0; k < components; ++k) {
        const double g = gamma[k];
        if (g == 0.0) continue;
        nk[k] += g;
        auto m = mu.row(k);
        auto a = s1.row(k);
        auto b = s2.row(k);
        for (std::size_t j = 0; j < d; ++j) {
          // Statistics are centered on the current mean to limit cancellation.
          const double t = xi[j] - m[j];
          a[j] += g * t;
          b[j] += g * t * t;
        }
      }
    }
    ll /= nd;
    trace.mean_log_likelihood.push_back(ll);
    if (it > 0 && ll - prev < tol) {
      trace.converged = true;
      break;
    }
    prev = ll;

    std::vector<std::size_t> empty;
    for (std::size_t k = 0; k < components; ++k) {
      if (nk[k] < 1e-9) {
        empty.push_back(k);
        continue;
      }
      w[k] = nk[k] / nd;
      for (std::size_t j = 0; j < d; ++j) {
        const double shift = s1(k, j) / nk[k];
        mu(k, j) += shift;
        var(k, j) = std::max(s2(k, j) / nk[k] - shift * shift, kVarianceFloor);
      }
    }
    if (!empty.empty()) {
      // Re-seed from the worst-explained points.
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return point_ll[a] < point_ll[b]; });
      for (std::size_t e = 0; e < empty.size(); ++e) {
        const std::size_t k = empty[e];
        const std::size_t src = order[e % n];
        w[k] = 1.0 / static_cast<double>(components);
        for (std::size_t j = 0; j < d; ++j) {
          mu(k, j) = x(src, j);
          var(k, j) = global_var[j];
        }
      }
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      for (double& v : w) v /= total;
      trace.reseeded_at.push_back(it);
      prev = -std::numeric_limits<double>::infinity();
    }
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return {DiagonalGmm(std::move(w), std::move(mu), std::move(var)), std::move(trace)};
}

inline DiagonalGmm fit_gmm(std::span<const DescriptorSet> corpus, std::size_t components, std::uint64_t seed,
                           std::size_t max_iters, double tol) {
  return fit_gmm_traced(corpus, components, seed, max_iters, tol).model;
}

// ---------------------------------------------------------------------------
// Fisher vectors and point-indexed triplets

enum class FvNormalization : std::uint8_t { raw = 0, power_l2 = 1 };

struct FisherVector {
  std::vector<double> values;  // K blocks of length d
  FvNormalization normalization = FvNormalization::raw;

  std::size_t size() const noexcept { return values.size(); }
};

/// Signed square root followed by unit L2 normalization. All-zero stays zero.
inline void power_l2_normalize(FisherVector& fv) {
  double norm2 = 0.0;
  for (double& v : fv.values) {
    v = std::copysign(std::sqrt(std::abs(v)), v);
    norm2 += v * v;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : fv.values) v *= inv;
  }
  fv.normalization = FvNormalization::power_l2;
}

/// Mean-gradient Fisher vector: block k = (1/N) sum_x gamma_x(k) (x - mu_k) / (sigma_k sqrt(w_k)).
inline FisherVector compute_fv(const DiagonalGmm& gmm, const DescriptorSet& set, bool normalize) {
  if (set.empty()) throw Error(Errc::empty_input, "cannot encode an empty descriptor set");
  if (set.dim() != gmm.dim()) throw Error(Errc::dimension_mismatch, "descriptor dimension does not match GMM");
  const std::size_t k_count = gmm.components();
  const std::size_t d = gmm.dim();
  FisherVector fv{std::vector<double>(k_count * d, 0.0), FvNormalization::raw};
  std::vector<double> gamma(k_count);
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto x = set[i];
    gmm.log_joint(x, gamma);
    softmax_inplace(gamma);
    for (std::size_t k = 0; k < k_count; ++k) {
      const double g = gamma[k] * gmm.inv_sqrt_weight(k);
      if (g == 0.0) continue;
      auto mu = gmm.means().row(k);
      auto is = gmm.inv_std(k);
      double* block = fv.values.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) block[j] += g * (x[j] - mu[j]) * is[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(set.size());
  for (double& v : fv.values) v *= inv_n;
  if (normalize) power_l2_normalize(fv);
  return fv;
}

struct PointIndexedTriplet {
  std::uint32_t gaussian = 0;
  double coefficient = 0.0;       // gamma_x(r) / sqrt(w_r)
  std::vector<double> residual;   // (x - mu_r) / sigma_r
};

/// Embeds x with its strongest Gaussian only. Ties go to the lowest index.
inline PointIndexedTriplet point_index(const DiagonalGmm& gmm, std::span<const double> x) {
  const auto gamma = posteriors(gmm, x);
  const auto r = static_cast<std::size_t>(std::max_element(gamma.begin(), gamma.end()) - gamma.begin());
  PointIndexedTriplet t;
  t.gaussian = static_cast<std::uint32_t>(r);
  t.coefficient = gamma[r] * gmm.inv_sqrt_weight(r);
  t.residual.resize(gmm.dim());
  auto mu = gmm.means().row(r);
  auto is = gmm.inv_std(r);
  for (std::size_t j = 0; j < gmm.dim(); ++j) t.residual[j] = (x[j] - mu[j]) * is[j];
  return t;
}

/// Hard-assignment Fisher vector rebuilt from triplets of a set of N descriptors.
inline FisherVector reconstruct_hard_fv(std::span<const PointIndexedTriplet> triplets, std::size_t components,
                                        std::size_t d, std::size_t n) {
  FisherVector fv{std::vector<double>(components * d, 0.0), FvNormalization::raw};
  if (triplets.empty()) return fv;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (const auto& t : triplets) {
    if (t.gaussian >= components) throw Error(Errc::out_of_range, "triplet Gaussian index out of range");
    if (t.residual.size() != d) throw Error(Errc::dimension_mismatch, "triplet residual has wrong dimension");
    double* block = fv.values.data() + t.gaussian * d;
    for (std::size_t j = 0; j < d; ++j) block[j] += inv_n * t.coefficient * t.residual[j];
  }
  return fv;
}

// ---------------------------------------------------------------------------
// QIVM model files: magic, version u32, kind u8, dimensions u32, float32 payload.

enum class ModelKind : std::uint8_t { pca = 0, gmm = 1 };

inline void write_model(std::ostream& out, const PcaModel& m) {
  BinaryWriter w(out);
  w.magic("QIVM");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(ModelKind::pca));
  w.u32(static_cast<std::uint32_t>(m.d_in()));
  w.u32(static_cast<std::uint32_t>(m.d_out()));
  for (double v : m.mean) w.f32(v);
  for (double v : m.basis.data()) w.f32(v);
}

inline void write_model(std::ostream& out, const DiagonalGmm& g) {
  BinaryWriter w(out);
  w.magic("QIVM");
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(ModelKind::gmm));
  w.u32(static_cast<std::uint32_t>(g.components()));
  w.u32(static_cast<std::uint32_t>(g.dim()));
  for (double v : g.weights()) w.f32(v);
  for (double v : g.means().data()) w.f32(v);
  for (double v : g.variances().data()) w.f32(v);
}

inline ModelKind read_model_header(BinaryReader& r, ModelKind expected) {
  r.expect_magic("QIVM");
  r.expect_version();
  const auto kind = static_cast<ModelKind>(r.u8());
  if (kind != expected) throw Error(Errc::format, "model file holds a different model kind");
  return kind;
}

inline PcaModel read_pca(std::istream& in) {
  BinaryReader r(in);
  read_model_header(r, ModelKind::pca);
  const std::uint32_t d_in = r.u32();
  const std::uint32_t d_out = r.u32();
  if (d_out == 0 || d_out > d_in) throw Error(Errc::format, "invalid PCA dimensions");
  PcaModel m{std::vector<double>(d_in), Matrix(d_out, d_in)};
  for (double& v : m.mean) v = r.f32();
  for (double& v : m.basis.data()) v = r.f32();
  return m;
}

inline DiagonalGmm read_gmm(std::istream& in) {
  BinaryReader r(in);
  read_model_header(r, ModelKind::gmm);
  const std::uint32_t k = r.u32();
  const std::uint32_t d = r.u32();
  if (k == 0 || d == 0) throw Error(Errc::format, "invalid GMM dimensions");
  std::vector<double> w(k);
  Matrix mu(k, d), var(k, d);
  for (double& v : w) v = r.f32();
  for (double& v : mu.data()) v = r.f32();
  for (double& v : var.data()) v = r.f32();
  // float32 storage perturbs the weight sum by ~1e-7 per component.
  return DiagonalGmm(std::move(w), std::move(mu), std::move(var), 1e-4);
}

}  // namespace qbiv
