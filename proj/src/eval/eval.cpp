#include "tabformer/eval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "tabformer/checkpoint.hpp"

namespace tabformer {

FieldHistogram field_histogram(const std::vector<WindowSample>& windows, const Vocabulary& vocab, std::size_t field) {
  const FieldVocab& fv = vocab.field(field);
  FieldHistogram h{fv.field_name, std::vector<double>(static_cast<std::size_t>(fv.size()), 0.0)};
  double total = 0.0;
  for (const auto& w : windows) {
    if (w.fields != vocab.field_count()) throw FingerprintMismatch("field_histogram: window width does not match vocabulary");
    for (std::size_t r = 0; r < w.rows; ++r) {
      const std::int32_t id = w.at(r, field);
      if (!fv.owns(id)) continue;
      h.proportions[static_cast<std::size_t>(id - fv.offset)] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw std::invalid_argument("field_histogram: no in-range tokens for field " + fv.field_name);
  for (double& p : h.proportions) p /= total;
  return h;
}

double chi2_distance(const FieldHistogram& a, const FieldHistogram& b) {
  if (a.proportions.size() != b.proportions.size() || a.field_name != b.field_name) {
    throw std::invalid_argument("chi2_distance: histograms are not aligned");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.proportions.size(); ++i) {
    const double s = a.proportions[i] + b.proportions[i];
    if (s == 0.0) continue;
    const double d = a.proportions[i] - b.proportions[i];
    total += d * d / s;
  }
  return 0.5 * total;
}

double entropy_bits(const FieldHistogram& h) {
  double e = 0.0;
  for (double p : h.proportions) {
    if (p > 0.0) e -= p * std::log2(p);
  }
  return e;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("psd_sqrt: matrix is not square");
  const double scale = std::max(1.0, a.norm());
  if ((a - a.transpose()).norm() > 1e-8 * scale) throw std::invalid_argument("psd_sqrt: matrix is not symmetric");
  Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw std::runtime_error("psd_sqrt: eigendecomposition failed");
  Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd r = solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

GaussianSummary gaussian_summary(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  if (n < 2) throw std::invalid_argument("gaussian_summary: need at least two vectors");
  GaussianSummary g;
  g.count = static_cast<std::size_t>(n);
  g.mean = samples.colwise().mean().transpose();
  Eigen::MatrixXd centered = samples.rowwise() - g.mean.transpose();
  g.covariance = centered.transpose() * centered / double(n - 1);
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
  if (n < samples.cols()) g.covariance += 1e-6 * Eigen::MatrixXd::Identity(samples.cols(), samples.cols());
  return g;
}

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("frechet_distance: dimension mismatch");
  // Tr((A B)^1/2) computed as Tr((A^1/2 B A^1/2)^1/2), which stays symmetric.
  const Eigen::MatrixXd ra = psd_sqrt(a.covariance);
  Eigen::MatrixXd inner = ra * b.covariance * ra;
  inner = 0.5 * (inner + inner.transpose());
  const double cross = psd_sqrt(inner).trace();
  const double value = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("fid: dimension mismatch");
  return frechet_distance(gaussian_summary(a), gaussian_summary(b));
}

Eigen::MatrixXd to_matrix(const Tensor<float>& features) {
  if (features.rank() != 2) throw ShapeError("to_matrix: expected (n, d) features");
  const auto n = Eigen::Index(features.shape()[0]), d = Eigen::Index(features.shape()[1]);
  Eigen::MatrixXd m(n, d);
  auto data = features.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = data[std::size_t(i * d + j)];
  }
  return m;
}

nlohmann::json FidelityReport::to_json() const {
  nlohmann::json fj = nlohmann::json::array();
  for (const auto& f : fields) {
    fj.push_back({{"field", f.field},
                  {"entropy_real", f.entropy_real},
                  {"entropy_generated", f.entropy_generated},
                  {"chi2", f.chi2}});
  }
  nlohmann::json matrix = nlohmann::json::array();
  for (Eigen::Index i = 0; i < fid.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < fid.cols(); ++j) row.push_back(fid(i, j));
    matrix.push_back(row);
  }
  return {{"real", real_name},
          {"generated", generated_name},
          {"entropy_unit", "bits"},
          {"fields", fj},
          {"fid", {{"datasets", datasets}, {"matrix", matrix}}}};
}

std::string FidelityReport::to_tsv() const {
  std::ostringstream out;
  char buf[128];
  out << "field\tentropy_real\tentropy_generated\tchi2\n";
  for (const auto& f : fields) {
    std::snprintf(buf, sizeof(buf), "\t%.9g\t%.9g\t%.9g\n", f.entropy_real, f.entropy_generated, f.chi2);
    out << f.field << buf;
  }
  out << "\nfid";
  for (const auto& d : datasets) out << '\t' << d;
  out << '\n';
  for (Eigen::Index i = 0; i < fid.rows(); ++i) {
    out << datasets[std::size_t(i)];
    for (Eigen::Index j = 0; j < fid.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "\t%.9g", fid(i, j));
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

FidelityReport fidelity_report(const NamedWindows& real, const NamedWindows& generated,
                               const std::vector<NamedWindows>& extra, const TabBertModel<float>& backbone,
                               const Vocabulary& vocab) {
  if (backbone.vocab_size() != vocab.total_size()) {
    throw FingerprintMismatch("fidelity_report: backbone was trained with a different vocabulary");
  }
  std::vector<const NamedWindows*> all = {&real, &generated};
  for (const auto& e : extra) all.push_back(&e);
  for (const auto* d : all) {
    if (d->windows.size() < 2) throw std::invalid_argument("fidelity_report: dataset '" + d->name + "' has < 2 windows");
    for (const auto& w : d->windows) {
      if (!validate_window(w, vocab)) {
        throw FingerprintMismatch("fidelity_report: dataset '" + d->name + "' does not match the vocabulary");
      }
    }
  }

  FidelityReport report;
  report.real_name = real.name;
  report.generated_name = generated.name;
  for (std::size_t f = 0; f < vocab.field_count(); ++f) {
    auto hr = field_histogram(real.windows, vocab, f);
    auto hg = field_histogram(generated.windows, vocab, f);
    report.fields.push_back({hr.field_name, entropy_bits(hr), entropy_bits(hg), chi2_distance(hr, hg)});
  }

  std::vector<GaussianSummary> summaries;
  for (const auto* d : all) {
    report.datasets.push_back(d->name);
    summaries.push_back(gaussian_summary(to_matrix(extract_features(backbone, d->windows))));
  }
  const auto k = Eigen::Index(all.size());
  report.fid = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      report.fid(i, j) = report.fid(j, i) = frechet_distance(summaries[std::size_t(i)], summaries[std::size_t(j)]);
    }
  }
  return report;
}

}  // namespace tabformer
