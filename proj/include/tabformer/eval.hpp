#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "tabformer/datapipe.hpp"
#include "tabformer/tabbert.hpp"

namespace tabformer {

/// Proportions over one field's full local vocabulary, zero bins included.
struct FieldHistogram {
  std::string field_name;
  std::vector<double> proportions;  // index = local token id
};

/// Histogram of field `field` over every row of every window. Tokens outside
/// the field's range (specials) are not counted.
FieldHistogram field_histogram(const std::vector<WindowSample>& windows, const Vocabulary& vocab, std::size_t field);

/// 0.5 * sum (x - y)^2 / (x + y), skipping bins where x + y == 0.
double chi2_distance(const FieldHistogram& a, const FieldHistogram& b);
/// Shannon entropy in bits.
double entropy_bits(const FieldHistogram& h);

/// Symmetric square root through an eigendecomposition; negative eigenvalues
/// are clamped to zero. Throws when A is not symmetric to 1e-8 relative.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a);

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased; 1e-6 I added when n < dim
  std::size_t count = 0;
};

/// samples: one vector per row.
GaussianSummary gaussian_summary(const Eigen::MatrixXd& samples);
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

Eigen::MatrixXd to_matrix(const Tensor<float>& features);

struct NamedWindows {
  std::string name;
  std::vector<WindowSample> windows;
};

struct FieldFidelity {
  std::string field;
  double entropy_real = 0.0;
  double entropy_generated = 0.0;
  double chi2 = 0.0;
};

struct FidelityReport {
  std::string real_name;
  std::string generated_name;
  std::vector<FieldFidelity> fields;
  std::vector<std::string> datasets;
  Eigen::MatrixXd fid;  // fid(i, j) between datasets[i] and datasets[j]

  nlohmann::json to_json() const;
  /// Tab-separated per-field rows followed by an FID block.
  std::string to_tsv() const;
};

/// Per-field entropy and chi2 between `real` and `generated`, and the pairwise
/// FID matrix over real, generated and `extra`, embedded with the frozen
/// backbone. Windows must validate against `vocab`.
FidelityReport fidelity_report(const NamedWindows& real, const NamedWindows& generated,
                               const std::vector<NamedWindows>& extra, const TabBertModel<float>& backbone,
                               const Vocabulary& vocab);

}  // namespace tabformer
