#include <algorithm>
#include <cmath>

#include "tabformer/datapipe.hpp"

namespace tabformer {

std::size_t QuantizerSpec::quantize(double value) const {
  return static_cast<std::size_t>(std::upper_bound(bin_edges.begin(), bin_edges.end(), value) - bin_edges.begin());
}

double QuantizerSpec::decode_center(std::size_t bucket) const {
  if (bucket >= bin_count) throw std::out_of_range("QuantizerSpec: bucket out of range");
  const double lo = bucket == 0 ? min_value : bin_edges[bucket - 1];
  const double hi = bucket + 1 == bin_count ? max_value : bin_edges[bucket];
  double center = lo + (hi - lo) / 2.0;
  // Adjacent doubles can round the midpoint onto the upper edge.
  if (bucket + 1 < bin_count && center >= hi) center = lo;
  return center;
}

nlohmann::json QuantizerSpec::to_json() const {
  return {{"field_name", field_name},
          {"bin_count", bin_count},
          {"bin_edges", bin_edges},
          {"min_value", min_value},
          {"max_value", max_value}};
}

QuantizerSpec QuantizerSpec::from_json(const nlohmann::json& j) {
  QuantizerSpec q;
  q.field_name = j.at("field_name").get<std::string>();
  q.bin_count = j.at("bin_count").get<std::size_t>();
  q.bin_edges = j.at("bin_edges").get<std::vector<double>>();
  q.min_value = j.at("min_value").get<double>();
  q.max_value = j.at("max_value").get<double>();
  if (q.bin_count != q.bin_edges.size() + 1) throw std::runtime_error("quantizer '" + q.field_name + "': bin_count mismatch");
  for (std::size_t i = 1; i < q.bin_edges.size(); ++i) {
    if (!(q.bin_edges[i - 1] < q.bin_edges[i])) {
      throw std::runtime_error("quantizer '" + q.field_name + "': edges not strictly ascending");
    }
  }
  return q;
}

QuantizerSpec fit_quantizer(std::span<const double> values, std::size_t bin_count) {
  if (values.empty()) throw std::invalid_argument("fit_quantizer: no values");
  if (bin_count == 0) throw std::invalid_argument("fit_quantizer: bin_count must be >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw std::invalid_argument("fit_quantizer: non-finite value");
  }
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  QuantizerSpec q;
  q.min_value = sorted.front();
  q.max_value = sorted.back();
  for (std::size_t k = 1; k < bin_count; ++k) {
    const std::size_t i = k * n / bin_count;
    if (i == 0 || i >= n) continue;
    const double edge = sorted[i - 1] + (sorted[i] - sorted[i - 1]) / 2.0;
    if (edge <= q.min_value) continue;
    if (!q.bin_edges.empty() && edge <= q.bin_edges.back()) continue;
    q.bin_edges.push_back(edge);
  }
  q.bin_count = q.bin_edges.size() + 1;
  return q;
}

}  // namespace tabformer
