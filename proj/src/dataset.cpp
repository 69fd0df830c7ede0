#include "cmm/dataset.hpp"

#include <cmath>
#include <string>

#include "cmm/error.hpp"
#include "cmm/simd/kernels.hpp"

namespace cmm {

Dataset::Dataset(std::vector<SampleTriple> samples,
                 std::optional<int> z_cardinality,
                 std::optional<std::vector<double>> weights)
    : samples_(std::move(samples)), z_cardinality_(z_cardinality) {
  if (samples_.empty()) throw ValidationError("empty dataset");

  const std::size_t dx = samples_.front().x.size();
  const std::size_t dz = samples_.front().z.size();
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.x.size() != dx || s.z.size() != dz) {
      throw ValidationError("dataset: sample " + std::to_string(i) +
                            " has inconsistent x/z dimensions");
    }
  }

  if (z_cardinality_) {
    if (*z_cardinality_ < 1) throw ValidationError("dataset: z_cardinality must be >= 1");
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& key = samples_[i].z_key;
      if (!key) {
        throw ValidationError("dataset: sample " + std::to_string(i) +
                              " has no z_key but z_cardinality is set");
      }
      if (*key < 0 || *key >= *z_cardinality_) {
        throw ValidationError("dataset: sample " + std::to_string(i) +
                              " z_key out of range [0, " +
                              std::to_string(*z_cardinality_) + ")");
      }
    }
  }

  const std::size_t n = samples_.size();
  if (weights) {
    if (weights->size() != n) throw ValidationError("dataset: weights length != sample count");
    for (double w : *weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ValidationError("dataset: weights must be finite and nonnegative");
      }
    }
    const double total = simd::sum(*weights);
    if (std::abs(total - 1.0) > 1e-12) {
      throw ValidationError("dataset: weights must sum to 1 (got " +
                            std::to_string(total) + ")");
    }
    weights_ = std::move(*weights);
    explicit_weights_ = true;
  } else {
    weights_.assign(n, 1.0 / static_cast<double>(n));
  }

  y_.reserve(n);
  for (const auto& s : samples_) y_.push_back(s.y);
}

double empirical_expectation(const Dataset& data,
                             const std::function<double(const SampleTriple&)>& g) {
  std::vector<double> values;
  values.reserve(data.size());
  for (const auto& s : data.samples()) values.push_back(g(s));
  return empirical_expectation(data, values);
}

double empirical_expectation(const Dataset& data, std::span<const double> values) {
  if (values.size() != data.size()) {
    throw ValidationError("empirical_expectation: value count != sample count");
  }
  return simd::weighted_sum(data.weights(), values);
}

std::vector<ZGroup> group_by_z(const Dataset& data) {
  if (!data.discrete_z()) throw ValidationError("dataset not discrete in z");
  std::vector<ZGroup> groups(static_cast<std::size_t>(*data.z_cardinality()));
  const auto w = data.weights();
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& g = groups[static_cast<std::size_t>(*data[i].z_key)];
    g.indices.push_back(i);
    ++g.count;
  }
  for (auto& g : groups) {
    std::vector<double> gw;
    gw.reserve(g.count);
    for (auto i : g.indices) gw.push_back(w[i]);
    g.mass = simd::sum(gw);
  }
  return groups;
}

std::vector<double> conditional_means(const Dataset& data,
                                      std::span<const double> values) {
  if (values.size() != data.size()) {
    throw ValidationError("conditional_means: value count != sample count");
  }
  const auto groups = group_by_z(data);
  const auto w = data.weights();
  std::vector<double> means(groups.size(), 0.0);
  std::vector<double> gw, gv;
  for (std::size_t z = 0; z < groups.size(); ++z) {
    const auto& g = groups[z];
    if (g.count == 0 || g.mass <= 0.0) continue;
    gw.clear();
    gv.clear();
    for (auto i : g.indices) {
      gw.push_back(w[i]);
      gv.push_back(values[i]);
    }
    means[z] = simd::weighted_sum(gw, gv) / g.mass;
  }
  return means;
}

}  // namespace cmm
