#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace cmm {

// One observed (x, y, z) record. z_key is set when the conditioning variable
// takes finitely many values.
struct SampleTriple {
  std::vector<double> x;
  double y = 0.0;
  std::vector<double> z;
  std::optional<int> z_key;
};

// The empirical measure every expectation runs over. Either N equally
// weighted samples, or a finite support with explicit probabilities
// (exact-population mode). Immutable after construction.
class Dataset {
 public:
  Dataset(std::vector<SampleTriple> samples,
          std::optional<int> z_cardinality = std::nullopt,
          std::optional<std::vector<double>> weights = std::nullopt);

  std::size_t size() const { return samples_.size(); }
  std::size_t dx() const { return samples_.front().x.size(); }
  std::size_t dz() const { return samples_.front().z.size(); }

  const std::vector<SampleTriple>& samples() const { return samples_; }
  const SampleTriple& operator[](std::size_t i) const { return samples_[i]; }

  std::optional<int> z_cardinality() const { return z_cardinality_; }
  bool discrete_z() const { return z_cardinality_.has_value(); }
  bool has_explicit_weights() const { return explicit_weights_; }

  // Effective per-sample weights: 1/N each unless explicit weights were given.
  std::span<const double> weights() const { return weights_; }
  std::span<const double> y() const { return y_; }

 private:
  std::vector<SampleTriple> samples_;
  std::optional<int> z_cardinality_;
  bool explicit_weights_ = false;
  std::vector<double> weights_;
  std::vector<double> y_;
};

// Sum_i w_i g(sample_i).
double empirical_expectation(const Dataset& data,
                             const std::function<double(const SampleTriple&)>& g);
// Same, for values already evaluated per sample.
double empirical_expectation(const Dataset& data, std::span<const double> values);

struct ZGroup {
  std::size_t count = 0;
  double mass = 0.0;  // Sum of weights in the group (n_z / N when unweighted).
  std::vector<std::size_t> indices;
};

// Partition of sample indices by z_key; one entry per key in [0, |Z|), empty
// groups included. Throws if the dataset is not discrete in z.
std::vector<ZGroup> group_by_z(const Dataset& data);

// Weighted mean of `values` within each z group; 0 for empty groups.
std::vector<double> conditional_means(const Dataset& data,
                                      std::span<const double> values);

}  // namespace cmm
