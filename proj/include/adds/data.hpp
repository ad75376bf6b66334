#pragma once

#include <string>
#include <vector>

#include "adds/matrix.hpp"
#include "adds/network.hpp"
#include "adds/rng.hpp"

namespace adds {

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return features.rows; }
  std::size_t dims() const { return features.cols; }

  bool operator==(const Dataset&) const = default;
};

// Seeded Gaussian clusters with distinct means, shuffled row order.
Dataset make_blobs(int num_classes, int samples_per_class, int dims, double spread,
                   Rng& rng);

// Zero mean / unit variance per feature, computed globally.
void standardize_features(Dataset& data);

struct Partition {
  std::vector<std::vector<int>> client_indices;
  std::vector<std::vector<double>> label_histograms;
  std::vector<double> client_jsd;  // base-2 JSD to the uniform distribution

  std::size_t num_clients() const { return client_indices.size(); }
};

// Label-skew non-IID split: per class, proportions over clients drawn from a
// symmetric Dirichlet. Redraws the whole partition (bounded retries) while any
// client holds fewer than min_samples.
Partition dirichlet_partition(const Dataset& data, int num_clients,
                              double concentration, int min_samples, Rng& rng);

// Pathological split: sort by label, deal contiguous shards.
Partition shards_partition(const Dataset& data, int num_clients,
                           int shards_per_client, int min_samples, Rng& rng);

// Base-2 Jensen-Shannon divergence, in [0, 1]; 0*log(0) taken as 0.
double jsd(const std::vector<double>& p, const std::vector<double>& q);

// CSV format: header "n,d,num_classes", then one row per sample of d reals
// followed by an integer label. UTF-8, LF line endings.
Dataset load_csv_dataset(const std::string& path);
void save_csv_dataset(const Dataset& data, const std::string& path);

Batch make_batch(const Dataset& data, const std::vector<int>& indices);

}  // namespace adds
