#include "adds/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "adds/errors.hpp"

namespace adds {

namespace {

// Marsaglia-Tsang gamma sampler; shape boosted below 1.
double sample_gamma(double shape, Rng& rng) {
  if (shape < 1.0) {
    const double u = std::max(rng.uniform(), 1e-300);
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> sample_dirichlet(double concentration, int count, Rng& rng) {
  std::vector<double> w(count);
  double total = 0.0;
  for (double& v : w) {
    v = sample_gamma(concentration, rng);
    total += v;
  }
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / count);
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> label_histogram(const Dataset& data, const std::vector<int>& idx) {
  std::vector<double> hist(data.num_classes, 0.0);
  for (int i : idx) hist[data.labels[i]] += 1.0;
  if (!idx.empty()) {
    for (double& h : hist) h /= static_cast<double>(idx.size());
  }
  return hist;
}

void finalize_partition(const Dataset& data, Partition& part) {
  part.label_histograms.clear();
  part.client_jsd.clear();
  std::vector<double> uniform(data.num_classes, 1.0 / data.num_classes);
  for (auto& idx : part.client_indices) {
    std::sort(idx.begin(), idx.end());
    part.label_histograms.push_back(label_histogram(data, idx));
    part.client_jsd.push_back(jsd(part.label_histograms.back(), uniform));
  }
}

}  // namespace

Dataset make_blobs(int num_classes, int samples_per_class, int dims, double spread,
                   Rng& rng) {
  if (num_classes < 1 || samples_per_class < 1 || dims < 1) {
    throw InvalidInput("make_blobs: counts must be >= 1");
  }
  if (spread < 0.0) throw InvalidInput("make_blobs: spread must be >= 0");

  Matrix means(num_classes, dims);
  for (double& v : means.data) v = 2.0 * rng.uniform() - 1.0;

  const std::size_t n = static_cast<std::size_t>(num_classes) * samples_per_class;
  Dataset data;
  data.features = Matrix(n, dims);
  data.labels.resize(n);
  data.num_classes = num_classes;
  data.name = "blobs";
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < samples_per_class; ++s, ++row) {
      for (int d = 0; d < dims; ++d) {
        data.features(row, d) = means(c, d) + spread * rng.normal();
      }
      data.labels[row] = c;
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  Matrix shuffled(n, dims);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < dims; ++d) shuffled(i, d) = data.features(order[i], d);
    labels[i] = data.labels[order[i]];
  }
  data.features = std::move(shuffled);
  data.labels = std::move(labels);
  return data;
}

void standardize_features(Dataset& data) {
  const std::size_t n = data.size();
  if (n == 0) return;
  for (std::size_t d = 0; d < data.dims(); ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += data.features(i, d);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = data.features(i, d) - mean;
      var += v * v;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::max(std::sqrt(var), 1e-12);
    for (std::size_t i = 0; i < n; ++i) {
      data.features(i, d) = (data.features(i, d) - mean) * inv;
    }
  }
}

Partition dirichlet_partition(const Dataset& data, int num_clients,
                              double concentration, int min_samples, Rng& rng) {
  if (num_clients < 1) throw InvalidInput("dirichlet_partition: need >= 1 client");
  if (!(concentration > 0.0)) throw InvalidInput("dirichlet_partition: concentration must be > 0");
  if (min_samples * static_cast<long long>(num_clients) > static_cast<long long>(data.size())) {
    throw ConfigError("dirichlet_partition: min_samples infeasible for dataset size");
  }

  std::vector<std::vector<int>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[data.labels[i]].push_back(static_cast<int>(i));
  }

  constexpr int kMaxRetries = 100;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    Partition part;
    part.client_indices.assign(num_clients, {});
    for (int c = 0; c < data.num_classes; ++c) {
      const auto& idx = by_class[c];
      const std::vector<double> w = sample_dirichlet(concentration, num_clients, rng);
      // Cumulative boundaries give an exact, duplication-free cover.
      double cum = 0.0;
      std::size_t start = 0;
      for (int k = 0; k < num_clients; ++k) {
        cum += w[k];
        std::size_t end = k == num_clients - 1
                              ? idx.size()
                              : static_cast<std::size_t>(std::floor(cum * idx.size() + 0.5));
        end = std::min(end, idx.size());
        for (std::size_t i = start; i < end; ++i) part.client_indices[k].push_back(idx[i]);
        start = std::max(start, end);
      }
    }
    bool ok = true;
    for (const auto& ci : part.client_indices) {
      if (static_cast<int>(ci.size()) < min_samples) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    finalize_partition(data, part);
    return part;
  }
  throw ConfigError("dirichlet_partition: could not satisfy min_samples after retries");
}

Partition shards_partition(const Dataset& data, int num_clients,
                           int shards_per_client, int min_samples, Rng& rng) {
  if (num_clients < 1 || shards_per_client < 1) {
    throw InvalidInput("shards_partition: counts must be >= 1");
  }
  const std::size_t num_shards = static_cast<std::size_t>(num_clients) * shards_per_client;
  if (num_shards > data.size()) {
    throw ConfigError("shards_partition: more shards than samples");
  }

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return data.labels[a] < data.labels[b]; });

  std::vector<std::size_t> shard_ids(num_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  shuffle(shard_ids, rng);

  Partition part;
  part.client_indices.assign(num_clients, {});
  const std::size_t n = data.size();
  for (std::size_t s = 0; s < num_shards; ++s) {
    const std::size_t shard = shard_ids[s];
    const std::size_t lo = shard * n / num_shards;
    const std::size_t hi = (shard + 1) * n / num_shards;
    auto& target = part.client_indices[s / shards_per_client];
    for (std::size_t i = lo; i < hi; ++i) target.push_back(order[i]);
  }
  for (const auto& ci : part.client_indices) {
    if (static_cast<int>(ci.size()) < min_samples) {
      throw ConfigError("shards_partition: a client fell below min_samples");
    }
  }
  finalize_partition(data, part);
  return part;
}

double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw InvalidInput("jsd: length mismatch");
  if (p.empty()) throw InvalidInput("jsd: empty distributions");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw InvalidInput("jsd: negative probability");
    sp += p[i];
    sq += q[i];
  }
  if (std::fabs(sp - 1.0) > 1e-6 || std::fabs(sq - 1.0) > 1e-6) {
    throw InvalidInput("jsd: inputs must sum to 1");
  }
  const double ln2 = std::log(2.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m) / ln2;
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m) / ln2;
  }
  return std::clamp(acc, 0.0, 1.0);
}

Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");

  auto parse_fields = [](const std::string& text) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : text) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    fields.push_back(cur);
    return fields;
  };
  auto parse_int = [](const std::string& s, const std::string& where) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(where + ": expected integer, got '" + s + "'");
    }
    return v;
  };

  const auto header = parse_fields(line);
  if (header.size() != 3) throw ParseError(path + ": line 1: header must be n,d,num_classes");
  const long long n = parse_int(header[0], path + ": line 1");
  const long long d = parse_int(header[1], path + ": line 1");
  const long long classes = parse_int(header[2], path + ": line 1");
  if (n < 1 || d < 1 || classes < 1) throw ParseError(path + ": line 1: counts must be >= 1");
  if (n < classes) throw ParseError(path + ": line 1: need at least one sample per class");

  Dataset data;
  data.features = Matrix(n, d);
  data.labels.resize(n);
  data.num_classes = static_cast<int>(classes);
  data.name = path;

  for (long long row = 0; row < n; ++row) {
    const std::string where = path + ": line " + std::to_string(row + 2);
    if (!std::getline(in, line)) throw ParseError(where + ": unexpected end of file");
    const auto fields = parse_fields(line);
    if (static_cast<long long>(fields.size()) != d + 1) {
      throw ParseError(where + ": expected " + std::to_string(d + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    for (long long j = 0; j < d; ++j) {
      try {
        std::size_t used = 0;
        const double v = std::stod(fields[j], &used);
        if (used != fields[j].size()) throw std::invalid_argument("trailing");
        if (!std::isfinite(v)) throw ParseError(where + ": non-finite feature value");
        data.features(row, j) = v;
      } catch (const ParseError&) {
        throw;
      } catch (const std::exception&) {
        throw ParseError(where + ": bad feature value '" + fields[j] + "'");
      }
    }
    const long long label = parse_int(fields[d], where);
    if (label < 0 || label >= classes) {
      throw ParseError(where + ": label " + std::to_string(label) + " out of range [0," +
                       std::to_string(classes) + ")");
    }
    data.labels[row] = static_cast<int>(label);
  }
  return data;
}

void save_csv_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << data.size() << "," << data.dims() << "," << data.num_classes << "\n";
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dims(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.features(i, j));
      out << buf << ",";
    }
    out << data.labels[i] << "\n";
  }
}

Batch make_batch(const Dataset& data, const std::vector<int>& indices) {
  if (indices.empty()) throw InvalidInput("make_batch: empty index list");
  Batch batch;
  batch.inputs = Matrix(indices.size(), data.dims());
  batch.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || static_cast<std::size_t>(src) >= data.size()) {
      throw InvalidInput("make_batch: index out of range");
    }
    for (std::size_t j = 0; j < data.dims(); ++j) batch.inputs(i, j) = data.features(src, j);
    batch.labels[i] = data.labels[src];
  }
  return batch;
}

}  // namespace adds
