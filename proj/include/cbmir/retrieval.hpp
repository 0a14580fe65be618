#pragma once

// Offline feature database over the three FC layers and exact Euclidean
// queries, optionally restricted to the query's predicted class.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "dataset.hpp"
#include "model.hpp"
#include "ranking.hpp"

namespace cbmir {

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw InputError("feature vectors differ in length (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct FeatureRecord {
  std::string source_id;
  std::size_t true_label = 0;
  std::size_t predicted_label = 0;
  std::array<std::vector<double>, 3> features;  // FCL1, FCL2, FCL3
  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

// Feature vectors live in one contiguous row-major matrix per layer.
class FeatureIndex {
 public:
  FeatureIndex() = default;
  FeatureIndex(std::array<std::size_t, 3> dims, std::uint64_t fingerprint)
      : dims_(dims), fingerprint_(fingerprint) {}

  void add(const FeatureRecord& r) {
    for (std::size_t l = 0; l < 3; ++l) {
      if (r.features[l].size() != dims_[l])
        throw InputError("feature vector width does not match the index");
      for (double v : r.features[l])
        if (!std::isfinite(v)) throw InputError("non-finite feature value for " + r.source_id);
    }
    const std::size_t i = meta_.size();
    meta_.push_back({r.source_id, r.true_label, r.predicted_label});
    for (std::size_t l = 0; l < 3; ++l)
      matrix_[l].insert(matrix_[l].end(), r.features[l].begin(), r.features[l].end());
    partitions_[r.predicted_label].push_back(i);
  }

  std::size_t size() const { return meta_.size(); }
  bool empty() const { return meta_.empty(); }
  std::uint64_t fingerprint() const { return fingerprint_; }
  const std::array<std::size_t, 3>& dims() const { return dims_; }
  const std::map<std::size_t, std::vector<std::size_t>>& class_partitions() const { return partitions_; }

  const std::string& source_id(std::size_t i) const { return meta_[i].source_id; }
  std::size_t true_label(std::size_t i) const { return meta_[i].true_label; }
  std::size_t predicted_label(std::size_t i) const { return meta_[i].predicted_label; }

  std::span<const double> features(std::size_t i, FeatureLayer layer) const {
    const auto l = static_cast<std::size_t>(layer);
    return {matrix_[l].data() + i * dims_[l], dims_[l]};
  }

  FeatureRecord record(std::size_t i) const {
    FeatureRecord r{meta_[i].source_id, meta_[i].true_label, meta_[i].predicted_label, {}};
    for (std::size_t l = 0; l < 3; ++l) {
      auto f = features(i, static_cast<FeatureLayer>(l));
      r.features[l].assign(f.begin(), f.end());
    }
    return r;
  }

  // Number of records whose true label equals `label`.
  std::size_t count_true_label(std::size_t label) const {
    std::size_t n = 0;
    for (const auto& m : meta_) n += m.true_label == label;
    return n;
  }

 private:
  struct Meta {
    std::string source_id;
    std::size_t true_label;
    std::size_t predicted_label;
  };

  std::array<std::size_t, 3> dims_{};
  std::uint64_t fingerprint_ = 0;
  std::vector<Meta> meta_;
  std::array<std::vector<double>, 3> matrix_;
  std::map<std::size_t, std::vector<std::size_t>> partitions_;
};

inline std::array<std::size_t, 3> feature_dims(const Network& net) {
  const auto taps = net.spec().feature_taps();
  const auto trace = net.spec().shape_trace();
  return {shape_size(trace[taps[0] + 1]), shape_size(trace[taps[1] + 1]),
          shape_size(trace[taps[2] + 1])};
}

inline FeatureRecord extract_record(const Network& net, const Sample& s) {
  const Classification c = forward_classify(net, s.image, Mode::eval);
  FeatureRecord r{s.source_id, s.label, c.predicted_class, {}};
  for (std::size_t l = 0; l < 3; ++l) r.features[l] = c.fc_activations[l].storage();
  return r;
}

// One eval-mode pass per sample; partitions follow predicted labels.
inline FeatureIndex build_index(const Network& net, std::span<const Sample> samples) {
  FeatureIndex index(feature_dims(net), network_fingerprint(net));
  for (const auto& s : samples) {
    if (s.image.shape() != net.spec().input_shape)
      throw ConfigError("sample " + s.source_id + " has shape " + shape_str(s.image.shape()) +
                        ", network expects " + shape_str(net.spec().input_shape));
    index.add(extract_record(net, s));
  }
  return index;
}

inline void verify_fingerprint(const FeatureIndex& index, std::uint64_t fingerprint) {
  if (index.fingerprint() != fingerprint)
    throw StaleIndexError("index was built by a different network (index fingerprint " +
                          std::to_string(index.fingerprint()) + ", network " +
                          std::to_string(fingerprint) + ")");
}

// Top-k over precomputed query features. Candidates are the whole index or
// the partition of `predicted_label`; ordering is (distance, source_id).
inline RetrievalResult query_features(const FeatureIndex& index, std::span<const double> query,
                                      std::size_t predicted_label, FeatureLayer layer, std::size_t k,
                                      bool use_class_filter) {
  if (k < 1) throw InputError("k must be >= 1");
  RetrievalResult res;
  res.query_predicted_label = predicted_label;
  res.layer_used = layer;
  res.class_filter_enabled = use_class_filter;

  std::vector<std::size_t> all;
  const std::vector<std::size_t>* candidates = &all;
  if (use_class_filter) {
    auto it = index.class_partitions().find(predicted_label);
    if (it == index.class_partitions().end()) {
      res.status = QueryStatus::empty_class;
      return res;
    }
    candidates = &it->second;
  } else {
    all.resize(index.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  }

  struct Hit {
    double distance;
    std::size_t record;
  };
  std::vector<Hit> hits;
  hits.reserve(candidates->size());
  for (std::size_t i : *candidates) hits.push_back({euclidean_distance(query, index.features(i, layer)), i});
  const auto before = [&](const Hit& a, const Hit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return index.source_id(a.record) < index.source_id(b.record);
  };
  const std::size_t take = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), before);
  res.items.reserve(take);
  for (std::size_t j = 0; j < take; ++j)
    res.items.push_back({index.source_id(hits[j].record), hits[j].distance, index.true_label(hits[j].record)});
  return res;
}

// Runs the query image through `net` (eval mode) and searches the index.
inline RetrievalResult query(const FeatureIndex& index, const Network& net, const Tensor& image,
                             FeatureLayer layer, std::size_t k, bool use_class_filter) {
  if (k < 1) throw InputError("k must be >= 1");
  verify_fingerprint(index, network_fingerprint(net));
  const Classification c = forward_classify(net, image, Mode::eval);
  return query_features(index, c.fc_activations[static_cast<std::size_t>(layer)].values(),
                        c.predicted_class, layer, k, use_class_filter);
}

// ---------------------------------------------------------------------------
// Index files

inline constexpr std::string_view kIndexMagic = "CBMIRIDX";
inline constexpr std::uint32_t kIndexVersion = 1;

inline std::string encode_index(const FeatureIndex& index) {
  ByteWriter w;
  w.raw(kIndexMagic);
  w.u32(kIndexVersion);
  w.u64(index.fingerprint());
  for (auto d : index.dims()) w.u64(d);
  w.u64(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.str(index.source_id(i));
    w.u64(index.true_label(i));
    w.u64(index.predicted_label(i));
    for (std::size_t l = 0; l < 3; ++l)
      for (double v : index.features(i, static_cast<FeatureLayer>(l))) w.f64(v);
  }
  return std::move(w).take();
}

inline FeatureIndex decode_index(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kIndexMagic.size() || r.raw(kIndexMagic.size()) != kIndexMagic)
    throw BadMagicError("not an index file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kIndexVersion)
    throw VersionError("index format version " + std::to_string(version) + " is not supported");
  const std::uint64_t fingerprint = r.u64();
  std::array<std::size_t, 3> dims{};
  for (auto& d : dims) d = r.u64();
  const std::uint64_t n = r.u64();
  const std::size_t record_bytes = 8 * (dims[0] + dims[1] + dims[2]) + 20;
  if (n > r.remaining() / record_bytes + 1) throw TruncatedError("index record table is truncated");
  FeatureIndex index(dims, fingerprint);
  FeatureRecord rec;
  for (std::uint64_t i = 0; i < n; ++i) {
    rec.source_id = r.str();
    rec.true_label = r.u64();
    rec.predicted_label = r.u64();
    for (std::size_t l = 0; l < 3; ++l) {
      rec.features[l].resize(dims[l]);
      for (auto& v : rec.features[l]) v = r.f64();
    }
    index.add(rec);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after index payload");
  return index;
}

inline void save_index(const FeatureIndex& index, const std::string& path) {
  write_file(path, encode_index(index));
}

// With `expected_fingerprint`, a mismatch raises StaleIndexError.
inline FeatureIndex load_index(const std::string& path,
                               std::optional<std::uint64_t> expected_fingerprint = std::nullopt) {
  FeatureIndex index = decode_index(read_file(path));
  if (expected_fingerprint) verify_fingerprint(index, *expected_fingerprint);
  return index;
}

}  // namespace cbmir
