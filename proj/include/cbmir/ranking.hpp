#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cbmir {

enum class FeatureLayer : std::size_t { fc1 = 0, fc2 = 1, fc3 = 2 };

inline const char* layer_label(FeatureLayer l) {
  switch (l) {
    case FeatureLayer::fc1: return "FCL1";
    case FeatureLayer::fc2: return "FCL2";
    case FeatureLayer::fc3: return "FCL3";
  }
  return "?";
}

struct RankedItem {
  std::string source_id;
  double distance = 0.0;
  std::size_t true_label = 0;
  friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

enum class QueryStatus { ok, empty_class };

// Items sorted by (distance, source_id) ascending.
struct RetrievalResult {
  std::vector<RankedItem> items;
  std::size_t query_predicted_label = 0;
  FeatureLayer layer_used = FeatureLayer::fc1;
  bool class_filter_enabled = false;
  QueryStatus status = QueryStatus::ok;
};

}  // namespace cbmir
