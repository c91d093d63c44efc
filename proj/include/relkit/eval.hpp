#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "relkit/data.hpp"
#include "relkit/model.hpp"
#include "relkit/predicate_head.hpp"

namespace relkit {

struct RankedTriplet {
  std::size_t subject_instance = 0;
  std::size_t object_instance = 0;
  std::size_t predicate = 0;
  double score = 0.0;
};

inline constexpr std::array<std::size_t, 3> kRecallCutoffs = {20, 50, 100};

/// Triplet score sigmoid(r') * softmax(r)_k. With the graph constraint each
/// ordered pair contributes only its argmax predicate; without it every
/// (pair, predicate) cell competes. Sorted by descending score, ties broken
/// by (subject, object, predicate).
std::vector<RankedTriplet> rank_triplets(const PairScores& scores, bool graph_constraint = true);

/// Fraction of `gt` found in the top `k` of `ranked`, each gt triplet matched
/// at most once. 1.0 for an empty gt list.
double recall_at_k(std::span<const RankedTriplet> ranked, std::span<const RelationshipTriplet> gt, std::size_t k);

/// SGCls matching: a gt triplet also needs both endpoint classes predicted
/// correctly.
double recall_at_k(std::span<const RankedTriplet> ranked, std::span<const RelationshipTriplet> gt, std::size_t k,
                   std::span<const std::size_t> predicted_classes);

/// Macro-averaged R@20/50/100 per setup.
struct MetricsTable {
  struct Row {
    std::map<std::size_t, double> recall;
    std::size_t images = 0;
  };
  std::map<std::string, Row> rows;

  std::string to_json() const;
  /// Aligned text with R@K in percent, one line per setup.
  std::string to_text() const;
};

/// Scores one image; fills the classes it used when the pointer is set.
using PairScorer = std::function<PairScores(const InstanceSet&, Setup, std::vector<std::size_t>*)>;

/// Evaluates `setup` on the images (skipping those with empty gt) and stores
/// the row under `row_name` (the setup name when empty). `inputs[i]` are the
/// instances of `images[i]` with features attached.
void run_setup(const std::vector<ImageRecord>& images, const std::vector<InstanceSet>& inputs,
               const PairScorer& scorer, Setup setup, MetricsTable& table, const std::string& row_name = "",
               bool graph_constraint = true);

PairScorer model_scorer(SceneGraphModel& model);

/// The frequency-only baseline: r from the predicate cells of the frequency
/// table and r' = log((1 - p_bg) / p_bg).
PairScores frequency_baseline_scores(const FreqBias& freq, const std::vector<std::size_t>& classes);
PairScorer frequency_scorer(const FreqBias& freq);

}  // namespace relkit
