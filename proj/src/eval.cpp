#include "relkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "relkit/errors.hpp"

namespace relkit {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> softmax_of(const PairScores& s, std::size_t i, std::size_t j) {
  std::vector<double> p(s.num_predicates);
  double mx = -INFINITY;
  for (std::size_t k = 0; k < p.size(); ++k) mx = std::max(mx, s.logit(i, j, k));
  double z = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) z += (p[k] = std::exp(s.logit(i, j, k) - mx));
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

std::vector<RankedTriplet> rank_triplets(const PairScores& scores, bool graph_constraint) {
  std::vector<RankedTriplet> out;
  const std::size_t n = scores.num_instances;
  if (scores.num_predicates == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double gate = sigmoid(scores.related(i, j));
      const auto p = softmax_of(scores, i, j);
      if (graph_constraint) {
        const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        out.push_back({i, j, best, gate * p[best]});
      } else {
        for (std::size_t k = 0; k < p.size(); ++k) out.push_back({i, j, k, gate * p[k]});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const RankedTriplet& a, const RankedTriplet& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.subject_instance, a.object_instance, a.predicate) <
           std::tie(b.subject_instance, b.object_instance, b.predicate);
  });
  return out;
}

namespace {

double recall_impl(std::span<const RankedTriplet> ranked, std::span<const RelationshipTriplet> gt, std::size_t k,
                   std::span<const std::size_t> classes) {
  if (k < 1) throw ValidationError("recall_at_k: k must be >= 1");
  if (gt.empty()) return 1.0;
  const std::size_t top = std::min(k, ranked.size());
  std::vector<char> used(top, 0);
  std::size_t hits = 0;
  for (const auto& g : gt) {
    if (!classes.empty()) {
      if (g.subject_instance >= classes.size() || g.object_instance >= classes.size()) {
        throw IndexError("recall_at_k: predicted classes do not cover the gt instances");
      }
      if (classes[g.subject_instance] != g.subject_class || classes[g.object_instance] != g.object_class) continue;
    }
    for (std::size_t r = 0; r < top; ++r) {
      const auto& t = ranked[r];
      if (!used[r] && t.subject_instance == g.subject_instance && t.object_instance == g.object_instance &&
          t.predicate == g.predicate_class) {
        used[r] = 1;
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

}  // namespace

double recall_at_k(std::span<const RankedTriplet> ranked, std::span<const RelationshipTriplet> gt, std::size_t k) {
  return recall_impl(ranked, gt, k, {});
}

double recall_at_k(std::span<const RankedTriplet> ranked, std::span<const RelationshipTriplet> gt, std::size_t k,
                   std::span<const std::size_t> predicted_classes) {
  if (predicted_classes.empty() && !gt.empty()) {
    throw ValidationError("recall_at_k: SGCls matching needs predicted classes");
  }
  return recall_impl(ranked, gt, k, predicted_classes);
}

std::string MetricsTable::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, row] : rows) {
    nlohmann::ordered_json r;
    for (const auto& [k, v] : row.recall) r["R@" + std::to_string(k)] = v;
    r["images"] = row.images;
    j[name] = r;
  }
  return j.dump(2) + "\n";
}

std::string MetricsTable::to_text() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %8s %8s %8s %8s\n", "setup", "R@20", "R@50", "R@100", "images");
  out << line;
  for (const auto& [name, row] : rows) {
    auto at = [&](std::size_t k) {
      auto it = row.recall.find(k);
      return it == row.recall.end() ? NAN : 100.0 * it->second;
    };
    std::snprintf(line, sizeof line, "%-18s %8.2f %8.2f %8.2f %8zu\n", name.c_str(), at(20), at(50), at(100),
                  row.images);
    out << line;
  }
  return out.str();
}

void run_setup(const std::vector<ImageRecord>& images, const std::vector<InstanceSet>& inputs,
               const PairScorer& scorer, Setup setup, MetricsTable& table, const std::string& row_name,
               bool graph_constraint) {
  if (images.size() != inputs.size()) throw DimensionError("run_setup: one instance set per image expected");
  MetricsTable::Row row;
  for (std::size_t k : kRecallCutoffs) row.recall[k] = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageRecord& rec = images[i];
    if (rec.triplets.empty()) continue;
    if (!rec.instances.has_gt_classes()) {
      throw ValidationError("image " + rec.image_id + ": " + setup_name(setup) + " needs gt classes");
    }
    std::vector<std::size_t> classes;
    const PairScores scores = scorer(inputs[i], setup, &classes);
    const auto ranked = rank_triplets(scores, graph_constraint);
    for (std::size_t k : kRecallCutoffs) {
      row.recall[k] += setup == Setup::kPredCls ? recall_at_k(ranked, rec.triplets, k)
                                                : recall_at_k(ranked, rec.triplets, k, classes);
    }
    ++row.images;
  }
  if (row.images > 0)
    for (auto& [k, v] : row.recall) v /= static_cast<double>(row.images);
  table.rows[row_name.empty() ? setup_name(setup) : row_name] = row;
}

PairScorer model_scorer(SceneGraphModel& model) {
  return [&model](const InstanceSet& instances, Setup setup, std::vector<std::size_t>* classes) {
    return model.score(instances, setup, classes);
  };
}

PairScores frequency_baseline_scores(const FreqBias& freq, const std::vector<std::size_t>& classes) {
  const std::size_t n = classes.size(), k = freq.num_predicates();
  PairScores out;
  out.num_instances = n;
  out.num_predicates = k;
  out.predicate_logits = Tensor({n, n, k}, 0.0);
  out.relatedness = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto row = freq.log_probs(classes[i], classes[j]);
      for (std::size_t c = 0; c < k; ++c) out.predicate_logits[(i * n + j) * k + c] = row[c];
      const double p_bg = std::exp(row[freq.background_index()]);
      out.relatedness(i, j) = std::log1p(-p_bg) - std::log(p_bg);
    }
  }
  return out;
}

PairScorer frequency_scorer(const FreqBias& freq) {
  return [&freq](const InstanceSet& instances, Setup setup, std::vector<std::size_t>* classes) {
    if (setup != Setup::kPredCls) throw ConfigError("the frequency baseline only runs PredCls");
    if (classes) *classes = instances.gt_classes;
    return frequency_baseline_scores(freq, instances.gt_classes);
  };
}

}  // namespace relkit
