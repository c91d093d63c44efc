#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "relkit/commonsense_kg.hpp"
#include "relkit/data.hpp"
#include "relkit/eval.hpp"
#include "relkit/rng.hpp"

namespace relkit::testing {

inline ConceptGraph random_graph(Rng& rng, std::size_t nodes, std::size_t edges, std::size_t relations) {
  ConceptGraph g;
  for (std::size_t i = 0; i < nodes; ++i) g.concepts.push_back("c" + std::to_string(i));
  for (std::size_t i = 0; i < relations; ++i) g.relations.push_back("r" + std::to_string(i));
  for (std::size_t k = 0; k < edges; ++k) {
    const std::size_t h = rng.index(nodes);
    std::size_t t = rng.index(nodes);
    if (t == h) t = (t + 1) % nodes;
    g.edges.push_back({h, rng.index(relations), t});
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

// Oracle: grow every edge sequence directly from the edge list, keeping the
// ones that form a walk from a to b without revisiting a concept.
inline std::set<ConceptPath> oracle_paths(const ConceptGraph& g, std::size_t a, std::size_t b,
                                         std::size_t max_edges) {
  std::set<ConceptPath> out;
  std::function<void(ConceptPath&, std::vector<std::size_t>&)> grow = [&](ConceptPath& path,
                                                                          std::vector<std::size_t>& visited) {
    const std::size_t at = visited.back();
    if (at == b) {
      out.insert(path);
      return;
    }
    if (path.size() == max_edges) return;
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      for (int dir = 0; dir < 2; ++dir) {
        const std::size_t from = dir == 0 ? g.edges[k].head : g.edges[k].tail;
        const std::size_t to = dir == 0 ? g.edges[k].tail : g.edges[k].head;
        if (from != at) continue;
        if (std::find(visited.begin(), visited.end(), to) != visited.end()) continue;
        path.push_back({from, to, k, dir == 0});
        visited.push_back(to);
        grow(path, visited);
        visited.pop_back();
        path.pop_back();
      }
    }
  };
  ConceptPath path;
  std::vector<std::size_t> visited{a};
  grow(path, visited);
  return out;
}

inline TransEModel random_transe(Rng& rng, const ConceptGraph& g, std::size_t dim, double margin) {
  TransEModel m;
  m.margin = margin;
  m.concept_embeddings = Tensor::matrix(g.concepts.size(), dim);
  m.relation_embeddings = Tensor::matrix(g.relations.size(), dim);
  for (double& v : m.concept_embeddings.data()) v = rng.normal(0.0, 0.5);
  for (double& v : m.relation_embeddings.data()) v = rng.normal(0.0, 0.5);
  return m;
}

inline double oracle_score(const TransEModel& m, const ConceptEdge& e) {
  double s = 0.0;
  for (std::size_t d = 0; d < m.concept_embeddings.cols(); ++d) {
    const double x = m.concept_embeddings(e.head, d) + m.relation_embeddings(e.relation, d) -
                     m.concept_embeddings(e.tail, d);
    s += x * x;
  }
  return 1.0 / (1.0 + std::exp(std::sqrt(s) - m.margin));
}

// Small random corpus with frequent key collisions.
inline std::vector<ImageRecord> random_corpus(Rng& rng, std::size_t images, std::size_t classes,
                                              std::size_t preds) {
  std::vector<ImageRecord> out;
  for (std::size_t k = 0; k < images; ++k) {
    ImageRecord rec;
    rec.image_id = "r" + std::to_string(k);
    const std::size_t n = 2 + rng.index(3);
    rec.instances.image_width = rec.instances.image_height = 100.0;
    rec.instances.boxes = Tensor::matrix(n, 4);
    rec.instances.labels = Tensor::matrix(n, classes);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = rng.index(classes);
      rec.instances.gt_classes.push_back(c);
      rec.instances.labels(i, c) = 1.0;
      rec.instances.boxes(i, 0) = rec.instances.boxes(i, 1) = 10.0 * static_cast<double>(i);
      rec.instances.boxes(i, 2) = rec.instances.boxes(i, 3) = 10.0 * static_cast<double>(i) + 5.0;
    }
    const std::size_t t = rng.index(4);
    for (std::size_t q = 0; q < t; ++q) {
      RelationshipTriplet tr;
      tr.subject_instance = rng.index(n);
      do {
        tr.object_instance = rng.index(n);
      } while (tr.object_instance == tr.subject_instance);
      tr.subject_class = rec.instances.gt_classes[tr.subject_instance];
      tr.object_class = rec.instances.gt_classes[tr.object_instance];
      tr.predicate_class = rng.index(preds);
      rec.triplets.push_back(tr);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline PairScores random_scores(std::size_t n, std::size_t k, Rng& rng, bool coarse) {
  PairScores s;
  s.num_instances = n;
  s.num_predicates = k;
  s.predicate_logits = Tensor({n, n, k}, 0.0);
  s.relatedness = Tensor::matrix(n, n);
  auto draw = [&] { return coarse ? static_cast<double>(rng.index(3)) : rng.uniform(-3.0, 3.0); };
  for (std::size_t i = 0; i < s.predicate_logits.size(); ++i) s.predicate_logits[i] = draw();
  for (std::size_t i = 0; i < s.relatedness.size(); ++i) s.relatedness[i] = draw();
  return s;
}

inline std::vector<RelationshipTriplet> random_gt(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<RelationshipTriplet> gt;
  const std::size_t count = rng.index(6);
  for (std::size_t c = 0; c < count; ++c) {
    RelationshipTriplet t;
    t.subject_instance = rng.index(n);
    do t.object_instance = rng.index(n);
    while (t.object_instance == t.subject_instance);
    t.predicate_class = rng.index(k);
    gt.push_back(t);
  }
  return gt;
}

// Independent oracle: collects the top-k (s, o, p) keys into a multiset and
// counts each gt triplet against it.
inline double oracle_recall(const std::vector<RankedTriplet>& ranked, const std::vector<RelationshipTriplet>& gt,
                            std::size_t k) {
  if (gt.empty()) return 1.0;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, int> pool;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r)
    ++pool[{ranked[r].subject_instance, ranked[r].object_instance, ranked[r].predicate}];
  std::size_t hits = 0;
  for (const auto& g : gt) {
    auto it = pool.find({g.subject_instance, g.object_instance, g.predicate_class});
    if (it != pool.end() && it->second > 0) {
      --it->second;
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

}  // namespace relkit::testing
