#include "relkit/commonsense_kg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "relkit/errors.hpp"
#include "relkit/rng.hpp"

namespace relkit {

using nlohmann::json;

std::optional<std::size_t> ConceptGraph::concept_index(const std::string& name) const {
  auto it = std::find(concepts.begin(), concepts.end(), name);
  if (it == concepts.end()) return std::nullopt;
  return static_cast<std::size_t>(it - concepts.begin());
}

void ConceptGraph::validate() const {
  for (const auto& e : edges) {
    if (e.head >= concepts.size() || e.tail >= concepts.size() || e.relation >= relations.size()) {
      throw ValidationError("concept graph edge id out of range");
    }
  }
  if (!std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw ValidationError("concept graph edges must be sorted and unique");
  }
}

std::string normalize_concept(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char ch : name) {
    out.push_back(ch == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

MergeMap parse_merge_map(const std::string& json_text) {
  MergeMap out;
  try {
    const json j = json::parse(json_text);
    for (const auto& [raw, merged] : j.items()) {
      const auto name = merged.get<std::string>();
      out.emplace(raw, name == "DROP" ? std::nullopt : std::optional<std::string>(name));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("merge map: ") + e.what());
  }
  return out;
}

MergeMap load_merge_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open merge map " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_merge_map(buf.str());
}

ConceptGraph parse_conceptnet(std::istream& in, const MergeMap& merge_map) {
  struct Raw {
    std::string head, relation, tail;
  };
  std::vector<Raw> kept;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw ParseError("concept triples line " + std::to_string(line_no) + ": expected head<TAB>relation<TAB>tail");
    }
    const std::string relation = line.substr(t1 + 1, t2 - t1 - 1);
    auto it = merge_map.find(relation);
    if (it == merge_map.end()) throw ConfigError("merge_map: relation '" + relation + "' has no entry");
    if (!it->second) continue;
    kept.push_back({normalize_concept(line.substr(0, t1)), *it->second, normalize_concept(line.substr(t2 + 1))});
  }

  ConceptGraph g;
  std::set<std::string> concepts, relations;
  for (const auto& r : kept) {
    concepts.insert(r.head);
    concepts.insert(r.tail);
    relations.insert(r.relation);
  }
  g.concepts.assign(concepts.begin(), concepts.end());
  g.relations.assign(relations.begin(), relations.end());
  auto id = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
  };
  for (const auto& r : kept) {
    g.edges.push_back({id(g.concepts, r.head), id(g.relations, r.relation), id(g.concepts, r.tail)});
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

ConceptGraph ingest_conceptnet(const std::filesystem::path& path, const MergeMap& merge_map) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open concept triples " + path.string());
  return parse_conceptnet(in, merge_map);
}

void TransEConfig::validate() const {
  if (dim < 1) throw ConfigError("transe.dim: must be >= 1");
  if (!(margin > 0.0)) throw ConfigError("transe.margin: must be > 0");
  if (negatives < 1) throw ConfigError("transe.negatives: must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("transe.learning_rate: must be > 0");
  if (batch_size < 1) throw ConfigError("transe.batch_size: must be >= 1");
}

double TransEModel::distance(std::size_t head, std::size_t relation, std::size_t tail) const {
  if (head >= concept_embeddings.rows() || tail >= concept_embeddings.rows() ||
      relation >= relation_embeddings.rows()) {
    throw LookupError("triplet id out of range for the TransE model");
  }
  const auto h = concept_embeddings.row(head), r = relation_embeddings.row(relation),
             t = concept_embeddings.row(tail);
  double s = 0.0;
  for (std::size_t d = 0; d < h.size(); ++d) {
    const double x = h[d] + r[d] - t[d];
    s += x * x;
  }
  return std::sqrt(s);
}

double score_triplet(const TransEModel& model, std::size_t head, std::size_t relation, std::size_t tail) {
  return 1.0 / (1.0 + std::exp(-(model.margin - model.distance(head, relation, tail))));
}

namespace {

void normalize_rows(Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto row = t.row(i);
    double s = 0.0;
    for (double v : row) s += v * v;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& v : row) v /= s;
  }
}

Tensor transe_init(std::size_t rows, std::size_t dim, std::uint64_t seed, const std::string& name) {
  Rng rng(seed, name);
  const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  Tensor t = Tensor::matrix(rows, dim);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  normalize_rows(t);
  return t;
}

}  // namespace

TransEModel train_transe(const ConceptGraph& graph, const TransEConfig& config) {
  config.validate();
  graph.validate();
  if (graph.edges.empty()) throw ValidationError("train_transe: concept graph has no edges");
  TransEModel model;
  model.margin = config.margin;
  model.concept_embeddings = transe_init(graph.concepts.size(), config.dim, config.seed, "transe.concepts");
  model.relation_embeddings = transe_init(graph.relations.size(), config.dim, config.seed, "transe.relations");
  model.concept_embeddings.set_requires_grad(true);
  model.relation_embeddings.set_requires_grad(true);

  Rng order_rng(config.seed, "transe.order");
  Rng corrupt_rng(config.seed, "transe.negatives");
  OptimizerConfig sgd;
  sgd.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(graph.edges.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t num_concepts = graph.concepts.size();
  Tensor* params[] = {&model.concept_embeddings, &model.relation_embeddings};

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::ptrdiff_t> h, r, t, nh, nr, nt;
      for (std::size_t k = start; k < end; ++k) {
        const ConceptEdge& e = graph.edges[order[k]];
        for (std::size_t q = 0; q < config.negatives; ++q) {
          h.push_back(static_cast<std::ptrdiff_t>(e.head));
          r.push_back(static_cast<std::ptrdiff_t>(e.relation));
          t.push_back(static_cast<std::ptrdiff_t>(e.tail));
          std::size_t ch = e.head, ct = e.tail;
          const bool corrupt_head = corrupt_rng.uniform() < 0.5;
          std::size_t& slot = corrupt_head ? ch : ct;
          const std::size_t original = slot;
          if (num_concepts > 1) {
            do {
              slot = corrupt_rng.index(num_concepts);
            } while (slot == original);
          }
          nh.push_back(static_cast<std::ptrdiff_t>(ch));
          nr.push_back(static_cast<std::ptrdiff_t>(e.relation));
          nt.push_back(static_cast<std::ptrdiff_t>(ct));
        }
      }
      ad::Tape tape;
      const ad::Var C = tape.parameter(model.concept_embeddings);
      const ad::Var R = tape.parameter(model.relation_embeddings);
      auto dist = [&](const auto& hi, const auto& ri, const auto& ti) {
        return ad::row_norms(ad::gather_rows(C, hi) + ad::gather_rows(R, ri) - ad::gather_rows(C, ti));
      };
      const ad::Var hinge = ad::relu(ad::add_scalar(dist(h, r, t) - dist(nh, nr, nt), config.margin));
      tape.backward(ad::mean(hinge));
      sgd_step(params, sgd);
    }
    normalize_rows(model.concept_embeddings);
    normalize_rows(model.relation_embeddings);
  }
  model.concept_embeddings.set_requires_grad(false);
  model.relation_embeddings.set_requires_grad(false);
  return model;
}

std::vector<ConceptPath> enumerate_simple_paths(const ConceptGraph& graph, std::size_t a, std::size_t b,
                                                std::size_t max_edges) {
  const std::size_t n = graph.concepts.size();
  if (a >= n || b >= n) throw LookupError("enumerate_simple_paths: concept id out of range");
  if (a == b) throw ValidationError("enumerate_simple_paths: endpoints must differ");

  std::vector<std::vector<PathHop>> incident(n);
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const ConceptEdge& e = graph.edges[k];
    if (e.head == e.tail) continue;
    incident[e.head].push_back({e.head, e.tail, k, true});
    incident[e.tail].push_back({e.tail, e.head, k, false});
  }
  for (auto& hops : incident) {
    std::sort(hops.begin(), hops.end(), [](const PathHop& x, const PathHop& y) {
      return std::tie(x.to, x.edge) < std::tie(y.to, y.edge);
    });
  }

  std::vector<ConceptPath> out;
  std::vector<char> on_path(n, 0);
  ConceptPath path;
  auto dfs = [&](auto&& self, std::size_t node) -> void {
    if (node == b) {
      out.push_back(path);
      return;
    }
    if (path.size() == max_edges) return;
    on_path[node] = 1;
    for (const PathHop& hop : incident[node]) {
      if (on_path[hop.to]) continue;
      path.push_back(hop);
      self(self, hop.to);
      path.pop_back();
    }
    on_path[node] = 0;
  };
  dfs(dfs, a);
  return out;
}

double path_score(const ConceptPath& path, const ConceptGraph& graph, const TransEModel& model) {
  double s = 1.0;
  for (const PathHop& hop : path) {
    const ConceptEdge& e = graph.edges.at(hop.edge);
    s *= score_triplet(model, e.head, e.relation, e.tail);
  }
  return s;
}

std::vector<ConceptPath> prune_paths(const std::vector<ConceptPath>& paths, const ConceptGraph& graph,
                                     const TransEModel& model, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold: must lie in (0, 1)");
  std::vector<ConceptPath> out;
  for (const auto& p : paths)
    if (path_score(p, graph, model) >= threshold) out.push_back(p);
  return out;
}

namespace {

std::vector<std::ptrdiff_t> resolve_rows(const std::vector<std::string>& labels, const ConceptGraph& graph,
                                         const std::vector<std::size_t>& concepts,
                                         std::vector<std::string>& unmatched) {
  std::vector<std::ptrdiff_t> rows;
  unmatched.clear();
  for (const auto& label : labels) {
    const auto id = graph.concept_index(normalize_concept(label));
    if (!id) {
      rows.push_back(-1);
      unmatched.push_back(label);
      continue;
    }
    auto it = std::lower_bound(concepts.begin(), concepts.end(), *id);
    rows.push_back(static_cast<std::ptrdiff_t>(it - concepts.begin()));
  }
  return rows;
}

}  // namespace

CommonsenseSubgraph build_commonsense_subgraph(const std::vector<std::string>& instance_labels,
                                               const ConceptGraph& graph, const TransEModel& model,
                                               const MiningOptions& options) {
  std::set<std::size_t> matched;
  for (const auto& label : instance_labels)
    if (auto id = graph.concept_index(normalize_concept(label))) matched.insert(*id);

  std::set<std::size_t> concepts(matched.begin(), matched.end());
  std::map<std::pair<std::size_t, std::size_t>, std::vector<ConceptPath>> by_global_pair;
  for (auto i = matched.begin(); i != matched.end(); ++i) {
    for (auto j = std::next(i); j != matched.end(); ++j) {
      const auto kept = prune_paths(enumerate_simple_paths(graph, *i, *j, options.max_edges), graph, model,
                                    options.threshold);
      for (const auto& path : kept) {
        for (const PathHop& hop : path) {
          concepts.insert(hop.from);
          concepts.insert(hop.to);
          by_global_pair[std::minmax(hop.from, hop.to)].push_back(path);
        }
      }
    }
  }

  CommonsenseSubgraph sg;
  sg.concepts.assign(concepts.begin(), concepts.end());
  const std::size_t m = sg.size();
  sg.adjacency = Tensor::matrix(m, m);
  auto local = [&](std::size_t id) {
    return static_cast<std::size_t>(std::lower_bound(sg.concepts.begin(), sg.concepts.end(), id) -
                                    sg.concepts.begin());
  };
  for (auto& [pair, paths] : by_global_pair) {
    const std::size_t u = local(pair.first), v = local(pair.second);
    sg.adjacency(u, v) = sg.adjacency(v, u) = 1.0;
    sg.provenance[{u, v}] = std::move(paths);
  }
  sg.label_rows = resolve_rows(instance_labels, graph, sg.concepts, sg.unmatched_labels);
  return sg;
}

CommonsenseSubgraph CommonsenseMiner::mine(const std::vector<std::string>& instance_labels) {
  std::vector<std::string> key;
  for (const auto& l : instance_labels) key.push_back(normalize_concept(l));
  std::sort(key.begin(), key.end());
  key.erase(std::unique(key.begin(), key.end()), key.end());

  CommonsenseSubgraph sg;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, build_commonsense_subgraph(key, *graph_, *model_, options_)).first;
    sg = it->second;
  }
  sg.label_rows = resolve_rows(instance_labels, *graph_, sg.concepts, sg.unmatched_labels);
  return sg;
}

std::size_t CommonsenseMiner::cache_size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.size();
}

void init_commonsense_encoder(ParameterStore& params, const std::string& prefix,
                              const KnowledgeEncoderConfig& config, std::uint64_t seed) {
  const std::size_t w = config.word_dim, h = config.hidden_dim;
  params.create(prefix + ".proj.w", {w, h}, w, seed);
  params.create(prefix + ".proj.b", {h}, w, seed);
  params.create(prefix + ".g3.w1", {h, h}, h, seed);
  params.create(prefix + ".g3.w2", {h, config.output_dim}, h, seed);
}

ad::Var encode_commonsense(ad::Tape& tape, const CommonsenseSubgraph& subgraph, const ConceptGraph& graph,
                           const VectorSource& vectors, ParameterStore& params, const std::string& prefix,
                           std::size_t output_dim) {
  const std::size_t n = subgraph.label_rows.size();
  if (subgraph.size() == 0) return tape.constant(Tensor::matrix(n, output_dim));
  std::vector<std::string> names;
  for (std::size_t id : subgraph.concepts) names.push_back(graph.concepts.at(id));
  auto p = [&](const char* name) { return tape.parameter(params.at(prefix + name)); };
  const ad::Var w2 = p(".g3.w2");
  if (w2.cols() != output_dim) throw DimensionError("commonsense encoder output width differs from d^z");
  const ad::Var x = linear(tape.constant(embed_categories(names, vectors)), p(".proj.w"), p(".proj.b"));
  const ad::Var o = gcn_stack(x, subgraph.adjacency, p(".g3.w1"), w2);
  return ad::gather_rows(o, subgraph.label_rows);
}

}  // namespace relkit
