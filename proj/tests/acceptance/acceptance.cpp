#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "../support/toy_model.hpp"
#include "relkit/cli.hpp"
#include "relkit/eval.hpp"
#include "relkit/pipeline.hpp"

using namespace relkit;
using namespace relkit::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = RELKIT_FIXTURES;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

std::string fixture_paths() {
  return "[paths]\nconcepts = \"" + (kFixtures / "concepts.tsv").generic_string() + "\"\nmerge_map = \"" +
         (kFixtures / "merge_map.json").generic_string() + "\"\n";
}

std::vector<std::pair<std::size_t, std::size_t>> nonzeros(const Tensor& a) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) out.emplace_back(r, c);
  return out;
}

Outcome gradient_integrity() {
  const auto start = Clock::now();
  std::map<std::string, GradientCheckReport> errors;

  Rng rng(1, "gcn");
  Tensor h = trainable(random_matrix(4, 8, 11));
  Tensor w1 = trainable(random_matrix(8, 16, 12, 0.5));
  Tensor w2 = trainable(random_matrix(16, 8, 13, 0.5));
  Tensor adjacency = Tensor::matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j && rng.uniform() < 0.5) adjacency(i, j) = 1.0;
  const Tensor probe = random_matrix(4, 8, 14);
  std::vector<Tensor*> gcn_params{&h, &w1, &w2};
  errors["GCN stack"] = finite_difference_report(
      [&](ad::Tape& t) {
        const ad::Var y = gcn_stack(t.parameter(h), adjacency, t.parameter(w1), t.parameter(w2));
        return ad::sum(ad::hadamard(y, t.constant(probe)));
      },
      gcn_params);

  IRTConfig irt;
  irt.depth = 2;
  irt.heads = 2;
  irt.model_dim = 16;
  irt.label_embed_dim = 8;
  irt.box_embed_dim = 8;
  ParameterStore irt_params;
  init_irt(irt_params, "irt", irt, 6, 4, 7);
  const InstanceSet instances = random_instances(4, 4, 6, 3);
  const Tensor irt_probe = random_matrix(4, 16, 99);
  errors["IRT encoder"] = finite_difference_report(
      [&](ad::Tape& t) {
        const ad::Var m = run_irt(t, instances, irt_params, "irt", irt).context;
        return ad::sum(ad::hadamard(m, t.constant(irt_probe)));
      },
      irt_params.all());

  const std::size_t pairs = 12, d = 16, k = 6;
  Tensor subject = trainable(random_matrix(pairs, d, 21));
  Tensor object = trainable(random_matrix(pairs, d, 22));
  Tensor unions = trainable(random_matrix(pairs, d, 23));
  Tensor w = trainable(random_matrix(k, d, 24, 0.5));
  Tensor wr = trainable(random_matrix(1, d, 25, 0.5));
  Tensor br = trainable(Tensor::vector({0.1}));
  const Tensor bias = random_matrix(pairs, k, 26);
  std::vector<std::size_t> targets;
  std::vector<double> related;
  for (std::size_t p = 0; p < pairs; ++p) {
    targets.push_back(p % k);
    related.push_back(p % 3 == 0 ? 1.0 : 0.0);
  }
  std::vector<Tensor*> head_params{&subject, &object, &unions, &w, &wr, &br};
  errors["DistMult + relatedness head"] = finite_difference_report(
      [&](ad::Tape& t) {
        const ad::Var s = t.parameter(subject), o = t.parameter(object), u = t.parameter(unions);
        const ad::Var r = distmult_score(s, o, u, t.parameter(w), bias);
        const ad::Var rr = relatedness_score(s, o, u, t.parameter(wr), t.parameter(br));
        return ad::cross_entropy(r, targets) + ad::binary_cross_entropy_with_logits(rr, related);
      },
      head_params);

  const std::string config_text = "seed = 0\n" + fixture_paths() +
                                  "[data]\nimages = 6\nfeature_dim = 4\n"
                                  "[irt]\nmodel_dim = 8\nlabel_embed_dim = 4\nbox_embed_dim = 4\n"
                                  "[knowledge]\nword_dim = 6\nhidden_dim = 8\n"
                                  "[transe]\nepochs = 30\ndim = 8\n";
  const ExperimentConfig config = parse_config_text(config_text);
  const Experiment ex = build_experiment(config);
  SceneGraphModel model(ex.config.model, ex.vocab, ex.freq, ex.knowledge);
  const auto training = make_training_images(ex.dataset, ex.features);
  const TrainingImage* batch[] = {&training.front()};
  errors["full composed loss"] = finite_difference_report(
      [&](ad::Tape& t) {
        Rng background(config.seed, "gradcheck");
        return *model.batch_loss(t, batch, background);
      },
      model.params().all());

  Outcome out;
  const double elapsed = seconds_since(start);
  for (const auto& [name, r] : errors) {
    out.detail += name + " " + fmt("%.2e", r.max_relative_error);
    if (!(r.max_relative_error < 1e-4)) {
      out.pass = false;
      out.detail += " (worst coordinate: analytic " + fmt("%.4e", r.analytic) + ", numeric " +
                    fmt("%.4e", r.numeric) + ")";
    }
    out.detail += ", ";
  }
  out.detail += fmt("%.1fs", elapsed);
  if (elapsed >= 120.0) out.pass = false;
  return out;
}

Outcome one_shot_sampler() {
  Rng rng(2, "sampler");
  Outcome out;
  std::size_t total_images = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto corpus = random_corpus(rng, 1 + rng.index(200), 2 + rng.index(6), 1 + rng.index(5));
    total_images += corpus.size();
    const OneShotDataset ds = build_one_shot_split(corpus);
    std::set<TripletKey> distinct;
    for (const auto& rec : corpus)
      for (const auto& t : rec.triplets) distinct.insert(t.key());
    std::map<TripletKey, int> exemplars;
    for (const auto& rec : ds.supervised_images())
      for (const auto& t : rec.triplets) ++exemplars[t.key()];
    bool ok = exemplars.size() == distinct.size() && ds.triplet_registry.size() == distinct.size();
    for (const auto& [key, count] : exemplars) ok = ok && count == 1;
    ok = ok && ds.images.size() <= distinct.size();
    const OneShotDataset again = build_one_shot_split(ds.images);
    ok = ok && again.images.size() == ds.images.size();
    for (std::size_t i = 0; ok && i < ds.images.size(); ++i) ok = again.images[i].image_id == ds.images[i].image_id;
    std::set<TripletKey> first, second;
    for (const auto& [key, ex] : ds.triplet_registry) first.insert(key);
    for (const auto& [key, ex] : again.triplet_registry) second.insert(key);
    ok = ok && first == second;
    if (!ok) {
      out.pass = false;
      out.detail = "trial " + std::to_string(trial) + " broke an invariant";
      return out;
    }
  }
  out.detail = "50 corpora, " + std::to_string(total_images) + " images";
  return out;
}

Outcome path_mining() {
  Rng rng(3, "paths");
  Outcome out;
  std::size_t paths = 0, kept = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nodes = 2 + rng.index(11);
    const ConceptGraph g = random_graph(rng, nodes, 1 + rng.index(20), 1 + rng.index(3));
    const std::size_t a = rng.index(nodes);
    std::size_t b = rng.index(nodes);
    if (b == a) b = (a + 1) % nodes;
    const auto got = enumerate_simple_paths(g, a, b, 4);
    const auto want = oracle_paths(g, a, b, 4);
    const TransEModel m = random_transe(rng, g, 4, 1.5);
    const auto pruned = prune_paths(got, g, m, 0.15);
    std::set<ConceptPath> expected;
    for (const auto& p : want) {
      double s = 1.0;
      for (const auto& hop : p) s *= oracle_score(m, g.edges[hop.edge]);
      if (s >= 0.15) expected.insert(p);
    }
    paths += want.size();
    kept += expected.size();
    const bool ok = std::set<ConceptPath>(got.begin(), got.end()) == want && got.size() == want.size() &&
                    std::set<ConceptPath>(pruned.begin(), pruned.end()) == expected && pruned.size() == expected.size();
    if (!ok) {
      out.pass = false;
      out.detail = "trial " + std::to_string(trial) + " disagrees with the oracle";
      return out;
    }
  }
  out.detail = "100 graphs, " + std::to_string(paths) + " paths, " + std::to_string(kept) + " retained";
  return out;
}

Outcome adjacency_construction() {
  Outcome out;
  const Vocabulary vocab = load_vocabulary(kFixtures / "vocab.json");
  const RelationalKG kg = build_relational_graph(load_triplet_corpus(kFixtures / "pillow_on_bed.jsonl", vocab), vocab);
  const std::size_t pillow = 0, bed = 1, on = kg.predicate_node(0);
  using Bits = std::vector<std::pair<std::size_t, std::size_t>>;
  if (kg.categories[pillow] != "pillow" || kg.categories[bed] != "bed" || kg.categories[on] != "on" ||
      nonzeros(kg.object_adjacency) != Bits{{pillow, bed}} ||
      nonzeros(kg.predicate_adjacency) != Bits{{pillow, on}, {on, bed}}) {
    out.pass = false;
    out.detail = "pillow-on-bed fixture does not give exactly three nonzeros";
    return out;
  }
  Rng rng(4, "adjacency");
  Vocabulary random_vocab;
  for (int c = 0; c < 6; ++c) random_vocab.object_classes.push_back("o" + std::to_string(c));
  for (int p = 0; p < 4; ++p) random_vocab.predicate_classes.push_back("p" + std::to_string(p));
  for (int trial = 0; trial < 50; ++trial) {
    const auto corpus = random_corpus(rng, 1 + rng.index(60), 6, 4);
    std::set<std::pair<std::size_t, std::size_t>> want_o, want_p;
    for (const auto& rec : corpus) {
      for (const auto& t : rec.triplets) {
        want_o.insert({t.subject_class, t.object_class});
        want_p.insert({t.subject_class, 6 + t.predicate_class});
        want_p.insert({6 + t.predicate_class, t.object_class});
      }
    }
    auto shuffled = corpus;
    rng.shuffle(shuffled.begin(), shuffled.end());
    const auto extra = static_cast<std::ptrdiff_t>(rng.index(corpus.size()));
    shuffled.insert(shuffled.end(), corpus.begin(), corpus.begin() + extra);
    const RelationalKG base = build_relational_graph(corpus, random_vocab);
    const RelationalKG other = build_relational_graph(shuffled, random_vocab);
    const Bits o(want_o.begin(), want_o.end()), p(want_p.begin(), want_p.end());
    if (nonzeros(base.object_adjacency) != o || nonzeros(base.predicate_adjacency) != p ||
        nonzeros(other.object_adjacency) != o || nonzeros(other.predicate_adjacency) != p) {
      out.pass = false;
      out.detail = "random corpus " + std::to_string(trial) + " is order or duplication sensitive";
      return out;
    }
  }
  out.detail = "fixture exact, 50 shuffled and duplicated corpora";
  return out;
}

Outcome recall_oracle() {
  Rng rng(5, "recall");
  Outcome out;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(6), k = 1 + rng.index(10);
    const PairScores s = random_scores(n, k, rng, trial % 2 == 0);
    const auto gt = n > 1 ? random_gt(n, k, rng) : std::vector<RelationshipTriplet>{};
    const auto ranked = rank_triplets(s, true);
    bool ok = ranked.size() <= n * (n - 1);
    double previous = 0.0;
    for (std::size_t cut = 1; cut <= 100; ++cut) {
      const double r = recall_at_k(ranked, gt, cut);
      ok = ok && r == oracle_recall(ranked, gt, cut) && r >= previous;
      previous = r;
    }
    if (!ok) {
      out.pass = false;
      out.detail = "trial " + std::to_string(trial) + " disagrees with the oracle";
      return out;
    }
  }
  out.detail = "200 instances, K = 1..100";
  return out;
}

Outcome structural_invariants() {
  Outcome out;
  double irt_dev = 0.0, gcn_dev = 0.0, swap_dev = 0.0;

  IRTConfig irt;
  irt.model_dim = 16;
  irt.label_embed_dim = 8;
  irt.box_embed_dim = 8;
  ParameterStore params;
  init_irt(params, "irt", irt, 6, 5, 31);
  const InstanceSet s = random_instances(5, 5, 6, 32);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  ad::Tape t1, t2;
  const Tensor m = run_irt(t1, s, params, "irt", irt).context.value();
  const Tensor mp = run_irt(t2, permute_instances(s, perm), params, "irt", irt).context.value();
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) irt_dev = std::max(irt_dev, std::abs(mp(i, c) - m(perm[i], c)));

  Rng rng(6, "gcn");
  const std::size_t n = 7;
  Tensor a = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && rng.uniform() < 0.4) a(i, j) = 1.0;
  const Tensor h = random_matrix(n, 5, 33), w1 = random_matrix(5, 6, 34), w2 = random_matrix(6, 4, 35);
  std::vector<std::size_t> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = (i * 3 + 2) % n;
  Tensor hp = Tensor::matrix(n, 5), ap = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 5; ++c) hp(i, c) = h(q[i], c);
    for (std::size_t j = 0; j < n; ++j) ap(i, j) = a(q[i], q[j]);
  }
  ad::Tape t3;
  const Tensor y = gcn_stack(t3.constant(h), a, t3.constant(w1), t3.constant(w2)).value();
  const Tensor yp = gcn_stack(t3.constant(hp), ap, t3.constant(w1), t3.constant(w2)).value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < y.cols(); ++c) gcn_dev = std::max(gcn_dev, std::abs(yp(i, c) - y(q[i], c)));

  ad::Tape t4;
  const ad::Var es = t4.constant(random_matrix(9, 8, 36)), eo = t4.constant(random_matrix(9, 8, 37));
  const ad::Var u = t4.constant(random_matrix(9, 8, 38)), wd = t4.constant(random_matrix(5, 8, 39));
  const Tensor zero = Tensor::matrix(9, 5);
  const Tensor ab = distmult_score(es, eo, u, wd, zero).value();
  const Tensor ba = distmult_score(eo, es, u, wd, zero).value();
  for (std::size_t i = 0; i < ab.size(); ++i) swap_dev = std::max(swap_dev, std::abs(ab[i] - ba[i]));

  const ToyWorld world = make_toy_world(kFixtures, 8, 4, 6, 40);
  FreqBias shifted(world.freq.num_objects(), world.freq.num_predicates(), world.freq.epsilon());
  for (const auto& [key, row] : world.freq.table()) {
    auto r = row;
    for (double& v : r) v -= 2.0;
    shifted.set_row(key.first, key.second, r);
  }
  bool argmax_same = true;
  const std::size_t classes = world.vocab.num_objects(), k = world.vocab.num_predicates();
  for (std::size_t sc = 0; sc < classes; ++sc) {
    for (std::size_t oc = 0; oc < classes; ++oc) {
      const std::vector<std::size_t> cls = {sc, oc};
      const Tensor b0 = frequency_bias_rows(world.freq, cls, {{0, 1}}, k);
      const Tensor b1 = frequency_bias_rows(shifted, cls, {{0, 1}}, k);
      std::size_t i0 = 0, i1 = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (b0[c] > b0[i0]) i0 = c;
        if (b1[c] > b1[i1]) i1 = c;
      }
      argmax_same = argmax_same && i0 == i1;
    }
  }
  const ModelConfig cfg = small_model_config(4, 6, 8, true, 41);
  SceneGraphModel base(cfg, world.vocab, world.freq, world.knowledge);
  SceneGraphModel moved(cfg, world.vocab, shifted, world.knowledge);
  const auto inputs = attach_features(world.dataset.images, world.features);
  MetricsTable tb, tm;
  run_setup(world.dataset.images, inputs, model_scorer(base), Setup::kPredCls, tb);
  run_setup(world.dataset.images, inputs, model_scorer(moved), Setup::kPredCls, tm);
  const bool recall_same = tb.rows.at("PredCls").recall == tm.rows.at("PredCls").recall;

  out.pass = irt_dev <= 1e-8 && gcn_dev <= 1e-10 && swap_dev <= 1e-12 && argmax_same && recall_same;
  out.detail = "IRT " + fmt("%.1e", irt_dev) + ", GCN " + fmt("%.1e", gcn_dev) + ", DistMult swap " +
               fmt("%.1e", swap_dev) + ", freq shift argmax " + (argmax_same ? "same" : "changed") + ", recall " +
               (recall_same ? "same" : "changed");
  return out;
}

ExperimentConfig desk_config(bool knowledge, std::size_t epochs) {
  std::string text = "seed = 0\n" + fixture_paths() + "[knowledge]\nuse_relational = " +
                     (knowledge ? "true" : "false") + "\nuse_commonsense = " + (knowledge ? "true" : "false") +
                     "\n[optimizer]\nmax_epochs = " + std::to_string(epochs) + "\n";
  return parse_config_text(text);
}

Outcome ablation_consistency() {
  Outcome out;
  const Experiment off = build_experiment(desk_config(false, 10));
  const Experiment on = build_experiment(desk_config(true, 10));
  SceneGraphModel plain(off.config.model, off.vocab, off.freq, off.knowledge);
  SceneGraphModel rich(on.config.model, on.vocab, on.freq, on.knowledge);
  for (auto* ex : {&off, &on}) {
    SceneGraphModel& model = ex == &off ? plain : rich;
    TrainState state{0, Rng(ex->config.seed, "train")};
    train_epochs(model, make_training_images(ex->dataset, ex->features), ex->config.optimizer, state, 10);
  }
  const auto inputs = attach_features(off.eval_images, off.features);
  bool identical = true, differs = false;
  for (const auto& in : inputs) {
    const PairScores pipeline = plain.score(in, Setup::kPredCls);
    const PairScores reference = score_irt_only(plain, in);
    const PairScores knowledge = rich.score(in, Setup::kPredCls);
    for (std::size_t i = 0; i < pipeline.predicate_logits.size(); ++i) {
      identical = identical && pipeline.predicate_logits[i] == reference.predicate_logits[i];
      differs = differs || pipeline.predicate_logits[i] != knowledge.predicate_logits[i];
    }
    for (std::size_t i = 0; i < pipeline.relatedness.size(); ++i) {
      identical = identical && pipeline.relatedness[i] == reference.relatedness[i];
      differs = differs || pipeline.relatedness[i] != knowledge.relatedness[i];
    }
  }
  out.pass = identical && differs;
  out.detail = std::string("knowledge off ") + (identical ? "bit-identical to" : "differs from") +
               " the IRT-only path; knowledge on " + (differs ? "changes" : "does not change") + " the scores";
  return out;
}

Outcome learning_sanity() {
  const auto start = Clock::now();
  Outcome out;
  const ExperimentConfig config = desk_config(true, 200);
  const Experiment ex = build_experiment(config);
  SceneGraphModel model(ex.config.model, ex.vocab, ex.freq, ex.knowledge);
  TrainState state{0, Rng(config.seed, "train")};
  train_epochs(model, make_training_images(ex.dataset, ex.features), config.optimizer, state, 200);
  EvalConfig eval;
  eval.setups = {Setup::kPredCls};
  const MetricsTable train = evaluate(model, ex.dataset.images, ex.features, eval, false);
  const MetricsTable held = evaluate(model, ex.eval_images, ex.features, eval, true);
  const double train_r = train.rows.at("PredCls").recall.at(20);
  const double held_r = held.rows.at("PredCls").recall.at(20);
  const double freq_r = held.rows.at("Freq PredCls").recall.at(20);
  const double elapsed = seconds_since(start);
  out.pass = train_r >= 0.9 && held_r > freq_r && elapsed < 300.0;
  out.detail = "train R@20 " + fmt("%.3f", train_r) + ", held-out R@20 " + fmt("%.3f", held_r) +
               " vs frequency baseline " + fmt("%.3f", freq_r) + ", " + std::to_string(ex.vocab.num_objects()) +
               " classes, " + std::to_string(ex.vocab.num_predicates()) + " predicates, " +
               std::to_string(ex.dataset.images.size()) + " images, " + fmt("%.1fs", elapsed);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / "relkit_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "experiment.toml";
  {
    std::ofstream f(config);
    f << "seed = 7\n" << fixture_paths() << "[optimizer]\nmax_epochs = 20\n";
  }
  std::vector<std::string> metrics, checkpoints;
  for (int run = 0; run < 2; ++run) {
    const std::string ckpt = (dir / ("run" + std::to_string(run) + ".ckpt")).string();
    const std::string json = (dir / ("run" + std::to_string(run) + ".json")).string();
    std::ostringstream sink, err;
    const int a = run_command({"train", "--config", config.string(), "--out", ckpt, "--quiet"}, sink, err);
    const int b = run_command({"eval", "--checkpoint", ckpt, "--out", json, "--baseline"}, sink, err);
    if (a != 0 || b != 0) {
      out.pass = false;
      out.detail = "command failed: " + err.str();
      return out;
    }
    metrics.push_back(slurp(json));
    checkpoints.push_back(slurp(ckpt));
  }
  out.pass = !metrics[0].empty() && metrics[0] == metrics[1];
  out.detail = std::string("metrics JSON ") + (out.pass ? "byte-identical" : "differs") + " (" +
               std::to_string(metrics[0].size()) + " bytes), checkpoints " +
               (checkpoints[0] == checkpoints[1] ? "byte-identical" : "differ");
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"one-shot sampler correctness", one_shot_sampler},
      {"path mining oracle", path_mining},
      {"adjacency construction", adjacency_construction},
      {"Recall@K oracle", recall_oracle},
      {"structural invariants", structural_invariants},
      {"ablation consistency", ablation_consistency},
      {"desk-scale learning sanity", learning_sanity},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
