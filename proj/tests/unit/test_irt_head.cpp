#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "../support/toy_model.hpp"
#include "relkit/errors.hpp"
#include "relkit/geometry.hpp"
#include "relkit/irt.hpp"
#include "relkit/model.hpp"
#include "relkit/predicate_head.hpp"

using namespace relkit;
using namespace relkit::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = RELKIT_FIXTURES;

IRTConfig tiny_irt(std::size_t d = 16) {
  IRTConfig c;
  c.depth = 2;
  c.heads = 2;
  c.model_dim = d;
  c.label_embed_dim = 4;
  c.box_embed_dim = 4;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor encode(const InstanceSet& s, ParameterStore& params, const IRTConfig& cfg) {
  ad::Tape tape;
  return run_irt(tape, s, params, "irt", cfg).context.value();
}

std::vector<Tensor*> prefixed(ParameterStore& params, const std::string& prefix) {
  return params.with_prefix(prefix);
}

}  // namespace

TEST_CASE("embed_labels picks, averages and mixes class embeddings") {
  const Tensor w = random_matrix(3, 5, 1);
  ad::Tape tape;
  const ad::Var wv = tape.constant(w);

  Tensor l = Tensor::matrix(3, 3);
  l(0, 1) = 1.0;
  for (std::size_t c = 0; c < 3; ++c) l(1, c) = 1.0 / 3.0;
  l(2, 0) = 0.7;
  l(2, 2) = 0.3;
  const Tensor e = embed_labels(tape.constant(l), wv).value();
  for (std::size_t d = 0; d < 5; ++d) {
    CHECK(e(0, d) == w(1, d));
    CHECK(e(1, d) == doctest::Approx((w(0, d) + w(1, d) + w(2, d)) / 3.0).epsilon(1e-14));
    double ref = 0.0;
    for (std::size_t c = 0; c < 3; ++c) ref += l(2, c) * w(c, d);
    CHECK(e(2, d) == doctest::Approx(ref).epsilon(1e-14));
  }
  CHECK_THROWS_AS(embed_labels(tape.constant(Tensor::matrix(2, 4)), wv), DimensionError);
}

TEST_CASE("box geometry vector") {
  const auto g = box_geometry({10, 20, 30, 60}, 100, 100);
  const double expect[] = {0.1, 0.2, 0.3, 0.6, 0.2, 0.4, 0.2, 0.4};
  for (std::size_t i = 0; i < 8; ++i) CHECK(g[i] == doctest::Approx(expect[i]).epsilon(1e-15));

  const auto full = box_geometry({0, 0, 64, 48}, 64, 48);
  const double full_expect[] = {0, 0, 1, 1, 0.5, 0.5, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) CHECK(full[i] == full_expect[i]);

  const auto a = box_geometry({3, 7, 21, 30}, 50, 40);
  const auto b = box_geometry({6, 14, 42, 60}, 100, 80);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));

  CHECK_THROWS_AS(box_geometry({10, 10, 5, 20}, 100, 100), ValidationError);
  CHECK_THROWS_AS(box_geometry({10, 10, 120, 20}, 100, 100), ValidationError);
}

TEST_CASE("IRT config validation") {
  IRTConfig c = tiny_irt();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_irt();
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("attention over a single instance is [[1]] in every head") {
  const IRTConfig cfg = tiny_irt();
  ParameterStore params;
  init_irt(params, "irt", cfg, 6, 4, 3);
  const InstanceSet s = random_instances(1, 4, 6, 9);
  ad::Tape tape;
  const EncoderOutput out = run_irt(tape, s, params, "irt", cfg);
  REQUIRE(out.attention.size() == cfg.depth);
  for (const auto& layer : out.attention) {
    REQUIRE(layer.size() == cfg.heads);
    for (const Tensor& a : layer) {
      REQUIRE(a.size() == 1);
      CHECK(a[0] == 1.0);
    }
  }
}

TEST_CASE("attention rows sum to one") {
  const IRTConfig cfg = tiny_irt();
  ParameterStore params;
  init_irt(params, "irt", cfg, 6, 4, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const InstanceSet s = random_instances(2 + seed, 4, 6, seed);
    ad::Tape tape;
    const EncoderOutput out = run_irt(tape, s, params, "irt", cfg);
    for (const auto& layer : out.attention) {
      for (const Tensor& a : layer) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const auto row = a.row(r);
          CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-10);
        }
      }
    }
  }
}

TEST_CASE("IRT is permutation equivariant and symmetric in identical rows") {
  const IRTConfig cfg = tiny_irt();
  ParameterStore params;
  init_irt(params, "irt", cfg, 6, 4, 5);
  const InstanceSet s = random_instances(5, 4, 6, 17);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  const Tensor m = encode(s, params, cfg);
  const Tensor mp = encode(permute_instances(s, perm), params, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t d = 0; d < cfg.model_dim; ++d) worst = std::max(worst, std::abs(mp(i, d) - m(perm[i], d)));
  CHECK(worst <= 1e-8);

  InstanceSet twin = random_instances(3, 4, 6, 21);
  for (std::size_t c = 0; c < 4; ++c) twin.labels(2, c) = twin.labels(0, c);
  for (std::size_t c = 0; c < 4; ++c) twin.boxes(2, c) = twin.boxes(0, c);
  for (std::size_t c = 0; c < 6; ++c) twin.features(2, c) = twin.features(0, c);
  const Tensor mt = encode(twin, params, cfg);
  for (std::size_t d = 0; d < cfg.model_dim; ++d) CHECK(mt(0, d) == mt(2, d));
}

TEST_CASE("IRT on an empty instance set yields an empty context") {
  const IRTConfig cfg = tiny_irt();
  ParameterStore params;
  init_irt(params, "irt", cfg, 6, 4, 5);
  InstanceSet empty;
  empty.labels = Tensor::matrix(0, 4);
  empty.boxes = Tensor::matrix(0, 4);
  empty.features = Tensor::matrix(0, 6);
  empty.image_width = empty.image_height = 10;
  const Tensor m = encode(empty, params, cfg);
  CHECK(m.rows() == 0);
  CHECK(m.cols() == cfg.model_dim);
}

TEST_CASE("IRT encoding of one image does not depend on other images") {
  const IRTConfig cfg = tiny_irt();
  ParameterStore params;
  init_irt(params, "irt", cfg, 6, 4, 5);
  const InstanceSet a = random_instances(3, 4, 6, 1);
  const InstanceSet b = random_instances(4, 4, 6, 2);
  const Tensor alone = encode(a, params, cfg);
  ad::Tape tape;
  run_irt(tape, b, params, "irt", cfg);
  const Tensor shared = run_irt(tape, a, params, "irt", cfg).context.value();
  CHECK(max_abs_diff(alone, shared) == 0.0);
}

TEST_CASE("IRT encoder gradient check") {
  const IRTConfig cfg = tiny_irt(16);
  ParameterStore params;
  init_irt(params, "irt", cfg, 6, 4, 7);
  const InstanceSet s = random_instances(4, 4, 6, 3);
  const Tensor probe = random_matrix(4, 16, 99);
  const auto targets = prefixed(params, "irt");
  const double err = finite_difference_check(
      [&](ad::Tape& tape) {
        const ad::Var m = run_irt(tape, s, params, "irt", cfg).context;
        return ad::sum(ad::hadamard(m, tape.constant(probe)));
      },
      targets);
  CHECK(err < 1e-4);
}

TEST_CASE("label refiner gradient check and equivariance") {
  const IRTConfig cfg = tiny_irt(8);
  ParameterStore params;
  init_label_refiner(params, "refiner", cfg, 5, 4, 11);
  const InstanceSet s = random_instances(3, 4, 5, 8);
  const auto targets = prefixed(params, "refiner");
  const double err = finite_difference_check(
      [&](ad::Tape& tape) {
        return ad::cross_entropy(refine_labels(tape, s, params, "refiner", cfg), s.gt_classes);
      },
      targets);
  CHECK(err < 1e-4);

  const std::vector<std::size_t> perm = {2, 0, 1};
  ad::Tape t1, t2;
  const Tensor z = refine_labels(t1, s, params, "refiner", cfg).value();
  const Tensor zp = refine_labels(t2, permute_instances(s, perm), params, "refiner", cfg).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(zp(i, c) - z(perm[i], c)) <= 1e-8);
}

TEST_CASE("label refiner overfits five synthetic images") {
  SceneGeneratorConfig gen;
  gen.seed = 4;
  const auto corpus = generate_corpus(gen, 5);
  std::vector<InstanceSet> sets;
  for (const auto& rec : corpus) {
    InstanceSet s = rec.instances;
    s.features = synthesize_features(4, rec.image_id, s.gt_classes, 12, 0.3);
    sets.push_back(s);
  }
  const IRTConfig cfg = tiny_irt(16);
  ParameterStore params;
  init_label_refiner(params, "refiner", cfg, 12, gen.num_object_classes, 2);
  OptimizerConfig opt;
  opt.learning_rate = 0.05;
  const auto all = params.all();
  for (int step = 0; step < 300; ++step) {
    ad::Tape tape;
    std::vector<ad::Var> rows;
    std::vector<std::size_t> targets;
    for (const auto& s : sets) {
      rows.push_back(refine_labels(tape, s, params, "refiner", cfg));
      targets.insert(targets.end(), s.gt_classes.begin(), s.gt_classes.end());
    }
    tape.backward(ad::cross_entropy(ad::concat_rows(rows), targets));
    sgd_step(all, opt);
  }
  std::size_t correct = 0, total = 0;
  for (const auto& s : sets) {
    ad::Tape tape;
    const Tensor z = refine_labels(tape, s, params, "refiner", cfg).value();
    for (std::size_t i = 0; i < s.size(); ++i, ++total) {
      const auto row = z.row(i);
      correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == s.gt_classes[i];
    }
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("fuse_features sums and distributes gradient") {
  ad::Tape tape;
  const Tensor m = random_matrix(3, 4, 2);
  const ad::Var zeros = tape.constant(Tensor::matrix(3, 4));
  CHECK(max_abs_diff(fuse_features(zeros, zeros, tape.constant(m)).value(), m) == 0.0);

  Tensor a = m, b = m, c = m;
  for (Tensor* t : {&a, &b, &c}) t->set_requires_grad(true);
  const ad::Var va = tape.parameter(a), vb = tape.parameter(b), vc = tape.parameter(c);
  const ad::Var fused = fuse_features(va, vb, vc);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(fused.value()[i] == doctest::Approx(3.0 * m[i]));
  tape.backward(ad::sum(fused));
  for (const Tensor* t : {&a, &b, &c})
    for (std::size_t i = 0; i < t->size(); ++i) CHECK(t->grad()[i] == 1.0);

  ad::Tape other;
  CHECK_THROWS_AS(fuse_features(other.constant(Tensor::matrix(3, 4)), other.constant(Tensor::matrix(2, 4)),
                                other.constant(m)),
                  DimensionError);
}

TEST_CASE("subject and object projections") {
  ParameterStore params;
  init_predicate_head(params, "head", {4, 3}, 5, 1);
  const Tensor e = random_matrix(3, 4, 6);
  {
    ad::Tape tape;
    const auto [es, eo] = project_subject_object(tape.constant(e), params, "head");
    CHECK(max_abs_diff(es.value(), eo.value()) > 1e-3);
  }
  for (const char* side : {"head.subject", "head.object"}) {
    Tensor& w = params.at(std::string(side) + ".w");
    std::fill(w.data().begin(), w.data().end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) w(i, i) = 1.0;
    Tensor& b = params.at(std::string(side) + ".b");
    std::fill(b.data().begin(), b.data().end(), 0.0);
  }
  ad::Tape tape;
  const auto [es, eo] = project_subject_object(tape.constant(e), params, "head");
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(es.value()[i] == std::max(0.0, e[i]));
    CHECK(eo.value()[i] == std::max(0.0, e[i]));
  }
  ad::Tape bad;
  CHECK_THROWS_AS(project_subject_object(bad.constant(Tensor::matrix(2, 5)), params, "head"), DimensionError);
}

TEST_CASE("pair geometry and union features") {
  InstanceSet s;
  s.image_width = s.image_height = 20;
  s.boxes = Tensor::matrix(2, 4);
  const double boxes[2][4] = {{0, 0, 10, 10}, {5, 5, 15, 15}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 4; ++c) s.boxes(i, c) = boxes[i][c];
  s.features = random_matrix(2, 3, 5);
  const auto g = pair_geometry(s, 0, 1);
  REQUIRE(g.size() == kPairGeometryDim);
  CHECK(g[24] == doctest::Approx(25.0 / 175.0).epsilon(1e-15));
  CHECK(g[25] == doctest::Approx(0.25));
  CHECK(g[26] == doctest::Approx(0.25));

  ParameterStore params;
  init_predicate_head(params, "head", {4, 3}, 5, 1);
  ad::Tape tape;
  const Tensor u = union_features(tape.constant(s.features), s, all_ordered_pairs(2), params, "head").value();
  CHECK(max_abs_diff(Tensor::from_rows({{u(0, 0), u(0, 1), u(0, 2), u(0, 3)}}),
                     Tensor::from_rows({{u(1, 0), u(1, 1), u(1, 2), u(1, 3)}})) > 1e-6);

  InstanceSet twin = s;
  for (std::size_t c = 0; c < 4; ++c) twin.boxes(1, c) = twin.boxes(0, c);
  for (std::size_t c = 0; c < 3; ++c) twin.features(1, c) = twin.features(0, c);
  const Tensor ut = union_features(tape.constant(twin.features), twin, all_ordered_pairs(2), params, "head").value();
  for (std::size_t d = 0; d < 4; ++d) CHECK(ut(0, d) == ut(1, d));
  CHECK_THROWS_AS(union_features(tape.constant(s.features), s, {{0, 0}}, params, "head"), ValidationError);
}

TEST_CASE("DistMult arithmetic and argument-swap symmetry") {
  ad::Tape tape;
  const ad::Var es = tape.constant(Tensor::from_rows({{1, 2}}));
  const ad::Var eo = tape.constant(Tensor::from_rows({{3, 4}}));
  const ad::Var ones = tape.constant(Tensor::from_rows({{1, 1}}));
  const Tensor r = distmult_score(es, eo, ones, tape.constant(Tensor::from_rows({{1, -1}, {1, 1}})),
                                  Tensor::matrix(1, 2))
                       .value();
  CHECK(r(0, 0) == -5.0);
  CHECK(r(0, 1) == 11.0);

  const Tensor a = random_matrix(6, 8, 1), b = random_matrix(6, 8, 2), u = random_matrix(6, 8, 3);
  const Tensor w = random_matrix(5, 8, 4);
  const Tensor zero_bias = Tensor::matrix(6, 5);
  const Tensor ab = distmult_score(tape.constant(a), tape.constant(b), tape.constant(u), tape.constant(w), zero_bias)
                        .value();
  const Tensor ba = distmult_score(tape.constant(b), tape.constant(a), tape.constant(u), tape.constant(w), zero_bias)
                        .value();
  CHECK(max_abs_diff(ab, ba) <= 1e-12);

  const Tensor wr = random_matrix(1, 8, 5);
  const ad::Var bias = tape.constant(Tensor::from_rows({{0.37}}));
  const Tensor rab = relatedness_score(tape.constant(a), tape.constant(b), tape.constant(u), tape.constant(wr), bias)
                         .value();
  const Tensor rba = relatedness_score(tape.constant(b), tape.constant(a), tape.constant(u), tape.constant(wr), bias)
                         .value();
  CHECK(max_abs_diff(rab, rba) <= 1e-12);
  const Tensor rz = relatedness_score(tape.constant(Tensor::matrix(6, 8)), tape.constant(Tensor::matrix(6, 8)),
                                      tape.constant(u), tape.constant(wr), bias)
                        .value();
  for (std::size_t p = 0; p < 6; ++p) CHECK(rz(p, 0) == 0.37);

  CHECK_THROWS_AS(distmult_score(es, eo, ones, tape.constant(Tensor::matrix(2, 3)), Tensor::matrix(1, 2)),
                  DimensionError);
}

TEST_CASE("frequency bias rows fall back to uniform") {
  FreqBias freq(3, 2, 1e-3);
  freq.set_row(0, 1, {std::log(0.5), std::log(0.3), std::log(0.2)});
  const auto rows = frequency_bias_rows(freq, {0, 1, 2}, {{0, 1}, {1, 0}}, 2);
  CHECK(rows(0, 0) == std::log(0.5));
  CHECK(rows(0, 1) == std::log(0.3));
  CHECK(rows(1, 0) == doctest::Approx(-std::log(3.0)));
  const auto mismatch = frequency_bias_rows(freq, {0, 1}, {{0, 1}}, 4);
  CHECK(mismatch(0, 0) == doctest::Approx(-std::log(5.0)));
}

TEST_CASE("predicate head gradient check") {
  ParameterStore params;
  const HeadConfig hc{8, 3};
  init_predicate_head(params, "head", hc, 4, 13);
  const InstanceSet s = random_instances(4, 3, 3, 77);
  const Tensor fused = random_matrix(4, 8, 12);
  const auto pairs = all_ordered_pairs(4);
  const Tensor bias = random_matrix(pairs.size(), 4, 8);
  std::vector<std::size_t> targets;
  std::vector<double> related;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    targets.push_back(p % 4);
    related.push_back(p % 3 == 0 ? 1.0 : 0.0);
  }
  Tensor e = fused;
  e.set_requires_grad(true);
  auto targets_params = prefixed(params, "head");
  targets_params.push_back(&e);
  const double err = finite_difference_check(
      [&](ad::Tape& tape) {
        const auto [es, eo] = project_subject_object(tape.parameter(e), params, "head");
        std::vector<std::ptrdiff_t> subj, obj;
        for (const auto& [i, j] : pairs) {
          subj.push_back(static_cast<std::ptrdiff_t>(i));
          obj.push_back(static_cast<std::ptrdiff_t>(j));
        }
        const ad::Var u = union_features(tape.constant(s.features), s, pairs, params, "head");
        const ad::Var sr = ad::gather_rows(es, subj), orr = ad::gather_rows(eo, obj);
        const ad::Var r = distmult_score(sr, orr, u, tape.parameter(params.at("head.distmult.w")), bias);
        const ad::Var rr = relatedness_score(sr, orr, u, tape.parameter(params.at("head.related.w")),
                                             tape.parameter(params.at("head.related.b")));
        return ad::cross_entropy(r, targets) + ad::binary_cross_entropy_with_logits(rr, related);
      },
      targets_params);
  CHECK(err < 1e-4);
}

TEST_CASE("setup parsing rejects SGDet") {
  CHECK(parse_setup("PredCls") == Setup::kPredCls);
  CHECK(parse_setup("SGCls") == Setup::kSGCls);
  try {
    parse_setup("SGDet");
    FAIL("SGDet accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("SGDet requires an object detector (out of scope)") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_setup("predcls"), ConfigError);
}

TEST_CASE("full composed loss gradient check") {
  ToyWorld w = make_toy_world(kFixtures, 3, 4, 6, 21);
  SceneGraphModel model(small_model_config(4, 6, 8, true, 3), w.vocab, w.freq, w.knowledge);
  const TrainingImage* batch[] = {&w.training[0]};
  REQUIRE_FALSE(w.training[0].supervision.empty());
  auto params = model.params().all();
  const double err = finite_difference_check(
      [&](ad::Tape& tape) {
        Rng rng(5, "background");
        return *model.batch_loss(tape, batch, rng);
      },
      params);
  CHECK(err < 1e-4);
}

TEST_CASE("training loss decreases on a fixed batch") {
  ToyWorld w = make_toy_world(kFixtures, 5, 8, 8, 6);
  SceneGraphModel model(small_model_config(8, 8, 16, true, 1), w.vocab, w.freq, w.knowledge);
  std::vector<const TrainingImage*> batch;
  for (const auto& img : w.training) batch.push_back(&img);
  OptimizerConfig opt;
  opt.learning_rate = 5e-3;
  Rng rng(1, "background");
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) losses.push_back(*model.train_batch(batch, opt, rng));
  const double head = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10.0;
  const double tail = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10.0;
  CHECK(tail < head);
}

TEST_CASE("batch without supervision is skipped") {
  ToyWorld w = make_toy_world(kFixtures, 2, 4, 6, 2);
  SceneGraphModel model(small_model_config(4, 6, 8, false, 1), w.vocab, w.freq, w.knowledge);
  TrainingImage empty = w.training[0];
  empty.supervision.clear();
  const TrainingImage* batch[] = {&empty};
  Rng rng(0);
  OptimizerConfig opt;
  CHECK_FALSE(model.train_batch(batch, opt, rng).has_value());
}

TEST_CASE("uniform shift of the frequency bias shifts logits and keeps the argmax") {
  ToyWorld w = make_toy_world(kFixtures, 4, 4, 6, 8);
  FreqBias shifted = w.freq;
  for (const auto& [key, row] : w.freq.table()) {
    auto r = row;
    for (double& v : r) v += 2.0;
    shifted.set_row(key.first, key.second, r);
  }
  const ModelConfig cfg = small_model_config(4, 6, 8, false, 2);
  SceneGraphModel base(cfg, w.vocab, w.freq, w.knowledge);
  SceneGraphModel moved(cfg, w.vocab, shifted, w.knowledge);
  for (const auto& img : w.training) {
    const PairScores a = base.score(img.instances, Setup::kPredCls);
    const PairScores b = moved.score(img.instances, Setup::kPredCls);
    const std::size_t n = a.num_instances;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto seen = w.freq.has_pair(img.instances.gt_classes[i], img.instances.gt_classes[j]);
        std::size_t arg_a = 0, arg_b = 0;
        for (std::size_t k = 0; k < a.num_predicates; ++k) {
          CHECK(b.logit(i, j, k) - a.logit(i, j, k) == doctest::Approx(seen ? 2.0 : 0.0).epsilon(1e-12));
          if (a.logit(i, j, k) > a.logit(i, j, arg_a)) arg_a = k;
          if (b.logit(i, j, k) > b.logit(i, j, arg_b)) arg_b = k;
        }
        CHECK(arg_a == arg_b);
      }
    }
  }
}
