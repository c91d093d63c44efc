#include "relkit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "relkit/errors.hpp"
#include "relkit/pipeline.hpp"

namespace relkit {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kCommands[] = {"build-kg", "mine-paths", "sample-oneshot", "train", "eval", "gradcheck"};

/// Raised for bad flags; mapped to exit status 2.
struct UsageError : Error {
  using Error::Error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App& app, Common& c, bool config_required = true) {
  auto* opt = app.add_option("--config", c.config, "experiment config file");
  if (config_required) opt->required();
  app.add_option("--seed", c.seed, "overrides RELKIT_SEED and the config seed");
}

ExperimentConfig load_with_seed(const Common& c) {
  ExperimentConfig config = load_config(c.config);
  apply_seed_override(config, c.seed);
  return config;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LookupError("cannot write " + path);
  f << text;
  if (!f) throw LookupError("failed writing " + path);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits, v);
  return buf;
}

int build_kg(const Common& c, const std::string& out_path, std::ostream& out) {
  ExperimentConfig config = load_with_seed(c);
  config.model.use_commonsense_knowledge = false;
  config.model.use_relational_knowledge = false;
  const Experiment ex = build_experiment(config);
  const RelationalKG kg = build_relational_graph(ex.dataset.supervised_images(), ex.vocab);
  write_text(out_path, relational_kg_to_json(kg) + "\n");
  std::size_t obj = 0, pred = 0;
  for (double v : kg.object_adjacency.data()) obj += v != 0.0;
  for (double v : kg.predicate_adjacency.data()) pred += v != 0.0;
  out << "wrote " << out_path << ": " << kg.size() << " categories, " << obj << " object edges, " << pred
      << " predicate edges\n";
  return 0;
}

json path_json(const ConceptPath& path, const ConceptGraph& graph, const TransEModel& model) {
  json hops = json::array();
  for (const PathHop& h : path) {
    const ConceptEdge& e = graph.edges.at(h.edge);
    hops.push_back({{"head", graph.concepts[e.head]},
                    {"relation", graph.relations[e.relation]},
                    {"tail", graph.concepts[e.tail]},
                    {"forward", h.forward}});
  }
  return {{"from", graph.concepts[path.front().from]},
          {"to", graph.concepts[path.back().to]},
          {"score", path_score(path, graph, model)},
          {"hops", std::move(hops)}};
}

int mine_paths(const Common& c, const std::string& labels_arg, const MiningOptions& options,
               const std::string& out_path, std::ostream& out) {
  if (options.max_edges < 1) throw ConfigError("--max-edges: must be >= 1");
  if (!(options.threshold > 0.0 && options.threshold <= 1.0)) throw ConfigError("--threshold: must be in (0, 1]");
  const ExperimentConfig config = load_with_seed(c);
  std::vector<std::string> labels;
  std::stringstream ss(labels_arg);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) labels.push_back(item);
  }
  if (labels.empty()) throw ConfigError("--labels: expected a comma-separated list of labels");
  const KnowledgeSources k = load_commonsense(config);
  const ConceptGraph& graph = *k.concepts;
  const CommonsenseSubgraph sg = build_commonsense_subgraph(labels, graph, *k.transe, options);

  json concepts = json::array();
  for (std::size_t id : sg.concepts) concepts.push_back(graph.concepts[id]);
  json edges = json::array();
  json paths = json::array();
  for (const auto& [key, retained] : sg.provenance) {
    edges.push_back({graph.concepts[sg.concepts[key.first]], graph.concepts[sg.concepts[key.second]]});
    for (const auto& p : retained) paths.push_back(path_json(p, graph, *k.transe));
  }
  json doc = {{"labels", labels},
              {"max_edges", options.max_edges},
              {"threshold", options.threshold},
              {"concepts", std::move(concepts)},
              {"adjacency", std::move(edges)},
              {"paths", std::move(paths)},
              {"unmatched_labels", sg.unmatched_labels}};
  const std::string text = doc.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
    out << "wrote " << out_path << ": " << doc["paths"].size() << " paths over " << sg.size() << " concepts\n";
  }
  return 0;
}

int sample_oneshot(const Common& c, const std::string& out_path, std::ostream& out) {
  ExperimentConfig config = load_with_seed(c);
  config.model.use_commonsense_knowledge = false;
  config.model.use_relational_knowledge = false;
  const Experiment ex = build_experiment(config);
  write_triplet_corpus(fs::path(out_path), ex.dataset.images);
  out << "kept " << ex.dataset.images.size() << " of " << ex.corpus_size << " images, "
      << ex.dataset.triplet_registry.size() << " triplet keys\n";
  return 0;
}

/// The first line where two config texts differ, for resume mismatch messages.
std::string first_difference(const std::string& a, const std::string& b) {
  std::istringstream sa(a), sb(b);
  std::string la, lb;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(sa, la));
    const bool gb = static_cast<bool>(std::getline(sb, lb));
    if (!ga && !gb) return "";
    if (!ga || !gb || la != lb) return "'" + (gb ? lb : std::string("<end>")) + "' vs checkpoint '" +
                                       (ga ? la : std::string("<end>")) + "'";
  }
}

struct TrainArgs {
  std::string out;
  std::string resume;
  std::optional<std::size_t> stop_after;
  bool quiet = false;
};

int train(const Common& c, const TrainArgs& a, std::ostream& out) {
  ExperimentConfig config;
  std::optional<Checkpoint> ckpt;
  if (!a.resume.empty()) {
    ckpt = load_checkpoint(a.resume);
    config = parse_config_text(ckpt->config_text);
    if (!c.config.empty()) {
      const ExperimentConfig given = load_with_seed(c);
      const std::string diff = first_difference(ckpt->config_text, given.to_text());
      if (!diff.empty()) throw ConfigError("--resume: config differs from the checkpoint: " + diff);
    }
  } else {
    if (c.config.empty()) throw UsageError("train: --config is required unless --resume is given");
    config = load_with_seed(c);
  }
  const Experiment ex = build_experiment(config);
  SceneGraphModel model(ex.config.model, ex.vocab, ex.freq, ex.knowledge);
  TrainState state{0, Rng(config.seed, "train")};
  if (ckpt) {
    restore_parameters(model, *ckpt);
    state.epoch = ckpt->epoch;
    state.rng.deserialize(ckpt->rng_state);
  }
  const auto training = make_training_images(ex.dataset, ex.features);
  const auto max_epochs = static_cast<std::size_t>(config.optimizer.max_epochs);
  const std::size_t last = a.stop_after ? std::min(*a.stop_after, max_epochs) : max_epochs;
  if (state.epoch > last) {
    throw StateError("checkpoint is at epoch " + std::to_string(state.epoch) + ", past the requested stop " +
                     std::to_string(last));
  }
  train_epochs(model, training, config.optimizer, state, last, [&](std::size_t epoch, double loss) {
    if (!a.quiet) out << "epoch " << epoch << "/" << max_epochs << " loss " << fixed(loss, 6) << "\n";
  });
  save_checkpoint(a.out, make_checkpoint(config, model, state));
  out << "wrote " << a.out << " at epoch " << state.epoch << " (" << training.size() << " training images)\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> setups;
  std::string split = "eval";
  std::string out;
  bool baseline = false;
};

int eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  std::vector<Setup> setups;
  for (const auto& s : a.setups) setups.push_back(parse_setup(s));
  if (a.split != "eval" && a.split != "train") throw UsageError("--split: expected eval or train");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  ExperimentConfig config = parse_config_text(ckpt.config_text);
  if (!c.config.empty()) {
    const ExperimentConfig given = load_with_seed(c);
    config.eval = given.eval;
    config.paths.eval_annotations = given.paths.eval_annotations;
    config.data.heldout_images = given.data.heldout_images;
  }
  if (!setups.empty()) config.eval.setups = setups;
  const Experiment ex = build_experiment(config);
  SceneGraphModel model(ex.config.model, ex.vocab, ex.freq, ex.knowledge);
  restore_parameters(model, ckpt);
  const auto& images = a.split == "train" ? ex.dataset.images : ex.eval_images;
  const MetricsTable table = evaluate(model, images, ex.features, config.eval, a.baseline);
  out << table.to_text();
  if (!a.out.empty()) write_text(a.out, table.to_json());
  return 0;
}

int gradcheck(const Common& c, std::size_t max_images, double epsilon, std::ostream& out) {
  const ExperimentConfig config = load_with_seed(c);
  const Experiment ex = build_experiment(config);
  SceneGraphModel model(ex.config.model, ex.vocab, ex.freq, ex.knowledge);
  const auto training = make_training_images(ex.dataset, ex.features);
  std::vector<const TrainingImage*> batch;
  for (const auto& img : training) {
    if (batch.size() < max_images && !img.supervision.empty()) batch.push_back(&img);
  }
  if (batch.empty()) throw ValidationError("gradcheck: no training image carries supervision");
  std::vector<std::string> names;
  std::vector<Tensor*> params;
  std::size_t count = 0;
  for (auto& [name, t] : model.params().entries()) {
    names.push_back(name);
    params.push_back(&t);
    count += t.size();
  }
  const ScalarFn loss = [&](ad::Tape& tape) {
    Rng rng(config.seed, "gradcheck");
    const auto l = model.batch_loss(tape, batch, rng);
    if (!l) throw ValidationError("gradcheck: the batch produced no loss");
    return *l;
  };
  const GradientCheckReport r = finite_difference_report(loss, params, epsilon);
  out << "max relative error " << fixed(r.max_relative_error, 3) << " over " << count << " parameters ("
      << batch.size() << " images, epsilon " << epsilon << ")\n";
  if (r.max_relative_error > 0.0) {
    out << "worst coordinate " << names[r.param] << "[" << r.coordinate << "]: analytic " << fixed(r.analytic, 6)
        << ", numeric " << fixed(r.numeric, 6) << ", loss " << fixed(r.loss, 6) << "\n";
  }
  return r.max_relative_error < 1e-4 ? 0 : 1;
}

}  // namespace

std::string usage_text() {
  std::ostringstream s;
  s << "usage: relkit <command> [options]\n\ncommands:\n"
    << "  build-kg        --config FILE --out KG.json\n"
    << "  mine-paths      --config FILE --labels a,b,... [--max-edges 4] [--threshold 0.15] [--out FILE]\n"
    << "  sample-oneshot  --config FILE --out SPLIT.jsonl\n"
    << "  train           --config FILE --out CKPT [--stop-after EPOCH] [--resume CKPT] [--quiet]\n"
    << "  eval            --checkpoint CKPT [--config FILE] [--setup PredCls|SGCls] [--split eval|train]\n"
    << "                  [--baseline] [--out METRICS.json]\n"
    << "  gradcheck       --config FILE [--images 1] [--epsilon 1e-5]\n\n"
    << "--seed overrides RELKIT_SEED, which overrides the config seed.\n";
  return s.str();
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || std::find(std::begin(kCommands), std::end(kCommands), args.front()) == std::end(kCommands)) {
    if (!args.empty() && (args.front() == "--help" || args.front() == "-h")) {
      out << usage_text();
      return 0;
    }
    err << (args.empty() ? "relkit: no command given\n" : "relkit: unknown command '" + args.front() + "'\n")
        << usage_text();
    return 2;
  }
  const std::string command = args.front();
  CLI::App app("relkit " + command, "relkit " + command);
  Common common;
  std::string out_path;
  std::function<int()> action;

  TrainArgs targs;
  EvalArgs eargs;
  std::string labels;
  MiningOptions mining;
  std::size_t images = 1;
  double epsilon = 1e-5;

  if (command == "build-kg") {
    add_common(app, common);
    app.add_option("--out", out_path, "output JSON")->required();
    action = [&] { return build_kg(common, out_path, out); };
  } else if (command == "mine-paths") {
    add_common(app, common);
    app.add_option("--labels", labels, "comma-separated instance labels")->required();
    app.add_option("--max-edges", mining.max_edges, "longest path in hops");
    app.add_option("--threshold", mining.threshold, "minimum path score");
    app.add_option("--out", out_path, "output JSON (stdout when omitted)");
    action = [&] { return mine_paths(common, labels, mining, out_path, out); };
  } else if (command == "sample-oneshot") {
    add_common(app, common);
    app.add_option("--out", out_path, "output JSON Lines")->required();
    action = [&] { return sample_oneshot(common, out_path, out); };
  } else if (command == "train") {
    add_common(app, common, false);
    app.add_option("--out", targs.out, "checkpoint to write")->required();
    app.add_option("--resume", targs.resume, "checkpoint to continue from");
    app.add_option("--stop-after", targs.stop_after, "stop after this epoch");
    app.add_flag("--quiet", targs.quiet, "no per-epoch lines");
    action = [&] { return train(common, targs, out); };
  } else if (command == "eval") {
    add_common(app, common, false);
    app.add_option("--checkpoint", eargs.checkpoint, "trained checkpoint")->required();
    app.add_option("--setup", eargs.setups, "PredCls or SGCls (repeatable)");
    app.add_option("--split", eargs.split, "eval or train");
    app.add_option("--out", eargs.out, "metrics JSON");
    app.add_flag("--baseline", eargs.baseline, "add the frequency-only baseline row");
    action = [&] { return eval(common, eargs, out); };
  } else {
    add_common(app, common);
    app.add_option("--images", images, "training images in the checked batch");
    app.add_option("--epsilon", epsilon, "finite-difference step");
    action = [&] { return gradcheck(common, images, epsilon, out); };
  }

  std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "relkit " << command << ": " << e.what() << "\n" << app.help();
    return 2;
  }
  try {
    return action();
  } catch (const UsageError& e) {
    err << "relkit " << command << ": " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "relkit " << command << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace relkit
