#include "app/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace app {

using nlohmann::json;
namespace enc = compose::enc;
namespace match = compose::match;

std::string to_string(enc::DecorrelationKind kind) {
  switch (kind) {
    case enc::DecorrelationKind::none: return "none";
    case enc::DecorrelationKind::cross_correlation: return "cross_correlation";
    case enc::DecorrelationKind::vicreg_variance: return "vicreg_variance";
    case enc::DecorrelationKind::spectral: return "spectral";
  }
  return "unknown";
}

enc::DecorrelationKind decorrelation_from_string(const std::string& name) {
  for (auto k : {enc::DecorrelationKind::none, enc::DecorrelationKind::cross_correlation,
                 enc::DecorrelationKind::vicreg_variance, enc::DecorrelationKind::spectral})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown decorrelation kind '" + name + "'");
}

namespace {

// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
        throw ConfigError(field(key) + ": expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read_u64(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + ": expected an array of numbers");
      out.clear();
      for (const auto& x : *v) {
        if (!x.is_number()) throw ConfigError(field(key) + ": expected an array of numbers");
        out.push_back(x.get<double>());
      }
    }
  }
  void read_raw(const char* key, json& out) {
    if (const json* v = take(key)) out = *v;
  }
  // Sub-object, or nullptr when absent.
  const json* child(const char* key) { return take(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(field(key) + ": unknown key");
  }

 private:
  const json* take(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class F>
void with_section(Section& parent, const char* key, F&& body) {
  if (const json* j = parent.child(key)) {
    Section s(*j, parent.field(key));
    body(s);
    s.finish();
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.read_u64("seed", c.seed);
  root.read("output_dir", c.output_dir);
  root.read("workers", c.workers);
  with_section(root, "dimensions", [&](Section& s) {
    s.read("D", c.dimensions.d);
    s.read("K", c.dimensions.k);
    s.read("h", c.dimensions.h);
    s.read("kappa", c.dimensions.kappa);
  });
  with_section(root, "loss", [&](Section& s) {
    std::string kind = to_string(c.loss.decorrelation);
    s.read("decorrelation", kind);
    try {
      c.loss.decorrelation = decorrelation_from_string(kind);
    } catch (const ConfigError& e) {
      throw ConfigError(s.field("decorrelation") + ": " + e.what());
    }
    s.read("lambda_d", c.loss.lambda_d);
    s.read("gamma_hinge", c.loss.gamma_hinge);
    s.read("std_floor", c.loss.std_floor);
    s.read("ct_weight", c.loss.ct_weight);
    s.read("prototype_stop_gradient", c.loss.prototype_stop_gradient);
  });
  with_section(root, "matcher", [&](Section& s) {
    std::string kind = match::to_string(c.matcher.kind);
    s.read("kind", kind);
    try {
      c.matcher.kind = match::matcher_kind_from_string(kind);
    } catch (const compose::Error& e) {
      throw ConfigError(s.field("kind") + ": " + e.what());
    }
    s.read("beta", c.matcher.beta);
    s.read("epsilon", c.matcher.epsilon);
    s.read("max_iters", c.matcher.max_iters);
    s.read("tol", c.matcher.tol);
    s.read("gamma_blend", c.matcher.gamma_blend);
  });
  with_section(root, "training", [&](Section& s) {
    auto& t = c.training;
    s.read("lr", t.lr);
    s.read("beta1", t.beta1);
    s.read("beta2", t.beta2);
    s.read("adam_eps", t.adam_eps);
    s.read("tau_init", t.tau_init);
    s.read("steps_per_session", t.steps_per_session);
    s.read("way", t.way);
    s.read("shot", t.shot);
    s.read("queries", t.queries);
    s.read("replay", t.replay);
    s.read("replay_per_class", t.replay_per_class);
    s.read("log_eval_episodes", t.log_eval_episodes);
  });
  with_section(root, "benchmark", [&](Section& s) {
    auto& b = c.benchmark;
    s.read("grid_rows", b.grid_rows);
    s.read("grid_cols", b.grid_cols);
    s.read("patches_per_cell", b.patches_per_cell);
    s.read("n_concepts", b.n_concepts);
    s.read("n_train_concepts", b.n_train_concepts);
    s.read("n_sessions", b.n_sessions);
    s.read("classes_per_session", b.classes_per_session);
    s.read("n_pro_classes", b.n_pro_classes);
    s.read("spread", b.spread);
    s.read("noise", b.noise);
    s.read("max_overlap", b.max_overlap);
    s.read("sub_spread_factor", b.sub_spread_factor);
    s.read("attn_sharpness", b.attn_sharpness);
    s.read("slot_prior_std", b.slot_prior_std);
    s.read("slot_iterations", b.slot_iterations);
    s.read("include_non", b.include_non);
    s.read("include_sub", b.include_sub);
  });
  with_section(root, "evaluation", [&](Section& s) {
    s.read("episodes", c.evaluation.episodes);
    s.read("way", c.evaluation.way);
    s.read("shot", c.evaluation.shot);
    s.read("queries", c.evaluation.queries);
  });
  with_section(root, "gradlab", [&](Section& s) {
    auto& g = c.gradlab;
    s.read("configurations", g.configurations);
    s.read("alignment_episodes", g.alignment_episodes);
    s.read("sinkhorn_matrices", g.sinkhorn_matrices);
    s.read("epsilons", g.epsilons);
    s.read("floor_batches", g.floor_batches);
    s.read("rotation_trials", g.rotation_trials);
    s.read("rebase_batches", g.rebase_batches);
    s.read("encoder_fd_episodes", g.encoder_fd_episodes);
  });
  with_section(root, "sweep", [&](Section& s) {
    s.read("parameter", c.sweep.parameter);
    s.read_raw("values", c.sweep.values);
  });
  with_section(root, "purity", [&](Section& s) { s.read("images", c.purity.images); });
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["dimensions"] = {{"D", c.dimensions.d}, {"K", c.dimensions.k}, {"h", c.dimensions.h}, {"kappa", c.dimensions.kappa}};
  j["loss"] = {{"decorrelation", to_string(c.loss.decorrelation)},
               {"lambda_d", c.loss.lambda_d},
               {"gamma_hinge", c.loss.gamma_hinge},
               {"std_floor", c.loss.std_floor},
               {"ct_weight", c.loss.ct_weight},
               {"prototype_stop_gradient", c.loss.prototype_stop_gradient}};
  j["matcher"] = {{"kind", match::to_string(c.matcher.kind)}, {"beta", c.matcher.beta},
                  {"epsilon", c.matcher.epsilon},           {"max_iters", c.matcher.max_iters},
                  {"tol", c.matcher.tol},                   {"gamma_blend", c.matcher.gamma_blend}};
  const auto& t = c.training;
  j["training"] = {{"lr", t.lr},
                   {"beta1", t.beta1},
                   {"beta2", t.beta2},
                   {"adam_eps", t.adam_eps},
                   {"tau_init", t.tau_init},
                   {"steps_per_session", t.steps_per_session},
                   {"way", t.way},
                   {"shot", t.shot},
                   {"queries", t.queries},
                   {"replay", t.replay},
                   {"replay_per_class", t.replay_per_class},
                   {"log_eval_episodes", t.log_eval_episodes}};
  const auto& b = c.benchmark;
  j["benchmark"] = {{"grid_rows", b.grid_rows},
                    {"grid_cols", b.grid_cols},
                    {"patches_per_cell", b.patches_per_cell},
                    {"n_concepts", b.n_concepts},
                    {"n_train_concepts", b.n_train_concepts},
                    {"n_sessions", b.n_sessions},
                    {"classes_per_session", b.classes_per_session},
                    {"n_pro_classes", b.n_pro_classes},
                    {"spread", b.spread},
                    {"noise", b.noise},
                    {"max_overlap", b.max_overlap},
                    {"sub_spread_factor", b.sub_spread_factor},
                    {"attn_sharpness", b.attn_sharpness},
                    {"slot_prior_std", b.slot_prior_std},
                    {"slot_iterations", b.slot_iterations},
                    {"include_non", b.include_non},
                    {"include_sub", b.include_sub}};
  j["evaluation"] = {{"episodes", c.evaluation.episodes},
                     {"way", c.evaluation.way},
                     {"shot", c.evaluation.shot},
                     {"queries", c.evaluation.queries}};
  const auto& g = c.gradlab;
  j["gradlab"] = {{"configurations", g.configurations},
                  {"alignment_episodes", g.alignment_episodes},
                  {"sinkhorn_matrices", g.sinkhorn_matrices},
                  {"epsilons", g.epsilons},
                  {"floor_batches", g.floor_batches},
                  {"rotation_trials", g.rotation_trials},
                  {"rebase_batches", g.rebase_batches},
                  {"encoder_fd_episodes", g.encoder_fd_episodes}};
  j["sweep"] = {{"parameter", c.sweep.parameter}, {"values", c.sweep.values}};
  j["purity"] = {{"images", c.purity.images}};
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  // Worker count and output location do not change any result.
  json j = config_to_json(cfg);
  j.erase("workers");
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(dimensions.d >= 2, "dimensions.D must be >= 2");
  need(dimensions.k >= 2, "dimensions.K must be >= 2");
  need(dimensions.h >= 1, "dimensions.h must be >= 1");
  need(dimensions.kappa >= 1, "dimensions.kappa must be >= 1");
  need(workers >= 1, "workers must be >= 1");
  need(loss.lambda_d >= 0.0, "loss.lambda_d must be >= 0");
  need(loss.gamma_hinge > 0.0, "loss.gamma_hinge must be > 0");
  need(loss.std_floor > 0.0, "loss.std_floor must be > 0");
  need(loss.ct_weight >= 0.0 && loss.ct_weight <= 1.0, "loss.ct_weight must lie in [0, 1]");
  need(matcher.beta >= 0.0, "matcher.beta must be >= 0");
  need(matcher.epsilon > 0.0, "matcher.epsilon must be > 0");
  need(matcher.max_iters >= 1, "matcher.max_iters must be >= 1");
  need(matcher.tol > 0.0, "matcher.tol must be > 0");
  need(matcher.gamma_blend >= 0.0 && matcher.gamma_blend <= 1.0, "matcher.gamma_blend must lie in [0, 1]");
  need(training.lr >= 0.0, "training.lr must be >= 0");
  need(training.beta1 >= 0.0 && training.beta1 < 1.0, "training.beta1 must lie in [0, 1)");
  need(training.beta2 >= 0.0 && training.beta2 < 1.0, "training.beta2 must lie in [0, 1)");
  need(training.adam_eps > 0.0, "training.adam_eps must be > 0");
  need(training.tau_init > 0.0, "training.tau_init must be > 0");
  need(training.way >= 2, "training.way must be >= 2");
  need(training.shot >= 1 && training.queries >= 1, "training.shot and training.queries must be >= 1");
  need(!training.replay || training.replay_per_class >= training.shot + training.queries,
       "training.replay_per_class must be >= training.shot + training.queries");
  need(evaluation.episodes >= 1, "evaluation.episodes must be >= 1");
  need(evaluation.way >= 1 && evaluation.shot >= 1 && evaluation.queries >= 1,
       "evaluation.way, shot and queries must be >= 1");
  need(!gradlab.epsilons.empty(), "gradlab.epsilons must not be empty");
  for (double e : gradlab.epsilons) need(e > 0.0, "gradlab.epsilons must be > 0");
  need(sweep.values.is_array(), "sweep.values must be an array");
  need(purity.images >= 1, "purity.images must be >= 1");
  try {
    geometry().validate();
  } catch (const compose::Error& e) {
    throw ConfigError(std::string("benchmark: ") + e.what());
  }
}

compose::bench::GeometryConfig ExperimentConfig::geometry() const {
  compose::bench::GeometryConfig g;
  g.dim = dimensions.d;
  g.num_slots = dimensions.k;
  g.grid_rows = benchmark.grid_rows;
  g.grid_cols = benchmark.grid_cols;
  g.patches_per_cell = benchmark.patches_per_cell;
  g.n_concepts = benchmark.n_concepts;
  g.n_train_concepts = benchmark.n_train_concepts;
  g.n_sessions = benchmark.n_sessions;
  g.classes_per_session = benchmark.classes_per_session;
  g.n_pro_classes = benchmark.n_pro_classes;
  g.spread = benchmark.spread;
  g.noise = benchmark.noise;
  g.max_overlap = benchmark.max_overlap;
  g.sub_spread_factor = benchmark.sub_spread_factor;
  g.attn_sharpness = benchmark.attn_sharpness;
  g.slot_prior_std = benchmark.slot_prior_std;
  g.slot_iterations = benchmark.slot_iterations;
  g.include_non = benchmark.include_non;
  g.include_sub = benchmark.include_sub;
  return g;
}

compose::bench::TrainConfig ExperimentConfig::train_config() const {
  compose::bench::TrainConfig t;
  t.hidden = dimensions.h;
  t.tau_init = training.tau_init;
  t.adam = {training.lr, training.beta1, training.beta2, training.adam_eps};
  t.objective.decor = {loss.decorrelation, loss.lambda_d, loss.gamma_hinge, loss.std_floor};
  t.objective.ct_weight = loss.ct_weight;
  t.objective.kappa = dimensions.kappa;
  t.objective.prototype_stop_gradient = loss.prototype_stop_gradient;
  t.steps_per_session = training.steps_per_session;
  t.way = training.way;
  t.shot = training.shot;
  t.queries = training.queries;
  t.replay = training.replay;
  t.replay_per_class = training.replay_per_class;
  t.log_eval_episodes = training.log_eval_episodes;
  return t;
}

match::MatcherConfig ExperimentConfig::matcher_config() const {
  match::MatcherConfig m;
  m.kind = matcher.kind;
  m.beta = matcher.beta;
  m.epsilon = matcher.epsilon;
  m.max_iters = matcher.max_iters;
  m.tol = matcher.tol;
  m.kappa = dimensions.kappa;
  m.gamma_blend = matcher.gamma_blend;
  return m;
}

compose::bench::EvalSpec ExperimentConfig::eval_spec() const {
  return {evaluation.episodes, evaluation.way, evaluation.shot, evaluation.queries};
}

}  // namespace app
