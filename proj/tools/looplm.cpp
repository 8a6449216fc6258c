// Single entry point: dataset generation, two-stage training, evaluation,
// generation with exit/KV policies, reachability verification, and
// scaling-law fitting. Exit codes: 0 success, 1 runtime failure, 2 usage or
// config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "loop/checkpoint.hpp"
#include "loop/config.hpp"
#include "loop/infer.hpp"
#include "loop/model.hpp"
#include "loop/reach.hpp"
#include "loop/rng.hpp"
#include "loop/scaling.hpp"
#include "loop/tasks.hpp"
#include "loop/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace loop;

namespace {

struct RunArgs {
  std::string config_path;
  std::string out_dir;
  std::string init_from;
  std::vector<std::string> overrides;
  int64_t seed = -1;  // -1: take the config's seed
};

cfg::Config resolve_config(const RunArgs& args, bool require_seed = true) {
  cfg::Config c = args.config_path.empty()
                      ? cfg::Config()
                      : cfg::Config::from_file(args.config_path);
  for (const auto& ov : args.overrides) c.apply_override(ov);
  if (args.seed >= 0) c.set("seed", std::to_string(args.seed));
  if (require_seed && !c.has("seed"))
    throw num::UsageError("seed is mandatory: pass --seed or a seed key");
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw num::UsageError("cannot write " + path.string());
  f << text;
}

fs::path prepare_out(const RunArgs& args, const cfg::Config& c) {
  if (args.out_dir.empty()) throw num::UsageError("--out is required");
  fs::path dir(args.out_dir);
  fs::create_directories(dir);
  write_text(dir / "resolved.cfg", c.resolved());
  return dir;
}

json record_to_json(const tasks::Record& r) {
  json j;
  j["tokens"] = r.tokens;
  j["targets"] = r.targets;
  j["spans"] = r.spans;
  j["answer_pos"] = r.answer_pos;
  return j;
}

tasks::Record record_from_json(const json& j) {
  tasks::Record r;
  r.tokens = j.at("tokens").get<std::vector<int>>();
  r.targets = j.at("targets").get<std::vector<int>>();
  for (const auto& s : j.at("spans"))
    r.spans.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
  r.answer_pos = j.at("answer_pos").get<int>();
  if (r.targets.size() != r.tokens.size())
    throw num::UsageError("record: targets/tokens length mismatch");
  return r;
}

void write_jsonl(const fs::path& path, const std::vector<tasks::Record>& recs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw num::UsageError("cannot write " + path.string());
  for (const auto& r : recs) f << record_to_json(r).dump() << "\n";
}

std::vector<tasks::Record> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw num::UsageError("cannot open dataset: " + path);
  std::vector<tasks::Record> recs;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    recs.push_back(record_from_json(json::parse(line)));
  }
  if (recs.empty()) throw num::UsageError("empty dataset: " + path);
  return recs;
}

std::vector<std::string> vocab_words(const tasks::Vocab& v) {
  std::vector<std::string> words;
  for (int i = 0; i < v.size(); ++i) words.push_back(v.word(i));
  return words;
}

// sidecar next to a dataset file, if present
json try_sidecar(const std::string& data_path) {
  fs::path side = fs::path(data_path).parent_path() / "dataset_spec.json";
  if (!fs::exists(side)) return json();
  std::ifstream f(side);
  return json::parse(f);
}

std::string peek_dtype(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw num::UsageError("cannot open checkpoint: " + path);
  char magic[8];
  uint64_t hlen = 0;
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f || std::string(magic, 8) != std::string(ckpt::kMagic, 8))
    throw num::UsageError("not a checkpoint file: " + path);
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  return json::parse(header).at("config").at("dtype").get<std::string>();
}

// ---------------------------------------------------------------------------
// tasks-gen
// ---------------------------------------------------------------------------

int cmd_tasks_gen(const RunArgs& args) {
  auto c = resolve_config(args);
  auto dir = prepare_out(args, c);
  std::string task = c.get_str("task");
  uint64_t seed = c.get_u64("seed");
  json side;
  side["task"] = task;
  side["seed"] = seed;
  if (task == "mano") {
    tasks::ManoSpec spec;
    spec.max_len = static_cast<int>(c.get_int("mano.max_len", 4));
    spec.seed = seed;
    int count = static_cast<int>(c.get_int("mano.count", 1000));
    auto corpus = tasks::gen_mano(spec, count);
    write_jsonl(dir / "dataset.jsonl", corpus.records);
    side["max_len"] = spec.max_len;
    side["count"] = count;
    side["vocab"] = vocab_words(corpus.vocab);
    side["files"] = {{"dataset", "dataset.jsonl"}};
  } else if (task == "bios") {
    tasks::BioSpec spec;
    spec.n_people = static_cast<int>(c.get_int("bios.n_people", 1000));
    spec.seed = seed;
    auto corpus = tasks::gen_bios(spec);
    write_jsonl(dir / "dataset.jsonl", corpus.bios);
    side["n_people"] = spec.n_people;
    side["vocab"] = vocab_words(corpus.vocab);
    side["files"] = {{"dataset", "dataset.jsonl"}};
  } else if (task == "multihop") {
    tasks::MultiHopSpec spec;
    spec.layers = static_cast<int>(c.get_int("multihop.layers", 5));
    spec.per_layer = static_cast<int>(c.get_int("multihop.per_layer", 20));
    spec.out_degree = static_cast<int>(c.get_int("multihop.out_degree", 4));
    spec.relation_pool =
        static_cast<int>(c.get_int("multihop.relation_pool", 20));
    spec.train_fraction = c.get_double("multihop.train_fraction", 0.8);
    spec.seed = seed;
    auto d = tasks::gen_multihop(spec);
    write_jsonl(dir / "facts.jsonl", d.facts);
    write_jsonl(dir / "train.jsonl", d.train_qa);
    write_jsonl(dir / "test.jsonl", d.test_qa);
    side["layers"] = spec.layers;
    side["per_layer"] = spec.per_layer;
    side["out_degree"] = spec.out_degree;
    side["question_pool_size"] = d.question_pool_size();
    side["vocab"] = vocab_words(d.vocab);
    side["files"] = {{"facts", "facts.jsonl"},
                     {"train", "train.jsonl"},
                     {"test", "test.jsonl"}};
  } else {
    throw num::UsageError("unknown task: " + task);
  }
  write_text(dir / "dataset_spec.json", side.dump(2) + "\n");
  std::cout << "wrote " << (dir / "dataset_spec.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

model::ModelConfig model_cfg_from(const cfg::Config& c, int vocab_fallback) {
  model::ModelConfig m;
  m.vocab_size = static_cast<int>(c.get_int("model.vocab_size", vocab_fallback));
  m.d_model = static_cast<int>(c.get_int("model.d_model", 64));
  m.n_layers = static_cast<int>(c.get_int("model.n_layers", 2));
  m.n_heads = static_cast<int>(c.get_int("model.n_heads", 4));
  m.ffn_hidden = static_cast<int>(c.get_int("model.ffn_hidden", 128));
  m.t_max = static_cast<int>(c.get_int("model.t_max", 4));
  m.rope_base = c.get_double("model.rope_base", 10000.0);
  m.dtype = c.get_str("model.dtype", "float32");
  m.gate_pooling =
      model::gate_pooling_from_string(c.get_str("model.gate_pooling", "mean"));
  m.tie_lm_head = c.get_bool("model.tie_lm_head", false);
  m.gate_detach = c.get_bool("model.gate_detach", false);
  m.validate();
  return m;
}

train::OptimizerConfig optim_cfg_from(const cfg::Config& c, int steps) {
  train::OptimizerConfig o;
  o.lr = c.get_double("optim.lr", 3e-3);
  o.lr_final = c.get_double("optim.lr_final", o.lr / 10);
  std::string sched = c.get_str("optim.schedule", "constant");
  if (sched == "constant") {
    o.schedule = train::LrSchedule::kConstant;
  } else if (sched == "cosine") {
    o.schedule = train::LrSchedule::kCosine;
  } else {
    throw num::UsageError("unknown optim.schedule: " + sched);
  }
  o.beta1 = c.get_double("optim.beta1", 0.9);
  o.beta2 = c.get_double("optim.beta2", 0.95);
  o.eps = c.get_double("optim.eps", 1e-8);
  o.weight_decay = c.get_double("optim.weight_decay", 0.1);
  o.grad_clip_norm = c.get_double("optim.grad_clip_norm", 1.0);
  o.steps = steps;
  return o;
}

template <class T>
int run_train(const RunArgs& args, const cfg::Config& c, const fs::path& dir,
              const std::vector<tasks::Record>& data, int vocab_fallback) {
  int stage = static_cast<int>(c.get_int("train.stage", 1));
  if (stage != 1 && stage != 2)
    throw num::UsageError("train.stage must be 1 or 2");
  if (stage == 2 && args.init_from.empty())
    throw num::UsageError("stage 2 requires --init-from checkpoint");
  uint64_t seed = c.get_u64("seed");

  model::LoopModel<T> m = [&] {
    if (!args.init_from.empty()) return ckpt::load_model<T>(args.init_from);
    Rng rng(seed, "init");
    return model::LoopModel<T>::init(model_cfg_from(c, vocab_fallback), rng);
  }();

  train::TrainLoopConfig lcfg;
  lcfg.steps = static_cast<int>(c.get_int("train.steps", 100));
  lcfg.batch_rows = static_cast<int>(c.get_int("train.batch_rows", 8));
  lcfg.row_len = static_cast<int>(c.get_int("train.row_len", 32));
  lcfg.seed = seed;
  int start_step = static_cast<int>(c.get_int("train.start_step", 0));
  auto ocfg = optim_cfg_from(c, lcfg.steps);

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  metrics << train::metrics_header(m.cfg.t_max) << "\n";
  auto on_step = [&](const train::MetricsRow& r) {
    metrics << train::metrics_line(r) << "\n";
  };

  train::StageIConfig s1;
  s1.beta = c.get_double("stage1.beta", 0.1);
  std::string prior = c.get_str("stage1.prior", "uniform");
  if (prior == "uniform") {
    s1.prior = train::PriorKind::kUniform;
  } else if (prior == "geometric") {
    s1.prior = train::PriorKind::kGeometric;
  } else {
    throw num::UsageError("unknown stage1.prior: " + prior);
  }
  s1.geometric_eta = c.get_double("stage1.eta", 0.5);
  train::StageIIConfig s2;
  s2.slope_k = c.get_double("stage2.k", 50.0);
  s2.threshold_gamma = c.get_double("stage2.gamma", 0.005);

  try {
    if (stage == 1)
      train::train_stage1(m, data, s1, ocfg, lcfg, on_step, start_step);
    else
      train::train_stage2(m, data, s2, ocfg, lcfg, on_step);
  } catch (const num::UsageError& e) {
    // non-finite loss/grad aborts the step before any parameter update, so
    // the model still holds the last good state
    ckpt::save_model(m, (dir / "checkpoint_lastgood.bin").string());
    std::cerr << "training aborted: " << e.what() << "\n";
    return 1;
  }
  ckpt::save_model(m, (dir / "checkpoint.bin").string());
  std::cout << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return 0;
}

int cmd_train(const RunArgs& args) {
  auto c = resolve_config(args);
  auto dir = prepare_out(args, c);
  auto data = read_jsonl(c.get_str("data.path"));
  int vocab_fallback = 0;
  auto side = try_sidecar(c.get_str("data.path"));
  if (side.contains("vocab"))
    vocab_fallback = static_cast<int>(side["vocab"].size());
  std::string dtype = args.init_from.empty()
                          ? c.get_str("model.dtype", "float32")
                          : peek_dtype(args.init_from);
  if (dtype == "float64")
    return run_train<double>(args, c, dir, data, vocab_fallback);
  return run_train<float>(args, c, dir, data, vocab_fallback);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <class T>
json eval_suite(const RunArgs& args, const cfg::Config& c, const fs::path& dir,
                model::LoopModel<T>* m) {
  std::string suite = c.get_str("suite");
  json rep;
  rep["suite"] = suite;
  if (suite == "mano") {
    if (!m) throw num::UsageError("mano suite requires --init-from");
    tasks::ManoSpec spec;
    spec.max_len = static_cast<int>(c.get_int("mano.max_len", 4));
    int count = static_cast<int>(c.get_int("eval.count", 200));
    uint64_t seed = c.get_u64("seed");
    std::vector<double> acc;
    for (int t = 1; t <= m->cfg.t_max; ++t)
      acc.push_back(tasks::eval_mano(*m, spec, count, t, seed).accuracy);
    rep["count"] = count;
    rep["per_step_accuracy"] = acc;
  } else if (suite == "multihop" || suite == "exit_sweep") {
    if (!m) throw num::UsageError(suite + " suite requires --init-from");
    auto recs = read_jsonl(c.get_str("data.path"));
    for (const auto& r : recs)
      if (r.answer_pos < 1)
        throw num::UsageError("suite needs records with an answer position");
    std::vector<double> qs;
    if (suite == "exit_sweep") {
      std::istringstream ss(c.get_str("eval.qs", "0.3,0.5,0.7,0.9"));
      std::string tok;
      while (std::getline(ss, tok, ',')) qs.push_back(std::stod(tok));
    }
    auto pts = tasks::exit_sweep(*m, recs, qs);
    json rows = json::array();
    std::ostringstream csv;
    csv << "policy,threshold,mean_exit_round,accuracy\n";
    std::vector<double> per_step;
    for (const auto& p : pts) {
      rows.push_back({{"policy", p.policy},
                      {"threshold", p.threshold},
                      {"mean_exit_round", p.mean_exit},
                      {"accuracy", p.accuracy}});
      csv << p.policy << ',' << p.threshold << ',' << p.mean_exit << ','
          << p.accuracy << "\n";
      if (p.policy == "static") per_step.push_back(p.accuracy);
    }
    rep["count"] = recs.size();
    rep["points"] = rows;
    rep["per_step_accuracy"] = per_step;
    if (suite == "exit_sweep")
      write_text(dir / "exit_sweep.csv", csv.str());
  } else if (suite == "capacity") {
    auto recs = read_jsonl(c.get_str("data.path"));
    std::string scorer_name = c.get_str("capacity.scorer", "model");
    int64_t params = c.get_int("capacity.param_count", 0);
    tasks::TokenScorer scorer;
    if (scorer_name == "model") {
      if (!m) throw num::UsageError("capacity model scorer needs --init-from");
      scorer = tasks::model_scorer(*m);
      if (params == 0) params = m->param_count();
    } else if (scorer_name == "memorizer") {
      scorer = tasks::memorizer_scorer();
    } else if (scorer_name == "uniform") {
      auto side = try_sidecar(c.get_str("data.path"));
      int vs = side.contains("vocab") ? static_cast<int>(side["vocab"].size())
                                      : static_cast<int>(c.get_int("model.vocab_size"));
      scorer = tasks::uniform_scorer(vs);
    } else {
      throw num::UsageError("unknown capacity.scorer: " + scorer_name);
    }
    if (params == 0) params = 1;
    auto cap = tasks::capacity_bits(scorer, recs, params);
    rep["scorer"] = scorer_name;
    rep["param_count"] = params;
    rep["p1"] = cap.p1;
    rep["p2"] = cap.p2;
    rep["name_bits_per_person"] = cap.name_bits_per_person;
    rep["attr_bits_per_person"] = cap.attr_bits_per_person;
    rep["bits_learned"] = cap.bits_learned;
    rep["bits_per_parameter"] = cap.bits_per_parameter;
    rep["r_max"] = cap.r_max;
  } else {
    throw num::UsageError("unknown suite: " + suite);
  }
  return rep;
}

int cmd_eval(const RunArgs& args) {
  auto c = resolve_config(args);
  auto dir = prepare_out(args, c);
  json rep;
  if (args.init_from.empty()) {
    rep = eval_suite<float>(args, c, dir, nullptr);
  } else if (peek_dtype(args.init_from) == "float64") {
    auto m = ckpt::load_model<double>(args.init_from);
    rep = eval_suite<double>(args, c, dir, &m);
  } else {
    auto m = ckpt::load_model<float>(args.init_from);
    rep = eval_suite<float>(args, c, dir, &m);
  }
  write_text(dir / "eval_report.json", rep.dump(2) + "\n");
  std::cout << rep.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

template <class T>
int run_generate(const RunArgs& args, const cfg::Config& c,
                 const fs::path& dir) {
  auto m = ckpt::load_model<T>(args.init_from);
  std::vector<int> prompt;
  {
    std::istringstream ss(c.get_str("gen.prompt"));
    int tok;
    while (ss >> tok) prompt.push_back(tok);
  }
  if (prompt.empty()) throw num::UsageError("gen.prompt must list token ids");
  for (int tok : prompt)
    if (tok < 0 || tok >= m.cfg.vocab_size)
      throw num::UsageError("prompt token out of vocabulary");

  infer::ExitPolicy exit_policy = infer::exit_policy_from_strings(
      c.get_str("exit.kind", "qexit"), c.get_double("exit.value", 0.5));
  exit_policy.floor = static_cast<int>(c.get_int("exit.floor", 1));
  exit_policy.ceiling = static_cast<int>(c.get_int("exit.ceiling", 0));
  exit_policy.validate(m.cfg.t_max);
  auto kv = infer::kv_policy_from_string(c.get_str("kv.policy", "full"));

  infer::DecodeConfig dc;
  dc.max_new_tokens = static_cast<int>(c.get_int("gen.max_new_tokens", 32));
  dc.seed = c.get_u64("seed");
  dc.context_limit = static_cast<int>(c.get_int("gen.context_limit", 512));
  std::string sampler = c.get_str("gen.sampler", "greedy");
  if (sampler == "greedy") {
    dc.sampler.kind = infer::Sampler::Kind::kGreedy;
  } else if (sampler == "top_p") {
    dc.sampler.kind = infer::Sampler::Kind::kTopP;
    dc.sampler.temperature = c.get_double("gen.temperature", 1.0);
    dc.sampler.top_p = c.get_double("gen.top_p", 0.7);
    if (!(dc.sampler.temperature > 0))
      throw num::UsageError("gen.temperature must be positive");
    if (!(dc.sampler.top_p > 0 && dc.sampler.top_p <= 1))
      throw num::UsageError("gen.top_p must lie in (0,1]");
  } else {
    throw num::UsageError("unknown gen.sampler: " + sampler);
  }
  int stop = static_cast<int>(c.get_int("gen.stop_token", -1));

  auto rep = infer::decode(m, prompt, exit_policy, kv, dc, stop);
  std::ostringstream lines;
  for (const auto& t : rep.tokens) {
    json j = {{"token_id", t.token_id},
              {"exit_step", t.exit_step},
              {"cdf_at_exit", t.cdf_at_exit}};
    lines << j.dump() << "\n";
  }
  write_text(dir / "report.jsonl", lines.str());
  json summary = {{"mean_exit_step", rep.mean_exit_step},
                  {"peak_cache_entries", rep.peak_cache_entries}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_generate(const RunArgs& args) {
  auto c = resolve_config(args);
  auto dir = prepare_out(args, c);
  if (args.init_from.empty())
    throw num::UsageError("generate requires --init-from checkpoint");
  if (peek_dtype(args.init_from) == "float64")
    return run_generate<double>(args, c, dir);
  return run_generate<float>(args, c, dir);
}

// ---------------------------------------------------------------------------
// reach-verify and scale-fit
// ---------------------------------------------------------------------------

int cmd_reach_verify(const RunArgs& args) {
  auto c = resolve_config(args);
  auto dir = prepare_out(args, c);
  int n_max = static_cast<int>(c.get_int("n_max", 12));
  int trials = static_cast<int>(c.get_int("trials", 500));
  auto rep = reach::verify(n_max, trials, c.get_u64("seed"));
  json j;
  j["trials"] = rep.trials;
  j["n_max"] = rep.n_max;
  j["mismatches"] = json::array();
  for (const auto& mm : rep.mismatches)
    j["mismatches"].push_back({{"trial", mm.trial},
                               {"n", mm.n},
                               {"s", mm.s},
                               {"t", mm.t},
                               {"got", mm.got},
                               {"expected", mm.expected}});
  write_text(dir / "reach_verify.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return rep.ok() ? 0 : 1;
}

json params_to_json(const scaling::PowerLawParams& p) {
  return {{"E", p.e},     {"A", p.a},     {"alpha", p.alpha}, {"t1", p.t1},
          {"B", p.b},     {"beta", p.beta}, {"t2", p.t2},
          {"C", p.c},     {"gamma", p.gamma}, {"t3", p.t3}};
}

int cmd_scale_fit(const RunArgs& args) {
  auto c = resolve_config(args);
  auto dir = prepare_out(args, c);
  auto pts = scaling::read_csv(c.get_str("fit.csv"));
  scaling::FitOptions opt;
  opt.seed = c.get_u64("seed");
  opt.exclude_outliers = c.get_bool("fit.exclude_outliers", false);
  auto res = scaling::fit(pts, scaling::LawForm::kTotal, opt);
  json j;
  j["params"] = params_to_json(res.params);
  j["r2"] = res.r2;
  j["points_used"] = res.points_used;
  j["split_reports"] = json::array();
  auto add_splits = [&](const std::string& proto, double arg) {
    for (const auto& s : scaling::generalizability(pts, proto, arg, opt))
      j["split_reports"].push_back({{"split", s.split},
                                    {"fit_points", s.fit_points},
                                    {"r2_all", s.r2_all},
                                    {"params", params_to_json(s.params)}});
  };
  int k = static_cast<int>(c.get_int("fit.split_model_sizes", 0));
  if (k > 0) add_splits("by_model_size", k);
  double frac = c.get_double("fit.split_data_prefix", 0.0);
  if (frac > 0) add_splits("by_data_prefix", frac);
  if (c.get_bool("fit.split_by_step", false)) add_splits("by_step", 0);
  write_text(dir / "scale_fit.json", j.dump(2) + "\n");
  std::cout << "r2 = " << res.r2 << "\n" << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"looped language model artifact"};
  app.require_subcommand(1);

  RunArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "run configuration file");
    sub->add_option("--seed", args.seed, "seed override");
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--init-from", args.init_from, "checkpoint to start from");
    sub->add_option("--override", args.overrides,
                    "config override key=value (repeatable)");
  };

  auto* gen = app.add_subcommand("tasks-gen", "generate a synthetic dataset");
  auto* tr = app.add_subcommand("train", "train a model (stage 1 or 2)");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a suite");
  auto* ge = app.add_subcommand("generate", "decode with exit/kv policies");
  auto* rv = app.add_subcommand("reach-verify", "verify the reachability construction");
  auto* sf = app.add_subcommand("scale-fit", "fit the scaling law to a CSV");
  for (auto* sub : {gen, tr, ev, ge, rv, sf}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_tasks_gen(args);
    if (tr->parsed()) return cmd_train(args);
    if (ev->parsed()) return cmd_eval(args);
    if (ge->parsed()) return cmd_generate(args);
    if (rv->parsed()) return cmd_reach_verify(args);
    if (sf->parsed()) return cmd_scale_fit(args);
  } catch (const num::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
