#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "loop/checkpoint.hpp"
#include "loop/tasks.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace loop;

namespace {

const std::string kBin = LOOPLM_BIN;

fs::path work_dir() {
  auto d = fs::temp_directory_path() / "looplm_cli_test";
  return d;
}

int run(const std::string& args) {
  std::string cmd = kBin + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_CASE("cli smoke: datasets, training, eval, generation, reports") {
  auto dir = work_dir();
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto at = [&](const std::string& s) { return (dir / s).string(); };

  SUBCASE("") {}  // keep a single ordered pass; doctest needs one case body

  // --- tasks-gen: determinism, oracle consistency, usage errors
  std::string gen_flags =
      " --seed 5 --override task=mano --override mano.count=40"
      " --override mano.max_len=3";
  REQUIRE(run("tasks-gen --out " + at("mano") + gen_flags) == 0);
  REQUIRE(run("tasks-gen --out " + at("mano_b") + gen_flags) == 0);
  CHECK(slurp(dir / "mano/dataset.jsonl") == slurp(dir / "mano_b/dataset.jsonl"));
  CHECK(run("tasks-gen --out " + at("bad") + " --seed 1 --override task=nope") == 2);
  CHECK(run("tasks-gen --out " + at("bad2") + " --override task=mano") == 2);  // no seed

  auto side = read_json(dir / "mano/dataset_spec.json");
  tasks::Vocab vocab;
  for (const auto& w : side["vocab"]) vocab.add(w.get<std::string>());
  {
    std::ifstream f(dir / "mano/dataset.jsonl");
    std::string line;
    int count = 0;
    while (std::getline(f, line)) {
      auto j = json::parse(line);
      auto toks = j["tokens"].get<std::vector<int>>();
      int ans_pos = j["answer_pos"].get<int>();
      std::vector<int> expr(toks.begin() + 2, toks.begin() + ans_pos - 1);
      CHECK(vocab.word(toks[ans_pos]) ==
            std::to_string(tasks::mano_oracle(vocab, expr)));
      ++count;
    }
    CHECK(count == 40);
  }

  // --- train: smoke run, metrics format, reproducibility
  {
    std::ofstream f(dir / "train.cfg");
    f << "data.path = " << at("mano/dataset.jsonl") << "\n"
      << "model.d_model = 16\nmodel.n_heads = 2\nmodel.n_layers = 1\n"
      << "model.ffn_hidden = 32\nmodel.t_max = 2\n"
      << "train.steps = 5\ntrain.batch_rows = 2\ntrain.row_len = 24\n"
      << "seed = 3\n";
  }
  REQUIRE(run("train --config " + at("train.cfg") + " --out " + at("run1")) == 0);
  REQUIRE(run("train --config " + at("train.cfg") + " --out " + at("run2")) == 0);
  CHECK(slurp(dir / "run1/checkpoint.bin") == slurp(dir / "run2/checkpoint.bin"));
  CHECK(slurp(dir / "run1/metrics.csv") == slurp(dir / "run2/metrics.csv"));
  {
    std::istringstream m(slurp(dir / "run1/metrics.csv"));
    std::string header;
    std::getline(m, header);
    CHECK(header ==
          "step,stage,total_loss,loss_t1,loss_t2,entropy,mean_exit_step,lr,"
          "grad_norm");
    int rows = 0;
    std::string line;
    while (std::getline(m, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 5);
  }
  CHECK(fs::exists(dir / "run1/resolved.cfg"));

  // stage 2 without a checkpoint is a usage error; with one it only moves
  // the gate tensors
  CHECK(run("train --config " + at("train.cfg") + " --out " + at("bad3") +
            " --override train.stage=2") == 2);
  REQUIRE(run("train --config " + at("train.cfg") + " --out " + at("run_s2") +
              " --override train.stage=2 --init-from " +
              at("run1/checkpoint.bin")) == 0);
  {
    auto before = ckpt::load_model<float>(at("run1/checkpoint.bin"));
    auto after = ckpt::load_model<float>(at("run_s2/checkpoint.bin"));
    bool gate_moved = false;
    before.for_each_param([&](const std::string& name, num::Tensor<float>& p) {
      num::Tensor<float>* q = nullptr;
      after.for_each_param([&](const std::string& n2, num::Tensor<float>& p2) {
        if (n2 == name) q = &p2;
      });
      REQUIRE(q != nullptr);
      if (name.rfind("gate.", 0) == 0) {
        if (p.data() != q->data()) gate_moved = true;
      } else {
        CHECK(p.data() == q->data());
      }
    });
    CHECK(gate_moved);
  }

  // --- eval: per-step numbers and the capacity calibration
  REQUIRE(run("eval --out " + at("ev1") + " --seed 11 --init-from " +
              at("run1/checkpoint.bin") +
              " --override suite=mano --override mano.max_len=3"
              " --override eval.count=16") == 0);
  {
    auto rep = read_json(dir / "ev1/eval_report.json");
    CHECK(rep["suite"] == "mano");
    CHECK(rep["per_step_accuracy"].size() == 2);  // one number per loop step
  }
  REQUIRE(run("tasks-gen --out " + at("bios") +
              " --seed 2 --override task=bios --override bios.n_people=80") == 0);
  REQUIRE(run("eval --out " + at("ev_cap") + " --seed 1" +
              " --override suite=capacity --override capacity.scorer=memorizer"
              " --override capacity.param_count=1000 --override data.path=" +
              at("bios/dataset.jsonl")) == 0);
  {
    auto rep = read_json(dir / "ev_cap/eval_report.json");
    double bits = rep["attr_bits_per_person"].get<double>();
    CHECK(bits == doctest::Approx(47.59).epsilon(0.01));
  }

  // --- generate: JSONL report plus summary, deterministic
  std::string gen_cmd =
      "generate --seed 1 --init-from " + at("run1/checkpoint.bin") +
      " --override \"gen.prompt=26 27 1 2\" --override gen.max_new_tokens=4"
      " --override gen.sampler=top_p --override kv.policy=last_step";
  REQUIRE(run(gen_cmd + " --out " + at("gen1")) == 0);
  REQUIRE(run(gen_cmd + " --out " + at("gen2")) == 0);
  CHECK(slurp(dir / "gen1/report.jsonl") == slurp(dir / "gen2/report.jsonl"));
  {
    std::istringstream f(slurp(dir / "gen1/report.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) {
      auto j = json::parse(line);
      CHECK(j.contains("token_id"));
      CHECK(j.contains("exit_step"));
      CHECK(j.contains("cdf_at_exit"));
      ++lines;
    }
    CHECK(lines == 4);
    auto summary = read_json(dir / "gen1/summary.json");
    CHECK(summary["mean_exit_step"].get<double>() >= 1.0);
    CHECK(summary["peak_cache_entries"].get<int64_t>() > 0);
  }

  // --- reach-verify: clean report, exit 0
  REQUIRE(run("reach-verify --seed 7 --out " + at("rv") +
              " --override trials=60") == 0);
  {
    auto rep = read_json(dir / "rv/reach_verify.json");
    CHECK(rep["trials"] == 60);
    CHECK(rep["mismatches"].empty());
  }

  // --- scale-fit: planted surface recovered; missing csv is a usage error
  {
    std::ofstream f(dir / "planted.csv");
    f << "n,d,t,loss\n";
    for (double n : {1e5, 3e5, 1e6, 3e6, 1e7})
      for (double d : {1e6, 4e6, 1.6e7, 6.4e7})
        for (double t : {1.0, 2.0, 4.0})
          f << n << ',' << d << ',' << t << ','
            << 1.2 + 400 / std::pow(n, 0.34) + 3000 / std::pow(d, 0.28) +
                   1.1 / std::pow(t, 0.9)
            << "\n";
  }
  REQUIRE(run("scale-fit --seed 2 --out " + at("sf") + " --override fit.csv=" +
              at("planted.csv") + " --override fit.split_by_step=true") == 0);
  {
    auto rep = read_json(dir / "sf/scale_fit.json");
    CHECK(rep["r2"].get<double>() >= 0.99);
    CHECK(rep["params"]["alpha"].get<double>() == doctest::Approx(0.34).epsilon(0.1));
    CHECK(rep["split_reports"].size() == 3);
  }
  CHECK(run("scale-fit --seed 2 --out " + at("sf_bad") +
            " --override fit.csv=" + at("nope.csv")) == 2);
  CHECK(run("scale-fit --seed 2 --out " + at("sf_bad2")) == 2);

  fs::remove_all(dir);
}
