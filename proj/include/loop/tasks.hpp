#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "loop/model.hpp"
#include "loop/rng.hpp"
#include "loop/tensor.hpp"

namespace loop::tasks {

// Word-level closed vocabulary. Ids are assigned in insertion order, so a
// vocabulary built the same way is identical across runs.
class Vocab {
 public:
  int add(const std::string& w) {
    auto it = ids_.find(w);
    if (it != ids_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    ids_[w] = id;
    words_.push_back(w);
    return id;
  }
  int id(const std::string& w) const {
    auto it = ids_.find(w);
    if (it == ids_.end()) throw num::UsageError("token not in vocab: " + w);
    return it->second;
  }
  bool contains(const std::string& w) const { return ids_.count(w) > 0; }
  const std::string& word(int id) const {
    if (id < 0 || id >= static_cast<int>(words_.size()))
      throw num::IndexError("vocab id out of range");
    return words_[id];
  }
  int size() const { return static_cast<int>(words_.size()); }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> words_;
};

// One training sample: tokens plus an aligned target row (kIgnoreIndex where
// unsupervised). Span list and answer position carry task metadata.
struct Record {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<std::pair<int, int>> spans;  // (start, len), attribute values
  int answer_pos = -1;                     // index of the answer token
};

// ---------------------------------------------------------------------------
// bioS: synthetic biographies for knowledge-capacity probing
// ---------------------------------------------------------------------------

struct BioSpec {
  int n_people = 1000;
  uint64_t seed = 0;
  // name space 400 * 400 * 1000; attribute space
  // 2 * (12*28*200) * 200 * 300 * 100 * 263
  static constexpr int kFirst = 400, kMiddle = 400, kLast = 1000;
  static constexpr int kGender = 2, kMonth = 12, kDay = 28, kYear = 200;
  static constexpr int kCity = 200, kUniversity = 300, kMajor = 100,
                       kEmployer = 263;

  static double log2_name_space() {
    return std::log2(static_cast<double>(kFirst)) +
           std::log2(static_cast<double>(kMiddle)) +
           std::log2(static_cast<double>(kLast));
  }
  static double log2_attr_space() {
    return std::log2(2.0) + std::log2(12.0) + std::log2(28.0) +
           std::log2(200.0) + std::log2(200.0) + std::log2(300.0) +
           std::log2(100.0) + std::log2(263.0);
  }
};

struct BioCorpus {
  Vocab vocab;
  std::vector<Record> bios;
  int bos_id = 0;
};

// Bio layout (one of four clause orders):
//   <bos> f m l <gender> <month> <day> <year> , <clauses> .
// Spans cover exactly the attribute-value tokens: the 4-token
// gender+birthdate run and the four single-token values.
inline BioCorpus gen_bios(const BioSpec& spec) {
  if (spec.n_people >
      static_cast<int64_t>(BioSpec::kFirst) * BioSpec::kMiddle * BioSpec::kLast)
    throw num::UsageError("gen_bios: more people than distinct names");
  BioCorpus c;
  auto& v = c.vocab;
  c.bos_id = v.add("<bos>");
  for (int i = 0; i < BioSpec::kFirst; ++i) v.add("f" + std::to_string(i));
  for (int i = 0; i < BioSpec::kMiddle; ++i) v.add("m" + std::to_string(i));
  for (int i = 0; i < BioSpec::kLast; ++i) v.add("l" + std::to_string(i));
  v.add("male");
  v.add("female");
  for (int i = 0; i < BioSpec::kMonth; ++i) v.add("mo" + std::to_string(i));
  for (int i = 0; i < BioSpec::kDay; ++i) v.add("d" + std::to_string(i));
  for (int i = 0; i < BioSpec::kYear; ++i) v.add("y" + std::to_string(i));
  for (int i = 0; i < BioSpec::kCity; ++i) v.add("c" + std::to_string(i));
  for (int i = 0; i < BioSpec::kUniversity; ++i) v.add("u" + std::to_string(i));
  for (int i = 0; i < BioSpec::kMajor; ++i) v.add("j" + std::to_string(i));
  for (int i = 0; i < BioSpec::kEmployer; ++i) v.add("e" + std::to_string(i));
  for (const char* w : {",", ".", "lives", "in", "studied", "graduated",
                        "from", "works", "for"})
    v.add(w);

  Rng names_rng(spec.seed, "bios.names");
  Rng attrs_rng(spec.seed, "bios.attrs");
  Rng tmpl_rng(spec.seed, "bios.templates");
  std::set<std::tuple<int, int, int>> used;

  // clause builders: each emits words and, for the value token, a span
  struct Clause {
    std::vector<std::string> before;
    int value_kind;  // 0 city, 1 university, 2 major, 3 employer
  };
  const std::vector<Clause> clauses = {
      {{"lives", "in"}, 0},
      {{"graduated", "from"}, 1},
      {{"studied"}, 2},
      {{"works", "for"}, 3},
  };
  // four fixed clause orders form the template pool
  const int orders[4][4] = {{0, 1, 2, 3}, {3, 0, 1, 2}, {2, 3, 0, 1}, {1, 2, 0, 3}};

  for (int p = 0; p < spec.n_people; ++p) {
    int f, m, l;
    do {
      f = static_cast<int>(names_rng.next_below(BioSpec::kFirst));
      m = static_cast<int>(names_rng.next_below(BioSpec::kMiddle));
      l = static_cast<int>(names_rng.next_below(BioSpec::kLast));
    } while (!used.insert({f, m, l}).second);
    int gender = static_cast<int>(attrs_rng.next_below(BioSpec::kGender));
    int month = static_cast<int>(attrs_rng.next_below(BioSpec::kMonth));
    int day = static_cast<int>(attrs_rng.next_below(BioSpec::kDay));
    int year = static_cast<int>(attrs_rng.next_below(BioSpec::kYear));
    int vals[4] = {static_cast<int>(attrs_rng.next_below(BioSpec::kCity)),
                   static_cast<int>(attrs_rng.next_below(BioSpec::kUniversity)),
                   static_cast<int>(attrs_rng.next_below(BioSpec::kMajor)),
                   static_cast<int>(attrs_rng.next_below(BioSpec::kEmployer))};
    const char* prefixes[4] = {"c", "u", "j", "e"};

    Record r;
    auto push = [&](const std::string& w) { r.tokens.push_back(v.id(w)); };
    push("<bos>");
    push("f" + std::to_string(f));
    push("m" + std::to_string(m));
    push("l" + std::to_string(l));
    int span_start = static_cast<int>(r.tokens.size());
    push(gender == 0 ? "male" : "female");
    push("mo" + std::to_string(month));
    push("d" + std::to_string(day));
    push("y" + std::to_string(year));
    r.spans.push_back({span_start, 4});
    const int* order = orders[tmpl_rng.next_below(4)];
    for (int ci = 0; ci < 4; ++ci) {
      const Clause& cl = clauses[order[ci]];
      push(",");
      for (const auto& w : cl.before) push(w);
      r.spans.push_back({static_cast<int>(r.tokens.size()), 1});
      push(std::string(prefixes[cl.value_kind]) +
           std::to_string(vals[cl.value_kind]));
    }
    push(".");
    // standard next-token supervision over the whole bio
    r.targets.assign(r.tokens.size(), num::kIgnoreIndex);
    for (size_t i = 0; i + 1 < r.tokens.size(); ++i) r.targets[i] = r.tokens[i + 1];
    c.bios.push_back(std::move(r));
  }
  return c;
}

// Per-position cross entropy of each token given its prefix, in nats.
// Position 0 is never scored (nothing precedes it).
using TokenScorer = std::function<std::vector<double>(const Record&)>;

struct CapacityReport {
  double p1 = 0.0;  // per-person summed CE over name tokens
  double p2 = 0.0;  // per-person summed CE over attribute tokens
  double bits_learned = 0.0;
  double bits_per_parameter = 0.0;
  double r_max = 0.0;
  double attr_bits_per_person = 0.0;
  double name_bits_per_person = 0.0;
};

// Knowledge-capacity estimate: bits = N*log2(N0/e^p1) + N*log2(S0/e^p2),
// each term clamped at zero (higher loss means fewer stored bits).
inline CapacityReport capacity_bits(const TokenScorer& scorer,
                                    const std::vector<Record>& bios,
                                    int64_t param_count) {
  if (bios.empty()) throw num::UsageError("capacity_bits: empty eval set");
  double p1_sum = 0, p2_sum = 0;
  for (const auto& r : bios) {
    auto ce = scorer(r);
    if (ce.size() != r.tokens.size())
      throw num::UsageError("capacity_bits: scorer length mismatch");
    // name tokens at positions 1..3 (after <bos>)
    for (int i = 1; i <= 3; ++i) p1_sum += ce[i];
    for (auto [start, len] : r.spans)
      for (int i = start; i < start + len; ++i) p2_sum += ce[i];
  }
  double n = static_cast<double>(bios.size());
  CapacityReport rep;
  rep.p1 = p1_sum / n;
  rep.p2 = p2_sum / n;
  const double log2e = 1.4426950408889634;
  rep.name_bits_per_person =
      std::max(0.0, BioSpec::log2_name_space() - rep.p1 * log2e);
  rep.attr_bits_per_person =
      std::max(0.0, BioSpec::log2_attr_space() - rep.p2 * log2e);
  rep.bits_learned = n * (rep.name_bits_per_person + rep.attr_bits_per_person);
  rep.bits_per_parameter =
      param_count > 0 ? rep.bits_learned / static_cast<double>(param_count) : 0.0;
  double n0n = BioSpec::log2_name_space() + std::log2(n);
  rep.r_max = param_count > 0
                  ? n * (n0n + BioSpec::log2_attr_space()) /
                        static_cast<double>(param_count)
                  : 0.0;
  return rep;
}

inline TokenScorer memorizer_scorer() {
  return [](const Record& r) { return std::vector<double>(r.tokens.size(), 0.0); };
}

inline TokenScorer uniform_scorer(int vocab_size) {
  double ce = std::log(static_cast<double>(vocab_size));
  return [ce](const Record& r) {
    return std::vector<double>(r.tokens.size(), ce);
  };
}

// Teacher-forced scorer from a trained model, evaluated at full loop depth.
template <class T>
TokenScorer model_scorer(const model::LoopModel<T>& m) {
  return [&m](const Record& r) {
    num::NoGradGuard ng;
    model::Batch b = model::Batch::single(r.tokens);
    auto tr = model::forward_looped(m, b, m.cfg.t_max);
    auto per = num::cross_entropy_per_pos(tr.steps.back().logits, b.targets);
    std::vector<double> ce(r.tokens.size(), 0.0);
    // per[i] scores the prediction of token i+1 made at position i
    for (size_t i = 0; i + 1 < r.tokens.size(); ++i)
      ce[i + 1] = static_cast<double>(per.data()[i]);
    return ce;
  };
}

// ---------------------------------------------------------------------------
// Mano: modular arithmetic over F_23, prefix notation, no chain of thought
// ---------------------------------------------------------------------------

struct ManoSpec {
  int max_len = 4;  // L: maximum operation count
  uint64_t seed = 0;
  static constexpr int kMod = 23;
};

struct ManoCorpus {
  Vocab vocab;
  std::vector<Record> records;
};

inline Vocab mano_vocab(int max_len) {
  Vocab v;
  for (int i = 0; i < ManoSpec::kMod; ++i) v.add(std::to_string(i));
  v.add("+");
  v.add("-");
  v.add("*");
  v.add("<bos>");
  v.add("<ans>");
  for (int i = 0; i <= max_len; ++i) v.add("len_" + std::to_string(i));
  return v;
}

namespace detail {

// Emits a random prefix expression with exactly `ops` operators.
inline void mano_expr(int ops, Rng& rng, const Vocab& v, std::vector<int>& out) {
  if (ops == 0) {
    out.push_back(v.id(std::to_string(rng.next_below(ManoSpec::kMod))));
    return;
  }
  const char* names[3] = {"+", "-", "*"};
  out.push_back(v.id(names[rng.next_below(3)]));
  int left = static_cast<int>(rng.next_below(static_cast<uint64_t>(ops)));
  mano_expr(left, rng, v, out);
  mano_expr(ops - 1 - left, rng, v, out);
}

}  // namespace detail

// Exact prefix evaluation mod 23. `pos` advances past the consumed tokens.
inline int mano_eval(const Vocab& v, const std::vector<int>& toks, size_t& pos) {
  if (pos >= toks.size()) throw num::UsageError("mano: truncated expression");
  const std::string& w = v.word(toks[pos++]);
  if (w == "+" || w == "-" || w == "*") {
    int a = mano_eval(v, toks, pos);
    int b = mano_eval(v, toks, pos);
    if (w == "+") return (a + b) % ManoSpec::kMod;
    if (w == "*") return (a * b) % ManoSpec::kMod;
    return ((a - b) % ManoSpec::kMod + ManoSpec::kMod) % ManoSpec::kMod;
  }
  for (char ch : w)
    if (ch < '0' || ch > '9')
      throw num::UsageError("mano: unexpected token '" + w + "'");
  int val = std::stoi(w);
  if (val < 0 || val >= ManoSpec::kMod)
    throw num::UsageError("mano: literal out of field range");
  return val;
}

inline int mano_oracle(const Vocab& v, const std::vector<int>& expr) {
  size_t pos = 0;
  int val = mano_eval(v, expr, pos);
  if (pos != expr.size()) throw num::UsageError("mano: trailing tokens");
  return val;
}

// Sequence: <bos> len_l <expr> <ans> <answer>. Only the answer token is
// supervised. fixed_len > 0 pins l; otherwise l ~ uniform[1, L].
inline Record gen_mano_record(const ManoSpec& spec, const Vocab& v, Rng& rng,
                              int fixed_len = 0) {
  int l = fixed_len > 0 ? fixed_len : rng.next_int(1, spec.max_len);
  std::vector<int> expr;
  detail::mano_expr(l, rng, v, expr);
  int ans = mano_oracle(v, expr);
  Record r;
  r.tokens.push_back(v.id("<bos>"));
  r.tokens.push_back(v.id("len_" + std::to_string(l)));
  r.tokens.insert(r.tokens.end(), expr.begin(), expr.end());
  r.tokens.push_back(v.id("<ans>"));
  r.answer_pos = static_cast<int>(r.tokens.size());
  r.tokens.push_back(v.id(std::to_string(ans)));
  r.targets.assign(r.tokens.size(), num::kIgnoreIndex);
  r.targets[r.answer_pos - 1] = r.tokens[r.answer_pos];
  return r;
}

inline ManoCorpus gen_mano(const ManoSpec& spec, int count) {
  ManoCorpus c;
  c.vocab = mano_vocab(spec.max_len);
  Rng rng(spec.seed, "mano");
  for (int i = 0; i < count; ++i)
    c.records.push_back(gen_mano_record(spec, c.vocab, rng));
  return c;
}

// ---------------------------------------------------------------------------
// multi-hop QA over a layered relation graph
// ---------------------------------------------------------------------------

struct MultiHopSpec {
  int layers = 5;
  int per_layer = 20;
  int out_degree = 4;      // |R| relations per entity into the next layer
  int relation_pool = 20;  // distinct relation names
  int hops = 3;
  double train_fraction = 0.8;
  uint64_t seed = 0;
};

struct MultiHopData {
  Vocab vocab;
  std::vector<Record> facts;     // "<e> <r> <target> ."
  std::vector<Record> train_qa;  // "<q> e r1 r2 r3 <ans> a"
  std::vector<Record> test_qa;
  // edges[entity][relation] = target entity id (token ids)
  std::map<int, std::map<int, int>> edges;
  std::vector<std::vector<int>> layer_entities;  // token ids per layer

  int64_t question_pool_size() const {
    // start entities in layer 0, |R| choices per hop
    return static_cast<int64_t>(layer_entities[0].size()) *
           static_cast<int64_t>(std::pow(
               static_cast<double>(edges.begin()->second.size()), 3.0));
  }
};

inline int multihop_oracle(const MultiHopData& d, int start,
                           const std::vector<int>& relations) {
  int cur = start;
  for (int r : relations) {
    auto it = d.edges.find(cur);
    if (it == d.edges.end())
      throw num::UsageError("multihop: entity has no outgoing edges");
    auto jt = it->second.find(r);
    if (jt == it->second.end())
      throw num::UsageError("multihop: relation not present at entity");
    cur = jt->second;
  }
  return cur;
}

inline MultiHopData gen_multihop(const MultiHopSpec& spec) {
  if (!(spec.train_fraction > 0 && spec.train_fraction < 1))
    throw num::UsageError("multihop: train_fraction must lie in (0,1)");
  if (spec.out_degree > spec.relation_pool)
    throw num::UsageError("multihop: out_degree exceeds relation pool");
  if (spec.hops + 1 > spec.layers)
    throw num::UsageError("multihop: not enough layers for the hop count");
  MultiHopData d;
  auto& v = d.vocab;
  v.add("<q>");
  v.add("<ans>");
  v.add(".");
  std::vector<int> rel_ids;
  for (int i = 0; i < spec.relation_pool; ++i)
    rel_ids.push_back(v.add("r" + std::to_string(i)));
  d.layer_entities.resize(spec.layers);
  for (int k = 0; k < spec.layers; ++k)
    for (int i = 0; i < spec.per_layer; ++i)
      d.layer_entities[k].push_back(
          v.add("p" + std::to_string(k) + "_" + std::to_string(i)));

  Rng rng(spec.seed, "multihop.graph");
  for (int k = 0; k + 1 < spec.layers; ++k) {
    for (int e : d.layer_entities[k]) {
      auto rels = rel_ids;
      rng.shuffle(rels);
      for (int j = 0; j < spec.out_degree; ++j) {
        int target = d.layer_entities[k + 1][rng.next_below(spec.per_layer)];
        d.edges[e][rels[j]] = target;
        Record f;
        f.tokens = {e, rels[j], target, v.id(".")};
        f.targets.assign(f.tokens.size(), num::kIgnoreIndex);
        for (size_t i = 0; i + 1 < f.tokens.size(); ++i)
          f.targets[i] = f.tokens[i + 1];
        d.facts.push_back(std::move(f));
      }
    }
  }

  // enumerate the full 3-hop pool from layer 0
  struct Q {
    int start;
    std::vector<int> rels;
    int answer;
  };
  std::vector<Q> pool;
  for (int e0 : d.layer_entities[0]) {
    for (auto& [r1, e1] : d.edges[e0]) {
      for (auto& [r2, e2] : d.edges[e1]) {
        for (auto& [r3, e3] : d.edges[e2]) {
          pool.push_back({e0, {r1, r2, r3}, e3});
        }
      }
    }
  }
  Rng split_rng(spec.seed, "multihop.split");
  split_rng.shuffle(pool);
  size_t n_train = static_cast<size_t>(pool.size() * spec.train_fraction);
  auto to_record = [&](const Q& q) {
    Record r;
    r.tokens = {v.id("<q>"), q.start, q.rels[0], q.rels[1], q.rels[2],
                v.id("<ans>")};
    r.answer_pos = static_cast<int>(r.tokens.size());
    r.tokens.push_back(q.answer);
    r.targets.assign(r.tokens.size(), num::kIgnoreIndex);
    r.targets[r.answer_pos - 1] = q.answer;
    return r;
  };
  for (size_t i = 0; i < pool.size(); ++i) {
    auto rec = to_record(pool[i]);
    if (i < n_train)
      d.train_qa.push_back(std::move(rec));
    else
      d.test_qa.push_back(std::move(rec));
  }
  return d;
}

// ---------------------------------------------------------------------------
// packing and evaluation
// ---------------------------------------------------------------------------

// Packs records into fixed-length rows; samples never share a segment, so
// the attention mask isolates them. Records longer than row_len are
// rejected. Leftover positions are padding (segment -1).
inline model::Batch pack_records(const std::vector<const Record*>& recs,
                                 int rows, int row_len) {
  model::Batch b;
  b.rows = rows;
  b.len = row_len;
  int64_t total = static_cast<int64_t>(rows) * row_len;
  b.tokens.assign(total, 0);
  b.segments.assign(total, -1);
  b.positions.assign(total, 0);
  b.targets.assign(total, num::kIgnoreIndex);
  int row = 0, col = 0, seg = 0;
  for (const Record* r : recs) {
    int n = static_cast<int>(r->tokens.size());
    if (n > row_len) throw num::UsageError("pack_records: record exceeds row");
    if (col + n > row_len) {
      ++row;
      col = 0;
      seg = 0;
      if (row >= rows) throw num::UsageError("pack_records: batch overflow");
    }
    for (int i = 0; i < n; ++i) {
      int64_t idx = static_cast<int64_t>(row) * row_len + col + i;
      b.tokens[idx] = r->tokens[i];
      b.segments[idx] = seg;
      b.positions[idx] = i;
      b.targets[idx] = r->targets[i];
    }
    col += n;
    ++seg;
  }
  return b;
}

struct ManoEvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
};

// Exact-match accuracy at the hardest length, answer decoded greedily from
// the logits at the <ans> position, running `steps` loop iterations.
template <class T>
ManoEvalResult eval_mano(const model::LoopModel<T>& m, const ManoSpec& spec,
                         int n, int steps, uint64_t seed) {
  auto v = mano_vocab(spec.max_len);
  Rng rng(seed, "mano.eval");
  num::NoGradGuard ng;
  ManoEvalResult res;
  int chunk = 32;
  std::vector<Record> recs;
  for (int i = 0; i < n; ++i)
    recs.push_back(gen_mano_record(spec, v, rng, spec.max_len));
  int row_len = static_cast<int>(recs[0].tokens.size());
  for (int base = 0; base < n; base += chunk) {
    int cnt = std::min(chunk, n - base);
    std::vector<const Record*> ptrs;
    for (int i = 0; i < cnt; ++i) ptrs.push_back(&recs[base + i]);
    auto b = pack_records(ptrs, cnt, row_len);
    auto tr = model::forward_looped(m, b, steps);
    const auto& logits = tr.steps.back().logits.data();
    for (int i = 0; i < cnt; ++i) {
      const Record& r = recs[base + i];
      int pred_pos = i * row_len + r.answer_pos - 1;
      int best = 0;
      for (int t = 1; t < m.cfg.vocab_size; ++t)
        if (logits[pred_pos * m.cfg.vocab_size + t] >
            logits[pred_pos * m.cfg.vocab_size + best])
          best = t;
      if (best == r.tokens[r.answer_pos]) ++res.correct;
    }
  }
  res.total = n;
  res.accuracy = static_cast<double>(res.correct) / n;
  return res;
}

struct SweepPoint {
  std::string policy;
  double threshold = 0.0;  // q for qexit, step for static
  double mean_exit = 0.0;
  double accuracy = 0.0;
};

// One full-depth forward per question yields per-step predictions and gate
// values at the answer position; every policy in the sweep is then evaluated
// from that shared trace.
template <class T>
std::vector<SweepPoint> exit_sweep(const model::LoopModel<T>& m,
                                   const std::vector<Record>& recs,
                                   const std::vector<double>& qs) {
  num::NoGradGuard ng;
  int t_max = m.cfg.t_max;
  int n = static_cast<int>(recs.size());
  // per question: per-step correctness and lambda at the prediction position
  std::vector<std::vector<char>> step_ok(n, std::vector<char>(t_max, 0));
  std::vector<std::vector<double>> lambdas(n, std::vector<double>(t_max, 0));
  int chunk = 32;
  for (int base = 0; base < n; base += chunk) {
    int cnt = std::min(chunk, n - base);
    int row_len = 0;
    for (int i = 0; i < cnt; ++i)
      row_len = std::max(row_len, static_cast<int>(recs[base + i].tokens.size()));
    std::vector<const Record*> ptrs;
    for (int i = 0; i < cnt; ++i) ptrs.push_back(&recs[base + i]);
    auto b = pack_records(ptrs, cnt, row_len);
    auto tr = model::forward_looped(m, b, t_max);
    for (int t = 0; t < t_max; ++t) {
      const auto& logits = tr.steps[t].logits.data();
      const auto& lam = tr.steps[t].lambda_tok.data();
      for (int i = 0; i < cnt; ++i) {
        const Record& r = recs[base + i];
        int pred_pos = i * row_len + r.answer_pos - 1;
        int best = 0;
        for (int tok = 1; tok < m.cfg.vocab_size; ++tok)
          if (logits[pred_pos * m.cfg.vocab_size + tok] >
              logits[pred_pos * m.cfg.vocab_size + best])
            best = tok;
        step_ok[base + i][t] = best == r.tokens[r.answer_pos] ? 1 : 0;
        lambdas[base + i][t] = static_cast<double>(lam[pred_pos]);
      }
    }
  }
  std::vector<SweepPoint> out;
  for (int t = 1; t <= t_max; ++t) {
    SweepPoint p;
    p.policy = "static";
    p.threshold = t;
    p.mean_exit = t;
    int c = 0;
    for (int i = 0; i < n; ++i) c += step_ok[i][t - 1];
    p.accuracy = static_cast<double>(c) / n;
    out.push_back(p);
  }
  for (double q : qs) {
    SweepPoint p;
    p.policy = "qexit";
    p.threshold = q;
    double exit_sum = 0;
    int c = 0;
    for (int i = 0; i < n; ++i) {
      auto dist = model::ExitDistValues::from_lambdas(lambdas[i]);
      int t_exit = t_max;
      for (int t = 1; t <= t_max; ++t) {
        if (dist.cdf(t) >= q) {
          t_exit = t;
          break;
        }
      }
      exit_sum += t_exit;
      c += step_ok[i][t_exit - 1];
    }
    p.mean_exit = exit_sum / n;
    p.accuracy = static_cast<double>(c) / n;
    out.push_back(p);
  }
  return out;
}

}  // namespace loop::tasks
