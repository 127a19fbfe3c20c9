#include "lmcd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>
#include <unordered_set>

#include "lmcd/graph.hpp"
#include "lmcd/jsonl.hpp"
#include "lmcd/metrics.hpp"
#include "lmcd/optim.hpp"
#include "lmcd/rng.hpp"

namespace lmcd {
namespace {

using nlohmann::json;

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

PartitionMetrics metrics_of(const std::vector<Prediction>& preds) {
  std::vector<int> labels;
  std::vector<double> scores;
  for (const auto& p : preds) {
    labels.push_back(p.label);
    scores.push_back(p.score);
  }
  PartitionMetrics m;
  m.count = static_cast<long>(preds.size());
  m.acc = metric_acc(labels, scores);
  m.auc = metric_auc(labels, scores);
  m.rmse = metric_rmse(labels, scores);
  return m;
}

EvalReport report_shell(const std::string& tag, const SplitPlan& plan,
                        const std::string& head, uint64_t seed,
                        uint64_t corpus_hash) {
  EvalReport r;
  r.tag = tag;
  r.scenario = plan.scenario;
  r.fold = plan.fold;
  r.head = head;
  r.condition = "n/a";
  r.variant = "default";
  r.seed = seed;
  r.metadata["corpus_hash"] = hex64(corpus_hash);
  return r;
}

// Shared id-embedding CDM used by the oracle and frozen-text baselines; no
// backbone, same head functions as the main model.
struct SmallCdm {
  HeadConfig hc;
  ParamSet<real> params;
  std::vector<std::string> students;
  std::unordered_map<std::string, int> stu_idx;
  std::vector<std::string> exercises;  // id-embedding mode only
  std::unordered_map<std::string, int> ex_idx;
  bool use_vectors = false;
  std::unordered_map<std::string, Tensor<real>> vectors;  // frozen features
  KcIndexSpace kc_space;

  bool knows_student(const std::string& id) const {
    return stu_idx.count(id) > 0;
  }
  bool knows_exercise(const std::string& id) const {
    return use_vectors ? vectors.count(id) > 0 : ex_idx.count(id) > 0;
  }

  NodeId predict_node(Graph<real>& gr, const LeafMap& leaf, const Corpus& corpus,
                      const ResponseLog& log) const {
    CdmNodes cdm;
    cdm.p = gr.take_row(leaf_of(leaf, "stu.emb"), stu_idx.at(log.student));
    NodeId raw;
    if (use_vectors) {
      auto it = vectors.find(log.exercise);
      if (it == vectors.end()) {
        throw DataError("no frozen vector for exercise '" + log.exercise +
                        "'");
      }
      const NodeId feat = gr.constant(it->second);
      cdm.d = affine_row(gr, leaf, feat, "frozen.wd");
      raw = affine_row(gr, leaf, feat, "frozen.wv");
    } else {
      cdm.d = gr.take_row(leaf_of(leaf, "ex.d"), ex_idx.at(log.exercise));
      raw = gr.take_row(leaf_of(leaf, "ex.av"), ex_idx.at(log.exercise));
    }
    cdm.a = gr.add(gr.softplus(gr.slice_cols(raw, 0, 1)),
                   gr.constant(Tensor<real>::filled(
                       1, 1, static_cast<real>(hc.eps_a))));
    cdm.g = gr.scale(gr.sigmoid(gr.slice_cols(raw, 1, 2)), hc.guess_cap);
    const std::vector<real> mask =
        hc.kind == HeadKind::ncdm
            ? kc_space.q_mask(corpus.tree, corpus.exercise(log.exercise),
                              false)
            : std::vector<real>{};
    return head_predict(gr, leaf, cdm, hc, mask);
  }
};

HeadConfig baseline_head_config(HeadKind kind, int kc_count) {
  HeadConfig hc;
  hc.kind = kind;
  switch (kind) {
    case HeadKind::irt: hc.dim = 1; break;
    case HeadKind::mirt: hc.dim = 4; break;
    case HeadKind::ncdm: hc.dim = kc_count; break;
  }
  hc.validate();
  return hc;
}

void add_mlp_params(ParamSet<real>& params, const HeadConfig& hc,
                    uint64_t seed) {
  if (hc.kind != HeadKind::ncdm) return;
  auto put = [&](const std::string& name, int rows, int cols) {
    params.add(name, init_named_tensor<real>(name, rows, cols, seed))
        .set_requires_grad(true);
  };
  put("head.mlp.w1", hc.dim, hc.mlp_hidden);
  put("head.mlp.b1", 1, hc.mlp_hidden);
  put("head.mlp.w2", hc.mlp_hidden, 1);
  put("head.mlp.b2", 1, 1);
  // clamp after every add: references into the set go stale as it grows
  for (real& x : params.at("head.mlp.w1").data()) {
    x = x < real(0) ? real(0) : x;
  }
  for (real& x : params.at("head.mlp.w2").data()) {
    x = x < real(0) ? real(0) : x;
  }
}

// Fixed-epoch Adam fit over the given log indices. Returns logs consumed.
long fit_small_cdm(SmallCdm& cdm, const Corpus& corpus,
                   const std::vector<int>& log_indices,
                   const BaselineTrainConfig& cfg) {
  std::vector<std::string> clamp;
  if (cdm.hc.kind == HeadKind::ncdm) clamp = {"head.mlp.w1", "head.mlp.w2"};
  Adam<real> opt(cdm.params, clamp);
  const long n = static_cast<long>(log_indices.size());
  const long batch = cfg.batch_size;
  const long total_steps = ((n + batch - 1) / batch) * cfg.epochs;
  long step = 0;
  long consumed = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order = log_indices;
    Rng shuffler(sub_seed(cfg.seed, "baseline_epoch", uint64_t(epoch)));
    shuffler.shuffle(order);
    for (long b0 = 0; b0 < n; b0 += batch) {
      const long b1 = std::min(n, b0 + batch);
      opt.zero_grads();
      const real grad_seed = static_cast<real>(1.0 / double(b1 - b0));
      for (long i = b0; i < b1; ++i) {
        const ResponseLog& log =
            corpus.logs[static_cast<size_t>(order[static_cast<size_t>(i)])];
        ++consumed;
        Graph<real> gr;
        LeafMap leaf = bind_params(gr, cdm.params);
        const NodeId y = cdm.predict_node(gr, leaf, corpus, log);
        const NodeId loss = gr.bce(
            y, gr.constant(Tensor<real>::filled(
                   1, 1, static_cast<real>(log.correct))));
        gr.backward_scalar(loss, grad_seed);
      }
      opt.step(cfg.lr * (1.0 - double(step) / double(total_steps)),
               cfg.weight_decay);
      ++step;
    }
  }
  return consumed;
}

double predict_one(SmallCdm& cdm, const Corpus& corpus,
                   const ResponseLog& log) {
  Graph<real> gr;
  LeafMap leaf = bind_params(gr, cdm.params);
  return static_cast<double>(
      gr.value_of(cdm.predict_node(gr, leaf, corpus, log)).at(0, 0));
}

}  // namespace

EvalReport baseline_random(const Corpus& corpus, const SplitPlan& plan,
                           uint64_t seed, uint64_t corpus_hash) {
  EvalReport r = report_shell("baseline_random", plan, "n/a", seed,
                              corpus_hash);
  Rng rng(sub_seed(seed, "baseline_random"));
  for (int idx : plan.test_logs) {
    const ResponseLog& log = corpus.logs[static_cast<size_t>(idx)];
    r.predictions.push_back(
        Prediction{log.student, log.exercise, log.correct, rng.uniform()});
  }
  r.partitions["cold_test"] = metrics_of(r.predictions);
  return r;
}

EvalReport baseline_oracle(const Corpus& corpus, const SplitPlan& plan,
                           HeadKind kind, BaselineTrainConfig cfg,
                           uint64_t corpus_hash) {
  cfg.validate();
  if (plan.oracle_logs.empty()) {
    throw DataError("oracle baseline: no cold-oracle logs");
  }
  SmallCdm cdm;
  cdm.kc_space = KcIndexSpace(corpus.tree, false);
  cdm.hc = baseline_head_config(kind, cdm.kc_space.size());

  // Population and label prior come from the oracle partition only.
  std::unordered_set<std::string> stu_set, ex_set;
  double label_sum = 0.0;
  for (int idx : plan.oracle_logs) {
    const ResponseLog& log = corpus.logs[static_cast<size_t>(idx)];
    stu_set.insert(log.student);
    ex_set.insert(log.exercise);
    label_sum += log.correct;
  }
  const double prior = label_sum / double(plan.oracle_logs.size());
  cdm.students.assign(stu_set.begin(), stu_set.end());
  std::sort(cdm.students.begin(), cdm.students.end());
  cdm.exercises.assign(ex_set.begin(), ex_set.end());
  std::sort(cdm.exercises.begin(), cdm.exercises.end());
  for (size_t i = 0; i < cdm.students.size(); ++i) {
    cdm.stu_idx.emplace(cdm.students[i], static_cast<int>(i));
  }
  for (size_t i = 0; i < cdm.exercises.size(); ++i) {
    cdm.ex_idx.emplace(cdm.exercises[i], static_cast<int>(i));
  }

  auto put = [&](const std::string& name, int rows, int cols) {
    cdm.params.add(name, init_named_tensor<real>(name, rows, cols, cfg.seed))
        .set_requires_grad(true);
  };
  put("stu.emb", static_cast<int>(cdm.students.size()), cdm.hc.dim);
  put("ex.d", static_cast<int>(cdm.exercises.size()), cdm.hc.dim);
  put("ex.av", static_cast<int>(cdm.exercises.size()), 2);
  add_mlp_params(cdm.params, cdm.hc, cfg.seed);

  const long consumed = fit_small_cdm(cdm, corpus, plan.oracle_logs, cfg);

  EvalReport r = report_shell("baseline_oracle", plan, head_kind_name(kind),
                              cfg.seed, corpus_hash);
  long prior_scored = 0;
  for (int idx : plan.test_logs) {
    const ResponseLog& log = corpus.logs[static_cast<size_t>(idx)];
    double score;
    if (cdm.knows_student(log.student) && cdm.knows_exercise(log.exercise)) {
      score = predict_one(cdm, corpus, log);
    } else {
      score = prior;
      ++prior_scored;
    }
    r.predictions.push_back(
        Prediction{log.student, log.exercise, log.correct, score});
  }
  r.partitions["cold_test"] = metrics_of(r.predictions);
  r.metadata["oracle_consumed"] = consumed;
  r.metadata["hot_consumed"] = 0;
  r.metadata["prior_mean"] = prior;
  r.metadata["prior_mean_scored"] = prior_scored;
  return r;
}

EvalReport baseline_frozen_text(const Corpus& corpus, const SplitPlan& plan,
                                const std::string& vectors_path,
                                HeadKind kind, BaselineTrainConfig cfg,
                                uint64_t corpus_hash) {
  cfg.validate();
  if (plan.hot_logs.empty()) {
    throw DataError("frozen-text baseline: no hot logs");
  }
  SmallCdm cdm;
  cdm.use_vectors = true;
  cdm.kc_space = KcIndexSpace(corpus.tree, false);
  cdm.hc = baseline_head_config(kind, cdm.kc_space.size());

  int feat_dim = 0;
  for_each_jsonl(vectors_path, [&](const json& j, const std::string& ctx) {
    if (!j.contains("id") || !j["id"].is_string() || !j.contains("vector") ||
        !j["vector"].is_array()) {
      throw DataError(ctx + ": expected {\"id\", \"vector\"}");
    }
    std::vector<real> vals;
    for (const auto& x : j["vector"]) {
      if (!x.is_number()) throw DataError(ctx + ": non-numeric vector entry");
      vals.push_back(static_cast<real>(x.get<double>()));
    }
    if (vals.empty()) throw DataError(ctx + ": empty vector");
    if (feat_dim == 0) feat_dim = static_cast<int>(vals.size());
    if (static_cast<int>(vals.size()) != feat_dim) {
      throw DataError(ctx + ": vector width " + std::to_string(vals.size()) +
                      " != " + std::to_string(feat_dim));
    }
    cdm.vectors[j["id"].get<std::string>()] =
        Tensor<real>::from_values(1, feat_dim, std::move(vals));
  });
  if (cdm.vectors.empty()) {
    throw DataError("no vectors in '" + vectors_path + "'");
  }

  cdm.students = plan.hot_students;
  std::sort(cdm.students.begin(), cdm.students.end());
  for (size_t i = 0; i < cdm.students.size(); ++i) {
    cdm.stu_idx.emplace(cdm.students[i], static_cast<int>(i));
  }
  for (const auto& eid : plan.hot_exercises) {
    if (!cdm.vectors.count(eid)) {
      throw DataError("no frozen vector for exercise '" + eid + "'");
    }
  }

  auto put = [&](const std::string& name, int rows, int cols) {
    cdm.params.add(name, init_named_tensor<real>(name, rows, cols, cfg.seed))
        .set_requires_grad(true);
  };
  put("stu.emb", static_cast<int>(cdm.students.size()), cdm.hc.dim);
  put("frozen.wd.w", feat_dim, cdm.hc.dim);
  put("frozen.wd.b", 1, cdm.hc.dim);
  put("frozen.wv.w", feat_dim, 2);
  put("frozen.wv.b", 1, 2);
  add_mlp_params(cdm.params, cdm.hc, cfg.seed);

  const long consumed = fit_small_cdm(cdm, corpus, plan.hot_logs, cfg);

  EvalReport r = report_shell("baseline_frozen_text", plan,
                              head_kind_name(kind), cfg.seed, corpus_hash);
  long skipped = 0;
  for (int idx : plan.test_logs) {
    const ResponseLog& log = corpus.logs[static_cast<size_t>(idx)];
    if (!cdm.knows_student(log.student)) {
      ++skipped;
      continue;
    }
    r.predictions.push_back(Prediction{log.student, log.exercise, log.correct,
                                       predict_one(cdm, corpus, log)});
  }
  r.partitions["cold_test"] = metrics_of(r.predictions);
  r.metadata["hot_consumed"] = consumed;
  r.metadata["oracle_consumed"] = 0;
  r.metadata["skipped_unknown_students"] = skipped;
  r.metadata["feature_dim"] = feat_dim;
  return r;
}

}  // namespace lmcd
