#include "lmcd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "lmcd/fileio.hpp"
#include "lmcd/metrics.hpp"
#include "lmcd/optim.hpp"

namespace lmcd {

using nlohmann::json;

namespace {

using Snapshot = std::vector<std::pair<std::string, std::vector<real>>>;

Snapshot snapshot_params(const ParamSet<real>& params) {
  Snapshot snap;
  snap.reserve(params.size());
  for (const auto& [name, t] : params.items()) snap.emplace_back(name, t.data());
  return snap;
}

// In-place restore so optimizer/graph handles keep observing the buffers.
void restore_params(ParamSet<real>& params, const Snapshot& snap) {
  for (const auto& [name, data] : snap) params.at(name).data() = data;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

struct Scored {
  std::vector<Prediction> predictions;
  long skipped = 0;
};

Scored score_logs(ModelState& state, const Corpus& corpus,
                  const std::vector<int>& log_indices,
                  const DescriptionStore* store) {
  Scored out;
  std::vector<ResponseLog> kept;
  for (int idx : log_indices) {
    const ResponseLog& log = corpus.logs[static_cast<size_t>(idx)];
    if (!state.knows_student(log.student)) {
      ++out.skipped;
      continue;
    }
    kept.push_back(log);
  }
  const std::vector<double> probs = predict_batch(state, corpus, kept, store);
  out.predictions.reserve(kept.size());
  for (size_t i = 0; i < kept.size(); ++i) {
    out.predictions.push_back(
        Prediction{kept[i].student, kept[i].exercise, kept[i].correct,
                   probs[i]});
  }
  return out;
}

PartitionMetrics metrics_of(const std::vector<Prediction>& preds) {
  std::vector<int> labels;
  std::vector<double> scores;
  labels.reserve(preds.size());
  scores.reserve(preds.size());
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

// Validation AUC, or NaN when undefined (no logs, all one class).
double validation_auc(ModelState& state, const Corpus& corpus,
                      const SplitPlan& plan, const DescriptionStore* store,
                      TrainDiagnostics& diag) {
  if (plan.oracle_logs.empty()) return std::numeric_limits<double>::quiet_NaN();
  Scored scored = score_logs(state, corpus, plan.oracle_logs, store);
  diag.oracle_consumed += static_cast<long>(scored.predictions.size());
  diag.skipped_unknown_students += scored.skipped;
  try {
    return metrics_of(scored.predictions).auc;
  } catch (const ArgumentError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

EvalOutcome evaluate_logs(ModelState& state, const Corpus& corpus,
                          const std::vector<int>& log_indices,
                          const DescriptionStore* store) {
  Scored scored = score_logs(state, corpus, log_indices, store);
  EvalOutcome out;
  out.metrics = metrics_of(scored.predictions);
  out.predictions = std::move(scored.predictions);
  out.skipped_unknown_students = scored.skipped;
  return out;
}

TrainedModel train_model(const Corpus& corpus, const SplitPlan& plan,
                         const DescriptionStore* store, ModelConfig model_cfg,
                         TrainConfig train_cfg) {
  train_cfg.validate();
  validate_split(plan, corpus);
  if (plan.hot_logs.empty()) throw DataError("split plan has no hot logs");

  TrainedModel out{build_model(corpus, plan, store, model_cfg),
                   TrainDiagnostics{}};
  ModelState& st = out.state;
  TrainDiagnostics& diag = out.diag;

  const std::unordered_set<std::string> hot_exercises(
      plan.hot_exercises.begin(), plan.hot_exercises.end());

  std::vector<std::string> clamp;
  if (st.cfg.head.kind == HeadKind::ncdm) {
    clamp = {"head.mlp.w1", "head.mlp.w2"};
  }
  Adam<real> opt(st.params, clamp);

  const long n = static_cast<long>(plan.hot_logs.size());
  const long batch = train_cfg.batch_size;
  const long steps_per_epoch = (n + batch - 1) / batch;
  const long total_steps = steps_per_epoch * train_cfg.max_epochs;
  long step = 0;

  Snapshot last_good = snapshot_params(st.params);
  Snapshot best = last_good;
  double best_auc = -1.0;
  int stale_evals = 0;

  for (int epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
    std::vector<int> order = plan.hot_logs;
    Rng shuffler(sub_seed(train_cfg.seed, "epoch", uint64_t(epoch)));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    try {
      for (long b0 = 0; b0 < n; b0 += batch) {
        const long b1 = std::min(n, b0 + batch);
        opt.zero_grads();
        const real grad_seed = static_cast<real>(1.0 / double(b1 - b0));
        for (long i = b0; i < b1; ++i) {
          const ResponseLog& log =
              corpus.logs[static_cast<size_t>(order[static_cast<size_t>(i)])];
          if (!hot_exercises.count(log.exercise)) {
            throw LeakageError("training log references cold exercise '" +
                               log.exercise + "'");
          }
          ++diag.hot_consumed;
          const auto& tokens = cached_tokens(st, corpus, log.exercise, store);
          const std::vector<real> mask =
              st.cfg.head.kind == HeadKind::ncdm
                  ? st.kc_space.q_mask(corpus.tree,
                                       corpus.exercise(log.exercise),
                                       st.cfg.head.q_mask_routes)
                  : std::vector<real>{};
          Graph<real> gr;
          LeafMap leaf = bind_params(gr, st.params);
          SampleNodes nodes = build_interaction_nodes(
              gr, leaf, st.cfg.backbone, st.cfg.head, st.cfg.variant, tokens,
              st.student_row(log.student), mask, double(log.correct));
          loss_sum += static_cast<double>(gr.value_of(nodes.loss).at(0, 0));
          gr.backward_scalar(nodes.loss, grad_seed);
        }
        const double frac = 1.0 - double(step) / double(total_steps);
        opt.step(train_cfg.lr * frac);
        ++step;
      }
    } catch (const NumericError& e) {
      restore_params(st.params, last_good);
      throw NumericError(std::string(e.what()) + " (epoch " +
                         std::to_string(epoch) +
                         "; parameters restored to last good state)");
    }

    diag.epochs_run = epoch;
    diag.epoch_train_loss.push_back(loss_sum / double(n));
    last_good = snapshot_params(st.params);

    const double val = validation_auc(st, corpus, plan, store, diag);
    diag.epoch_val_auc.push_back(val);
    if (!std::isnan(val)) {
      if (val > best_auc + 1e-12) {
        best_auc = val;
        diag.best_epoch = epoch;
        if (train_cfg.select_best) best = snapshot_params(st.params);
        stale_evals = 0;
      } else {
        ++stale_evals;
        if (train_cfg.early_stop && stale_evals >= train_cfg.patience) break;
      }
    }
  }

  if (train_cfg.select_best && diag.best_epoch > 0) {
    restore_params(st.params, best);
  }
  return out;
}

EvalReport build_report(ModelState& state, const Corpus& corpus,
                        const SplitPlan& plan, const DescriptionStore* store,
                        const std::string& tag, const TrainDiagnostics* diag,
                        uint64_t corpus_hash, const json& run_cfg) {
  EvalReport r;
  r.tag = tag;
  r.scenario = plan.scenario;
  r.fold = plan.fold;
  r.head = head_kind_name(state.cfg.head.kind);
  r.condition = condition_name(state.cfg.condition);
  r.variant = variant_name(state.cfg.variant);
  r.seed = state.cfg.seed;

  EvalOutcome test = evaluate_logs(state, corpus, plan.test_logs, store);
  r.partitions["cold_test"] = test.metrics;
  r.predictions = std::move(test.predictions);
  long skipped = test.skipped_unknown_students;

  json skipped_parts = json::array();
  if (!plan.oracle_logs.empty()) {
    try {
      EvalOutcome oracle = evaluate_logs(state, corpus, plan.oracle_logs,
                                         store);
      r.partitions["cold_oracle"] = oracle.metrics;
      skipped += oracle.skipped_unknown_students;
    } catch (const ArgumentError&) {
      skipped_parts.push_back("cold_oracle");
    }
  }

  r.metadata["config_hash"] = hex64(json_hash(run_cfg));
  r.metadata["corpus_hash"] = hex64(corpus_hash);
  r.metadata["skipped_unknown_students"] = skipped;
  r.metadata["partitions_skipped_single_class"] = skipped_parts;
  if (diag) {
    r.metadata["training"] = {
        {"epochs_run", diag->epochs_run},
        {"best_epoch", diag->best_epoch},
        {"epoch_train_loss", diag->epoch_train_loss},
        {"epoch_val_auc", diag->epoch_val_auc},
        {"hot_consumed", diag->hot_consumed},
        {"oracle_consumed", diag->oracle_consumed},
        {"test_consumed", diag->test_consumed},
        {"skipped_unknown_students", diag->skipped_unknown_students}};
  }
  r.metadata["truncation"] = {
      {"description_tokens_dropped", state.truncation.description_tokens_dropped},
      {"stem_tokens_dropped", state.truncation.stem_tokens_dropped}};
  return r;
}

void difficulty_report(ModelState& state, const Corpus& corpus,
                       const std::vector<int>& log_indices,
                       const DescriptionStore* store,
                       const std::string& out_path) {
  struct Row {
    std::string student, exercise;
    int correct;
    double difficulty;
  };
  std::vector<Row> rows;
  rows.reserve(log_indices.size());
  for (int idx : log_indices) {
    const ResponseLog& log = corpus.logs[static_cast<size_t>(idx)];
    const int row = state.student_row(log.student);
    const auto& tokens = cached_tokens(state, corpus, log.exercise, store);
    const std::vector<real> mask =
        state.cfg.head.kind == HeadKind::ncdm
            ? state.kc_space.q_mask(corpus.tree,
                                    corpus.exercise(log.exercise),
                                    state.cfg.head.q_mask_routes)
            : std::vector<real>{};
    Graph<real> gr;
    LeafMap leaf = bind_params(gr, state.params);
    SampleNodes nodes = build_interaction_nodes(
        gr, leaf, state.cfg.backbone, state.cfg.head, state.cfg.variant,
        tokens, row, mask, -1.0);
    const Tensor<real>& d = gr.value_of(nodes.cdm.d);
    double sum = 0.0, weight = 0.0;
    for (int j = 0; j < d.cols(); ++j) {
      const double w = mask.empty() ? 1.0 : double(mask[size_t(j)]);
      sum += w * double(d.at(0, j));
      weight += w;
    }
    rows.push_back(Row{log.student, log.exercise, log.correct, sum / weight});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.student != b.student ? a.student < b.student
                                  : a.exercise < b.exercise;
  });
  std::ostringstream csv;
  csv << "student,exercise,correct,difficulty\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.10g", r.difficulty);
    csv << r.student << ',' << r.exercise << ',' << r.correct << ',' << buf
        << "\n";
  }
  write_file_atomic(out_path, csv.str());
}

}  // namespace lmcd
