#include "lmcd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "lmcd/fileio.hpp"
#include "lmcd/rng.hpp"

namespace lmcd {
namespace {

using nlohmann::json;

std::string padded(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, i);
  return std::string(buf);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Largest-remainder quota apportionment of `total` over `weights`.
std::vector<long> quotas(const std::vector<double>& weights, long total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<long> q(weights.size(), 0);
  std::vector<std::pair<double, size_t>> rema;
  long assigned = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double share = double(total) * weights[i] / wsum;
    q[i] = static_cast<long>(std::floor(share));
    assigned += q[i];
    rema.emplace_back(-(share - std::floor(share)), i);
  }
  std::sort(rema.begin(), rema.end());
  for (long k = 0; k < total - assigned; ++k) {
    ++q[rema[static_cast<size_t>(k) % rema.size()].second];
  }
  return q;
}

}  // namespace

int difficulty_bucket(double b, int buckets) {
  const double clamped = std::min(2.0, std::max(-2.0, b));
  int bin = static_cast<int>(std::floor((clamped + 2.0) / 4.0 * buckets));
  if (bin >= buckets) bin = buckets - 1;
  if (bin < 0) bin = 0;
  return bin;
}

void synth_generate(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);

  const int n_leaves = spec.domains * spec.leaves_per_domain;

  // Knowledge tree: root -> domains -> leaves, leaves round-robin over
  // domains so every domain carries exercises.
  std::ostringstream kcs;
  kcs << json{{"id", "root"},
              {"name", "all topics"},
              {"parent", nullptr},
              {"depth", 0}}
             .dump()
      << "\n";
  std::vector<std::string> domain_ids, leaf_ids;
  for (int d = 0; d < spec.domains; ++d) {
    domain_ids.push_back(padded("d", d, 2));
    kcs << json{{"id", domain_ids.back()},
                {"name", "domain " + std::to_string(d)},
                {"parent", "root"},
                {"depth", 1}}
               .dump()
        << "\n";
  }
  for (int k = 0; k < n_leaves; ++k) {
    leaf_ids.push_back(padded("k", k, 4));
    kcs << json{{"id", leaf_ids.back()},
                {"name", "topic " + leaf_ids.back()},
                {"parent", domain_ids[static_cast<size_t>(k % spec.domains)]},
                {"depth", 2}}
               .dump()
        << "\n";
  }
  write_file_atomic(out_dir + "/kcs.jsonl", kcs.str());

  // Exercises: planted difficulty, text encodes concept id + bucket.
  Rng ex_rng(sub_seed(spec.seed, "exercises"));
  std::vector<double> difficulty(static_cast<size_t>(spec.exercises));
  std::vector<int> bucket(static_cast<size_t>(spec.exercises));
  std::vector<std::string> exercise_ids;
  std::ostringstream exs;
  for (int v = 0; v < spec.exercises; ++v) {
    exercise_ids.push_back(padded("e", v, 6));
    const std::string kc =
        leaf_ids[static_cast<size_t>(ex_rng.below(uint64_t(n_leaves)))];
    const double b = ex_rng.normal();
    difficulty[static_cast<size_t>(v)] = b;
    bucket[static_cast<size_t>(v)] = difficulty_bucket(b, spec.buckets);
    const std::string text = "item about " + kc + " at level lvl" +
                             std::to_string(bucket[static_cast<size_t>(v)]);
    exs << json{{"id", exercise_ids.back()}, {"text", text},
                {"kcs", json::array({kc})}}
               .dump()
        << "\n";
  }
  write_file_atomic(out_dir + "/exercises.jsonl", exs.str());

  // Students: planted ability; the first round(f*U) ids respond more often.
  Rng stu_rng(sub_seed(spec.seed, "abilities"));
  std::vector<double> ability(static_cast<size_t>(spec.students));
  std::vector<std::string> student_ids;
  std::vector<double> weights(static_cast<size_t>(spec.students), 1.0);
  const long heavy =
      std::lround(spec.heavy_fraction * double(spec.students));
  for (int u = 0; u < spec.students; ++u) {
    student_ids.push_back(padded("u", u, 6));
    ability[static_cast<size_t>(u)] = stu_rng.normal();
    if (u < heavy) weights[static_cast<size_t>(u)] = spec.heavy_weight;
  }

  const std::vector<long> per_student = quotas(weights, spec.logs);
  Rng log_rng(sub_seed(spec.seed, "logs"));
  std::ostringstream logs;
  for (int u = 0; u < spec.students; ++u) {
    for (long t = 0; t < per_student[static_cast<size_t>(u)]; ++t) {
      const size_t v =
          static_cast<size_t>(log_rng.below(uint64_t(spec.exercises)));
      const double p =
          sigmoid(1.7 * (ability[static_cast<size_t>(u)] - difficulty[v]));
      const int y = log_rng.uniform() < p ? 1 : 0;
      logs << json{{"student", student_ids[static_cast<size_t>(u)]},
                   {"exercise", exercise_ids[v]},
                   {"correct", y}}
                  .dump()
           << "\n";
    }
  }
  write_file_atomic(out_dir + "/logs.jsonl", logs.str());

  json truth;
  truth["spec"] = {{"students", spec.students},
                   {"exercises", spec.exercises},
                   {"logs", spec.logs},
                   {"domains", spec.domains},
                   {"leaves_per_domain", spec.leaves_per_domain},
                   {"buckets", spec.buckets},
                   {"heavy_fraction", spec.heavy_fraction},
                   {"heavy_weight", spec.heavy_weight},
                   {"seed", spec.seed}};
  json abilities = json::object();
  for (int u = 0; u < spec.students; ++u) {
    abilities[student_ids[static_cast<size_t>(u)]] =
        ability[static_cast<size_t>(u)];
  }
  json difficulties = json::object();
  json buckets_j = json::object();
  for (int v = 0; v < spec.exercises; ++v) {
    difficulties[exercise_ids[static_cast<size_t>(v)]] =
        difficulty[static_cast<size_t>(v)];
    buckets_j[exercise_ids[static_cast<size_t>(v)]] =
        bucket[static_cast<size_t>(v)];
  }
  truth["abilities"] = abilities;
  truth["difficulties"] = difficulties;
  truth["buckets"] = buckets_j;
  write_file_atomic(out_dir + "/truth.json", truth.dump(2) + "\n");
}

}  // namespace lmcd
