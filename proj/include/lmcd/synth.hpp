#pragma once

#include <cstdint>
#include <string>

#include "lmcd/errors.hpp"

namespace lmcd {

// Planted-oracle generator: abilities and difficulties ~ N(0,1), responses
// ~ Bernoulli(sigmoid(1.7 (theta - b))), exercise text deterministically
// encodes the concept id and a difficulty bucket so text carries transferable
// signal. A truth.json sidecar records the planted parameters.
struct SyntheticSpec {
  int students = 500;
  int exercises = 400;
  long logs = 40000;
  int domains = 3;
  int leaves_per_domain = 16;
  // Difficulty bins over [-2, 2]. Responses always use the continuous
  // difficulty; only the text is quantised. The binary default keeps text a
  // partial signal (topic + easy/hard), so models with direct access to the
  // cold response logs retain an information edge over text readers.
  int buckets = 2;
  double heavy_fraction = 0.1;  // share of students with extra activity
  double heavy_weight = 5.0;    // activity multiplier for those students
  uint64_t seed = 0;

  void validate() const {
    if (students < 1 || exercises < 1 || logs < 1) {
      throw ConfigError("synth: counts must be >= 1");
    }
    if (domains < 1 || leaves_per_domain < 1) {
      throw ConfigError("synth: tree sizes must be >= 1");
    }
    if (buckets < 1) throw ConfigError("synth: buckets must be >= 1");
    if (heavy_fraction < 0.0 || heavy_fraction > 1.0) {
      throw ConfigError("synth: heavy_fraction must lie in [0, 1]");
    }
    if (heavy_weight < 1.0) throw ConfigError("synth: heavy_weight must be >= 1");
  }
};

// Writes kcs.jsonl, exercises.jsonl, logs.jsonl, truth.json under out_dir.
// Same spec + seed regenerates byte-identical files.
void synth_generate(const SyntheticSpec& spec, const std::string& out_dir);

// Difficulty bucket index for a value, clamped into [-2, 2].
int difficulty_bucket(double b, int buckets);

}  // namespace lmcd
