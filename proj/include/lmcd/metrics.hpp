#pragma once

#include <vector>

namespace lmcd {

// Mann-Whitney AUC with half credit for score ties. Requires both classes
// present (single-class AUC is an error, not 0.5).
double metric_auc(const std::vector<int>& labels,
                  const std::vector<double>& scores);

// Fraction of correct predictions; scores >= threshold count as positive.
double metric_acc(const std::vector<int>& labels,
                  const std::vector<double>& scores, double threshold = 0.5);

double metric_rmse(const std::vector<int>& labels,
                   const std::vector<double>& scores);

}  // namespace lmcd
