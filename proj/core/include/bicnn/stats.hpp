#pragma once

#include <span>

namespace bicnn::stats {

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
};

Summary summarize(std::span<const double> values);

/// Two-sided exact sign test on paired samples; ties are dropped. Returns 1
/// when every pair ties.
double sign_test_p_value(std::span<const double> a, std::span<const double> b);

}  // namespace bicnn::stats
