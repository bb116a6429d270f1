#pragma once

#include <span>

namespace icl {

/// Upper tail P(X > stat) of a chi-square law with dof degrees of freedom.
double chi_square_sf(double stat, int dof);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Pearson goodness-of-fit of integer counts against expected probabilities.
ChiSquareResult chi_square_gof(std::span<const double> counts, std::span<const double> probs);

}  // namespace icl
