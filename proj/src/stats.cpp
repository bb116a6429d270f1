#include "icl/stats.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include "icl/error.hpp"

namespace icl {

double chi_square_sf(double stat, int dof) {
  if (dof < 1) throw InvalidArgument("chi-square needs dof >= 1");
  if (stat <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * stat);
}

ChiSquareResult chi_square_gof(std::span<const double> counts, std::span<const double> probs) {
  if (counts.size() != probs.size() || counts.size() < 2)
    throw InvalidArgument("chi-square needs matching bins, at least two");
  double total = 0.0;
  for (double c : counts) total += c;
  if (total <= 0.0) throw InvalidArgument("chi-square needs a positive total count");
  ChiSquareResult r;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = total * probs[i];
    if (!(e > 0.0)) throw InvalidArgument("expected counts must be positive");
    r.statistic += (counts[i] - e) * (counts[i] - e) / e;
  }
  r.dof = static_cast<int>(counts.size()) - 1;
  r.p_value = chi_square_sf(r.statistic, r.dof);
  return r;
}

}  // namespace icl
