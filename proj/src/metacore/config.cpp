#include "metakey/metacore/config.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace metakey::metacore {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::maml:
      return "maml";
    case Mode::maml_pp:
      return "maml_pp";
    case Mode::anil_pp:
      return "anil_pp";
  }
  return "maml_pp";
}

Mode parse_mode(std::string_view text) {
  if (text == "maml") return Mode::maml;
  if (text == "maml_pp" || text == "maml++") return Mode::maml_pp;
  if (text == "anil_pp" || text == "anil++") return Mode::anil_pp;
  throw std::invalid_argument("unknown meta mode '" + std::string(text) + "'");
}

void MetaConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("meta config: " + what); };
  if (episodes <= 0) fail("episodes must be positive");
  if (meta_batch <= 0) fail("meta_batch must be positive");
  if (k <= 0) fail("k must be positive");
  if (q <= 0) fail("q must be positive");
  if (inner_steps < 0) fail("inner_steps must be non-negative");
  if (!(inner_rate_init > 0.0)) fail("inner_rate_init must be positive");
  if (!(outer_rate > 0.0)) fail("outer_rate must be positive");
  if (!(outer_rate_floor > 0.0)) fail("outer_rate_floor must be positive");
  if (outer_rate_floor > outer_rate) fail("outer_rate_floor must not exceed outer_rate");
  if (!(msl_fraction >= 0.0 && msl_fraction <= 1.0)) fail("msl_fraction must lie in [0, 1]");
  if (!(first_order_fraction >= 0.0 && first_order_fraction <= 1.0)) {
    fail("first_order_fraction must lie in [0, 1]");
  }
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in (0, 1]");
}

std::int64_t MetaConfig::bn_set_count() const {
  if (per_step_bn()) return inner_steps;
  return inner_steps > 0 ? 1 : 0;
}

std::int64_t MetaConfig::bn_set_for_step(std::int64_t step) const {
  if (step < 0 || step >= inner_steps) {
    throw std::out_of_range("inner step " + std::to_string(step) + " is outside [0, " +
                            std::to_string(inner_steps) + ")");
  }
  return per_step_bn() ? step : 0;
}

}  // namespace metakey::metacore
