#include "nres/oracle/fluid.hpp"

#include <algorithm>
#include <cmath>

#include "nres/error.hpp"

namespace nres::oracle {

void FluidProperties::validate() const {
  auto pos = [](double v) { return std::isfinite(v) && v > 0; };
  if (!pos(viscosity_water) || !pos(viscosity_oil)) throw ValidationError("fluid: viscosities must be > 0");
  if (!pos(compressibility)) throw ValidationError("fluid: compressibility must be > 0");
  if (!pos(reference_pressure)) throw ValidationError("fluid: reference pressure must be > 0");
  if (!(corey_water >= 1) || !(corey_oil >= 1)) throw ValidationError("fluid: Corey exponents must be >= 1");
  if (!(residual_water >= 0) || !(residual_oil >= 0) || !(residual_water + residual_oil < 1))
    throw ValidationError("fluid: residual saturations must satisfy 0 <= s_wr + s_or < 1");
  if (!(endpoint_water > 0 && endpoint_water <= 1) || !(endpoint_oil > 0 && endpoint_oil <= 1))
    throw ValidationError("fluid: endpoint relative permeabilities must lie in (0,1]");
}

double FluidProperties::effective_saturation(double sw) const {
  return std::clamp((sw - residual_water) / (1.0 - residual_water - residual_oil), 0.0, 1.0);
}

RelPerm relative_permeability(double sw, const FluidProperties& f) {
  const double se = f.effective_saturation(sw);
  return {f.endpoint_water * std::pow(se, f.corey_water), f.endpoint_oil * std::pow(1.0 - se, f.corey_oil)};
}

RelPerm mobility(double sw, const FluidProperties& f) {
  const auto kr = relative_permeability(sw, f);
  return {kr.water / f.viscosity_water, kr.oil / f.viscosity_oil};
}

nlohmann::json to_json(const FluidProperties& f) {
  return {{"viscosity_water_pa_s", f.viscosity_water}, {"viscosity_oil_pa_s", f.viscosity_oil},
          {"compressibility_per_pa", f.compressibility}, {"reference_pressure_pa", f.reference_pressure},
          {"corey_water", f.corey_water},               {"corey_oil", f.corey_oil},
          {"residual_water", f.residual_water},         {"residual_oil", f.residual_oil},
          {"endpoint_water", f.endpoint_water},         {"endpoint_oil", f.endpoint_oil}};
}

FluidProperties fluid_from_json(const nlohmann::json& j) {
  FluidProperties f;
  f.viscosity_water = j.value("viscosity_water_pa_s", f.viscosity_water);
  f.viscosity_oil = j.value("viscosity_oil_pa_s", f.viscosity_oil);
  f.compressibility = j.value("compressibility_per_pa", f.compressibility);
  f.reference_pressure = j.value("reference_pressure_pa", f.reference_pressure);
  f.corey_water = j.value("corey_water", f.corey_water);
  f.corey_oil = j.value("corey_oil", f.corey_oil);
  f.residual_water = j.value("residual_water", f.residual_water);
  f.residual_oil = j.value("residual_oil", f.residual_oil);
  f.endpoint_water = j.value("endpoint_water", f.endpoint_water);
  f.endpoint_oil = j.value("endpoint_oil", f.endpoint_oil);
  f.validate();
  return f;
}

}  // namespace nres::oracle
