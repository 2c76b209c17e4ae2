#pragma once

#include "json.hpp"

namespace nres::oracle {

/// Two-phase oil/water fluid with Corey relative permeabilities and a single
/// total compressibility: pore volume V(p) = V0 * (1 + c_t * (p - p_ref)).
struct FluidProperties {
  double viscosity_water = 0.5e-3;  // Pa*s
  double viscosity_oil = 2.0e-3;    // Pa*s
  double compressibility = 1.0e-9;  // 1/Pa
  double reference_pressure = 2.0e7;  // Pa
  double corey_water = 2.0;
  double corey_oil = 2.0;
  double residual_water = 0.2;
  double residual_oil = 0.2;
  double endpoint_water = 0.6;
  double endpoint_oil = 1.0;

  void validate() const;
  /// Normalized mobile saturation clamp((s_w - s_wr) / (1 - s_wr - s_or), 0, 1).
  double effective_saturation(double sw) const;
};

struct RelPerm {
  double water = 0;
  double oil = 0;
};

RelPerm relative_permeability(double sw, const FluidProperties& fluid);

/// Phase mobilities kr / mu in 1/(Pa*s).
RelPerm mobility(double sw, const FluidProperties& fluid);

nlohmann::json to_json(const FluidProperties& fluid);
FluidProperties fluid_from_json(const nlohmann::json& j);

}  // namespace nres::oracle
