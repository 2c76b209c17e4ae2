#pragma once

#include <string>

#include "nres/hm/history_matching.hpp"

namespace nres::hm {

/// Ground truth for the history-matching twin: the base model with the
/// permeability anomaly, plus one producer connection scaled by `multiplier`.
struct TwinTruth {
  model::ReservoirModel model;
  std::string well = "P1";
  std::size_t connection = 0;  // index into the base model's producer layout
  double multiplier = 0.3;
  rates::RateSeries history;   // all wells, all report times
};

enum class HistorySource { surrogate, oracle };

/// Builds the truth for `base`: anomaly via datagen::apply_twin_anomaly, the
/// scaled connection is the middle-layer connection of `well`. Rates come from
/// the surrogate (same connection indices as the base model) or from the
/// oracle simulator with the scaled connection index.
TwinTruth make_twin_truth(const rom::Surrogate& surrogate, const model::ReservoirModel& base,
                          const oracle::FluidProperties& fluid, HistorySource source,
                          const std::string& well = "P1", double multiplier = 0.3);

}  // namespace nres::hm
