#include "nres/hm/twin_experiment.hpp"

#include <cmath>

#include "nres/datagen/twin.hpp"
#include "nres/error.hpp"
#include "nres/oracle/simulator.hpp"

namespace nres::hm {

TwinTruth make_twin_truth(const rom::Surrogate& surrogate, const model::ReservoirModel& base,
                          const oracle::FluidProperties& fluid, HistorySource source, const std::string& well,
                          double multiplier) {
  TwinTruth truth;
  truth.model = datagen::apply_twin_anomaly(base);
  truth.well = well;
  truth.multiplier = multiplier;

  const auto table = rates::build_connections(base);
  std::size_t producer_conn = 0, table_conn = 0;
  bool found = false;
  std::size_t best_dk = SIZE_MAX;
  for (std::size_t c = 0, p = 0; c < table.connections.size(); ++c) {
    const std::size_t w = table.well_of[c];
    if (table.kinds[w] != model::WellKind::producer) continue;
    if (table.wells[w] == well) {
      const std::size_t k = table.connections[c].k, mid = base.grid.nz / 2;
      const std::size_t dk = k > mid ? k - mid : mid - k;
      if (dk < best_dk) {
        best_dk = dk;
        producer_conn = p;
        table_conn = c;
        found = true;
      }
    }
    ++p;
  }
  if (!found) throw ValidationError("twin: producer " + well + " has no connections");
  truth.connection = producer_conn;

  const std::size_t intervals = base.schedule.times.size() - 1;
  if (source == HistorySource::surrogate) {
    const RatePredictor pred(surrogate, truth.model, table, fluid);
    CorrectionSet c;
    std::vector<double> logm(pred.producer_connections(), 0.0);
    logm[producer_conn] = std::log(multiplier);
    c.log_conn = ad::Tensor::from({logm.size()}, logm);
    truth.history = pred.rate_series(c, 1, intervals);
  } else {
    oracle::SimOptions opt;
    opt.connection_multipliers.assign(table.connections.size(), 1.0);
    opt.connection_multipliers[table_conn] = multiplier;
    truth.history = oracle::run(truth.model, fluid, base.schedule.times, opt).rates;
  }
  return truth;
}

}  // namespace nres::hm
