#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpm/example.hpp"
#include "dpm/model.hpp"

namespace dpm {

struct TrainOptions {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::size_t eval_every = 1;  // dev is also evaluated after the last epoch
  std::uint64_t seed = 0;      // drives the per-epoch shuffle
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
  std::string timestamp;  // ISO-8601 UTC
};

nlohmann::json to_json(const MetricsRecord& r);
std::string utc_timestamp();

// Parameter values in store order.
using Snapshot = std::vector<std::vector<double>>;
Snapshot snapshot(const ParameterStore& store);
void restore(ParameterStore& store, const Snapshot& s);

struct TrainResult {
  std::vector<MetricsRecord> records;
  Snapshot best;  // parameters at the best dev accuracy (final epoch if no dev set)
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
};

using RecordSink = std::function<void(const MetricsRecord&)>;

// Mini-batch Adam over `epochs` shuffled passes. DivergenceError propagates
// with the model holding the last finite parameters.
TrainResult train_model(DpmModel& model, const Dataset& train, const Dataset* dev, const TrainOptions& options,
                        const RecordSink& sink = {});

}  // namespace dpm
