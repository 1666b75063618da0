#include "dpm/training.hpp"

#include <chrono>
#include <ctime>
#include <numeric>

#include "dpm/errors.hpp"
#include "dpm/random.hpp"

namespace dpm {

nlohmann::json to_json(const MetricsRecord& r) {
  return {{"epoch", r.epoch}, {"split", r.split},         {"loss", r.loss},
          {"accuracy", r.accuracy}, {"n", r.n}, {"timestamp", r.timestamp}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Snapshot snapshot(const ParameterStore& store) {
  Snapshot s;
  for (const auto& e : store.entries()) {
    const auto v = e.tensor.values();
    s.emplace_back(v.begin(), v.end());
  }
  return s;
}

void restore(ParameterStore& store, const Snapshot& s) {
  const auto& entries = store.entries();
  if (s.size() != entries.size()) throw ContractError("snapshot does not match the parameter store");
  for (std::size_t i = 0; i < s.size(); ++i) {
    Tensor t = entries[i].tensor;
    auto v = t.mutable_values();
    if (v.size() != s[i].size()) throw ContractError("snapshot size mismatch in " + entries[i].name);
    std::copy(s[i].begin(), s[i].end(), v.begin());
  }
}

TrainResult train_model(DpmModel& model, const Dataset& train, const Dataset* dev, const TrainOptions& options,
                        const RecordSink& sink) {
  if (train.empty()) throw DataError("training set is empty");
  if (options.epochs == 0) throw ConfigError("epochs", "epochs must be at least 1");
  if (options.batch_size == 0) throw ConfigError("batch_size", "batch_size must be at least 1");
  const std::size_t eval_every = options.eval_every == 0 ? 1 : options.eval_every;

  TrainResult result;
  auto emit = [&](MetricsRecord r) {
    r.timestamp = utc_timestamp();
    if (sink) sink(r);
    result.records.push_back(std::move(r));
  };

  Adam adam(model.parameters());
  Rng rng(options.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  bool have_best = false;
  Dataset batch;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0, correct = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      const StepMetrics m = train_step(model, adam, batch, options.lr);
      loss_sum += m.loss * static_cast<double>(batch.size());
      correct += m.accuracy * static_cast<double>(batch.size());
    }
    const double n = static_cast<double>(train.size());
    emit({epoch, "train", loss_sum / n, correct / n, train.size(), {}});

    if (dev && !dev->empty() && (epoch % eval_every == 0 || epoch == options.epochs)) {
      const EvalMetrics d = evaluate(model, *dev);
      emit({epoch, "dev", d.loss, d.accuracy, d.n, {}});
      if (!have_best || d.accuracy > result.best_dev_accuracy) {
        have_best = true;
        result.best_dev_accuracy = d.accuracy;
        result.best_epoch = epoch;
        result.best = snapshot(model.parameters());
      }
    }
  }
  if (!have_best) {
    result.best_epoch = options.epochs;
    result.best = snapshot(model.parameters());
  }
  return result;
}

}  // namespace dpm
