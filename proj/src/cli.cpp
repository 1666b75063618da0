#include "dpm/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "dpm/checkpoint.hpp"
#include "dpm/data.hpp"
#include "dpm/errors.hpp"
#include "dpm/grad_check.hpp"
#include "dpm/random.hpp"

namespace dpm::cli {
namespace {

const std::vector<std::string>& run_keys() {
  static const std::vector<std::string> keys{"train",  "dev",        "test",   "lexicon",
                                             "checkpoint_dir", "lr", "batch_size", "epochs", "eval_every"};
  return keys;
}

bool is_key(const std::vector<std::string>& keys, const std::string& k) {
  return std::find(keys.begin(), keys.end(), k) != keys.end();
}

std::string read_text(const std::filesystem::path& path, const std::string& field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(field, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t size_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(key, "field \"" + key + "\" must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::string string_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "field \"" + key + "\" must be a string");
  return v.get<std::string>();
}

// Tees the human-readable log to stderr and, once opened, run.log.
class HumanLog {
 public:
  explicit HumanLog(std::ostream& err) : err_(err) {}
  void open(const std::filesystem::path& path) { file_.open(path, std::ios::trunc); }
  template <typename T>
  HumanLog& operator<<(const T& v) {
    err_ << v;
    if (file_) file_ << v;
    return *this;
  }

 private:
  std::ostream& err_;
  std::ofstream file_;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct LoadedData {
  Vocab vocab;
  Lexicon lexicon;
  Dataset train, dev, test;
};

LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  const auto raw_train = read_jsonl(c.train, c.model.n_classes);
  const Lexicon* lex = nullptr;
  if (!c.lexicon.empty()) {
    d.lexicon = load_lexicon(c.lexicon);
    lex = &d.lexicon;
  }
  d.vocab = build_vocab(raw_train, lex);
  d.train = to_dataset(raw_train, d.vocab);
  if (!c.dev.empty()) d.dev = load_jsonl(c.dev, d.vocab, c.model.n_classes);
  if (!c.test.empty()) d.test = load_jsonl(c.test, d.vocab, c.model.n_classes);
  return d;
}

ModelConfig model_for(const RunConfig& c, const Vocab& vocab) {
  ModelConfig m = c.model;
  if (!c.vocab_size_set) {
    m.vocab_size = vocab.size();
  } else if (m.vocab_size < vocab.size()) {
    throw ConfigError("vocab_size", "vocab_size " + std::to_string(m.vocab_size) + " is smaller than the " +
                                        std::to_string(vocab.size()) + " tokens in the training data");
  }
  m.validate();
  return m;
}

std::vector<std::string> with_program(const std::vector<std::string>& args) {
  std::vector<std::string> v{"dpm"};
  v.insert(v.end(), args.begin(), args.end());
  return v;
}

void emit_json(std::ostream& out, const nlohmann::json& j) { out << j.dump() << '\n' << std::flush; }

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  return run_config_from_json(load_config_document(path, overrides, std::getenv("DPM_SEED")));
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out,
              std::ostream& err) {
  const RunConfig c = load_run_config(config_path, overrides);
  validate_run_config(c);
  const LoadedData data = load_data(c);
  DpmModel model(model_for(c, data.vocab));

  const std::filesystem::path dir = c.checkpoint_dir;
  std::filesystem::create_directories(dir);
  HumanLog log(err);
  log.open(dir / "run.log");
  log << "model parameters: " << model.parameters().total_numel()
      << " (active: " << model.active_parameter_count() << ")\n";
  log << "epoch  split   loss      accuracy  n\n";
  auto sink = [&](const MetricsRecord& r) {
    emit_json(out, to_json(r));
    log << std::setw(5) << r.epoch << "  " << std::left << std::setw(6) << r.split << std::right << "  "
        << fixed(r.loss) << "    " << fixed(r.accuracy) << "    " << r.n << '\n';
  };

  TrainResult result;
  try {
    result = train_model(model, data.train, c.dev.empty() ? nullptr : &data.dev, c.train_options(), sink);
  } catch (const DivergenceError& e) {
    save_checkpoint(dir / "last_good.dpm", model, data.vocab);
    log << "diverged: " << e.what() << "; wrote " << (dir / "last_good.dpm").string() << '\n';
    return kExitDivergence;
  }
  save_checkpoint(dir / "final.dpm", model, data.vocab);
  restore(model.parameters(), result.best);
  save_checkpoint(dir / "best.dpm", model, data.vocab);
  log << "best epoch " << result.best_epoch << "; wrote best.dpm and final.dpm to " << dir.string() << '\n';
  if (!c.test.empty()) {
    const EvalMetrics t = evaluate(model, data.test);
    sink({result.best_epoch, "test", t.loss, t.accuracy, t.n, utc_timestamp()});
  }
  return kExitOk;
}

nlohmann::json weight_rows(const Tensor& w, const Mask& rows) {
  nlohmann::json out = nlohmann::json::array();
  const std::size_t cols = w.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i]) continue;
    std::vector<double> r(cols);
    for (std::size_t j = 0; j < cols; ++j) r[j] = w.at(i, j);
    out.push_back(r);
  }
  return out;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& dump_path,
             std::ostream& out, std::ostream& err) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const ModelConfig& mc = ckpt.model.config();
  if (ckpt.vocab.size() > mc.vocab_size) {
    throw ConfigError("vocab", "checkpoint vocabulary is larger than its model's vocab_size");
  }
  const auto raw = read_jsonl(data_path, mc.n_classes);
  const Dataset data = to_dataset(raw, ckpt.vocab);
  std::size_t known = 0;
  for (const auto& e : data) {
    for (std::size_t id : e.s1) known += id != special::kUnk;
    for (std::size_t id : e.s2) known += id != special::kUnk;
  }
  if (!data.empty() && known == 0) {
    throw ConfigError("vocab", "no token of " + data_path + " is in the checkpoint vocabulary");
  }
  const EvalMetrics m = evaluate(ckpt.model, data);
  emit_json(out, {{"split", "eval"}, {"loss", m.loss}, {"accuracy", m.accuracy}, {"n", m.n}});
  err << "eval " << data_path << ": loss " << fixed(m.loss) << "  accuracy " << fixed(m.accuracy) << "  n " << m.n
      << '\n';

  if (!dump_path.empty()) {
    std::ofstream dump(dump_path, std::ios::trunc);
    if (!dump) throw ConfigError("dump-attention", "cannot write " + dump_path);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const ExampleTrace t = ckpt.model.trace(data[i].s1, data[i].s2);
      const Mask& rows = t.encoded.mask_v;
      std::vector<std::size_t> positions;
      for (std::size_t k = 0; k < rows.size(); ++k)
        if (rows[k]) positions.push_back(k);
      const Prediction p = make_prediction(t.logits.values());
      nlohmann::json j{{"index", i}, {"label", data[i].label}, {"prediction", p.label}, {"positions", positions}};
      if (t.dot.weights.defined()) j["dot"] = weight_rows(t.dot.weights, rows);
      if (t.subtract.weights.defined()) j["subtract"] = weight_rows(t.subtract.weights, rows);
      if (t.path_weights.defined()) j["path_weights"] = weight_rows(t.path_weights, rows);
      dump << j.dump() << '\n';
    }
    err << "wrote attention for " << data.size() << " examples to " << dump_path << '\n';
  }
  return kExitOk;
}

std::optional<OpKind> parse_op(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(OpKind::kPickRows); ++k) {
    const auto kind = static_cast<OpKind>(k);
    if (op_name(kind) == name) return kind;
  }
  throw ConfigError("inject-fault", "unknown op \"" + name + "\"");
}

Dataset gradcheck_batch(const ModelConfig& c) {
  Rng rng(c.seed ^ 0xC0FFEEULL);
  Dataset batch;
  for (std::size_t b = 0; b < 2; ++b) {
    Example e;
    const std::size_t hi = std::max<std::size_t>(c.max_len, 2);
    for (auto* s : {&e.s1, &e.s2}) {
      const std::size_t len = rng.range(std::min<std::size_t>(2, hi), hi);
      for (std::size_t i = 0; i < len; ++i) s->push_back(rng.range(special::kCount, c.vocab_size - 1));
    }
    e.label = b % c.n_classes;
    batch.push_back(std::move(e));
  }
  return batch;
}

int cmd_gradcheck(const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& fault_op, double fault_factor, std::ostream& out, std::ostream& err) {
  ModelConfig mc = tiny_gradcheck_config();
  if (!config_path.empty() || !overrides.empty()) {
    nlohmann::json doc = config_path.empty() ? nlohmann::json(to_json(mc))
                                             : load_config_document(config_path, overrides, std::getenv("DPM_SEED"));
    if (config_path.empty())
      for (const auto& o : overrides) apply_override(doc, o);
    const RunConfig rc = run_config_from_json(doc);
    mc = rc.model;
  }
  mc.validate();
  DpmModel model(mc);
  const std::size_t n_params = model.parameters().total_numel();
  if (n_params > kGradcheckMaxParams) {
    throw ConfigError("d_v", "gradcheck needs a model of at most " + std::to_string(kGradcheckMaxParams) +
                                 " parameters; this config has " + std::to_string(n_params));
  }
  struct FaultGuard {
    ~FaultGuard() { debug::inject_backward_fault(std::nullopt); }
  } guard;
  if (!fault_op.empty()) debug::inject_backward_fault(parse_op(fault_op), fault_factor);

  const Dataset batch = gradcheck_batch(mc);
  std::vector<std::size_t> labels;
  for (const auto& e : batch) labels.push_back(e.label);
  auto loss = [&] {
    std::vector<Tensor> logits;
    for (const auto& e : batch) logits.push_back(model.logits(e.s1, e.s2));
    return cross_entropy(logits, labels);
  };

  constexpr double kTolerance = 1e-4;
  const auto start = std::chrono::steady_clock::now();
  const GradCheckReport report = grad_check(loss, model.parameters().entries());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  err << std::left << std::setw(40) << "parameter" << std::right << std::setw(8) << "numel" << "  max_rel_error\n";
  std::string worst_name;
  double worst = 0.0;
  for (const auto& p : report.parameters) {
    emit_json(out, {{"parameter", p.name},
                    {"numel", p.numel},
                    {"max_rel_error", p.max_rel_error},
                    {"worst_index", p.worst_index},
                    {"analytic", p.worst_analytic},
                    {"numeric", p.worst_numeric},
                    {"pass", p.max_rel_error < kTolerance}});
    err << std::left << std::setw(40) << p.name << std::right << std::setw(8) << p.numel << "  "
        << std::scientific << std::setprecision(3) << p.max_rel_error << std::defaultfloat << '\n';
    if (worst_name.empty() || p.max_rel_error > worst) {
      worst = p.max_rel_error;
      worst_name = p.name;
    }
  }
  const bool passed = report.passed(kTolerance);
  emit_json(out, {{"summary", "gradcheck"},
                  {"parameters", report.parameters.size()},
                  {"numel", n_params},
                  {"worst_parameter", worst_name},
                  {"max_rel_error", report.max_rel_error()},
                  {"tolerance", kTolerance},
                  {"seconds", seconds},
                  {"passed", passed}});
  if (!passed) {
    err << "gradcheck FAILED: worst parameter " << worst_name << " has relative error " << report.max_rel_error()
        << " >= " << kTolerance << '\n';
    for (const auto& p : report.parameters)
      if (p.max_rel_error >= kTolerance) err << "  failing: " << p.name << '\n';
    return kExitCheckFailed;
  }
  err << "gradcheck passed: worst relative error " << report.max_rel_error() << " (" << worst_name << ") in "
      << fixed(seconds, 2) << " s\n";
  return kExitOk;
}

int cmd_synth(const SynthTaskSpec& spec, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const SynthData data = gen_synthetic(spec);
  const std::filesystem::path dir = out_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("out", "cannot create " + dir.string() + ": " + ec.message());
  save_jsonl(dir / "train.jsonl", data.train);
  save_jsonl(dir / "dev.jsonl", data.dev);
  save_jsonl(dir / "test.jsonl", data.test);
  save_lexicon(dir / "lexicon.json", data.lexicon);
  err << "split  n      label_0  label_1  fraction_1\n";
  for (const auto& [name, split] : {std::pair{"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}}) {
    const Balance b = class_balance(*split, 2);
    emit_json(out, {{"split", name},
                    {"n", b.n},
                    {"label_0", b.counts[0]},
                    {"label_1", b.counts[1]},
                    {"fraction_1", b.fraction(1)},
                    {"within_bounds", balanced(b)}});
    err << std::left << std::setw(5) << name << std::right << "  " << std::setw(5) << b.n << "  " << std::setw(7)
        << b.counts[0] << "  " << std::setw(7) << b.counts[1] << "  " << fixed(b.fraction(1), 3) << '\n';
  }
  err << "task " << synth_task_name(spec.task) << ", seed " << spec.seed << ": wrote train/dev/test.jsonl and "
      << "lexicon.json to " << dir.string() << " (allowed balance [0.45, 0.55])\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out,
               std::ostream& err) {
  const RunConfig c = load_run_config(config_path, overrides);
  validate_run_config(c);
  const LoadedData data = load_data(c);
  const ModelConfig base = model_for(c, data.vocab);

  err << std::left << std::setw(26) << "variant" << std::right << std::setw(10) << "dev_acc" << std::setw(10)
      << "test_acc" << std::setw(15) << "active_params\n";
  for (const auto& [name, switches] : ablation_variants()) {
    ModelConfig mc = base;
    mc.ablation = switches;
    DpmModel model(mc);
    TrainResult r;
    try {
      r = train_model(model, data.train, c.dev.empty() ? nullptr : &data.dev, c.train_options());
    } catch (const DivergenceError& e) {
      err << name << " diverged: " << e.what() << '\n';
      return kExitDivergence;
    }
    restore(model.parameters(), r.best);
    nlohmann::json row{{"variant", name}, {"active_params", model.active_parameter_count()}, {"best_epoch", r.best_epoch}};
    row["dev_accuracy"] = c.dev.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.best_dev_accuracy);
    row["test_accuracy"] = c.test.empty() ? nlohmann::json(nullptr) : nlohmann::json(evaluate(model, data.test).accuracy);
    emit_json(out, row);
    auto cell = [](const nlohmann::json& v) { return v.is_null() ? std::string("-") : fixed(v.get<double>()); };
    err << std::left << std::setw(26) << name << std::right << std::setw(10) << cell(row["dev_accuracy"])
        << std::setw(10) << cell(row["test_accuracy"]) << std::setw(14) << model.active_parameter_count() << '\n';
  }
  return kExitOk;
}

int cmd_perturb(const std::string& data_path, const std::string& lexicon_path, const std::string& transform_name_,
                const std::string& checkpoint, std::uint64_t seed, std::size_t negative_label, std::size_t n_classes,
                const std::string& out_path, std::ostream& out, std::ostream& err) {
  const Transform transform = parse_transform(transform_name_);
  const Lexicon lexicon = load_lexicon(lexicon_path);
  std::optional<Checkpoint> ckpt;
  if (!checkpoint.empty()) {
    ckpt.emplace(load_checkpoint(checkpoint));
    n_classes = ckpt->model.config().n_classes;
  }
  if (negative_label >= n_classes) throw ConfigError("negative-label", "negative label is not a valid class");
  const auto raw = read_jsonl(data_path, n_classes);
  const Vocab vocab = ckpt ? ckpt->vocab : build_vocab(raw, &lexicon);
  const Dataset original = to_dataset(raw, vocab);
  const PerturbResult p = perturb(original, transform, lexicon, vocab, seed, negative_label);
  if (!out_path.empty()) save_jsonl(out_path, p.data);

  nlohmann::json j{{"transform", transform_name(transform)},
                   {"n", original.size()},
                   {"perturbed", p.data.size()},
                   {"dropped", p.dropped}};
  err << transform_name(transform) << ": perturbed " << p.data.size() << " of " << original.size()
      << " examples, dropped " << p.dropped << '\n';
  if (ckpt) {
    const double before = evaluate(ckpt->model, original).accuracy;
    const double after = evaluate(ckpt->model, p.data).accuracy;
    j["original_accuracy"] = before;
    j["perturbed_accuracy"] = after;
    j["drop"] = before - after;
    err << "accuracy " << fixed(before) << " -> " << fixed(after) << " (drop " << fixed(before - after) << ")\n";
  }
  emit_json(out, j);
  return kExitOk;
}

}  // namespace

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.lr = lr;
  o.batch_size = batch_size;
  o.epochs = epochs;
  o.eval_every = eval_every;
  o.seed = model.seed;
  return o;
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config", "config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!is_key(model_config_keys(), key) && !is_key(run_keys(), key)) {
      throw ConfigError(key, "unknown field \"" + key + "\"");
    }
  }
  RunConfig c;
  c.model = model_config_from_json(doc);
  c.vocab_size_set = doc.contains("vocab_size");
  for (auto [key, target] : {std::pair{"train", &c.train}, {"dev", &c.dev}, {"test", &c.test},
                             {"lexicon", &c.lexicon}, {"checkpoint_dir", &c.checkpoint_dir}}) {
    if (doc.contains(key)) *target = string_value(doc.at(key), key);
  }
  if (doc.contains("lr")) {
    if (!doc.at("lr").is_number()) throw ConfigError("lr", "field \"lr\" must be a number");
    c.lr = doc.at("lr").get<double>();
  }
  if (doc.contains("batch_size")) c.batch_size = size_value(doc.at("batch_size"), "batch_size");
  if (doc.contains("epochs")) c.epochs = size_value(doc.at("epochs"), "epochs");
  if (doc.contains("eval_every")) c.eval_every = size_value(doc.at("eval_every"), "eval_every");
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = to_json(c.model);
  if (!c.vocab_size_set) j.erase("vocab_size");
  j["train"] = c.train;
  j["dev"] = c.dev;
  j["test"] = c.test;
  j["lexicon"] = c.lexicon;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["eval_every"] = c.eval_every;
  return j;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("set", "override \"" + assignment + "\" is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (value.is_object() || value.is_array()) throw ConfigError(key, "--set only accepts scalar values");
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
    node = &(*node)[key.substr(start, dot - start)];
    if (!node->is_object() && !node->is_null()) throw ConfigError(key, "\"" + key + "\" does not name a field");
    start = dot + 1;
  }
  (*node)[key.substr(start)] = value;
}

nlohmann::json load_config_document(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                                     const char* env_seed) {
  nlohmann::json doc = nlohmann::json::parse(read_text(path, "config"), nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config", path.string() + " is not valid JSON");
  if (!doc.is_object()) throw ConfigError("config", path.string() + " must hold a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  if (!doc.contains("seed") && env_seed && *env_seed) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env_seed, &end, 10);
    if (*end != '\0') throw ConfigError("seed", std::string("DPM_SEED=\"") + env_seed + "\" is not an integer");
    doc["seed"] = static_cast<std::uint64_t>(s);
  }
  return doc;
}

void validate_run_config(const RunConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs", "epochs must be at least 1");
  if (c.batch_size < 1) throw ConfigError("batch_size", "batch_size must be at least 1");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr", "lr must be a finite non-negative number");
  if (c.train.empty()) throw ConfigError("train", "field \"train\" is required");
  for (auto [key, path] : {std::pair{"train", &c.train}, {"dev", &c.dev}, {"test", &c.test}, {"lexicon", &c.lexicon}}) {
    if (!path->empty() && !std::filesystem::is_regular_file(*path)) {
      throw ConfigError(key, "field \"" + std::string(key) + "\": no such file " + *path);
    }
  }
  ModelConfig probe = c.model;
  if (!c.vocab_size_set) probe.vocab_size = special::kCount + 1;
  probe.validate();
}

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.d_v = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_len = 6;
  c.vocab_size = 16;
  c.n_classes = 2;
  c.seed = 1;
  return c;
}

std::vector<std::pair<std::string, AblationSwitches>> ablation_variants() {
  return {
      {"Full model", {true, true, true, true}},
      {"w/o Dot-attention", {false, true, true, true}},
      {"w/o Subtract-attention", {true, false, true, true}},
      {"w/o Dual Attention", {false, false, true, true}},
      {"w/o Internal Fusion", {true, true, false, true}},
      {"w/o External Fusion", {true, true, true, false}},
  };
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DPM-Net sentence matching: train, evaluate and verify"};
  app.require_subcommand(1);
  std::vector<std::string> overrides;

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("config", config_path, "run config JSON")->required();
  train->add_option("--set", overrides, "override a config field, key=value");

  std::string checkpoint, data_path, dump_path;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL dataset");
  eval->add_option("checkpoint", checkpoint, "DPM1 checkpoint")->required();
  eval->add_option("data", data_path, "JSONL dataset")->required();
  eval->add_option("--dump-attention", dump_path, "write per-example attention weights as JSONL");

  std::string fault_op;
  double fault_factor = 1.5;
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  grad->add_option("config", config_path, "run config JSON (default: built-in tiny model)");
  grad->add_option("--set", overrides, "override a config field, key=value");
  grad->add_option("--inject-fault", fault_op, "scale the backward rule of this op (negative control)");
  grad->add_option("--fault-factor", fault_factor, "gradient scale used by --inject-fault");

  SynthTaskSpec spec;
  std::string task = "SWAP_ANT", out_dir;
  auto* synth = app.add_subcommand("synth", "generate a synthetic task and its lexicon");
  synth->add_option("--task", task, "OVERLAP, SWAP_ANT or PARAPHRASE");
  synth->add_option("--size", spec.n_examples, "number of examples");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--vocab", spec.vocab_size, "word tokens");
  synth->add_option("--min-len", spec.min_len, "shortest sentence");
  synth->add_option("--max-len", spec.max_len, "longest sentence");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train the six ablation variants");
  ablate->add_option("config", config_path, "run config JSON")->required();
  ablate->add_option("--set", overrides, "override a config field, key=value");

  std::string lexicon_path, transform = "SwapAnt", perturb_out;
  std::uint64_t perturb_seed = 0;
  std::size_t negative_label = 0, n_classes = 2;
  auto* pert = app.add_subcommand("perturb", "apply a lexicon perturbation and report the accuracy change");
  pert->add_option("--data", data_path, "JSONL dataset")->required();
  pert->add_option("--lexicon", lexicon_path, "lexicon JSON")->required();
  pert->add_option("--transform", transform, "SwapSyn, SwapAnt, InsertTok or DeleteTok");
  pert->add_option("--checkpoint", checkpoint, "evaluate this model before and after");
  pert->add_option("--seed", perturb_seed, "perturbation seed");
  pert->add_option("--negative-label", negative_label, "label assigned by SwapAnt");
  pert->add_option("--n-classes", n_classes, "label range when no checkpoint is given");
  pert->add_option("--out", perturb_out, "write the perturbed dataset here");

  std::vector<std::string> argv_storage = with_program(args);
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, overrides, out, err);
    if (*eval) return cmd_eval(checkpoint, data_path, dump_path, out, err);
    if (*grad) return cmd_gradcheck(config_path, overrides, fault_op, fault_factor, out, err);
    if (*synth) {
      spec.task = parse_synth_task(task);
      return cmd_synth(spec, out_dir, out, err);
    }
    if (*ablate) return cmd_ablate(config_path, overrides, out, err);
    if (*pert) {
      return cmd_perturb(data_path, lexicon_path, transform, checkpoint, perturb_seed, negative_label, n_classes,
                         perturb_out, out, err);
    }
  } catch (const ConfigError& e) {
    err << "config error [" << e.field() << "]: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace dpm::cli
