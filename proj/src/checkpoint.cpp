#include "dpm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpm/errors.hpp"

namespace dpm {
namespace {

constexpr char kMagic[4] = {'D', 'P', 'M', '1'};

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void append_f64_le(std::string& out, double x) {
  append_u64_le(out, std::bit_cast<std::uint64_t>(x));
}

double read_f64_le(const std::string& in, std::size_t pos) { return std::bit_cast<double>(read_u64_le(in, pos)); }

}  // namespace

std::string serialize_checkpoint(const DpmModel& model, const Vocab& vocab) {
  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : model.parameters().entries()) {
    params.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}});
    offset += e.tensor.numel() * sizeof(double);
  }
  const nlohmann::json manifest{
      {"format", "DPM1"}, {"config", to_json(model.config())}, {"vocab", vocab.tokens()}, {"parameters", params}};
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  append_u64_le(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& e : model.parameters().entries())
    for (double x : e.tensor.values()) append_f64_le(out, x);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("checkpoint: missing DPM1 magic");
  }
  const std::uint64_t length = read_u64_le(bytes, 4);
  if (length > bytes.size() - 12) throw DataError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, length));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("format", "") != "DPM1") throw DataError("checkpoint: unsupported format");

  ModelConfig config;
  Vocab vocab;
  try {
    config = model_config_from_json(manifest.at("config"));
    vocab = Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: bad model config: ") + e.what());
  }
  DpmModel model(config);

  const std::size_t payload = 12 + length;
  const auto& entries = model.parameters().entries();
  const auto& listed = manifest.at("parameters");
  if (!listed.is_array() || listed.size() != entries.size()) {
    throw DataError("checkpoint: parameter list does not match the model built from its config");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& item = listed[i];
    Tensor t = entries[i].tensor;
    if (item.value("name", "") != entries[i].name || item.at("shape").get<Shape>() != t.shape()) {
      throw DataError("checkpoint: parameter " + std::to_string(i) + " expected " + entries[i].name + " " +
                      shape_to_string(t.shape()));
    }
    const std::size_t offset = item.at("offset").get<std::size_t>();
    if (payload + offset + t.numel() * sizeof(double) > bytes.size()) {
      throw DataError("checkpoint: payload truncated in " + entries[i].name);
    }
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = read_f64_le(bytes, payload + offset + 8 * k);
  }
  return {std::move(model), std::move(vocab)};
}

void save_checkpoint(const std::filesystem::path& path, const DpmModel& model, const Vocab& vocab) {
  const std::string bytes = serialize_checkpoint(model, vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace dpm
