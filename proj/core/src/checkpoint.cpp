#include "segrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "segrl/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts need a "
              "byte swap that is not implemented");

namespace segrl {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'R', 'L', 'C', 'K', 'P', 'T'};

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const ModelParams& params, long step,
                     const RunConfig& config,
                     const std::filesystem::path& path) {
  std::vector<float> payload;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& entry : params.store.entries()) {
    nlohmann::json e;
    e["name"] = entry.name;
    e["dtype"] = "f32";
    e["shape"] = {entry.value.rows(), entry.value.cols()};
    e["byte_offset"] = offset;
    entries.push_back(std::move(e));
    const float* data = entry.value.data();
    payload.insert(payload.end(), data, data + entry.value.size());
    offset += sizeof(float) * static_cast<std::size_t>(entry.value.size());
  }

  nlohmann::json manifest;
  manifest["schema"] = "segrl.checkpoint.v1";
  manifest["step"] = step;
  manifest["agent"] = to_string(params.agent);
  manifest["config"] = config.to_json();
  manifest["config_hash"] = hex64(config.config_hash());
  manifest["payload_bytes"] = offset;
  manifest["payload_hash"] =
      hex64(fnv1a64(payload.data(), payload.size() * sizeof(float)));
  manifest["entries"] = std::move(entries);

  const std::string manifest_text = manifest.dump();
  const uint64_t manifest_len = manifest_text.size();

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw CheckpointError("cannot open checkpoint for writing: " +
                          path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&manifest_len), sizeof(manifest_len));
  out.write(manifest_text.data(),
            static_cast<std::streamsize>(manifest_text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw CheckpointError("short write to " + path.string());
}

namespace {

struct RawCheckpoint {
  nlohmann::json manifest;
  std::vector<float> payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());

  uint64_t manifest_len = 0;
  in.read(reinterpret_cast<char*>(&manifest_len), sizeof(manifest_len));
  if (!in) throw CheckpointError("truncated manifest length");

  std::string manifest_text(manifest_len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw CheckpointError("truncated manifest");

  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("manifest parse error: ") + e.what());
  }
  if (raw.manifest.value("schema", "") != "segrl.checkpoint.v1")
    throw CheckpointError("unsupported checkpoint schema");

  const std::size_t payload_bytes = raw.manifest.at("payload_bytes");
  raw.payload.resize(payload_bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(raw.payload.data()),
          static_cast<std::streamsize>(payload_bytes));
  if (!in || static_cast<std::size_t>(in.gcount()) != payload_bytes)
    throw CheckpointError("truncated payload in " + path.string());

  const std::string want = raw.manifest.at("payload_hash");
  const std::string got =
      hex64(fnv1a64(raw.payload.data(), raw.payload.size() * sizeof(float)));
  if (want != got)
    throw CheckpointError("payload hash mismatch in " + path.string());
  return raw;
}

long fill_params(ModelParams& params, const RawCheckpoint& raw) {
  const auto& entries = raw.manifest.at("entries");
  if (entries.size() != params.store.size())
    throw CheckpointError(
        "checkpoint entry count does not match the current architecture");
  for (std::size_t i = 0; i < params.store.size(); ++i) {
    auto& target = params.store.entries()[i];
    const auto& e = entries.at(i);
    const std::string name = e.at("name");
    if (name != target.name)
      throw CheckpointError("parameter name mismatch at '" + name +
                            "' (expected '" + target.name + "')");
    const auto shape = e.at("shape");
    if (shape.at(0).get<Eigen::Index>() != target.value.rows() ||
        shape.at(1).get<Eigen::Index>() != target.value.cols())
      throw CheckpointError("parameter shape mismatch at '" + name + "'");
    if (e.at("dtype").get<std::string>() != "f32")
      throw CheckpointError("unsupported dtype at '" + name + "'");
    const std::size_t offset = e.at("byte_offset").get<std::size_t>();
    if (offset % sizeof(float) != 0 ||
        offset / sizeof(float) + static_cast<std::size_t>(target.value.size()) >
            raw.payload.size())
      throw CheckpointError("parameter payload out of bounds at '" + name + "'");
    std::memcpy(target.value.data(), raw.payload.data() + offset / sizeof(float),
                sizeof(float) * static_cast<std::size_t>(target.value.size()));
  }
  return raw.manifest.at("step").get<long>();
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  LoadedCheckpoint out;
  try {
    out.config = RunConfig::from_json(raw.manifest.at("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config invalid: ") + e.what());
  }
  out.params =
      init_params<float>(out.config.arch, out.config.agent, out.config.seed);
  out.step = fill_params(out.params, raw);
  return out;
}

long load_checkpoint_into(ModelParams& params,
                          const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  return fill_params(params, raw);
}

}  // namespace segrl
