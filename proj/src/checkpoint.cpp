#include "focuskit/checkpoint.hpp"

#include <cstdio>

#include "focuskit/error.hpp"
#include "focuskit/tensor_io.hpp"

namespace focuskit {

using nlohmann::json;

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

CheckpointPaths CheckpointPaths::in(const std::filesystem::path& dir,
                                    const std::string& stem) {
  return {dir / (stem + ".ckpt"), dir / (stem + ".json")};
}

std::string save_checkpoint(const CheckpointPaths& paths,
                            const json& topology,
                            std::span<const nn::Param* const> params) {
  std::vector<double> flat;
  json entries = json::array();
  for (const nn::Param* p : params) {
    entries.push_back(
        {{"name", p->name}, {"shape", p->shape}, {"offset", flat.size()}});
    flat.insert(flat.end(), p->value.begin(), p->value.end());
  }
  const std::size_t shape[] = {flat.size()};
  const std::string bytes = encode_tensor(shape, flat);
  write_file(paths.weights, bytes);
  const std::string checksum = fnv1a_hex(bytes);
  const json sidecar = {
      {"topology", topology},
      {"params", std::move(entries)},
      {"checksum", checksum},
  };
  write_file(paths.topology, sidecar.dump(2) + "\n");
  return checksum;
}

namespace {

json read_sidecar(const CheckpointPaths& paths) {
  if (!std::filesystem::exists(paths.topology)) {
    throw CheckpointError("missing checkpoint topology " +
                          paths.topology.string());
  }
  try {
    return json::parse(read_file(paths.topology));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed topology " + paths.topology.string() +
                          ": " + e.what());
  }
}

}  // namespace

json read_topology(const CheckpointPaths& paths) {
  const json sidecar = read_sidecar(paths);
  if (!sidecar.contains("topology")) {
    throw CheckpointError(paths.topology.string() + ": no topology section");
  }
  return sidecar["topology"];
}

LoadedCheckpoint load_checkpoint(const CheckpointPaths& paths,
                                 std::span<nn::Param* const> params) {
  const json sidecar = read_sidecar(paths);
  if (!std::filesystem::exists(paths.weights)) {
    throw CheckpointError("missing checkpoint " + paths.weights.string());
  }
  const std::string bytes = read_file(paths.weights);
  LoadedCheckpoint loaded;
  loaded.checksum = fnv1a_hex(bytes);
  try {
    if (sidecar.at("checksum").get<std::string>() != loaded.checksum) {
      throw CheckpointError(paths.weights.string() +
                            ": checksum does not match its topology sidecar");
    }
    loaded.topology = sidecar.at("topology");
    Tensor tensor;
    try {
      tensor = decode_tensor(bytes);
    } catch (const FormatError& e) {
      throw CheckpointError(paths.weights.string() + ": " + e.what());
    }
    const json& entries = sidecar.at("params");
    if (entries.size() != params.size()) {
      throw CheckpointError(paths.topology.string() + ": expected " +
                            std::to_string(params.size()) +
                            " parameter tensors, found " +
                            std::to_string(entries.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      nn::Param& p = *params[k];
      const json& entry = entries[k];
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      if (entry.at("name").get<std::string>() != p.name || shape != p.shape ||
          offset + p.size() > tensor.data.size()) {
        throw CheckpointError(paths.topology.string() + ": parameter " +
                              p.name + " does not match the model topology");
      }
      std::copy(tensor.data.begin() + static_cast<std::ptrdiff_t>(offset),
                tensor.data.begin() +
                    static_cast<std::ptrdiff_t>(offset + p.size()),
                p.value.begin());
    }
  } catch (const json::exception& e) {
    throw CheckpointError(paths.topology.string() + ": " + e.what());
  }
  return loaded;
}

}  // namespace focuskit
