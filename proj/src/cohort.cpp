#include "focuskit/cohort.hpp"

#include <set>

#include "focuskit/error.hpp"
#include "focuskit/tensor_io.hpp"
#include "json.hpp"

namespace focuskit {

using nlohmann::json;

namespace {

template <typename T>
T require(const json& object, const char* key, const std::string& where) {
  if (!object.contains(key)) {
    throw FormatError(where + ": missing field '" + key + "'");
  }
  try {
    return object.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

ManifestEntry parse_entry(const json& item, std::size_t index) {
  const std::string where = "manifest volume " + std::to_string(index);
  if (!item.is_object()) throw FormatError(where + " is not an object");
  ManifestEntry entry;
  entry.patient_id = require<std::string>(item, "patient_id", where);
  const std::string named = "manifest patient " + entry.patient_id;
  entry.center_id = require<std::string>(item, "center_id", named);
  entry.tensor_path = require<std::string>(item, "path", named);
  const auto split = parse_split(require<std::string>(item, "split", named));
  if (!split) throw FormatError(named + ": unknown split");
  entry.split = *split;
  const auto disease =
      parse_disease(require<std::string>(item, "disease", named));
  if (!disease) throw FormatError(named + ": unknown disease label");
  entry.disease = *disease;
  for (const auto& q :
       require<std::vector<std::string>>(item, "slice_quality", named)) {
    const auto label = parse_quality(q);
    if (!label) throw FormatError(named + ": unknown quality label '" + q + "'");
    entry.slice_quality.push_back(*label);
  }
  for (bool a : require<std::vector<bool>>(item, "slice_abnormal", named)) {
    entry.slice_abnormal.push_back(a);
  }
  return entry;
}

void validate_entry_labels(const ManifestEntry& entry) {
  const std::string where = "patient " + entry.patient_id;
  if (entry.slice_quality.empty()) {
    throw ValidationError(where + ": volume has no slices");
  }
  if (entry.slice_quality.size() != entry.slice_abnormal.size()) {
    throw ValidationError(where +
                          ": slice label sequences differ in length");
  }
  bool any_abnormal = false;
  for (bool a : entry.slice_abnormal) any_abnormal = any_abnormal || a;
  if (entry.disease == DiseaseLabel::kNormal && any_abnormal) {
    throw ValidationError(where + ": Normal volume with an abnormal slice");
  }
  if (entry.disease != DiseaseLabel::kNormal && !any_abnormal) {
    throw ValidationError(where +
                          ": diseased volume without any abnormal slice");
  }
}

}  // namespace

const ManifestEntry* Manifest::find(const std::string& patient_id) const {
  for (const auto& entry : volumes) {
    if (entry.patient_id == patient_id) return &entry;
  }
  return nullptr;
}

Manifest parse_manifest(std::string_view text,
                        const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("manifest must be a JSON object");
  const int version = require<int>(doc, "schema_version", "manifest");
  if (version != kManifestSchemaVersion) {
    throw FormatError("unsupported manifest schema_version " +
                      std::to_string(version));
  }
  Manifest manifest;
  manifest.base_dir = base_dir;
  manifest.feature_dim = require<std::size_t>(doc, "feature_dim", "manifest");
  if (manifest.feature_dim == 0) {
    throw ValidationError("manifest feature_dim must be positive");
  }
  if (!doc.contains("volumes") || !doc["volumes"].is_array()) {
    throw FormatError("manifest: 'volumes' must be an array");
  }
  std::set<std::string> seen;
  std::size_t index = 0;
  for (const auto& item : doc["volumes"]) {
    ManifestEntry entry = parse_entry(item, index++);
    if (!seen.insert(entry.patient_id).second) {
      throw ValidationError("duplicate patient_id " + entry.patient_id);
    }
    validate_entry_labels(entry);
    manifest.volumes.push_back(std::move(entry));
  }
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

std::string encode_manifest(const Manifest& manifest) {
  json volumes = json::array();
  for (const auto& entry : manifest.volumes) {
    json quality = json::array();
    for (auto q : entry.slice_quality) quality.push_back(quality_name(q));
    json abnormal = json::array();
    for (bool a : entry.slice_abnormal) abnormal.push_back(a);
    volumes.push_back({
        {"patient_id", entry.patient_id},
        {"center_id", entry.center_id},
        {"path", entry.tensor_path},
        {"split", split_name(entry.split)},
        {"disease", disease_name(entry.disease)},
        {"slice_quality", std::move(quality)},
        {"slice_abnormal", std::move(abnormal)},
    });
  }
  json doc = {
      {"schema_version", kManifestSchemaVersion},
      {"feature_dim", manifest.feature_dim},
      {"volumes", std::move(volumes)},
  };
  return doc.dump(1) + "\n";
}

VolumeBag load_volume(const Manifest& manifest, const ManifestEntry& entry) {
  const Tensor tensor = read_tensor(manifest.base_dir / entry.tensor_path);
  const std::size_t n = entry.slice_quality.size();
  if (tensor.shape.size() != 2 || tensor.shape[0] != n ||
      tensor.shape[1] != manifest.feature_dim) {
    throw ValidationError("patient " + entry.patient_id +
                          ": tensor shape does not match [" +
                          std::to_string(n) + ", " +
                          std::to_string(manifest.feature_dim) + "]");
  }
  VolumeBag bag;
  bag.patient_id = entry.patient_id;
  bag.center_id = entry.center_id;
  bag.patient_disease = entry.disease;
  bag.slice_quality = entry.slice_quality;
  bag.slice_abnormal = entry.slice_abnormal;
  bag.slices.resize(n);
  const std::size_t d = manifest.feature_dim;
  for (std::size_t i = 0; i < n; ++i) {
    bag.slices[i].values.assign(tensor.data.begin() + i * d,
                                tensor.data.begin() + (i + 1) * d);
  }
  validate_bag(bag, d);
  return bag;
}

std::vector<const VolumeBag*> Cohort::in_split(Split split) const {
  std::vector<const VolumeBag*> out;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (splits[i] == split) out.push_back(&volumes[i]);
  }
  return out;
}

Cohort load_cohort(const std::filesystem::path& manifest_path) {
  const Manifest manifest = read_manifest(manifest_path);
  Cohort cohort;
  cohort.feature_dim = manifest.feature_dim;
  for (const auto& entry : manifest.volumes) {
    cohort.volumes.push_back(load_volume(manifest, entry));
    cohort.splits.push_back(entry.split);
  }
  return cohort;
}

}  // namespace focuskit
