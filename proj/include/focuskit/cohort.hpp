#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "focuskit/types.hpp"

namespace focuskit {

inline constexpr int kManifestSchemaVersion = 1;

// One volume record of manifest.json. `tensor_path` is relative to the
// manifest's directory and points at a tensor of shape [n, feature_dim].
struct ManifestEntry {
  std::string patient_id;
  std::string center_id;
  std::string tensor_path;
  Split split = Split::kTrain;
  DiseaseLabel disease = DiseaseLabel::kNormal;
  std::vector<QualityLabel> slice_quality;
  std::vector<bool> slice_abnormal;
};

struct Manifest {
  std::size_t feature_dim = 0;
  std::vector<ManifestEntry> volumes;
  // Directory that relative tensor paths resolve against.
  std::filesystem::path base_dir;

  const ManifestEntry* find(const std::string& patient_id) const;
};

// Parses and validates the manifest document (unique ids, label
// consistency). Does not touch tensor files.
Manifest parse_manifest(std::string_view text,
                        const std::filesystem::path& base_dir);
Manifest read_manifest(const std::filesystem::path& path);
std::string encode_manifest(const Manifest& manifest);

// Reads one tensor file and assembles a validated bag.
VolumeBag load_volume(const Manifest& manifest, const ManifestEntry& entry);

struct Cohort {
  std::size_t feature_dim = 0;
  std::vector<VolumeBag> volumes;
  std::vector<Split> splits;

  std::vector<const VolumeBag*> in_split(Split split) const;
};

// Strict, order-preserving load of every volume in the manifest.
Cohort load_cohort(const std::filesystem::path& manifest_path);

}  // namespace focuskit
