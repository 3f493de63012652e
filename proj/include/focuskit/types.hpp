#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace focuskit {

enum class QualityLabel { kGradable = 0, kUngradable = 1 };

// Index 0 is Normal; 1..8 are the retinal diseases.
enum class DiseaseLabel {
  kNormal = 0,
  kAMD,
  kCNV,
  kCSC,
  kDR,
  kMH,
  kME,
  kERM,
  kRP,
};

inline constexpr int kNumDiseaseClasses = 9;
inline constexpr int kNumDiseases = kNumDiseaseClasses - 1;

std::string_view disease_name(DiseaseLabel label);
std::optional<DiseaseLabel> parse_disease(std::string_view name);
DiseaseLabel disease_from_index(int index);
inline int index_of(DiseaseLabel label) { return static_cast<int>(label); }

std::string_view quality_name(QualityLabel label);
std::optional<QualityLabel> parse_quality(std::string_view name);

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view name);

// One encoded B-scan.
struct SliceFeature {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  std::span<const double> view() const { return values; }
};

// All slices of one eye plus ground truth.
struct VolumeBag {
  std::string patient_id;
  std::string center_id;
  std::vector<SliceFeature> slices;
  std::vector<QualityLabel> slice_quality;
  std::vector<bool> slice_abnormal;
  DiseaseLabel patient_disease = DiseaseLabel::kNormal;

  std::size_t size() const { return slices.size(); }
  bool is_abnormal() const { return patient_disease != DiseaseLabel::kNormal; }
};

// Throws ValidationError naming the patient when any bag invariant fails.
void validate_bag(const VolumeBag& bag, std::size_t feature_dim);

}  // namespace focuskit
