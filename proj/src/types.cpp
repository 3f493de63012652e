#include "focuskit/types.hpp"

#include <algorithm>
#include <cmath>

#include "focuskit/error.hpp"

namespace focuskit {

namespace {

constexpr std::array<std::string_view, kNumDiseaseClasses> kDiseaseNames = {
    "Normal", "AMD", "CNV", "CSC", "DR", "MH", "ME", "ERM", "RP"};

}  // namespace

std::string_view disease_name(DiseaseLabel label) {
  return kDiseaseNames.at(static_cast<std::size_t>(label));
}

std::optional<DiseaseLabel> parse_disease(std::string_view name) {
  for (std::size_t i = 0; i < kDiseaseNames.size(); ++i) {
    if (kDiseaseNames[i] == name) return static_cast<DiseaseLabel>(i);
  }
  return std::nullopt;
}

DiseaseLabel disease_from_index(int index) {
  if (index < 0 || index >= kNumDiseaseClasses) {
    throw ValidationError("disease index out of range: " +
                          std::to_string(index));
  }
  return static_cast<DiseaseLabel>(index);
}

std::string_view quality_name(QualityLabel label) {
  return label == QualityLabel::kGradable ? "gradable" : "ungradable";
}

std::optional<QualityLabel> parse_quality(std::string_view name) {
  if (name == "gradable") return QualityLabel::kGradable;
  if (name == "ungradable") return QualityLabel::kUngradable;
  return std::nullopt;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  return std::nullopt;
}

void validate_bag(const VolumeBag& bag, std::size_t feature_dim) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("patient " + bag.patient_id + ": " + what);
  };
  const std::size_t n = bag.slices.size();
  if (n == 0) fail("volume has no slices");
  if (bag.slice_quality.size() != n || bag.slice_abnormal.size() != n) {
    fail("slice label sequences do not match slice count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& values = bag.slices[i].values;
    if (values.size() != feature_dim) {
      fail("slice " + std::to_string(i) + " has dimension " +
           std::to_string(values.size()) + ", expected " +
           std::to_string(feature_dim));
    }
    if (!std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); })) {
      fail("slice " + std::to_string(i) + " has non-finite features");
    }
  }
  const bool any_abnormal = std::find(bag.slice_abnormal.begin(),
                                      bag.slice_abnormal.end(),
                                      true) != bag.slice_abnormal.end();
  if (bag.is_abnormal() && !any_abnormal) {
    fail("diseased volume without any abnormal slice");
  }
  if (!bag.is_abnormal() && any_abnormal) {
    fail("Normal volume with an abnormal slice");
  }
}

}  // namespace focuskit
