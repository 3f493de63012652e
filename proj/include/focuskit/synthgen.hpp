#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "focuskit/cohort.hpp"
#include "focuskit/types.hpp"

namespace focuskit {

// Per-center acquisition shift: x -> scale * x + offset + noise_sigma * g.
struct CenterShift {
  std::string center_id;
  double feature_scale = 1.0;
  std::vector<double> feature_offset;  // length D
  double noise_sigma = 0.0;
};

struct CohortSpec {
  std::size_t n_patients = 350;
  std::size_t slices_per_volume = 32;
  std::size_t feature_dim = 16;
  // Probability of each DiseaseLabel, indexed like the enum.
  std::vector<double> class_prevalence;
  double lesion_fraction = 0.1;
  double lesion_margin = 4.0;
  double ungradable_slice_rate = 0.15;
  std::vector<CenterShift> centers;
  std::uint64_t seed = 42;
  // Patient-level split fractions; test receives the remainder.
  double train_frac = 4.0 / 7.0;
  double val_frac = 1.0 / 7.0;
};

// 350 patients (200/50/100), n = 32, D = 16, delta = 4, rho = 0.1,
// q = 0.15, four mildly shifted centers.
CohortSpec default_cohort_spec();

// Throws SpecError on any violated precondition.
void validate_cohort_spec(const CohortSpec& spec);

// max(1, round(rho * n)), clamped to n.
std::size_t lesion_count(std::size_t slices_per_volume, double lesion_fraction);

// Rows 0..7 of a seeded random orthonormal basis of R^D: the lesion
// direction of disease class k is row k - 1.
std::vector<std::vector<double>> lesion_directions(std::size_t feature_dim,
                                                   std::uint64_t seed);

SliceFeature apply_center_shift(const SliceFeature& x, const CenterShift& shift,
                                std::span<const double> noise_draw);

struct SplitAssignment {
  std::vector<Split> splits;
  // One message per class too small to stratify.
  std::vector<std::string> warnings;
};

// Patient-level split, stratified by disease class. Sizes are
// floor(N * train_frac), floor(N * val_frac) and the remainder.
SplitAssignment split_cohort(std::span<const DiseaseLabel> labels,
                             double train_frac, double val_frac,
                             std::uint64_t seed);

// In-memory generation; the returned cohort carries its split assignment.
Cohort generate_cohort(const CohortSpec& spec);

// Generates and writes manifest.json plus tensors/<patient>.f32t under
// `out_dir`. Returns the manifest that was written.
Manifest gen_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

}  // namespace focuskit
