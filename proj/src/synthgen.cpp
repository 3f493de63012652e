#include "focuskit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/tensor_io.hpp"

namespace focuskit {

namespace {

constexpr double kUngradableSigma = 3.0;
constexpr std::uint64_t kBasisStream = 0xBA515ULL;
constexpr std::uint64_t kSplitStream = 0x5B117ULL;

std::string patient_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%05zu", index);
  return buf;
}

DiseaseLabel draw_disease(Rng& rng, std::span<const double> prevalence) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < prevalence.size(); ++k) {
    if (prevalence[k] <= 0.0) continue;
    last_positive = k;
    acc += prevalence[k];
    if (u < acc) return static_cast<DiseaseLabel>(k);
  }
  return static_cast<DiseaseLabel>(last_positive);
}

}  // namespace

CohortSpec default_cohort_spec() {
  CohortSpec spec;
  spec.class_prevalence.assign(kNumDiseaseClasses, 0.7 / kNumDiseases);
  spec.class_prevalence[0] = 0.3;
  const double scales[] = {1.0, 0.95, 1.05, 0.9};
  const double offsets[] = {0.0, 0.1, -0.1, 0.15};
  const double sigmas[] = {0.0, 0.1, 0.15, 0.2};
  for (int c = 0; c < 4; ++c) {
    CenterShift shift;
    shift.center_id = "C" + std::to_string(c + 1);
    shift.feature_scale = scales[c];
    shift.feature_offset.assign(spec.feature_dim, offsets[c]);
    shift.noise_sigma = sigmas[c];
    spec.centers.push_back(std::move(shift));
  }
  return spec;
}

void validate_cohort_spec(const CohortSpec& spec) {
  auto fail = [](const std::string& what) { throw SpecError(what); };
  if (spec.n_patients == 0) fail("n_patients must be positive");
  if (spec.slices_per_volume == 0) fail("slices_per_volume must be positive");
  if (spec.feature_dim == 0) fail("feature_dim must be positive");
  if (spec.feature_dim < static_cast<std::size_t>(kNumDiseases)) {
    fail("feature_dim must be at least 8 to hold one direction per disease");
  }
  if (spec.class_prevalence.size() != kNumDiseaseClasses) {
    fail("class_prevalence must have 9 entries");
  }
  double total = 0.0;
  for (double p : spec.class_prevalence) {
    if (!(p >= 0.0) || !std::isfinite(p)) fail("prevalence entries must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("class_prevalence must sum to 1");
  if (!(spec.lesion_fraction > 0.0 && spec.lesion_fraction <= 1.0)) {
    fail("lesion_fraction must lie in (0, 1]");
  }
  if (!(spec.lesion_margin > 0.0) || !std::isfinite(spec.lesion_margin)) {
    fail("lesion_margin must be positive");
  }
  if (!(spec.ungradable_slice_rate >= 0.0 && spec.ungradable_slice_rate < 1.0)) {
    fail("ungradable_slice_rate must lie in [0, 1)");
  }
  if (spec.centers.empty()) fail("centers must not be empty");
  for (const auto& c : spec.centers) {
    if (c.center_id.empty()) fail("center_id must not be empty");
    if (!(c.feature_scale > 0.0) || !std::isfinite(c.feature_scale)) {
      fail("center " + c.center_id + ": feature_scale must be positive");
    }
    if (c.feature_offset.size() != spec.feature_dim) {
      fail("center " + c.center_id + ": feature_offset must have length D");
    }
    for (double v : c.feature_offset) {
      if (!std::isfinite(v)) fail("center " + c.center_id + ": offset not finite");
    }
    if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) {
      fail("center " + c.center_id + ": noise_sigma must be >= 0");
    }
  }
  if (!(spec.train_frac >= 0.0 && spec.val_frac >= 0.0 &&
        spec.train_frac + spec.val_frac < 1.0)) {
    fail("train_frac + val_frac must be < 1 with both non-negative");
  }
}

std::size_t lesion_count(std::size_t slices_per_volume, double lesion_fraction) {
  const double planted =
      std::round(lesion_fraction * static_cast<double>(slices_per_volume));
  const auto count = static_cast<std::size_t>(std::max(1.0, planted));
  return std::min(count, slices_per_volume);
}

std::vector<std::vector<double>> lesion_directions(std::size_t feature_dim,
                                                   std::uint64_t seed) {
  if (feature_dim < static_cast<std::size_t>(kNumDiseases)) {
    throw SpecError("feature_dim must be at least 8");
  }
  Rng rng(mix_seed(seed, kBasisStream));
  std::vector<std::vector<double>> basis;
  // Modified Gram-Schmidt over Gaussian rows; redraw the (measure-zero)
  // near-dependent case.
  while (basis.size() < feature_dim) {
    std::vector<double> row(feature_dim);
    for (double& v : row) v = rng.normal();
    for (const auto& q : basis) {
      const double dot = std::inner_product(row.begin(), row.end(), q.begin(), 0.0);
      for (std::size_t j = 0; j < feature_dim; ++j) row[j] -= dot * q[j];
    }
    const double norm =
        std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& v : row) v /= norm;
    basis.push_back(std::move(row));
  }
  basis.resize(kNumDiseases);
  return basis;
}

SliceFeature apply_center_shift(const SliceFeature& x, const CenterShift& shift,
                                std::span<const double> noise_draw) {
  const std::size_t d = x.dim();
  if (shift.feature_offset.size() != d || noise_draw.size() != d) {
    throw ValidationError("center shift dimension mismatch: feature " +
                          std::to_string(d) + ", offset " +
                          std::to_string(shift.feature_offset.size()) +
                          ", noise " + std::to_string(noise_draw.size()));
  }
  SliceFeature out;
  out.values.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    out.values[j] = shift.feature_scale * x.values[j] + shift.feature_offset[j] +
                    shift.noise_sigma * noise_draw[j];
  }
  return out;
}

SplitAssignment split_cohort(std::span<const DiseaseLabel> labels,
                             double train_frac, double val_frac,
                             std::uint64_t seed) {
  if (!(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0)) {
    throw SpecError("train_frac + val_frac must be < 1 with both non-negative");
  }
  const std::size_t n = labels.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_frac + 1e-9));
  const auto n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * val_frac + 1e-9));

  // Each patient gets a sort key in [0, 1). Within a class, keys are evenly
  // spaced over a random permutation, so any prefix of the global order takes
  // each class in proportion to its size.
  Rng rng(mix_seed(seed, kSplitStream));
  std::vector<double> key(n, 0.0);
  SplitAssignment result;
  constexpr std::size_t kNumSplits = 3;
  for (int k = 0; k < kNumDiseaseClasses; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (index_of(labels[i]) == k) members.push_back(i);
    }
    if (members.empty()) continue;
    if (members.size() < kNumSplits) {
      result.warnings.push_back(
          "class " + std::string(disease_name(static_cast<DiseaseLabel>(k))) +
          " has " + std::to_string(members.size()) +
          " patient(s), fewer than the 3 splits; assigned unstratified");
      for (std::size_t i : members) key[i] = rng.uniform();
      continue;
    }
    rng.shuffle(std::span<std::size_t>(members));
    const double m = static_cast<double>(members.size());
    for (std::size_t r = 0; r < members.size(); ++r) {
      key[members[r]] = (static_cast<double>(r) + 0.5) / m;
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return key[a] < key[b];
    if (labels[a] != labels[b]) return labels[a] < labels[b];
    return a < b;
  });
  result.splits.assign(n, Split::kTest);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_train) {
      result.splits[order[r]] = Split::kTrain;
    } else if (r < n_train + n_val) {
      result.splits[order[r]] = Split::kVal;
    }
  }
  return result;
}

Cohort generate_cohort(const CohortSpec& spec) {
  validate_cohort_spec(spec);
  const std::size_t n = spec.slices_per_volume;
  const std::size_t d = spec.feature_dim;
  const auto directions = lesion_directions(d, spec.seed);
  const std::size_t planted = lesion_count(n, spec.lesion_fraction);

  Cohort cohort;
  cohort.feature_dim = d;
  cohort.volumes.resize(spec.n_patients);
  std::vector<double> base(d);
  std::vector<double> noise(d);
  for (std::size_t p = 0; p < spec.n_patients; ++p) {
    Rng rng(mix_seed(spec.seed, p));
    VolumeBag& bag = cohort.volumes[p];
    bag.patient_id = patient_name(p);
    const CenterShift& center = spec.centers[p % spec.centers.size()];
    bag.center_id = center.center_id;
    bag.patient_disease = draw_disease(rng, spec.class_prevalence);
    bag.slice_abnormal.assign(n, false);
    if (bag.is_abnormal()) {
      std::vector<std::size_t> positions(n);
      std::iota(positions.begin(), positions.end(), 0);
      // Partial Fisher-Yates: the first `planted` entries are the sample.
      for (std::size_t i = 0; i < planted; ++i) {
        std::swap(positions[i], positions[i + rng.below(n - i)]);
      }
      for (std::size_t i = 0; i < planted; ++i) {
        bag.slice_abnormal[positions[i]] = true;
      }
    }
    bag.slices.resize(n);
    bag.slice_quality.assign(n, QualityLabel::kGradable);
    for (std::size_t s = 0; s < n; ++s) {
      for (double& v : base) v = rng.normal();
      if (bag.slice_abnormal[s]) {
        const auto& u = directions[index_of(bag.patient_disease) - 1];
        for (std::size_t j = 0; j < d; ++j) base[j] += spec.lesion_margin * u[j];
      }
      if (rng.uniform() < spec.ungradable_slice_rate) {
        bag.slice_quality[s] = QualityLabel::kUngradable;
        for (double& v : base) v = kUngradableSigma * rng.normal();
      }
      for (double& v : noise) v = rng.normal();
      bag.slices[s] = apply_center_shift(SliceFeature{base}, center, noise);
    }
  }

  std::vector<DiseaseLabel> labels;
  for (const auto& bag : cohort.volumes) labels.push_back(bag.patient_disease);
  cohort.splits =
      split_cohort(labels, spec.train_frac, spec.val_frac, spec.seed).splits;
  return cohort;
}

Manifest gen_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir) {
  const Cohort cohort = generate_cohort(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "tensors", ec);
  if (ec) {
    throw IoError("cannot create " + (out_dir / "tensors").string() + ": " +
                  ec.message());
  }
  Manifest manifest;
  manifest.feature_dim = cohort.feature_dim;
  manifest.base_dir = out_dir;
  for (std::size_t p = 0; p < cohort.volumes.size(); ++p) {
    const VolumeBag& bag = cohort.volumes[p];
    ManifestEntry entry;
    entry.patient_id = bag.patient_id;
    entry.center_id = bag.center_id;
    entry.tensor_path = "tensors/" + bag.patient_id + ".f32t";
    entry.split = cohort.splits[p];
    entry.disease = bag.patient_disease;
    entry.slice_quality = bag.slice_quality;
    entry.slice_abnormal = bag.slice_abnormal;

    std::vector<double> flat;
    flat.reserve(bag.size() * cohort.feature_dim);
    for (const auto& slice : bag.slices) {
      flat.insert(flat.end(), slice.values.begin(), slice.values.end());
    }
    const std::size_t shape[] = {bag.size(), cohort.feature_dim};
    write_tensor(out_dir / entry.tensor_path, shape, flat);
    manifest.volumes.push_back(std::move(entry));
  }
  write_file(out_dir / "manifest.json", encode_manifest(manifest));
  return manifest;
}

}  // namespace focuskit
