#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "cbf/common.hpp"
#include "cbf/stft.hpp"

namespace cbf::masks {

// K x F real mask of one source.
using MaskPlane = RMatrix;

// Masks for I speakers plus a trailing noise slot.
class MaskSet {
 public:
  MaskSet() = default;
  MaskSet(std::size_t sources, std::size_t frames, std::size_t bins);
  explicit MaskSet(std::vector<MaskPlane> planes);

  std::size_t sources() const { return planes_.size(); }
  std::size_t speakers() const { return planes_.empty() ? 0 : planes_.size() - 1; }
  std::size_t frames() const { return planes_.empty() ? 0 : static_cast<std::size_t>(planes_[0].rows()); }
  std::size_t bins() const { return planes_.empty() ? 0 : static_cast<std::size_t>(planes_[0].cols()); }

  MaskPlane& operator[](std::size_t i) { return planes_[i]; }
  const MaskPlane& operator[](std::size_t i) const { return planes_[i]; }
  const MaskPlane& noise() const { return planes_.back(); }
  const std::vector<MaskPlane>& planes() const { return planes_; }

  bool same_shape(const MaskSet& other) const;

 private:
  std::vector<MaskPlane> planes_;
};

// Magnitude-ratio ideal ratio masks at microphone `mic`:
// |X_i| / (sum_j |X_j| + |V|), noise takes the remaining share, bins with
// zero total magnitude get 1 / (I + 1) everywhere.
MaskSet oracle_irm(std::span<const stft::MultichannelSpectrogram> components,
                   const stft::MultichannelSpectrogram& noise, std::size_t mic);

// Source order applied to one microphone: aligned[i] = input[perm[i]].
using Permutation = std::vector<std::size_t>;

struct Alignment {
  std::vector<MaskSet> masks;
  std::vector<Permutation> permutations;  // one per microphone
};

// Reorders every non-reference microphone's sources (noise slot included) to
// minimise the summed squared difference to the reference microphone.
// Exhaustive search over (I + 1)! orderings, I + 1 <= 6.
Alignment align_masks(std::span<const MaskSet> per_mic, std::size_t reference_mic);

// Entrywise arithmetic mean over microphones.
MaskSet average_masks(std::span<const MaskSet> aligned);

struct LoadedMasks {
  MaskSet masks;
  std::size_t clamped = 0;  // values moved into [0, 1]
};

// Rank-3 tensor [sources, frames, bins], f64 (f32 accepted on load).
void store_masks(const MaskSet& set, const std::filesystem::path& path);
LoadedMasks load_masks(const std::filesystem::path& path);

}  // namespace cbf::masks
