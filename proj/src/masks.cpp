#include "cbf/masks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cbf/tensor_file.hpp"

namespace cbf::masks {

MaskSet::MaskSet(std::size_t sources, std::size_t frames, std::size_t bins)
    : planes_(sources, MaskPlane::Zero(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(bins))) {}

MaskSet::MaskSet(std::vector<MaskPlane> planes) : planes_(std::move(planes)) {
  for (const auto& p : planes_) {
    if (p.rows() != planes_.front().rows() || p.cols() != planes_.front().cols()) {
      throw InvalidArgument("MaskSet: planes differ in shape");
    }
  }
}

bool MaskSet::same_shape(const MaskSet& other) const {
  return sources() == other.sources() && frames() == other.frames() && bins() == other.bins();
}

MaskSet oracle_irm(std::span<const stft::MultichannelSpectrogram> components,
                   const stft::MultichannelSpectrogram& noise, std::size_t mic) {
  if (components.empty()) throw InvalidArgument("oracle_irm: no source components");
  const std::size_t frames = noise.frames(), bins = noise.bins();
  if (mic >= noise.channels()) throw InvalidArgument("oracle_irm: microphone index out of range");
  for (const auto& c : components) {
    if (c.channels() != noise.channels() || c.frames() != frames || c.bins() != bins) {
      throw InvalidArgument("oracle_irm: component spectrograms differ in shape");
    }
  }
  const std::size_t speakers = components.size();
  MaskSet out(speakers + 1, frames, bins);
  const double uniform = 1.0 / static_cast<double>(speakers + 1);
  std::vector<double> mag(speakers);
  for (std::size_t f = 0; f < bins; ++f) {
    for (std::size_t k = 0; k < frames; ++k) {
      const auto kk = static_cast<Eigen::Index>(k), ff = static_cast<Eigen::Index>(f);
      double total = std::abs(noise(mic, k, f));
      for (std::size_t i = 0; i < speakers; ++i) {
        mag[i] = std::abs(components[i](mic, k, f));
        total += mag[i];
      }
      if (total == 0) {
        for (std::size_t i = 0; i <= speakers; ++i) out[i](kk, ff) = uniform;
        continue;
      }
      double used = 0;
      for (std::size_t i = 0; i < speakers; ++i) {
        out[i](kk, ff) = mag[i] / total;
        used += out[i](kk, ff);
      }
      out[speakers](kk, ff) = std::clamp(1.0 - used, 0.0, 1.0);
    }
  }
  return out;
}

Alignment align_masks(std::span<const MaskSet> per_mic, std::size_t reference_mic) {
  if (per_mic.empty()) throw InvalidArgument("align_masks: no microphones");
  if (reference_mic >= per_mic.size()) throw InvalidArgument("align_masks: reference mic out of range");
  const MaskSet& ref = per_mic[reference_mic];
  const std::size_t n = ref.sources();
  if (n > 6) throw InvalidArgument("align_masks: exhaustive alignment supports at most 6 sources");
  for (const auto& m : per_mic) {
    if (!m.same_shape(ref)) throw InvalidArgument("align_masks: mask sets differ in shape");
  }

  Alignment out;
  Permutation identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  for (std::size_t mic = 0; mic < per_mic.size(); ++mic) {
    const MaskSet& cur = per_mic[mic];
    Permutation best = identity;
    if (mic != reference_mic) {
      RMatrix cost(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (ref[i] - cur[j]).squaredNorm();
      double best_cost = std::numeric_limits<double>::infinity();
      Permutation perm = identity;
      do {
        double c = 0;
        for (std::size_t i = 0; i < n; ++i) c += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
        if (c < best_cost) {
          best_cost = c;
          best = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
    std::vector<MaskPlane> planes;
    for (std::size_t i = 0; i < n; ++i) planes.push_back(cur[best[i]]);
    out.masks.emplace_back(std::move(planes));
    out.permutations.push_back(std::move(best));
  }
  return out;
}

MaskSet average_masks(std::span<const MaskSet> aligned) {
  if (aligned.empty()) throw InvalidArgument("average_masks: empty list");
  for (const auto& m : aligned) {
    if (!m.same_shape(aligned.front())) throw InvalidArgument("average_masks: mask sets differ in shape");
  }
  std::vector<MaskPlane> planes;
  const double scale = 1.0 / static_cast<double>(aligned.size());
  for (std::size_t i = 0; i < aligned.front().sources(); ++i) {
    MaskPlane acc = MaskPlane::Zero(aligned.front()[i].rows(), aligned.front()[i].cols());
    for (const auto& m : aligned) acc += m[i];
    planes.push_back((acc * scale).cwiseMax(0.0).cwiseMin(1.0));
  }
  return MaskSet(std::move(planes));
}

void store_masks(const MaskSet& set, const std::filesystem::path& path) {
  std::vector<double> values;
  values.reserve(set.sources() * set.frames() * set.bins());
  for (const auto& plane : set.planes())
    for (Eigen::Index k = 0; k < plane.rows(); ++k)
      for (Eigen::Index f = 0; f < plane.cols(); ++f) values.push_back(plane(k, f));
  io::write_tensor(path, io::make_real({set.sources(), set.frames(), set.bins()}, std::move(values)));
}

LoadedMasks load_masks(const std::filesystem::path& path) {
  const io::Tensor t = io::read_tensor(path);
  if (io::is_complex(t.dtype) || t.dims.size() != 3) {
    std::ostringstream os;
    os << path.string() << ": mask tensor must be real rank-3 [sources, frames, bins], got "
       << io::to_string(t.dtype) << " rank " << t.dims.size();
    throw ParseError(os.str());
  }
  const auto sources = static_cast<std::size_t>(t.dims[0]);
  const auto frames = static_cast<Eigen::Index>(t.dims[1]);
  const auto bins = static_cast<Eigen::Index>(t.dims[2]);
  if (sources < 2) throw ParseError(path.string() + ": mask tensor needs at least one speaker and a noise slot");
  LoadedMasks out;
  std::vector<MaskPlane> planes;
  std::size_t idx = 0;
  for (std::size_t s = 0; s < sources; ++s) {
    MaskPlane p(frames, bins);
    for (Eigen::Index k = 0; k < frames; ++k) {
      for (Eigen::Index f = 0; f < bins; ++f) {
        double v = t.real[idx++];
        if (!(v >= 0.0 && v <= 1.0)) {
          v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
          ++out.clamped;
        }
        p(k, f) = v;
      }
    }
    planes.push_back(std::move(p));
  }
  out.masks = MaskSet(std::move(planes));
  return out;
}

}  // namespace cbf::masks
