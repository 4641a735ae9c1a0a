#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cbf/masks.hpp"
#include "cbf/tensor_file.hpp"
#include "support.hpp"

using namespace cbf;
using masks::MaskPlane;
using masks::MaskSet;

namespace {

stft::MultichannelSpectrogram constant_spec(std::size_t frames, std::size_t bins, Complex v) {
  stft::MultichannelSpectrogram s(1, frames, bins);
  for (std::size_t k = 0; k < frames; ++k)
    for (std::size_t f = 0; f < bins; ++f) s(0, k, f) = v;
  return s;
}

stft::MultichannelSpectrogram random_spec(std::size_t mics, std::size_t frames, std::size_t bins, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  stft::MultichannelSpectrogram s(mics, frames, bins);
  for (std::size_t m = 0; m < mics; ++m)
    for (std::size_t k = 0; k < frames; ++k)
      for (std::size_t f = 0; f < bins; ++f) s(m, k, f) = Complex(n(rng), n(rng));
  return s;
}

MaskSet random_masks(std::size_t sources, std::size_t frames, std::size_t bins, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<MaskPlane> planes;
  for (std::size_t i = 0; i < sources; ++i) {
    MaskPlane p(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(bins));
    for (Eigen::Index k = 0; k < p.rows(); ++k)
      for (Eigen::Index f = 0; f < p.cols(); ++f) p(k, f) = u(rng);
    planes.push_back(p);
  }
  return MaskSet(planes);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cbf_test_" + name);
}

}  // namespace

TEST_CASE("oracle IRM examples") {
  const auto zero = constant_spec(3, 4, 0.0);
  SUBCASE("sole source") {
    std::vector<stft::MultichannelSpectrogram> comps = {constant_spec(3, 4, Complex(1, 2))};
    const auto m = masks::oracle_irm(comps, zero, 0);
    CHECK(m.speakers() == 1);
    CHECK(m[0].isApproxToConstant(1.0));
    CHECK(m.noise().isZero(0.0));
  }
  SUBCASE("equal magnitudes") {
    std::vector<stft::MultichannelSpectrogram> comps = {constant_spec(3, 4, Complex(0, 2)), constant_spec(3, 4, 2.0)};
    const auto m = masks::oracle_irm(comps, zero, 0);
    CHECK(m[0].isApproxToConstant(0.5));
    CHECK(m[1].isApproxToConstant(0.5));
  }
  SUBCASE("3 : 1 : 1") {
    std::vector<stft::MultichannelSpectrogram> comps = {constant_spec(1, 1, 3.0), constant_spec(1, 1, Complex(0, -1))};
    const auto m = masks::oracle_irm(comps, constant_spec(1, 1, -1.0), 0);
    CHECK(m[0](0, 0) == doctest::Approx(0.6));
    CHECK(m[1](0, 0) == doctest::Approx(0.2));
    CHECK(m[2](0, 0) == doctest::Approx(0.2));
  }
  SUBCASE("silent bins are uniform") {
    std::vector<stft::MultichannelSpectrogram> comps = {zero, zero};
    const auto m = masks::oracle_irm(comps, zero, 0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(m[i].isApproxToConstant(1.0 / 3.0));
  }
  SUBCASE("shape mismatch") {
    std::vector<stft::MultichannelSpectrogram> comps = {constant_spec(2, 4, 1.0)};
    CHECK_THROWS_AS(masks::oracle_irm(comps, zero, 0), InvalidArgument);
  }
}

TEST_CASE("oracle IRM sums to one and stays in range") {
  std::mt19937_64 rng(1);
  std::vector<stft::MultichannelSpectrogram> comps = {random_spec(3, 20, 9, rng), random_spec(3, 20, 9, rng)};
  const auto noise = random_spec(3, 20, 9, rng);
  for (std::size_t mic = 0; mic < 3; ++mic) {
    const auto m = masks::oracle_irm(comps, noise, mic);
    const MaskPlane total = m[0] + m[1] + m[2];
    CHECK((total.array() - 1.0).abs().maxCoeff() <= 1e-12);
    for (const auto& p : m.planes()) {
      CHECK(p.minCoeff() >= 0.0);
      CHECK(p.maxCoeff() <= 1.0);
    }
    // direct ratio at one bin
    const double a = std::abs(comps[0](mic, 5, 3)), b = std::abs(comps[1](mic, 5, 3)), v = std::abs(noise(mic, 5, 3));
    CHECK(m[0](5, 3) == doctest::Approx(a / (a + b + v)));
  }
}

TEST_CASE("alignment") {
  std::mt19937_64 rng(2);
  const auto ref = random_masks(3, 6, 5, rng);

  SUBCASE("identical sets keep the identity") {
    std::vector<MaskSet> per_mic = {ref, ref, ref};
    const auto a = masks::align_masks(per_mic, 0);
    for (const auto& p : a.permutations) CHECK(p == masks::Permutation{0, 1, 2});
  }
  SUBCASE("planted swap is undone") {
    MaskSet swapped({ref[1], ref[0], ref[2]});
    std::vector<MaskSet> per_mic = {ref, swapped};
    const auto a = masks::align_masks(per_mic, 0);
    CHECK(a.permutations[1] == masks::Permutation{1, 0, 2});
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.masks[1][i] == ref[i]);
  }
  SUBCASE("matches a brute-force search") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto r = random_masks(3, 6, 5, rng);
      const auto c = random_masks(3, 6, 5, rng);
      std::vector<MaskSet> per_mic = {r, c};
      const auto a = masks::align_masks(per_mic, 0);
      masks::Permutation perm = {0, 1, 2}, best;
      double best_cost = 1e300;
      do {
        double cost = 0;
        for (std::size_t i = 0; i < 3; ++i) cost += (r[i] - c[perm[i]]).squaredNorm();
        if (cost < best_cost) {
          best_cost = cost;
          best = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      CHECK(a.permutations[1] == best);
      // Output planes are a permutation of the input planes.
      auto sorted = a.permutations[1];
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == masks::Permutation{0, 1, 2});
    }
  }
  SUBCASE("averaging is consistent under relabelling") {
    const auto m1 = random_masks(3, 6, 5, rng);
    MaskSet m1_relabelled({m1[2], m1[0], m1[1]});
    std::vector<MaskSet> a_in = {ref, m1}, b_in = {ref, m1_relabelled};
    const auto a = masks::average_masks(masks::align_masks(a_in, 0).masks);
    const auto b = masks::average_masks(masks::align_masks(b_in, 0).masks);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("averaging") {
  std::mt19937_64 rng(3);
  const auto a = random_masks(2, 4, 3, rng);
  std::vector<MaskSet> one = {a};
  CHECK(masks::average_masks(one)[0] == a[0]);

  MaskSet lo({MaskPlane::Constant(1, 1, 0.2), MaskPlane::Constant(1, 1, 0.8)});
  MaskSet hi({MaskPlane::Constant(1, 1, 0.6), MaskPlane::Constant(1, 1, 0.4)});
  std::vector<MaskSet> two = {lo, hi};
  CHECK(masks::average_masks(two)[0](0, 0) == doctest::Approx(0.4));

  std::vector<MaskSet> many;
  for (int m = 0; m < 5; ++m) many.push_back(random_masks(2, 4, 3, rng));
  const auto avg = masks::average_masks(many);
  for (Eigen::Index k = 0; k < 4; ++k) {
    for (Eigen::Index f = 0; f < 3; ++f) {
      double naive = 0;
      for (const auto& m : many) naive += m[1](k, f);
      CHECK(std::abs(avg[1](k, f) - naive / 5.0) <= 1e-12);
    }
  }
  std::vector<MaskSet> none;
  CHECK_THROWS_AS(masks::average_masks(none), InvalidArgument);
}

TEST_CASE("mask files") {
  std::mt19937_64 rng(4);
  const auto set = random_masks(3, 7, 5, rng);
  const auto path = temp_path("masks.cbtf");
  masks::store_masks(set, path);
  const auto loaded = masks::load_masks(path);
  CHECK(loaded.clamped == 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(loaded.masks[i] == set[i]);

  SUBCASE("out-of-range values are clamped and counted") {
    std::vector<double> values(2 * 1 * 2, 0.5);
    values[1] = 1.0000001;
    io::write_tensor(path, io::make_real({2, 1, 2}, values));
    const auto l = masks::load_masks(path);
    CHECK(l.clamped == 1);
    CHECK(l.masks[0](0, 1) == 1.0);
  }
  SUBCASE("truncated file") {
    auto bytes = io::encode_tensor(io::make_real({3, 7, 5}, std::vector<double>(105, 0.25)));
    bytes.resize(bytes.size() - 16);
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                 static_cast<std::streamsize>(bytes.size()));
    try {
      masks::load_masks(path);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("16") != std::string::npos);
    }
  }
  std::filesystem::remove(path);
}
