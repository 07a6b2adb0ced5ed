#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"
#include "vu/io.hpp"
#include "vu/labeling.hpp"
#include "vu/phantom.hpp"

using namespace vu;
using namespace vu::labeling;
using Eigen::Vector2d;

namespace {

std::vector<Landmark> forward(const Affine2D& t, const std::vector<Vector2d>& photo_pts) {
  std::vector<Landmark> out;
  for (const auto& p : photo_pts) out.push_back({p, t.apply(p)});
  return out;
}

double dice(const Mask& a, const Mask& b) {
  double inter = 0, sa = 0, sb = 0;
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    inter += a.data()[k] && b.data()[k];
    sa += a.data()[k] != 0;
    sb += b.data()[k] != 0;
  }
  return 2 * inter / (sa + sb);
}

}  // namespace

TEST_CASE("estimate_affine") {
  const std::vector<Vector2d> pts{{0, 0}, {50, 3}, {7, 40}, {33, 28}, {90, 61}};
  SUBCASE("identity") {
    const auto t = estimate_affine(forward(Affine2D{}, pts));
    CHECK((t.m - Affine2D{}.m).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("known transform is recovered") {
    const double a = 4.0 * std::numbers::pi / 180;
    Affine2D truth;
    truth.m << 1.02 * std::cos(a), -1.02 * std::sin(a), 7, 1.02 * std::sin(a), 1.02 * std::cos(a), -3;
    for (std::size_t n = 3; n <= pts.size(); ++n) {
      const std::vector<Vector2d> sub(pts.begin(), pts.begin() + n);
      const auto t = estimate_affine(forward(truth, sub));
      CHECK((t.m - truth.m).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SUBCASE("random general affines") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int trial = 0; trial < 20; ++trial) {
      Affine2D t;
      t.m << u(rng), u(rng), 10 * u(rng), u(rng), u(rng), 10 * u(rng);
      if (std::abs(t.det()) < 0.1) continue;
      const auto back = estimate_affine(forward(t, pts));
      CHECK((back.m - t.m).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SUBCASE("degenerate landmarks") {
    CHECK_THROWS_AS(estimate_affine(forward(Affine2D{}, {{0, 0}, {1, 1}, {2, 2}})), Error);
    CHECK_THROWS_AS(estimate_affine(forward(Affine2D{}, {{0, 0}, {1, 1}})), Error);
  }
  SUBCASE("landmark file round trip") {
    test::TempDir tmp;
    const auto lm = forward(Affine2D::from_similarity(0.1, 1.1, {3, 4}, {1, 2}), pts);
    write_landmarks(tmp.path() / "lm.txt", lm);
    const auto back = read_landmarks(tmp.path() / "lm.txt");
    REQUIRE(back.size() == lm.size());
    for (std::size_t i = 0; i < lm.size(); ++i) {
      CHECK(back[i].photo == lm[i].photo);
      CHECK(back[i].uv == lm[i].uv);
    }
    io::write_text(tmp.path() / "bad.txt", "1 2 3\n");
    CHECK_THROWS_AS(read_landmarks(tmp.path() / "bad.txt"), FormatError);
  }
}

TEST_CASE("warp_photo") {
  FloatImage photo(40, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) photo.at(x, y) = 0.5f + 0.4f * static_cast<float>(std::sin(0.3 * x) * std::cos(0.2 * y));
  SUBCASE("identity") {
    const auto w = warp_photo(photo, Affine2D{}, 40, 30);
    CHECK(w.image == photo);
    for (auto v : w.region.data()) CHECK(v == 1);
  }
  SUBCASE("translation masks the uncovered columns") {
    Affine2D t;
    t.m(0, 2) = 5;
    const auto w = warp_photo(photo, t, 40, 30);
    for (int y = 0; y < 30; ++y) {
      for (int x = 0; x < 5; ++x) {
        CHECK(w.region.at(x, y) == 0);
        CHECK(w.image.at(x, y) == 0.0f);
      }
      for (int x = 5; x < 40; ++x) CHECK(w.image.at(x, y) == photo.at(x - 5, y));
    }
  }
  SUBCASE("round trip through the inverse") {
    const Affine2D t = Affine2D::from_similarity(0.05, 1.02, {20, 15}, {1.5, -0.7});
    const auto fwd = warp_photo(photo, t, 40, 30);
    const auto back = warp_photo(fwd.image, t.inverse(), 40, 30);
    double sum = 0;
    int n = 0;
    for (int y = 5; y < 25; ++y)
      for (int x = 5; x < 35; ++x) {
        sum += std::abs(back.image.at(x, y) - photo.at(x, y));
        ++n;
      }
    CHECK(sum / n < 0.02);
  }
  SUBCASE("singular transform") {
    Affine2D t;
    t.m.leftCols<2>().setZero();
    CHECK_THROWS_AS(warp_photo(photo, t, 10, 10), Error);
  }
}

TEST_CASE("binarize") {
  SUBCASE("bimodal halves") {
    FloatImage img(10, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 10; ++x) img.at(x, y) = x < 5 ? 0.2f : 0.8f;
    const auto l = binarize(img, Mask(10, 4, 1), {});
    CHECK(l.threshold > 0.2);
    CHECK(l.threshold < 0.8);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 10; ++x) CHECK(l.ink.at(x, y) == (x < 5 ? 1 : 0));
  }
  SUBCASE("fixed threshold") {
    const FloatImage img(2, 1, std::vector<float>{0.4f, 0.6f});
    const auto l = binarize(img, Mask(2, 1, 1), parse_threshold("fixed:0.5"));
    CHECK(l.ink.at(0, 0) == 1);
    CHECK(l.ink.at(1, 0) == 0);
  }
  SUBCASE("constant image under otsu") {
    CHECK_THROWS_WITH_AS(binarize(FloatImage(4, 4, 0.3f), Mask(4, 4, 1), {}), doctest::Contains("fixed"), Error);
  }
  SUBCASE("region excludes background from the threshold and the labels") {
    FloatImage img(20, 1, 0.0f);
    Mask region(20, 1, 0);
    for (int x = 10; x < 20; ++x) {
      img.at(x, 0) = x < 15 ? 0.3f : 0.7f;
      region.at(x, 0) = 1;
    }
    const auto l = binarize(img, region, {});
    CHECK(l.threshold > 0.3);
    for (int x = 0; x < 20; ++x) {
      CHECK(l.ink.at(x, 0) <= l.region.at(x, 0));
      if (x >= 10) CHECK(l.ink.at(x, 0) == (x < 15 ? 1 : 0));
    }
  }
  SUBCASE("threshold parsing") {
    CHECK(parse_threshold("otsu").method == ThresholdMethod::otsu);
    CHECK(parse_threshold("fixed:0.25").value == 0.25);
    CHECK_THROWS_AS(parse_threshold("fixed:abc"), Error);
    CHECK_THROWS_AS(parse_threshold("median"), Error);
  }
  SUBCASE("save and load") {
    test::TempDir tmp;
    FloatImage img(6, 3);
    for (int x = 0; x < 6; ++x)
      for (int y = 0; y < 3; ++y) img.at(x, y) = 0.1f * x;
    auto l = binarize(img, Mask(6, 3, 1), {});
    l.transform = Affine2D::from_similarity(0.1, 1.01, {2, 2}, {0.5, 0});
    save_labels(tmp.path(), l);
    const auto back = load_labels(tmp.path());
    CHECK(back.ink == l.ink);
    CHECK(back.region == l.region);
    CHECK(back.threshold == l.threshold);
    CHECK(back.transform.m == l.transform.m);
  }
}

TEST_CASE("phantom photo aligns back onto the ground-truth mask") {
  phantom::PhantomSpec spec;
  spec.extent_x = 160;
  spec.extent_z = 96;
  spec.glyph_scale = 4;
  spec.ink_text = "HERC";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    spec.seed = seed;
    const auto p = phantom::generate_fragment(spec);
    const Mask& truth = p.truth.layers[0].ink_mask;
    const std::vector<Vector2d> uv{{10, 10}, {150, 12}, {12, 85}, {148, 84}};
    std::vector<Landmark> lm;
    for (const auto& q : uv) lm.push_back({p.photo.applied_transform.apply(q), q});
    const auto t = estimate_affine(lm);
    CHECK((t.m - p.photo.applied_transform.inverse().m).cwiseAbs().maxCoeff() < 1e-9);
    const auto warped = warp_photo(p.photo.image, t, truth.width(), truth.height());
    const auto labels = binarize(warped.image, warped.region, {});
    CHECK(dice(labels.ink, truth) >= 0.95);
  }
}
