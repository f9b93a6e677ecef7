#include <cmath>

#include <gtest/gtest.h>

#include <stainkit/augment.hpp>

#include "test_util.hpp"

namespace sk = stainkit;
using sk::testing::constant_patch;
using sk::testing::random_patch;

namespace {

constexpr float kLevel = 1.0f / 255.0f;

// Independent bilinear warp: explicit four-weight form in double, borders
// handled by clamping the sample position before taking neighbours.
sk::Patch reference_warp(const sk::Patch& p, const sk::DisplacementField& f) {
    sk::Patch out(p.height(), p.width());
    const double H = static_cast<double>(p.height());
    const double W = static_cast<double>(p.width());
    for (std::size_t y = 0; y < p.height(); ++y) {
        for (std::size_t x = 0; x < p.width(); ++x) {
            const std::size_t i = y * p.width() + x;
            double sy = std::min(std::max(y + static_cast<double>(f.dy[i]), 0.0), H - 1);
            double sx = std::min(std::max(x + static_cast<double>(f.dx[i]), 0.0), W - 1);
            int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            int y1 = std::min(y0 + 1, static_cast<int>(H) - 1), x1 = std::min(x0 + 1, static_cast<int>(W) - 1);
            double wy = sy - y0, wx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = static_cast<float>((1 - wy) * (1 - wx) * p.at(y0, x0, c) + (1 - wy) * wx * p.at(y0, x1, c) +
                                                     wy * (1 - wx) * p.at(y1, x0, c) + wy * wx * p.at(y1, x1, c));
            }
        }
    }
    return out;
}

sk::Patch gradient_patch(std::size_t n) {
    sk::Patch p(n, n);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            p.at(y, x, 0) = static_cast<float>(x) / (n - 1);
            p.at(y, x, 1) = static_cast<float>(y) / (n - 1);
            p.at(y, x, 2) = static_cast<float>(x + y) / (2 * (n - 1));
        }
    }
    return p;
}

} // namespace

TEST(Basic, NeutralIsIdentity) {
    auto p = random_patch(5, 5, 1);
    EXPECT_EQ(sk::augment_basic(p, 0, false, false), p);
}

TEST(Basic, HalfTurnIsInvolution) {
    auto p = random_patch(4, 6, 2);
    EXPECT_EQ(sk::augment_basic(sk::augment_basic(p, 2, false, false), 2, false, false), p);
    EXPECT_EQ(sk::augment_basic(sk::augment_basic(p, 0, true, true), 0, true, true), p);
}

TEST(Basic, QuarterTurnPermutesTwoByTwo) {
    // [[a b] [c d]] rotated a quarter turn counter-clockwise is [[b d] [a c]].
    sk::Patch p(2, 2);
    const float a = 0.1f, b = 0.2f, c = 0.3f, d = 0.4f;
    p.at(0, 0, 0) = a;
    p.at(0, 1, 0) = b;
    p.at(1, 0, 0) = c;
    p.at(1, 1, 0) = d;
    auto r = sk::augment_basic(p, 1, false, false);
    EXPECT_EQ(r.at(0, 0, 0), b);
    EXPECT_EQ(r.at(0, 1, 0), d);
    EXPECT_EQ(r.at(1, 0, 0), a);
    EXPECT_EQ(r.at(1, 1, 0), c);
    auto full = sk::augment_basic(sk::augment_basic(sk::augment_basic(r, 1, false, false), 1, false, false), 1,
                                  false, false);
    EXPECT_EQ(full, p);
    auto h = sk::augment_basic(p, 0, true, false);
    EXPECT_EQ(h.at(0, 0, 0), b);
    EXPECT_EQ(h.at(1, 0, 0), d);
    auto v = sk::augment_basic(p, 0, false, true);
    EXPECT_EQ(v.at(0, 0, 0), c);
    EXPECT_EQ(v.at(0, 1, 0), d);
}

TEST(Basic, OddRotationRequiresSquare) {
    try {
        (void)sk::augment_basic(random_patch(3, 4, 1), 1, false, false);
        FAIL();
    } catch (const sk::Error& e) {
        EXPECT_EQ(e.kind(), sk::ErrorKind::NonSquareRotation);
    }
    EXPECT_NO_THROW((void)sk::augment_basic(random_patch(3, 4, 1), 2, true, false));
}

TEST(Elastic, ZeroAlphaIsIdentity) {
    auto p = random_patch(16, 16, 3);
    EXPECT_EQ(sk::elastic_deform(p, 0.0, 10.0, 42), p);
}

TEST(Elastic, ConstantPatchUnchanged) {
    auto p = constant_patch(16, 16, 0.3f, 0.6f, 0.9f);
    EXPECT_EQ(sk::elastic_deform(p, 100.0, 3.0, 9), p);
}

TEST(Elastic, MatchesReferenceWarp) {
    auto p = gradient_patch(8);
    auto field = sk::elastic_displacement(8, 8, 2.0, 1.0, 1234);
    auto expected = reference_warp(p, field);
    auto got = sk::elastic_deform(p, 2.0, 1.0, 1234);
    EXPECT_LE(sk::max_abs_diff(got, expected), 1e-5f);
    EXPECT_GT(sk::max_abs_diff(got, p), 1e-3f);
}

TEST(Elastic, FieldIsSmoothedUniformNoise) {
    auto raw = sk::elastic_displacement(32, 32, 1.0, 1e-9, 5);
    for (float v : raw.dx) {
        ASSERT_GE(v, -1.0f);
        ASSERT_LE(v, 1.0f);
    }
    EXPECT_THROW((void)sk::elastic_displacement(4, 4, -1.0, 1.0, 0), sk::Error);
}

TEST(Blur, ZeroSigmaIsIdentity) {
    auto p = random_patch(8, 8, 4);
    EXPECT_EQ(sk::gaussian_blur(p, 0.0), p);
}

TEST(Blur, ImpulseResponseIsSampledGaussian) {
    const double sigma = 1.0;
    sk::Patch p(9, 9);
    p.at(4, 4, 0) = 1.0f;
    auto out = sk::gaussian_blur(p, sigma);
    double norm = 0.0;
    for (int i = -3; i <= 3; ++i) {
        norm += std::exp(-i * i / (2 * sigma * sigma));
    }
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 9; ++x) {
            const int dy = y - 4, dx = x - 4;
            double expected = 0.0;
            if (std::abs(dy) <= 3 && std::abs(dx) <= 3) {
                expected = std::exp(-(dy * dy) / 2.0) * std::exp(-(dx * dx) / 2.0) / (norm * norm);
            }
            EXPECT_NEAR(out.at(y, x, 0), expected, 1e-6) << y << "," << x;
        }
    }
}

TEST(Noise, ZeroSigmaIsIdentityAndSeeded) {
    auto p = random_patch(8, 8, 5);
    EXPECT_EQ(sk::gaussian_noise(p, 0.0, 1), p);
    EXPECT_EQ(sk::gaussian_noise(p, 0.05, 1), sk::gaussian_noise(p, 0.05, 1));
    EXPECT_NE(sk::gaussian_noise(p, 0.05, 1), sk::gaussian_noise(p, 0.05, 2));
}

TEST(Noise, EmpiricalSigma) {
    auto p = constant_patch(64, 64, 0.5f, 0.5f, 0.5f);
    auto n = sk::gaussian_noise(p, 0.05, 99);
    double ss = 0.0;
    for (float v : n.data()) {
        ss += (v - 0.5) * (v - 0.5);
    }
    EXPECT_NEAR(std::sqrt(ss / n.data().size()), 0.05, 0.003);
}

TEST(Rescale, UnitFactorIsIdentity) {
    auto p = random_patch(10, 10, 6);
    EXPECT_LE(sk::max_abs_diff(sk::rescale(p, 1.0), p), 1e-6f);
}

TEST(Rescale, KeepsSizeAndConstants) {
    auto p = constant_patch(10, 12, 0.2f, 0.4f, 0.6f);
    for (double f : {0.5, 0.8, 1.2, 3.0}) {
        auto r = sk::rescale(p, f);
        ASSERT_TRUE(r.same_shape(p));
        EXPECT_LE(sk::max_abs_diff(r, p), 1e-6f);
    }
    EXPECT_THROW((void)sk::rescale(p, 0.0), sk::Error);
    EXPECT_THROW((void)sk::rescale(p, 4.5), sk::Error);
}

TEST(Rescale, UpscaleMagnifiesCenter) {
    auto p = gradient_patch(16);
    auto r = sk::rescale(p, 2.0);
    // Red encodes x; after 2x zoom about the center the horizontal slope halves.
    const float slope_in = p.at(8, 12, 0) - p.at(8, 4, 0);
    const float slope_out = r.at(8, 12, 0) - r.at(8, 4, 0);
    EXPECT_NEAR(slope_out, slope_in / 2, 0.02);
}

TEST(BrightnessContrast, ReferencePoints) {
    auto p = random_patch(8, 8, 7);
    EXPECT_EQ(sk::brightness_contrast(p, 1.0, 1.0), p);
    auto flat = sk::brightness_contrast(p, 1.0, 0.0);
    auto mean = sk::channel_means(p);
    for (std::size_t i = 0; i < flat.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) {
            EXPECT_NEAR(flat.pixel(i)[c], mean[c], 1e-6);
        }
    }
    auto dim = sk::brightness_contrast(constant_patch(4, 4, 1, 1, 1), 0.65, 1.0);
    for (float v : dim.data()) {
        EXPECT_NEAR(v, 0.65f, 1e-6);
    }
}

TEST(HsvShift, ReferencePoints) {
    auto p = random_patch(8, 8, 8);
    EXPECT_LE(sk::max_abs_diff(sk::hsv_shift(p, 0, 0, 0), p), 1e-6f);
    auto green = sk::hsv_shift(constant_patch(2, 2, 1, 0, 0), 1.0 / 3.0, 0, 0);
    EXPECT_NEAR(green.pixel(0)[0], 0.0f, 1e-6);
    EXPECT_NEAR(green.pixel(0)[1], 1.0f, 1e-6);
    EXPECT_NEAR(green.pixel(0)[2], 0.0f, 1e-6);
    auto gray = sk::hsv_shift(p, 0.2, -1.0, 0);
    for (std::size_t i = 0; i < gray.pixel_count(); ++i) {
        auto px = gray.pixel(i);
        EXPECT_EQ(px[0], px[1]);
        EXPECT_EQ(px[1], px[2]);
    }
}

TEST(HedShift, NeutralIsIdentityWithinOneLevel) {
    auto p = random_patch(16, 16, 9);
    auto out = sk::hed_shift(p, {0, 0, 0}, {0, 0, 0});
    EXPECT_LE(sk::max_abs_diff(out, p), kLevel);
}

TEST(HedShift, HematoxylinOffsetOnWhite) {
    auto m = sk::StainMatrix::ruifrok();
    auto out = sk::hed_shift(constant_patch(2, 2, 1, 1, 1), {0, 0, 0}, {0.2, 0, 0}, m);
    // expected: od = 0.2 * H row, then back to intensity
    std::array<float, 3> expected{};
    for (int k = 0; k < 3; ++k) {
        const double od = 0.2 * m.matrix()(0, k);
        expected[k] = static_cast<float>((256.0 * std::pow(10.0, -od) - 1.0) / 255.0);
        EXPECT_NEAR(out.pixel(0)[k], expected[k], 1e-5);
    }
    EXPECT_GT(out.pixel(0)[2], out.pixel(0)[0]);
    EXPECT_GT(out.pixel(0)[2], out.pixel(0)[1]);
}

TEST(HedShift, SuppressingEosinRemovesIt) {
    auto m = sk::StainMatrix::ruifrok();
    sk::ConcentrationPatch c(4, 4);
    for (std::size_t i = 0; i < c.pixel_count(); ++i) {
        c.pixel(i)[0] = 0.3f + 0.02f * i;
        c.pixel(i)[1] = 0.5f;
        c.pixel(i)[2] = 0.05f;
    }
    auto p = sk::od_to_rgb(sk::reconvolve(c, m));
    auto out = sk::hed_shift(p, {0, -1, 0}, {0, 0, 0}, m);
    auto back = sk::deconvolve(sk::rgb_to_od(out), m);
    for (std::size_t i = 0; i < back.pixel_count(); ++i) {
        EXPECT_NEAR(back.pixel(i)[1], 0.0f, 1e-4);
        EXPECT_NEAR(back.pixel(i)[0], c.pixel(i)[0], 1e-4);
    }
}

TEST(Config, DefaultsMatchTunedRanges) {
    auto morph = sk::AugmentConfig::defaults(sk::Category::Morphology);
    EXPECT_EQ(morph.range("scale"), (sk::Range{0.8, 1.2}));
    EXPECT_EQ(morph.range("elastic_alpha"), (sk::Range{80, 120}));
    EXPECT_EQ(morph.range("elastic_sigma"), (sk::Range{9, 11}));
    EXPECT_EQ(morph.range("noise_sigma"), (sk::Range{0, 0.1}));
    EXPECT_EQ(morph.range("blur_sigma"), (sk::Range{0, 0.1}));
    auto bc = sk::AugmentConfig::defaults(sk::Category::BC);
    EXPECT_EQ(bc.range("brightness"), (sk::Range{0.65, 1.35}));
    EXPECT_EQ(bc.range("contrast"), (sk::Range{0.5, 1.5}));
    EXPECT_EQ(sk::AugmentConfig::defaults(sk::Category::HSVLight).range("hue"), (sk::Range{-0.1, 0.1}));
    EXPECT_EQ(sk::AugmentConfig::defaults(sk::Category::HSVStrong).range("saturation"), (sk::Range{-1, 1}));
    EXPECT_EQ(sk::AugmentConfig::defaults(sk::Category::HSVStrong).range("value"), (sk::Range{0, 0}));
    EXPECT_EQ(sk::AugmentConfig::defaults(sk::Category::HEDLight).range("hed_alpha"), (sk::Range{-0.05, 0.05}));
    EXPECT_EQ(sk::AugmentConfig::defaults(sk::Category::HEDStrong).range("hed_beta"), (sk::Range{-0.2, 0.2}));
    auto only = sk::AugmentConfig::defaults(sk::Category::HSVOnlyMax);
    EXPECT_EQ(only.ranges.size(), 3u);
    EXPECT_EQ(only.range("value"), (sk::Range{-1, 1}));
}

TEST(Config, CategoriesNest) {
    using sk::Category;
    auto keys = [](Category c) {
        std::set<std::string> k;
        for (const auto& [name, r] : sk::AugmentConfig::defaults(c).ranges) {
            k.insert(name);
        }
        return k;
    };
    auto subset = [](const std::set<std::string>& a, const std::set<std::string>& b) {
        return std::includes(b.begin(), b.end(), a.begin(), a.end());
    };
    EXPECT_TRUE(subset(keys(Category::Basic), keys(Category::Morphology)));
    EXPECT_TRUE(subset(keys(Category::Morphology), keys(Category::BC)));
    for (auto c : {Category::HSVLight, Category::HSVStrong, Category::HEDLight, Category::HEDStrong}) {
        EXPECT_TRUE(subset(keys(Category::BC), keys(c)));
        EXPECT_TRUE(sk::stages_of(c).geometric);
    }
    EXPECT_FALSE(sk::stages_of(Category::HSVOnlyMax).geometric);
    EXPECT_FALSE(sk::stages_of(Category::HSVOnlyMax).bc);
}

TEST(Config, ValidationRejectsBadRanges) {
    auto cfg = sk::AugmentConfig::defaults(sk::Category::BC);
    cfg.ranges["brightness"] = {1.2, 0.9};
    EXPECT_THROW(cfg.validate(), sk::Error);
    cfg = sk::AugmentConfig::defaults(sk::Category::Basic);
    cfg.ranges["hue"] = {0, 0};
    EXPECT_THROW(cfg.validate(), sk::Error);
    cfg = sk::AugmentConfig::defaults(sk::Category::HSVStrong);
    cfg.ranges.erase("hue");
    EXPECT_THROW(cfg.validate(), sk::Error);
    for (const auto& [cat, name] : sk::kCategoryNames) {
        EXPECT_NO_THROW(sk::AugmentConfig::defaults(cat).validate()) << name;
    }
}

TEST(Sampling, EveryDrawInsideItsRange) {
    for (const auto& [cat, name] : sk::kCategoryNames) {
        auto cfg = sk::AugmentConfig::defaults(cat, 77);
        for (std::uint64_t i = 0; i < 10000; ++i) {
            auto s = sk::sample_params(cfg, i);
            auto in = [&](std::string_view key, double v) {
                if (cfg.ranges.contains(key)) {
                    ASSERT_TRUE(cfg.range(key).contains(v)) << name << " " << key << "=" << v;
                }
            };
            in("scale", s.scale);
            in("elastic_alpha", s.elastic_alpha);
            in("elastic_sigma", s.elastic_sigma);
            in("noise_sigma", s.noise_sigma);
            in("blur_sigma", s.blur_sigma);
            in("brightness", s.brightness);
            in("contrast", s.contrast);
            in("hue", s.hue);
            in("saturation", s.saturation);
            in("value", s.value);
            for (int j = 0; j < 3; ++j) {
                in("hed_alpha", s.hed_alpha[j]);
                in("hed_beta", s.hed_beta[j]);
            }
            ASSERT_GE(s.rotation_k, 0);
            ASSERT_LE(s.rotation_k, 3);
        }
    }
}

TEST(Sampling, StrongHueCoversTails) {
    auto cfg = sk::AugmentConfig::defaults(sk::Category::HSVStrong, 2024);
    double lo = 1.0, hi = -1.0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const double h = sk::sample_params(cfg, i).hue;
        lo = std::min(lo, h);
        hi = std::max(hi, h);
    }
    EXPECT_LE(lo, -0.9);
    EXPECT_GE(hi, 0.9);
}

TEST(Sampling, AllRotationsAndFlipsOccur) {
    auto cfg = sk::AugmentConfig::defaults(sk::Category::Basic, 1);
    std::array<int, 4> counts{};
    int flips = 0;
    for (std::uint64_t i = 0; i < 400; ++i) {
        auto s = sk::sample_params(cfg, i);
        counts[s.rotation_k]++;
        flips += s.flip_horizontal;
    }
    for (int c : counts) {
        EXPECT_GT(c, 50);
    }
    EXPECT_GT(flips, 150);
    EXPECT_LT(flips, 250);
}

TEST(Profile, DeterministicPerCallIndex) {
    auto p = random_patch(32, 32, 10);
    for (const auto& [cat, name] : sk::kCategoryNames) {
        auto cfg = sk::AugmentConfig::defaults(cat, 5);
        auto a = sk::apply_profile(p, cfg, 17);
        auto b = sk::apply_profile(p, cfg, 17);
        EXPECT_EQ(a, b) << name;
        EXPECT_TRUE(sk::all_finite(a));
        for (float v : a.data()) {
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(Profile, NeutralDrawsAreIdentity) {
    auto p = random_patch(16, 16, 11);
    for (const auto& [cat, name] : sk::kCategoryNames) {
        auto cfg = sk::AugmentConfig::defaults(cat, 3);
        auto s = sk::neutralized(sk::sample_params(cfg, 0));
        EXPECT_LE(sk::max_abs_diff(sk::apply_params(p, s), p), kLevel) << name;
    }
}

TEST(Profile, MorphologyWithNeutralMorphEqualsBasic) {
    auto p = random_patch(16, 16, 12);
    auto basic = sk::AugmentConfig::defaults(sk::Category::Basic, 9);
    auto morph = sk::AugmentConfig::defaults(sk::Category::Morphology, 9);
    for (auto& [k, r] : morph.ranges) {
        const double neutral = (k == "scale") ? 1.0 : (k == "elastic_sigma" ? 10.0 : 0.0);
        r = {neutral, neutral};
    }
    for (std::uint64_t i = 0; i < 20; ++i) {
        EXPECT_EQ(sk::apply_profile(p, morph, i), sk::apply_profile(p, basic, i));
    }
}

TEST(Profile, DistinctCallIndicesDiffer) {
    auto p = random_patch(16, 16, 13);
    auto cfg = sk::AugmentConfig::defaults(sk::Category::HSVStrong, 1);
    EXPECT_NE(sk::apply_profile(p, cfg, 0), sk::apply_profile(p, cfg, 1));
}
