#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include <stainkit/normalize.hpp>
#include <stainkit/synthetic.hpp>

#include "test_util.hpp"

namespace sk = stainkit;
using sk::testing::constant_patch;
using sk::testing::random_patch;
using sk::Patch;

namespace {

using Vec3 = std::array<double, 3>;

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

double angle_deg(const Vec3& a, const Vec3& b) {
    const double d = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
    return std::acos(d) * 180.0 / std::numbers::pi;
}

/// Unit H and E exactly `deg` apart in the plane of the standard pair.
std::pair<Vec3, Vec3> stain_pair(double deg, double tilt = 0.0) {
    const Vec3 e = normalized({0.072 + tilt, 0.990, 0.105});
    const Vec3 h0 = normalized({0.650, 0.704, 0.286 + tilt});
    const double d = h0[0] * e[0] + h0[1] * e[1] + h0[2] * e[2];
    const Vec3 u = normalized({h0[0] - d * e[0], h0[1] - d * e[1], h0[2] - d * e[2]});
    const double t = deg * std::numbers::pi / 180.0;
    return {normalized({std::cos(t) * e[0] + std::sin(t) * u[0], std::cos(t) * e[1] + std::sin(t) * u[1],
                        std::cos(t) * e[2] + std::sin(t) * u[2]}),
            e};
}

sk::NormProfile deconv_profile(const Vec3& h, const Vec3& e, double sh, double se) {
    sk::NormProfile p;
    p.method = sk::NormMethod::Deconv;
    p.stain_matrix = sk::StainMatrix::from_two(h, e);
    p.conc_scale = {sh, se};
    return p;
}

sk::ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const sk::Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return sk::ErrorKind::InvalidArgument;
}

Patch quantized(Patch p) {
    for (float& v : p.data()) {
        v = std::round(v * 255.0f) / 255.0f;
    }
    return p;
}

} // namespace

TEST(Percentile, MatchesLinearInterpolation) {
    std::vector<double> v{4, 1, 3, 2};
    EXPECT_DOUBLE_EQ(sk::detail::percentile(v, 25.0), 1.75);
    EXPECT_DOUBLE_EQ(sk::detail::percentile(v, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(sk::detail::percentile(v, 100.0), 4.0);
    EXPECT_DOUBLE_EQ(sk::detail::percentile(v, 50.0), 2.5);
}

TEST(FitOptions, RejectsOutOfDomain) {
    sk::FitOptions o;
    EXPECT_NO_THROW(o.validate());
    o.od_threshold = 0.0;
    EXPECT_THROW(o.validate(), sk::Error);
    o = {};
    o.angle_percentile = 50.0;
    EXPECT_THROW(o.validate(), sk::Error);
    o = {};
    o.conc_percentile = 50.0;
    EXPECT_THROW(o.validate(), sk::Error);
    o = {};
    o.sample_cap = 0;
    EXPECT_THROW(o.validate(), sk::Error);
}

TEST(FitMacenko, RecoversStainVectorsThirtyDegreesApart) {
    for (double tilt : {0.0, 0.1, -0.03}) {
        auto [h, e] = stain_pair(30.0, tilt);
        ASSERT_NEAR(angle_deg(h, e), 30.0, 1e-9);
        sk::SyntheticSpec spec;
        spec.count = 60;
        spec.hematoxylin = h;
        spec.eosin = e;
        spec.od_noise = 0.005;
        spec.seed = 17;
        auto set = sk::synthesize_set(spec);
        auto prof = sk::fit_macenko(set);
        EXPECT_EQ(prof.method, sk::NormMethod::Deconv);
        EXPECT_LT(angle_deg(prof.stain_matrix.row(0), h), 2.0) << "tilt " << tilt;
        EXPECT_LT(angle_deg(prof.stain_matrix.row(1), e), 2.0) << "tilt " << tilt;
        EXPECT_GT(prof.conc_scale[0], 0.0);
        EXPECT_GT(prof.conc_scale[1], 0.0);
        EXPECT_NO_THROW(prof.validate());
    }
}

TEST(FitMacenko, ConcentrationScaleTracksGenerator) {
    sk::SyntheticSpec spec;
    spec.count = 40;
    spec.od_noise = 0.0;
    auto prof = sk::fit_macenko(sk::synthesize_set(spec));
    // 99th percentiles sit near the top of the generated ranges
    EXPECT_NEAR(prof.conc_scale[0], spec.h_conc_max, 0.15);
    EXPECT_NEAR(prof.conc_scale[1], spec.e_conc_max * (1 + spec.e_jitter), 0.15);
}

TEST(FitMacenko, WhiteSetHasInsufficientTissue) {
    std::vector<Patch> white(10, constant_patch(32, 32, 1, 1, 1));
    EXPECT_EQ(kind_of([&] { (void)sk::fit_macenko(white); }), sk::ErrorKind::InsufficientTissue);
    std::vector<Patch> none;
    EXPECT_EQ(kind_of([&] { (void)sk::fit_macenko(none); }), sk::ErrorKind::InsufficientTissue);
}

TEST(FitMacenko, SingleStainIsDegenerate) {
    const auto h = sk::StainMatrix::ruifrok().row(0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.3, 1.5);
    std::vector<Patch> set;
    for (int n = 0; n < 4; ++n) {
        Patch p(32, 32);
        for (std::size_t i = 0; i < p.pixel_count(); ++i) {
            const double c = u(rng);
            for (int k = 0; k < 3; ++k) {
                p.pixel(i)[k] = sk::od_to_intensity(static_cast<float>(c * h[k]));
            }
        }
        set.push_back(p);
    }
    EXPECT_EQ(kind_of([&] { (void)sk::fit_macenko(set); }), sk::ErrorKind::DegeneratePlane);
}

TEST(FitMacenko, DeterministicAndRespectsSampleCap) {
    sk::SyntheticSpec spec;
    spec.count = 20;
    auto set = sk::synthesize_set(spec);
    EXPECT_EQ(sk::fit_macenko(set), sk::fit_macenko(set));
    sk::FitOptions capped;
    capped.sample_cap = 5000;
    auto full = sk::fit_macenko(set);
    auto sub = sk::fit_macenko(set, capped);
    EXPECT_LT(angle_deg(full.stain_matrix.row(0), sub.stain_matrix.row(0)), 2.0);
}

TEST(SampleOd, StrideCoversTheSetEvenly) {
    std::vector<Patch> set(3, constant_patch(10, 10, 0.3f, 0.3f, 0.3f));
    auto s = sk::detail::sample_od(set, 60, 0.15, true);
    EXPECT_EQ(s.all.size(), 60u);  // stride 5 over 300 pixels
    EXPECT_EQ(s.tissue.size(), 60u);
    auto all = sk::detail::sample_od(set, 1000, 0.15, true);
    EXPECT_EQ(all.all.size(), 300u);
}

TEST(ApplyMacenko, SelfNormalizationWithinTwoLevels) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> deg(20.0, 45.0);
    std::uniform_real_distribution<double> tilt(-0.05, 0.1);
    for (int trial = 0; trial < 10; ++trial) {
        auto [h, e] = stain_pair(deg(rng), tilt(rng));
        sk::SyntheticSpec spec;
        spec.count = 12;
        spec.hematoxylin = h;
        spec.eosin = e;
        spec.seed = static_cast<std::uint64_t>(trial);
        auto set = sk::synthesize_set(spec);
        auto prof = sk::fit_macenko(set);
        for (const auto& p : set) {
            ASSERT_LE(sk::max_abs_diff(sk::apply_macenko(p, prof, prof), p), 2.0f / 255.0f);
        }
    }
}

TEST(ApplyMacenko, RecoversRescaledConcentrations) {
    auto [hs, es] = stain_pair(35.0, 0.05);
    auto [ht, et] = stain_pair(28.0, -0.02);
    auto source = deconv_profile(hs, es, 1.2, 0.8);
    auto target = deconv_profile(ht, et, 0.9, 0.6);
    const auto ms = source.stain_matrix.matrix();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 0.9);
    Patch p(16, 16);
    std::vector<std::array<double, 2>> truth;
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        const double ch = u(rng);
        const double ce = u(rng);
        truth.push_back({ch, ce});
        for (int k = 0; k < 3; ++k) {
            p.pixel(i)[k] = sk::od_to_intensity(static_cast<float>(ch * ms(0, k) + ce * ms(1, k)));
        }
    }
    auto out = sk::apply_macenko(p, target, source);
    auto c = sk::deconvolve(sk::rgb_to_od(out), target.stain_matrix);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.pixel_count(); ++i) {
        worst = std::max(worst, std::abs(c.pixel(i)[0] - truth[i][0] * 0.9 / 1.2));
        worst = std::max(worst, std::abs(c.pixel(i)[1] - truth[i][1] * 0.6 / 0.8));
        worst = std::max(worst, std::abs(static_cast<double>(c.pixel(i)[2])));
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(ApplyMacenko, WhiteStaysWhite) {
    auto [h, e] = stain_pair(30.0);
    auto a = deconv_profile(h, e, 1.0, 0.7);
    auto b = deconv_profile(sk::StainMatrix::ruifrok().row(0), sk::StainMatrix::ruifrok().row(1), 1.3, 0.5);
    auto white = constant_patch(4, 4, 1, 1, 1);
    EXPECT_LE(sk::max_abs_diff(sk::apply_macenko(white, a, b), white), 1.0f / 255.0f);
}

TEST(ApplyMacenko, RejectsNonDeconvProfiles) {
    auto good = deconv_profile(sk::StainMatrix::ruifrok().row(0), sk::StainMatrix::ruifrok().row(1), 1, 1);
    sk::NormProfile lut;
    lut.method = sk::NormMethod::Lut;
    auto p = random_patch(2, 2, 1);
    EXPECT_EQ(kind_of([&] { (void)sk::apply_macenko(p, good, lut); }), sk::ErrorKind::ProfileMismatch);
    EXPECT_EQ(kind_of([&] { (void)sk::apply_macenko(p, lut, good); }), sk::ErrorKind::ProfileMismatch);
}

TEST(ApplyMacenko, ConcurrentMatchesSequential) {
    sk::SyntheticSpec spec;
    spec.count = 8;
    auto set = sk::synthesize_set(spec);
    auto prof = sk::fit_macenko(set);
    auto ref = deconv_profile(sk::StainMatrix::ruifrok().row(0), sk::StainMatrix::ruifrok().row(1), 1.1, 0.7);
    const sk::MacenkoNormalizer norm(ref, prof);
    std::vector<Patch> seq;
    for (const auto& p : set) {
        seq.push_back(norm(p));
    }
    std::vector<Patch> par(set.size(), Patch(1, 1));
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < set.size(); ++i) {
        workers.emplace_back([&, i] { par[i] = norm(set[i]); });
    }
    for (auto& t : workers) {
        t.join();
    }
    EXPECT_EQ(seq, par);
}

TEST(QuantileTransfer, IdentityOnSameSample) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.5, 0.2);
    std::vector<double> v(5000);
    for (double& x : v) {
        x = n(rng);
    }
    sk::detail::QuantileTransfer t(v, v);
    for (double x : {-1.0, 0.0, 0.3, 0.5, 0.77, 2.0}) {
        EXPECT_NEAR(t(x), x, 1e-12);
    }
}

TEST(QuantileTransfer, MapsShiftedDistribution) {
    std::vector<double> src;
    std::vector<double> dst;
    for (int i = 0; i < 1000; ++i) {
        src.push_back(i * 0.001);
        dst.push_back(2.0 * i * 0.001 + 0.5);
    }
    sk::detail::QuantileTransfer t(src, dst);
    EXPECT_NEAR(t(0.25), 1.0, 1e-9);
    EXPECT_NEAR(t(-0.1), 0.4, 1e-9);  // offset beyond the ends
    EXPECT_NEAR(t(1.5), 1.5 + (2.498 - 0.999), 1e-9);
}

TEST(QuantileTransfer, FlatSourceStaysMonotone) {
    std::vector<double> src(400, 1.0);
    std::vector<double> dst;
    for (int i = 0; i < 400; ++i) {
        dst.push_back(i);
    }
    sk::detail::QuantileTransfer t(src, dst);
    EXPECT_LE(t(0.5), t(1.0));
    EXPECT_LE(t(1.0), t(1.5));
}

TEST(Isotonic, PoolsAdjacentViolators) {
    auto fit = sk::detail::isotonic({1, 3, 2, 4}, {1, 1, 1, 1});
    EXPECT_EQ(fit, (std::vector<double>{1, 2.5, 2.5, 4}));
    auto weighted = sk::detail::isotonic({5, 1}, {3, 1});
    EXPECT_DOUBLE_EQ(weighted[0], 4.0);
    EXPECT_DOUBLE_EQ(weighted[1], 4.0);
    auto sorted = sk::detail::isotonic({1, 2, 3}, {1, 2, 3});
    EXPECT_EQ(sorted, (std::vector<double>{1, 2, 3}));
}

TEST(Isotonic, MatchesBruteForceOnSmallInputs) {
    // exhaustive search over monotone sequences on a coarse grid
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> val(0, 4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> y(4);
        std::vector<double> w(4, 1.0);
        for (double& v : y) {
            v = val(rng);
        }
        auto fit = sk::detail::isotonic(y, w);
        double fit_loss = 0.0;
        for (int i = 0; i < 4; ++i) {
            fit_loss += (fit[i] - y[i]) * (fit[i] - y[i]);
        }
        double best = 1e9;
        const int steps = 17;  // grid of quarter units over [0, 4]
        for (int a = 0; a < steps; ++a)
            for (int b = a; b < steps; ++b)
                for (int c = b; c < steps; ++c)
                    for (int d = c; d < steps; ++d) {
                        const double z[4] = {a / 4.0, b / 4.0, c / 4.0, d / 4.0};
                        double l = 0.0;
                        for (int i = 0; i < 4; ++i) l += (z[i] - y[i]) * (z[i] - y[i]);
                        best = std::min(best, l);
                    }
        // the continuous optimum can only beat the grid
        EXPECT_LE(fit_loss, best + 1e-12);
        EXPECT_TRUE(std::is_sorted(fit.begin(), fit.end()));
    }
}

TEST(FitLut, SelfFitIsNearIdentity) {
    sk::SyntheticSpec spec;
    spec.count = 30;
    auto set = sk::synthesize_set(spec);
    for (auto& p : set) {
        p = quantized(p);
    }
    auto prof = sk::fit_lut(set, set);
    EXPECT_EQ(prof.method, sk::NormMethod::Lut);
    EXPECT_NO_THROW(prof.validate());
    for (int k = 0; k < 3; ++k) {
        for (int b = 0; b < 256; ++b) {
            ASSERT_LE(std::abs(prof.luts[k][b] - b), 1) << "channel " << k << " byte " << b;
        }
    }
    for (const auto& p : set) {
        ASSERT_LE(sk::max_abs_diff(sk::apply_lut(p, prof), p), 2.0f / 255.0f);
        auto once = sk::apply_lut(p, prof);
        ASSERT_LE(sk::max_abs_diff(sk::apply_lut(once, prof), once), 1.0f / 255.0f + 1e-6f);
    }
}

TEST(FitLut, UndoesGlobalBrightnessGain) {
    sk::SyntheticSpec spec;
    spec.count = 40;
    spec.seed = 3;
    auto templ = sk::synthesize_set(spec);
    std::vector<Patch> source;
    for (auto& p : templ) {
        p = quantized(p);
        Patch s = p;
        for (float& v : s.data()) {
            v *= 0.8f;
        }
        source.push_back(quantized(s));
    }
    auto prof = sk::fit_lut(source, templ);
    std::array<double, 3> want{};
    std::array<double, 3> got{};
    for (std::size_t i = 0; i < templ.size(); ++i) {
        auto a = sk::channel_means(templ[i]);
        auto b = sk::channel_means(sk::apply_lut(source[i], prof));
        for (int k = 0; k < 3; ++k) {
            want[k] += a[k] / templ.size();
            got[k] += b[k] / templ.size();
        }
    }
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(got[k], want[k], 2.0 / 255.0) << "channel " << k;
    }
}

TEST(FitLut, DisjointSupportsStillMonotone) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> dark(0.0f, 0.2f);
    std::uniform_real_distribution<float> light(0.45f, 0.7f);
    std::vector<Patch> src;
    std::vector<Patch> tgt;
    for (int n = 0; n < 4; ++n) {
        Patch a(32, 32);
        Patch b(32, 32);
        for (float& v : a.data()) v = dark(rng);
        for (float& v : b.data()) v = light(rng);
        src.push_back(a);
        tgt.push_back(b);
    }
    auto prof = sk::fit_lut(src, tgt);
    EXPECT_NO_THROW(prof.validate());
    for (const auto& ch : prof.luts) {
        EXPECT_TRUE(std::is_sorted(ch.begin(), ch.end()));
    }
}

TEST(FitLut, InsufficientTissueOnEitherSide) {
    sk::SyntheticSpec spec;
    spec.count = 5;
    auto tissue = sk::synthesize_set(spec);
    std::vector<Patch> white(5, constant_patch(32, 32, 1, 1, 1));
    EXPECT_EQ(kind_of([&] { (void)sk::fit_lut(white, tissue); }), sk::ErrorKind::InsufficientTissue);
    EXPECT_EQ(kind_of([&] { (void)sk::fit_lut(tissue, white); }), sk::ErrorKind::InsufficientTissue);
}

TEST(ApplyLut, IdentityAndConstantPatches) {
    sk::NormProfile prof;
    prof.method = sk::NormMethod::Lut;
    auto p = quantized(random_patch(9, 7, 3));
    EXPECT_EQ(sk::apply_lut(p, prof), p);
    prof.luts[0][100] = 120;  // still monotone
    for (int b = 101; b < 121; ++b) prof.luts[0][b] = 120;
    auto c = constant_patch(5, 5, 100.0f / 255.0f, 0.5f, 0.25f);
    auto out = sk::apply_lut(c, prof);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        EXPECT_EQ(out.pixel(i)[0], 120.0f / 255.0f);
        EXPECT_EQ(out.pixel(i)[1], out.pixel(0)[1]);
        EXPECT_EQ(out.pixel(i)[2], out.pixel(0)[2]);
    }
}

TEST(ApplyLut, RejectsOtherMethods) {
    sk::NormProfile prof;
    prof.method = sk::NormMethod::Deconv;
    EXPECT_EQ(kind_of([&] { (void)sk::apply_lut(random_patch(2, 2, 0), prof); }), sk::ErrorKind::ProfileMismatch);
}

TEST(NormProfile, ValidateCatchesBrokenInvariants) {
    sk::NormProfile p;
    EXPECT_NO_THROW(p.validate());
    p.luts[1][10] = 200;
    EXPECT_THROW(p.validate(), sk::Error);
    p = {};
    p.conc_scale[1] = 0.0;
    EXPECT_THROW(p.validate(), sk::Error);
}

TEST(NormMethod, StringRoundTrip) {
    for (auto m : {sk::NormMethod::Identity, sk::NormMethod::Grayscale, sk::NormMethod::Deconv, sk::NormMethod::Lut}) {
        EXPECT_EQ(sk::norm_method_from_string(sk::to_string(m)), m);
    }
    EXPECT_EQ(sk::norm_method_from_string("macenko"), sk::NormMethod::Deconv);
    EXPECT_THROW(sk::norm_method_from_string("style"), sk::Error);
}

TEST(NormalizeSimple, IdentityAndGray) {
    auto p = random_patch(6, 6, 12);
    EXPECT_EQ(sk::normalize_identity(p), p);
    EXPECT_EQ(sk::normalize_identity(sk::normalize_identity(p)), p);
    auto g = sk::normalize_gray(p);
    EXPECT_EQ(g, sk::rgb_to_gray(p));
    EXPECT_EQ(sk::normalize_gray(g), g);
}

TEST(Synthetic, DeterministicPerIndex) {
    sk::SyntheticSpec spec;
    spec.count = 3;
    auto a = sk::synthesize_set(spec);
    EXPECT_EQ(a[1], sk::synthesize_patch(spec, 1));
    EXPECT_NE(a[0], a[1]);
    spec.seed = 1;
    EXPECT_NE(sk::synthesize_patch(spec, 0), a[0]);
    spec.radius_min = 0.0;
    EXPECT_THROW(spec.validate(), sk::Error);
}

namespace {

// Tests every nucleus at every pixel.
sk::Patch synthesize_brute_force(const sk::SyntheticSpec& spec, std::uint64_t index) {
    const sk::StainMatrix m = sk::StainMatrix::from_two(spec.hematoxylin, spec.eosin);
    sk::Stream rng(spec.seed, {index, 0x5e7});
    const double hh = static_cast<double>(spec.height);
    const double ww = static_cast<double>(spec.width);
    const double expected = spec.nuclei_density * hh * ww;
    std::poisson_distribution<int> poisson(std::max(expected, 1e-12));
    const int n = expected > 0.0 ? poisson(rng.engine()) : 0;
    std::vector<sk::detail::Ellipse> nuclei;
    std::vector<double> conc;
    for (int i = 0; i < n; ++i) {
        nuclei.push_back(sk::detail::random_ellipse(rng, hh, ww, spec.radius_min, spec.radius_max));
        conc.push_back(rng.uniform(spec.h_conc_min, spec.h_conc_max));
    }
    std::vector<sk::detail::Ellipse> lumen;
    if (rng.uniform(0.0, 1.0) < spec.lumen_probability) {
        lumen.push_back(sk::detail::random_ellipse(rng, hh, ww, 1.5 * spec.radius_min, 2.0 * spec.radius_max));
    }
    const double wash = rng.uniform(spec.e_conc_min, spec.e_conc_max);
    sk::Patch out(spec.height, spec.width);
    for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
            const double py = static_cast<double>(y) + 0.5;
            const double px = static_cast<double>(x) + 0.5;
            double ch = 0.0;
            double ce = wash * (1.0 + spec.e_jitter * rng.uniform(-1.0, 1.0));
            for (std::size_t i = 0; i < nuclei.size(); ++i) {
                if (nuclei[i].contains(py, px)) {
                    ch = std::max(ch, conc[i]);
                    ce = 0.0;
                }
            }
            for (const auto& l : lumen) {
                if (l.contains(py, px)) ch = ce = 0.0;
            }
            for (int k = 0; k < 3; ++k) {
                double od = ch * m.row(0)[k] + ce * m.row(1)[k] + rng.normal(0.0, spec.od_noise);
                out.at(y, x, k) = sk::od_to_intensity(static_cast<float>(std::clamp(od, 0.0, sk::kOdMax)));
            }
        }
    }
    return out;
}

} // namespace

TEST(Synthetic, RasterizationMatchesBruteForce) {
    sk::SyntheticSpec spec;
    spec.height = 45;
    spec.width = 70;
    spec.nuclei_density = 0.01;
    spec.lumen_probability = 0.7;
    spec.seed = 21;
    for (std::uint64_t i = 0; i < 12; ++i) {
        EXPECT_EQ(sk::synthesize_patch(spec, i), synthesize_brute_force(spec, i)) << i;
    }
}
