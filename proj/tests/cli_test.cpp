#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <stainkit/analysis.hpp>
#include <stainkit/io/csv.hpp>
#include <stainkit/io/digest.hpp>
#include <stainkit/io/json.hpp>
#include <stainkit/io/patch_set.hpp>
#include <stainkit/io/png.hpp>
#include <stainkit/io/tiled.hpp>
#include <stainkit/synthetic.hpp>

#include "fs_util.hpp"

namespace sk = stainkit;
namespace io = stainkit::io;
namespace fs = std::filesystem;
using sk::testing::RunResult;
using sk::testing::TempDir;

namespace {

RunResult cli(const std::vector<std::string>& args, const std::string& env = "") {
    return sk::testing::run_program(STAINKIT_CLI, args, env);
}

void expect_ok(const RunResult& r) { ASSERT_EQ(r.code, 0) << r.output; }

void synth(const fs::path& out, std::size_t count, std::size_t size, std::uint64_t seed) {
    expect_ok(cli({"synth", "--out", out, "--count", std::to_string(count), "--height", std::to_string(size),
                   "--width", std::to_string(size), "--seed", std::to_string(seed)}));
}

std::size_t column(const io::CsvRow& header, const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    EXPECT_NE(it, header.end()) << name;
    return static_cast<std::size_t>(it - header.begin());
}

double angle_deg(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (int k = 0; k < 3; ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    return std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

} // namespace

TEST(ExitCodes, UsageErrorsAreConfigErrors) {
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"augment", "--in", "x"}).code, 2);
    EXPECT_EQ(cli({"--threads", "0", "rank", "--scores", "a", "--out", "b"}).code, 2);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(ExitCodes, BadConfigsExitTwo) {
    TempDir dir;
    synth(dir / "p", 2, 16, 0);
    const std::vector<std::string> bad{R"({"category":"Chroma"})", R"({"category":"HEDStrong","ranges":{"tint":[0,1]}})",
                                       R"({"category":"Basic","colour":1})", "{not json"};
    for (const auto& text : bad) {
        io::write_text(dir / "c.json", text);
        const auto r = cli({"augment", "--config", dir / "c.json", "--in", dir / "p", "--out", dir / "o"});
        EXPECT_EQ(r.code, 2) << text << "\n" << r.output;
        EXPECT_NE(r.output.find("InvalidConfig"), std::string::npos) << r.output;
    }
    const auto env = cli({"normalize", "--method", "identity", "--in", dir / "p", "--out", dir / "o"},
                         "STAINKIT_THREADS=many");
    EXPECT_EQ(env.code, 2) << env.output;
}

TEST(ExitCodes, IoFailuresExitThree) {
    TempDir dir;
    io::write_text(dir / "c.json", R"({"category":"Basic"})");
    EXPECT_EQ(cli({"augment", "--config", dir / "c.json", "--in", dir / "missing", "--out", dir / "o"}).code, 3);
    EXPECT_EQ(cli({"augment", "--config", dir / "none.json", "--in", dir.path(), "--out", dir / "o"}).code, 3);
    fs::create_directories(dir / "bad");
    io::write_text(dir / "bad" / "x.png", "not a png");
    const auto r = cli({"normalize", "--method", "identity", "--in", dir / "bad", "--out", dir / "o"});
    EXPECT_EQ(r.code, 3) << r.output;
    EXPECT_NE(r.output.find("x.png"), std::string::npos);
}

TEST(FitProfile, EmptyDirectoryReportsInsufficientTissue) {
    TempDir dir;
    fs::create_directories(dir / "empty");
    for (const char* method : {"macenko", "lut"}) {
        const auto r = cli({"fit-profile", "--method", method, "--template", dir / "empty", "--out", dir / "p.json"});
        EXPECT_EQ(r.code, 3) << r.output;
        EXPECT_NE(r.output.find("InsufficientTissue"), std::string::npos) << r.output;
        EXPECT_FALSE(fs::exists(dir / "p.json"));
    }
}

TEST(FitProfile, LutSelfFitIsNearIdentity) {
    TempDir dir;
    synth(dir / "t", 30, 32, 4);
    expect_ok(cli({"fit-profile", "--method", "lut", "--template", dir / "t", "--out", dir / "l.json", "--fit-date",
                   "2026-01-02", "--template-id", "center-a"}));
    const auto prof = io::load_profile(dir / "l.json");
    EXPECT_EQ(prof.method, sk::NormMethod::Lut);
    EXPECT_EQ(prof.metadata.template_id, "center-a");
    EXPECT_EQ(prof.metadata.fit_date, "2026-01-02");
    for (int k = 0; k < 3; ++k) {
        for (int b = 0; b < 256; ++b) {
            ASSERT_LE(std::abs(prof.luts[k][b] - b), 1) << k << " " << b;
        }
    }
}

TEST(FitProfile, MacenkoRecoversGeneratorStains) {
    TempDir dir;
    synth(dir / "t", 64, 32, 9);
    expect_ok(cli({"fit-profile", "--method", "macenko", "--template", dir / "t", "--out", dir / "m.json"}));
    const auto prof = io::load_profile(dir / "m.json");
    const sk::SyntheticSpec truth;
    EXPECT_LT(angle_deg(prof.stain_matrix.row(0), truth.hematoxylin), 2.0);
    EXPECT_LT(angle_deg(prof.stain_matrix.row(1), truth.eosin), 2.0);
    EXPECT_EQ(prof.metadata.template_id, "t");
}

TEST(FitProfile, FitDateFollowsSourceDateEpoch) {
    TempDir dir;
    synth(dir / "t", 8, 32, 1);
    expect_ok(cli({"fit-profile", "--method", "identity", "--template", dir / "t", "--out", dir / "i.json"},
                  "SOURCE_DATE_EPOCH=86400"));
    EXPECT_EQ(io::load_profile(dir / "i.json").metadata.fit_date, "1970-01-02");
    EXPECT_EQ(cli({"fit-profile", "--method", "macenko", "--template", dir / "t", "--source", dir / "t", "--out",
                   dir / "x.json"})
                  .code,
              2);
}

TEST(Augment, NeutralBasicCopiesAreByteIdentical) {
    TempDir dir;
    synth(dir / "p", 12, 24, 2);
    io::write_text(dir / "c.json", R"({"category":"Basic","seed":3})");
    expect_ok(cli({"augment", "--config", dir / "c.json", "--in", dir / "p", "--out", dir / "o", "--neutral"}));
    for (const auto& f : io::list_pngs(dir / "p")) {
        EXPECT_EQ(io::read_text(f), io::read_text(dir / "o" / f.filename())) << f;
    }
}

TEST(Augment, RepeatRunsAndThreadCountsAreHashIdentical) {
    TempDir dir;
    synth(dir / "p", 20, 24, 2);
    io::write_text(dir / "c.json", R"({"category":"HSVStrong"})");
    std::vector<std::string> digests;
    for (const char* env : {"STAINKIT_THREADS=1", "STAINKIT_THREADS=1", "STAINKIT_THREADS=3"}) {
        fs::remove_all(dir / "o");
        expect_ok(cli({"augment", "--config", dir / "c.json", "--in", dir / "p", "--out", dir / "o", "--seed", "11"},
                      env));
        digests.push_back(io::tree_digest(dir / "o"));
    }
    EXPECT_EQ(digests[0], digests[1]);
    EXPECT_EQ(digests[0], digests[2]);
    fs::remove_all(dir / "o");
    expect_ok(cli({"augment", "--config", dir / "c.json", "--in", dir / "p", "--out", dir / "o", "--seed", "12"}));
    EXPECT_NE(io::tree_digest(dir / "o"), digests[0]);
}

TEST(Augment, HedStrongManifestStaysInRange) {
    TempDir dir;
    synth(dir / "p", 1000, 8, 5);
    io::write_text(dir / "c.json", R"({"category":"HEDStrong","seed":17})");
    expect_ok(cli({"augment", "--config", dir / "c.json", "--in", dir / "p", "--out", dir / "o"}));
    const auto rows = io::read_csv(dir / "o" / "manifest.csv");
    ASSERT_EQ(rows.size(), 1001u);
    EXPECT_EQ(rows[0], io::kManifestHeader);
    std::vector<std::size_t> cols;
    for (const char* c : {"hed_alpha_h", "hed_alpha_e", "hed_alpha_d", "hed_beta_h", "hed_beta_e", "hed_beta_d"}) {
        cols.push_back(column(rows[0], c));
    }
    double lo = 1.0;
    double hi = -1.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i][1], std::to_string(i - 1));
        EXPECT_EQ(rows[i][2], "HEDStrong");
        for (std::size_t c : cols) {
            const double v = io::parse_double(rows[i][c], "ratio");
            ASSERT_GE(v, -0.2);
            ASSERT_LE(v, 0.2);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    EXPECT_LT(lo, -0.19);
    EXPECT_GT(hi, 0.19);
}

TEST(Normalize, IdentityOnTiledImageIsByteIdentical) {
    TempDir dir;
    expect_ok(cli({"synth", "--layout", "tiles", "--out", dir / "tiles", "--height", "300", "--width", "170",
                   "--tile-size", "64"}));
    expect_ok(cli({"normalize", "--method", "identity", "--tiled", dir / "tiles", "--out", dir / "o"}));
    EXPECT_EQ(io::tree_digest(dir / "tiles"), io::tree_digest(dir / "o"));

    expect_ok(cli({"synth", "--layout", "png", "--out", dir / "whole.png", "--height", "300", "--width", "170",
                   "--tile-size", "64"}));
    expect_ok(cli({"normalize", "--method", "identity", "--tiled", dir / "whole.png", "--tile-size", "64", "--out",
                   dir / "o2"}));
    EXPECT_EQ(io::tree_digest(dir / "tiles"), io::tree_digest(dir / "o2"));
}

TEST(Normalize, TiledMacenkoMatchesWholeImage) {
    TempDir dir;
    synth(dir / "t", 40, 32, 8);
    fs::create_directories(dir / "whole");
    expect_ok(cli({"synth", "--layout", "png", "--out", dir / "whole" / "img.png", "--height", "200", "--width",
                   "230", "--tile-size", "64", "--seed", "3"}));
    expect_ok(cli({"fit-profile", "--method", "macenko", "--template", dir / "t", "--out", dir / "m.json"}));
    expect_ok(cli({"fit-profile", "--method", "macenko", "--template", dir / "whole", "--out", dir / "s.json"}));
    expect_ok(cli({"normalize", "--method", "macenko", "--profile", dir / "m.json", "--source-profile", dir / "s.json",
                   "--in", dir / "whole", "--out", dir / "a"}));
    expect_ok(cli({"normalize", "--method", "macenko", "--profile", dir / "m.json", "--source-profile", dir / "s.json",
                   "--tiled", dir / "whole" / "img.png", "--tile-size", "64", "--out", dir / "b"}));
    const sk::Patch whole = io::read_png(dir / "a" / "img.png");
    EXPECT_EQ(io::read_tiled(dir / "b"), whole);
    EXPECT_NE(whole, io::read_png(dir / "whole" / "img.png"));
}

TEST(Normalize, FittedSourceProfileIsSaved) {
    TempDir dir;
    synth(dir / "t", 20, 32, 1);
    synth(dir / "s", 20, 32, 2);
    expect_ok(cli({"fit-profile", "--method", "macenko", "--template", dir / "t", "--out", dir / "m.json"}));
    expect_ok(cli({"normalize", "--method", "macenko", "--profile", dir / "m.json", "--in", dir / "s", "--out",
                   dir / "o", "--save-source-profile", dir / "src.json"}));
    const auto src = io::load_profile(dir / "src.json");
    const auto direct = sk::fit_macenko(io::load_patch_set(dir / "s"));
    EXPECT_EQ(src.stain_matrix, direct.stain_matrix);
    EXPECT_EQ(io::list_pngs(dir / "o").size(), 20u);
}

TEST(Normalize, ProfileMismatchExitsTwo) {
    TempDir dir;
    synth(dir / "t", 8, 32, 1);
    expect_ok(cli({"fit-profile", "--method", "macenko", "--template", dir / "t", "--out", dir / "m.json"}));
    const auto r = cli({"normalize", "--method", "lut", "--profile", dir / "m.json", "--in", dir / "t", "--out",
                        dir / "o"});
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_NE(r.output.find("ProfileMismatch"), std::string::npos);
    EXPECT_EQ(cli({"normalize", "--method", "macenko", "--in", dir / "t", "--out", dir / "o"}).code, 2);
    EXPECT_EQ(cli({"normalize", "--method", "network", "--weights", dir / "m.json", "--in", dir / "t", "--out",
                   dir / "o"})
                  .code,
              2);
    EXPECT_EQ(cli({"normalize", "--method", "identity", "--in", dir / "t", "--out", dir / "t"}).code, 2);
}

TEST(Rank, MatchesAggregateRanking) {
    TempDir dir;
    // Two repetitions with ties; mean ranks worked by hand.
    io::write_text(dir / "s.csv", "repetition,method,dataset,score\n"
                                  "0,A,d1,0.9\n0,B,d1,0.8\n0,C,d1,0.7\n"
                                  "0,A,d2,0.8\n0,B,d2,0.8\n0,C,d2,0.6\n"
                                  "1,A,d1,0.5\n1,B,d1,0.6\n1,C,d1,0.7\n"
                                  "1,A,d2,0.9\n1,B,d2,0.9\n1,C,d2,0.9\n");
    const auto r = cli({"rank", "--scores", dir / "s.csv", "--out", dir / "r.csv"});
    expect_ok(r);
    const auto expected = sk::aggregate_ranking(io::parse_scores_csv(io::read_text(dir / "s.csv")));
    EXPECT_EQ(io::read_text(dir / "r.csv"), io::ranking_csv(expected));
    ASSERT_EQ(expected.size(), 3u);
    // Per repetition means: A 1.25, 2.5; B 1.75, 2; C 3, 1.5.
    EXPECT_NEAR(expected[0].mean_rank, 1.875, 1e-12);
    EXPECT_NEAR(expected[1].mean_rank, 1.875, 1e-12);
    EXPECT_NEAR(expected[2].mean_rank, 2.25, 1e-12);
    EXPECT_NEAR(expected[0].std_rank, 0.625, 1e-12);
    EXPECT_NE(r.output.find("A "), std::string::npos);
}

TEST(Analyze, WritesStatsAndPrintsSpread) {
    TempDir dir;
    synth(dir / "a", 10, 16, 1);
    fs::copy(dir / "a", dir / "b");
    auto r = cli({"analyze", "--in", dir / "a", "--in", dir / "b", "--out", dir / "st.csv", "--scatter",
                  dir / "sc.csv"});
    expect_ok(r);
    EXPECT_NE(r.output.find("spread 0\n"), std::string::npos) << r.output;
    const auto stats = io::parse_stats_csv(io::read_text(dir / "st.csv"));
    ASSERT_EQ(stats.size(), 2u);
    EXPECT_EQ(stats[0].dataset_id, "a");
    EXPECT_EQ(stats[0].pixel_count, 2560u);
    const auto direct = sk::hsv_stats(io::load_patch_set(dir / "a"), "a");
    EXPECT_NEAR(stats[0].mean_hue, direct.mean_hue, 1e-12);
    EXPECT_NEAR(stats[0].std_sat, direct.std_sat, 1e-12);
    EXPECT_TRUE(fs::exists(dir / "sc.csv"));

    r = cli({"analyze", "--in", dir / "a", "--id", "x", "--id", "y", "--out", dir / "st.csv"});
    EXPECT_EQ(r.code, 2);
    fs::create_directories(dir / "empty");
    EXPECT_EQ(cli({"analyze", "--in", dir / "empty", "--out", dir / "st.csv"}).code, 3);
}

TEST(PrintConfig, DumpsResolvedJsonWithoutRunning) {
    TempDir dir;
    io::write_text(dir / "c.json", R"({"category":"HEDLight","ranges":{"hed_alpha":[-0.01,0.01]}})");
    const auto r = cli({"--print-config", "augment", "--config", dir / "c.json", "--in", dir.path(), "--out", dir / "o",
                        "--seed", "4"},
                       "STAINKIT_THREADS=2");
    expect_ok(r);
    const auto j = io::json::parse(r.output);
    EXPECT_EQ(j.at("command"), "augment");
    EXPECT_EQ(j.at("threads"), 2);
    EXPECT_EQ(j.at("augmentation").at("seed"), 4);
    EXPECT_EQ(j.at("augmentation").at("ranges").at("hed_alpha"), io::json::array({-0.01, 0.01}));
    EXPECT_EQ(j.at("augmentation").at("ranges").at("hed_beta"), io::json::array({-0.05, 0.05}));
    EXPECT_FALSE(fs::exists(dir / "o"));

    const auto t = cli({"train-norm", "--synthetic", "10", "--out", dir / "w.snn1", "--print-config", "--epochs", "3"});
    expect_ok(t);
    const auto tj = io::json::parse(t.output);
    EXPECT_EQ(tj.at("training").at("max_epochs"), 3);
    EXPECT_EQ(tj.at("synthetic").at("count"), 10);
    EXPECT_FALSE(fs::exists(dir / "w.snn1"));
}

TEST(TrainNorm, RepeatRunsWriteIdenticalWeights) {
    TempDir dir;
    for (const char* name : {"a", "b"}) {
        expect_ok(cli({"train-norm", "--synthetic", "40", "--patch-size", "16", "--epochs", "2", "--batch-size", "8",
                       "--out", dir / (std::string(name) + ".snn1"), "--log", dir / (std::string(name) + ".csv")}));
    }
    EXPECT_EQ(io::read_text(dir / "a.snn1"), io::read_text(dir / "b.snn1"));
    EXPECT_EQ(io::read_text(dir / "a.csv"), io::read_text(dir / "b.csv"));
    EXPECT_EQ(io::read_csv(dir / "a.csv").size(), 3u);

    synth(dir / "p", 4, 24, 0);
    expect_ok(cli({"normalize", "--method", "network", "--weights", dir / "a.snn1", "--in", dir / "p", "--out",
                   dir / "o"}));
    EXPECT_EQ(io::read_png(dir / "o" / "patch_000003.png").height(), 24u);
    EXPECT_EQ(cli({"train-norm", "--in", dir / "p", "--synthetic", "4", "--out", dir / "x.snn1"}).code, 2);
}

TEST(Bench, ReportsBothPhases) {
    TempDir dir;
    expect_ok(cli({"bench", "--size", "256", "--tile-size", "64", "--runs", "1", "--out", dir / "b.csv"}));
    const auto rows = io::read_csv(dir / "b.csv");
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_EQ(rows[0][6], "extrapolated_50000x50000_seconds");
    std::vector<std::string> keys;
    for (std::size_t i = 1; i < rows.size(); ++i) keys.push_back(rows[i][0] + "/" + rows[i][1]);
    EXPECT_EQ(keys, (std::vector<std::string>{"identity/apply", "grayscale/apply", "lut/fit", "lut/apply",
                                              "macenko/fit", "macenko/apply"}));
    EXPECT_EQ(rows[3][2], "65536");
    EXPECT_EQ(rows[4][2], "53248");
    EXPECT_EQ(cli({"bench", "--size", "128", "--tile-size", "128"}).code, 2);
}
