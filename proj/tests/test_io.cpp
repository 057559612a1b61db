#include "dispir/io.hpp"
#include "dispir/synth.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <random>

using namespace dispir;

namespace {

fs::path scratch_dir(const std::string &name) {
    const fs::path dir = fs::temp_directory_path() / ("dispir_test_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string big_endian_pfm(const Image &img) {
    std::string out = std::string(img.channels() == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width()) +
                      " " + std::to_string(img.height()) + "\n1.0\n";
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c) {
                const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(x, y, c)));
                const char b[4] = {static_cast<char>(u >> 24), static_cast<char>(u >> 16),
                                   static_cast<char>(u >> 8), static_cast<char>(u)};
                out.append(b, 4);
            }
    return out;
}

} // namespace

TEST(Pfm, SinglePixelRoundTripsBitExactly) {
    Image img(1, 1, 3);
    img.data() = {0.25, 0.5, 1.0};
    const std::string bytes = encode_pfm(img);
    const Image back = decode_pfm(bytes);
    EXPECT_EQ(back.data(), img.data());
    EXPECT_EQ(encode_pfm(back), bytes);
}

TEST(Pfm, BigAndLittleEndianDecodeIdentically) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int ch : {1, 3}) {
        Image img(5, 3, ch);
        for (double &v : img.data()) v = static_cast<float>(u(rng));
        const Image le = decode_pfm(encode_pfm(img));
        const Image be = decode_pfm(big_endian_pfm(img));
        EXPECT_EQ(le.data(), be.data());
        EXPECT_EQ(le.data(), img.data());
    }
}

TEST(Pfm, RowOrderIsBottomToTop) {
    Image img(1, 2, 1);
    img.data() = {1.0, 2.0}; // top row 1, bottom row 2
    const std::string bytes = encode_pfm(img);
    float first;
    std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
    EXPECT_EQ(first, 2.0f);
}

TEST(Pfm, TruncatedPayloadNamesByteOffset) {
    const std::string bytes = encode_pfm(Image(4, 4, 3, 0.5));
    try {
        decode_pfm(bytes.substr(0, bytes.size() - 10), "t.pfm");
        FAIL() << "expected DataError";
    } catch (const DataError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("truncated"), std::string::npos);
        EXPECT_NE(msg.find("byte offset " + std::to_string(bytes.size() - 10)), std::string::npos);
    }
}

TEST(Pfm, MalformedHeadersRejected) {
    EXPECT_THROW(decode_pfm("P6\n1 1\n255\n"), DataError);
    EXPECT_THROW(decode_pfm("PF\nx 1\n-1\n"), DataError);
    EXPECT_THROW(decode_pfm("PF\n0 1\n-1\n"), DataError);
    EXPECT_THROW(decode_pfm("PF\n1 1\n0\n    "), DataError);
}

TEST(Pfm, NonFiniteSamplesRejected) {
    std::string bytes = encode_pfm(Image(1, 1, 1, 0.0));
    const float inf = std::numeric_limits<float>::infinity();
    std::memcpy(bytes.data() + bytes.size() - 4, &inf, 4);
    EXPECT_THROW(decode_pfm(bytes), DataError);
}

TEST(Pfm, RandomFiniteBuffersRoundTrip) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::uint32_t> bits;
    std::uniform_int_distribution<int> dim(1, 17);
    for (int t = 0; t < 50; ++t) {
        Image img(dim(rng), dim(rng), t % 2 ? 3 : 1);
        for (double &v : img.data()) {
            float f;
            do f = std::bit_cast<float>(bits(rng));
            while (!std::isfinite(f));
            v = f;
        }
        const std::string bytes = encode_pfm(img);
        const Image back = decode_pfm(bytes);
        ASSERT_EQ(back.data(), img.data());
        ASSERT_EQ(encode_pfm(back), bytes);
    }
}

TEST(Pfm, FileRoundTrip) {
    const fs::path dir = scratch_dir("file");
    Image img(3, 2, 3, 0.125);
    write_pfm(dir / "a.pfm", img);
    EXPECT_EQ(read_pfm(dir / "a.pfm").data(), img.data());
    EXPECT_THROW(read_pfm(dir / "missing.pfm"), DataError);
}

TEST(Json, CameraDisplayAndBasesRoundTrip) {
    const SynthScene s = synth_scene(ScenePreset::TwoMaterialSphere, 16, 16, 0);
    const CameraModel cam = camera_from_json(camera_to_json(s.camera));
    EXPECT_EQ(cam.focal_px(), s.camera.focal_px());
    EXPECT_EQ(cam.principal(), s.camera.principal());
    DisplayModel d = s.display;
    d.backlight[3] = Rgb(0.1, 0.2, 0.3);
    d.gamma = 2.2;
    const DisplayModel d2 = display_from_json(display_to_json(d));
    EXPECT_EQ(d2.size(), d.size());
    EXPECT_EQ(d2.gamma, 2.2);
    EXPECT_TRUE((d2.backlight[3] == d.backlight[3]).all());
    EXPECT_TRUE(d2.superpixel_positions[17] == d.superpixel_positions[17]);
    const BasisBrdfSet b = bases_from_json(bases_to_json(s.reflectance.bases));
    ASSERT_EQ(b.size(), 2u);
    EXPECT_TRUE((b.bases[1].roughness == s.reflectance.bases.bases[1].roughness).all());
}

TEST(Json, InvalidDisplayRejected) {
    json j = display_to_json(synth_display(DisplayPreset::Inch55));
    j["s"] = -1.0;
    EXPECT_THROW(display_from_json(j), DataError);
}

TEST(Csv, HeaderSkippedAndColumnsChecked) {
    const fs::path dir = scratch_dir("csv");
    write_file(dir / "a.csv", "v,r,g,b\n0.5,0.1,0.2,0.3\n1,1,1,1\n");
    const auto rows = read_csv(dir / "a.csv", 4);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0][3], 0.3);
    EXPECT_THROW(read_csv(dir / "a.csv", 3), DataError);
}

TEST(Manifest, LoadSaveLoadIsFixedPoint) {
    const fs::path dir = scratch_dir("manifest");
    const SynthScene s = synth_scene(ScenePreset::Plane, 16, 16, 0);
    write_json(dir / "display.json", display_to_json(s.display));
    write_json(dir / "camera.json", camera_to_json(s.camera));
    write_pfm(dir / "depth.pfm", to_image(s.scene.depth));
    write_pfm(dir / "mask.pfm", to_image(s.scene.mask));
    Manifest m;
    m.display = "display.json";
    m.camera = "camera.json";
    m.depth = "depth.pfm";
    m.mask = "mask.pfm";
    for (size_t k = 0; k < 12; ++k) {
        const std::string name = indexed_name("olat_", k, ".pfm");
        write_pfm(dir / name, Image(16, 16, 3, 0.1));
        m.captures.push_back({{name}, "onehot:" + std::to_string(k), false});
    }
    default_split(12, m.train, m.test);
    EXPECT_EQ(m.test, (std::vector<size_t>{5, 11}));
    save_manifest(dir / "manifest.json", m);
    const Manifest a = load_manifest(dir / "manifest.json");
    save_manifest(dir / "again.json", a);
    EXPECT_EQ(read_file(dir / "manifest.json"), read_file(dir / "again.json"));
    const Manifest b = load_manifest(dir / "again.json");
    EXPECT_EQ(manifest_to_json(a), manifest_to_json(b));
    EXPECT_EQ(load_scene(b).mask.data(), s.scene.mask.data());
    EXPECT_EQ(indexed_name("olat_", 42, ".pfm"), "olat_042.pfm");
}

TEST(Manifest, MissingFilesAndBadSplitsRejected) {
    const fs::path dir = scratch_dir("manifest_bad");
    json j = {{"version", "1"},
              {"display", "display.json"},
              {"camera", "camera.json"},
              {"scene", {{"depth", "d.pfm"}, {"mask", "m.pfm"}}},
              {"captures", json::array()}};
    EXPECT_THROW(manifest_from_json(j, dir), DataError);

    const SynthScene s = synth_scene(ScenePreset::Plane, 16, 16, 0);
    write_json(dir / "display.json", display_to_json(s.display));
    write_json(dir / "camera.json", camera_to_json(s.camera));
    write_pfm(dir / "d.pfm", to_image(s.scene.depth));
    write_pfm(dir / "m.pfm", to_image(s.scene.mask));
    write_pfm(dir / "c.pfm", Image(16, 16, 3));
    j["captures"] = json::array({{{"images", {"c.pfm"}}, {"pattern", "uniform:0.5"}}});
    EXPECT_NO_THROW(manifest_from_json(j, dir));
    j["split"] = {{"train", {0}}, {"test", {0}}};
    EXPECT_THROW(manifest_from_json(j, dir), DataError);
    j["split"] = {{"train", {0}}, {"test", {3}}};
    EXPECT_THROW(manifest_from_json(j, dir), DataError);
}

TEST(Patterns, Generators) {
    const DisplayModel d = synth_display(DisplayPreset::Inch55);
    const DisplayPattern one = generate_pattern("onehot:42", d);
    for (size_t i = 0; i < d.size(); ++i) EXPECT_EQ(one.values[i][0], i == 42 ? 1.0 : 0.0);
    EXPECT_EQ(generate_pattern("uniform:0.25", d).values[7][2], 0.25);
    const DisplayPattern gx = generate_pattern("gradient-x", d);
    const DisplayPattern cx = generate_pattern("complement:gradient-x", d);
    for (size_t i = 0; i < d.size(); ++i) {
        EXPECT_GE(gx.values[i][0], 0.0);
        EXPECT_LE(gx.values[i][0], 1.0);
        EXPECT_DOUBLE_EQ(gx.values[i][0] + cx.values[i][0], 1.0);
    }
    EXPECT_LT(gx.values[0][0], gx.values[15][0]);
    EXPECT_THROW(generate_pattern("onehot:144", d), UsageError);
    EXPECT_THROW(generate_pattern("bogus", d), UsageError);
    EXPECT_EQ(pattern_from_json(pattern_to_json(gx)).values[9][1], gx.values[9][1]);
}

TEST(Synth, PlanePreset) {
    const SynthScene s = synth_scene(ScenePreset::Plane, 20, 16, 0);
    for (size_t p = 0; p < s.scene.mask.size(); ++p) {
        ASSERT_TRUE(s.scene.mask[p]);
        EXPECT_EQ(s.scene.depth[p], 0.5);
        EXPECT_TRUE(s.scene.normal[p] == Vec3(0, 0, -1));
    }
}

TEST(Synth, SphereNormalsAreAnalytic) {
    const SynthScene s = synth_scene(ScenePreset::Sphere, 64, 64, 0);
    ASSERT_GT(count_set(s.scene.mask), 1000u);
    for (size_t p = 0; p < s.scene.mask.size(); ++p) {
        if (!s.scene.mask[p]) continue;
        const Vec3 &n = s.scene.normal[p];
        EXPECT_NEAR(n.norm(), 1.0, 1e-12);
        const Vec3 expect = (s.scene.points[p] - kSphereCenter) / kSphereRadius;
        EXPECT_LT((n - expect).norm(), 1e-9);
    }
}

TEST(Synth, TwoMaterialSphereHemisphereSplit) {
    const SynthScene s = synth_scene(ScenePreset::TwoMaterialSphere, 32, 32, 0);
    ASSERT_EQ(s.reflectance.weights.count(), 2);
    for (size_t p = 0; p < s.scene.mask.size(); ++p) {
        if (!s.scene.mask[p]) continue;
        const auto w = s.reflectance.weights.at(p);
        const int expect = s.scene.points[p].x() < kSphereCenter.x() ? 0 : 1;
        EXPECT_EQ(w[expect], 1.0);
        EXPECT_EQ(w[1 - expect], 0.0);
    }
}

TEST(Synth, DeterministicAndRejectsSmallResolution) {
    const SynthScene a = synth_scene(ScenePreset::StepNormal, 24, 24, 3);
    const SynthScene b = synth_scene(ScenePreset::StepNormal, 24, 24, 3);
    for (size_t p = 0; p < a.scene.normal.size(); ++p) ASSERT_TRUE(a.scene.normal[p] == b.scene.normal[p]);
    EXPECT_THROW(synth_scene(ScenePreset::Plane, 15, 32, 0), Error);
    EXPECT_THROW(parse_scene_preset("cube"), UsageError);
    EXPECT_EQ(parse_scene_preset(preset_name(ScenePreset::TwoMaterialSphere)), ScenePreset::TwoMaterialSphere);
}
