#pragma once

#include "dispir/brdf.hpp"
#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/patterns.hpp"
#include "dispir/scene_model.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace dispir {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- PFM ----------------------------------------------------------------

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

} // namespace detail

// Parses a PFM byte stream. Scanlines run bottom to top; a negative scale
// marks little-endian samples, a positive one big-endian.
inline Image decode_pfm(const std::string &bytes, const std::string &name = "<memory>") {
    size_t pos = 0;
    auto fail = [&](const std::string &what) -> DataError {
        return DataError("PFM " + name + ": " + what + " at byte offset " + std::to_string(pos));
    };
    auto skip_space = [&] {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    };
    auto token = [&] {
        skip_space();
        const size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw fail("unexpected end of header");
        return bytes.substr(start, pos - start);
    };
    const std::string magic = token();
    int channels = 0;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw fail("bad magic '" + magic + "'");
    long w = 0, h = 0;
    double scale = 0.0;
    try {
        w = std::stol(token());
        h = std::stol(token());
        scale = std::stod(token());
    } catch (const std::logic_error &) {
        throw fail("malformed header");
    }
    if (w < 1 || h < 1) throw fail("non-positive dimensions");
    if (scale == 0.0 || !std::isfinite(scale)) throw fail("invalid scale");
    // Exactly one whitespace byte separates the header from the payload.
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw fail("missing payload separator");
    ++pos;
    const size_t count = static_cast<size_t>(w) * static_cast<size_t>(h) * channels;
    const size_t need = count * 4;
    if (bytes.size() - pos < need)
        throw DataError("PFM " + name + ": truncated payload at byte offset " +
                        std::to_string(bytes.size()) + " (expected " + std::to_string(pos + need) +
                        " bytes)");
    const bool little = scale < 0.0;
    const bool swap = little != (std::endian::native == std::endian::little);
    Image img(static_cast<int>(w), static_cast<int>(h), channels);
    for (long row = 0; row < h; ++row) {
        const long y = h - 1 - row;
        for (long x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const size_t off = pos + 4 * ((static_cast<size_t>(row) * w + x) * channels + c);
                std::uint32_t u;
                std::memcpy(&u, bytes.data() + off, 4);
                if (swap) u = detail::byteswap32(u);
                const float f = std::bit_cast<float>(u);
                if (!std::isfinite(f))
                    throw DataError("PFM " + name + ": non-finite sample at byte offset " +
                                    std::to_string(off));
                img.at(static_cast<int>(x), static_cast<int>(y), c) = f;
            }
    }
    return img;
}

// Little-endian float32 PFM; samples are rounded to float.
inline std::string encode_pfm(const Image &img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw DataError("PFM supports 1 or 3 channels, got " + std::to_string(img.channels()));
    std::string out = std::string(img.channels() == 3 ? "PF" : "Pf") + "\n" +
                      std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n-1\n";
    const size_t header = out.size();
    out.resize(header + img.size() * 4);
    size_t k = header;
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c) {
                const float f = static_cast<float>(img.at(x, y, c));
                if (!std::isfinite(f)) throw DataError("PFM: refusing to write a non-finite sample");
                std::uint32_t u = std::bit_cast<std::uint32_t>(f);
                if constexpr (std::endian::native == std::endian::big) u = detail::byteswap32(u);
                std::memcpy(out.data() + k, &u, 4);
                k += 4;
            }
    return out;
}

inline std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path &path, const std::string &bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path.string());
}

inline Image read_pfm(const fs::path &path) { return decode_pfm(read_file(path), path.string()); }
inline void write_pfm(const fs::path &path, const Image &img) { write_file(path, encode_pfm(img)); }

// ---- maps <-> images ----------------------------------------------------

inline Image to_image(const DepthMap &d) {
    Image img(d.width(), d.height(), 1);
    for (size_t p = 0; p < d.size(); ++p) img[p] = d[p];
    return img;
}

inline Image to_image(const Mask &m) {
    Image img(m.width(), m.height(), 1);
    for (size_t p = 0; p < m.size(); ++p) img[p] = m[p] ? 1.0 : 0.0;
    return img;
}

inline Image to_image(const NormalMap &n) {
    Image img(n.width(), n.height(), 3);
    for (size_t p = 0; p < n.size(); ++p) img.set_rgb(p, n[p].array());
    return img;
}

inline void require_channels(const Image &img, int c, const std::string &what) {
    if (img.channels() != c)
        throw DataError(what + ": expected " + std::to_string(c) + " channel(s), got " +
                        std::to_string(img.channels()));
}

inline DepthMap depth_from_image(const Image &img) {
    require_channels(img, 1, "depth map");
    DepthMap d(img.width(), img.height(), 0.0);
    for (size_t p = 0; p < d.size(); ++p) d[p] = img[p];
    return d;
}

inline Mask mask_from_image(const Image &img) {
    require_channels(img, 1, "mask");
    Mask m(img.width(), img.height(), 0);
    for (size_t p = 0; p < m.size(); ++p) m[p] = img[p] > 0.5 ? 1 : 0;
    return m;
}

// Normals are renormalized after the float32 round trip.
inline NormalMap normals_from_image(const Image &img) {
    require_channels(img, 3, "normal map");
    NormalMap n(img.width(), img.height(), Vec3(0, 0, -1));
    for (size_t p = 0; p < n.size(); ++p) {
        const Vec3 v = img.rgb(p).matrix();
        if (v.norm() > 0.0) n[p] = v.normalized();
    }
    return n;
}

// ---- JSON: camera, display, falloff, BRDF bases --------------------------

inline json rgb_json(const Rgb &v) { return json::array({v[0], v[1], v[2]}); }
inline json vec_json(const Vec3 &v) { return json::array({v[0], v[1], v[2]}); }

inline Rgb json_rgb(const json &j, const std::string &what) {
    if (!j.is_array() || j.size() != 3) throw DataError(what + ": expected an RGB triple");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Vec3 json_vec(const json &j, const std::string &what) { return json_rgb(j, what).matrix(); }

template <typename F>
auto json_guard(const std::string &what, F &&f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception &e) {
        throw DataError(what + ": " + e.what());
    }
}

inline json camera_to_json(const CameraModel &c) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) r.push_back(vec_json(c.rotation().row(i).transpose()));
    return {{"focal_px", c.focal_px()},
            {"principal", {c.principal().x(), c.principal().y()}},
            {"resolution", {c.width(), c.height()}},
            {"pose_r", r},
            {"pose_t", vec_json(c.translation())}};
}

inline CameraModel camera_from_json(const json &j) {
    return json_guard("camera", [&] {
        Mat3 R = Mat3::Identity();
        Vec3 t = Vec3::Zero();
        if (j.contains("pose_r"))
            for (int i = 0; i < 3; ++i) R.row(i) = json_vec(j.at("pose_r").at(i), "camera pose_r").transpose();
        if (j.contains("pose_t")) t = json_vec(j.at("pose_t"), "camera pose_t");
        const auto &pp = j.at("principal");
        const auto &res = j.at("resolution");
        return CameraModel(j.at("focal_px").get<double>(),
                           Eigen::Vector2d(pp.at(0).get<double>(), pp.at(1).get<double>()),
                           res.at(0).get<int>(), res.at(1).get<int>(), R, t);
    });
}

inline json display_to_json(const DisplayModel &d) {
    json pos = json::array(), bl = json::array();
    for (const Vec3 &p : d.superpixel_positions) pos.push_back(vec_json(p));
    for (const Rgb &b : d.backlight) bl.push_back(rgb_json(b));
    return {{"superpixels", pos}, {"s", d.s}, {"gamma", d.gamma}, {"backlight", bl},
            {"grid", {d.cols, d.rows}}};
}

inline DisplayModel display_from_json(const json &j) {
    return json_guard("display", [&] {
        DisplayModel d;
        for (const auto &p : j.at("superpixels")) d.superpixel_positions.push_back(json_vec(p, "superpixel"));
        d.s = j.at("s").get<double>();
        d.gamma = j.at("gamma").get<double>();
        if (j.contains("backlight"))
            for (const auto &b : j.at("backlight")) d.backlight.push_back(json_rgb(b, "backlight"));
        else
            d.backlight.assign(d.superpixel_positions.size(), Rgb::Zero());
        d.cols = j.at("grid").at(0).get<int>();
        d.rows = j.at("grid").at(1).get<int>();
        d.validate();
        return d;
    });
}

inline json falloff_to_json(const FalloffParams &f) { return {{"a", f.a}, {"b", f.b}, {"c", f.c}}; }

inline FalloffParams falloff_from_json(const json &j) {
    return json_guard("falloff", [&] {
        return FalloffParams{j.at("a").get<double>(), j.at("b").get<double>(), j.at("c").get<double>()};
    });
}

inline json bases_to_json(const BasisBrdfSet &set) {
    json arr = json::array();
    for (const auto &b : set.bases)
        arr.push_back({{"rho_d", rgb_json(b.diffuse)}, {"rho_s", rgb_json(b.specular)},
                       {"sigma", rgb_json(b.roughness)}});
    return {{"bases", arr}};
}

inline BasisBrdfSet bases_from_json(const json &j) {
    return json_guard("bases", [&] {
        BasisBrdfSet set;
        for (const auto &b : j.at("bases"))
            set.bases.push_back({json_rgb(b.at("rho_d"), "rho_d"), json_rgb(b.at("rho_s"), "rho_s"),
                                 json_rgb(b.at("sigma"), "sigma")});
        set.validate();
        return set;
    });
}

inline json pattern_to_json(const DisplayPattern &p) {
    json arr = json::array();
    for (const Rgb &v : p.values) arr.push_back(rgb_json(v));
    return arr;
}

inline DisplayPattern pattern_from_json(const json &j) {
    return json_guard("pattern", [&] {
        DisplayPattern p;
        for (const auto &v : j) p.values.push_back(json_rgb(v, "pattern value"));
        return p;
    });
}

inline json read_json(const fs::path &path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception &e) {
        throw DataError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path &path, const json &j) { write_file(path, j.dump(2) + "\n"); }

// Weight maps persist as one single-channel PFM per basis: weights_00.pfm, ...
inline std::string weights_file(int j) {
    std::ostringstream ss;
    ss << "weights_" << std::setw(2) << std::setfill('0') << j << ".pfm";
    return ss.str();
}

inline void write_weights(const fs::path &dir, const WeightMaps &w) {
    for (int j = 0; j < w.count(); ++j) {
        Image img(w.width(), w.height(), 1);
        for (size_t p = 0; p < img.pixel_count(); ++p) img[p] = w.at(p)[j];
        write_pfm(dir / weights_file(j), img);
    }
}

// Float32 storage loses the simplex to rounding; masked pixels are renormalized.
inline WeightMaps read_weights(const fs::path &dir, int J, const Mask &mask) {
    WeightMaps w(mask.width(), mask.height(), J, 0.0);
    for (int j = 0; j < J; ++j) {
        const Image img = read_pfm(dir / weights_file(j));
        require_channels(img, 1, "weight map");
        if (img.width() != mask.width() || img.height() != mask.height())
            throw DataError("weight map " + weights_file(j) + " does not match the mask shape");
        for (size_t p = 0; p < img.pixel_count(); ++p) w.at(p)[j] = std::max(0.0, img[p]);
    }
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        auto wp = w.at(p);
        double s = 0.0;
        for (double v : wp) s += v;
        if (!(s > 0.0)) throw DataError("weight maps sum to zero at masked pixel " + std::to_string(p));
        for (double &v : wp) v /= s;
    }
    return w;
}

// ---- CSV --------------------------------------------------------------------

// Numeric rows; blank lines and a non-numeric header row are skipped.
inline std::vector<std::vector<double>> read_csv(const fs::path &path, size_t columns) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<double>> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ls, cell, ',')) {
            try {
                size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t\r", used) != std::string::npos) numeric = false;
            } catch (const std::logic_error &) {
                numeric = false;
            }
        }
        if (!numeric) {
            if (rows.empty() && lineno == 1) continue;
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric CSV row");
        }
        if (row.size() != columns)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(columns) + " columns, got " + std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

inline void write_loss_trace(const fs::path &path, const std::vector<double> &trace) {
    std::string out = "iteration,loss\n";
    for (size_t k = 0; k < trace.size(); ++k) out += std::to_string(k) + "," + format_double(trace[k]) + "\n";
    write_file(path, out);
}

// ---- manifest -------------------------------------------------------------

struct CaptureEntry {
    std::vector<std::string> images; // one path, or four (0/45/90/135) when polarized
    std::string pattern;             // generator spec or path to a JSON pattern
    bool polarized = false;
};

struct Manifest {
    std::string version = "1";
    std::string display;
    std::string camera;
    std::string depth;
    std::string normal; // optional ground truth
    std::string mask;
    std::string falloff;     // optional
    std::string bases;       // optional ground-truth reflectance
    std::string weights_dir; // optional, with bases
    std::vector<CaptureEntry> captures;
    std::vector<size_t> train;
    std::vector<size_t> test;
    fs::path root; // directory relative paths resolve against; not serialized

    fs::path resolve(const std::string &p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : root / path;
    }
};

// Every sixth capture (indices 5, 11, ...) is held out.
inline void default_split(size_t M, std::vector<size_t> &train, std::vector<size_t> &test) {
    train.clear();
    test.clear();
    for (size_t k = 0; k < M; ++k) (k % 6 == 5 ? test : train).push_back(k);
}

inline json manifest_to_json(const Manifest &m) {
    json caps = json::array();
    for (const auto &c : m.captures)
        caps.push_back({{"images", c.images}, {"pattern", c.pattern}, {"polarized", c.polarized}});
    json scene = {{"depth", m.depth}, {"mask", m.mask}};
    if (!m.normal.empty()) scene["normal"] = m.normal;
    json j = {{"version", m.version},
              {"display", m.display},
              {"camera", m.camera},
              {"scene", scene},
              {"captures", caps},
              {"split", {{"train", m.train}, {"test", m.test}}}};
    if (!m.falloff.empty()) j["falloff"] = m.falloff;
    if (!m.bases.empty()) j["reflectance"] = {{"bases", m.bases}, {"weights_dir", m.weights_dir}};
    return j;
}

inline void validate_manifest(const Manifest &m) {
    auto exists = [&](const std::string &p, const std::string &what) {
        if (p.empty()) throw DataError("manifest: missing " + what);
        if (!fs::exists(m.resolve(p)))
            throw DataError("manifest: " + what + " '" + m.resolve(p).string() + "' does not exist");
    };
    exists(m.display, "display");
    exists(m.camera, "camera");
    exists(m.depth, "scene.depth");
    exists(m.mask, "scene.mask");
    if (!m.normal.empty()) exists(m.normal, "scene.normal");
    if (!m.falloff.empty()) exists(m.falloff, "falloff");
    if (!m.bases.empty()) {
        exists(m.bases, "reflectance.bases");
        exists(m.weights_dir, "reflectance.weights_dir");
    }
    for (size_t k = 0; k < m.captures.size(); ++k) {
        const auto &c = m.captures[k];
        const size_t want = c.polarized ? 4 : 1;
        if (c.images.size() != want)
            throw DataError("manifest: capture " + std::to_string(k) + " needs " + std::to_string(want) +
                            " image path(s)");
        for (const auto &img : c.images) exists(img, "capture image");
        if (!is_pattern_generator(c.pattern)) exists(c.pattern, "capture pattern");
    }
    std::vector<std::uint8_t> seen(m.captures.size(), 0);
    for (const auto *split : {&m.train, &m.test})
        for (size_t k : *split) {
            if (k >= m.captures.size())
                throw DataError("manifest: split index " + std::to_string(k) + " out of range");
            if (seen[k]++) throw DataError("manifest: split index " + std::to_string(k) + " repeated");
        }
}

inline Manifest manifest_from_json(const json &j, const fs::path &root) {
    return json_guard("manifest", [&] {
        Manifest m;
        m.root = root;
        m.version = j.at("version").get<std::string>();
        m.display = j.at("display").get<std::string>();
        m.camera = j.at("camera").get<std::string>();
        const auto &scene = j.at("scene");
        m.depth = scene.at("depth").get<std::string>();
        m.mask = scene.at("mask").get<std::string>();
        if (scene.contains("normal")) m.normal = scene.at("normal").get<std::string>();
        if (j.contains("falloff")) m.falloff = j.at("falloff").get<std::string>();
        if (j.contains("reflectance")) {
            m.bases = j.at("reflectance").at("bases").get<std::string>();
            m.weights_dir = j.at("reflectance").at("weights_dir").get<std::string>();
        }
        for (const auto &c : j.at("captures"))
            m.captures.push_back({c.at("images").get<std::vector<std::string>>(),
                                  c.at("pattern").get<std::string>(),
                                  c.value("polarized", false)});
        if (j.contains("split")) {
            m.train = j.at("split").at("train").get<std::vector<size_t>>();
            m.test = j.at("split").at("test").get<std::vector<size_t>>();
        } else {
            default_split(m.captures.size(), m.train, m.test);
        }
        validate_manifest(m);
        return m;
    });
}

inline Manifest load_manifest(const fs::path &path) {
    return manifest_from_json(read_json(path), path.parent_path());
}

inline void save_manifest(const fs::path &path, const Manifest &m) { write_json(path, manifest_to_json(m)); }

// ---- manifest-backed loaders ---------------------------------------------

inline DisplayPattern load_pattern(const Manifest &m, const std::string &spec, const DisplayModel &display) {
    DisplayPattern p = is_pattern_generator(spec) ? generate_pattern(spec, display)
                                                  : pattern_from_json(read_json(m.resolve(spec)));
    p.validate(display.size());
    return p;
}

struct LoadedScene {
    CameraModel camera;
    DisplayModel display;
    FalloffParams falloff;
    DepthMap depth;
    Mask mask;
    NormalMap normal; // empty when the manifest has no ground truth
};

inline LoadedScene load_scene(const Manifest &m) {
    LoadedScene s;
    s.camera = camera_from_json(read_json(m.resolve(m.camera)));
    s.display = display_from_json(read_json(m.resolve(m.display)));
    if (!m.falloff.empty()) s.falloff = falloff_from_json(read_json(m.resolve(m.falloff)));
    s.depth = depth_from_image(read_pfm(m.resolve(m.depth)));
    s.mask = mask_from_image(read_pfm(m.resolve(m.mask)));
    if (!s.depth.same_shape(s.camera.width(), s.camera.height()) || !s.mask.same_shape(s.depth))
        throw DataError("scene maps do not match the camera resolution");
    if (!m.normal.empty()) {
        s.normal = normals_from_image(read_pfm(m.resolve(m.normal)));
        if (!s.normal.same_shape(s.depth)) throw DataError("normal map does not match the depth map");
    }
    return s;
}

inline Image load_capture(const Manifest &m, size_t k) {
    const auto &c = m.captures.at(k);
    if (c.polarized) throw DataError("capture " + std::to_string(k) + " is polarized; separate it first");
    Image img = read_pfm(m.resolve(c.images.front()));
    require_channels(img, 3, "capture");
    return img;
}

inline std::string indexed_name(const std::string &stem, size_t k, const std::string &ext) {
    std::ostringstream ss;
    ss << stem << std::setw(3) << std::setfill('0') << k << ext;
    return ss.str();
}

} // namespace dispir
