#include "dispir/dispir.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

using namespace dispir;

namespace {

constexpr const char *kVersion = "0.1.0";

struct Flags {
    std::string manifest;
    std::string out;
    std::uint64_t seed = 0;
    std::string pattern;
    double noise_sigma = 0.0;
    bool clip = true;
    int J = 2;
    int iters = 500;
    double tv = 1e-2;
    double uniform_depth = 0.0;
    bool exclude_saturated = true;
    std::string preset = "sphere";
    int res = 64;
    int height = 0;
    int display_inch = 55;
    std::string method = "nearfield";
    std::string samples;
    std::string display;
    std::string estimate;
    int bins = 18;
    bool fix_gamma = false;
};

// Run record written before and after every command; status stays "running"
// or becomes "failed" when outputs are partial.
class RunRecord {
  public:
    RunRecord(std::string command, json args, fs::path out)
        : out_(std::move(out)), j_{{"tool", "dispir"}, {"version", kVersion},
                                   {"command", std::move(command)}, {"args", std::move(args)},
                                   {"status", "running"}, {"outputs", json::array()}} {
        flush();
    }
    void output(const fs::path &p) { j_["outputs"].push_back(p.filename().string()); }
    void set(const std::string &key, json v) { j_[key] = std::move(v); }
    void finish() {
        j_["status"] = "ok";
        flush();
    }
    void fail(const std::string &msg) {
        j_["status"] = "failed";
        j_["error"] = msg;
        flush();
    }

  private:
    void flush() {
        fs::create_directories(out_);
        write_json(out_ / "run.json", j_);
    }
    fs::path out_;
    json j_;
};

json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

fs::path relative_to(const fs::path &target, const fs::path &base) {
    return fs::relative(fs::absolute(target), fs::absolute(base));
}

// Copies scene references into a manifest rooted at `out`.
Manifest rebase(const Manifest &m, const fs::path &out) {
    Manifest r = m;
    r.root = out;
    auto fix = [&](std::string &p) {
        if (!p.empty()) p = relative_to(m.resolve(p), out).generic_string();
    };
    fix(r.display), fix(r.camera), fix(r.depth), fix(r.mask), fix(r.normal), fix(r.falloff),
        fix(r.bases), fix(r.weights_dir);
    for (auto &c : r.captures) {
        for (auto &img : c.images) fix(img);
        if (!is_pattern_generator(c.pattern)) fix(c.pattern);
    }
    return r;
}

Reflectance load_reflectance(const Manifest &m, const Mask &mask) {
    if (m.bases.empty()) throw DataError("manifest has no ground-truth reflectance");
    BasisBrdfSet bases = bases_from_json(read_json(m.resolve(m.bases)));
    WeightMaps w = read_weights(m.resolve(m.weights_dir), static_cast<int>(bases.size()), mask);
    return {std::move(bases), std::move(w)};
}

// OLAT stack assembled from captures whose patterns are onehot:k.
OlatStack load_olat(const Manifest &m, size_t N) {
    OlatStack st;
    st.images.resize(N);
    st.clipped.assign(N, false);
    std::vector<std::uint8_t> have(N, 0);
    for (size_t k = 0; k < m.captures.size(); ++k) {
        const std::string &p = m.captures[k].pattern;
        if (p.rfind("onehot:", 0) != 0) continue;
        const size_t i = std::stoul(p.substr(7));
        if (i >= N) throw DataError("OLAT capture " + p + " outside the display");
        st.images[i] = load_capture(m, k);
        have[i] = 1;
    }
    for (size_t i = 0; i < N; ++i)
        if (!have[i]) throw DataError("manifest lacks an onehot:" + std::to_string(i) + " capture");
    return st;
}

int cmd_synth(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const ScenePreset preset = parse_scene_preset(f.preset);
    SynthScene s = synth_scene(preset, f.res, f.height > 0 ? f.height : f.res, f.seed);
    if (f.display_inch == 32)
        s.display = synth_display(DisplayPreset::Inch32, kSceneReferenceDepth);
    else if (f.display_inch != 55)
        throw UsageError("--display must be 55 or 32");

    write_json(out / "camera.json", camera_to_json(s.camera));
    write_json(out / "display.json", display_to_json(s.display));
    write_json(out / "falloff.json", falloff_to_json(s.falloff));
    write_pfm(out / "depth.pfm", to_image(s.scene.depth));
    write_pfm(out / "normal.pfm", to_image(s.scene.normal));
    write_pfm(out / "mask.pfm", to_image(s.scene.mask));
    write_json(out / "bases.json", bases_to_json(s.reflectance.bases));
    write_weights(out, s.reflectance.weights);
    for (const char *name : {"camera.json", "display.json", "falloff.json", "depth.pfm",
                             "normal.pfm", "mask.pfm", "bases.json"})
        run.output(out / name);

    Manifest m;
    m.root = out;
    m.display = "display.json";
    m.camera = "camera.json";
    m.depth = "depth.pfm";
    m.normal = "normal.pfm";
    m.mask = "mask.pfm";
    m.falloff = "falloff.json";
    m.bases = "bases.json";
    m.weights_dir = ".";
    save_manifest(out / "manifest.json", m);
    run.output(out / "manifest.json");
    return 0;
}

int cmd_render_olat(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const Manifest m = load_manifest(f.manifest);
    const LoadedScene ls = load_scene(m);
    const Reflectance refl = load_reflectance(m, ls.mask);
    NormalMap normal = ls.normal;
    if (normal.empty()) throw DataError("render-olat needs scene.normal in the manifest");
    const SceneMaps scene = make_scene(ls.camera, ls.depth, normal, ls.mask);
    OlatStack st = render_olat_stack(scene, ls.display, refl, ls.falloff, false);
    const size_t N = st.size();

    Manifest om = rebase(m, out);
    om.captures.clear();
    json flags = json::array();
    for (size_t k = 0; k < N; ++k) {
        Image img = std::move(st.images[k]);
        add_noise(img, {f.noise_sigma, f.seed}, k);
        if (f.clip) img = clip01(std::move(img));
        const std::string name = indexed_name("olat_", k, ".pfm");
        write_pfm(out / name, img);
        om.captures.push_back({{name}, "onehot:" + std::to_string(k), false});
        flags.push_back(f.clip);
    }
    write_json(out / "olat.json", {{"N", N},
                                   {"grid", {ls.display.cols, ls.display.rows}},
                                   {"clipped_flags", flags},
                                   {"display", om.display}});
    default_split(N, om.train, om.test);
    save_manifest(out / "manifest.json", om);
    run.output(out / "olat.json");
    run.output(out / "manifest.json");
    run.set("captures", N);
    return 0;
}

int cmd_relight(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    if (f.pattern.empty()) throw UsageError("relight needs --pattern");
    const Manifest m = load_manifest(f.manifest);
    const DisplayModel display = display_from_json(read_json(m.resolve(m.display)));
    const OlatStack st = load_olat(m, display.size());
    const DisplayPattern pattern = load_pattern(m, f.pattern, display);
    const Image img = relight(st, pattern, display, {f.noise_sigma, f.seed}, f.clip);
    write_pfm(out / "relit.pfm", img);
    run.output(out / "relit.pfm");
    return 0;
}

int cmd_separate(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const Manifest m = load_manifest(f.manifest);
    Manifest om = rebase(m, out);
    size_t count = 0, clamped = 0;
    for (size_t k = 0; k < m.captures.size(); ++k) {
        const auto &c = m.captures[k];
        if (!c.polarized) continue;
        PolarizedCapture cap{read_pfm(m.resolve(c.images[0])), read_pfm(m.resolve(c.images[1])),
                             read_pfm(m.resolve(c.images[2])), read_pfm(m.resolve(c.images[3]))};
        const Separation sep = separate(stokes_decompose(cap));
        const std::string dname = indexed_name("diffuse_", k, ".pfm");
        write_pfm(out / dname, sep.diffuse);
        write_pfm(out / indexed_name("specular_", k, ".pfm"), sep.specular);
        write_pfm(out / indexed_name("clamped_", k, ".pfm"), to_image(sep.clamped));
        om.captures[k].images = {dname};
        om.captures[k].polarized = false;
        clamped += count_set(sep.clamped);
        ++count;
    }
    if (count == 0) throw DataError("manifest has no polarized captures");
    save_manifest(out / "manifest.json", om);
    run.output(out / "manifest.json");
    run.set("separated", count);
    run.set("clamped_pixels", clamped);
    return 0;
}

int cmd_calibrate_radiometric(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    std::vector<RadiometricSample> samples;
    for (const auto &r : read_csv(f.samples, 4)) samples.push_back({r[0], Rgb(r[1], r[2], r[3])});
    const RadiometricFit fit = fit_radiometric(samples);
    write_json(out / "radiometric.json", {{"s", rgb_json(fit.s)},
                                          {"gamma", rgb_json(fit.gamma)},
                                          {"residual_rms", rgb_json(fit.residual_rms)}});
    run.output(out / "radiometric.json");
    if (!f.display.empty()) {
        // The display model carries one s and gamma; channels are averaged.
        DisplayModel d = display_from_json(read_json(f.display));
        d.s = fit.s.mean();
        d.gamma = fit.gamma.mean();
        write_json(out / "display.json", display_to_json(d));
        run.output(out / "display.json");
    }
    return 0;
}

int cmd_calibrate_falloff(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    std::vector<FalloffSample> samples;
    for (const auto &r : read_csv(f.samples, 2)) samples.push_back({r[0], r[1]});
    const FalloffFit fit = fit_falloff(samples);
    json j = falloff_to_json(fit.params);
    j["residual_rms"] = fit.residual_rms;
    j["ill_conditioned"] = fit.ill_conditioned;
    write_json(out / "falloff.json", j);
    run.output(out / "falloff.json");
    if (fit.ill_conditioned) std::cerr << "warning: falloff fit is ill-conditioned\n";
    return 0;
}

int cmd_calibrate_backlight(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const Manifest m = load_manifest(f.manifest);
    const LoadedScene ls = load_scene(m);
    if (ls.normal.empty()) throw DataError("calibrate-backlight needs scene.normal");
    const Reflectance refl = load_reflectance(m, ls.mask);
    const SceneMaps scene = make_scene(ls.camera, ls.depth, ls.normal, ls.mask);
    const OlatStack st = load_olat(m, ls.display.size());
    BacklightFitOptions opt;
    opt.fit_gamma = !f.fix_gamma;
    opt.initial_gamma = ls.display.gamma;
    const BacklightFit fit = fit_backlight(st, scene, refl, ls.display, ls.falloff, opt);
    DisplayModel d = ls.display;
    d.s = fit.s;
    d.gamma = fit.gamma;
    d.backlight = fit.backlight;
    write_json(out / "display.json", display_to_json(d));
    write_json(out / "backlight_fit.json",
               {{"s", fit.s}, {"gamma", fit.gamma}, {"loss", fit.loss}, {"iterations", fit.iterations}});
    write_loss_trace(out / "loss_trace.csv", fit.loss_trace);
    for (const char *name : {"display.json", "backlight_fit.json", "loss_trace.csv"}) run.output(out / name);
    return 0;
}

std::vector<size_t> plain_captures(const Manifest &m, const std::vector<size_t> &which) {
    std::vector<size_t> ks;
    for (size_t k : which)
        if (!m.captures[k].polarized) ks.push_back(k);
    return ks;
}

std::vector<size_t> all_indices(size_t n) {
    std::vector<size_t> v(n);
    for (size_t k = 0; k < n; ++k) v[k] = k;
    return v;
}

int cmd_ps(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const Manifest m = load_manifest(f.manifest);
    const LoadedScene ls = load_scene(m);
    std::vector<Image> caps;
    std::vector<DisplayPattern> pats;
    for (size_t k : plain_captures(m, all_indices(m.captures.size()))) {
        caps.push_back(load_capture(m, k));
        pats.push_back(load_pattern(m, m.captures[k].pattern, ls.display));
    }
    PsResult r;
    if (f.method == "nearfield") {
        r = nearfield_ps(caps, pats, ls.display, ls.camera, ls.depth, ls.falloff, ls.mask);
    } else if (f.method == "woodham") {
        // Far-field lights seen from the masked centroid; each pattern becomes
        // its luminance-weighted mean direction.
        const Grid<Vec3> pts = backproject(ls.camera, ls.depth);
        Vec3 centroid = Vec3::Zero();
        size_t n = 0;
        for (size_t p = 0; p < ls.mask.size(); ++p)
            if (ls.mask[p]) centroid += pts[p], ++n;
        if (n == 0) throw DataError("empty mask");
        centroid /= static_cast<double>(n);
        std::vector<Vec3> dirs;
        std::vector<double> inten;
        far_field_lights(ls.display, centroid, dirs, inten);
        std::vector<Vec3> ldir;
        std::vector<double> lint;
        for (const auto &pat : pats) {
            const auto L = pattern_radiance(pat, ls.display);
            Vec3 v = Vec3::Zero();
            for (size_t i = 0; i < L.size(); ++i) v += luminance(L[i]) * inten[i] * dirs[i];
            if (!(v.norm() > 0.0)) throw NumericalError("woodham: pattern emits no light");
            ldir.push_back(v.normalized());
            lint.push_back(v.norm());
        }
        r = woodham_ps(caps, ldir, lint, ls.mask, PsThresholds{});
    } else {
        throw UsageError("--method must be woodham or nearfield");
    }
    write_pfm(out / "normal.pfm", to_image(r.normal));
    write_pfm(out / "pseudo_diffuse.pfm", r.pseudo_diffuse);
    write_pfm(out / "ps_mask.pfm", to_image(r.mask));
    json report = {{"method", f.method}, {"dropped", r.dropped}, {"n_pixels", count_set(r.mask)}};
    if (!ls.normal.empty() && count_set(r.mask) > 0) report["mae_deg"] = normal_mae(r.normal, ls.normal, r.mask);
    write_json(out / "ps.json", report);
    for (const char *name : {"normal.pfm", "pseudo_diffuse.pfm", "ps_mask.pfm", "ps.json"}) run.output(out / name);
    return 0;
}

int cmd_solve(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const Manifest m = load_manifest(f.manifest);
    LoadedScene ls = load_scene(m);
    if (f.uniform_depth < 0.0) throw UsageError("--uniform-depth must be positive");
    if (f.uniform_depth > 0.0)
        for (size_t p = 0; p < ls.depth.size(); ++p)
            if (ls.mask[p]) ls.depth[p] = f.uniform_depth;
    SolveProblem prob{{}, {}, ls.display, ls.camera, ls.depth, ls.mask, ls.falloff};
    for (size_t k : plain_captures(m, m.train)) {
        prob.captures.push_back(load_capture(m, k));
        prob.patterns.push_back(load_pattern(m, m.captures[k].pattern, ls.display));
    }
    SolveConfig cfg;
    cfg.J = f.J;
    cfg.iterations = f.iters;
    cfg.tv_lambda = f.tv;
    cfg.seed = f.seed;
    cfg.saturation_exclude = f.exclude_saturated;
    const SolveResult r = solve(prob, cfg);
    for (const auto &w : r.warnings) std::cerr << "warning: " << w << "\n";

    const SceneEstimate &e = r.estimate;
    write_pfm(out / "normal.pfm", to_image(e.normal));
    write_pfm(out / "depth.pfm", to_image(e.depth));
    write_pfm(out / "mask.pfm", to_image(e.mask));
    write_json(out / "bases.json", bases_to_json(e.bases));
    write_weights(out, e.weights);
    write_loss_trace(out / "loss_trace.csv", r.loss_trace);
    write_json(out / "estimate.json", {{"J", e.bases.size()},
                                       {"evaluations", r.evaluations},
                                       {"accepted", r.loss_trace.size()},
                                       {"final_loss", r.loss_trace.empty() ? 0.0 : r.loss_trace.back()},
                                       {"warnings", r.warnings}});
    for (const char *name : {"normal.pfm", "depth.pfm", "mask.pfm", "bases.json", "loss_trace.csv", "estimate.json"})
        run.output(out / name);
    return 0;
}

SceneEstimate load_estimate(const fs::path &dir) {
    SceneEstimate e;
    e.normal = normals_from_image(read_pfm(dir / "normal.pfm"));
    e.depth = depth_from_image(read_pfm(dir / "depth.pfm"));
    e.mask = mask_from_image(read_pfm(dir / "mask.pfm"));
    e.bases = bases_from_json(read_json(dir / "bases.json"));
    e.weights = read_weights(dir, static_cast<int>(e.bases.size()), e.mask);
    if (!e.normal.same_shape(e.mask) || !e.depth.same_shape(e.mask))
        throw DataError("estimate maps differ in shape");
    return e;
}

// Samples rounded to float32, the precision captures are stored at.
Image at_capture_precision(Image img) {
    for (double &v : img.data()) v = static_cast<float>(v);
    return img;
}

int cmd_evaluate(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    if (f.estimate.empty()) throw UsageError("evaluate needs --estimate");
    const Manifest m = load_manifest(f.manifest);
    const LoadedScene ls = load_scene(m);
    const SceneEstimate e = load_estimate(f.estimate);
    if (!e.mask.same_shape(ls.mask)) throw DataError("estimate does not match the scene resolution");

    json report = {{"n_pixels", count_set(ls.mask)}, {"saturation_excluded", f.exclude_saturated}};
    if (!ls.normal.empty()) report["mae_deg"] = normal_mae(e.normal, ls.normal, ls.mask);
    const auto test = plain_captures(m, m.test);
    if (!test.empty()) {
        double psnr_sum = 0.0, ssim_sum = 0.0;
        bool any_inf = false;
        PsnrOptions popt{f.exclude_saturated};
        for (size_t k : test) {
            const Image gt = clip01(load_capture(m, k));
            const Image est = at_capture_precision(render_estimate(
                e, ls.camera, ls.display, load_pattern(m, m.captures[k].pattern, ls.display), ls.falloff));
            const double p = psnr(est, gt, &ls.mask, popt);
            any_inf = any_inf || std::isinf(p);
            psnr_sum += p;
            ssim_sum += ssim(est, gt);
        }
        report["psnr_db"] = number_or_inf(any_inf ? std::numeric_limits<double>::infinity()
                                                  : psnr_sum / static_cast<double>(test.size()));
        report["ssim"] = ssim_sum / static_cast<double>(test.size());
        report["n_test"] = test.size();
    }
    write_json(out / "report.json", report);
    run.output(out / "report.json");
    return 0;
}

int cmd_coverage(const Flags &f, RunRecord &run) {
    const fs::path out(f.out);
    const Manifest m = load_manifest(f.manifest);
    const LoadedScene ls = load_scene(m);
    NormalMap normal = !f.estimate.empty() ? normals_from_image(read_pfm(fs::path(f.estimate) / "normal.pfm"))
                                           : ls.normal;
    if (normal.empty()) throw DataError("coverage needs normals (scene.normal or --estimate)");
    const SceneMaps scene = make_scene(ls.camera, ls.depth, normal, ls.mask);
    const auto samples = angular_coverage(scene, ls.display, ls.camera);
    const auto hist = coverage_histogram(samples, f.bins);
    std::string csv = "theta_d_bin,theta_h_bin,count\n";
    for (int r = 0; r < f.bins; ++r)
        for (int c = 0; c < f.bins; ++c)
            csv += std::to_string(r) + "," + std::to_string(c) + "," +
                   std::to_string(hist[static_cast<size_t>(r) * f.bins + c]) + "\n";
    write_file(out / "coverage.csv", csv);
    double th_max = 0.0, td_max = 0.0;
    for (const auto &s : samples) th_max = std::max(th_max, s.theta_h), td_max = std::max(td_max, s.theta_d);
    write_json(out / "coverage.json", {{"samples", samples.size()},
                                       {"bins", f.bins},
                                       {"theta_h_max_deg", rad_to_deg(th_max)},
                                       {"theta_d_max_deg", rad_to_deg(td_max)}});
    run.output(out / "coverage.csv");
    run.output(out / "coverage.json");
    return 0;
}

json collect_args(const CLI::App *sub) {
    json args = json::object();
    for (const CLI::Option *opt : sub->get_options()) {
        if (opt->count() == 0 || opt->get_name() == "--help") continue;
        const auto &res = opt->results();
        args[opt->get_name()] = res.size() == 1 ? json(res.front()) : json(res);
    }
    return args;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Display-based inverse rendering toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    Flags f;

    auto common = [&](CLI::App *s, bool needs_manifest) {
        s->add_option("--out", f.out, "Output directory")->required();
        s->add_option("--seed", f.seed, "Random seed");
        if (needs_manifest) s->add_option("--manifest", f.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    };

    using Handler = int (*)(const Flags &, RunRecord &);
    std::map<CLI::App *, Handler> handlers;

    auto *synth = app.add_subcommand("synth", "Generate an analytic synthetic scene");
    common(synth, false);
    synth->add_option("--preset", f.preset, "plane | sphere | two_material_sphere | step_normal");
    synth->add_option("--res", f.res, "Image width (and height unless --height)")->check(CLI::Range(16, 8192));
    synth->add_option("--height", f.height, "Image height")->check(CLI::Range(16, 8192));
    synth->add_option("--display", f.display_inch, "Display preset: 55 or 32");
    handlers[synth] = cmd_synth;

    auto *olat = app.add_subcommand("render-olat", "Render the one-light-at-a-time stack");
    common(olat, true);
    olat->add_option("--noise-sigma", f.noise_sigma)->check(CLI::NonNegativeNumber);
    olat->add_flag("--clip,!--no-clip", f.clip, "Clip to [0,1] (default: unclipped)");
    handlers[olat] = cmd_render_olat;

    auto *rel = app.add_subcommand("relight", "Relight an OLAT stack under a pattern");
    common(rel, true);
    rel->add_option("--pattern", f.pattern, "Pattern generator or JSON path")->required();
    rel->add_option("--noise-sigma", f.noise_sigma)->check(CLI::NonNegativeNumber);
    rel->add_flag("--clip,!--no-clip", f.clip);
    handlers[rel] = cmd_relight;

    auto *sep = app.add_subcommand("separate", "Polarimetric diffuse/specular separation");
    common(sep, true);
    handlers[sep] = cmd_separate;

    auto *crad = app.add_subcommand("calibrate-radiometric", "Fit s and gamma per channel");
    common(crad, false);
    crad->add_option("--samples", f.samples, "CSV: set_value,r,g,b")->required()->check(CLI::ExistingFile);
    crad->add_option("--display", f.display, "Display JSON to update")->check(CLI::ExistingFile);
    handlers[crad] = cmd_calibrate_radiometric;

    auto *cfall = app.add_subcommand("calibrate-falloff", "Fit 1/(a + b d^2) + c");
    common(cfall, false);
    cfall->add_option("--samples", f.samples, "CSV: distance,measured")->required()->check(CLI::ExistingFile);
    handlers[cfall] = cmd_calibrate_falloff;

    auto *cback = app.add_subcommand("calibrate-backlight", "Fit s, gamma and backlight from OLAT captures");
    common(cback, true);
    cback->add_flag("--fix-gamma", f.fix_gamma, "Keep the display gamma fixed");
    handlers[cback] = cmd_calibrate_backlight;

    auto *ps = app.add_subcommand("ps", "Photometric stereo");
    common(ps, true);
    ps->add_option("--method", f.method, "woodham | nearfield");
    handlers[ps] = cmd_ps;

    auto *sol = app.add_subcommand("solve", "Inverse rendering of normals and basis BRDFs");
    common(sol, true);
    sol->add_option("--J", f.J, "Number of basis BRDFs")->check(CLI::PositiveNumber);
    sol->add_option("--iters", f.iters, "Iteration budget")->check(CLI::NonNegativeNumber);
    sol->add_option("--tv", f.tv, "TV weight")->check(CLI::NonNegativeNumber);
    sol->add_option("--uniform-depth", f.uniform_depth, "Replace depth by this constant (m)");
    sol->add_flag("--exclude-saturated,!--no-exclude-saturated", f.exclude_saturated);
    handlers[sol] = cmd_solve;

    auto *ev = app.add_subcommand("evaluate", "Score an estimate on the held-out split");
    common(ev, true);
    ev->add_option("--estimate", f.estimate, "Estimate directory")->required()->check(CLI::ExistingDirectory);
    ev->add_flag("--exclude-saturated,!--no-exclude-saturated", f.exclude_saturated);
    handlers[ev] = cmd_evaluate;

    auto *cov = app.add_subcommand("coverage", "Rusinkiewicz angular coverage histogram");
    common(cov, true);
    cov->add_option("--bins", f.bins)->check(CLI::Range(1, 1000));
    cov->add_option("--estimate", f.estimate, "Use normals from this estimate")->check(CLI::ExistingDirectory);
    handlers[cov] = cmd_coverage;

    olat->callback([&] {}); // keep defaults distinct per subcommand
    // render-olat stores unclipped stacks unless --clip is given.
    olat->preparse_callback([&](size_t) { f.clip = false; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    CLI::App *sub = app.get_subcommands().front();
    std::unique_ptr<RunRecord> run;
    try {
        run = std::make_unique<RunRecord>(sub->get_name(), collect_args(sub), fs::path(f.out));
        run->set("seed", f.seed);
        run->set("threads", "DISPIR_THREADS");
        const int rc = handlers.at(sub)(f, *run);
        run->finish();
        return rc;
    } catch (const UsageError &e) {
        std::cerr << "usage error: " << e.what() << "\n";
        if (run) run->fail(e.what());
        return 1;
    } catch (const NumericalError &e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        if (run) run->fail(e.what());
        return 3;
    } catch (const std::exception &e) {
        std::cerr << "data error: " << e.what() << "\n";
        if (run) run->fail(e.what());
        return 2;
    }
}
