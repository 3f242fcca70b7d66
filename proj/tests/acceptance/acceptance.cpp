// Runs acceptance criteria 1-8 and prints one PASS/FAIL line per criterion.
// Usage: fpad_acceptance [criterion numbers...]   (default: all)

#include "fixtures.hpp"
#include "oracles.hpp"

#include "fpad/checkpoint.hpp"
#include "fpad/densenet.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"
#include "fpad/image.hpp"
#include "fpad/layers.hpp"
#include "fpad/log.hpp"
#include "fpad/metrics.hpp"
#include "fpad/patch.hpp"
#include "fpad/protocol.hpp"
#include "fpad/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace fpad;

namespace {

// Collects failures; a criterion passes when none were recorded.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        failed_ += !ok;
    }
    bool ok() const { return failed_ == 0; }
    std::size_t total() const { return total_; }
    std::string summary() const {
        std::ostringstream os;
        os << failed_ << " of " << total_ << " checks failed";
        for (const auto& f : failures_) os << "; " << f;
        return os.str();
    }
    std::vector<std::string> notes;

private:
    std::size_t total_ = 0;
    std::size_t failed_ = 0;
    std::vector<std::string> failures_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

std::vector<ScoredSample> block(Species sp, std::size_t n, double score, const std::string& prefix) {
    std::vector<ScoredSample> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {prefix + std::to_string(i), sp, score, Split::Test};
    return out;
}

// ---------------------------------------------------------------------------

void metric_oracle(Checks& c) {
    Rng rng(1001);
    for (int i = 0; i < 1000; ++i) {
        const auto s = oracle::random_scored(rng, 300);
        const double t = rng.bernoulli(0.3) ? 0.5 : rng.uniform01();
        const std::set<Species> unknown =
            rng.bernoulli(0.5) ? default_unknown_species() : std::set<Species>{Species::WoodGlueLayover};
        std::string why;
        const bool ok = oracle::report_matches(compute_report(s, t, unknown), oracle::recount(s, t), unknown, &why);
        c.expect(ok, "set " + std::to_string(i) + ": " + why);
    }
    auto s = block(Species::PlaydohLayover, 707, 0.9, "pl");
    const auto miss = block(Species::PlaydohLayover, 1, 0.2, "plm");
    const auto live = block(Species::Live, 1645, 0.1, "l");
    const auto live_miss = block(Species::Live, 3, 0.7, "lm");
    for (const auto* v : {&miss, &live, &live_miss}) s.insert(s.end(), v->begin(), v->end());
    const EvalReport r = compute_report(s, 0.5);
    const std::string apcer = format_percent(r.find(Species::PlaydohLayover)->apcer_percent());
    const std::string bpcer = format_percent(r.bonafide->bpcer_percent());
    c.expect(apcer == "0.14", "1/708 gave " + apcer);
    c.expect(bpcer == "0.18", "3/1648 gave " + bpcer);
    c.notes.push_back("1000 sets exact, 1/708 -> " + apcer + "%, 3/1648 -> " + bpcer + "%");
}

// ---------------------------------------------------------------------------

Tensor64 away_from_zero(Rng& rng, Shape shape) {
    Tensor64 t = oracle::random_tensor(rng, std::move(shape));
    for (auto& v : t.data()) v = (v >= 0 ? 1.0 : -1.0) * (0.05 + std::abs(v));
    return t;
}

void gradients(Checks& c) {
    constexpr double kTol = 1e-4;
    Rng rng(2002);
    double worst = 0.0;
    auto record = [&](const std::string& kind, int rep, double err) {
        worst = std::max(worst, err);
        c.expect(err < kTol, kind + " rep " + std::to_string(rep) + " error " + fmt(err));
    };
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t cin = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const std::size_t side = static_cast<std::size_t>(rng.uniform_int(5, 7));
        {
            const std::size_t k = rep % 2 ? 1 : 3;
            Conv2d<double> conv("conv", cin, 4, k, rep % 3 == 0 ? 2 : 1, k == 3 ? rep % 4 / 2 : 0);
            conv.init(rng);
            record("conv", rep, oracle::check_layer(conv, {oracle::random_tensor(rng, {2, cin, side, side})}, rng).worst());
        }
        {
            BatchNorm<double> bn("bn", cin);
            for (auto& v : bn.gamma().data()) v = rng.uniform(0.5, 1.5);
            for (auto& v : bn.beta().data()) v = rng.normal();
            for (auto& v : bn.running_var().data()) v = rng.uniform(0.5, 2.0);
            bn.set_mode(rep % 2 ? Mode::Eval : Mode::Train);
            record("batchnorm", rep, oracle::check_layer(bn, {oracle::random_tensor(rng, {2, cin, side, side})}, rng).worst());
        }
        {
            ReLU<double> relu("relu");
            record("relu", rep, oracle::check_layer(relu, {away_from_zero(rng, {2, cin, side, side})}, rng).worst());
        }
        {
            AvgPool<double> pool("pool", 2);
            record("avgpool", rep, oracle::check_layer(pool, {oracle::random_tensor(rng, {2, cin, side, side})}, rng).worst());
        }
        {
            GlobalAvgPool<double> gap("gap");
            record("gap", rep, oracle::check_layer(gap, {oracle::random_tensor(rng, {2, cin, side, side})}, rng).worst());
        }
        {
            ChannelConcat<double> cat("concat");
            record("concat", rep,
                   oracle::check_layer(cat, {oracle::random_tensor(rng, {2, cin, side, side}),
                                             oracle::random_tensor(rng, {2, 2, side, side})},
                                       rng)
                       .worst());
        }
        {
            Linear<double> fc("fc", 6, 3);
            fc.init(rng);
            for (auto& v : fc.bias().data()) v = rng.normal();
            record("linear", rep, oracle::check_layer(fc, {oracle::random_tensor(rng, {2, 6})}, rng).worst());
        }
        {
            Sigmoid<double> s("sigmoid");
            record("sigmoid", rep, oracle::check_layer(s, {oracle::random_tensor(rng, {2, 3}, 2.0)}, rng).worst());
        }
        {
            const std::size_t n = 6;
            Tensor64 z = oracle::random_tensor(rng, {n, 1}, 2.0);
            Tensor64 p({n});
            std::vector<double> y(n);
            for (std::size_t i = 0; i < n; ++i) {
                y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
                p[i] = rng.uniform(0.05, 0.95);
            }
            const auto gz = bce_with_logits<double>(z, y).grad;
            const auto nz = oracle::numeric_gradient(z.data(), [&] { return bce_with_logits<double>(z, y).loss; });
            record("bce_with_logits", rep, oracle::relative_error({gz.data().begin(), gz.data().end()}, nz));
            const auto gp = bce_loss<double>(p, y).grad;
            const auto np = oracle::numeric_gradient(p.data(), [&] { return bce_loss<double>(p, y).loss; });
            record("bce", rep, oracle::relative_error({gp.data().begin(), gp.data().end()}, np));
        }
    }
    c.notes.push_back("8 layer kinds x 20 reps plus both loss forms, worst relative error " + fmt(worst));
}

// ---------------------------------------------------------------------------

void parameter_accounting(Checks& c) {
    Rng rng(3003);
    for (int i = 0; i < 100; ++i) {
        const DenseNetConfig cfg = oracle::random_config(rng);
        const ChannelPlan got = channel_plan(cfg), want = oracle::plan_oracle(cfg);
        c.expect(got.block_exit == want.block_exit && got.transition_out == want.transition_out &&
                     got.classifier_in == want.classifier_in && got.stem == want.stem,
                 "plan differs for " + config_to_string(cfg));

        DenseNetConfig rgb = cfg, gray = cfg;
        rgb.input_channels = 3;
        gray.input_channels = 1;
        const std::size_t delta = count_trainable_params(rgb) - count_trainable_params(gray);
        c.expect(delta == cfg.stem_kernel * cfg.stem_kernel * 2 * cfg.stem_filters,
                 "grayscale delta " + std::to_string(delta) + " for " + config_to_string(cfg));
    }
    DenseNetConfig rgb;
    DenseNetConfig gray = rgb;
    gray.input_channels = 1;
    DenseNet<float> built_rgb(rgb, 0), built_gray(gray, 0);
    const std::size_t delta = built_rgb.param_count() - built_gray.param_count();
    c.expect(delta == 432, "default stem delta " + std::to_string(delta));

    const std::size_t layers = built_rgb.layer_count(LayerKind::Conv2d) + built_rgb.layer_count(LayerKind::Linear);
    c.expect(layers == 121, "default realizes " + std::to_string(layers) + " layers");
    c.expect(count_conv_layers(rgb) == 121, "count_conv_layers " + std::to_string(count_conv_layers(rgb)));
    c.expect(built_rgb.param_count() == count_trainable_params(rgb), "closed form disagrees with build");
    c.notes.push_back("100 plans, RGB-gray delta " + std::to_string(delta) + ", " + std::to_string(layers) +
                      " layers, default " + std::to_string(built_rgb.param_count()) + " params");
}

// ---------------------------------------------------------------------------

void blur_pipeline(Checks& c) {
    Rng rng(4004);
    for (int i = 0; i < 200; ++i) {
        const ImageBuffer img = oracle::random_gray(rng, 64);
        const double want = oracle::variance_exact(oracle::laplacian_brute(img));
        c.expect(!std::isnan(want) && laplacian_variance(img) == want,
                 "image " + std::to_string(img.width()) + "x" + std::to_string(img.height()));
    }
    for (int i = 0; i < 300; ++i) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 2000));
        std::vector<double> scores(n);
        for (auto& s : scores) s = rng.uniform(0.0, 5000.0);
        const double f = rng.uniform01();
        const double got = removed_fraction(scores, select_blur_threshold(scores, f));
        c.expect(got >= f && got - f < 1.0 / static_cast<double>(n) + 1e-12,
                 "requested " + fmt(f) + " removed " + fmt(got) + " of " + std::to_string(n));
    }
    std::vector<double> scores;
    for (int i = 0; i < 500; ++i) scores.push_back(i < 49 ? 50.0 + i : 300.0 + i);
    const double t = select_blur_threshold(scores, 0.098);
    const double removed = removed_fraction(scores, t);
    c.expect(removed == 0.098, "9.8% workflow removed " + fmt(removed, 6));
    c.notes.push_back("200 images exact, 300 fractions within 1/N, 0.098 -> " + fmt(removed, 6));
}

// ---------------------------------------------------------------------------

void patch_geometry(Checks& c) {
    Rng rng(5005);
    std::size_t extractions = 0;
    while (extractions < 10000) {
        PatchSpec spec;
        spec.patch_size = static_cast<std::size_t>(rng.uniform_int(1, 64));
        spec.seed = rng.next_u64();
        const auto w = spec.patch_size + static_cast<std::size_t>(rng.uniform_int(0, 200));
        const auto h = spec.patch_size + static_cast<std::size_t>(rng.uniform_int(0, 200));
        const Species sp = kAllSpecies[rng.uniform_int(0, std::size(kAllSpecies) - 1)];
        const std::size_t mx = w - spec.patch_size, my = h - spec.patch_size;
        for (const auto& p : extract_center_patches(ImageBuffer(w, h, 1), spec, sp)) {
            ++extractions;
            c.expect(p.x + spec.patch_size <= w && p.y + spec.patch_size <= h, "patch leaves the image");
            // [ceil(M/4), floor(3M/4)], which holds no integer only when M = 1.
            const bool in_x = (4 * p.x >= mx && 4 * p.x <= 3 * mx) || (mx == 1 && p.x == 0);
            const bool in_y = (4 * p.y >= my && 4 * p.y <= 3 * my) || (my == 1 && p.y == 0);
            c.expect(in_x && in_y, "patch at " + std::to_string(p.x) + "," + std::to_string(p.y) + " outside window of " +
                                       std::to_string(mx) + "," + std::to_string(my));
            c.expect(p.image.width() == spec.patch_size && p.image.height() == spec.patch_size, "patch size");
        }
    }
    const std::map<Species, std::size_t> expected{
        {Species::Live, 4},           {Species::EcoflexLayover, 4},     {Species::PlaydohLayover, 4},
        {Species::WoodGlueLayover, 7}, {Species::SyntheticFingertip, 1}, {Species::PrintedPhoto, 2},
        {Species::LatexLayover, 5}};
    c.expect(default_patch_counts() == expected, "default per-species counts");
    PatchSpec spec;
    const auto wl = extract_center_patches(ImageBuffer(300, 300, 1), spec, Species::WoodGlueLayover);
    c.expect(wl.size() == 7, "wood glue gave " + std::to_string(wl.size()));
    c.notes.push_back(std::to_string(extractions) + " extractions in bounds, WL " + std::to_string(wl.size()) +
                      " patches/fingertip");
}

// ---------------------------------------------------------------------------

ProtocolConfig desk_scale_config() {
    ProtocolConfig p;
    p.train.model = tiny_config();
    p.train.epochs = 20;
    p.train.seed = 6;
    p.train.threads = 1;
    return p;
}

void end_to_end(Checks& c) {
    test::TempDir dir("accept-e2e");
    const Manifest m = oracle::procedural_manifest(dir.path(), 500, 6, {Species::PlaydohLayover});
    const ProtocolConfig cfg = desk_scale_config();
    std::vector<std::string> reports;
    std::vector<std::string> checkpoints;
    for (int run = 0; run < 2; ++run) {
        const auto t0 = std::chrono::steady_clock::now();
        DenseNet<float> trained(tiny_config(), 0);
        const ProtocolResult r = run_protocol(m, dir.path(), cfg, &trained);
        const double secs = seconds_since(t0);
        c.expect(secs < 600.0, "run " + std::to_string(run) + " took " + fmt(secs) + " s");
        c.expect(r.history.size() == 20, "history has " + std::to_string(r.history.size()) + " epochs");
        if (r.history.empty()) return;
        const double first = r.history.front().train_loss, last = r.history.back().train_loss;
        const double val = r.history.back().validation_accuracy;
        c.expect(last < first, "train loss " + fmt(first) + " -> " + fmt(last));
        c.expect(val >= 0.95, "final validation accuracy " + fmt(val));
        reports.push_back(render_report_csv({r}) + render_report_text({r}) + render_scores_csv(r.scores));
        checkpoints.push_back(serialize_checkpoint(trained, describe(cfg.train)));
        if (run == 0) {
            std::ostringstream os;
            os << "run " << fmt(secs) << " s, loss " << fmt(first) << " -> " << fmt(last) << ", val acc "
               << fmt(val) << ", n_train " << r.n_train << ", APCER(PL) "
               << format_percent(r.report.find(Species::PlaydohLayover)->apcer_percent()) << "%, BPCER "
               << format_percent(r.report.bonafide->bpcer_percent()) << "%";
            c.notes.push_back(os.str());
        }
    }
    c.expect(reports[0] == reports[1], "reports differ between runs");
    c.expect(checkpoints[0] == checkpoints[1], "weights differ between runs");
    c.notes.push_back("two runs byte-identical");
}

// ---------------------------------------------------------------------------

void unknown_pai(Checks& c) {
    test::TempDir dir("accept-unknown");
    const Manifest with = oracle::procedural_manifest(dir.path(), 80, 7, {Species::PlaydohLayover, Species::PrintedPhoto});
    Manifest without = with;
    std::erase_if(without.records, [](const SampleRecord& r) { return r.species == Species::PrintedPhoto; });
    c.expect(without.size() < with.size(), "no PP records generated");
    for (const auto& r : with.records)
        if (r.species == Species::PrintedPhoto) c.expect(r.split == Split::Test, "PP record outside Test");

    TrainConfig t;
    t.model = tiny_config();
    t.epochs = 3;
    t.seed = 7;
    t.unknown_species = {Species::PrintedPhoto};
    TrainResult a = train(t, with, dir.path());
    TrainResult b = train(t, without, dir.path());
    c.expect(serialize_checkpoint(a.model) == serialize_checkpoint(b.model), "weights depend on PP records");

    EvaluateOptions eo;
    eo.unknown_species = t.unknown_species;
    const ProtocolResult row = evaluate_model(a.model, preprocess_for(t), with, dir.path(), eo);
    const SpeciesErrors* pp = row.report.find(Species::PrintedPhoto);
    const SpeciesErrors* pl = row.report.find(Species::PlaydohLayover);
    c.expect(pp && pp->unknown, "PP not tagged unknown");
    c.expect(pl && !pl->unknown, "PL tagged unknown");
    c.expect(render_report_text({row}).find("PP*") != std::string::npos, "text table lacks PP*");
    c.notes.push_back("weights bitwise equal with/without " + std::to_string(with.size() - without.size()) +
                      " PP records; PP tagged unknown (APCER " + (pp ? format_percent(pp->apcer_percent()) : "?") + "%)");
}

// ---------------------------------------------------------------------------

void checkpoint_round_trip(Checks& c) {
    test::TempDir dir("accept-ckpt");
    DenseNet<float> m(tiny_config(), 8);
    Rng rng(8008);
    SgdOptimizer<float> opt(0.05, 0.9, 1e-4);
    const std::vector<float> labels{0.f, 1.f, 1.f, 0.f};
    auto batch = [&](std::size_t n) {
        Tensor t({n, 3, 32, 32});
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
        return t;
    };
    for (int step = 0; step < 2; ++step) {
        const auto loss = bce_with_logits<float>(m.forward_logits(batch(4)), labels);
        m.zero_grad();
        m.backward_logits(loss.grad);
        opt.step(m.params());
    }
    m.set_mode(Mode::Eval);
    save_checkpoint(m, dir / "m.ckpt", {{"color-mode", "rgb"}});
    Checkpoint back = load_checkpoint(dir / "m.ckpt");
    back.model.set_mode(Mode::Eval);
    const Tensor x = batch(8);
    const Tensor ya = m.forward(x), yb = back.model.forward(x);
    c.expect(ya.size() == yb.size() && std::memcmp(ya.data().data(), yb.data().data(), ya.size() * 4) == 0,
             "forward differs after reload");

    const std::string bytes = read_file(dir / "m.ckpt");
    const std::size_t header = bytes.find('\n') + 1;
    std::size_t trials = 0, detected = 0;
    auto corrupt = [&](std::size_t at) {
        std::string bad = bytes;
        bad[at] = static_cast<char>(bad[at] ^ (1 << rng.uniform_int(0, 7)));
        ++trials;
        try {
            parse_checkpoint(bad);
            c.expect(false, "corruption at byte " + std::to_string(at) + " accepted");
        } catch (const Error&) {
            ++detected;
        }
    };
    for (std::size_t i = 0; i < header; ++i) corrupt(i);
    for (int i = 0; i < 500; ++i) corrupt(header + static_cast<std::size_t>(rng.uniform_int(0, bytes.size() - header - 1)));
    c.expect(detected == trials, "undetected corruption");
    c.notes.push_back("forward bitwise equal on 8 samples; " + std::to_string(detected) + "/" + std::to_string(trials) +
                      " single-byte corruptions detected");
}

struct Criterion {
    int number;
    const char* name;
    double budget_seconds;
    std::function<void(Checks&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    log::set_level(log::Level::Warn);
    const std::vector<Criterion> all{
        {1, "metric oracle equivalence", 10.0, metric_oracle},
        {2, "gradient verification", 60.0, gradients},
        {3, "parameter accounting", 0.0, parameter_accounting},
        {4, "blur pipeline", 10.0, blur_pipeline},
        {5, "patch geometry", 0.0, patch_geometry},
        {6, "end-to-end desk-scale run", 0.0, end_to_end},
        {7, "unknown-PAI protocol", 0.0, unknown_pai},
        {8, "checkpoint round-trip", 0.0, checkpoint_round_trip},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& crit : all) {
        if (!wanted.empty() && !wanted.count(crit.number)) continue;
        Checks checks;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            crit.run(checks);
        } catch (const std::exception& e) {
            checks.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = seconds_since(t0);
        if (crit.budget_seconds > 0.0)
            checks.expect(secs < crit.budget_seconds, "runtime " + fmt(secs) + " s over " + fmt(crit.budget_seconds) + " s");
        const bool ok = checks.ok();
        failed += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << crit.number << ": " << crit.name << " ("
                  << fmt(secs, 4) << " s, " << checks.total() << " checks)";
        for (const auto& n : checks.notes) std::cout << "\n      " << n;
        if (!ok) std::cout << "\n      " << checks.summary();
        std::cout << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
