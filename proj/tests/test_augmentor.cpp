#include <doctest.h>

#include "csra/augmentor.hpp"
#include "csra/encoder.hpp"
#include "csra/error.hpp"
#include "csra/objectives.hpp"
#include "support.hpp"

using namespace csra;
using csra::testing::check_inputs;
using csra::testing::check_params;
using csra::testing::random_mat;
using csra::testing::uniform_mat;

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

AugmentorConfig small_config(int window = 6) {
    AugmentorConfig c;
    c.window = window;
    c.system_dim = 4;
    c.global_dim = 5;
    c.controller_hidden = 6;
    return c;
}

SystemSchema two_systems() { return SystemSchema({{"A", "a", {0, 3}}, {"B", "b", {1, 2, 4}}}, 5); }

controller::ControlSignals signals(Vec alpha, Vec gate, double beta) { return {std::move(alpha), std::move(gate), beta}; }

// Value-level composition of the augmentation for a single sample, one
// function call per stage, with externally supplied signals.
Mat reference_augment(const Mat& x, const SystemSchema& schema, const std::vector<controller::ControlSignals>& sig) {
    const auto parts = split(x, schema);
    const auto partition = spectral::band_partition(static_cast<int>(x.rows()));
    std::vector<Mat> out;
    for (std::size_t s = 0; s < parts.size(); ++s) {
        const auto bands = spectral::band_components(spectral::dct_forward(parts[s]), partition);
        const Mat r = spectral::dct_inverse(reweight_bands(bands, sig[s].alpha));
        Mat gated = r;
        for (Eigen::Index t = 0; t < r.rows(); ++t) gated.row(t) *= sig[s].gate(t);
        out.push_back(parts[s] + sig[s].beta * gated);
    }
    return merge(out, schema);
}

}  // namespace

TEST_SUITE("augmentor") {

// ---- encoder ----------------------------------------------------------------------

TEST_CASE("encoder zero and constant inputs") {
    std::mt19937_64 rng(20);
    CHECK(encoder::encode_system(Mat::Zero(6, 3), random_mat(3, 4, rng), Mat::Zero(1, 4)).isZero(0.0));
    const Mat w = random_mat(3, 4, rng), b = random_mat(1, 4, rng);
    const Mat row = random_mat(1, 3, rng);
    const Mat x = row.replicate(6, 1);
    const Vec expect = (row * w + b).array().tanh().transpose();
    CHECK((encoder::encode_system(x, w, b) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("encoder matches a reference loop") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat x = random_mat(6, 3, rng), w = random_mat(3, 4, rng), b = random_mat(1, 4, rng);
        Vec acc = Vec::Zero(4);
        for (int t = 0; t < 6; ++t)
            for (int j = 0; j < 4; ++j) {
                double a = b(0, j);
                for (int i = 0; i < 3; ++i) a += x(t, i) * w(i, j);
                acc(j) += std::tanh(a) / 6.0;
            }
        CHECK((encoder::encode_system(x, w, b) - acc).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("encoder pooling ignores time order") {
    std::mt19937_64 rng(22);
    const Mat w = random_mat(3, 4, rng), b = random_mat(1, 4, rng);
    const Mat pair = random_mat(2, 3, rng);
    const Mat swapped = pair.colwise().reverse();
    CHECK(encoder::encode_system(pair, w, b) == encoder::encode_system(swapped, w, b));
    const Mat x = random_mat(6, 3, rng);
    const Mat reversed = x.colwise().reverse();
    CHECK((encoder::encode_system(x, w, b) - encoder::encode_system(reversed, w, b)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("global projection cases") {
    std::mt19937_64 rng(23);
    std::vector<Vec> zeros{Vec::Zero(4), Vec::Zero(4)};
    CHECK(encoder::encode_global(zeros, random_mat(8, 5, rng), Mat::Zero(1, 5)).isZero(0.0));
    const Vec z = random_mat(4, 1, rng);
    CHECK(encoder::encode_global({z}, Mat::Identity(4, 4), Mat::Zero(1, 4)) == z);
    const std::vector<Vec> zs{random_mat(4, 1, rng), random_mat(4, 1, rng), random_mat(4, 1, rng)};
    const Mat w = random_mat(12, 5, rng), b = random_mat(1, 5, rng);
    Mat cat(1, 12);
    cat << zs[0].transpose(), zs[1].transpose(), zs[2].transpose();
    const Vec expect = (cat * w + b).transpose();
    CHECK((encoder::encode_global(zs, w, b) - expect).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(encoder::encode_global(std::vector<Vec>{}, w, b), SchemaError);
}

// ---- controller -------------------------------------------------------------------

controller::WeightValues random_controller(std::mt19937_64& rng, int in, int hidden, int k, int w, double scale = 1.0) {
    return {random_mat(in, hidden, rng, scale), random_mat(1, hidden, rng, scale), random_mat(hidden, k, rng, scale),
            random_mat(1, k, rng, scale),       random_mat(hidden, w, rng, scale), random_mat(1, w, rng, scale),
            random_mat(hidden, 1, rng, scale),  random_mat(1, 1, rng, scale)};
}

TEST_CASE("controller with zero weights emits one half everywhere") {
    controller::WeightValues w{Mat::Zero(7, 6), Mat::Zero(1, 6), Mat::Zero(6, 3), Mat::Zero(1, 3),
                               Mat::Zero(6, 6), Mat::Zero(1, 6), Mat::Zero(6, 1), Mat::Zero(1, 1)};
    const auto s = controller::control(Vec::Zero(3), Vec::Zero(4), w);
    CHECK(s.alpha == Vec::Constant(3, 0.5));
    CHECK(s.gate == Vec::Constant(6, 0.5));
    CHECK(s.beta == 0.5);
    w.beta_bias(0, 0) = 20.0;
    const double beta = controller::control(Vec::Zero(3), Vec::Zero(4), w).beta;
    CHECK(beta < 1.0);
    CHECK(beta == doctest::Approx(1.0 - 2.061e-9).epsilon(1e-12));
}

TEST_CASE("controller matches a two-layer reference") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 10; ++trial) {
        const auto w = random_controller(rng, 7, 6, 3, 6);
        const Vec zl = random_mat(3, 1, rng), zg = random_mat(4, 1, rng);
        Mat in(1, 7);
        in << zl.transpose(), zg.transpose();
        const Mat h = (in * w.hidden_weight + w.hidden_bias).array().tanh();
        auto head = [&](const Mat& wt, const Mat& b) {
            Mat logits = h * wt + b;
            for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = sigmoid(logits.data()[i]);
            return Vec(logits.transpose());
        };
        const auto s = controller::control(zl, zg, w);
        CHECK((s.alpha - head(w.alpha_weight, w.alpha_bias)).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((s.gate - head(w.gate_weight, w.gate_bias)).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(std::abs(s.beta - head(w.beta_weight, w.beta_bias)(0)) < 1e-6);
    }
}

TEST_CASE("controller outputs stay in range and are deterministic") {
    std::mt19937_64 rng(25);
    bool ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto w = random_controller(rng, 7, 6, 3, 6, 2.0);
        const Vec zl = random_mat(3, 1, rng, 5.0), zg = random_mat(4, 1, rng, 5.0);
        const auto s = controller::control(zl, zg, w);
        ok = ok && s.alpha.minCoeff() >= 0 && s.alpha.maxCoeff() <= 1 && s.gate.minCoeff() >= 0 &&
             s.gate.maxCoeff() <= 1 && s.beta > 0 && s.beta < 1 && s.gate.size() == 6;
        const auto again = controller::control(zl, zg, w);
        ok = ok && again.alpha == s.alpha && again.gate == s.gate && again.beta == s.beta;
    }
    CHECK(ok);
}

TEST_CASE("controller gradients match finite differences") {
    std::mt19937_64 rng(26);
    const auto w = random_controller(rng, 7, 5, 3, 4);
    std::vector<Mat> inputs{random_mat(2, 3, rng), random_mat(2, 4, rng), w.hidden_weight, w.hidden_bias,
                            w.alpha_weight,        w.alpha_bias,          w.gate_weight,   w.gate_bias,
                            w.beta_weight,         w.beta_bias};
    const Mat pa = random_mat(2, 3, rng), pg = random_mat(2, 4, rng), pb = random_mat(2, 1, rng);
    const auto r = check_inputs(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            const controller::WeightVars wv{v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
            auto out = controller::control(v[0], v[1], wv);
            return ad::add(ad::add(ad::sum(ad::mul(out.alpha, t.constant(pa))), ad::sum(ad::mul(out.gate, t.constant(pg)))),
                           ad::sum(ad::mul(out.beta, t.constant(pb))));
        },
        inputs);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
}

// ---- value-level augmentation -----------------------------------------------------

TEST_CASE("band reweighting examples") {
    std::mt19937_64 rng(27);
    const auto p = spectral::band_partition(6);
    const auto s = spectral::dct_forward(random_mat(6, 3, rng));
    const auto b = spectral::band_components(s, p);
    CHECK((reweight_bands(b, Vec::Ones(3)).coeffs - s.coeffs).cwiseAbs().maxCoeff() == 0.0);
    CHECK(reweight_bands(b, Vec::Zero(3)).coeffs.isZero(0.0));
    const auto c = spectral::dct_forward(Mat::Constant(6, 2, -0.8));
    const auto cb = spectral::band_components(c, p);
    CHECK((reweight_bands(cb, Vec::Unit(3, 0)).coeffs - c.coeffs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(reweight_bands(b, Vec::Ones(2)), ValidationError);
}

TEST_CASE("augment_system examples") {
    std::mt19937_64 rng(28);
    const auto p = spectral::band_partition(6);
    const Mat x = random_mat(6, 3, rng);
    const Vec alpha = uniform_mat(3, 1, rng, 0, 1);
    const Vec gate = uniform_mat(6, 1, rng, 0, 1);

    const auto zero_beta = augment_system(x, signals(alpha, gate, sigmoid(-800.0)), p);
    CHECK((zero_beta.augmented - x).cwiseAbs().maxCoeff() < 1e-7);

    const auto doubled = augment_system(x, signals(Vec::Ones(3), Vec::Ones(6), 1.0), p);
    CHECK((doubled.augmented - 2.0 * x).cwiseAbs().maxCoeff() < 1e-6);

    for (int t = 0; t < 6; ++t) {
        const auto one_hot = augment_system(x, signals(alpha, Vec::Unit(6, t), 0.7), p);
        for (int r = 0; r < 6; ++r)
            if (r != t) CHECK(one_hot.augmented.row(r) == x.row(r));
        CHECK(one_hot.augmented.row(t) != x.row(t));
    }

    const auto generic = augment_system(x, signals(alpha, gate, 0.4), p);
    const auto bands = spectral::band_components(spectral::dct_forward(x), p);
    const Mat r = spectral::dct_inverse(reweight_bands(bands, alpha));
    CHECK((generic.diagnostics.residual - r).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(generic.diagnostics.u.minCoeff() >= 0.0);
    CHECK((generic.diagnostics.u - modulation_strength(0.4, alpha, bands)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((generic.diagnostics.u_raw - generic.diagnostics.u * 18.0).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(augment_system(x, signals(alpha, Vec::Ones(5), 0.5), p), ValidationError);
    CHECK_THROWS_AS(augment_system(x, signals(Vec::Ones(1), gate, 0.5), p), ValidationError);
}

TEST_CASE("time-domain augmentation scales the input") {
    std::mt19937_64 rng(29);
    const Mat x = random_mat(6, 2, rng);
    const Vec gate = uniform_mat(6, 1, rng, 0, 1);
    const auto r = augment_system_time_domain(x, signals(Vec::Constant(1, 0.3), gate, 0.6));
    for (int t = 0; t < 6; ++t)
        CHECK((r.augmented.row(t) - (1.0 + 0.6 * gate(t) * 0.3) * x.row(t)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(r.diagnostics.u(0) == doctest::Approx(0.6 * 0.3 * x.cwiseAbs().mean()).epsilon(1e-12));
}

// ---- Augmentor --------------------------------------------------------------------

TEST_CASE("zero-weight augmentor matches the composed reference") {
    Augmentor aug(two_systems(), small_config());
    aug.zero();
    std::mt19937_64 rng(30);
    const Mat x = random_mat(6, 5, rng);
    const auto [out, diags] = aug.augment(x);
    const controller::ControlSignals half{Vec::Constant(3, 0.5), Vec::Constant(6, 0.5), 0.5};
    CHECK((out - reference_augment(x, aug.schema(), {half, half})).cwiseAbs().maxCoeff() < 1e-12);
    // alpha = 0.5 on every band gives R = 0.5 X, so X + 0.5 * 0.5 * 0.5 X.
    CHECK((out - 1.125 * x).cwiseAbs().maxCoeff() < 1e-12);
    for (const auto& d : diags) {
        CHECK(d.signals.beta == 0.5);
        CHECK(d.signals.alpha == half.alpha);
        CHECK(d.signals.gate == half.gate);
    }
}

TEST_CASE("trained-like augmentor agrees with the reference given its own signals") {
    Augmentor aug(two_systems(), small_config());
    std::mt19937_64 rng(31);
    aug.init(rng);
    for (int trial = 0; trial < 5; ++trial) {
        const Mat x = random_mat(6, 5, rng);
        const auto [out, diags] = aug.augment(x);
        std::vector<controller::ControlSignals> sig;
        for (const auto& d : diags) sig.push_back(d.signals);
        CHECK((out - reference_augment(x, aug.schema(), sig)).cwiseAbs().maxCoeff() < 1e-12);
        const auto parts = split(x, aug.schema());
        for (std::size_t s = 0; s < diags.size(); ++s) {
            const auto& d = diags[s];
            CHECK(d.u.minCoeff() >= 0.0);
            CHECK((d.residual - spectral::dct_inverse(reweight_bands(d.bands, d.signals.alpha))).cwiseAbs().maxCoeff() <
                  1e-6);
            CHECK((d.u - modulation_strength(d.signals.beta, d.signals.alpha, d.bands)).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(d.signals.beta > 0.0);
            CHECK(d.signals.beta < 1.0);
            // Controller signals are reproducible from the exposed weights.
            std::vector<Vec> zl;
            for (int k = 0; k < 2; ++k)
                zl.push_back(encoder::encode_system(parts[static_cast<std::size_t>(k)], aug.encoder_weight(k),
                                                    aug.encoder_bias(k)));
            const Vec zg = encoder::encode_global(zl, aug.global_weight(), aug.global_bias());
            const auto c = controller::control(zl[s], zg, aug.controller_weights(static_cast<int>(s)));
            CHECK((c.gate - d.signals.gate).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(std::abs(c.beta - d.signals.beta) < 1e-12);
        }
    }
}

TEST_CASE("augmentation is deterministic and bounded") {
    Augmentor aug(SystemSchema::default_nine(2), small_config());
    std::mt19937_64 rng(32);
    aug.init(rng);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat x = random_mat(6, 18, rng);
        const auto [a, diags] = aug.augment(x);
        const auto [b, unused] = aug.augment(x);
        CHECK(a == b);
        double bound = 0.0;
        for (const auto& d : diags) bound = std::max(bound, d.signals.beta * d.residual.cwiseAbs().maxCoeff());
        CHECK((a - x).cwiseAbs().maxCoeff() <= bound + 1e-15);
    }
}

TEST_CASE("closing the gate at a step leaves that step untouched") {
    Augmentor aug(SystemSchema::default_nine(2), small_config());
    std::mt19937_64 rng(33);
    aug.init(rng);
    const int t = 3;
    for (const auto& sys : aug.schema().systems()) {
        aug.params().at("ctrl." + sys.id + ".gate.weight").value.col(t).setZero();
        aug.params().at("ctrl." + sys.id + ".gate.bias").value(0, t) = -1000.0;
    }
    for (int trial = 0; trial < 10; ++trial) {
        const Mat x = random_mat(6, 18, rng);
        const Mat out = aug.augment(x).first;
        CHECK(out.row(t) == x.row(t));
        CHECK(out != x);
    }
}

TEST_CASE("systems do not leak into each other") {
    std::mt19937_64 rng(34);
    const auto schema = two_systems();
    const Mat x = random_mat(6, 5, rng);
    Mat bumped = x;
    bumped.col(1) += random_mat(6, 1, rng);  // system B only
    const auto p = spectral::band_partition(6);
    const auto sa = signals(uniform_mat(3, 1, rng, 0, 1), uniform_mat(6, 1, rng, 0, 1), 0.6);
    const auto before = split(x, schema), after = split(bumped, schema);
    CHECK(augment_system(before[0], sa, p).augmented == augment_system(after[0], sa, p).augmented);

    // With the global projection zeroed, no cross-system path remains in the full augmentor either.
    Augmentor aug(schema, small_config());
    aug.init(rng);
    aug.params().at("global.weight").value.setZero();
    const Mat o1 = aug.augment(x).first, o2 = aug.augment(bumped).first;
    CHECK(o1.col(0) == o2.col(0));
    CHECK(o1.col(3) == o2.col(3));
    CHECK(o1.col(1) != o2.col(1));
}

TEST_CASE("batched forward equals per-sample augmentation") {
    Augmentor aug(two_systems(), small_config());
    std::mt19937_64 rng(35);
    aug.init(rng);
    const Mat batch = random_mat(18, 5, rng);
    ad::Tape tape;
    const Mat out = aug.forward(tape, tape.constant(batch)).augmented.value();
    const auto diags = aug.diagnose(batch);
    REQUIRE(diags.size() == 3);
    for (int b = 0; b < 3; ++b) {
        const auto single = aug.augment(batch.middleRows(b * 6, 6));
        CHECK((out.middleRows(b * 6, 6) - single.first).cwiseAbs().maxCoeff() < 1e-12);
        for (std::size_t s = 0; s < 2; ++s)
            CHECK((diags[static_cast<std::size_t>(b)][s].u - single.second[s].u).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(aug.forward(tape, tape.constant(Mat::Zero(6, 4))), SchemaError);
    CHECK_THROWS_AS(aug.forward(tape, tape.constant(Mat::Zero(7, 5))), SchemaError);
}

TEST_CASE("augmentor parameter gradients match finite differences") {
    for (bool spectral_path : {true, false}) {
        auto config = small_config();
        config.spectral = spectral_path;
        Augmentor aug(two_systems(), config);
        std::mt19937_64 rng(36);
        aug.init(rng);
        const Mat x = random_mat(12, 5, rng);
        const auto r = check_params({&aug.params()}, [&](ad::Tape& t) {
            return ad::sum(ad::square(aug.forward(t, t.constant(x)).augmented));
        });
        INFO("spectral " << spectral_path << " worst " << r.worst);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.checked == aug.params().scalar_count());
    }
}

TEST_CASE("time-domain augmentor applies one scalar weight") {
    auto config = small_config();
    config.spectral = false;
    Augmentor aug(two_systems(), config);
    std::mt19937_64 rng(37);
    aug.init(rng);
    CHECK(aug.band_count() == 1);
    const Mat x = random_mat(6, 5, rng);
    const auto [out, diags] = aug.augment(x);
    const auto parts = split(x, aug.schema());
    std::vector<Mat> expect;
    for (std::size_t s = 0; s < parts.size(); ++s) {
        const auto ref = augment_system_time_domain(parts[s], diags[s].signals);
        expect.push_back(ref.augmented);
        CHECK((diags[s].u - ref.diagnostics.u).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK((out - merge(expect, aug.schema())).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-system schema reduces to augment_system") {
    Augmentor aug(SystemSchema::single(5), small_config());
    std::mt19937_64 rng(38);
    aug.init(rng);
    const Mat x = random_mat(6, 5, rng);
    const auto [out, diags] = aug.augment(x);
    REQUIRE(diags.size() == 1);
    const auto ref = augment_system(x, diags[0].signals, spectral::band_partition(6));
    CHECK((out - ref.augmented).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("clamped scale yields the identity augmentation") {
    auto config = small_config();
    config.clamp_beta_zero = true;
    Augmentor aug(SystemSchema::default_nine(2), config);
    std::mt19937_64 rng(39);
    aug.init(rng);
    const Mat x = random_mat(6, 18, rng);
    const auto [out, diags] = aug.augment(x);
    CHECK(out == x);
    for (const auto& d : diags) CHECK(d.u.isZero(0.0));
}

TEST_CASE("residual noise is opt-in and seeded") {
    auto config = small_config();
    config.residual_noise_std = 0.2;
    Augmentor aug(two_systems(), config);
    std::mt19937_64 init(40);
    aug.init(init);
    const Mat x = random_mat(12, 5, init);
    auto run = [&](std::uint64_t seed) {
        std::mt19937_64 noise(seed);
        ad::Tape t;
        return Mat(aug.forward(t, t.constant(x), &noise).augmented.value());
    };
    CHECK(run(1) == run(1));
    CHECK(run(1) != run(2));
    ad::Tape t;
    CHECK_THROWS_AS(aug.forward(t, t.constant(x)), ValidationError);
    config.residual_noise_std = -1.0;
    CHECK_THROWS_AS(Augmentor(two_systems(), config), ValidationError);
}

TEST_CASE("inter norm names round trip") {
    CHECK(inter_norm_from_string(to_string(InterNorm::Mean)) == InterNorm::Mean);
    CHECK(inter_norm_from_string(to_string(InterNorm::Raw)) == InterNorm::Raw);
    CHECK_THROWS_AS(inter_norm_from_string("l2"), UsageError);
}

}  // TEST_SUITE
