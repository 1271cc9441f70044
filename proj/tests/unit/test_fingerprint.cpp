#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "naturalfinger/fingerprint.hpp"
#include "naturalfinger/util.hpp"

using namespace nf;

namespace {

FingerprintConfig small_config() {
    FingerprintConfig c;
    c.lr = 0.05;
    c.iterations = 3;
    c.n_candidates = 60;
    c.optimize_batch = 8;
    c.query_size = 5;
    c.model_batch_size = 2;
    c.seed = 7;
    return c;
}

struct ConstantSet {
    Classifier p1, p2, n1;
    TrainedModelSet view() {
        TrainedModelSet s;
        s.positives = {&p1, &p2};
        s.negatives = {&n1};
        s.positive_ids = {"p1", "p2"};
        s.negative_ids = {"n1"};
        return s;
    }
};

ConstantSet constant_set(int pos_class, int neg_class) {
    const ImageShape shape{1, 8, 8};
    return {test::constant_classifier(pos_class, 3, shape), test::constant_classifier(pos_class, 3, shape),
            test::constant_classifier(neg_class, 3, shape)};
}

}  // namespace

TEST_CASE("cw loss follows max(max_other - target, -k)") {
    const std::vector<double> z{1.0, 3.0, 2.0};
    CHECK(cw_loss(z, 1, 5.0) == doctest::Approx(-1.0));
    CHECK(cw_loss(z, 1, 0.5) == doctest::Approx(-0.5));
    CHECK(cw_loss(z, 0, 5.0) == doctest::Approx(2.0));
    CHECK(cw_loss(std::vector<double>{2.0, 2.0}, 0, 1.0) == 0.0);
    CHECK_THROWS_AS(cw_loss(z, 3, 1.0), std::out_of_range);
    CHECK_THROWS_AS(cw_loss(std::vector<double>{1.0}, 0, 1.0), std::invalid_argument);
}

TEST_CASE("batched cw gradient matches finite differences away from the clamp") {
    const Tensor z = test::random_tensor(4, 5, 1, 1, 3, -1, 1);
    const std::vector<int> y{0, 4, 2, 1};
    Tensor g;
    const double v = cw_loss_batch(z, y, 5.0, &g);
    double mean = 0;
    for (int i = 0; i < 4; ++i) mean += cw_loss(z.sample(i), y[static_cast<std::size_t>(i)], 5.0) / 4;
    CHECK(v == doctest::Approx(mean));
    const Tensor num = test::numeric_gradient(z, [&](const Tensor& t) { return cw_loss_batch(t, y, 5.0, nullptr); });
    CHECK(test::max_rel_error(g, num) < 1e-6);

    Tensor clamped;
    cw_loss_batch(z, y, 0.0001, &clamped);
    for (int i = 0; i < 4; ++i) {
        if (cw_loss(z.sample(i), y[static_cast<std::size_t>(i)], 1e9) < -0.0001) {
            for (double gv : clamped.sample(i)) CHECK(gv == 0.0);
        }
    }
}

TEST_CASE("hinge and discriminator losses follow the sign convention") {
    CHECK(hinge_loss(0.3, 1.0) == doctest::Approx(0.7));
    CHECK(hinge_loss(2.0, 1.0) == 0.0);
    CHECK(hinge_loss(-0.5, -1.0) == doctest::Approx(0.5));

    Tensor s(2, 1, 1, 1);
    s[0] = 0.5;
    s[1] = -2.0;
    CHECK(discriminator_loss(s, +1, DiscriminatorLossMode::naturalness, nullptr) == doctest::Approx(1.75));
    CHECK(discriminator_loss(s, +1, DiscriminatorLossMode::paper_literal, nullptr) == doctest::Approx(0.75));
    CHECK(discriminator_loss(s, -1, DiscriminatorLossMode::naturalness, nullptr) == doctest::Approx(0.75));
    CHECK_THROWS_AS(discriminator_loss(s, 0, DiscriminatorLossMode::naturalness, nullptr), std::invalid_argument);

    Tensor g;
    discriminator_loss(s, +1, DiscriminatorLossMode::naturalness, &g);
    CHECK(g[0] == doctest::Approx(-0.5));
    CHECK(g[1] == doctest::Approx(-0.5));
}

TEST_CASE("composite loss arithmetic") {
    CHECK(composite_loss(1.0, 2.0, 4.0, 0.5) == 5.0);
    CHECK(composite_loss(1.0, 2.0, std::numeric_limits<double>::infinity(), 0.0) == 3.0);
}

TEST_CASE("total loss without the discriminator term is exactly L_pos + L_neg") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 1);
    Classifier p = build_classifier("tiny_cnn", {1, 8, 8}, 3, 2);
    Classifier n = build_classifier("tiny_cnn", {1, 8, 8}, 3, 3);
    Classifier* ps[] = {&p};
    Classifier* ns[] = {&n};
    const LatentBatch z = sample_latents(4, 4, 3, 1);
    const Tensor fake = gan.generate(z.z, z.class_labels);
    const Tensor unit = to_unit_range(fake, gan.meta());
    const std::vector<int> yo{0, 1, 2, 0}, ya{1, 2, 0, 2};

    FingerprintConfig off = small_config();
    off.trick_discriminator_loss = false;
    FingerprintConfig zero = small_config();
    zero.lambda = 0.0;
    for (const auto& cfg : {off, zero}) {
        LossGradients grads;
        const LossTerms t = total_loss(unit, fake, yo, ya, ps, ns, &gan, z.class_labels, cfg, &grads);
        CHECK(t.total == t.positive + t.negative);
        CHECK(t.discriminator == 0.0);
        for (double v : grads.d_fake.values()) CHECK(v == 0.0);
    }
    LossTerms a = total_loss(unit, fake, yo, ya, ps, ns, &gan, z.class_labels, off, nullptr);
    LossTerms b = total_loss(unit, fake, yo, ya, ps, ns, &gan, z.class_labels, zero, nullptr);
    CHECK(a.total == b.total);
    CHECK(a.positive == cw_loss_batch(p.logits(unit), yo, off.cw_margin, nullptr));
    CHECK(a.negative == cw_loss_batch(n.logits(unit), ya, off.cw_margin, nullptr));

    const FingerprintConfig on = small_config();
    const LossTerms c = total_loss(unit, fake, yo, ya, ps, ns, &gan, z.class_labels, on, nullptr);
    CHECK(c.total == doctest::Approx(c.positive + c.negative + on.lambda * c.discriminator));
}

TEST_CASE("latent gradient of the full objective matches finite differences") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 11);
    Classifier p = build_classifier("tiny_cnn", {1, 8, 8}, 3, 12);
    Classifier n = build_classifier("tiny_mlp", {1, 8, 8}, 3, 13);
    Classifier* ps[] = {&p};
    Classifier* ns[] = {&n};
    const LatentBatch z = sample_latents(3, 4, 3, 5);
    const std::vector<int> yo{0, 1, 2}, ya{1, 2, 0};
    FingerprintConfig cfg = small_config();
    cfg.trick_input_transform = false;
    cfg.cw_margin = 100.0;

    auto loss = [&](const Tensor& zz) {
        const Tensor fake = gan.generate(zz, z.class_labels);
        return total_loss(to_unit_range(fake, gan.meta()), fake, yo, ya, ps, ns, &gan, z.class_labels, cfg, nullptr)
            .total;
    };
    const Tensor fake = gan.generate_with_grad(z.z, z.class_labels);
    LossGradients grads;
    total_loss(to_unit_range(fake, gan.meta()), fake, yo, ya, ps, ns, &gan, z.class_labels, cfg, &grads);
    Tensor d = grads.d_transformed;
    d *= 1.0 / (gan.meta().output_high - gan.meta().output_low);
    d += grads.d_fake;
    const Tensor dz = gan.backward_latent(d);
    CHECK(test::max_rel_error(dz, test::numeric_gradient(z.z, loss)) < 1e-4);
}

TEST_CASE("input transformation properties") {
    const Tensor x = test::random_tensor(3, 1, 8, 8, 4, 0, 1);
    std::mt19937_64 rng(1);

    SUBCASE("no padding and no flip is the identity") {
        const auto d = draw_transform(3, 0, 0.0, rng);
        CHECK(apply_transform(x, d).values() == x.values());
    }
    SUBCASE("flipping twice is the identity") {
        const auto d = draw_transform(3, 0, 1.0, rng);
        const Tensor once = apply_transform(x, d);
        CHECK(once.values() != x.values());
        CHECK(once.at(0, 0, 2, 0) == x.at(0, 0, 2, 7));
        CHECK(apply_transform(once, d).values() == x.values());
    }
    SUBCASE("crop offsets stay in range and outputs are input pixels") {
        for (int k = 0; k < 20; ++k) {
            const auto d = draw_transform(3, 2, 0.5, rng);
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK((d.offset_y[i] >= 0 && d.offset_y[i] <= 4));
                CHECK((d.offset_x[i] >= 0 && d.offset_x[i] <= 4));
            }
            const Tensor y = apply_transform(x, d);
            CHECK(y.same_shape(x));
            for (int n = 0; n < 3; ++n) {
                const std::set<double> source(x.sample(n).begin(), x.sample(n).end());
                for (double v : y.sample(n)) CHECK(source.count(v) == 1);
            }
        }
    }
    SUBCASE("backward is the adjoint of forward") {
        const auto d = draw_transform(3, 2, 0.5, rng);
        const Tensor g = test::random_tensor(3, 1, 8, 8, 5);
        const Tensor tx = apply_transform(x, d);
        const Tensor tg = transform_backward(g, d);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            lhs += tx[i] * g[i];
            rhs += x[i] * tg[i];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
    SUBCASE("disabled trick returns the input") {
        FingerprintConfig c;
        c.trick_input_transform = false;
        CHECK(transform(x, rng, c).values() == x.values());
    }
    SUBCASE("default padding is an eighth of the height") {
        FingerprintConfig c;
        CHECK(resolved_crop_padding(c, 16) == 2);
        CHECK(resolved_crop_padding(c, 4) == 1);
        c.crop_padding = 0;
        CHECK(resolved_crop_padding(c, 16) == 0);
    }
}

TEST_CASE("majority vote picks the most common label, lowest index on ties") {
    CHECK(majority_vote({{1, 2}, {1, 3}, {2, 3}}, 4) == std::vector<int>{1, 3});
    CHECK(majority_vote({{4}, {2}}, 5) == std::vector<int>{2});
    CHECK(majority_vote({{3, 0}}, 4) == std::vector<int>{3, 0});
}

TEST_CASE("initial selection keeps exactly the latents recognised as their condition class") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 1);
    Classifier c1 = test::constant_classifier(1, 3, {1, 8, 8});
    Classifier* ps[] = {&c1};
    const LatentBatch kept = select_initial_latents(gan, ps, 50, 50, 3);
    const LatentBatch pool = sample_latents(50, 4, 3, 3);
    const auto ones = std::count(pool.class_labels.begin(), pool.class_labels.end(), 1);
    CHECK(kept.size() == ones);
    for (int y : kept.class_labels) CHECK(y == 1);
    CHECK(select_initial_latents(gan, ps, 50, 2, 3).size() == 2);

    Classifier c2 = test::constant_classifier(2, 3, {1, 8, 8});
    Classifier* disagree[] = {&c1, &c2};
    CHECK_THROWS_AS(select_initial_latents(gan, disagree, 50, 50, 3), std::runtime_error);
}

TEST_CASE("label assignment drops collisions and the random arm never repeats the original") {
    const Tensor x = test::random_tensor(30, 1, 8, 8, 2, 0, 1);
    auto set = constant_set(1, 2);
    auto v = set.view();
    const auto adv = assign_labels(x, v.positives, v.negatives, 0.03, true, 1);
    CHECK(adv.kept_rows.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(adv.y_original[i] == 1);
        CHECK(adv.y_adversarial[i] == 2);
    }

    auto same = constant_set(1, 1);
    auto sv = same.view();
    CHECK(assign_labels(x, sv.positives, sv.negatives, 0.03, true, 1).kept_rows.empty());

    const auto rnd = assign_labels(x, sv.positives, sv.negatives, 0.03, false, 4);
    CHECK(rnd.kept_rows.size() == 30);
    std::set<int> seen;
    for (int y : rnd.y_adversarial) {
        CHECK(y != 1);
        seen.insert(y);
    }
    CHECK(seen == std::set<int>{0, 2});
    CHECK(assign_labels(x, sv.positives, sv.negatives, 0.03, false, 4).y_adversarial == rnd.y_adversarial);
}

TEST_CASE("latent optimisation: zero iterations, ablation equivalence and non-finite losses") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 21);
    Classifier p = build_classifier("tiny_cnn", {1, 8, 8}, 3, 22);
    Classifier n = build_classifier("tiny_cnn", {1, 8, 8}, 3, 23);
    TrainedModelSet models;
    models.positives = {&p};
    models.negatives = {&n};
    const LatentBatch z = sample_latents(4, 4, 3, 2);
    const std::vector<int> yo{0, 1, 2, 0}, ya{1, 2, 0, 2};

    FingerprintConfig none = small_config();
    none.iterations = 0;
    CHECK(optimize_latents(z, yo, ya, models, gan, none).z.values() == z.z.values());

    FingerprintConfig off = small_config();
    off.trick_discriminator_loss = false;
    FingerprintConfig zero = small_config();
    zero.lambda = 0.0;
    std::vector<double> t1, t2;
    const auto a = optimize_latents(z, yo, ya, models, gan, off, &t1);
    const auto b = optimize_latents(z, yo, ya, models, gan, zero, &t2);
    CHECK(a.z.values() == b.z.values());
    CHECK(t1 == t2);
    CHECK(t1.size() == static_cast<std::size_t>(off.iterations) + 1);
    CHECK(a.z.values() != z.z.values());

    GanHandle broken = gan;
    broken.generator().params().back()->value[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(optimize_latents(z, yo, ya, models, broken, small_config()), NonFiniteLoss);
}

TEST_CASE("screening keeps only unanimous samples and reports failures per model") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 1);
    auto set = constant_set(1, 2);
    const auto models = set.view();
    const LatentBatch z = sample_latents(6, 4, 3, 8);
    const std::vector<int> ones(6, 1), twos(6, 2);
    FingerprintConfig cfg = small_config();
    cfg.query_size = 4;
    const QuerySet q = screen(z, ones, twos, models, gan, cfg);
    CHECK(q.size() == 4);
    CHECK(q.stats.screened == 4);
    for (const auto& s : q.samples) {
        CHECK(s.pixels.size() == 64);
        CHECK(s.latent.size() == 4);
    }

    std::vector<int> mixed = twos;
    mixed[0] = 0;
    mixed[3] = 0;
    cfg.query_size = 10;
    CHECK(screen(z, ones, mixed, models, gan, cfg).size() == 4);

    const std::vector<int> zeros(6, 0);
    CHECK_THROWS_WITH_AS(screen(z, ones, zeros, models, gan, cfg), doctest::Contains("n1=6"), ScreeningError);
}

TEST_CASE("full pipeline is deterministic and its archive round-trips byte for byte") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 1);
    auto set = constant_set(1, 2);
    const FingerprintConfig cfg = small_config();
    const QuerySet q = generate_fingerprint(set.view(), gan, cfg);
    CHECK(q.size() == cfg.query_size);
    for (const auto& s : q.samples) {
        CHECK(s.y_positive == 1);
        CHECK(s.y_adversarial == 2);
        CHECK(s.condition_class == 1);
    }
    CHECK(q.provenance.at("loss_trace").size() == static_cast<std::size_t>(cfg.iterations) + 1);
    CHECK(q.config_hash == cfg.hash());

    test::TempDir dir("qs");
    save_query_set(q, dir.path / "a");
    const QuerySet again = generate_fingerprint(set.view(), gan, cfg);
    save_query_set(again, dir.path / "b");
    for (const char* f : {"labels.json", "provenance.json", "samples/0.png", "samples/4.png"}) {
        CHECK_MESSAGE(read_file(dir.path / "a" / f) == read_file(dir.path / "b" / f), f);
    }

    const QuerySet back = load_query_set(dir.path / "a");
    CHECK(back.size() == q.size());
    CHECK(back.images().values() == q.images().values());
    CHECK(back.positive_labels() == q.positive_labels());
    CHECK(back.adversarial_labels() == q.adversarial_labels());
    CHECK(back.config_hash == q.config_hash);
    CHECK(back.shape == q.shape);
}

TEST_CASE("config validation and json round trip") {
    FingerprintConfig c = small_config();
    c.discriminator_mode = DiscriminatorLossMode::paper_literal;
    const auto back = FingerprintConfig::from_json(c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(back.discriminator_mode == DiscriminatorLossMode::paper_literal);
    FingerprintConfig bad = c;
    bad.iterations = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
