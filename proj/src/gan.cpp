#include "naturalfinger/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace nf {

LatentBatch LatentBatch::subset(std::span<const int> rows) const {
    LatentBatch b;
    b.z = z.gather(rows);
    b.seed = seed;
    for (int r : rows) b.class_labels.push_back(class_labels[static_cast<std::size_t>(r)]);
    return b;
}

LatentBatch sample_latents(int count, int latent_dim, int num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    LatentBatch b;
    b.seed = seed;
    b.z = Tensor(count, latent_dim, 1, 1);
    b.class_labels.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        for (int j = 0; j < latent_dim; ++j) b.z[static_cast<std::size_t>(i) * latent_dim + j] = normal(rng);
        b.class_labels[static_cast<std::size_t>(i)] = cls(rng);
    }
    return b;
}

// ---- ProjectionDiscriminator --------------------------------------------------

ProjectionDiscriminator::ProjectionDiscriminator(ImageShape shape, int num_classes, int width) {
    features_.add<Conv2d>(shape.channels, width, 4, 2, 1);
    features_.add<Activation>(ActivationKind::leaky_relu, 0.2);
    features_.add<Conv2d>(width, 2 * width, 4, 2, 1);
    features_.add<Activation>(ActivationKind::leaky_relu, 0.2);
    const int flat = 2 * width * (shape.height / 4) * (shape.width / 4);
    feature_dim_ = 64;
    features_.add<Reshape>(flat, 1, 1);
    features_.add<Dense>(flat, feature_dim_);
    features_.add<Activation>(ActivationKind::leaky_relu, 0.2);
    head_ = Dense(feature_dim_, 1);
    embed_.name = "embedding";
    embed_.value = Tensor(1, 1, num_classes, feature_dim_);
    embed_.grad = Tensor::zeros_like(embed_.value);
}

Tensor ProjectionDiscriminator::forward(const Tensor& images, std::span<const int> classes) {
    if (classes.size() != static_cast<std::size_t>(images.n())) {
        throw std::invalid_argument("discriminator: class count mismatch");
    }
    phi_ = features_.forward(images);
    classes_.assign(classes.begin(), classes.end());
    Tensor score = head_.forward(phi_);
    const int classes_n = embed_.value.h();
    for (int n = 0; n < images.n(); ++n) {
        const int y = classes_[static_cast<std::size_t>(n)];
        if (y < 0 || y >= classes_n) throw std::out_of_range("discriminator: class out of range");
        const auto f = phi_.sample(n);
        double dot = 0.0;
        for (int k = 0; k < feature_dim_; ++k) {
            dot += embed_.value[static_cast<std::size_t>(y) * feature_dim_ + k] * f[static_cast<std::size_t>(k)];
        }
        score[static_cast<std::size_t>(n)] += dot;
    }
    return score;
}

Tensor ProjectionDiscriminator::backward(const Tensor& dscore, bool param_grads) {
    Tensor dphi = head_.backward(dscore, param_grads);
    for (int n = 0; n < phi_.n(); ++n) {
        const int y = classes_[static_cast<std::size_t>(n)];
        const double g = dscore[static_cast<std::size_t>(n)];
        const auto f = phi_.sample(n);
        auto df = dphi.sample(n);
        for (int k = 0; k < feature_dim_; ++k) {
            const std::size_t e = static_cast<std::size_t>(y) * feature_dim_ + k;
            df[static_cast<std::size_t>(k)] += g * embed_.value[e];
            if (param_grads) embed_.grad[e] += g * f[static_cast<std::size_t>(k)];
        }
    }
    return features_.backward(dphi, param_grads);
}

std::vector<Param*> ProjectionDiscriminator::params() {
    auto p = features_.params();
    for (Param* h : head_.params()) p.push_back(h);
    p.push_back(&embed_);
    return p;
}

void ProjectionDiscriminator::zero_grad() {
    for (Param* p : params()) std::fill(p->grad.values().begin(), p->grad.values().end(), 0.0);
}

void ProjectionDiscriminator::init(std::uint64_t seed) {
    features_.init(seed);
    std::mt19937_64 rng(seed + 1);
    head_.reset_parameters(rng);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim_)));
    for (auto& v : embed_.value.values()) v = normal(rng);
}

std::vector<double> ProjectionDiscriminator::flat_parameters() {
    std::vector<double> flat;
    for (Param* p : params()) flat.insert(flat.end(), p->value.values().begin(), p->value.values().end());
    return flat;
}

void ProjectionDiscriminator::load_flat_parameters(std::span<const double> flat) {
    std::size_t total = 0;
    for (Param* p : params()) total += p->value.size();
    if (total != flat.size()) {
        throw std::invalid_argument("discriminator: expected " + std::to_string(total) +
                                    " parameters, got " + std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for (Param* p : params()) {
        std::copy_n(flat.begin() + off, p->value.size(), p->value.values().begin());
        off += p->value.size();
    }
}

// ---- GanHandle ------------------------------------------------------------------

GanHandle::GanHandle(GanMeta meta, Sequential generator, ProjectionDiscriminator discriminator)
    : meta_(std::move(meta)), generator_(std::move(generator)), discriminator_(std::move(discriminator)) {}

Tensor GanHandle::generator_input(const Tensor& z, std::span<const int> classes) const {
    if (z.sample_size() != meta_.latent_dim) {
        throw std::invalid_argument("generator: latent_dim mismatch (expected " +
                                    std::to_string(meta_.latent_dim) + ", got " +
                                    std::to_string(z.sample_size()) + ")");
    }
    if (classes.size() != static_cast<std::size_t>(z.n())) {
        throw std::invalid_argument("generator: class count mismatch");
    }
    const int width = meta_.latent_dim + meta_.num_classes;
    Tensor in(z.n(), width, 1, 1);
    for (int n = 0; n < z.n(); ++n) {
        const auto src = z.sample(n);
        auto dst = in.sample(n);
        std::copy(src.begin(), src.end(), dst.begin());
        const int y = classes[static_cast<std::size_t>(n)];
        if (y < 0 || y >= meta_.num_classes) throw std::out_of_range("generator: class out of range");
        dst[static_cast<std::size_t>(meta_.latent_dim + y)] = 1.0;
    }
    return in;
}

Tensor GanHandle::generate(const Tensor& z, std::span<const int> classes) const {
    Sequential g = generator_;
    return g.forward(generator_input(z, classes));
}

Tensor GanHandle::discriminate(const Tensor& images, std::span<const int> classes) const {
    ProjectionDiscriminator d = discriminator_;
    return d.forward(images, classes);
}

Tensor GanHandle::generate_with_grad(const Tensor& z, std::span<const int> classes) {
    return generator_.forward(generator_input(z, classes));
}

Tensor GanHandle::backward_latent(const Tensor& d_images) {
    const Tensor d_in = generator_.backward(d_images, false);
    Tensor dz(d_in.n(), meta_.latent_dim, 1, 1);
    for (int n = 0; n < d_in.n(); ++n) {
        const auto src = d_in.sample(n);
        std::copy_n(src.begin(), meta_.latent_dim, dz.sample(n).begin());
    }
    return dz;
}

Tensor GanHandle::discriminate_with_grad(const Tensor& images, std::span<const int> classes) {
    return discriminator_.forward(images, classes);
}

Tensor GanHandle::backward_image(const Tensor& d_scores) {
    return discriminator_.backward(d_scores, false);
}

namespace {

nlohmann::json meta_to_json(const GanMeta& m) {
    return {
        {"kind", m.kind},
        {"latent_dim", m.latent_dim},
        {"num_classes", m.num_classes},
        {"image_shape", {m.image_shape.height, m.image_shape.width, m.image_shape.channels}},
        {"output_range", {m.output_low, m.output_high}},
        {"real_score_sign", m.real_score_sign},
        {"loss", m.loss},
        {"generator_width", m.generator_width},
        {"discriminator_width", m.discriminator_width},
    };
}

GanMeta meta_from_json(const nlohmann::json& j) {
    GanMeta m;
    m.kind = j.at("kind").get<std::string>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    const auto& s = j.at("image_shape");
    m.image_shape = {s[2].get<int>(), s[0].get<int>(), s[1].get<int>()};
    m.output_low = j.at("output_range")[0].get<double>();
    m.output_high = j.at("output_range")[1].get<double>();
    m.real_score_sign = j.at("real_score_sign").get<int>();
    m.loss = j.at("loss").get<std::string>();
    m.generator_width = j.value("generator_width", 24);
    m.discriminator_width = j.value("discriminator_width", 8);
    return m;
}

}  // namespace

void GanHandle::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "meta.json") << meta_to_json(meta_).dump(2) << "\n";
    write_parameters(dir / "generator.bin", generator_.flat_parameters());
    ProjectionDiscriminator d = discriminator_;
    write_parameters(dir / "discriminator.bin", d.flat_parameters());
}

Sequential build_generator(const GanMeta& meta) {
    const int w = meta.generator_width;
    const ImageShape s = meta.image_shape;
    const int h0 = s.height / 4, w0 = s.width / 4;
    Sequential g;
    g.add<Dense>(meta.latent_dim + meta.num_classes, 2 * w * h0 * w0);
    g.add<Activation>(ActivationKind::relu);
    g.add<Reshape>(2 * w, h0, w0);
    g.add<Upsample2>();
    g.add<Conv2d>(2 * w, w, 3, 1, 1);
    g.add<Activation>(ActivationKind::relu);
    g.add<Upsample2>();
    g.add<Conv2d>(w, w / 2, 3, 1, 1);
    g.add<Activation>(ActivationKind::relu);
    g.add<Conv2d>(w / 2, s.channels, 3, 1, 1);
    g.add<Activation>(ActivationKind::tanh);
    return g;
}

GanHandle build_reference_gan(const GanMeta& meta, std::uint64_t seed) {
    Sequential g = build_generator(meta);
    g.init(seed);
    ProjectionDiscriminator d(meta.image_shape, meta.num_classes, meta.discriminator_width);
    d.init(seed + 17);
    return GanHandle(meta, std::move(g), std::move(d));
}

std::vector<std::string> registered_gan_kinds() { return {"reference"}; }

GanHandle load_backend(const std::filesystem::path& dir, const std::string& kind) {
    const auto kinds = registered_gan_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        std::string names;
        for (const auto& k : kinds) names += (names.empty() ? "" : ", ") + k;
        throw std::invalid_argument("unknown GAN backend kind '" + kind + "'; registered: " + names);
    }
    std::ifstream is(dir / "meta.json");
    if (!is) throw std::runtime_error("missing GAN checkpoint " + (dir / "meta.json").string());
    const GanMeta meta = meta_from_json(nlohmann::json::parse(is));
    if (meta.kind != kind) {
        throw std::invalid_argument("GAN checkpoint kind '" + meta.kind + "' does not match '" + kind + "'");
    }
    if (meta.real_score_sign != 1 && meta.real_score_sign != -1) {
        throw std::invalid_argument("GAN checkpoint: unknown discriminator sign convention");
    }
    GanHandle h = build_reference_gan(meta, 0);
    h.generator().load_flat_parameters(read_parameters(dir / "generator.bin"));
    h.discriminator().load_flat_parameters(read_parameters(dir / "discriminator.bin"));

    const LatentBatch probe = sample_latents(2, meta.latent_dim, meta.num_classes, 1);
    const Tensor img = h.generate(probe.z, probe.class_labels);
    const ImageShape s = meta.image_shape;
    if (img.n() != 2) throw std::runtime_error("GAN probe: batch dimension mismatch");
    if (img.c() != s.channels) throw std::runtime_error("GAN probe: channel dimension mismatch");
    if (img.h() != s.height) throw std::runtime_error("GAN probe: height dimension mismatch");
    if (img.w() != s.width) throw std::runtime_error("GAN probe: width dimension mismatch");
    for (double v : img.values()) {
        if (!(v >= meta.output_low && v <= meta.output_high)) {
            throw std::runtime_error("GAN probe: output outside declared output_range");
        }
    }
    return h;
}

Tensor to_unit_range(const Tensor& images, const GanMeta& meta) {
    Tensor out = images;
    const double span = meta.output_high - meta.output_low;
    for (auto& v : out.values()) v = (v - meta.output_low) / span;
    return out;
}

GanHandle train_reference_gan(const Dataset& data, const GanTrainConfig& config,
                              std::uint64_t seed, GanTrainStats* stats) {
    if (!data.labeled() || data.size() == 0) {
        throw std::invalid_argument("train_reference_gan: need class-labeled images");
    }
    GanMeta meta;
    meta.latent_dim = config.latent_dim;
    meta.num_classes = data.num_classes;
    meta.image_shape = {data.images.c(), data.images.h(), data.images.w()};
    meta.generator_width = config.generator_width;
    meta.discriminator_width = config.discriminator_width;
    GanHandle gan = build_reference_gan(meta, seed);

    // Real images in the generator's [-1, 1] range. Last batch is held out.
    const int holdout = std::min(config.batch_size, data.size() / 5);
    const int train_n = data.size() - holdout;
    Tensor real = data.images;
    for (auto& v : real.values()) v = 2.0 * v - 1.0;

    Adam opt_g(config.lr_generator, config.beta1, config.beta2);
    Adam opt_d(config.lr_discriminator, config.beta1, config.beta2);
    auto g_params = gan.generator().params();
    auto d_params = gan.discriminator().params();
    std::mt19937_64 rng(seed ^ 0x6a4eu);
    std::uniform_int_distribution<int> pick(0, train_n - 1);
    const int bs = config.batch_size;

    for (int step = 0; step < config.steps; ++step) {
        // Discriminator: hinge on real (target >= +1) and fake (target <= -1).
        std::vector<int> rows(static_cast<std::size_t>(bs));
        for (auto& r : rows) r = pick(rng);
        const Tensor xr = real.gather(rows);
        std::vector<int> yr;
        for (int r : rows) yr.push_back(data.labels[static_cast<std::size_t>(r)]);
        const LatentBatch zf = sample_latents(bs, meta.latent_dim, meta.num_classes, rng());
        const Tensor xf = gan.generate(zf.z, zf.class_labels);

        gan.discriminator().zero_grad();
        double d_loss = 0.0;
        {
            const Tensor s = gan.discriminator().forward(xr, yr);
            Tensor ds = Tensor::zeros_like(s);
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (1.0 - s[i] > 0) {
                    d_loss += (1.0 - s[i]) / bs;
                    ds[i] = -1.0 / bs;
                }
            }
            gan.discriminator().backward(ds, true);
        }
        {
            const Tensor s = gan.discriminator().forward(xf, zf.class_labels);
            Tensor ds = Tensor::zeros_like(s);
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (1.0 + s[i] > 0) {
                    d_loss += (1.0 + s[i]) / bs;
                    ds[i] = 1.0 / bs;
                }
            }
            gan.discriminator().backward(ds, true);
        }
        opt_d.step(d_params);

        // Generator: maximize D on fakes.
        const LatentBatch zg = sample_latents(bs, meta.latent_dim, meta.num_classes, rng());
        gan.generator().zero_grad();
        const Tensor xg = gan.generate_with_grad(zg.z, zg.class_labels);
        const Tensor s = gan.discriminator().forward(xg, zg.class_labels);
        double g_loss = 0.0;
        Tensor ds(s.n(), 1, 1, 1, -1.0 / bs);
        for (std::size_t i = 0; i < s.size(); ++i) g_loss -= s[i] / bs;
        const Tensor dx = gan.discriminator().backward(ds, false);
        gan.generator().backward(dx, true);
        opt_g.step(g_params);

        if (stats) {
            stats->d_loss.push_back(d_loss);
            stats->g_loss.push_back(g_loss);
        }
    }

    if (stats) {
        std::vector<int> rows(static_cast<std::size_t>(holdout));
        std::iota(rows.begin(), rows.end(), train_n);
        std::vector<int> yr;
        for (int r : rows) yr.push_back(data.labels[static_cast<std::size_t>(r)]);
        const Tensor sr = gan.discriminate(real.gather(rows), yr);
        const LatentBatch zf = sample_latents(holdout, meta.latent_dim, meta.num_classes, seed + 99);
        const Tensor sf = gan.discriminate(gan.generate(zf.z, zf.class_labels), zf.class_labels);
        stats->mean_real_score = std::accumulate(sr.values().begin(), sr.values().end(), 0.0) / holdout;
        stats->mean_fake_score = std::accumulate(sf.values().begin(), sf.values().end(), 0.0) / holdout;
    }
    return gan;
}

}  // namespace nf
