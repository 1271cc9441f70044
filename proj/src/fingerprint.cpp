#include "naturalfinger/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "naturalfinger/adversarial.hpp"
#include "naturalfinger/data.hpp"
#include "naturalfinger/util.hpp"

namespace nf {

// ---- config -------------------------------------------------------------------

void FingerprintConfig::validate() const {
    auto fail = [](const std::string& what) {
        throw std::invalid_argument("FingerprintConfig: " + what);
    };
    if (!(lr > 0)) fail("lr must be > 0");
    if (iterations < 0) fail("iterations must be >= 0");
    if (!(lambda >= 0)) fail("lambda must be >= 0");
    if (!(cw_margin >= 0)) fail("cw_margin must be >= 0");
    if (!(fgsm_epsilon > 0)) fail("fgsm_epsilon must be > 0");
    if (query_size <= 0) fail("query_size must be > 0");
    if (model_batch_size <= 0) fail("model_batch_size must be > 0");
    if (screen_transform_draws < 1) fail("screen_transform_draws must be >= 1");
    if (n_candidates <= 0) fail("n_candidates must be > 0");
    if (optimize_batch <= 0) fail("optimize_batch must be > 0");
    if (!(flip_probability >= 0 && flip_probability <= 1)) fail("flip_probability must be in [0,1]");
}

nlohmann::json FingerprintConfig::to_json() const {
    return {
        {"lr", lr},
        {"iterations", iterations},
        {"lambda", lambda},
        {"cw_margin", cw_margin},
        {"fgsm_epsilon", fgsm_epsilon},
        {"query_size", query_size},
        {"model_batch_size", model_batch_size},
        {"trick_adversarial_label", trick_adversarial_label},
        {"trick_input_transform", trick_input_transform},
        {"trick_discriminator_loss", trick_discriminator_loss},
        {"screen_transform_draws", screen_transform_draws},
        {"discriminator_mode",
         discriminator_mode == DiscriminatorLossMode::naturalness ? "naturalness" : "paper_literal"},
        {"n_candidates", n_candidates},
        {"optimize_batch", optimize_batch},
        {"flip_probability", flip_probability},
        {"crop_padding", crop_padding},
        {"seed", seed},
    };
}

FingerprintConfig FingerprintConfig::from_json(const nlohmann::json& j) {
    FingerprintConfig c;
    c.lr = j.value("lr", c.lr);
    c.iterations = j.value("iterations", c.iterations);
    c.lambda = j.value("lambda", c.lambda);
    c.cw_margin = j.value("cw_margin", c.cw_margin);
    c.fgsm_epsilon = j.value("fgsm_epsilon", c.fgsm_epsilon);
    c.query_size = j.value("query_size", c.query_size);
    c.model_batch_size = j.value("model_batch_size", c.model_batch_size);
    c.trick_adversarial_label = j.value("trick_adversarial_label", c.trick_adversarial_label);
    c.trick_input_transform = j.value("trick_input_transform", c.trick_input_transform);
    c.trick_discriminator_loss = j.value("trick_discriminator_loss", c.trick_discriminator_loss);
    c.screen_transform_draws = j.value("screen_transform_draws", c.screen_transform_draws);
    if (j.contains("discriminator_mode")) {
        const auto mode = j.at("discriminator_mode").get<std::string>();
        if (mode == "naturalness") {
            c.discriminator_mode = DiscriminatorLossMode::naturalness;
        } else if (mode == "paper_literal") {
            c.discriminator_mode = DiscriminatorLossMode::paper_literal;
        } else {
            throw std::invalid_argument("FingerprintConfig: unknown discriminator_mode '" + mode + "'");
        }
    }
    c.n_candidates = j.value("n_candidates", c.n_candidates);
    c.optimize_batch = j.value("optimize_batch", c.optimize_batch);
    c.flip_probability = j.value("flip_probability", c.flip_probability);
    c.crop_padding = j.value("crop_padding", c.crop_padding);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::string FingerprintConfig::hash() const { return json_hash(to_json()); }

// ---- QuerySet -------------------------------------------------------------------

Tensor QuerySet::images() const {
    Tensor t(size(), shape.channels, shape.height, shape.width);
    for (int i = 0; i < size(); ++i) {
        const auto& px = samples[static_cast<std::size_t>(i)].pixels;
        auto dst = t.sample(i);
        for (std::size_t k = 0; k < px.size(); ++k) dst[k] = px[k] / 255.0;
    }
    return t;
}

std::vector<int> QuerySet::positive_labels() const {
    std::vector<int> y;
    for (const auto& s : samples) y.push_back(s.y_positive);
    return y;
}

std::vector<int> QuerySet::adversarial_labels() const {
    std::vector<int> y;
    for (const auto& s : samples) y.push_back(s.y_adversarial);
    return y;
}

// ---- losses ---------------------------------------------------------------------

double cw_loss(std::span<const double> logits, int target, double margin) {
    const int k = static_cast<int>(logits.size());
    if (k < 2) throw std::invalid_argument("cw_loss: need at least two classes");
    if (target < 0 || target >= k) throw std::out_of_range("cw_loss: target out of range");
    double other = -INFINITY;
    for (int i = 0; i < k; ++i) {
        if (i != target) other = std::max(other, logits[static_cast<std::size_t>(i)]);
    }
    return std::max(other - logits[static_cast<std::size_t>(target)], -margin);
}

double cw_loss_batch(const Tensor& logits, std::span<const int> targets, double margin,
                     Tensor* grad) {
    const int batch = logits.n(), k = logits.sample_size();
    if (targets.size() != static_cast<std::size_t>(batch)) {
        throw std::invalid_argument("cw_loss_batch: target count mismatch");
    }
    if (grad) *grad = Tensor::zeros_like(logits);
    if (batch == 0) return 0.0;
    double total = 0.0;
    for (int n = 0; n < batch; ++n) {
        const auto row = logits.sample(n);
        const int t = targets[static_cast<std::size_t>(n)];
        const double value = cw_loss(row, t, margin);
        total += value;
        if (grad && value > -margin) {
            int best = t == 0 ? 1 : 0;
            for (int i = 0; i < k; ++i) {
                if (i != t && row[static_cast<std::size_t>(i)] > row[static_cast<std::size_t>(best)]) best = i;
            }
            auto g = grad->sample(n);
            g[static_cast<std::size_t>(best)] += 1.0 / batch;
            g[static_cast<std::size_t>(t)] -= 1.0 / batch;
        }
    }
    return total / batch;
}

double hinge_loss(double score, double target) { return std::max(0.0, 1.0 - target * score); }

double discriminator_loss(const Tensor& scores, int real_score_sign, DiscriminatorLossMode mode,
                          Tensor* grad) {
    if (real_score_sign != 1 && real_score_sign != -1) {
        throw std::invalid_argument("discriminator_loss: unknown score sign convention " +
                                    std::to_string(real_score_sign));
    }
    const double target = mode == DiscriminatorLossMode::naturalness ? real_score_sign : -1.0;
    const int batch = scores.n();
    if (grad) *grad = Tensor::zeros_like(scores);
    if (batch == 0) return 0.0;
    double total = 0.0;
    for (int n = 0; n < batch; ++n) {
        const double s = scores[static_cast<std::size_t>(n)];
        total += hinge_loss(s, target);
        if (grad && 1.0 - target * s > 0.0) (*grad)[static_cast<std::size_t>(n)] = -target / batch;
    }
    return total / batch;
}

double composite_loss(double l_pos, double l_neg, double l_d, double lambda) {
    return lambda == 0.0 ? l_pos + l_neg : l_pos + l_neg + lambda * l_d;
}

LossTerms total_loss(const Tensor& transformed, const Tensor& fake,
                     std::span<const int> y_original, std::span<const int> y_adversarial,
                     std::span<Classifier* const> batch_positives,
                     std::span<Classifier* const> batch_negatives, GanHandle* gan,
                     std::span<const int> condition_classes, const FingerprintConfig& config,
                     LossGradients* grads) {
    if (batch_positives.empty() && batch_negatives.empty()) {
        throw std::invalid_argument("total_loss: empty model batch");
    }
    LossTerms terms;
    if (grads) grads->d_transformed = Tensor::zeros_like(transformed);

    auto accumulate = [&](std::span<Classifier* const> models, std::span<const int> targets) {
        double sum = 0.0;
        const double scale = 1.0 / static_cast<double>(models.size());
        for (Classifier* m : models) {
            Tensor g;
            sum += cw_loss_batch(m->net.forward(transformed), targets, config.cw_margin,
                                 grads ? &g : nullptr);
            if (grads) {
                g *= scale;
                grads->d_transformed += m->net.backward(g, false);
            }
        }
        return sum * scale;
    };
    if (!batch_positives.empty()) terms.positive = accumulate(batch_positives, y_original);
    if (!batch_negatives.empty()) terms.negative = accumulate(batch_negatives, y_adversarial);

    const double lambda = config.effective_lambda();
    if (lambda != 0.0) {
        if (gan == nullptr) throw std::invalid_argument("total_loss: discriminator term needs a GAN");
        const Tensor scores = gan->discriminate_with_grad(fake, condition_classes);
        Tensor g;
        terms.discriminator = discriminator_loss(scores, gan->meta().real_score_sign,
                                                 config.discriminator_mode, grads ? &g : nullptr);
        terms.total = composite_loss(terms.positive, terms.negative, terms.discriminator, lambda);
        if (grads) {
            g *= lambda;
            grads->d_fake = gan->backward_image(g);
        }
    } else {
        terms.total = composite_loss(terms.positive, terms.negative, 0.0, 0.0);
        if (grads) grads->d_fake = Tensor::zeros_like(fake);
    }
    return terms;
}

// ---- input transformation -----------------------------------------------------------

namespace {

int reflect(int k, int n) {
    if (k < 0) k = -k;
    if (k >= n) k = 2 * n - 2 - k;
    return k;
}

// Source pixel (row, col) in x for output pixel (i, j) of sample n.
std::pair<int, int> transform_source(const TransformDraw& d, int n, int i, int j, int h, int w) {
    const int jj = d.flip[static_cast<std::size_t>(n)] ? w - 1 - j : j;
    return {reflect(i + d.offset_y[static_cast<std::size_t>(n)] - d.pad, h),
            reflect(jj + d.offset_x[static_cast<std::size_t>(n)] - d.pad, w)};
}

}  // namespace

int resolved_crop_padding(const FingerprintConfig& config, int height) {
    return config.crop_padding >= 0 ? config.crop_padding : std::max(1, height / 8);
}

TransformDraw draw_transform(int batch, int pad, double flip_probability, std::mt19937_64& rng) {
    TransformDraw d;
    d.pad = pad;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> off(0, 2 * pad);
    for (int n = 0; n < batch; ++n) {
        d.flip.push_back(u(rng) < flip_probability ? 1 : 0);
        d.offset_y.push_back(off(rng));
        d.offset_x.push_back(off(rng));
    }
    return d;
}

Tensor apply_transform(const Tensor& x, const TransformDraw& draw) {
    if (static_cast<int>(draw.flip.size()) != x.n()) {
        throw std::invalid_argument("apply_transform: draw/batch size mismatch");
    }
    if (draw.pad >= x.h() || draw.pad >= x.w()) throw std::invalid_argument("apply_transform: pad too large");
    Tensor y = Tensor::zeros_like(x);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) {
                    const auto [si, sj] = transform_source(draw, n, i, j, x.h(), x.w());
                    y.at(n, c, i, j) = x.at(n, c, si, sj);
                }
    return y;
}

Tensor transform_backward(const Tensor& grad, const TransformDraw& draw) {
    Tensor dx = Tensor::zeros_like(grad);
    for (int n = 0; n < grad.n(); ++n)
        for (int c = 0; c < grad.c(); ++c)
            for (int i = 0; i < grad.h(); ++i)
                for (int j = 0; j < grad.w(); ++j) {
                    const auto [si, sj] = transform_source(draw, n, i, j, grad.h(), grad.w());
                    dx.at(n, c, si, sj) += grad.at(n, c, i, j);
                }
    return dx;
}

Tensor transform(const Tensor& x, std::mt19937_64& rng, const FingerprintConfig& config) {
    if (!config.trick_input_transform) return x;
    return apply_transform(x, draw_transform(x.n(), resolved_crop_padding(config, x.h()),
                                             config.flip_probability, rng));
}

// ---- pipeline ---------------------------------------------------------------------

std::vector<int> majority_vote(const std::vector<std::vector<int>>& predictions, int num_classes) {
    if (predictions.empty()) return {};
    const std::size_t n = predictions[0].size();
    std::vector<int> out(n);
    std::vector<int> counts(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(counts.begin(), counts.end(), 0);
        for (const auto& p : predictions) ++counts.at(static_cast<std::size_t>(p.at(i)));
        // max_element returns the first maximum, i.e. the lowest class index.
        out[i] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    return out;
}

namespace {

std::vector<std::vector<int>> predictions_of(std::span<Classifier* const> models, const Tensor& x) {
    std::vector<std::vector<int>> out;
    for (Classifier* m : models) out.push_back(m->predict(x));
    return out;
}

int classes_of(std::span<Classifier* const> a, std::span<Classifier* const> b) {
    if (!a.empty()) return a[0]->num_classes;
    if (!b.empty()) return b[0]->num_classes;
    throw std::invalid_argument("no models given");
}

}  // namespace

LatentBatch select_initial_latents(const GanHandle& gan, std::span<Classifier* const> positives,
                                   int n_candidates, int keep, std::uint64_t seed) {
    if (positives.empty()) throw std::invalid_argument("select_initial_latents: no positive models");
    if (n_candidates < keep) {
        throw std::invalid_argument("select_initial_latents: n_candidates must be >= the requested batch");
    }
    const LatentBatch pool = sample_latents(n_candidates, gan.latent_dim(), gan.num_classes(), seed);
    std::vector<int> survivors;
    constexpr int kChunk = 256;
    for (int b = 0; b < n_candidates && static_cast<int>(survivors.size()) < keep; b += kChunk) {
        const int e = std::min(n_candidates, b + kChunk);
        const std::vector<int> cls(pool.class_labels.begin() + b, pool.class_labels.begin() + e);
        const Tensor img = to_unit_range(gan.generate(pool.z.slice(b, e), cls), gan.meta());
        std::vector<unsigned char> ok(static_cast<std::size_t>(e - b), 1);
        for (Classifier* m : positives) {
            const auto pred = m->predict(img);
            for (std::size_t i = 0; i < pred.size(); ++i) ok[i] &= pred[i] == cls[i];
        }
        for (int i = 0; i < e - b && static_cast<int>(survivors.size()) < keep; ++i) {
            if (ok[static_cast<std::size_t>(i)]) survivors.push_back(b + i);
        }
    }
    if (survivors.empty()) {
        throw std::runtime_error("select_initial_latents: no candidate out of " +
                                 std::to_string(n_candidates) +
                                 " was recognised by every positive model; use a larger "
                                 "candidate pool or a better-trained GAN");
    }
    return pool.subset(survivors);
}

LabelAssignment assign_labels(const Tensor& images, std::span<Classifier* const> positives,
                              std::span<Classifier* const> negatives, double epsilon,
                              bool adversarial_label, std::uint64_t seed) {
    LabelAssignment out;
    if (images.n() == 0) return out;
    if (positives.empty() || negatives.empty()) {
        throw std::invalid_argument("assign_labels: need positive and negative models");
    }
    const int classes = classes_of(positives, negatives);
    const auto y_original = majority_vote(predictions_of(positives, images), classes);
    std::vector<int> y_adv;
    if (adversarial_label) {
        const auto y_neg = majority_vote(predictions_of(negatives, images), classes);
        const Tensor attacked = fgsm(negatives, images, y_neg, epsilon);
        y_adv = majority_vote(predictions_of(negatives, attacked), classes);
    } else {
        std::mt19937_64 rng(seed ^ 0xad7u);
        std::uniform_int_distribution<int> other(0, classes - 2);
        for (int y : y_original) {
            const int r = other(rng);
            y_adv.push_back(r >= y ? r + 1 : r);
        }
    }
    for (int i = 0; i < images.n(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (y_adv[k] == y_original[k]) continue;
        out.kept_rows.push_back(i);
        out.y_original.push_back(y_original[k]);
        out.y_adversarial.push_back(y_adv[k]);
    }
    return out;
}

NonFiniteLoss::NonFiniteLoss(int iteration, std::vector<double> trace)
    : std::runtime_error("non-finite fingerprint loss at iteration " + std::to_string(iteration) +
                         (trace.empty() ? std::string(" (no finite value recorded)")
                                        : " (last finite loss " + std::to_string(trace.back()) + ")")),
      iteration_(iteration),
      trace_(std::move(trace)) {}

namespace {

struct ModelBatch {
    std::vector<Classifier*> positives, negatives;
};

// Interleaves positives and negatives, then chunks, so every batch sees both
// sides whenever the set allows it.
std::vector<ModelBatch> make_model_batches(const TrainedModelSet& models, int batch_size) {
    std::vector<std::pair<Classifier*, bool>> order;
    const std::size_t n = std::max(models.positives.size(), models.negatives.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (i < models.positives.size()) order.emplace_back(models.positives[i], true);
        if (i < models.negatives.size()) order.emplace_back(models.negatives[i], false);
    }
    std::vector<ModelBatch> batches;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch_size)) {
        ModelBatch mb;
        for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(batch_size)); ++i) {
            (order[i].second ? mb.positives : mb.negatives).push_back(order[i].first);
        }
        batches.push_back(std::move(mb));
    }
    return batches;
}

}  // namespace

LatentBatch optimize_latents(const LatentBatch& initial, std::span<const int> y_original,
                             std::span<const int> y_adversarial, const TrainedModelSet& models,
                             GanHandle& gan, const FingerprintConfig& config,
                             std::vector<double>* loss_trace) {
    config.validate();
    const int batch = initial.size();
    if (y_original.size() != static_cast<std::size_t>(batch) ||
        y_adversarial.size() != static_cast<std::size_t>(batch)) {
        throw std::invalid_argument("optimize_latents: label count mismatch");
    }
    if (models.positives.empty() && models.negatives.empty()) {
        throw std::invalid_argument("optimize_latents: empty model set");
    }
    LatentBatch current = initial;
    if (config.iterations == 0 || batch == 0) return current;

    const auto batches = make_model_batches(models, config.model_batch_size);
    const int pad = resolved_crop_padding(config, gan.meta().image_shape.height);
    const double range_scale = 1.0 / (gan.meta().output_high - gan.meta().output_low);
    std::mt19937_64 rng(config.seed ^ 0x0b7e11u);
    std::vector<double> trace;

    auto evaluate = [&](const ModelBatch& mb, bool step) {
        const Tensor fake = gan.generate_with_grad(current.z, current.class_labels);
        const Tensor unit = to_unit_range(fake, gan.meta());
        TransformDraw draw;
        Tensor transformed = unit;
        if (config.trick_input_transform) {
            draw = draw_transform(batch, pad, config.flip_probability, rng);
            transformed = apply_transform(unit, draw);
        }
        LossGradients grads;
        const LossTerms terms = total_loss(transformed, fake, y_original, y_adversarial, mb.positives,
                                           mb.negatives, &gan, current.class_labels, config,
                                           step ? &grads : nullptr);
        if (!step) return terms.total;
        if (!std::isfinite(terms.total)) return terms.total;
        Tensor d_unit = config.trick_input_transform ? transform_backward(grads.d_transformed, draw)
                                                     : grads.d_transformed;
        d_unit *= range_scale;
        d_unit += grads.d_fake;
        const Tensor dz = gan.backward_latent(d_unit);
        // The loss is a batch mean; scaling by the batch size gives each latent
        // a step of lr times the gradient of its own loss.
        const double step_size = config.lr * batch;
        for (std::size_t i = 0; i < current.z.size(); ++i) current.z[i] -= step_size * dz[i];
        return terms.total;
    };

    for (int it = 0; it < config.iterations; ++it) {
        double mean = 0.0;
        for (const auto& mb : batches) {
            const double v = evaluate(mb, true);
            if (!std::isfinite(v)) throw NonFiniteLoss(it, trace);
            mean += v / static_cast<double>(batches.size());
        }
        trace.push_back(mean);
    }
    double final_mean = 0.0;
    for (const auto& mb : batches) final_mean += evaluate(mb, false) / static_cast<double>(batches.size());
    if (!std::isfinite(final_mean)) throw NonFiniteLoss(config.iterations, trace);
    trace.push_back(final_mean);
    if (loss_trace) *loss_trace = std::move(trace);
    return current;
}

std::vector<std::vector<std::uint8_t>> quantize_images(const Tensor& gan_output, const GanMeta& meta) {
    const Tensor unit = to_unit_range(gan_output, meta);
    std::vector<std::vector<std::uint8_t>> out(static_cast<std::size_t>(unit.n()));
    for (int n = 0; n < unit.n(); ++n) {
        const auto src = unit.sample(n);
        auto& px = out[static_cast<std::size_t>(n)];
        px.reserve(src.size());
        for (double v : src) px.push_back(quantize_pixel(v));
    }
    return out;
}

QuerySet screen(const LatentBatch& latents, std::span<const int> y_original,
                std::span<const int> y_adversarial, const TrainedModelSet& models,
                const GanHandle& gan, const FingerprintConfig& config) {
    const int batch = latents.size();
    const auto pixels = quantize_images(gan.generate(latents.z, latents.class_labels), gan.meta());
    const ImageShape shape = gan.meta().image_shape;

    QuerySet q;
    q.shape = shape;
    q.config_hash = config.hash();
    Tensor stored(batch, shape.channels, shape.height, shape.width);
    for (int n = 0; n < batch; ++n) {
        auto dst = stored.sample(n);
        const auto& px = pixels[static_cast<std::size_t>(n)];
        for (std::size_t k = 0; k < px.size(); ++k) dst[k] = px[k] / 255.0;
    }

    std::vector<Tensor> views{stored};
    if (config.trick_input_transform) {
        std::mt19937_64 rng(config.seed ^ 0x5c4ee7u);
        for (int k = 0; k < config.screen_transform_draws; ++k) views.push_back(transform(stored, rng, config));
    }

    std::vector<unsigned char> ok(static_cast<std::size_t>(batch), 1);
    std::map<std::string, int> failures;
    auto check = [&](std::span<Classifier* const> set, const std::vector<std::string>& ids,
                     std::span<const int> expected, const char* side) {
        for (std::size_t m = 0; m < set.size(); ++m) {
            std::vector<unsigned char> failed(static_cast<std::size_t>(batch), 0);
            for (const Tensor& v : views) {
                const auto pred = set[m]->predict(v);
                for (int i = 0; i < batch; ++i) {
                    if (pred[static_cast<std::size_t>(i)] != expected[static_cast<std::size_t>(i)]) {
                        failed[static_cast<std::size_t>(i)] = 1;
                    }
                }
            }
            const std::string id = m < ids.size() ? ids[m] : std::string(side) + "#" + std::to_string(m);
            for (int i = 0; i < batch; ++i) {
                if (failed[static_cast<std::size_t>(i)]) {
                    ok[static_cast<std::size_t>(i)] = 0;
                    ++failures[id];
                }
            }
        }
    };
    check(models.positives, models.positive_ids, y_original, "positive");
    check(models.negatives, models.negative_ids, y_adversarial, "negative");

    for (int i = 0; i < batch && q.size() < config.query_size; ++i) {
        if (!ok[static_cast<std::size_t>(i)]) continue;
        QuerySample s;
        s.pixels = pixels[static_cast<std::size_t>(i)];
        s.y_positive = y_original[static_cast<std::size_t>(i)];
        s.y_adversarial = y_adversarial[static_cast<std::size_t>(i)];
        s.condition_class = latents.class_labels[static_cast<std::size_t>(i)];
        const auto z = latents.z.sample(i);
        s.latent.assign(z.begin(), z.end());
        q.samples.push_back(std::move(s));
    }
    q.stats.optimized = batch;
    q.stats.screened = q.size();
    if (q.samples.empty()) {
        std::ostringstream msg;
        msg << "screen: no sample survived; failures per model:";
        for (const auto& [id, count] : failures) msg << " " << id << "=" << count;
        throw ScreeningError(msg.str());
    }
    return q;
}

QuerySet generate_fingerprint(const TrainedModelSet& models, GanHandle& gan,
                              const FingerprintConfig& config) {
    config.validate();
    if (models.positives.empty() || models.negatives.empty()) {
        throw std::invalid_argument("generate_fingerprint: need at least one positive and one negative model");
    }
    const LatentBatch pool =
        select_initial_latents(gan, models.positives, config.n_candidates, config.n_candidates, config.seed);
    const Tensor images = to_unit_range(gan.generate(pool.z, pool.class_labels), gan.meta());
    const LabelAssignment labels = assign_labels(images, models.positives, models.negatives,
                                                 config.fgsm_epsilon, config.trick_adversarial_label,
                                                 config.seed);
    const int take = std::min<int>(config.optimize_batch, static_cast<int>(labels.kept_rows.size()));
    if (take == 0) {
        throw std::runtime_error("generate_fingerprint: every candidate received identical positive and "
                                 "adversarial labels");
    }
    const std::vector<int> rows(labels.kept_rows.begin(), labels.kept_rows.begin() + take);
    const LatentBatch start = pool.subset(rows);
    const std::vector<int> y_orig(labels.y_original.begin(), labels.y_original.begin() + take);
    const std::vector<int> y_adv(labels.y_adversarial.begin(), labels.y_adversarial.begin() + take);

    std::vector<double> trace;
    const LatentBatch optimized = optimize_latents(start, y_orig, y_adv, models, gan, config, &trace);
    QuerySet q = screen(optimized, y_orig, y_adv, models, gan, config);

    q.stats.candidates = config.n_candidates;
    q.stats.initial_survivors = pool.size();
    q.stats.labeled = static_cast<int>(labels.kept_rows.size());
    q.stats.optimized = take;
    q.provenance = {
        {"config", config.to_json()},
        {"config_hash", q.config_hash},
        {"positive_model_ids", models.positive_ids},
        {"negative_model_ids", models.negative_ids},
        {"loss_trace", trace},
        {"gan", {{"kind", gan.meta().kind},
                 {"latent_dim", gan.latent_dim()},
                 {"num_classes", gan.num_classes()},
                 {"real_score_sign", gan.meta().real_score_sign}}},
        {"stats", {{"candidates", q.stats.candidates},
                   {"initial_survivors", q.stats.initial_survivors},
                   {"labeled", q.stats.labeled},
                   {"optimized", q.stats.optimized},
                   {"screened", q.stats.screened}}},
    };
    return q;
}

// ---- archive ----------------------------------------------------------------------

void save_query_set(const QuerySet& q, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "samples");
    std::string content;
    nlohmann::json labels = nlohmann::json::array();
    for (int i = 0; i < q.size(); ++i) {
        const auto& s = q.samples[static_cast<std::size_t>(i)];
        // PNG wants interleaved channels; stored pixels are planar.
        const ImageShape sh = q.shape;
        std::vector<std::uint8_t> interleaved(s.pixels.size());
        for (int c = 0; c < sh.channels; ++c)
            for (int p = 0; p < sh.height * sh.width; ++p) {
                interleaved[static_cast<std::size_t>(p * sh.channels + c)] =
                    s.pixels[static_cast<std::size_t>(c * sh.height * sh.width + p)];
            }
        const auto path = dir / "samples" / (std::to_string(i) + ".png");
        write_png(path, interleaved, sh.width, sh.height, sh.channels);
        content += read_file(path);
        labels.push_back({{"idx", i},
                          {"y_positive", s.y_positive},
                          {"y_adversarial", s.y_adversarial},
                          {"condition_class", s.condition_class},
                          {"latent", s.latent}});
    }
    const std::string labels_text = pretty(labels);
    atomic_write(dir / "labels.json", labels_text);
    content += labels_text;
    nlohmann::json prov = q.provenance;
    prov["config_hash"] = q.config_hash;
    prov["image_shape"] = {q.shape.height, q.shape.width, q.shape.channels};
    prov["content_hash"] = sha256_hex(content);
    prov["sample_count"] = q.size();
    atomic_write(dir / "provenance.json", pretty(prov));
}

QuerySet load_query_set(const std::filesystem::path& dir) {
    QuerySet q;
    q.provenance = read_json(dir / "provenance.json");
    q.config_hash = q.provenance.value("config_hash", std::string());
    const auto labels = read_json(dir / "labels.json");
    for (const auto& entry : labels) {
        const int idx = entry.at("idx").get<int>();
        int w = 0, h = 0, c = 0;
        const auto interleaved = read_png(dir / "samples" / (std::to_string(idx) + ".png"), w, h, c);
        if (q.samples.empty()) q.shape = {c, h, w};
        if (!(q.shape == ImageShape{c, h, w})) throw std::runtime_error("query set: mixed image shapes");
        QuerySample s;
        s.pixels.resize(interleaved.size());
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < h * w; ++p) {
                s.pixels[static_cast<std::size_t>(ch * h * w + p)] =
                    interleaved[static_cast<std::size_t>(p * c + ch)];
            }
        s.y_positive = entry.at("y_positive").get<int>();
        s.y_adversarial = entry.at("y_adversarial").get<int>();
        s.condition_class = entry.at("condition_class").get<int>();
        if (entry.contains("latent")) s.latent = entry.at("latent").get<std::vector<double>>();
        q.samples.push_back(std::move(s));
    }
    if (q.provenance.contains("stats")) {
        const auto& st = q.provenance.at("stats");
        q.stats.candidates = st.value("candidates", 0);
        q.stats.initial_survivors = st.value("initial_survivors", 0);
        q.stats.labeled = st.value("labeled", 0);
        q.stats.optimized = st.value("optimized", 0);
        q.stats.screened = st.value("screened", 0);
    }
    return q;
}

}  // namespace nf
