#include "naturalfinger/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace nf {
namespace {

using Builder = std::function<void(Sequential&, ImageShape, int)>;

void relu(Sequential& s) { s.add<Activation>(ActivationKind::relu); }

Sequential residual_body(int width) {
    Sequential body;
    body.add<Conv2d>(width, width, 3, 1, 1);
    relu(body);
    body.add<Conv2d>(width, width, 3, 1, 1);
    return body;
}

// stem conv -> pool -> `blocks` residual blocks -> widen conv -> pool -> head
Builder resnet(int width, int blocks) {
    return [=](Sequential& s, ImageShape in, int classes) {
        s.add<Conv2d>(in.channels, width, 3, 1, 1);
        relu(s);
        s.add<MaxPool2>();
        for (int b = 0; b < blocks; ++b) {
            s.add<Residual>(residual_body(width));
            relu(s);
        }
        s.add<Conv2d>(width, 2 * width, 3, 1, 1);
        relu(s);
        s.add<MaxPool2>();
        const int f = (in.height / 4) * (in.width / 4);
        s.add<Reshape>(2 * width * f, 1, 1);
        s.add<Dense>(2 * width * f, classes);
    };
}

// Two conv stages; the first stage stacks `first_convs` 3x3 convs.
Builder vgg(int w1, int w2, int first_convs, int hidden) {
    return [=](Sequential& s, ImageShape in, int classes) {
        int c = in.channels;
        for (int i = 0; i < first_convs; ++i) {
            s.add<Conv2d>(c, w1, 3, 1, 1);
            relu(s);
            c = w1;
        }
        s.add<MaxPool2>();
        s.add<Conv2d>(c, w2, 3, 1, 1);
        relu(s);
        s.add<MaxPool2>();
        const int f = (in.height / 4) * (in.width / 4);
        s.add<Reshape>(w2 * f, 1, 1);
        s.add<Dense>(w2 * f, hidden);
        relu(s);
        s.add<Dense>(hidden, classes);
    };
}

Builder plain_cnn(int w1, int w2, int k1) {
    return [=](Sequential& s, ImageShape in, int classes) {
        s.add<Conv2d>(in.channels, w1, k1, 1, k1 / 2);
        relu(s);
        s.add<MaxPool2>();
        s.add<Conv2d>(w1, w2, 3, 1, 1);
        relu(s);
        s.add<MaxPool2>();
        const int f = (in.height / 4) * (in.width / 4);
        s.add<Reshape>(w2 * f, 1, 1);
        s.add<Dense>(w2 * f, classes);
    };
}

Builder lenet(int w1, int w2, int h1, int h2) {
    return [=](Sequential& s, ImageShape in, int classes) {
        s.add<Conv2d>(in.channels, w1, 5, 1, 2);
        relu(s);
        s.add<AvgPool2>();
        s.add<Conv2d>(w1, w2, 5, 1, 2);
        relu(s);
        s.add<AvgPool2>();
        const int f = (in.height / 4) * (in.width / 4);
        s.add<Reshape>(w2 * f, 1, 1);
        s.add<Dense>(w2 * f, h1);
        relu(s);
        s.add<Dense>(h1, h2);
        relu(s);
        s.add<Dense>(h2, classes);
    };
}

Builder mlp(std::vector<int> hidden, ActivationKind act = ActivationKind::relu) {
    return [=](Sequential& s, ImageShape in, int classes) {
        int n = in.channels * in.height * in.width;
        s.add<Reshape>(n, 1, 1);
        for (int h : hidden) {
            s.add<Dense>(n, h);
            s.add<Activation>(act);
            n = h;
        }
        s.add<Dense>(n, classes);
    };
}

// Strided convolutions instead of pooling.
Builder allconv(int w1, int w2) {
    return [=](Sequential& s, ImageShape in, int classes) {
        s.add<Conv2d>(in.channels, w1, 3, 1, 1);
        relu(s);
        s.add<Conv2d>(w1, w1, 4, 2, 1);
        relu(s);
        s.add<Conv2d>(w1, w2, 4, 2, 1);
        relu(s);
        const int f = (in.height / 4) * (in.width / 4);
        s.add<Reshape>(w2 * f, 1, 1);
        s.add<Dense>(w2 * f, classes);
    };
}

// Six convolutions and three dense layers.
Builder detector9() {
    return [](Sequential& s, ImageShape in, int classes) {
        s.add<Conv2d>(in.channels, 8, 3, 1, 1);
        relu(s);
        s.add<Conv2d>(8, 8, 3, 1, 1);
        relu(s);
        s.add<MaxPool2>();
        s.add<Conv2d>(8, 12, 3, 1, 1);
        relu(s);
        s.add<Conv2d>(12, 12, 3, 1, 1);
        relu(s);
        s.add<MaxPool2>();
        s.add<Conv2d>(12, 16, 3, 1, 1);
        relu(s);
        s.add<Conv2d>(16, 16, 3, 1, 1);
        relu(s);
        const int f = (in.height / 4) * (in.width / 4);
        s.add<Reshape>(16 * f, 1, 1);
        s.add<Dense>(16 * f, 32);
        relu(s);
        s.add<Dense>(32, 16);
        relu(s);
        s.add<Dense>(16, classes);
    };
}

// Smooth, small models for finite-difference checks.
Builder tiny_cnn() {
    return [](Sequential& s, ImageShape in, int classes) {
        s.add<Conv2d>(in.channels, 3, 3, 1, 1);
        s.add<Activation>(ActivationKind::tanh);
        s.add<AvgPool2>();
        const int f = (in.height / 2) * (in.width / 2);
        s.add<Reshape>(3 * f, 1, 1);
        s.add<Dense>(3 * f, classes);
    };
}

const std::map<std::string, Builder>& registry() {
    static const std::map<std::string, Builder> r{
        {"resnet_s", resnet(8, 1)},
        {"resnet_m", resnet(8, 2)},
        {"resnet_w", resnet(12, 1)},
        {"resnet_n", resnet(6, 1)},
        {"vgg_s", vgg(6, 12, 2, 32)},
        {"vgg_m", vgg(8, 16, 2, 48)},
        {"vgg_n", vgg(6, 12, 1, 32)},
        {"plain_cnn", plain_cnn(8, 12, 5)},
        {"plain_cnn_w", plain_cnn(12, 16, 3)},
        {"lenet", lenet(6, 12, 64, 32)},
        {"lenet_w", lenet(8, 16, 96, 48)},
        {"mlp_s", mlp({64})},
        {"mlp_m", mlp({128, 64})},
        {"allconv_s", allconv(8, 12)},
        {"allconv_w", allconv(12, 16)},
        {"detector9", detector9()},
        {"tiny_cnn", tiny_cnn()},
        {"tiny_mlp", mlp({12}, ActivationKind::tanh)},
    };
    return r;
}

std::vector<double> softmax_row(const double* z, int k, double temperature) {
    std::vector<double> p(static_cast<std::size_t>(k));
    double m = z[0] / temperature;
    for (int i = 1; i < k; ++i) m = std::max(m, z[i] / temperature);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        p[static_cast<std::size_t>(i)] = std::exp(z[i] / temperature - m);
        sum += p[static_cast<std::size_t>(i)];
    }
    for (auto& v : p) v /= sum;
    return p;
}

constexpr int kInferenceChunk = 256;

}  // namespace

// ---- Classifier ---------------------------------------------------------------

Tensor Classifier::logits(const Tensor& x) {
    if (x.n() <= kInferenceChunk) return net.forward(x);
    std::vector<Tensor> parts;
    for (int b = 0; b < x.n(); b += kInferenceChunk) {
        parts.push_back(net.forward(x.slice(b, std::min(x.n(), b + kInferenceChunk))));
    }
    return Tensor::concat(parts);
}

std::vector<int> Classifier::predict(const Tensor& x) { return argmax_rows(logits(x)); }

std::vector<Param*> Classifier::head_params() { return net.layer(head_layer).params(); }

void Classifier::reinitialize_head(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    net.layer(head_layer).reset_parameters(rng);
}

std::vector<std::string> registered_architectures() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

bool is_registered_architecture(const std::string& name) { return registry().count(name) > 0; }

Classifier build_classifier(const std::string& architecture, ImageShape input, int num_classes,
                            std::uint64_t seed) {
    const auto it = registry().find(architecture);
    if (it == registry().end()) {
        std::string names;
        for (const auto& n : registered_architectures()) names += (names.empty() ? "" : ", ") + n;
        throw std::invalid_argument("unknown architecture '" + architecture +
                                    "'; registered: " + names);
    }
    if (input.height % 4 || input.width % 4) {
        throw std::invalid_argument("build_classifier: image size must be divisible by 4");
    }
    Classifier c;
    c.architecture = architecture;
    c.num_classes = num_classes;
    c.input = input;
    it->second(c.net, input, num_classes);
    for (std::size_t i = c.net.size(); i-- > 0;) {
        if (c.net.layer(i).kind() == "dense") {
            c.head_layer = i;
            break;
        }
    }
    c.net.init(seed);
    return c;
}

// ---- checkpoints ----------------------------------------------------------------

void write_parameters(const std::filesystem::path& path, std::span<const double> values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const char magic[4] = {'N', 'F', 'W', '1'};
    os.write(magic, 4);
    const std::uint64_t count = values.size();
    os.write(reinterpret_cast<const char*>(&count), sizeof(count));
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!os) throw std::runtime_error("short write on " + path.string());
}

std::vector<double> read_parameters(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "NFW1") {
        throw std::runtime_error(path.string() + ": not a parameter file");
    }
    std::uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&count), sizeof(count));
    std::vector<double> values(count);
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error(path.string() + ": truncated parameter file");
    return values;
}

void save_classifier(const Classifier& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta{
        {"architecture", model.architecture},
        {"num_classes", model.num_classes},
        {"input_shape", {model.input.channels, model.input.height, model.input.width}},
        {"parameter_count", model.net.parameter_count()},
    };
    std::ofstream(dir / "model.json") << meta.dump(2) << "\n";
    write_parameters(dir / "weights.bin", model.net.flat_parameters());
}

Classifier load_classifier(const std::filesystem::path& dir) {
    std::ifstream is(dir / "model.json");
    if (!is) throw std::runtime_error("missing " + (dir / "model.json").string());
    const auto meta = nlohmann::json::parse(is);
    const auto shape = meta.at("input_shape");
    Classifier c = build_classifier(meta.at("architecture").get<std::string>(),
                                    {shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>()},
                                    meta.at("num_classes").get<int>(), 0);
    c.net.load_flat_parameters(read_parameters(dir / "weights.bin"));
    return c;
}

// ---- losses ---------------------------------------------------------------------

std::vector<int> argmax_rows(const Tensor& logits) {
    const int k = logits.sample_size();
    std::vector<int> out(static_cast<std::size_t>(logits.n()));
    for (int n = 0; n < logits.n(); ++n) {
        const auto row = logits.sample(n);
        out[static_cast<std::size_t>(n)] =
            static_cast<int>(std::max_element(row.begin(), row.begin() + k) - row.begin());
    }
    return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
    const int batch = logits.n(), k = logits.sample_size();
    if (labels.size() != static_cast<std::size_t>(batch)) {
        throw std::invalid_argument("cross_entropy: label count mismatch");
    }
    if (grad) *grad = Tensor::zeros_like(logits);
    double loss = 0.0;
    for (int n = 0; n < batch; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= k) throw std::out_of_range("cross_entropy: label out of range");
        const auto p = softmax_row(logits.sample(n).data(), k, 1.0);
        loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
        if (grad) {
            auto g = grad->sample(n);
            for (int i = 0; i < k; ++i) {
                g[static_cast<std::size_t>(i)] = (p[static_cast<std::size_t>(i)] - (i == y ? 1.0 : 0.0)) / batch;
            }
        }
    }
    return loss / batch;
}

double soft_cross_entropy(const Tensor& student_logits, const Tensor& teacher_logits,
                          double temperature, Tensor* grad) {
    if (!student_logits.same_shape(teacher_logits)) {
        throw std::invalid_argument("soft_cross_entropy: shape mismatch");
    }
    if (temperature <= 0) throw std::invalid_argument("soft_cross_entropy: temperature must be > 0");
    const int batch = student_logits.n(), k = student_logits.sample_size();
    if (grad) *grad = Tensor::zeros_like(student_logits);
    double loss = 0.0;
    const double t2 = temperature * temperature;
    for (int n = 0; n < batch; ++n) {
        const auto q = softmax_row(teacher_logits.sample(n).data(), k, temperature);
        const auto p = softmax_row(student_logits.sample(n).data(), k, temperature);
        for (int i = 0; i < k; ++i) {
            loss -= t2 * q[static_cast<std::size_t>(i)] * std::log(std::max(p[static_cast<std::size_t>(i)], 1e-300));
        }
        if (grad) {
            auto g = grad->sample(n);
            for (int i = 0; i < k; ++i) {
                g[static_cast<std::size_t>(i)] =
                    temperature * (p[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(i)]) / batch;
            }
        }
    }
    return loss / batch;
}

// ---- training -------------------------------------------------------------------

namespace {

std::unique_ptr<Optimizer> make_optimizer(const TrainOptions& o) {
    if (o.optimizer == OptimizerKind::adam) return std::make_unique<Adam>(o.lr);
    return std::make_unique<Sgd>(o.lr, o.momentum, o.weight_decay);
}

// Runs the epoch/minibatch loop; `batch_grad` computes d(loss)/d(logits).
template <class GradFn>
void train_loop(Classifier& model, int count, const TrainOptions& options, GradFn batch_grad) {
    if (count == 0) throw std::invalid_argument("train: empty training set");
    auto optimizer = make_optimizer(options);
    std::vector<Param*> params = options.head_only ? model.head_params() : model.net.params();
    std::mt19937_64 rng(options.seed ^ 0x7a11u);
    std::vector<int> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int b = 0; b < count; b += options.batch_size) {
            const int e = std::min(count, b + options.batch_size);
            std::span<const int> rows(order.data() + b, static_cast<std::size_t>(e - b));
            model.net.zero_grad();
            const Tensor grad = batch_grad(rows);
            model.net.backward(grad, true);
            optimizer->step(params);
        }
    }
}

}  // namespace

void train_supervised(Classifier& model, const Tensor& images, std::span<const int> labels,
                      const TrainOptions& options) {
    if (labels.size() != static_cast<std::size_t>(images.n())) {
        throw std::invalid_argument("train_supervised: label count mismatch");
    }
    train_loop(model, images.n(), options, [&](std::span<const int> rows) {
        const Tensor x = images.gather(rows);
        std::vector<int> y;
        y.reserve(rows.size());
        for (int r : rows) y.push_back(labels[static_cast<std::size_t>(r)]);
        Tensor grad;
        cross_entropy(model.net.forward(x), y, &grad);
        return grad;
    });
}

void train_soft(Classifier& model, const Tensor& images, const Tensor& teacher_logits,
                double temperature, const TrainOptions& options) {
    if (teacher_logits.n() != images.n()) {
        throw std::invalid_argument("train_soft: teacher output count mismatch");
    }
    train_loop(model, images.n(), options, [&](std::span<const int> rows) {
        const Tensor x = images.gather(rows);
        const Tensor t = teacher_logits.gather(rows);
        Tensor grad;
        soft_cross_entropy(model.net.forward(x), t, temperature, &grad);
        return grad;
    });
}

double accuracy(Classifier& model, const Dataset& data) {
    if (!data.labeled() || data.size() == 0) throw std::invalid_argument("accuracy: need labeled data");
    const auto pred = model.predict(data.images);
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double agreement(Classifier& a, Classifier& b, const Tensor& images) {
    const auto pa = a.predict(images);
    const auto pb = b.predict(images);
    int same = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) same += pa[i] == pb[i];
    return pa.empty() ? 0.0 : static_cast<double>(same) / static_cast<double>(pa.size());
}

}  // namespace nf
