#include "naturalfinger/zoo.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "naturalfinger/util.hpp"

namespace nf {

// ---- enums ------------------------------------------------------------------------

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
             const char* what) {
    for (const auto& [name, value] : table) {
        if (s == name) return value;
    }
    throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace

std::string to_string(Role r) {
    switch (r) {
        case Role::positive: return "positive";
        case Role::mirror_negative: return "mirror_negative";
        case Role::negative: return "negative";
    }
    return "?";
}

std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::finetune: return "finetune";
        case AttackKind::prune: return "prune";
        case AttackKind::noise: return "noise";
        case AttackKind::adv_train: return "adv_train";
        case AttackKind::distill: return "distill";
        case AttackKind::knockoff: return "knockoff";
    }
    return "?";
}

std::string to_string(FinetuneMode m) {
    switch (m) {
        case FinetuneMode::FTLL: return "FTLL";
        case FinetuneMode::FTAL: return "FTAL";
        case FinetuneMode::RTLL: return "RTLL";
        case FinetuneMode::RTAL: return "RTAL";
    }
    return "?";
}

Role parse_role(const std::string& s) {
    return parse_enum<Role>(s,
                            {{"positive", Role::positive},
                             {"mirror_negative", Role::mirror_negative},
                             {"negative", Role::negative}},
                            "role");
}

AttackKind parse_attack_kind(const std::string& s) {
    return parse_enum<AttackKind>(s,
                                  {{"finetune", AttackKind::finetune},
                                   {"prune", AttackKind::prune},
                                   {"noise", AttackKind::noise},
                                   {"adv_train", AttackKind::adv_train},
                                   {"distill", AttackKind::distill},
                                   {"knockoff", AttackKind::knockoff}},
                                  "attack kind");
}

FinetuneMode parse_finetune_mode(const std::string& s) {
    return parse_enum<FinetuneMode>(s,
                                    {{"FTLL", FinetuneMode::FTLL},
                                     {"FTAL", FinetuneMode::FTAL},
                                     {"RTLL", FinetuneMode::RTLL},
                                     {"RTAL", FinetuneMode::RTAL}},
                                    "fine-tune mode");
}

// ---- AttackSpec -----------------------------------------------------------------------

namespace {

bool on_tenth_grid(double x, double lo, double hi) {
    const double scaled = x * 10.0;
    return x >= lo - 1e-12 && x <= hi + 1e-12 && std::abs(scaled - std::round(scaled)) < 1e-9;
}

std::string format_number(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

}  // namespace

void AttackSpec::validate() const {
    auto fail = [&](const std::string& what) {
        throw std::invalid_argument("AttackSpec(" + to_string(kind) + "): " + what);
    };
    const bool want_mode = kind == AttackKind::finetune;
    const bool want_p = kind == AttackKind::prune;
    const bool want_v = kind == AttackKind::noise;
    const bool want_r = kind == AttackKind::adv_train;
    const bool want_t = kind == AttackKind::distill || kind == AttackKind::knockoff;
    if (mode.has_value() != want_mode) fail(want_mode ? "mode required" : "mode not applicable");
    if (p.has_value() != want_p) fail(want_p ? "p required" : "p not applicable");
    if (v.has_value() != want_v) fail(want_v ? "v required" : "v not applicable");
    if (r.has_value() != want_r) fail(want_r ? "r required" : "r not applicable");
    if (T.has_value() != want_t) fail(want_t ? "T required" : "T not applicable");
    if (transfer_dataset.has_value() != want_t) {
        fail(want_t ? "transfer_dataset required" : "transfer_dataset not applicable");
    }
    if (p && !on_tenth_grid(*p, 0.1, 0.9)) fail("p must be one of 0.1..0.9");
    if (v && (*v < 1 || *v > 9)) fail("v must be in 1..9");
    if (r && !on_tenth_grid(*r, 0.1, 1.0)) fail("r must be one of 0.1..1.0");
    if (T && !(*T > 0)) fail("T must be > 0");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(lr >= 0)) fail("lr must be >= 0");
}

nlohmann::json AttackSpec::to_json() const {
    nlohmann::json j{{"kind", to_string(kind)}, {"epochs", epochs}, {"lr", lr}};
    if (mode) j["mode"] = to_string(*mode);
    if (p) j["p"] = *p;
    if (v) j["v"] = *v;
    if (r) j["r"] = *r;
    if (T) j["T"] = *T;
    if (transfer_dataset) j["transfer_dataset"] = *transfer_dataset;
    return j;
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
    AttackSpec a;
    a.kind = parse_attack_kind(j.at("kind").get<std::string>());
    if (j.contains("mode")) a.mode = parse_finetune_mode(j.at("mode").get<std::string>());
    if (j.contains("p")) a.p = j.at("p").get<double>();
    if (j.contains("v")) a.v = j.at("v").get<int>();
    if (j.contains("r")) a.r = j.at("r").get<double>();
    if (j.contains("T")) a.T = j.at("T").get<double>();
    if (j.contains("transfer_dataset")) a.transfer_dataset = j.at("transfer_dataset").get<std::string>();
    a.epochs = j.at("epochs").get<int>();
    a.lr = j.at("lr").get<double>();
    return a;
}

std::string AttackSpec::parameter_label() const {
    if (mode) return to_string(*mode);
    if (p) return format_number(*p);
    if (v) return std::to_string(*v);
    if (r) return format_number(*r);
    return transfer_dataset.value_or("");
}

// ---- ModelRecord ----------------------------------------------------------------------

nlohmann::json ModelRecord::to_json() const {
    nlohmann::json j{
        {"model_id", model_id},
        {"role", to_string(role)},
        {"architecture", architecture},
        {"lineage", lineage ? lineage->to_json() : nlohmann::json("trained_from_scratch")},
        {"test_accuracy", test_accuracy},
        {"seed", seed},
        {"weights_uri", weights_uri},
        {"train_half", train_half},
        {"trained", trained},
        {"within_accuracy_budget", within_accuracy_budget},
    };
    j["parent_id"] = parent_id ? nlohmann::json(*parent_id) : nlohmann::json(nullptr);
    return j;
}

ModelRecord ModelRecord::from_json(const nlohmann::json& j) {
    ModelRecord r;
    r.model_id = j.at("model_id").get<std::string>();
    r.role = parse_role(j.at("role").get<std::string>());
    r.architecture = j.at("architecture").get<std::string>();
    const auto& lineage = j.at("lineage");
    if (lineage.is_object()) {
        r.lineage = AttackSpec::from_json(lineage);
    } else if (lineage != "trained_from_scratch") {
        throw std::invalid_argument("record " + r.model_id + ": bad lineage");
    }
    if (j.contains("parent_id") && !j.at("parent_id").is_null()) {
        r.parent_id = j.at("parent_id").get<std::string>();
    }
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.weights_uri = j.at("weights_uri").get<std::string>();
    r.train_half = j.value("train_half", std::string("pos"));
    r.trained = j.value("trained", false);
    r.within_accuracy_budget = j.value("within_accuracy_budget", true);
    return r;
}

// ---- ZooConfig ------------------------------------------------------------------------

ZooConfig ZooConfig::desk() { return ZooConfig{}; }

ZooConfig ZooConfig::full() {
    ZooConfig c;
    c.profile = "full";
    c.architectures = {"resnet_s", "resnet_m", "resnet_w", "resnet_n", "vgg_s",
                       "vgg_m",    "vgg_n",    "plain_cnn", "plain_cnn_w", "lenet",
                       "lenet_w",  "mlp_s",    "mlp_m",    "allconv_s", "allconv_w"};
    c.grid_p = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    c.grid_v = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    c.grid_r = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    c.data.train_per_class = 1000;
    c.data.test_per_class = 500;
    c.data.transfer_count = 5000;
    c.scratch_epochs = 30;
    c.extraction_epochs = 30;
    c.trained_positives = {"pos-source"};
    c.trained_negatives = {"mneg-source"};
    for (const char* a : {"vgg_s", "plain_cnn", "lenet", "mlp_s", "allconv_s", "resnet_m", "vgg_m"}) {
        c.trained_positives.push_back(std::string("pos-distill-") + a);
        c.trained_negatives.push_back(std::string("neg-scratch-") + a);
    }
    return c;
}

ZooConfig ZooConfig::for_profile(const std::string& profile) {
    if (profile == "desk") return desk();
    if (profile == "full") return full();
    throw std::invalid_argument("unknown profile '" + profile + "' (expected desk or full)");
}

void ZooConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("zoo config: " + what); };
    if (profile != "desk" && profile != "full") fail("profile must be desk or full");
    if (architectures.empty()) fail("no architectures");
    for (const auto& a : architectures) {
        if (!is_registered_architecture(a)) build_classifier(a, {}, 2, 0);  // throws with the registry
    }
    if (std::find(architectures.begin(), architectures.end(), source_architecture) == architectures.end()) {
        fail("source_architecture must be listed in architectures");
    }
    if (std::set<std::string>(architectures.begin(), architectures.end()).size() != architectures.size()) {
        fail("duplicate architecture");
    }
    if (transfer_dataset == dataset) fail("transfer_dataset must differ from dataset");
    for (double p : grid_p) {
        if (!on_tenth_grid(p, 0.1, 0.9)) fail("grid p values must be in {0.1,...,0.9}");
    }
    for (int v : grid_v) {
        if (v < 1 || v > 9) fail("grid v values must be in 1..9");
    }
    for (double r : grid_r) {
        if (!on_tenth_grid(r, 0.1, 1.0)) fail("grid r values must be in {0.1,...,1.0}");
    }
    if (scratch_epochs < 0 || finetune_epochs < 0 || extraction_epochs < 0) fail("epochs must be >= 0");
    if (!(scratch_lr >= 0 && finetune_lr >= 0 && extraction_lr >= 0)) fail("lr must be >= 0");
    if (batch_size <= 0) fail("batch_size must be > 0");
    if (!(temperature > 0)) fail("temperature must be > 0");
    const auto plan = plan_zoo(*this);
    auto known = [&](const std::string& id, Role role) {
        for (const auto& pm : plan) {
            if (pm.record.model_id == id) return pm.record.role == role;
        }
        return false;
    };
    for (const auto& id : trained_positives) {
        if (!known(id, Role::positive)) fail("trained positive '" + id + "' is not a planned positive");
    }
    for (const auto& id : trained_negatives) {
        if (!known(id, Role::mirror_negative) && !known(id, Role::negative)) {
            fail("trained negative '" + id + "' is not a planned negative");
        }
    }
    if (trained_positives.empty() || trained_negatives.empty()) fail("need trained positives and negatives");
}

nlohmann::json ZooConfig::to_json() const {
    std::vector<std::string> modes;
    for (auto m : finetune_modes) modes.push_back(to_string(m));
    return {
        {"profile", profile},
        {"dataset", dataset},
        {"transfer_dataset", transfer_dataset},
        {"source_architecture", source_architecture},
        {"architectures", architectures},
        {"grids", {{"p", grid_p}, {"v", grid_v}, {"r", grid_r}, {"finetune_modes", modes}}},
        {"seeds", {{"global", seed}, {"split", split_seed}, {"data", data_seed}}},
        {"data", {{"image_size", data.image_size},
                  {"train_per_class", data.train_per_class},
                  {"test_per_class", data.test_per_class},
                  {"transfer_count", data.transfer_count}}},
        {"epochs", {{"scratch", scratch_epochs}, {"finetune", finetune_epochs},
                    {"extraction", extraction_epochs}}},
        {"lr", {{"scratch", scratch_lr}, {"finetune", finetune_lr}, {"extraction", extraction_lr}}},
        {"batch_size", batch_size},
        {"temperature", temperature},
        {"accuracy_budget", accuracy_budget},
        {"adversarial_replace", adversarial_replace},
        {"trained", {{"positives", trained_positives}, {"negatives", trained_negatives}}},
    };
}

ZooConfig ZooConfig::from_json(const nlohmann::json& j) {
    ZooConfig c = for_profile(j.value("profile", std::string("desk")));
    c.dataset = j.value("dataset", c.dataset);
    c.transfer_dataset = j.value("transfer_dataset", c.transfer_dataset);
    c.source_architecture = j.value("source_architecture", c.source_architecture);
    c.architectures = j.value("architectures", c.architectures);
    if (j.contains("grids")) {
        const auto& g = j.at("grids");
        c.grid_p = g.value("p", c.grid_p);
        c.grid_v = g.value("v", c.grid_v);
        c.grid_r = g.value("r", c.grid_r);
        if (g.contains("finetune_modes")) {
            c.finetune_modes.clear();
            for (const auto& m : g.at("finetune_modes")) c.finetune_modes.push_back(parse_finetune_mode(m));
        }
    }
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        c.seed = s.value("global", c.seed);
        c.split_seed = s.value("split", c.split_seed);
        c.data_seed = s.value("data", c.data_seed);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.data.image_size = d.value("image_size", c.data.image_size);
        c.data.train_per_class = d.value("train_per_class", c.data.train_per_class);
        c.data.test_per_class = d.value("test_per_class", c.data.test_per_class);
        c.data.transfer_count = d.value("transfer_count", c.data.transfer_count);
    }
    if (j.contains("epochs")) {
        const auto& e = j.at("epochs");
        if (e.is_number_integer()) {
            c.scratch_epochs = c.extraction_epochs = e.get<int>();
        } else {
            c.scratch_epochs = e.value("scratch", c.scratch_epochs);
            c.finetune_epochs = e.value("finetune", c.finetune_epochs);
            c.extraction_epochs = e.value("extraction", c.extraction_epochs);
        }
    }
    if (j.contains("lr")) {
        const auto& l = j.at("lr");
        c.scratch_lr = l.value("scratch", c.scratch_lr);
        c.finetune_lr = l.value("finetune", c.finetune_lr);
        c.extraction_lr = l.value("extraction", c.extraction_lr);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.temperature = j.value("temperature", c.temperature);
    c.accuracy_budget = j.value("accuracy_budget", c.accuracy_budget);
    c.adversarial_replace = j.value("adversarial_replace", c.adversarial_replace);
    if (j.contains("trained")) {
        const auto& t = j.at("trained");
        c.trained_positives = t.value("positives", c.trained_positives);
        c.trained_negatives = t.value("negatives", c.trained_negatives);
    }
    return c;
}

std::string ZooConfig::hash() const { return json_hash(to_json()); }

// ---- planning ---------------------------------------------------------------------------

std::map<std::string, int> planned_counts(const ZooConfig& c) {
    const int arch = static_cast<int>(c.architectures.size());
    const int attacked = static_cast<int>(c.finetune_modes.size() + c.grid_p.size() +
                                          c.grid_v.size() + c.grid_r.size()) +
                         2 * arch;
    return {{to_string(Role::positive), 1 + attacked},
            {to_string(Role::mirror_negative), 1 + attacked},
            {to_string(Role::negative), 2 * (arch - 1)}};
}

std::vector<PlannedModel> plan_zoo(const ZooConfig& c) {
    std::vector<PlannedModel> plan;
    const std::set<std::string> trained(c.trained_positives.begin(), c.trained_positives.end());
    const std::set<std::string> trained_neg(c.trained_negatives.begin(), c.trained_negatives.end());
    auto add = [&](const std::string& id, Role role, const std::string& arch,
                   std::optional<AttackSpec> lineage, std::optional<std::string> parent,
                   const std::string& half, int phase) {
        PlannedModel pm;
        pm.phase = phase;
        auto& r = pm.record;
        r.model_id = id;
        r.role = role;
        r.architecture = arch;
        r.lineage = std::move(lineage);
        r.parent_id = std::move(parent);
        r.seed = derive_seed(c.seed, id);
        r.weights_uri = "models/" + id;
        r.train_half = half;
        r.trained = trained.count(id) || trained_neg.count(id);
        plan.push_back(std::move(pm));
    };
    auto finetune_spec = [&](AttackKind kind) {
        AttackSpec a;
        a.kind = kind;
        a.epochs = c.finetune_epochs;
        a.lr = c.finetune_lr;
        return a;
    };
    auto extraction_spec = [&](AttackKind kind, const std::string& transfer) {
        AttackSpec a;
        a.kind = kind;
        a.T = c.temperature;
        a.transfer_dataset = transfer;
        a.epochs = c.extraction_epochs;
        a.lr = c.extraction_lr;
        return a;
    };

    using Side = std::tuple<std::string, Role, std::string>;
    const std::vector<Side> sides{{"pos", Role::positive, "pos"}, {"mneg", Role::mirror_negative, "neg"}};
    for (const auto& [prefix, role, half] : sides) {
        const std::string source = prefix + "-source";
        add(source, role, c.source_architecture, std::nullopt, std::nullopt, half, 0);
        for (auto m : c.finetune_modes) {
            auto a = finetune_spec(AttackKind::finetune);
            a.mode = m;
            add(prefix + "-ft-" + to_string(m), role, c.source_architecture, a, source, half, 1);
        }
        for (double p : c.grid_p) {
            auto a = finetune_spec(AttackKind::prune);
            a.p = p;
            add(prefix + "-prune-" + format_number(p), role, c.source_architecture, a, source, half, 1);
        }
        for (int v : c.grid_v) {
            auto a = finetune_spec(AttackKind::noise);
            a.v = v;
            add(prefix + "-noise-" + std::to_string(v), role, c.source_architecture, a, source, half, 1);
        }
        for (double r : c.grid_r) {
            auto a = finetune_spec(AttackKind::adv_train);
            a.r = r;
            add(prefix + "-adv-" + format_number(r), role, c.source_architecture, a, source, half, 1);
        }
        for (const auto& arch : c.architectures) {
            add(prefix + "-distill-" + arch, role, arch, extraction_spec(AttackKind::distill, c.dataset),
                source, half, 1);
        }
        for (const auto& arch : c.architectures) {
            add(prefix + "-knockoff-" + arch, role, arch,
                extraction_spec(AttackKind::knockoff, c.transfer_dataset), source, half, 1);
        }
    }
    for (const auto& arch : c.architectures) {
        if (arch == c.source_architecture) continue;
        add("neg-scratch-" + arch, Role::negative, arch, std::nullopt, std::nullopt, "neg", 0);
    }
    for (const auto& arch : c.architectures) {
        if (arch == c.source_architecture) continue;
        add("neg-distill-" + arch, Role::negative, c.source_architecture,
            extraction_spec(AttackKind::distill, c.dataset), "neg-scratch-" + arch, "neg", 1);
    }
    return plan;
}

// ---- ZooManifest ----------------------------------------------------------------------

const ModelRecord* ZooManifest::find(const std::string& id) const {
    for (const auto& r : records) {
        if (r.model_id == id) return &r;
    }
    return nullptr;
}

void ZooManifest::recount() {
    counts_by_role = {{to_string(Role::positive), 0},
                      {to_string(Role::mirror_negative), 0},
                      {to_string(Role::negative), 0}};
    for (const auto& r : records) ++counts_by_role[to_string(r.role)];
}

std::vector<std::string> ZooManifest::problems() const {
    std::vector<std::string> out;
    std::set<std::string> ids;
    std::map<std::string, int> counts{{to_string(Role::positive), 0},
                                      {to_string(Role::mirror_negative), 0},
                                      {to_string(Role::negative), 0}};
    for (const auto& r : records) {
        if (!ids.insert(r.model_id).second) out.push_back("duplicate model_id " + r.model_id);
        ++counts[to_string(r.role)];
        if (r.test_accuracy < 0 || r.test_accuracy > 1) out.push_back(r.model_id + ": accuracy outside [0,1]");
        if (r.lineage) {
            try {
                r.lineage->validate();
            } catch (const std::exception& e) {
                out.push_back(r.model_id + ": " + e.what());
            }
        }
    }
    for (const auto& r : records) {
        if (r.parent_id && !ids.count(*r.parent_id)) {
            out.push_back(r.model_id + ": parent " + *r.parent_id + " missing");
        }
        if (r.role == Role::positive) {
            // Walk to the root; it has to be the source.
            const ModelRecord* cur = &r;
            int guard = 0;
            while (cur && cur->parent_id && guard++ < 64) cur = find(*cur->parent_id);
            if (!cur || cur->model_id != source_id) out.push_back(r.model_id + ": positive not derived from source");
        }
    }
    if (counts != counts_by_role) out.push_back("counts_by_role inconsistent with records");

    // Mirror property: positives and mirror negatives carry the same multiset
    // of (architecture, lineage).
    auto key = [](const ModelRecord& r) {
        return r.architecture + "|" + (r.lineage ? r.lineage->to_json().dump() : "scratch");
    };
    std::multiset<std::string> pos, mirror;
    for (const auto& r : records) {
        if (r.role == Role::positive) pos.insert(key(r));
        if (r.role == Role::mirror_negative) mirror.insert(key(r));
    }
    if (complete() && pos != mirror) out.push_back("mirror property violated");
    return out;
}

nlohmann::json ZooManifest::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records) recs.push_back(r.to_json());
    return {
        {"records", recs},
        {"split_seed", split_seed},
        {"dataset_name", dataset_name},
        {"counts_by_role", counts_by_role},
        {"planned_counts", planned_counts},
        {"source_id", source_id},
        {"config_hash", config_hash},
        {"config", config},
    };
}

ZooManifest ZooManifest::from_json(const nlohmann::json& j) {
    ZooManifest m;
    for (const auto& r : j.at("records")) m.records.push_back(ModelRecord::from_json(r));
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.counts_by_role = j.at("counts_by_role").get<std::map<std::string, int>>();
    m.planned_counts = j.value("planned_counts", m.counts_by_role);
    m.source_id = j.value("source_id", m.source_id);
    m.config_hash = j.value("config_hash", std::string());
    m.config = j.value("config", nlohmann::json::object());
    return m;
}

ZooManifest load_manifest(const std::filesystem::path& zoo_dir) {
    return ZooManifest::from_json(read_json(zoo_dir / "manifest.json"));
}

// ---- data -----------------------------------------------------------------------------

ZooData make_zoo_data(const ZooConfig& config) {
    ZooData d;
    d.raw = make_dataset(config.dataset, config.data, config.data_seed);
    d.split = split_dataset(d.raw, config.split_seed);
    d.transfer = make_transfer_set(config.transfer_dataset, config.data, derive_seed(config.data_seed, "transfer"));
    return d;
}

// ---- attacks --------------------------------------------------------------------------

Classifier train_model(const std::string& architecture, const Dataset& data, int epochs, double lr,
                       std::uint64_t seed, int batch_size) {
    if (data.size() == 0 || !data.labeled()) throw std::invalid_argument("train_model: empty or unlabeled data");
    const auto& im = data.images;
    Classifier model = build_classifier(architecture, {im.c(), im.h(), im.w()}, data.num_classes, seed);
    TrainOptions opt;
    opt.epochs = epochs;
    opt.lr = lr;
    opt.batch_size = batch_size;
    opt.seed = derive_seed(seed, "train");
    train_supervised(model, data.images, data.labels, opt);
    return model;
}

TrainOptions finetune_options(int epochs, double lr, std::uint64_t seed) {
    TrainOptions opt;
    opt.epochs = epochs;
    opt.lr = lr;
    opt.momentum = 0.9;
    opt.seed = seed;
    return opt;
}

void finetune(Classifier& model, const Dataset& data, FinetuneMode mode, const TrainOptions& options) {
    if (model.head_layer >= model.net.size() || model.head_params().empty()) {
        throw std::invalid_argument("finetune: model has no designated last layer");
    }
    TrainOptions opt = options;
    opt.head_only = mode == FinetuneMode::FTLL || mode == FinetuneMode::RTLL;
    if (mode == FinetuneMode::RTLL || mode == FinetuneMode::RTAL) {
        model.reinitialize_head(derive_seed(options.seed, "reinit-head"));
    }
    train_supervised(model, data.images, data.labels, opt);
}

std::size_t prune_weights(Classifier& model, double p) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("prune_weights: p must be in [0, 1)");
    struct Entry {
        double magnitude;
        std::size_t param, index;
    };
    std::vector<Param*> params;
    for (Param* prm : model.net.params()) {
        if (prm->prunable) params.push_back(prm);
    }
    std::vector<Entry> all;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& v = params[k]->value;
        for (std::size_t i = 0; i < v.size(); ++i) all.push_back({std::abs(v[i]), k, i});
    }
    const auto count = static_cast<std::size_t>(std::floor(p * static_cast<double>(all.size())));
    if (count == 0) return 0;
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count - 1), all.end(),
                     [](const Entry& a, const Entry& b) {
                         if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
                         if (a.param != b.param) return a.param < b.param;
                         return a.index < b.index;
                     });
    for (Param* prm : params) {
        if (prm->mask.empty()) prm->mask.assign(prm->value.size(), 1);
    }
    for (std::size_t i = 0; i < count; ++i) {
        params[all[i].param]->value[all[i].index] = 0.0;
        params[all[i].param]->mask[all[i].index] = 0;
    }
    return count;
}

void noise_weights(Classifier& model, int v, std::uint64_t seed) {
    if (v <= 0) throw std::invalid_argument("noise_weights: v must be >= 1");
    std::mt19937_64 rng(seed);
    for (Param* prm : model.net.params()) {
        if (!prm->prunable) continue;
        Tensor& w = prm->value;
        if (w.size() == 0) continue;
        double mean = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) mean += w[i];
        mean /= static_cast<double>(w.size());
        double var = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
        const double sd = std::sqrt(var / static_cast<double>(w.size())) / v;
        if (!(sd > 0)) continue;
        std::normal_distribution<double> noise(0.0, sd);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += noise(rng);
    }
}

void adversarial_finetune(Classifier& model, const Dataset& data, double r, const TrainOptions& options,
                          bool replace, const AttackBudget& budget) {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("adversarial_finetune: r must be in (0, 1]");
    const int n = data.size();
    const int k = static_cast<int>(std::floor(r * n + 1e-9));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(options.seed, "adv-select"));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> chosen(order.begin(), order.begin() + k);
    std::sort(chosen.begin(), chosen.end());

    const Dataset picked = data.subset(chosen);
    const Tensor adv = pgd(model, picked.images, picked.labels, budget);

    Dataset train = data;
    if (replace) {
        for (int i = 0; i < k; ++i) {
            auto dst = train.images.sample(chosen[static_cast<std::size_t>(i)]);
            const auto src = adv.sample(i);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    } else {
        const Tensor parts[] = {data.images, adv};
        train.images = Tensor::concat(parts);
        train.labels.insert(train.labels.end(), picked.labels.begin(), picked.labels.end());
    }
    finetune(model, train, FinetuneMode::FTAL, options);
}

Classifier distill(Classifier& teacher, const std::string& student_architecture, const Tensor& queries,
                   double temperature, const TrainOptions& options) {
    if (!(temperature > 0)) throw std::invalid_argument("distill: T must be > 0");
    if (queries.n() == 0) throw std::invalid_argument("distill: empty query set");
    Classifier student = build_classifier(student_architecture, teacher.input, teacher.num_classes,
                                          derive_seed(options.seed, "student-init"));
    const Tensor targets = teacher.logits(queries);
    train_soft(student, queries, targets, temperature, options);
    return student;
}

Classifier knockoff(Classifier& teacher, const std::string& teacher_dataset,
                    const std::string& student_architecture, const Dataset& transfer,
                    const TrainOptions& options, int budget) {
    if (transfer.name == teacher_dataset) {
        throw std::invalid_argument("knockoff: transfer set '" + transfer.name +
                                    "' is the teacher's training dataset; that is distillation");
    }
    if (transfer.size() == 0) throw std::invalid_argument("knockoff: empty transfer set");
    std::vector<int> order(static_cast<std::size_t>(transfer.size()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(options.seed, "knockoff-select"));
    std::shuffle(order.begin(), order.end(), rng);
    if (budget > 0 && budget < transfer.size()) order.resize(static_cast<std::size_t>(budget));
    return distill(teacher, student_architecture, transfer.images.gather(order), 1.0, options);
}

// ---- building ---------------------------------------------------------------------------

namespace {

const Dataset& half_of(const ZooData& data, const std::string& half) {
    return half == "pos" ? data.split.pos_train : data.split.neg_train;
}

Classifier run_planned(const ModelRecord& rec, const ZooConfig& c, const ZooData& data,
                       const std::filesystem::path& dir, const ZooManifest& done) {
    if (!rec.lineage) {
        return train_model(rec.architecture, half_of(data, rec.train_half), c.scratch_epochs, c.scratch_lr,
                           rec.seed, c.batch_size);
    }
    const ModelRecord* parent = done.find(*rec.parent_id);
    if (!parent) throw std::runtime_error("parent " + *rec.parent_id + " is not built");
    Classifier model = load_zoo_model(dir, *parent);
    const AttackSpec& a = *rec.lineage;
    TrainOptions opt = finetune_options(a.epochs, a.lr, derive_seed(rec.seed, "finetune"));
    opt.batch_size = c.batch_size;
    const Dataset& ft = data.split.finetune;
    switch (a.kind) {
        case AttackKind::finetune:
            finetune(model, ft, *a.mode, opt);
            return model;
        case AttackKind::prune:
            prune_weights(model, *a.p);
            finetune(model, ft, FinetuneMode::FTAL, opt);
            return model;
        case AttackKind::noise:
            noise_weights(model, *a.v, derive_seed(rec.seed, "noise"));
            finetune(model, ft, FinetuneMode::FTAL, opt);
            return model;
        case AttackKind::adv_train:
            adversarial_finetune(model, ft, *a.r, opt, c.adversarial_replace);
            return model;
        case AttackKind::distill:
            return distill(model, rec.architecture, half_of(data, parent->train_half).images, *a.T, opt);
        case AttackKind::knockoff:
            return knockoff(model, c.dataset, rec.architecture, data.transfer, opt);
    }
    throw std::logic_error("unhandled attack kind");
}

}  // namespace

Classifier load_zoo_model(const std::filesystem::path& zoo_dir, const ModelRecord& record) {
    return load_classifier(zoo_dir / record.weights_uri);
}

BuildResult build_zoo(const ZooConfig& config, const std::filesystem::path& dir, const BuildOptions& options) {
    config.validate();
    const std::string hash = config.hash();
    const auto manifest_path = dir / "manifest.json";

    BuildResult result;
    ZooManifest& manifest = result.manifest;
    if (std::filesystem::exists(manifest_path)) {
        manifest = load_manifest(dir);
        if (manifest.config_hash != hash) {
            throw ZooConfigMismatch("existing zoo in " + dir.string() + " was built with config hash " +
                                    manifest.config_hash + ", current config hashes to " + hash +
                                    "; refusing to resume");
        }
    }
    manifest.split_seed = config.split_seed;
    manifest.dataset_name = config.dataset;
    manifest.planned_counts = planned_counts(config);
    manifest.config_hash = hash;
    manifest.config = config.to_json();
    manifest.source_id = "pos-source";

    const auto plan = plan_zoo(config);
    std::map<std::string, std::size_t> plan_index;
    for (std::size_t i = 0; i < plan.size(); ++i) plan_index[plan[i].record.model_id] = i;

    // Drop records whose weights vanished so they get rebuilt.
    std::erase_if(manifest.records, [&](const ModelRecord& r) {
        return !std::filesystem::exists(dir / r.weights_uri / "weights.bin");
    });

    std::mutex mu;
    auto persist = [&] {
        std::sort(manifest.records.begin(), manifest.records.end(),
                  [&](const ModelRecord& a, const ModelRecord& b) {
                      return plan_index.at(a.model_id) < plan_index.at(b.model_id);
                  });
        manifest.recount();
        atomic_write(manifest_path, pretty(manifest.to_json()));
    };
    auto log = [&](const std::string& s) {
        if (options.log) options.log(s);
    };

    const ZooData data = make_zoo_data(config);
    for (const auto& w : data.split.warnings) log("warning: " + w);
    const Dataset& test = data.split.test;

    for (int phase = 0; phase <= 1; ++phase) {
        std::vector<const PlannedModel*> todo;
        for (const auto& pm : plan) {
            if (pm.phase != phase) continue;
            if (manifest.find(pm.record.model_id)) {
                ++result.skipped;
                continue;
            }
            todo.push_back(&pm);
        }
        const ZooManifest snapshot = manifest;
        std::atomic<std::size_t> next{0};
        const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(todo.size())));
        auto worker = [&] {
            if (jobs > 1) omp_set_num_threads(std::max(1, omp_get_num_procs() / jobs));
            for (std::size_t i = next++; i < todo.size(); i = next++) {
                ModelRecord rec = todo[i]->record;
                try {
                    Classifier model = run_planned(rec, config, data, dir, snapshot);
                    rec.test_accuracy = accuracy(model, test);
                    if (rec.parent_id) {
                        const ModelRecord* parent = snapshot.find(*rec.parent_id);
                        rec.within_accuracy_budget =
                            rec.test_accuracy >= parent->test_accuracy - config.accuracy_budget;
                    }
                    save_classifier(model, dir / rec.weights_uri);
                    std::lock_guard lock(mu);
                    manifest.records.push_back(rec);
                    persist();
                    ++result.built;
                    log(rec.model_id + " acc=" + format_number(rec.test_accuracy) +
                        (rec.within_accuracy_budget ? "" : " (outside accuracy budget)"));
                } catch (const std::exception& e) {
                    std::lock_guard lock(mu);
                    result.failures.emplace_back(rec.model_id, e.what());
                    log(rec.model_id + " failed: " + e.what());
                }
            }
        };
        if (jobs == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
    }
    {
        std::lock_guard lock(mu);
        persist();
    }
    return result;
}

TrainedModelSet LoadedModels::view() {
    TrainedModelSet s;
    for (auto& m : positives) s.positives.push_back(&m);
    for (auto& m : negatives) s.negatives.push_back(&m);
    s.positive_ids = positive_ids;
    s.negative_ids = negative_ids;
    return s;
}

LoadedModels load_trained_models(const std::filesystem::path& zoo_dir, const ZooManifest& manifest) {
    LoadedModels out;
    for (const auto& r : manifest.records) {
        if (!r.trained) continue;
        if (r.role == Role::positive) {
            out.positives.push_back(load_zoo_model(zoo_dir, r));
            out.positive_ids.push_back(r.model_id);
        } else {
            out.negatives.push_back(load_zoo_model(zoo_dir, r));
            out.negative_ids.push_back(r.model_id);
        }
    }
    if (out.positives.empty() || out.negatives.empty()) {
        throw std::runtime_error("zoo has no trained positive or negative models");
    }
    return out;
}

}  // namespace nf
