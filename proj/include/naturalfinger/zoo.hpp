#pragma once

// Model zoo: a source model, the six attacks applied to it, a mirror copy of
// every attack on a model trained from the other data half, and independently
// trained negatives. Everything is catalogued in manifest.json.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "naturalfinger/adversarial.hpp"
#include "naturalfinger/classifier.hpp"
#include "naturalfinger/data.hpp"
#include "naturalfinger/fingerprint.hpp"

namespace nf {

enum class Role { positive, mirror_negative, negative };
enum class AttackKind { finetune, prune, noise, adv_train, distill, knockoff };
enum class FinetuneMode { FTLL, FTAL, RTLL, RTAL };

std::string to_string(Role r);
std::string to_string(AttackKind k);
std::string to_string(FinetuneMode m);
Role parse_role(const std::string& s);
AttackKind parse_attack_kind(const std::string& s);
FinetuneMode parse_finetune_mode(const std::string& s);

struct AttackSpec {
    AttackKind kind = AttackKind::finetune;
    std::optional<FinetuneMode> mode;
    std::optional<double> p;
    std::optional<int> v;
    std::optional<double> r;
    std::optional<double> T;
    std::optional<std::string> transfer_dataset;
    int epochs = 10;
    double lr = 0.005;

    /// Throws std::invalid_argument unless exactly the fields of `kind` are set and in range.
    void validate() const;
    nlohmann::json to_json() const;
    static AttackSpec from_json(const nlohmann::json& j);
    bool operator==(const AttackSpec&) const = default;
    /// Grouping key for reports, e.g. "prune" / "0.3".
    std::string parameter_label() const;
};

struct ModelRecord {
    std::string model_id;
    Role role = Role::positive;
    std::string architecture;
    /// Empty when trained from scratch.
    std::optional<AttackSpec> lineage;
    std::optional<std::string> parent_id;
    double test_accuracy = 0.0;
    std::uint64_t seed = 0;
    std::string weights_uri;
    /// "pos" or "neg": the training half the model descends from.
    std::string train_half;
    /// Used as a trained model when generating fingerprints.
    bool trained = false;
    /// False when accuracy fell below parent accuracy minus the configured budget.
    bool within_accuracy_budget = true;

    nlohmann::json to_json() const;
    static ModelRecord from_json(const nlohmann::json& j);
};

struct ZooConfig {
    std::string profile = "desk";
    std::string dataset = "glyphs";
    std::string transfer_dataset = "scribbles";
    std::string source_architecture = "resnet_s";
    std::vector<std::string> architectures{"resnet_s", "vgg_s", "plain_cnn"};
    std::vector<double> grid_p{0.3, 0.6, 0.9};
    std::vector<int> grid_v{1, 5, 9};
    std::vector<double> grid_r{0.3, 1.0};
    std::vector<FinetuneMode> finetune_modes{FinetuneMode::FTLL, FinetuneMode::FTAL,
                                             FinetuneMode::RTLL, FinetuneMode::RTAL};
    std::uint64_t seed = 1;
    std::uint64_t split_seed = 7;
    std::uint64_t data_seed = 11;
    ProceduralSpec data;
    int scratch_epochs = 8;
    double scratch_lr = 0.02;
    int finetune_epochs = 10;
    double finetune_lr = 0.005;
    /// Distillation and knockoff; same epochs as scratch training by default.
    int extraction_epochs = 8;
    double extraction_lr = 0.02;
    int batch_size = 32;
    double temperature = 1.0;
    double accuracy_budget = 0.25;
    /// Adversarial fine-tuning replaces the attacked samples instead of adding to them.
    bool adversarial_replace = false;
    std::vector<std::string> trained_positives{"pos-source", "pos-distill-vgg_s",
                                               "pos-distill-plain_cnn"};
    std::vector<std::string> trained_negatives{"mneg-source", "neg-scratch-vgg_s",
                                               "neg-scratch-plain_cnn"};

    static ZooConfig desk();
    static ZooConfig full();
    static ZooConfig for_profile(const std::string& profile);
    void validate() const;
    nlohmann::json to_json() const;
    /// Unset fields take the values of the named (or default desk) profile.
    static ZooConfig from_json(const nlohmann::json& j);
    std::string hash() const;
};

/// Model counts implied by the config: positive, mirror_negative, negative.
std::map<std::string, int> planned_counts(const ZooConfig& config);

struct PlannedModel {
    ModelRecord record;  ///< accuracy and seed filled in as planned
    int phase = 0;       ///< 0: trained from scratch, 1: derived from a phase-0 model
};

std::vector<PlannedModel> plan_zoo(const ZooConfig& config);

struct ZooManifest {
    std::vector<ModelRecord> records;
    std::uint64_t split_seed = 0;
    std::string dataset_name;
    std::map<std::string, int> counts_by_role;
    std::map<std::string, int> planned_counts;
    std::string source_id = "pos-source";
    std::string config_hash;
    nlohmann::json config;

    const ModelRecord* find(const std::string& id) const;
    bool complete() const { return counts_by_role == planned_counts; }
    void recount();
    /// Violations of the manifest invariants; empty when consistent.
    std::vector<std::string> problems() const;
    nlohmann::json to_json() const;
    static ZooManifest from_json(const nlohmann::json& j);
};

ZooManifest load_manifest(const std::filesystem::path& zoo_dir);

// ---- datasets -------------------------------------------------------------------

struct ZooData {
    DatasetPartitions raw;
    SplitResult split;
    Dataset transfer;
};

ZooData make_zoo_data(const ZooConfig& config);

// ---- attacks --------------------------------------------------------------------

Classifier train_model(const std::string& architecture, const Dataset& data, int epochs, double lr,
                       std::uint64_t seed, int batch_size = 32);

TrainOptions finetune_options(int epochs = 10, double lr = 0.005, std::uint64_t seed = 0);

/// FTLL/RTLL train only the classification layer; RTLL/RTAL re-initialise it first.
void finetune(Classifier& model, const Dataset& data, FinetuneMode mode, const TrainOptions& options);

/// Zeroes the floor(p * N) smallest-magnitude prunable weights (global ranking,
/// ties by position) and masks them. Returns the number of weights selected.
std::size_t prune_weights(Classifier& model, double p);

/// Adds N(0, (std(W) / v)^2) noise to every prunable weight tensor W.
void noise_weights(Classifier& model, int v, std::uint64_t seed);

/// PGD examples for floor(r * |data|) randomly chosen samples, then FTAL fine-tuning
/// on the data plus (or, with `replace`, instead of) those samples.
void adversarial_finetune(Classifier& model, const Dataset& data, double r,
                          const TrainOptions& options, bool replace = false,
                          const AttackBudget& budget = {});

Classifier distill(Classifier& teacher, const std::string& student_architecture,
                   const Tensor& queries, double temperature, const TrainOptions& options);

/// Random-selection knockoff: `budget` transfer images drawn uniformly (all when
/// budget <= 0) query the teacher, whose outputs train the student.
Classifier knockoff(Classifier& teacher, const std::string& teacher_dataset,
                    const std::string& student_architecture, const Dataset& transfer,
                    const TrainOptions& options, int budget = 0);

// ---- building ---------------------------------------------------------------------

class ZooConfigMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BuildOptions {
    int jobs = 1;
    std::function<void(const std::string&)> log;
};

struct BuildResult {
    ZooManifest manifest;
    int built = 0;
    int skipped = 0;
    std::vector<std::pair<std::string, std::string>> failures;  ///< model_id, message
};

/// Builds (or resumes) the zoo under `dir`. Throws ZooConfigMismatch when an
/// existing manifest was produced by a different config.
BuildResult build_zoo(const ZooConfig& config, const std::filesystem::path& dir,
                      const BuildOptions& options = {});

Classifier load_zoo_model(const std::filesystem::path& zoo_dir, const ModelRecord& record);

/// Owns the classifiers behind a TrainedModelSet.
struct LoadedModels {
    std::vector<Classifier> positives, negatives;
    TrainedModelSet view();
    std::vector<std::string> positive_ids, negative_ids;
};

/// Models flagged `trained` in the manifest.
LoadedModels load_trained_models(const std::filesystem::path& zoo_dir, const ZooManifest& manifest);

}  // namespace nf
