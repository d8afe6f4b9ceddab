#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "forge/builder.hpp"
#include "forge/classifier.hpp"
#include "forge/config.hpp"
#include "forge/http_backend.hpp"
#include "forge/manifest.hpp"
#include "forge/metrics.hpp"
#include "forge/plot.hpp"
#include "forge/prompts.hpp"
#include "forge/toy_world.hpp"
#include "forge/tuner.hpp"

namespace forge {

// ---- run configuration ----

struct ToyWorldConfig {
    std::vector<std::string> seen, unseen;
    int canvas = 64;
    int resolution = 48;       // classifier input + fixture/synthetic render size
    double miss_rate = 0.25;   // used when generation bypasses the tuned stack
    double embed_noise = 0.0;
    int n_real_train = 72;
    int n_test = 96;
    int max_labels_per_image = 2;
};

struct PromptsConfig {
    int n_per_tuple = 3;
    int retry_budget = 3;
};

struct FinetuneConfig {
    bool enabled = true;
    int steps = 200;
    double lr = 1e-2;
    int latent_dim = 8;
    double noise = 0.6;            // generation-time logit noise of the toy stack
    double intensity_bias = -1.2;  // initial miss behavior strength
    int rate_samples = 150;        // qualified-rate probe size for the report
};

struct TrainConfig {
    int epochs = 30;
    double lr = 0.01;
    int batch = 8;
    int context_length = 8;
    int token_dim = 8;
    int embed_dim = 12;
    std::vector<int> channels = {6, 10, 14};
    std::vector<int> gff_sites = {1, 2};
    int gff_heads = 2;
};

struct EvalConfig {
    std::vector<int> topk = {1, 3};
};

struct RunConfig {
    std::string run_id = "run";
    std::string mode = "toy";  // toy | http
    std::string backend_url;
    double backend_timeout_s = 30.0;
    PipelineConfig pipeline;
    ToyWorldConfig toy;
    PromptsConfig prompts;
    FinetuneConfig finetune;
    TrainConfig train;
    EvalConfig eval;

    void validate() const {
        pipeline.validate();
        if (mode != "toy" && mode != "http") throw ConfigError("mode must be toy or http");
        if (mode == "http" && backend_url.empty()) throw ConfigError("http mode requires backend_url");
        if (mode == "toy" && (toy.seen.empty() || toy.unseen.empty()))
            throw ConfigError("toy mode requires label_space.seen and label_space.unseen");
        if (toy.resolution % 8 != 0) throw ConfigError("toy.resolution must be divisible by 8");
        if (toy.miss_rate < 0.0 || toy.miss_rate > 1.0) throw ConfigError("toy.miss_rate must lie in [0,1]");
        if (prompts.n_per_tuple < 1) throw ConfigError("prompts.n_per_tuple must be >= 1");
        if (finetune.steps < 1) throw ConfigError("finetune.steps must be >= 1");
        if (train.epochs < 1 || train.batch < 1) throw ConfigError("train.epochs and train.batch must be >= 1");
        if (eval.topk.empty()) throw ConfigError("eval.topk must not be empty");
        for (int k : eval.topk)
            if (k < 1) throw ConfigError("eval.topk entries must be >= 1");
    }

    LabelSpace label_space() const { return LabelSpace(toy.seen, toy.unseen); }

    ClassifierConfig classifier_config() const {
        ClassifierConfig c;
        c.context_length = train.context_length;
        c.token_dim = train.token_dim;
        c.embed_dim = train.embed_dim;
        c.channels = train.channels;
        c.gff_sites = train.gff_sites;
        c.gff_heads = train.gff_heads;
        c.tau = pipeline.tau;
        c.input_resolution = toy.resolution;
        c.seed = pipeline.seed;
        return c;
    }

    QualificationPolicy policy() const {
        QualificationPolicy p;
        p.lambda_threshold = pipeline.lambda_threshold;
        if (pipeline.topk_fine_grained) {
            p.mode = QualificationPolicy::Mode::fine_grained_topk;
            p.topk = static_cast<std::size_t>(*pipeline.topk_fine_grained);
        }
        return p;
    }
};

// ---- YAML loading with schema-style validation ----

namespace config_detail {

inline nlohmann::json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null: return nullptr;
        case YAML::NodeType::Scalar: {
            // try integer, double, bool, then string
            const std::string& s = node.Scalar();
            try {
                std::size_t pos = 0;
                long long v = std::stoll(s, &pos);
                if (pos == s.size()) return v;
            } catch (...) {
            }
            try {
                std::size_t pos = 0;
                double v = std::stod(s, &pos);
                if (pos == s.size()) return v;
            } catch (...) {
            }
            if (s == "true" || s == "True") return true;
            if (s == "false" || s == "False") return false;
            return s;
        }
        case YAML::NodeType::Sequence: {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& item : node) arr.push_back(yaml_to_json(item));
            return arr;
        }
        case YAML::NodeType::Map: {
            nlohmann::json obj = nlohmann::json::object();
            for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return obj;
        }
        default: return nullptr;
    }
}

// key spec table: dotted path -> type tag; unknown keys are rejected so
// typos fail pre-flight instead of silently using defaults
inline const std::map<std::string, std::string>& config_schema() {
    static const std::map<std::string, std::string> schema = {
        {"run_id", "string"},
        {"mode", "string"},
        {"backend_url", "string"},
        {"backend_timeout_s", "number"},
        {"seed", "integer"},
        {"label_space.seen", "string_list"},
        {"label_space.unseen", "string_list"},
        {"pipeline.lambda", "number"},
        {"pipeline.objects_per_image", "integer"},
        {"pipeline.positives_per_category", "integer"},
        {"pipeline.topk_fine_grained", "integer"},
        {"pipeline.gamma_plus", "number"},
        {"pipeline.gamma_minus", "number"},
        {"pipeline.tau", "number"},
        {"pipeline.strategy", "string"},
        {"toy.canvas", "integer"},
        {"toy.resolution", "integer"},
        {"toy.miss_rate", "number"},
        {"toy.embed_noise", "number"},
        {"toy.n_real_train", "integer"},
        {"toy.n_test", "integer"},
        {"toy.max_labels_per_image", "integer"},
        {"prompts.n_per_tuple", "integer"},
        {"prompts.retry_budget", "integer"},
        {"finetune.enabled", "boolean"},
        {"finetune.steps", "integer"},
        {"finetune.lr", "number"},
        {"finetune.latent_dim", "integer"},
        {"finetune.noise", "number"},
        {"finetune.intensity_bias", "number"},
        {"finetune.rate_samples", "integer"},
        {"train.epochs", "integer"},
        {"train.lr", "number"},
        {"train.batch", "integer"},
        {"train.context_length", "integer"},
        {"train.token_dim", "integer"},
        {"train.embed_dim", "integer"},
        {"train.channels", "int_list"},
        {"train.gff_sites", "int_list"},
        {"train.gff_heads", "integer"},
        {"eval.topk", "int_list"},
    };
    return schema;
}

inline void check_type(const std::string& path, const nlohmann::json& v, const std::string& type) {
    auto fail = [&](const char* want) {
        throw ConfigError("config key '" + path + "' must be " + want);
    };
    if (type == "string" && !v.is_string()) fail("a string");
    if (type == "number" && !v.is_number()) fail("a number");
    if (type == "integer" && !v.is_number_integer()) fail("an integer");
    if (type == "boolean" && !v.is_boolean()) fail("a boolean");
    if (type == "string_list") {
        if (!v.is_array()) fail("a list of strings");
        for (const auto& e : v)
            if (!e.is_string()) fail("a list of strings");
    }
    if (type == "int_list") {
        if (!v.is_array()) fail("a list of integers");
        for (const auto& e : v)
            if (!e.is_number_integer()) fail("a list of integers");
    }
}

inline void validate_keys(const nlohmann::json& obj, const std::string& prefix) {
    const auto& schema = config_schema();
    for (const auto& [key, value] : obj.items()) {
        std::string path = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            validate_keys(value, path);
            continue;
        }
        auto it = schema.find(path);
        if (it == schema.end()) throw ConfigError("unknown config key '" + path + "'");
        if (!value.is_null()) check_type(path, value, it->second);
    }
}

template <typename T>
void take(const nlohmann::json& j, const std::string& dotted, T& out) {
    const nlohmann::json* cur = &j;
    std::size_t start = 0;
    while (true) {
        auto dot = dotted.find('.', start);
        std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->contains(key) || (*cur)[key].is_null()) return;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    out = cur->get<T>();
}

}  // namespace config_detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using config_detail::take;
    config_detail::validate_keys(j, "");
    RunConfig c;
    take(j, "run_id", c.run_id);
    take(j, "mode", c.mode);
    take(j, "backend_url", c.backend_url);
    take(j, "backend_timeout_s", c.backend_timeout_s);
    take(j, "seed", c.pipeline.seed);
    take(j, "label_space.seen", c.toy.seen);
    take(j, "label_space.unseen", c.toy.unseen);
    take(j, "pipeline.lambda", c.pipeline.lambda_threshold);
    take(j, "pipeline.objects_per_image", c.pipeline.objects_per_image_j);
    take(j, "pipeline.positives_per_category", c.pipeline.positives_per_category_K);
    if (j.contains("pipeline") && j["pipeline"].contains("topk_fine_grained") &&
        !j["pipeline"]["topk_fine_grained"].is_null())
        c.pipeline.topk_fine_grained = j["pipeline"]["topk_fine_grained"].get<int>();
    take(j, "pipeline.gamma_plus", c.pipeline.gamma_plus);
    take(j, "pipeline.gamma_minus", c.pipeline.gamma_minus);
    take(j, "pipeline.tau", c.pipeline.tau);
    std::string strategy;
    take(j, "pipeline.strategy", strategy);
    if (!strategy.empty()) c.pipeline.strategy = strategy_from_string(strategy);
    take(j, "toy.canvas", c.toy.canvas);
    take(j, "toy.resolution", c.toy.resolution);
    take(j, "toy.miss_rate", c.toy.miss_rate);
    take(j, "toy.embed_noise", c.toy.embed_noise);
    take(j, "toy.n_real_train", c.toy.n_real_train);
    take(j, "toy.n_test", c.toy.n_test);
    take(j, "toy.max_labels_per_image", c.toy.max_labels_per_image);
    take(j, "prompts.n_per_tuple", c.prompts.n_per_tuple);
    take(j, "prompts.retry_budget", c.prompts.retry_budget);
    take(j, "finetune.enabled", c.finetune.enabled);
    take(j, "finetune.steps", c.finetune.steps);
    take(j, "finetune.lr", c.finetune.lr);
    take(j, "finetune.latent_dim", c.finetune.latent_dim);
    take(j, "finetune.noise", c.finetune.noise);
    take(j, "finetune.intensity_bias", c.finetune.intensity_bias);
    take(j, "finetune.rate_samples", c.finetune.rate_samples);
    take(j, "train.epochs", c.train.epochs);
    take(j, "train.lr", c.train.lr);
    take(j, "train.batch", c.train.batch);
    take(j, "train.context_length", c.train.context_length);
    take(j, "train.token_dim", c.train.token_dim);
    take(j, "train.embed_dim", c.train.embed_dim);
    take(j, "train.channels", c.train.channels);
    take(j, "train.gff_sites", c.train.gff_sites);
    take(j, "train.gff_heads", c.train.gff_heads);
    take(j, "eval.topk", c.eval.topk);
    c.validate();
    return c;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["run_id"] = c.run_id;
    j["mode"] = c.mode;
    if (!c.backend_url.empty()) j["backend_url"] = c.backend_url;
    j["backend_timeout_s"] = c.backend_timeout_s;
    j["seed"] = c.pipeline.seed;
    j["label_space"]["seen"] = c.toy.seen;
    j["label_space"]["unseen"] = c.toy.unseen;
    j["pipeline"]["lambda"] = c.pipeline.lambda_threshold;
    j["pipeline"]["objects_per_image"] = c.pipeline.objects_per_image_j;
    j["pipeline"]["positives_per_category"] = c.pipeline.positives_per_category_K;
    if (c.pipeline.topk_fine_grained) j["pipeline"]["topk_fine_grained"] = *c.pipeline.topk_fine_grained;
    j["pipeline"]["gamma_plus"] = c.pipeline.gamma_plus;
    j["pipeline"]["gamma_minus"] = c.pipeline.gamma_minus;
    j["pipeline"]["tau"] = c.pipeline.tau;
    j["pipeline"]["strategy"] = to_string(c.pipeline.strategy);
    j["toy"]["canvas"] = c.toy.canvas;
    j["toy"]["resolution"] = c.toy.resolution;
    j["toy"]["miss_rate"] = c.toy.miss_rate;
    j["toy"]["embed_noise"] = c.toy.embed_noise;
    j["toy"]["n_real_train"] = c.toy.n_real_train;
    j["toy"]["n_test"] = c.toy.n_test;
    j["toy"]["max_labels_per_image"] = c.toy.max_labels_per_image;
    j["prompts"]["n_per_tuple"] = c.prompts.n_per_tuple;
    j["prompts"]["retry_budget"] = c.prompts.retry_budget;
    j["finetune"]["enabled"] = c.finetune.enabled;
    j["finetune"]["steps"] = c.finetune.steps;
    j["finetune"]["lr"] = c.finetune.lr;
    j["finetune"]["latent_dim"] = c.finetune.latent_dim;
    j["finetune"]["noise"] = c.finetune.noise;
    j["finetune"]["intensity_bias"] = c.finetune.intensity_bias;
    j["finetune"]["rate_samples"] = c.finetune.rate_samples;
    j["train"]["epochs"] = c.train.epochs;
    j["train"]["lr"] = c.train.lr;
    j["train"]["batch"] = c.train.batch;
    j["train"]["context_length"] = c.train.context_length;
    j["train"]["token_dim"] = c.train.token_dim;
    j["train"]["embed_dim"] = c.train.embed_dim;
    j["train"]["channels"] = c.train.channels;
    j["train"]["gff_sites"] = c.train.gff_sites;
    j["train"]["gff_heads"] = c.train.gff_heads;
    j["eval"]["topk"] = c.eval.topk;
    return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    YAML::Node node;
    try {
        node = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(config_detail::yaml_to_json(node));
}

// ---- run manifest ----

struct RunManifest {
    std::string run_id;
    std::map<std::string, bool> stage_complete;
    std::map<std::string, double> stage_seconds;
    std::map<std::string, std::string> artifacts;

    static const std::vector<std::string>& stage_names() {
        static const std::vector<std::string> names = {"fixtures", "prompts", "finetune", "generate",
                                                       "merge",    "train",   "eval",     "report"};
        return names;
    }

    bool complete(const std::string& stage) const {
        auto it = stage_complete.find(stage);
        return it != stage_complete.end() && it->second;
    }

    bool all_complete() const {
        for (const auto& s : stage_names())
            if (!complete(s)) return false;
        return true;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["run_id"] = run_id;
        nlohmann::ordered_json st;
        for (const auto& name : stage_names()) {
            nlohmann::ordered_json e;
            e["complete"] = complete(name);
            auto it = stage_seconds.find(name);
            e["seconds"] = it == stage_seconds.end() ? 0.0 : it->second;
            st[name] = e;
        }
        j["stages"] = st;
        j["artifacts"] = artifacts;
        return j;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        out << to_json().dump(2) << "\n";
    }

    static RunManifest load(const std::filesystem::path& path) {
        RunManifest m;
        std::ifstream in(path);
        if (!in) return m;
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception&) {
            return m;  // treat unreadable manifests as a fresh run
        }
        m.run_id = j.value("run_id", "");
        if (j.contains("stages"))
            for (const auto& [name, e] : j["stages"].items()) {
                m.stage_complete[name] = e.value("complete", false);
                m.stage_seconds[name] = e.value("seconds", 0.0);
            }
        if (j.contains("artifacts"))
            for (const auto& [k, v] : j["artifacts"].items()) m.artifacts[k] = v.get<std::string>();
        return m;
    }
};

// ---- the pipeline ----

namespace pipeline_detail {

struct ToyFixtures {
    DatasetManifest real_train;
    DatasetManifest test;
};

// Deterministic desk-scale stand-ins for the seen training set and the
// evaluation set. Every class is guaranteed test coverage so mAP is
// defined for all of them.
inline ToyFixtures make_fixtures(const ToyGlyphWorld& world, const RunConfig& cfg) {
    ToyFixtures fx;
    const LabelSpace& ls = world.labels();
    fx.real_train.label_space = ls;
    fx.real_train.split = Split::train;
    fx.test.label_space = ls;
    fx.test.split = Split::test;

    Rng rng(derive_seed(cfg.pipeline.seed, 0xf14));
    auto draw_classes = [&](const std::vector<std::size_t>& pool, std::size_t forced) {
        std::vector<std::size_t> classes = {forced};
        std::size_t extra = rng.below(static_cast<std::size_t>(cfg.toy.max_labels_per_image));
        for (std::size_t e = 0; e < extra; ++e) {
            std::size_t c = pool[rng.below(pool.size())];
            if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
        }
        std::sort(classes.begin(), classes.end());
        return classes;
    };

    for (int i = 0; i < cfg.toy.n_real_train; ++i) {
        std::size_t forced = ls.seen()[static_cast<std::size_t>(i) % ls.seen().size()];
        auto classes = draw_classes(ls.seen(), forced);
        SampleRecord rec;
        rec.image = world.render_scene(classes, rng, cfg.toy.resolution);
        char name[48];
        std::snprintf(name, sizeof(name), "fixtures/images/real_%04d.png", i);
        rec.image_ref = name;
        rec.positives = classes;
        rec.provenance = Provenance::real;
        fx.real_train.records.push_back(std::move(rec));
    }

    std::vector<std::size_t> all(ls.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (int i = 0; i < cfg.toy.n_test; ++i) {
        std::size_t forced = all[static_cast<std::size_t>(i) % all.size()];
        auto classes = draw_classes(all, forced);
        SampleRecord rec;
        rec.image = world.render_scene(classes, rng, cfg.toy.resolution);
        char name[48];
        std::snprintf(name, sizeof(name), "fixtures/images/test_%04d.png", i);
        rec.image_ref = name;
        rec.positives = classes;
        rec.provenance = Provenance::real;
        fx.test.records.push_back(std::move(rec));
    }
    return fx;
}

inline void write_manifest_images(const DatasetManifest& m, const std::filesystem::path& run_dir) {
    for (const auto& rec : m.records) {
        if (!rec.image) continue;
        auto path = run_dir / rec.image_ref;
        std::filesystem::create_directories(path.parent_path());
        png::write_file(*rec.image, path);
    }
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// scores/truth matrices over a label subset, columns in subset order
inline std::pair<Tensor, Tensor> score_test_set(const DatasetManifest& test, ClassifierState& state,
                                                const std::vector<std::size_t>& subset,
                                                const std::filesystem::path& run_dir) {
    Tensor scores({test.records.size(), subset.size()});
    Tensor truth({test.records.size(), subset.size()});
    for (std::size_t i = 0; i < test.records.size(); ++i) {
        const auto& rec = test.records[i];
        Image img = rec.image ? *rec.image : png::read_file(run_dir / rec.image_ref);
        auto p = predict(img, state, subset);
        for (std::size_t q = 0; q < subset.size(); ++q) {
            scores.at(i, q) = p[q];
            truth.at(i, q) =
                std::find(rec.positives.begin(), rec.positives.end(), subset[q]) != rec.positives.end() ? 1.0
                                                                                                        : 0.0;
        }
    }
    return {std::move(scores), std::move(truth)};
}

}  // namespace pipeline_detail

inline void emit_report(const RunConfig& cfg, const std::filesystem::path& run_dir);

// Execute every stage of the pipeline in order inside run_dir, skipping
// stages whose outputs already reload cleanly. Toy mode only; http mode
// rejects fine-tuning (the protocol exposes no gradient path) and is
// otherwise exercised through the individual subcommands.
inline RunManifest run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    cfg.validate();
    if (cfg.mode == "http" && cfg.finetune.enabled)
        throw ConfigError("finetune requires a gradient-capable generator; the http backend protocol "
                          "does not expose one (set finetune.enabled: false)");
    if (cfg.mode != "toy") throw ConfigError("run_pipeline currently drives toy mode only");

    namespace fs = std::filesystem;
    fs::create_directories(run_dir);

    // config snapshot: enough to replay the run
    {
        std::ofstream snap(run_dir / "config.snapshot.json");
        snap << run_config_to_json(cfg).dump(2) << "\n";
    }

    RunManifest manifest = RunManifest::load(run_dir / "run_manifest.json");
    manifest.run_id = cfg.run_id;

    LabelSpace ls = cfg.label_space();
    ToyGlyphWorld world(ls, cfg.toy.canvas, cfg.toy.miss_rate, cfg.toy.embed_noise,
                        derive_seed(cfg.pipeline.seed, 0xe0b));
    ToyDiffusionStack stack(world, ls.unseen(), static_cast<std::size_t>(cfg.finetune.latent_dim),
                            cfg.pipeline.seed, cfg.finetune.noise, cfg.finetune.intensity_bias);

    auto run_stage = [&](const std::string& name, auto&& validate, auto&& body) {
        if (manifest.complete(name)) {
            try {
                if (validate()) return;
            } catch (...) {
                // stale or damaged outputs: fall through and redo the stage
            }
        }
        auto t0 = std::chrono::steady_clock::now();
        body();
        if (!validate()) throw Error("stage '" + name + "' produced outputs that fail validation");
        manifest.stage_complete[name] = true;
        manifest.stage_seconds[name] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        manifest.save(run_dir / "run_manifest.json");
    };

    // ---- fixtures ----
    run_stage(
        "fixtures",
        [&] {
            LabelSpace::load(run_dir / "fixtures/label_space.json");
            auto rt = load_manifest(run_dir / "fixtures/real_train.jsonl", ls, Split::train, true);
            auto te = load_manifest(run_dir / "fixtures/test.jsonl", ls, Split::test, true);
            return !rt.records.empty() && !te.records.empty();
        },
        [&] {
            fs::create_directories(run_dir / "fixtures/images");
            auto fx = pipeline_detail::make_fixtures(world, cfg);
            ls.save(run_dir / "fixtures/label_space.json");
            pipeline_detail::write_manifest_images(fx.real_train, run_dir);
            pipeline_detail::write_manifest_images(fx.test, run_dir);
            save_manifest(fx.real_train, run_dir / "fixtures/real_train.jsonl");
            save_manifest(fx.test, run_dir / "fixtures/test.jsonl");
        });
    manifest.artifacts["real_train"] = "fixtures/real_train.jsonl";
    manifest.artifacts["test"] = "fixtures/test.jsonl";

    // ---- prompts ----
    run_stage(
        "prompts",
        [&] {
            auto store = PromptStore::load(run_dir / "prompts/prompts.jsonl");
            for (const auto& tuple :
                 enumerate_category_tuples(ls, static_cast<std::size_t>(cfg.pipeline.objects_per_image_j), true)) {
                std::vector<std::string> names;
                for (auto c : tuple) names.push_back(ls.name(c));
                if (store.for_categories(names).empty()) return false;
            }
            return true;
        },
        [&] {
            fs::create_directories(run_dir / "prompts");
            ToyInstructionLlm llm(ls, derive_seed(cfg.pipeline.seed, 0x11a));
            auto store = build_prompt_store(llm, ls, static_cast<std::size_t>(cfg.pipeline.objects_per_image_j),
                                            cfg.prompts.n_per_tuple, cfg.prompts.retry_budget);
            store.save(run_dir / "prompts/prompts.jsonl");
        });
    manifest.artifacts["prompts"] = "prompts/prompts.jsonl";

    // ---- finetune ----
    AslParams asl_params{cfg.pipeline.gamma_plus, cfg.pipeline.gamma_minus, 0.0};
    run_stage(
        "finetune",
        [&] {
            if (!cfg.finetune.enabled) return true;
            TunerState probe(ls, stack, static_cast<std::size_t>(cfg.finetune.latent_dim), cfg.finetune.lr,
                             cfg.pipeline.seed);
            load_tuner_checkpoint(probe, run_dir / "finetune/checkpoint.json");
            return probe.frozen_fingerprint == fingerprint_tensors(stack.frozen_params());
        },
        [&] {
            if (!cfg.finetune.enabled) return;
            fs::create_directories(run_dir / "finetune");
            auto store = PromptStore::load(run_dir / "prompts/prompts.jsonl");
            std::vector<const PromptRecord*> train_prompts, held_out;
            for (std::size_t i = 0; i < store.records().size(); ++i)
                ((i % 2 == 0) ? train_prompts : held_out).push_back(&store.records()[i]);
            if (held_out.empty()) held_out = train_prompts;

            TunerState state(ls, stack, static_cast<std::size_t>(cfg.finetune.latent_dim), cfg.finetune.lr,
                             cfg.pipeline.seed);
            Discriminator disc{&world, ls.unseen_names(), cfg.policy()};
            TunedToyGenerator generator(stack, state.encoder);

            double rate_before = qualified_rate(generator, disc, held_out, cfg.finetune.rate_samples,
                                                derive_seed(cfg.pipeline.seed, 0xabe), cfg.toy.resolution);
            std::vector<double> losses;
            for (int step = 0; step < cfg.finetune.steps; ++step)
                losses.push_back(tuner_step(
                    stack, *train_prompts[static_cast<std::size_t>(step) % train_prompts.size()], state,
                    asl_params));
            double rate_after = qualified_rate(generator, disc, held_out, cfg.finetune.rate_samples,
                                               derive_seed(cfg.pipeline.seed, 0xabe), cfg.toy.resolution);

            save_tuner_checkpoint(state, run_dir / "finetune/checkpoint.json");
            nlohmann::ordered_json j;
            j["losses"] = losses;
            j["qualified_rate_before"] = rate_before;
            j["qualified_rate_after"] = rate_after;
            std::ofstream out(run_dir / "finetune/training.json");
            out << j.dump(2) << "\n";
        });
    if (cfg.finetune.enabled) manifest.artifacts["tuner_checkpoint"] = "finetune/checkpoint.json";

    // ---- generate ----
    run_stage(
        "generate",
        [&] {
            auto m = load_manifest(run_dir / "synthetic/manifest.jsonl", ls, Split::train, true);
            GenerationLedger ledger;
            std::ifstream in(run_dir / "synthetic/ledger.json");
            if (!in) return false;
            nlohmann::json lj;
            in >> lj;
            for (auto c : ls.unseen())
                if (lj.at("per_category_counts").at(ls.name(c)).get<int>() !=
                    cfg.pipeline.positives_per_category_K)
                    return false;
            return true;
        },
        [&] {
            fs::create_directories(run_dir / "synthetic");
            auto store = PromptStore::load(run_dir / "prompts/prompts.jsonl");

            std::unique_ptr<TunerState> tuned;
            std::unique_ptr<TunedToyGenerator> tuned_gen;
            TextToImageBackend* generator = &world;
            if (cfg.finetune.enabled) {
                tuned = std::make_unique<TunerState>(ls, stack, static_cast<std::size_t>(cfg.finetune.latent_dim),
                                                     cfg.finetune.lr, cfg.pipeline.seed);
                load_tuner_checkpoint(*tuned, run_dir / "finetune/checkpoint.json");
                tuned_gen = std::make_unique<TunedToyGenerator>(stack, tuned->encoder);
                generator = tuned_gen.get();
            }

            auto out = build_synthetic_dataset(*generator, world, store, cfg.policy(), ls,
                                               cfg.pipeline.objects_per_image_j,
                                               cfg.pipeline.positives_per_category_K, cfg.pipeline.seed,
                                               cfg.toy.resolution, run_dir / "synthetic");
            // image refs become run-dir relative for the merged dataset
            for (auto& rec : out.manifest.records) rec.image_ref = "synthetic/" + rec.image_ref;
            save_manifest(out.manifest, run_dir / "synthetic/manifest.jsonl");
            out.ledger.save(run_dir / "synthetic/ledger.json");
        });
    manifest.artifacts["synthetic"] = "synthetic/manifest.jsonl";
    manifest.artifacts["ledger"] = "synthetic/ledger.json";

    // ---- merge ----
    run_stage(
        "merge",
        [&] {
            auto m = load_manifest(run_dir / "merged/train.jsonl", ls, Split::train, true);
            return !m.records.empty();
        },
        [&] {
            fs::create_directories(run_dir / "merged");
            auto real = load_manifest(run_dir / "fixtures/real_train.jsonl", ls, Split::train, true);
            auto synth = load_manifest(run_dir / "synthetic/manifest.jsonl", ls, Split::train, true);
            save_manifest(finalize_training_set(real, synth), run_dir / "merged/train.jsonl");
        });
    manifest.artifacts["train_manifest"] = "merged/train.jsonl";

    // ---- train ----
    run_stage(
        "train",
        [&] {
            auto state = load_classifier_checkpoint(run_dir / "train/checkpoint.json");
            return state.labels.names() == ls.names();
        },
        [&] {
            fs::create_directories(run_dir / "train");
            auto merged = load_manifest(run_dir / "merged/train.jsonl", ls, Split::train, true);
            ClassifierState state(ls, cfg.classifier_config(), cfg.pipeline.strategy);
            auto report = train_classifier(merged, state, asl_params, cfg.train.epochs, cfg.train.lr,
                                           cfg.train.batch, run_dir);
            save_classifier_checkpoint(state, run_dir / "train/checkpoint.json");
            std::ofstream out(run_dir / "train/train_report.json");
            out << report.to_json().dump(2) << "\n";
        });
    manifest.artifacts["classifier_checkpoint"] = "train/checkpoint.json";

    // ---- eval ----
    run_stage(
        "eval",
        [&] {
            nlohmann::json j;
            std::ifstream in(run_dir / "eval/metrics.json");
            if (!in) return false;
            in >> j;
            return j.contains("zsl") && j.contains("gzsl");
        },
        [&] {
            fs::create_directories(run_dir / "eval");
            auto state = load_classifier_checkpoint(run_dir / "train/checkpoint.json");
            auto test = load_manifest(run_dir / "fixtures/test.jsonl", ls, Split::test, true);

            std::vector<std::size_t> all(ls.size());
            std::iota(all.begin(), all.end(), std::size_t{0});

            auto [zs, zt] = pipeline_detail::score_test_set(test, state, ls.unseen(), run_dir);
            auto zsl = evaluate_subset("zsl", zs, zt, ls.unseen(), ls, cfg.eval.topk);
            auto [gs, gt] = pipeline_detail::score_test_set(test, state, all, run_dir);
            auto gzsl = evaluate_subset("gzsl", gs, gt, all, ls, cfg.eval.topk);

            nlohmann::ordered_json j;
            j["zsl"] = zsl.to_json();
            j["gzsl"] = gzsl.to_json();
            std::ofstream out(run_dir / "eval/metrics.json");
            out << j.dump(2) << "\n";
        });
    manifest.artifacts["metrics"] = "eval/metrics.json";

    // ---- report ----
    run_stage(
        "report",
        [&] {
            return fs::exists(run_dir / "report/metrics.md") && fs::exists(run_dir / "report/loss_curve.png") &&
                   fs::exists(run_dir / "report/qualified_rate.png");
        },
        [&] { emit_report(cfg, run_dir); });
    manifest.artifacts["report"] = "report/metrics.md";

    manifest.save(run_dir / "run_manifest.json");
    return manifest;
}

// Static tables and charts for a completed (or at least trained+evaled)
// run; no interactive parts.
inline void emit_report(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(run_dir / "eval/metrics.json"))
        throw Error("emit_report: run has no eval/metrics.json yet");
    fs::create_directories(run_dir / "report");

    nlohmann::json metrics;
    {
        std::ifstream in(run_dir / "eval/metrics.json");
        in >> metrics;
    }

    // training losses
    std::vector<double> losses;
    if (fs::exists(run_dir / "train/train_report.json")) {
        std::ifstream in(run_dir / "train/train_report.json");
        nlohmann::json j;
        in >> j;
        for (const auto& stage : j["stages"])
            for (const auto& v : stage["epoch_losses"]) losses.push_back(v.get<double>());
    }
    plot::line_chart(run_dir / "report/loss_curve.png", "classifier training loss", losses, "epoch");

    // qualified rate before/after tuning, or ledger counts when untuned
    std::vector<std::pair<std::string, double>> bars;
    if (fs::exists(run_dir / "finetune/training.json")) {
        std::ifstream in(run_dir / "finetune/training.json");
        nlohmann::json j;
        in >> j;
        bars = {{"before", j.value("qualified_rate_before", 0.0)},
                {"after", j.value("qualified_rate_after", 0.0)}};
    } else if (fs::exists(run_dir / "synthetic/ledger.json")) {
        std::ifstream in(run_dir / "synthetic/ledger.json");
        nlohmann::json j;
        in >> j;
        for (const auto& [name, count] : j["per_category_counts"].items())
            bars.push_back({name, count.get<double>()});
    }
    plot::bar_chart(run_dir / "report/qualified_rate.png", "qualified rate / accepted positives", bars);

    std::ofstream md(run_dir / "report/metrics.md");
    md << "# Run report: " << cfg.run_id << "\n\n";
    md << "| mode | mAP |";
    for (int k : cfg.eval.topk) md << " P@" << k << " | R@" << k << " | F1@" << k << " |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < cfg.eval.topk.size(); ++i) md << "---|---|---|";
    md << "\n";
    for (const char* mode : {"zsl", "gzsl"}) {
        if (!metrics.contains(mode)) continue;
        const auto& m = metrics[mode];
        md << "| " << mode << " | " << m.value("map", 0.0) << " |";
        for (int k : cfg.eval.topk) {
            std::string ks = std::to_string(k);
            if (m.contains("per_k") && m["per_k"].contains(ks)) {
                const auto& e = m["per_k"][ks];
                md << " " << e.value("precision", 0.0) << " | " << e.value("recall", 0.0) << " | "
                   << e.value("f1", 0.0) << " |";
            } else {
                md << " - | - | - |";
            }
        }
        md << "\n";
    }
    if (!bars.empty()) {
        md << "\n";
        for (const auto& [k, v] : bars) md << "- " << k << ": " << v << "\n";
    }
    md << "\n![loss](loss_curve.png)\n![qualified](qualified_rate.png)\n";
}

// ---- ablation grid ----

struct AblationCell {
    std::string name;
    RunConfig config;
    bool ok = false;
    std::string error;
    double zsl_map = 0.0;
    double zsl_f1 = 0.0;
    std::size_t attempts = 0;
    std::size_t accepted = 0;
};

struct AblationGrid {
    RunConfig base;
    std::vector<double> lambdas;
    std::vector<int> objects_per_image;
    std::vector<int> positives_per_category;
};

inline AblationGrid load_ablation_grid(const std::filesystem::path& path) {
    YAML::Node node;
    try {
        node = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse grid " + path.string() + ": " + e.what());
    }
    nlohmann::json j = config_detail::yaml_to_json(node);
    if (!j.contains("base")) throw ConfigError("grid file needs a 'base' run configuration");
    AblationGrid grid;
    grid.base = run_config_from_json(j["base"]);
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        if (g.contains("lambda")) grid.lambdas = g["lambda"].get<std::vector<double>>();
        if (g.contains("objects_per_image")) grid.objects_per_image = g["objects_per_image"].get<std::vector<int>>();
        if (g.contains("positives_per_category"))
            grid.positives_per_category = g["positives_per_category"].get<std::vector<int>>();
    }
    return grid;
}

// One full pipeline run per grid cell; failures are recorded and the grid
// moves on. Cells are sorted by lambda in the emitted table.
inline std::vector<AblationCell> run_ablation_grid(AblationGrid grid, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    if (grid.lambdas.empty()) grid.lambdas = {grid.base.pipeline.lambda_threshold};
    if (grid.objects_per_image.empty()) grid.objects_per_image = {grid.base.pipeline.objects_per_image_j};
    if (grid.positives_per_category.empty())
        grid.positives_per_category = {grid.base.pipeline.positives_per_category_K};
    std::vector<AblationCell> cells;
    std::size_t index = 0;
    for (double lambda : grid.lambdas)
        for (int n : grid.objects_per_image)
            for (int k : grid.positives_per_category) {
                AblationCell cell;
                cell.config = grid.base;
                cell.config.pipeline.lambda_threshold = lambda;
                cell.config.pipeline.objects_per_image_j = n;
                cell.config.pipeline.positives_per_category_K = k;
                cell.config.pipeline.seed = derive_seed(grid.base.pipeline.seed, index);
                char name[64];
                std::snprintf(name, sizeof(name), "cell_%02zu_lambda%.2f_n%d_k%d", index, lambda, n, k);
                cell.name = name;
                cell.config.run_id = grid.base.run_id + "/" + name;
                try {
                    run_pipeline(cell.config, out_dir / name);
                    nlohmann::json m;
                    std::ifstream in(out_dir / name / "eval/metrics.json");
                    in >> m;
                    cell.zsl_map = m["zsl"].value("map", 0.0);
                    if (m["zsl"].contains("per_k") && !m["zsl"]["per_k"].empty())
                        cell.zsl_f1 = m["zsl"]["per_k"].begin().value().value("f1", 0.0);
                    nlohmann::json lj;
                    std::ifstream lin(out_dir / name / "synthetic/ledger.json");
                    lin >> lj;
                    cell.attempts = lj.value("attempts", std::size_t{0});
                    cell.accepted = lj.value("accepted", std::size_t{0});
                    cell.ok = true;
                } catch (const std::exception& e) {
                    cell.ok = false;
                    cell.error = e.what();
                }
                cells.push_back(std::move(cell));
                ++index;
            }

    std::stable_sort(cells.begin(), cells.end(), [](const AblationCell& a, const AblationCell& b) {
        return a.config.pipeline.lambda_threshold < b.config.pipeline.lambda_threshold;
    });

    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    std::ofstream md(out_dir / "table.md");
    md << "| cell | lambda | n | K | status | zsl mAP | zsl F1 | accepted/attempts |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& c : cells) {
        nlohmann::ordered_json e;
        e["cell"] = c.name;
        e["lambda"] = c.config.pipeline.lambda_threshold;
        e["objects_per_image"] = c.config.pipeline.objects_per_image_j;
        e["positives_per_category"] = c.config.pipeline.positives_per_category_K;
        e["ok"] = c.ok;
        e["error"] = c.error;
        e["zsl_map"] = c.zsl_map;
        e["zsl_f1"] = c.zsl_f1;
        e["attempts"] = c.attempts;
        e["accepted"] = c.accepted;
        table.push_back(e);
        md << "| " << c.name << " | " << c.config.pipeline.lambda_threshold << " | "
           << c.config.pipeline.objects_per_image_j << " | " << c.config.pipeline.positives_per_category_K
           << " | " << (c.ok ? "ok" : ("failed: " + c.error)) << " | " << c.zsl_map << " | " << c.zsl_f1
           << " | " << c.accepted << "/" << c.attempts << " |\n";
    }
    std::ofstream out(out_dir / "table.json");
    out << table.dump(2) << "\n";
    return cells;
}

}  // namespace forge
