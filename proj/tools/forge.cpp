// forge: synthesize multi-label training data for unseen classes and
// train/evaluate a dual-prompt zero-shot classifier on the result.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "forge/builder.hpp"
#include "forge/classifier.hpp"
#include "forge/http_backend.hpp"
#include "forge/metrics.hpp"
#include "forge/pipeline.hpp"
#include "forge/png_io.hpp"
#include "forge/prompts.hpp"
#include "forge/toy_world.hpp"
#include "forge/tuner.hpp"

namespace fs = std::filesystem;
using namespace forge;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string run_dir = ".";
    bool toy = false;
    std::string backend_url;
    double backend_timeout_s = 30.0;

    HttpBackendOptions http_options() const {
        HttpBackendOptions opt = HttpBackendOptions::from_env();
        if (!backend_url.empty()) opt.base_url = backend_url;
        opt.timeout_s = backend_timeout_s;
        return opt;
    }

    bool use_toy() const { return toy || (backend_url.empty() && !std::getenv("ZSMLC_BACKEND_URL")); }
};

// backends for one invocation: either the toy world or HTTP clients
struct Backends {
    std::unique_ptr<ToyGlyphWorld> world;
    std::unique_ptr<ToyInstructionLlm> toy_llm;
    std::unique_ptr<HttpBackendSuite> http;

    TextToImageBackend& generator() { return world ? static_cast<TextToImageBackend&>(*world) : http->generator; }
    VisionLanguageEmbedder& embedder() {
        return world ? static_cast<VisionLanguageEmbedder&>(*world) : http->embedder;
    }
    InstructionLLMBackend& llm() { return world ? static_cast<InstructionLLMBackend&>(*toy_llm) : http->llm; }
};

Backends make_backends(const GlobalOpts& g, const LabelSpace& ls, double miss_rate = 0.0, int canvas = 64) {
    Backends b;
    if (g.use_toy()) {
        b.world = std::make_unique<ToyGlyphWorld>(ls, canvas, miss_rate);
        b.toy_llm = std::make_unique<ToyInstructionLlm>(ls, derive_seed(g.seed, 0x11a));
    } else {
        b.http = std::make_unique<HttpBackendSuite>(g.http_options());
    }
    return b;
}

int cmd_prompts(const GlobalOpts& g, const std::string& label_space_path, int n_per_pair, int tuple_size,
                const std::string& out_path) {
    LabelSpace ls = LabelSpace::load(label_space_path);
    Backends b = make_backends(g, ls);
    auto store = build_prompt_store(b.llm(), ls, static_cast<std::size_t>(tuple_size), n_per_pair);
    store.save(out_path);
    std::cout << "wrote " << store.size() << " prompts to " << out_path << "\n";
    return 0;
}

int cmd_finetune(const GlobalOpts& g, const std::string& label_space_path, const std::string& prompts_path,
                 int steps, double lr, int latent_dim, double gamma_plus, double gamma_minus,
                 const std::string& out_dir) {
    LabelSpace ls = LabelSpace::load(label_space_path);
    if (!g.use_toy())
        throw ConfigError("finetune requires a gradient-capable generator; the http backend protocol does "
                          "not expose one -- run with --toy");
    ToyGlyphWorld world(ls, 64, 0.0);
    ToyDiffusionStack stack(world, ls.unseen(), static_cast<std::size_t>(latent_dim), g.seed, 0.6);
    auto store = PromptStore::load(prompts_path);
    if (store.empty()) throw ValidationError("prompt store is empty");

    TunerState state(ls, stack, static_cast<std::size_t>(latent_dim), lr, g.seed);
    AslParams asl{gamma_plus, gamma_minus, 0.0};
    std::vector<const PromptRecord*> prompts;
    for (const auto& r : store.records()) prompts.push_back(&r);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < steps; ++step) {
        double loss = tuner_step(stack, *prompts[static_cast<std::size_t>(step) % prompts.size()], state, asl);
        if (step == 0) first = loss;
        last = loss;
    }
    fs::create_directories(out_dir);
    save_tuner_checkpoint(state, fs::path(out_dir) / "checkpoint.json");
    std::cout << "finetuned " << steps << " steps, loss " << first << " -> " << last << ", checkpoint in "
              << out_dir << "\n";
    return 0;
}

int cmd_generate(const GlobalOpts& g, const std::string& label_space_path, const std::string& prompts_path,
                 int k, int n, double lambda, int topk, double miss_rate, int resolution,
                 const std::string& tuner_ckpt, const std::string& out_dir) {
    LabelSpace ls = LabelSpace::load(label_space_path);
    Backends b = make_backends(g, ls, miss_rate);
    auto store = PromptStore::load(prompts_path);

    QualificationPolicy policy;
    policy.lambda_threshold = lambda;
    if (topk > 0) {
        policy.mode = QualificationPolicy::Mode::fine_grained_topk;
        policy.topk = static_cast<std::size_t>(topk);
    }

    std::unique_ptr<ToyDiffusionStack> stack;
    std::unique_ptr<TunerState> tuned;
    std::unique_ptr<TunedToyGenerator> tuned_gen;
    TextToImageBackend* generator = &b.generator();
    if (!tuner_ckpt.empty()) {
        if (!b.world) throw ConfigError("--tuner-checkpoint applies to toy mode only");
        stack = std::make_unique<ToyDiffusionStack>(*b.world, ls.unseen(), std::size_t{8}, g.seed, 0.6);
        tuned = std::make_unique<TunerState>(ls, *stack, std::size_t{8}, 0.0, g.seed);
        load_tuner_checkpoint(*tuned, tuner_ckpt);
        tuned_gen = std::make_unique<TunedToyGenerator>(*stack, tuned->encoder);
        generator = tuned_gen.get();
    }

    fs::path out = out_dir;
    fs::create_directories(out / "synthetic");
    auto res = build_synthetic_dataset(*generator, b.embedder(), store, policy, ls, n, k, g.seed, resolution,
                                       out / "synthetic");
    save_manifest(res.manifest, out / "synthetic/manifest.jsonl");
    res.ledger.save(out / "ledger.json");
    std::cout << "accepted " << res.ledger.accepted << " images over " << res.ledger.attempts
              << " attempts; manifest in " << (out / "synthetic/manifest.jsonl").string() << "\n";
    return 0;
}

int cmd_filter(const GlobalOpts& g, const std::string& label_space_path, const std::string& manifest_path,
               const std::string& policy_name, double lambda, int topk, const std::string& image_root,
               const std::string& out_path) {
    LabelSpace ls = LabelSpace::load(label_space_path);
    Backends b = make_backends(g, ls);
    auto manifest = load_manifest(manifest_path, ls, Split::train, /*zero_shot=*/false);

    QualificationPolicy policy;
    policy.lambda_threshold = lambda;
    if (policy_name == "fine_grained_topk") {
        policy.mode = QualificationPolicy::Mode::fine_grained_topk;
        policy.topk = static_cast<std::size_t>(topk);
    } else if (policy_name != "strict_topj") {
        throw ConfigError("policy must be strict_topj or fine_grained_topk");
    }
    policy.validate();

    std::vector<std::string> names = ls.unseen_names();
    LabelSpace unseen_lookup({}, names);
    std::size_t accepted = 0;
    for (auto& rec : manifest.records) {
        Image img = rec.image ? *rec.image : png::read_file(fs::path(image_root) / rec.image_ref);
        std::vector<std::size_t> positives_local;
        for (auto c : rec.positives) {
            if (!ls.is_unseen(c))
                throw ValidationError("record labels seen class '" + ls.name(c) +
                                      "'; the discriminator scores unseen classes");
            positives_local.push_back(unseen_lookup.index_of(ls.name(c)));
        }
        rec.scores = score_image(b.embedder(), img, names, positives_local);
        auto verdict = qualify(*rec.scores, policy);
        rec.accepted = verdict.accepted;
        accepted += verdict.accepted ? 1 : 0;
    }
    save_manifest(manifest, out_path);
    std::cout << "annotated " << manifest.records.size() << " records (" << accepted << " accepted) -> "
              << out_path << "\n";
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& label_space_path, const std::string& manifest_path,
              const std::string& strategy, int epochs, double lr, int batch, double gamma_plus,
              double gamma_minus, double tau, int resolution, const std::string& image_root,
              const std::string& out_dir) {
    LabelSpace ls = LabelSpace::load(label_space_path);
    auto manifest = load_manifest(manifest_path, ls, Split::train, true);

    ClassifierConfig cfg;
    cfg.tau = tau;
    cfg.seed = g.seed;
    cfg.input_resolution = resolution;
    ClassifierState state(ls, cfg, strategy_from_string(strategy));
    AslParams asl{gamma_plus, gamma_minus, 0.0};
    auto report = train_classifier(manifest, state, asl, epochs, lr, batch, image_root);

    fs::create_directories(out_dir);
    save_classifier_checkpoint(state, fs::path(out_dir) / "checkpoint.json");
    std::ofstream rep(fs::path(out_dir) / "train_report.json");
    rep << report.to_json().dump(2) << "\n";
    double final_loss = report.stages.back().epoch_losses.back();
    std::cout << "trained " << report.stages.size() << " stage(s), final loss " << final_loss
              << ", checkpoint in " << out_dir << "\n";
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path, const std::string& mode) {
    auto state = load_classifier_checkpoint(ckpt_path);
    Image img = png::read_file(image_path);
    std::vector<std::size_t> subset;
    if (mode == "zsl")
        subset = state.labels.unseen();
    else if (mode == "gzsl") {
        subset.resize(state.labels.size());
        std::iota(subset.begin(), subset.end(), std::size_t{0});
    } else {
        throw ConfigError("mode must be zsl or gzsl");
    }
    auto scores = predict(img, state, subset);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (auto i : order) std::cout << state.labels.name(subset[i]) << " = " << scores[i] << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& test_path, const std::string& mode,
             const std::vector<int>& topk, const std::string& image_root, const std::string& out_path) {
    auto state = load_classifier_checkpoint(ckpt_path);
    auto test = load_manifest(test_path, state.labels, Split::test, true);

    std::vector<std::size_t> subset;
    if (mode == "zsl")
        subset = state.labels.unseen();
    else if (mode == "gzsl") {
        subset.resize(state.labels.size());
        std::iota(subset.begin(), subset.end(), std::size_t{0});
    } else {
        throw ConfigError("mode must be zsl or gzsl");
    }

    auto [scores, truth] = pipeline_detail::score_test_set(test, state, subset, image_root);
    auto report = evaluate_subset(mode, scores, truth, subset, state.labels, topk, &std::cerr);
    std::ofstream out(out_path);
    out << report.to_json().dump(2) << "\n";
    std::cout << mode << " mAP " << report.map;
    for (const auto& [k, prf] : report.per_k) std::cout << "  F1@" << k << " " << prf.f1;
    std::cout << "  -> " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forge: synthetic data generation and zero-shot multi-label classification"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global random seed");
    app.add_option("--run-dir", g.run_dir, "run directory");
    app.add_flag("--toy", g.toy, "use the deterministic toy backends");
    app.add_option("--backend-url", g.backend_url, "model backend base URL (or ZSMLC_BACKEND_URL)");
    app.add_option("--backend-timeout-s", g.backend_timeout_s, "backend request timeout in seconds");

    // prompts
    auto* prompts = app.add_subcommand("prompts", "build the augmented prompt store");
    std::string label_space_path, out_path = "prompts.jsonl";
    int n_per_pair = 10, tuple_size = 2;
    prompts->add_option("--label-space", label_space_path, "label-space JSON file")->required();
    prompts->add_option("--n-per-pair", n_per_pair, "LLM variants per category tuple");
    prompts->add_option("--n", tuple_size, "categories per tuple");
    prompts->add_option("--out", out_path, "output prompt store");

    // finetune
    auto* finetune = app.add_subcommand("finetune", "fine-tune the generator's text encoder");
    std::string ft_prompts, ft_out = "checkpoints";
    int ft_steps = 200, ft_latent = 8;
    double ft_lr = 1e-2, ft_gp = 0.0, ft_gm = 4.0;
    finetune->add_option("--label-space", label_space_path, "label-space JSON file")->required();
    finetune->add_option("--prompts", ft_prompts, "prompt store")->required();
    finetune->add_option("--steps", ft_steps, "optimization steps");
    finetune->add_option("--lr", ft_lr, "learning rate");
    finetune->add_option("--latent-dim", ft_latent, "toy latent dimension");
    finetune->add_option("--gamma-plus", ft_gp, "ASL positive focusing exponent");
    finetune->add_option("--gamma-minus", ft_gm, "ASL negative focusing exponent");
    finetune->add_option("--out", ft_out, "checkpoint directory");

    // generate
    auto* generate = app.add_subcommand("generate", "run the rejection-sampling dataset builder");
    std::string gen_prompts, gen_out = "runs/gen", gen_tuner;
    int gen_k = 200, gen_n = 2, gen_topk = 0, gen_res = 64;
    double gen_lambda = 0.5, gen_miss = 0.0;
    generate->add_option("--label-space", label_space_path, "label-space JSON file")->required();
    generate->add_option("--prompts", gen_prompts, "prompt store")->required();
    generate->add_option("--k", gen_k, "accepted positives per category");
    generate->add_option("--n", gen_n, "categories per image");
    generate->add_option("--lambda", gen_lambda, "qualification threshold");
    generate->add_option("--topk", gen_topk, "fine-grained top-k (0 = strict policy)");
    generate->add_option("--miss-rate", gen_miss, "toy generator miss rate");
    generate->add_option("--resolution", gen_res, "image resolution");
    generate->add_option("--tuner-checkpoint", gen_tuner, "generate through a tuned text encoder");
    generate->add_option("--out", gen_out, "output run directory");

    // filter
    auto* filter = app.add_subcommand("filter", "re-score a manifest through the discriminator");
    std::string fl_manifest, fl_policy = "strict_topj", fl_root = ".", fl_out = "filtered.jsonl";
    double fl_lambda = 0.5;
    int fl_topk = 7;
    filter->add_option("--label-space", label_space_path, "label-space JSON file")->required();
    filter->add_option("--manifest", fl_manifest, "manifest to annotate")->required();
    filter->add_option("--policy", fl_policy, "strict_topj | fine_grained_topk");
    filter->add_option("--lambda", fl_lambda, "qualification threshold");
    filter->add_option("--topk", fl_topk, "top-k for the fine-grained policy");
    filter->add_option("--image-root", fl_root, "directory image refs are relative to");
    filter->add_option("--out", fl_out, "annotated manifest path");

    // train
    auto* train = app.add_subcommand("train", "train the dual-prompt classifier");
    std::string tr_manifest, tr_strategy = "sync_prompts_gff", tr_root = ".", tr_out = "ckpt";
    int tr_epochs = 6, tr_batch = 8, tr_res = 48;
    double tr_lr = 0.05, tr_gp = 0.0, tr_gm = 4.0, tr_tau = 0.07;
    train->add_option("--label-space", label_space_path, "label-space JSON file")->required();
    train->add_option("--manifest", tr_manifest, "training manifest")->required();
    train->add_option("--strategy", tr_strategy, "fine-tuning strategy");
    train->add_option("--epochs", tr_epochs, "epochs per stage");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--batch", tr_batch, "batch size");
    train->add_option("--gamma-plus", tr_gp, "ASL positive focusing exponent");
    train->add_option("--gamma-minus", tr_gm, "ASL negative focusing exponent");
    train->add_option("--tau", tr_tau, "softmax temperature of the binary head");
    train->add_option("--resolution", tr_res, "input resolution");
    train->add_option("--image-root", tr_root, "directory image refs are relative to");
    train->add_option("--out", tr_out, "checkpoint directory");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "score one image");
    std::string pr_ckpt, pr_image, pr_mode = "zsl";
    predict_cmd->add_option("--ckpt", pr_ckpt, "classifier checkpoint")->required();
    predict_cmd->add_option("--image", pr_image, "PNG image")->required();
    predict_cmd->add_option("--mode", pr_mode, "zsl | gzsl");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test manifest");
    std::string ev_ckpt, ev_test, ev_mode = "zsl", ev_root = ".", ev_out = "metrics.json";
    std::vector<int> ev_topk = {3, 5};
    eval_cmd->add_option("--ckpt", ev_ckpt, "classifier checkpoint")->required();
    eval_cmd->add_option("--test", ev_test, "test manifest")->required();
    eval_cmd->add_option("--mode", ev_mode, "zsl | gzsl");
    eval_cmd->add_option("--topk", ev_topk, "top-K list for P/R/F1")->delimiter(',');
    eval_cmd->add_option("--image-root", ev_root, "directory image refs are relative to");
    eval_cmd->add_option("--out", ev_out, "metrics JSON path");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run an ablation grid of pipeline cells");
    std::string ab_grid, ab_out = "ablation";
    ablate->add_option("--grid", ab_grid, "grid YAML (base config + axes)")->required();
    ablate->add_option("--out", ab_out, "output directory");

    // run
    auto* run = app.add_subcommand("run", "execute the full pipeline from a config file");
    std::string run_config_path;
    run->add_option("config", run_config_path, "run configuration YAML")->required();

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        if (prompts->parsed()) return cmd_prompts(g, label_space_path, n_per_pair, tuple_size, out_path);
        if (finetune->parsed())
            return cmd_finetune(g, label_space_path, ft_prompts, ft_steps, ft_lr, ft_latent, ft_gp, ft_gm, ft_out);
        if (generate->parsed())
            return cmd_generate(g, label_space_path, gen_prompts, gen_k, gen_n, gen_lambda, gen_topk, gen_miss,
                                gen_res, gen_tuner, gen_out);
        if (filter->parsed())
            return cmd_filter(g, label_space_path, fl_manifest, fl_policy, fl_lambda, fl_topk, fl_root, fl_out);
        if (train->parsed())
            return cmd_train(g, label_space_path, tr_manifest, tr_strategy, tr_epochs, tr_lr, tr_batch, tr_gp,
                             tr_gm, tr_tau, tr_res, tr_root, tr_out);
        if (predict_cmd->parsed()) return cmd_predict(pr_ckpt, pr_image, pr_mode);
        if (eval_cmd->parsed()) return cmd_eval(ev_ckpt, ev_test, ev_mode, ev_topk, ev_root, ev_out);
        if (ablate->parsed()) {
            auto cells = run_ablation_grid(load_ablation_grid(ab_grid), ab_out);
            std::size_t ok = 0;
            for (const auto& c : cells) ok += c.ok ? 1 : 0;
            std::cout << ok << "/" << cells.size() << " cells completed; table in " << ab_out << "/table.md\n";
            return ok == cells.size() ? 0 : 3;
        }
        if (run->parsed()) {
            RunConfig cfg = load_run_config(run_config_path);
            if (g.seed != 0) cfg.pipeline.seed = g.seed;
            if (!g.backend_url.empty()) {
                cfg.mode = "http";
                cfg.backend_url = g.backend_url;
            }
            fs::path dir = g.run_dir == "." ? fs::path("runs") / cfg.run_id : fs::path(g.run_dir);
            auto manifest = run_pipeline(cfg, dir);
            std::cout << "run '" << cfg.run_id << "' complete; artifacts in " << dir.string() << "\n";
            for (const auto& name : RunManifest::stage_names())
                std::cout << "  " << name << ": " << (manifest.complete(name) ? "done" : "pending") << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
